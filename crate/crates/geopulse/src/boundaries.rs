//! GeoJSON boundary loading.
//!
//! Accepts a FeatureCollection of `Polygon` and `MultiPolygon` features in
//! RFC 7946 order (`[lon, lat]`). Each feature needs the string properties
//! `place_id`, `name` and `level`; `parent_id` is optional.

use std::fs;
use std::path::Path;

use geopulse_core::geo::{BoundaryEntry, GeoError, Polygon, Ring};
use geopulse_core::{BoundaryIndex, Place, PlaceLevel};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("cannot read boundaries {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("boundaries are not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("feature {feature}: unknown level {level:?}")]
    BadLevel { feature: usize, level: String },
}

impl BoundaryError {
    pub fn kind(&self) -> &'static str {
        match self {
            BoundaryError::Io { .. } => "IoFailure",
            BoundaryError::Json(_) => "BadGeometry",
            BoundaryError::Geo(GeoError::BadGeometry(_)) => "BadGeometry",
            BoundaryError::Geo(GeoError::MissingProperty { .. }) => "MissingProperty",
            BoundaryError::Geo(_) => "BadHierarchy",
            BoundaryError::BadLevel { .. } => "MissingProperty",
        }
    }
}

pub fn load_boundaries(path: &Path) -> Result<BoundaryIndex, BoundaryError> {
    let text = fs::read_to_string(path).map_err(|source| BoundaryError::Io { path: path.display().to_string(), source })?;
    parse_boundaries(&text)
}

pub fn parse_boundaries(text: &str) -> Result<BoundaryIndex, BoundaryError> {
    let doc: Value = serde_json::from_str(text)?;
    let features = match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or(GeoError::BadGeometry("FeatureCollection without a features array"))?,
        _ => return Err(GeoError::BadGeometry("top-level object is not a FeatureCollection").into()),
    };
    let entries = features
        .iter()
        .enumerate()
        .map(|(i, f)| parse_feature(i, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BoundaryIndex::build(entries)?)
}

fn property<'a>(props: Option<&'a Value>, feature: usize, property: &'static str) -> Result<&'a str, GeoError> {
    props
        .and_then(|p| p.get(property))
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or(GeoError::MissingProperty { feature, property })
}

fn parse_feature(index: usize, feature: &Value) -> Result<BoundaryEntry, BoundaryError> {
    let props = feature.get("properties");
    let place_id = property(props, index, "place_id")?;
    let name = property(props, index, "name")?;
    let level_str = property(props, index, "level")?;
    let level = level_str
        .parse::<PlaceLevel>()
        .map_err(|_| BoundaryError::BadLevel { feature: index, level: level_str.to_string() })?;
    let parent_id = props.and_then(|p| p.get("parent_id")).and_then(Value::as_str).map(str::to_string);

    let geometry = feature.get("geometry").ok_or(GeoError::BadGeometry("feature without geometry"))?;
    let coords = geometry.get("coordinates").ok_or(GeoError::BadGeometry("geometry without coordinates"))?;
    let polygons = match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_polygon(coords)?],
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or(GeoError::BadGeometry("MultiPolygon coordinates must be an array"))?
            .iter()
            .map(parse_polygon)
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(GeoError::BadGeometry("only Polygon and MultiPolygon geometries are supported").into()),
    };
    let place = Place { place_id: place_id.to_string(), name: name.to_string(), level, parent_id };
    Ok(BoundaryEntry::new(place, polygons)?)
}

fn parse_polygon(v: &Value) -> Result<Polygon, GeoError> {
    let rings = v.as_array().ok_or(GeoError::BadGeometry("polygon must be an array of rings"))?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings.next().ok_or(GeoError::BadGeometry("polygon has no rings"))??;
    let holes = rings.collect::<Result<Vec<_>, _>>()?;
    Ok(Polygon::new(exterior, holes))
}

fn parse_ring(v: &Value) -> Result<Ring, GeoError> {
    let points = v
        .as_array()
        .ok_or(GeoError::BadGeometry("ring must be an array of positions"))?
        .iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([lon, lat, ..]) => match (lon.as_f64(), lat.as_f64()) {
                (Some(lon), Some(lat)) => Ok([lon, lat]),
                _ => Err(GeoError::BadGeometry("position is not numeric")),
            },
            _ => Err(GeoError::BadGeometry("position needs two coordinates")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ring::new(points)
}

/// Serializes places with their polygons as a FeatureCollection.
pub fn to_geojson(index: &BoundaryIndex) -> Value {
    let ring = |r: &Ring| Value::from(r.points().iter().map(|p| json!([p[0], p[1]])).collect::<Vec<_>>());
    let polygon = |p: &Polygon| {
        let mut rings = vec![ring(p.exterior())];
        rings.extend(p.holes().iter().map(ring));
        Value::from(rings)
    };
    let features: Vec<Value> = index
        .entries()
        .iter()
        .map(|e| {
            let place = e.place();
            let geometry = match e.polygons() {
                [single] => json!({"type": "Polygon", "coordinates": polygon(single)}),
                many => json!({"type": "MultiPolygon", "coordinates": many.iter().map(polygon).collect::<Vec<_>>()}),
            };
            let mut props = json!({"place_id": place.place_id, "name": place.name, "level": place.level.as_str()});
            if let Some(parent) = &place.parent_id {
                props["parent_id"] = json!(parent);
            }
            json!({"type": "Feature", "properties": props, "geometry": geometry})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_feature(id: &str, level: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Value {
        json!({
            "type": "Feature",
            "properties": {"place_id": id, "name": id.to_uppercase(), "level": level},
            "geometry": {"type": "Polygon", "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]}
        })
    }

    fn collection(features: Vec<Value>) -> String {
        json!({"type": "FeatureCollection", "features": features}).to_string()
    }

    #[test]
    fn two_disjoint_squares() {
        let text = collection(vec![
            square_feature("a", "city", 0.0, 0.0, 1.0, 1.0),
            square_feature("b", "city", 5.0, 5.0, 6.0, 6.0),
        ]);
        let index = parse_boundaries(&text).unwrap();
        assert_eq!(index.len(), 2);
        assert_eq!(index.locate(0.5, 0.5)[0].place_id, "a");
        assert_eq!(index.locate(5.5, 5.5)[0].place_id, "b");
        assert!(index.locate(3.0, 3.0).is_empty());
    }

    #[test]
    fn unclosed_ring_is_bad_geometry() {
        let f = json!({
            "type": "Feature",
            "properties": {"place_id": "a", "name": "A", "level": "city"},
            "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1]]]}
        });
        let err = parse_boundaries(&collection(vec![f])).unwrap_err();
        assert_eq!(err.kind(), "BadGeometry");
    }

    #[test]
    fn missing_name_is_reported() {
        let mut f = square_feature("a", "city", 0.0, 0.0, 1.0, 1.0);
        f["properties"].as_object_mut().unwrap().remove("name");
        let err = parse_boundaries(&collection(vec![f])).unwrap_err();
        assert!(matches!(err, BoundaryError::Geo(GeoError::MissingProperty { feature: 0, property: "name" })));
    }

    #[test]
    fn multipolygon_with_hole() {
        let f = json!({
            "type": "Feature",
            "properties": {"place_id": "isl", "name": "Islands", "level": "admin"},
            "geometry": {"type": "MultiPolygon", "coordinates": [
                [[[0, 0], [4, 0], [4, 4], [0, 4], [0, 0]], [[1, 1], [3, 1], [3, 3], [1, 3], [1, 1]]],
                [[[10, 10], [11, 10], [11, 11], [10, 11], [10, 10]]]
            ]}
        });
        let index = parse_boundaries(&collection(vec![f])).unwrap();
        assert_eq!(index.locate(0.5, 0.5).len(), 1);
        assert!(index.locate(2.0, 2.0).is_empty());
        assert_eq!(index.locate(10.5, 10.5).len(), 1);

        let again = parse_boundaries(&to_geojson(&index).to_string()).unwrap();
        assert_eq!(again.entries(), index.entries());
    }

    #[test]
    fn parent_chain_is_loaded() {
        let mut city = square_feature("c", "city", 1.0, 1.0, 2.0, 2.0);
        city["properties"]["parent_id"] = json!("n");
        let text = collection(vec![square_feature("n", "country", 0.0, 0.0, 10.0, 10.0), city]);
        let index = parse_boundaries(&text).unwrap();
        let ids: Vec<&str> = index.locate(1.5, 1.5).iter().map(|p| p.place_id.as_str()).collect();
        assert_eq!(ids, ["n", "c"]);
    }
}
