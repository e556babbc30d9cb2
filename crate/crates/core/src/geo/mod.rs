//! Reverse geocoding: coordinates to named political divisions.
//!
//! Places form a wide-to-narrow hierarchy (country → admin → city →
//! neighborhood → POI). Messages that already carry a place name keep it;
//! the boundary polygons only name messages the feed left unnamed.

mod polygon;
mod rtree;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::message::{GeoMessage, PlaceLevel};

pub use polygon::{point_in_polygon, BBox, Polygon, Ring};
pub use rtree::BBoxIndex;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeoError {
    #[error("bad geometry: {0}")]
    BadGeometry(&'static str),
    #[error("feature {feature} is missing property `{property}`")]
    MissingProperty { feature: usize, property: &'static str },
    #[error("duplicate place_id {0:?}")]
    DuplicatePlace(String),
    #[error("place {0:?} has an invalid parent chain (cycle or level does not narrow)")]
    BadHierarchy(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Place {
    pub place_id: String,
    pub name: String,
    pub level: PlaceLevel,
    pub parent_id: Option<String>,
}

/// One place with its (multi)polygon boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEntry {
    place: Place,
    bbox: BBox,
    polygons: Vec<Polygon>,
}

impl BoundaryEntry {
    pub fn new(place: Place, polygons: Vec<Polygon>) -> Result<Self, GeoError> {
        if polygons.is_empty() {
            return Err(GeoError::BadGeometry("feature has no polygons"));
        }
        let bbox = polygons.iter().fold(BBox::EMPTY, |b, p| b.union(p.bbox()));
        Ok(BoundaryEntry { place, bbox, polygons })
    }

    pub fn place(&self) -> &Place {
        &self.place
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.bbox.contains(lon, lat) && self.polygons.iter().any(|p| p.contains(lat, lon))
    }
}

/// Immutable spatial index over place boundaries.
#[derive(Debug, Clone, Default)]
pub struct BoundaryIndex {
    entries: Vec<BoundaryEntry>,
    by_id: BTreeMap<String, usize>,
    by_name: BTreeMap<(PlaceLevel, String), Vec<usize>>,
    tree: BBoxIndex,
}

impl BoundaryIndex {
    pub fn build(entries: Vec<BoundaryEntry>) -> Result<Self, GeoError> {
        let mut by_id = BTreeMap::new();
        let mut by_name: BTreeMap<(PlaceLevel, String), Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.place.place_id.clone(), i).is_some() {
                return Err(GeoError::DuplicatePlace(e.place.place_id.clone()));
            }
            by_name.entry((e.place.level, e.place.name.clone())).or_default().push(i);
        }
        // Parents that are not loaded are allowed; loaded ones must narrow.
        for e in &entries {
            let mut level = e.place.level;
            let mut parent = e.place.parent_id.as_deref();
            let mut steps = 0;
            while let Some(pid) = parent {
                let Some(&p) = by_id.get(pid) else { break };
                let pe = &entries[p];
                steps += 1;
                if pe.place.level >= level || steps > entries.len() {
                    return Err(GeoError::BadHierarchy(e.place.place_id.clone()));
                }
                level = pe.place.level;
                parent = pe.place.parent_id.as_deref();
            }
        }
        let boxes: Vec<BBox> = entries.iter().map(|e| e.bbox).collect();
        let tree = BBoxIndex::build(&boxes);
        Ok(BoundaryIndex { entries, by_id, by_name, tree })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BoundaryEntry] {
        &self.entries
    }

    pub fn get(&self, place_id: &str) -> Option<&BoundaryEntry> {
        self.by_id.get(place_id).map(|&i| &self.entries[i])
    }

    /// Entries whose bounding box contains the point, by position.
    pub fn candidates(&self, lat: f64, lon: f64) -> Vec<usize> {
        self.tree.query_point(lon, lat)
    }

    /// Every place whose boundary contains the point.
    pub fn containing(&self, lat: f64, lon: f64) -> Vec<&BoundaryEntry> {
        self.candidates(lat, lon)
            .into_iter()
            .map(|i| &self.entries[i])
            .filter(|e| e.contains(lat, lon))
            .collect()
    }

    /// Best containing place at each level, widest first. Overlaps at one
    /// level go to the smaller bounding box, then the smaller place_id.
    pub fn locate(&self, lat: f64, lon: f64) -> Vec<&Place> {
        let mut best: BTreeMap<PlaceLevel, &BoundaryEntry> = BTreeMap::new();
        for e in self.containing(lat, lon) {
            let slot = best.entry(e.place.level).or_insert(e);
            if prefer(e, slot) {
                *slot = e;
            }
        }
        let mut places: BTreeMap<PlaceLevel, &Place> = best.into_iter().map(|(l, e)| (l, &e.place)).collect();
        if let Some((_, narrowest)) = places.iter().next_back() {
            let chain = self.ancestors(narrowest);
            for p in chain {
                places.entry(p.level).or_insert(p);
            }
        }
        places.into_values().collect()
    }

    fn ancestors<'a>(&'a self, place: &Place) -> Vec<&'a Place> {
        let mut out = Vec::new();
        let mut parent = place.parent_id.as_deref();
        while let Some(pid) = parent {
            let Some(e) = self.get(pid) else { break };
            out.push(&e.place);
            parent = e.place.parent_id.as_deref();
        }
        out
    }

    fn find_named(&self, level: PlaceLevel, name: &str) -> Option<&BoundaryEntry> {
        let ids = self.by_name.get(&(level, String::from(name)))?;
        ids.iter().map(|&i| &self.entries[i]).reduce(|a, b| if prefer(b, a) { b } else { a })
    }

    /// Attaches places to a validated message.
    pub fn resolve(&self, msg: GeoMessage) -> LocatedMessage {
        if let Some(name) = msg.place_name.as_deref().map(str::trim).filter(|n| !n.is_empty()) {
            let level = msg.place_level.unwrap_or(PlaceLevel::City);
            let mut places: BTreeMap<PlaceLevel, ResolvedPlace> = BTreeMap::new();
            match self.find_named(level, name) {
                Some(e) => {
                    places.insert(level, ResolvedPlace::from(&e.place));
                    for p in self.ancestors(&e.place) {
                        places.entry(p.level).or_insert_with(|| ResolvedPlace::from(p));
                    }
                }
                None => {
                    places.insert(level, ResolvedPlace::opaque(name, level));
                }
            }
            if let Some(country) = msg.country.as_deref().map(str::trim).filter(|c| !c.is_empty()) {
                places.entry(PlaceLevel::Country).or_insert_with(|| match self.find_named(PlaceLevel::Country, country) {
                    Some(e) => ResolvedPlace::from(&e.place),
                    None => ResolvedPlace::opaque(country, PlaceLevel::Country),
                });
            }
            return LocatedMessage { message: msg, places: places.into_values().collect(), source: LocationSource::FeedName };
        }

        if let Some(c) = msg.coords {
            let places: Vec<ResolvedPlace> = self.locate(c.lat, c.lon).into_iter().map(ResolvedPlace::from).collect();
            let source = if places.is_empty() { LocationSource::Unresolved } else { LocationSource::Coordinates };
            return LocatedMessage { message: msg, places, source };
        }
        LocatedMessage { message: msg, places: Vec::new(), source: LocationSource::Unresolved }
    }
}

fn prefer(candidate: &BoundaryEntry, current: &BoundaryEntry) -> bool {
    let (a, b) = (candidate.bbox.area(), current.bbox.area());
    a < b || (a == b && candidate.place.place_id < current.place.place_id)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedPlace {
    pub place_id: String,
    pub name: String,
    pub level: PlaceLevel,
}

impl ResolvedPlace {
    fn opaque(name: &str, level: PlaceLevel) -> Self {
        ResolvedPlace { place_id: name.into(), name: name.into(), level }
    }
}

impl From<&Place> for ResolvedPlace {
    fn from(p: &Place) -> Self {
        ResolvedPlace { place_id: p.place_id.clone(), name: p.name.clone(), level: p.level }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocationSource {
    /// The feed supplied the place name.
    FeedName,
    /// Coordinates matched at least one boundary.
    Coordinates,
    /// No usable location; excluded downstream.
    Unresolved,
}

/// A message with its places at each resolved level, widest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedMessage {
    pub message: GeoMessage,
    pub places: Vec<ResolvedPlace>,
    pub source: LocationSource,
}

impl LocatedMessage {
    pub fn is_resolved(&self) -> bool {
        !self.places.is_empty()
    }

    pub fn place_at(&self, level: PlaceLevel) -> Option<&ResolvedPlace> {
        self.places.iter().find(|p| p.level == level)
    }

    pub fn narrowest(&self) -> Option<&ResolvedPlace> {
        self.places.last()
    }
}
