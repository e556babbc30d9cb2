use alloc::vec::Vec;

use super::GeoError;

/// Axis-aligned box in plain degrees; `x` is longitude, `y` latitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub const EMPTY: BBox = BBox {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };

    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        BBox { min_x, min_y, max_x, max_y }
    }

    pub fn of_points(points: &[[f64; 2]]) -> Self {
        points.iter().fold(Self::EMPTY, |b, p| b.expand_point(p[0], p[1]))
    }

    pub fn expand_point(self, x: f64, y: f64) -> Self {
        BBox {
            min_x: self.min_x.min(x),
            min_y: self.min_y.min(y),
            max_x: self.max_x.max(x),
            max_y: self.max_y.max(y),
        }
    }

    pub fn union(self, other: BBox) -> Self {
        BBox {
            min_x: self.min_x.min(other.min_x),
            min_y: self.min_y.min(other.min_y),
            max_x: self.max_x.max(other.max_x),
            max_y: self.max_y.max(other.max_y),
        }
    }

    /// Closed containment: points on the border are inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.min_x >= self.min_x && other.max_x <= self.max_x && other.min_y >= self.min_y && other.max_y <= self.max_y
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x).max(0.0) * (self.max_y - self.min_y).max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min_x + self.max_x) * 0.5, (self.min_y + self.max_y) * 0.5]
    }
}

/// Closed ring of `[lon, lat]` vertices; the first vertex repeats at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    points: Vec<[f64; 2]>,
}

impl Ring {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, GeoError> {
        if points.len() < 4 {
            return Err(GeoError::BadGeometry("ring has fewer than 4 vertices"));
        }
        if points.first() != points.last() {
            return Err(GeoError::BadGeometry("ring is not closed"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeoError::BadGeometry("non-finite vertex"));
        }
        Ok(Ring { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.points)
    }

    fn locate(&self, x: f64, y: f64) -> Position {
        let mut inside = false;
        for edge in self.points.windows(2) {
            let (a, b) = (edge[0], edge[1]);
            let orient = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
            if orient == 0.0
                && x >= a[0].min(b[0])
                && x <= a[0].max(b[0])
                && y >= a[1].min(b[1])
                && y <= a[1].max(b[1])
            {
                return Position::Boundary;
            }
            // Half-open in y so a vertex on the ray is counted once.
            let upward = a[1] <= y && b[1] > y;
            let downward = b[1] <= y && a[1] > y;
            if (upward && orient > 0.0) || (downward && orient < 0.0) {
                inside = !inside;
            }
        }
        if inside {
            Position::Inside
        } else {
            Position::Outside
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Inside,
    Boundary,
    Outside,
}

/// Exterior ring with optional holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Ring,
    holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Self {
        Polygon { exterior, holes }
    }

    pub fn exterior(&self) -> &Ring {
        &self.exterior
    }

    pub fn holes(&self) -> &[Ring] {
        &self.holes
    }

    pub fn bbox(&self) -> BBox {
        self.exterior.bbox()
    }

    /// Even-odd containment. Edge points count as inside, including points on
    /// a hole's edge; points strictly inside a hole are outside.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        match self.exterior.locate(lon, lat) {
            Position::Outside => false,
            Position::Boundary => true,
            Position::Inside => self.holes.iter().all(|h| h.locate(lon, lat) != Position::Inside),
        }
    }
}

pub fn point_in_polygon(lat: f64, lon: f64, polygon: &Polygon) -> bool {
    polygon.contains(lat, lon)
}
