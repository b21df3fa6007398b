use std::fmt;

/// A position in the vertical x–z plane, in metres. `z` grows with depth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    #[inline]
    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dz = self.z - other.z;
        dx * dx + dz * dz
    }

    #[inline]
    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }

    #[inline]
    pub fn coord(self, axis: usize) -> f64 {
        if axis == 0 {
            self.x
        } else {
            self.z
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.z)
    }
}

/// Axis-aligned computational domain. The top edge (`z_min`) is the free surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, z_min: f64, z_max: f64) -> crate::Result<Self> {
        let ok = x_min.is_finite() && x_max.is_finite() && z_min.is_finite() && z_max.is_finite();
        if !ok || x_min >= x_max || z_min >= z_max {
            return Err(crate::Error::Config(format!("degenerate domain [{x_min}, {x_max}] x [{z_min}, {z_max}]")));
        }
        Ok(Self { x_min, x_max, z_min, z_max })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.depth()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.z >= self.z_min && p.z <= self.z_max
    }

    pub fn contains_strictly(&self, p: Point) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.z > self.z_min && p.z < self.z_max
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x_min, self.x_max), p.z.clamp(self.z_min, self.z_max))
    }

    pub fn distance_to_top(&self, p: Point) -> f64 {
        p.z - self.z_min
    }

    /// Shortest distance to the left, right or bottom edge.
    pub fn distance_to_absorbing_edge(&self, p: Point) -> f64 {
        (p.x - self.x_min).min(self.x_max - p.x).min(self.z_max - p.z)
    }

    /// Shortest distance to any of the four edges.
    pub fn distance_to_edge(&self, p: Point) -> f64 {
        self.distance_to_absorbing_edge(p).min(self.distance_to_top(p))
    }
}
