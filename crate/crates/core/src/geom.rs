//! Small 2D vector helpers shared by the field, loss and measurement code.

use crate::autodiff::Scalar;

/// Direction norms at or below this are treated as degenerate.
pub const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> V2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn norm2(self) -> T {
        self.dot(self)
    }

    /// Euclidean norm whose derivative stays finite at the origin.
    pub fn norm(self) -> T {
        safe_sqrt(self.norm2())
    }

    pub fn values(self) -> [f64; 2] {
        [self.x.value(), self.y.value()]
    }
}

impl V2<f64> {
    pub fn from_array(p: [f64; 2]) -> Self {
        Self::new(p[0], p[1])
    }
}

/// `sqrt` that returns its (zero) argument unchanged at zero, so the
/// recorded slope is zero rather than infinite.
pub fn safe_sqrt<T: Scalar>(v: T) -> T {
    if v.value() > 0.0 {
        v.sqrt()
    } else {
        v
    }
}

/// Signed shoelace area, counterclockwise positive.
pub fn shoelace<T: Scalar>(points: &[V2<T>]) -> T {
    let n = points.len();
    let mut acc = points[n - 1].cross(points[0]);
    for i in 0..n - 1 {
        acc = acc + points[i].cross(points[i + 1]);
    }
    acc * 0.5
}

/// Cross product of consecutive edges at each vertex of a closed polygon,
/// `cross(p[i+1] - p[i], p[i+2] - p[i+1])` for `i` cyclic.
pub fn turn_crosses<T: Scalar>(points: &[V2<T>]) -> Vec<T> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            let c = points[(i + 2) % n];
            b.sub(a).cross(c.sub(b))
        })
        .collect()
}
