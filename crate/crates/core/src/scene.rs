//! Concrete configurations: element coordinates, the flat parameter vector
//! the optimizer moves, and seeded random initialization.
//!
//! Free points own two parameter slots (x, y). A circle owns a log-radius
//! slot and, unless it is centred on a declared point, two slots for its own
//! centre. Fixed points own no slots. Storing `ln r` keeps every radius
//! strictly positive whatever the optimizer writes.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;
use crate::dsl::{ElementDecl, SceneSpec};
use crate::geom::V2;

pub const INIT_BOX: f64 = 1.0;
pub const INIT_RADIUS: (f64, f64) = (0.3, 1.0);

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("parameter vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("unknown element {0}")]
    UnknownElement(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointEntry {
    pub name: String,
    pub pos: [f64; 2],
    /// Slot of the x coordinate (y follows); `None` for fixed points.
    pub slot: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CircleCenter {
    /// Index into [`Configuration::points`].
    Point(usize),
    Own { pos: [f64; 2], slot: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircleEntry {
    pub name: String,
    pub center: CircleCenter,
    pub radius: f64,
    pub log_radius_slot: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub points: Vec<PointEntry>,
    pub circles: Vec<CircleEntry>,
    /// Point index pairs.
    pub segments: Vec<(usize, usize)>,
    pub lines: Vec<(usize, usize)>,
    pub n_params: usize,
    pub rng_seed: u64,
    /// The scene declares a polygon-type constraint (see
    /// [`SceneSpec::has_polygon_constraint`]).
    pub polygonal: bool,
}

/// Flat vector of free scalars; radii appear as `ln r`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

/// Element positions expressed in some scalar type.
pub struct Resolved<T> {
    pub points: Vec<V2<T>>,
    pub circles: Vec<(V2<T>, T)>,
}

fn uniform_point(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [
        rng.random_range(-INIT_BOX..=INIT_BOX),
        rng.random_range(-INIT_BOX..=INIT_BOX),
    ]
}

/// Instantiates `spec` with coordinates drawn from ChaCha8 seeded by `seed`.
///
/// Free points are uniform on `[-1, 1]^2`, log-radii uniform on
/// `[ln 0.3, ln 1]`. Draws happen in declaration order, so a given
/// `(spec, seed)` always yields the same configuration on every platform.
pub fn build_scene(spec: &SceneSpec, seed: u64) -> Configuration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut n_params = 0;
    for e in &spec.elements {
        if let ElementDecl::Point { name } = e {
            let entry = match spec.fixes.get(name) {
                Some(&(x, y)) => PointEntry {
                    name: name.clone(),
                    pos: [x, y],
                    slot: None,
                },
                None => {
                    let slot = n_params;
                    n_params += 2;
                    PointEntry {
                        name: name.clone(),
                        pos: uniform_point(&mut rng),
                        slot: Some(slot),
                    }
                }
            };
            points.push(entry);
        }
    }
    let index = |name: &str| points.iter().position(|p| p.name == name);
    let (lo, hi) = (INIT_RADIUS.0.ln(), INIT_RADIUS.1.ln());
    let mut circles = Vec::new();
    let mut segments = Vec::new();
    let mut lines = Vec::new();
    for e in &spec.elements {
        match e {
            ElementDecl::Circle { name, center } => {
                let center = match center.as_deref().and_then(index) {
                    Some(i) => CircleCenter::Point(i),
                    None => {
                        let slot = n_params;
                        n_params += 2;
                        CircleCenter::Own {
                            pos: uniform_point(&mut rng),
                            slot,
                        }
                    }
                };
                let log_radius_slot = n_params;
                n_params += 1;
                let radius = rng.random_range(lo..=hi).exp();
                circles.push(CircleEntry {
                    name: name.clone(),
                    center,
                    radius,
                    log_radius_slot,
                });
            }
            ElementDecl::Segment { a, b } | ElementDecl::Line { a, b } => {
                if let (Some(i), Some(j)) = (index(a), index(b)) {
                    if matches!(e, ElementDecl::Segment { .. }) {
                        segments.push((i, j));
                    } else {
                        lines.push((i, j));
                    }
                }
            }
            ElementDecl::Point { .. } => {}
        }
    }
    Configuration {
        points,
        circles,
        segments,
        lines,
        n_params,
        rng_seed: seed,
        polygonal: spec.has_polygon_constraint(),
    }
}

impl Configuration {
    pub fn point_index(&self, name: &str) -> Option<usize> {
        self.points.iter().position(|p| p.name == name)
    }

    pub fn circle_index(&self, name: &str) -> Option<usize> {
        self.circles.iter().position(|c| c.name == name)
    }

    pub fn point(&self, name: &str) -> Option<[f64; 2]> {
        self.point_index(name).map(|i| self.points[i].pos)
    }

    pub fn circle_center(&self, ci: usize) -> [f64; 2] {
        match self.circles[ci].center {
            CircleCenter::Point(i) => self.points[i].pos,
            CircleCenter::Own { pos, .. } => pos,
        }
    }

    /// Every location that counts as a point of the layout: declared points
    /// followed by the centres of circles that do not sit on one.
    pub fn all_positions(&self) -> Vec<[f64; 2]> {
        let mut out: Vec<[f64; 2]> = self.points.iter().map(|p| p.pos).collect();
        out.extend(self.circles.iter().filter_map(|c| match c.center {
            CircleCenter::Own { pos, .. } => Some(pos),
            CircleCenter::Point(_) => None,
        }));
        out
    }

    pub fn read_params(&self) -> ParamVector {
        let mut v = vec![0.0; self.n_params];
        for p in &self.points {
            if let Some(s) = p.slot {
                v[s] = p.pos[0];
                v[s + 1] = p.pos[1];
            }
        }
        for c in &self.circles {
            if let CircleCenter::Own { pos, slot } = c.center {
                v[slot] = pos[0];
                v[slot + 1] = pos[1];
            }
            v[c.log_radius_slot] = c.radius.ln();
        }
        ParamVector(v)
    }

    pub fn write_params(&mut self, p: &ParamVector) -> Result<(), SceneError> {
        if p.0.len() != self.n_params {
            return Err(SceneError::LengthMismatch {
                expected: self.n_params,
                got: p.0.len(),
            });
        }
        if let Some(index) = p.0.iter().position(|v| !v.is_finite()) {
            return Err(SceneError::NonFinite { index });
        }
        let v = &p.0;
        for pt in &mut self.points {
            if let Some(s) = pt.slot {
                pt.pos = [v[s], v[s + 1]];
            }
        }
        for c in &mut self.circles {
            if let CircleCenter::Own { pos, slot } = &mut c.center {
                *pos = [v[*slot], v[*slot + 1]];
            }
            c.radius = v[c.log_radius_slot].exp();
        }
        Ok(())
    }

    /// Copy of `self` with `p` written in.
    pub fn with_params(&self, p: &ParamVector) -> Result<Configuration, SceneError> {
        let mut out = self.clone();
        out.write_params(p)?;
        Ok(out)
    }

    /// Positions as functions of `params`; fixed coordinates go through
    /// `lift`.
    pub fn resolve<T: Scalar>(&self, params: &[T], lift: impl Fn(f64) -> T) -> Resolved<T> {
        let points: Vec<V2<T>> = self
            .points
            .iter()
            .map(|p| match p.slot {
                Some(s) => V2::new(params[s], params[s + 1]),
                None => V2::new(lift(p.pos[0]), lift(p.pos[1])),
            })
            .collect();
        let circles = self
            .circles
            .iter()
            .map(|c| {
                let center = match c.center {
                    CircleCenter::Point(i) => points[i],
                    CircleCenter::Own { slot, .. } => V2::new(params[slot], params[slot + 1]),
                };
                (center, params[c.log_radius_slot].exp())
            })
            .collect();
        Resolved { points, circles }
    }

    /// Positions read straight from the stored coordinates.
    pub fn resolve_f64(&self) -> Resolved<f64> {
        Resolved {
            points: self
                .points
                .iter()
                .map(|p| V2::from_array(p.pos))
                .collect(),
            circles: (0..self.circles.len())
                .map(|i| (V2::from_array(self.circle_center(i)), self.circles[i].radius))
                .collect(),
        }
    }

    pub fn snapshot(&self, loss: Option<f64>) -> Snapshot {
        Snapshot {
            seed: self.rng_seed,
            loss,
            points: self
                .points
                .iter()
                .map(|p| SnapshotPoint {
                    name: p.name.clone(),
                    xy: p.pos,
                    fixed: p.slot.is_none(),
                })
                .collect(),
            circles: (0..self.circles.len())
                .map(|i| SnapshotCircle {
                    name: self.circles[i].name.clone(),
                    center: self.circle_center(i),
                    radius: self.circles[i].radius,
                })
                .collect(),
        }
    }

    /// Overwrites coordinates and radii from a snapshot taken of a
    /// configuration built from the same scene.
    pub fn apply_snapshot(&mut self, snap: &Snapshot) -> Result<(), SceneError> {
        for sp in &snap.points {
            let i = self
                .point_index(&sp.name)
                .ok_or_else(|| SceneError::UnknownElement(sp.name.clone()))?;
            if self.points[i].slot.is_some() {
                self.points[i].pos = sp.xy;
            }
        }
        for sc in &snap.circles {
            let i = self
                .circle_index(&sc.name)
                .ok_or_else(|| SceneError::UnknownElement(sc.name.clone()))?;
            let c = &mut self.circles[i];
            if let CircleCenter::Own { pos, .. } = &mut c.center {
                *pos = sc.center;
            }
            if !(sc.radius > 0.0 && sc.radius.is_finite()) {
                return Err(SceneError::NonFinite {
                    index: c.log_radius_slot,
                });
            }
            c.radius = sc.radius;
        }
        self.rng_seed = snap.seed;
        Ok(())
    }
}

/// JSON form of a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seed: u64,
    pub loss: Option<f64>,
    pub points: Vec<SnapshotPoint>,
    pub circles: Vec<SnapshotCircle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPoint {
    pub name: String,
    pub xy: [f64; 2],
    #[serde(default)]
    pub fixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotCircle {
    pub name: String,
    pub center: [f64; 2],
    pub radius: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;

    const TRIANGLE: &str = "point A B C\nconstraint equal length(A,B) length(B,C)\n";

    #[test]
    fn deterministic_in_seed() {
        let spec = parse_spec(TRIANGLE).unwrap();
        assert_eq!(build_scene(&spec, 9), build_scene(&spec, 9));
        assert_ne!(build_scene(&spec, 9), build_scene(&spec, 10));
    }

    #[test]
    fn fixed_point_has_no_slots() {
        let spec = parse_spec(&format!("{TRIANGLE}fix A 0 0\n")).unwrap();
        let cfg = build_scene(&spec, 3);
        assert_eq!(cfg.point("A"), Some([0.0, 0.0]));
        assert_eq!(cfg.points[0].slot, None);
        assert_eq!(cfg.read_params().0.len(), 4);
    }

    #[test]
    fn free_triangle_has_six_params() {
        let cfg = build_scene(&parse_spec(TRIANGLE).unwrap(), 0);
        assert_eq!(cfg.read_params().0.len(), 6);
    }

    #[test]
    fn circle_params_end_with_log_radius() {
        let spec = parse_spec("circle w\nconstraint equal radius(w) 1").unwrap();
        let cfg = build_scene(&spec, 1);
        let p = cfg.read_params();
        assert_eq!(p.0.len(), 3);
        assert!((p.0[2].exp() - cfg.circles[0].radius).abs() < 1e-15);
        assert!((0.3..=1.0).contains(&cfg.circles[0].radius));
    }

    #[test]
    fn write_log_radius() {
        let spec = parse_spec("circle w\nconstraint equal radius(w) 1").unwrap();
        let mut cfg = build_scene(&spec, 1);
        cfg.write_params(&ParamVector(vec![0.0, 0.0, -2.0])).unwrap();
        assert!((cfg.circles[0].radius - 0.1353352832366127).abs() < 1e-15);
    }

    #[test]
    fn write_rejects_bad_vectors() {
        let mut cfg = build_scene(&parse_spec(TRIANGLE).unwrap(), 0);
        assert_eq!(
            cfg.write_params(&ParamVector(vec![0.0; 5])),
            Err(SceneError::LengthMismatch {
                expected: 6,
                got: 5
            })
        );
        let mut v = vec![0.0; 6];
        v[4] = f64::NAN;
        assert_eq!(
            cfg.write_params(&ParamVector(v)),
            Err(SceneError::NonFinite { index: 4 })
        );
    }

    #[test]
    fn write_then_read_round_trips() {
        let spec = parse_spec("point A B\ncircle w center A\ncircle k\nfix B 1 2\nconstraint on B w\nconstraint on A k").unwrap();
        let mut cfg = build_scene(&spec, 5);
        let v = ParamVector(vec![0.25, -0.5, 0.1, 0.3, 0.7, -0.4]);
        cfg.write_params(&v).unwrap();
        for (a, b) in cfg.read_params().0.iter().zip(&v.0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(cfg.point("B"), Some([1.0, 2.0]));
    }

    #[test]
    fn snapshot_round_trip() {
        let spec = parse_spec("point A B\ncircle w center A\ncircle k\nconstraint on B w\nconstraint on A k").unwrap();
        let cfg = build_scene(&spec, 5);
        let json = serde_json::to_string(&cfg.snapshot(Some(0.5))).unwrap();
        let snap: Snapshot = serde_json::from_str(&json).unwrap();
        let mut other = build_scene(&spec, 99);
        other.apply_snapshot(&snap).unwrap();
        assert_eq!(other, cfg);
    }
}
