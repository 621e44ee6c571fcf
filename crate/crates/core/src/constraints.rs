//! Differentiable constraint losses.
//!
//! Every loss is non-negative and vanishes exactly when its relation holds.
//! The formulas are generic over [`Scalar`]: evaluated with `f64` they give
//! plain values, evaluated on a [`Tape`] they also give exact gradients with
//! respect to the configuration's parameter vector.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{Scalar, Tape, Var};
use crate::dsl::{
    Arg, ConstraintDecl, ConstraintKind, Dimension, ElementRef, Quantity, SceneSpec,
};
use crate::geom::{safe_sqrt, shoelace, turn_crosses, V2, EPS};
use crate::scene::{build_scene, Configuration, ParamVector, Resolved};

/// Hinge margin for `order`, `convex` and `inside`.
pub const MARGIN: f64 = 1e-3;
/// Default minimum separation enforced by the crowd term (field units).
pub const DEFAULT_CROWD_TAU: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum BindError {
    #[error("unknown element {0}")]
    UnknownName(String),
    #[error("constraint '{0}' is malformed")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// Loss catalog
// ---------------------------------------------------------------------------

/// Records arms and directions that fell below [`EPS`] during evaluation.
#[derive(Debug, Default)]
pub struct Degeneracies(pub Vec<String>);

impl Degeneracies {
    /// Returns `v`, or a fixed unit-length-`EPS` direction (carrying no
    /// gradient) when `v` is shorter than `EPS`.
    fn clamp<T: Scalar>(&mut self, v: V2<T>, what: &str) -> V2<T> {
        if v.norm2().value() < EPS * EPS {
            self.0.push(format!("degenerate {what}"));
            V2::new(v.x * 0.0 + EPS, v.y * 0.0)
        } else {
            v
        }
    }
}

/// `(v1 - v2)^2`
pub fn loss_equal<T: Scalar>(v1: T, v2: T) -> T {
    (v1 - v2).square()
}

/// `max(0, v1 - v2)^2`
pub fn loss_less<T: Scalar>(v1: T, v2: T) -> T {
    (v1 - v2).relu().square()
}

/// Unsigned angle at `x2` in radians, in `[0, pi]`.
pub fn angle_at<T: Scalar>(x1: V2<T>, x2: V2<T>, x3: V2<T>, deg: &mut Degeneracies) -> T {
    let u = deg.clamp(x1.sub(x2), "angle arm");
    let v = deg.clamp(x3.sub(x2), "angle arm");
    u.cross(v).abs().atan2(u.dot(v))
}

/// `(angle(x1, x2, x3) - theta)^2` with `theta` in radians.
pub fn loss_angle<T: Scalar>(
    x1: V2<T>,
    x2: V2<T>,
    x3: V2<T>,
    theta: f64,
    deg: &mut Degeneracies,
) -> T {
    (angle_at(x1, x2, x3, deg) - theta).square()
}

/// `(signed_area(points) - target)^2`, counterclockwise positive.
pub fn loss_area<T: Scalar>(points: &[V2<T>], target: f64) -> T {
    (shoelace(points) - target).square()
}

fn unit_products<T: Scalar>(
    a: V2<T>,
    b: V2<T>,
    c: V2<T>,
    d: V2<T>,
    deg: &mut Degeneracies,
) -> (T, T, T) {
    let u = deg.clamp(b.sub(a), "direction");
    let v = deg.clamp(d.sub(c), "direction");
    (u.cross(v), u.dot(v), u.norm2() * v.norm2())
}

/// `(u_hat x v_hat)^2` for the directions of `ab` and `cd`.
pub fn loss_parallel<T: Scalar>(
    a: V2<T>,
    b: V2<T>,
    c: V2<T>,
    d: V2<T>,
    deg: &mut Degeneracies,
) -> T {
    let (cross, _, n) = unit_products(a, b, c, d, deg);
    cross.square() / n
}

/// `(u_hat . v_hat)^2` for the directions of `ab` and `cd`.
pub fn loss_perpendicular<T: Scalar>(
    a: V2<T>,
    b: V2<T>,
    c: V2<T>,
    d: V2<T>,
    deg: &mut Degeneracies,
) -> T {
    let (_, dot, n) = unit_products(a, b, c, d, deg);
    dot.square() / n
}

fn hinge_sum<T: Scalar>(values: impl IntoIterator<Item = T>, margin: f64) -> Option<T> {
    values
        .into_iter()
        .map(|c| (-c + margin).relu().square())
        .reduce(|a, b| a + b)
}

/// Penalizes every cyclic vertex that does not turn counterclockwise by at
/// least [`MARGIN`].
pub fn loss_order<T: Scalar>(points: &[V2<T>]) -> T {
    hinge_sum(turn_crosses(points), MARGIN).expect("order needs points")
}

/// Same turn test as [`loss_order`]; together they force a convex
/// counterclockwise polygon.
pub fn loss_convex<T: Scalar>(points: &[V2<T>]) -> T {
    loss_order(points)
}

/// Squared distance from `p` to the closed segment `ab`.
pub fn segment_dist2<T: Scalar>(p: V2<T>, a: V2<T>, b: V2<T>) -> T {
    let ab = b.sub(a);
    let len2 = ab.norm2();
    if len2.value() <= EPS * EPS {
        return p.sub(a).norm2();
    }
    let t = p.sub(a).dot(ab) / len2;
    let foot = if t.value() <= 0.0 {
        a
    } else if t.value() >= 1.0 {
        b
    } else {
        a.add(ab.scale(t))
    };
    p.sub(foot).norm2()
}

fn line_cross_and_len2<T: Scalar>(
    p: V2<T>,
    a: V2<T>,
    b: V2<T>,
    deg: &mut Degeneracies,
) -> (T, T) {
    let ab = deg.clamp(b.sub(a), "line");
    (ab.cross(p.sub(a)), ab.norm2())
}

/// Position of an element referenced by `on` or `dist`.
#[derive(Clone, Copy, Debug)]
pub enum Target<T> {
    Segment(V2<T>, V2<T>),
    Line(V2<T>, V2<T>),
    Circle(V2<T>, T),
}

/// Signed distance from `p` to the element: signed for circles, unsigned
/// otherwise.
pub fn element_distance<T: Scalar>(p: V2<T>, e: Target<T>, deg: &mut Degeneracies) -> T {
    match e {
        Target::Segment(a, b) => safe_sqrt(segment_dist2(p, a, b)),
        Target::Line(a, b) => {
            let (cross, len2) = line_cross_and_len2(p, a, b, deg);
            cross.abs() / len2.sqrt()
        }
        Target::Circle(c, r) => p.sub(c).norm() - r,
    }
}

/// Squared element distance; zero iff `p` lies on the element.
pub fn loss_on<T: Scalar>(p: V2<T>, e: Target<T>, deg: &mut Degeneracies) -> T {
    match e {
        Target::Segment(a, b) => segment_dist2(p, a, b),
        Target::Line(a, b) => {
            let (cross, len2) = line_cross_and_len2(p, a, b, deg);
            cross.square() / len2
        }
        Target::Circle(c, r) => (p.sub(c).norm() - r).square(),
    }
}

/// Penalizes `p` for lying outside (or within [`MARGIN`] of) any edge of
/// the counterclockwise polygon.
pub fn loss_inside<T: Scalar>(p: V2<T>, polygon: &[V2<T>]) -> T {
    let n = polygon.len();
    let crosses = (0..n).map(|i| {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        b.sub(a).cross(p.sub(a))
    });
    hinge_sum(crosses, MARGIN).expect("inside needs a polygon")
}

/// `sum_{i<j} max(0, tau - |x_i - x_j|)^2`
pub fn loss_crowd(points: &[V2<f64>], tau: f64) -> f64 {
    crowd_hinges(points, tau).unwrap_or(0.0)
}

/// [`loss_crowd`] over any scalar; `None` when no pair is closer than `tau`.
pub fn crowd_hinges<T: Scalar>(points: &[V2<T>], tau: f64) -> Option<T> {
    let mut acc: Option<T> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (pi, pj) = (points[i].values(), points[j].values());
            // Pairs already apart by tau contribute nothing; skipping them
            // keeps the tape short.
            if (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) >= tau * tau {
                continue;
            }
            let d = points[i].sub(points[j]);
            let h = (-d.norm() + tau).relu().square();
            acc = Some(match acc {
                Some(a) => a + h,
                None => h,
            });
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Bound terms
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum ElemRef {
    Segment(usize, usize),
    Line(usize, usize),
    Circle(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum QuantityRef {
    Length(usize, usize),
    /// Radians.
    Angle(usize, usize, usize),
    /// Unsigned polygon area.
    Area(Vec<usize>),
    Radius(usize),
    Distance(usize, ElemRef),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rhs {
    Quantity(QuantityRef),
    /// Field units, field units squared, or radians.
    Literal(f64),
}

/// A constraint with its names resolved to configuration indices and its
/// values converted to field units and radians.
#[derive(Clone, Debug, PartialEq)]
pub enum TermForm {
    Equal(QuantityRef, Rhs),
    Less(QuantityRef, Rhs),
    Angle([usize; 3], f64),
    Area(Vec<usize>, f64),
    Parallel([usize; 4]),
    Perpendicular([usize; 4]),
    Order(Vec<usize>),
    Convex(Vec<usize>),
    On(usize, ElemRef),
    Inside(usize, Vec<usize>),
    Crowd(Vec<usize>, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintTerm {
    pub id: usize,
    pub decl: ConstraintDecl,
    pub form: TermForm,
}

impl ConstraintTerm {
    pub fn kind(&self) -> ConstraintKind {
        self.decl.kind
    }

    pub fn weight(&self) -> f64 {
        self.decl.weight
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrowdPolicy {
    pub enabled: bool,
    pub tau: f64,
}

impl Default for CrowdPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            tau: DEFAULT_CROWD_TAU,
        }
    }
}

struct Binder<'a> {
    cfg: &'a Configuration,
    k: f64,
}

impl Binder<'_> {
    fn point(&self, n: &str) -> Result<usize, BindError> {
        self.cfg
            .point_index(n)
            .ok_or_else(|| BindError::UnknownName(n.to_string()))
    }

    fn circle(&self, n: &str) -> Result<usize, BindError> {
        self.cfg
            .circle_index(n)
            .ok_or_else(|| BindError::UnknownName(n.to_string()))
    }

    fn points(&self, ns: &[String]) -> Result<Vec<usize>, BindError> {
        ns.iter().map(|n| self.point(n)).collect()
    }

    fn elem(&self, e: &ElementRef) -> Result<ElemRef, BindError> {
        Ok(match e {
            ElementRef::Circle(c) => ElemRef::Circle(self.circle(c)?),
            ElementRef::Segment(a, b) => ElemRef::Segment(self.point(a)?, self.point(b)?),
            ElementRef::Line(a, b) => ElemRef::Line(self.point(a)?, self.point(b)?),
        })
    }

    fn quantity(&self, q: &Quantity) -> Result<QuantityRef, BindError> {
        Ok(match q {
            Quantity::Length(a, b) => QuantityRef::Length(self.point(a)?, self.point(b)?),
            Quantity::Angle(a, b, c) => {
                QuantityRef::Angle(self.point(a)?, self.point(b)?, self.point(c)?)
            }
            Quantity::Area(ps) => QuantityRef::Area(self.points(ps)?),
            Quantity::Radius(c) => QuantityRef::Radius(self.circle(c)?),
            Quantity::Distance(p, e) => QuantityRef::Distance(self.point(p)?, self.elem(e)?),
        })
    }

    fn literal(&self, dim: Dimension, v: f64) -> f64 {
        match dim {
            Dimension::Angle => v.to_radians(),
            Dimension::Length => v / self.k,
            Dimension::Area => v / (self.k * self.k),
        }
    }

    fn names(&self, c: &ConstraintDecl) -> Result<Vec<usize>, BindError> {
        c.args
            .iter()
            .map(|a| match a {
                Arg::Name(n) => self.point(n),
                _ => Err(BindError::Malformed(c.kind.to_string())),
            })
            .collect()
    }

    fn bind(&self, c: &ConstraintDecl) -> Result<TermForm, BindError> {
        let bad = || BindError::Malformed(c.kind.to_string());
        Ok(match c.kind {
            ConstraintKind::Equal | ConstraintKind::Less => {
                fn q<'a>(a: &'a Arg, kind: ConstraintKind) -> Result<&'a Quantity, BindError> {
                    match a {
                        Arg::Quantity(q) => Ok(q),
                        _ => Err(BindError::Malformed(kind.to_string())),
                    }
                }
                let lhs = q(c.args.first().ok_or_else(bad)?, c.kind)?;
                let rhs = match (c.args.get(1), c.value) {
                    (Some(a), None) => Rhs::Quantity(self.quantity(q(a, c.kind)?)?),
                    (None, Some(v)) => Rhs::Literal(self.literal(lhs.dimension(), v)),
                    _ => return Err(bad()),
                };
                let lhs = self.quantity(lhs)?;
                if c.kind == ConstraintKind::Equal {
                    TermForm::Equal(lhs, rhs)
                } else {
                    TermForm::Less(lhs, rhs)
                }
            }
            ConstraintKind::Angle => {
                let p = self.names(c)?;
                let pts: [usize; 3] = p.try_into().map_err(|_| bad())?;
                TermForm::Angle(pts, c.value.ok_or_else(bad)?.to_radians())
            }
            ConstraintKind::Area => {
                let p = self.names(c)?;
                if p.len() < 3 {
                    return Err(bad());
                }
                TermForm::Area(p, self.literal(Dimension::Area, c.value.ok_or_else(bad)?))
            }
            ConstraintKind::Parallel | ConstraintKind::Perpendicular => {
                let p: [usize; 4] = self.names(c)?.try_into().map_err(|_| bad())?;
                if c.kind == ConstraintKind::Parallel {
                    TermForm::Parallel(p)
                } else {
                    TermForm::Perpendicular(p)
                }
            }
            ConstraintKind::Order | ConstraintKind::Convex => {
                let p = self.names(c)?;
                if p.len() < 3 {
                    return Err(bad());
                }
                if c.kind == ConstraintKind::Order {
                    TermForm::Order(p)
                } else {
                    TermForm::Convex(p)
                }
            }
            ConstraintKind::Inside => {
                let p = self.names(c)?;
                if p.len() < 4 {
                    return Err(bad());
                }
                TermForm::Inside(p[0], p[1..].to_vec())
            }
            ConstraintKind::Crowd => TermForm::Crowd(
                self.names(c)?,
                c.value.unwrap_or(DEFAULT_CROWD_TAU),
            ),
            ConstraintKind::On => {
                let p = match c.args.first() {
                    Some(Arg::Name(n)) => self.point(n)?,
                    _ => return Err(bad()),
                };
                let e = match c.args.get(1) {
                    Some(Arg::Name(n)) => ElemRef::Circle(self.circle(n)?),
                    Some(Arg::Segment(a, b)) => ElemRef::Segment(self.point(a)?, self.point(b)?),
                    Some(Arg::Line(a, b)) => ElemRef::Line(self.point(a)?, self.point(b)?),
                    _ => return Err(bad()),
                };
                TermForm::On(p, e)
            }
        })
    }
}

/// Binds every constraint of `spec` to `cfg`. Unless the scene declares its
/// own `crowd` constraint, a crowd term over all declared points is appended
/// when `crowd.enabled`.
pub fn bind_terms(
    spec: &SceneSpec,
    cfg: &Configuration,
    crowd: CrowdPolicy,
) -> Result<Vec<ConstraintTerm>, BindError> {
    let binder = Binder {
        cfg,
        k: spec.scale_factor(),
    };
    let mut terms = Vec::with_capacity(spec.constraints.len() + 1);
    for c in &spec.constraints {
        if c.kind == ConstraintKind::Crowd && !crowd.enabled {
            continue;
        }
        terms.push(ConstraintTerm {
            id: terms.len(),
            decl: c.clone(),
            form: binder.bind(c)?,
        });
    }
    let explicit = spec
        .constraints
        .iter()
        .any(|c| c.kind == ConstraintKind::Crowd);
    if crowd.enabled && !explicit && cfg.points.len() >= 2 {
        let names = cfg
            .points
            .iter()
            .map(|p| Arg::Name(p.name.clone()))
            .collect();
        terms.push(ConstraintTerm {
            id: terms.len(),
            decl: ConstraintDecl::new(ConstraintKind::Crowd, names, Some(crowd.tau)),
            form: TermForm::Crowd((0..cfg.points.len()).collect(), crowd.tau),
        });
    }
    Ok(terms)
}

fn target<T: Scalar>(geo: &Resolved<T>, e: &ElemRef) -> Target<T> {
    match *e {
        ElemRef::Segment(a, b) => Target::Segment(geo.points[a], geo.points[b]),
        ElemRef::Line(a, b) => Target::Line(geo.points[a], geo.points[b]),
        ElemRef::Circle(c) => Target::Circle(geo.circles[c].0, geo.circles[c].1),
    }
}

fn gather<T: Scalar>(geo: &Resolved<T>, idx: &[usize]) -> Vec<V2<T>> {
    idx.iter().map(|&i| geo.points[i]).collect()
}

/// Value of a bound quantity (field units or radians).
pub fn quantity_value<T: Scalar>(q: &QuantityRef, geo: &Resolved<T>, deg: &mut Degeneracies) -> T {
    let p = &geo.points;
    match q {
        QuantityRef::Length(a, b) => p[*a].sub(p[*b]).norm(),
        QuantityRef::Angle(a, b, c) => angle_at(p[*a], p[*b], p[*c], deg),
        QuantityRef::Area(idx) => shoelace(&gather(geo, idx)).abs(),
        QuantityRef::Radius(c) => geo.circles[*c].1,
        QuantityRef::Distance(pt, e) => element_distance(p[*pt], target(geo, e), deg),
    }
}

fn rhs_diff<T: Scalar>(lhs: T, rhs: &Rhs, geo: &Resolved<T>, deg: &mut Degeneracies) -> T {
    match rhs {
        Rhs::Quantity(q) => lhs - quantity_value(q, geo, deg),
        Rhs::Literal(v) => lhs - *v,
    }
}

/// Unweighted loss of one term; `None` for a crowd term with no active pair.
pub fn term_loss<T: Scalar>(form: &TermForm, geo: &Resolved<T>, deg: &mut Degeneracies) -> Option<T> {
    let p = &geo.points;
    Some(match form {
        TermForm::Equal(q, rhs) => {
            let lhs = quantity_value(q, geo, deg);
            rhs_diff(lhs, rhs, geo, deg).square()
        }
        TermForm::Less(q, rhs) => {
            let lhs = quantity_value(q, geo, deg);
            rhs_diff(lhs, rhs, geo, deg).relu().square()
        }
        TermForm::Angle([a, b, c], theta) => loss_angle(p[*a], p[*b], p[*c], *theta, deg),
        TermForm::Area(idx, target) => loss_area(&gather(geo, idx), *target),
        TermForm::Parallel([a, b, c, d]) => loss_parallel(p[*a], p[*b], p[*c], p[*d], deg),
        TermForm::Perpendicular([a, b, c, d]) => {
            loss_perpendicular(p[*a], p[*b], p[*c], p[*d], deg)
        }
        TermForm::Order(idx) => loss_order(&gather(geo, idx)),
        TermForm::Convex(idx) => loss_convex(&gather(geo, idx)),
        TermForm::On(pt, e) => loss_on(p[*pt], target(geo, e), deg),
        TermForm::Inside(pt, poly) => loss_inside(p[*pt], &gather(geo, poly)),
        TermForm::Crowd(idx, tau) => return crowd_hinges(&gather(geo, idx), *tau),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermValue {
    pub id: usize,
    pub kind: ConstraintKind,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// `sum weight_i * value_i`
    pub total: f64,
    /// Unweighted per-term values.
    pub per_term: Vec<TermValue>,
    /// d total / d params; empty when only values were requested.
    pub gradient: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Loss values from the stored coordinates, without derivatives.
pub fn loss_values(cfg: &Configuration, terms: &[ConstraintTerm]) -> LossReport {
    let geo = cfg.resolve_f64();
    let mut deg = Degeneracies::default();
    let mut total = 0.0;
    let mut per_term = Vec::with_capacity(terms.len());
    for t in terms {
        let v = term_loss(&t.form, &geo, &mut deg).unwrap_or(0.0);
        total += t.weight() * v;
        per_term.push(TermValue {
            id: t.id,
            kind: t.kind(),
            value: v,
        });
    }
    LossReport {
        total,
        per_term,
        gradient: Vec::new(),
        warnings: deg.0,
    }
}

/// Reusable evaluator for the loss and its exact gradient.
pub struct LossEvaluator {
    tape: Tape,
}

impl Default for LossEvaluator {
    fn default() -> Self {
        Self::new()
    }
}

impl LossEvaluator {
    pub fn new() -> Self {
        Self {
            tape: Tape::with_capacity(1024),
        }
    }

    /// Total loss at `params` (interpreted against `cfg`'s layout) and its
    /// gradient.
    pub fn evaluate(
        &mut self,
        cfg: &Configuration,
        terms: &[ConstraintTerm],
        params: &[f64],
    ) -> LossReport {
        self.tape.clear();
        let tape = &self.tape;
        let vars: Vec<Var<'_>> = params.iter().map(|&v| tape.var(v)).collect();
        let geo = cfg.resolve(&vars, |c| tape.var(c));
        let mut deg = Degeneracies::default();
        let mut per_term = Vec::with_capacity(terms.len());
        let mut total: Option<Var<'_>> = None;
        for t in terms {
            let value = term_loss(&t.form, &geo, &mut deg);
            per_term.push(TermValue {
                id: t.id,
                kind: t.kind(),
                value: value.map_or(0.0, Scalar::value),
            });
            if let Some(v) = value {
                let w = v * t.weight();
                total = Some(match total {
                    Some(acc) => acc + w,
                    None => w,
                });
            }
        }
        let (total, gradient) = match total {
            Some(t) => (t.value(), tape.gradient(t, params.len())),
            None => (0.0, vec![0.0; params.len()]),
        };
        LossReport {
            total,
            per_term,
            gradient,
            warnings: deg.0,
        }
    }
}

/// Loss and gradient at the configuration's current parameters.
pub fn total_loss(cfg: &Configuration, terms: &[ConstraintTerm]) -> LossReport {
    let params = cfg.read_params();
    LossEvaluator::new().evaluate(cfg, terms, &params.0)
}

// ---------------------------------------------------------------------------
// Finite-difference validation
// ---------------------------------------------------------------------------

/// Central finite-difference gradient of the total loss, step `h`.
pub fn finite_difference_gradient(
    cfg: &Configuration,
    terms: &[ConstraintTerm],
    h: f64,
) -> Vec<f64> {
    let base = cfg.read_params();
    let eval = |p: &ParamVector| -> f64 {
        let c = cfg.with_params(p).expect("finite parameters");
        loss_values(&c, terms).total
    };
    (0..base.0.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus.0[i] += h;
            minus.0[i] -= h;
            (eval(&plus) - eval(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `|g - fd|_inf / max(|g|_inf, |fd|_inf)`, zero when both vanish.
pub fn relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub samples: usize,
    pub max_relative_error: f64,
    pub worst_seed: u64,
}

/// Minimum pairwise point separation, used to skip near-degenerate samples.
fn min_separation(cfg: &Configuration) -> f64 {
    let pos = cfg.all_positions();
    let mut best = f64::INFINITY;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            best = best.min((pos[i][0] - pos[j][0]).hypot(pos[i][1] - pos[j][1]));
        }
    }
    best
}

/// Compares `analytic` against central differences (`h = 1e-5`) on
/// `samples` random configurations of `spec`. Layouts with two points closer
/// than `0.05` are redrawn.
pub fn check_gradients_with<F>(
    spec: &SceneSpec,
    crowd: CrowdPolicy,
    samples: usize,
    seed: u64,
    mut analytic: F,
) -> Result<GradientCheck, BindError>
where
    F: FnMut(&Configuration, &[ConstraintTerm]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradientCheck {
        samples,
        max_relative_error: 0.0,
        worst_seed: seed,
    };
    let mut done = 0;
    while done < samples {
        let s: u64 = rng.random();
        let cfg = build_scene(spec, s);
        if min_separation(&cfg) < 0.05 {
            continue;
        }
        let terms = bind_terms(spec, &cfg, crowd)?;
        let g = analytic(&cfg, &terms);
        let fd = finite_difference_gradient(&cfg, &terms, 1e-5);
        let e = relative_gradient_error(&g, &fd);
        if e > worst.max_relative_error || e.is_nan() {
            worst.max_relative_error = e;
            worst.worst_seed = s;
        }
        done += 1;
    }
    Ok(worst)
}

pub fn check_gradients(
    spec: &SceneSpec,
    crowd: CrowdPolicy,
    samples: usize,
    seed: u64,
) -> Result<GradientCheck, BindError> {
    let mut ev = LossEvaluator::new();
    check_gradients_with(spec, crowd, samples, seed, |cfg, terms| {
        ev.evaluate(cfg, terms, &cfg.read_params().0).gradient
    })
}

/// Angle helper in degrees for callers at the scene-language boundary.
pub fn degrees(rad: f64) -> f64 {
    rad * 180.0 / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: f64, y: f64) -> V2<f64> {
        V2::new(x, y)
    }

    fn square() -> Vec<V2<f64>> {
        vec![v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)]
    }

    fn nd() -> Degeneracies {
        Degeneracies::default()
    }

    fn fd1(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, h: f64) -> (f64, f64) {
        (
            (f(a + h, b) - f(a - h, b)) / (2.0 * h),
            (f(a, b + h) - f(a, b - h)) / (2.0 * h),
        )
    }

    #[test]
    fn equal_and_less_values() {
        assert_eq!(loss_equal(3.0, 3.0), 0.0);
        assert_eq!(loss_equal(5.0, 2.0), 9.0);
        assert_eq!(loss_less(1.0, 2.0), 0.0);
        assert_eq!(loss_less(4.0, 1.0), 9.0);
    }

    #[test]
    fn equal_and_less_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            for which in 0..2 {
                let f = |x: f64, y: f64| if which == 0 { loss_equal(x, y) } else { loss_less(x, y) };
                let tape = Tape::new();
                let (x, y) = (tape.var(a), tape.var(b));
                let out = if which == 0 { loss_equal(x, y) } else { loss_less(x, y) };
                let g = tape.gradient(out, 2);
                let n = fd1(f, a, b, 1e-5);
                assert!(relative_gradient_error(&g, &[n.0, n.1]) < 1e-4);
            }
        }
    }

    #[test]
    fn angle_values() {
        let h = 3f64.sqrt() / 2.0;
        let l = loss_angle(v(0.0, 0.0), v(1.0, 0.0), v(0.5, h), 60f64.to_radians(), &mut nd());
        assert!(l < 1e-24);
        let l = loss_angle(v(1.0, 0.0), v(0.0, 0.0), v(0.0, 1.0), 90f64.to_radians(), &mut nd());
        assert!(l < 1e-24);
    }

    #[test]
    fn degenerate_angle_is_guarded() {
        let mut d = nd();
        let l = loss_angle(v(0.0, 0.0), v(0.0, 0.0), v(1.0, 0.0), 1.0, &mut d);
        assert!(l.is_finite());
        assert_eq!(d.0.len(), 1);
    }

    #[test]
    fn area_values() {
        let mut s = square();
        assert_eq!(loss_area(&s, 1.0), 0.0);
        s.reverse();
        assert_eq!(loss_area(&s, 1.0), 4.0);
    }

    #[test]
    fn parallel_and_perpendicular_values() {
        let (a, b, c, d) = (v(0.0, 0.0), v(1.0, 0.0), v(0.0, 1.0), v(2.0, 1.0));
        assert_eq!(loss_parallel(a, b, c, d, &mut nd()), 0.0);
        assert_eq!(loss_perpendicular(a, b, c, d, &mut nd()), 1.0);
        let (c, d) = (v(0.0, 0.0), v(0.0, 3.0));
        assert_eq!(loss_parallel(a, b, c, d, &mut nd()), 1.0);
        assert_eq!(loss_perpendicular(a, b, c, d, &mut nd()), 0.0);
    }

    #[test]
    fn order_values() {
        let mut s = square();
        assert_eq!(loss_order(&s), 0.0);
        s.reverse();
        // every turn has cross = -1
        let want = 4.0 * (MARGIN + 1.0f64).powi(2);
        assert!((loss_order(&s) - want).abs() < 1e-12);
    }

    #[test]
    fn convex_pentagon_and_dart() {
        let pent: Vec<_> = (0..5)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 5.0;
                v(t.cos(), t.sin())
            })
            .collect();
        assert_eq!(loss_convex(&pent), 0.0);
        // Reflex vertex at (0.5, 0.3): the turn arriving there is CCW, the
        // turn leaving it is CW.
        let dart = vec![v(0.0, 0.0), v(1.0, 0.0), v(0.5, 0.3), v(0.5, 1.0)];
        let crosses = turn_crosses(&dart);
        let hinges: Vec<f64> = crosses
            .iter()
            .map(|c| (MARGIN - c).max(0.0).powi(2))
            .collect();
        assert_eq!(hinges.iter().filter(|&&h| h > 0.0).count(), 1);
        assert!((loss_convex(&dart) - hinges.iter().sum::<f64>()).abs() < 1e-15);
        // hand computed: the only negative turn is at vertex 2,
        // cross((0.5,0.3)-(1,0), (0.5,1)-(0.5,0.3)) = (-0.5)(0.7) - (0.3)(0) = -0.35
        assert!((loss_convex(&dart) - (MARGIN + 0.35f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn on_values() {
        let c = Target::Circle(v(0.0, 0.0), 1.0);
        assert!(loss_on(v(0.6, 0.8), c, &mut nd()) < 1e-30);
        assert_eq!(loss_on(v(0.0, 0.0), c, &mut nd()), 1.0);
        let s = Target::Segment(v(-1.0, 0.0), v(1.0, 0.0));
        assert_eq!(loss_on(v(3.0, 0.0), s, &mut nd()), 4.0);
        let l = Target::Line(v(-1.0, 0.0), v(1.0, 0.0));
        assert_eq!(loss_on(v(3.0, 2.0), l, &mut nd()), 4.0);
    }

    #[test]
    fn inside_values() {
        let s = square();
        assert_eq!(loss_inside(v(0.5, 0.5), &s), 0.0);
        // Only the right edge (1,0)->(1,1) is violated: cross = -(2 - 1) * 1 = -1
        let l = loss_inside(v(2.0, 0.5), &s);
        let edge = (MARGIN + 1.0f64).powi(2);
        assert!((l - edge).abs() < 1e-15);
    }

    #[test]
    fn crowd_values() {
        assert_eq!(loss_crowd(&[v(0.0, 0.0), v(0.0, 0.0)], 0.2), 0.2 * 0.2);
        assert!((loss_crowd(&[v(0.0, 0.0), v(0.0, 0.0)], 0.2) - 0.04).abs() < 1e-17);
        assert_eq!(loss_crowd(&[v(0.0, 0.0), v(0.5, 0.0)], 0.2), 0.0);
        let h = 0.1 * 3f64.sqrt() / 2.0;
        let tri = [v(0.0, 0.0), v(0.1, 0.0), v(0.05, h)];
        assert!((loss_crowd(&tri, 0.2) - 0.03).abs() < 1e-12);
    }

    const ALL_KINDS: &str = "\
point A B C D P Q
circle w center Q
circle k
constraint equal length(A,B) length(C,D)
constraint less length(A,C) length(B,D)
constraint equal angle(A,B,C) 70
constraint equal area(A,B,C) 0.5
constraint equal dist(P,seg(A,B)) radius(w)
constraint less dist(P,line(C,D)) 0.3
constraint equal dist(Q,k) 0.2
constraint angle B C D 50
constraint area A B C D 1.2
constraint parallel A B C D
constraint perpendicular A C B D
constraint order A B C D
constraint convex A B C D
constraint on P w
constraint on P seg(A,B)
constraint on Q line(C,D)
constraint on A k
constraint inside P A B C D
";

    #[test]
    fn every_kind_gradient_matches_finite_differences() {
        let spec = parse_spec(ALL_KINDS).unwrap();
        let res = check_gradients(&spec, CrowdPolicy { enabled: true, tau: 0.6 }, 100, 3).unwrap();
        assert!(res.max_relative_error < 1e-4, "{res:?}");
    }

    #[test]
    fn satisfied_configuration_has_zero_loss_and_gradient() {
        let spec = parse_spec(
            "point A B C\nfix A 0 0\nconstraint equal length(A,B) 1\nconstraint angle B A C 90\nconstraint equal length(A,C) length(A,B)",
        )
        .unwrap();
        let mut cfg = build_scene(&spec, 0);
        cfg.write_params(&ParamVector(vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let terms = bind_terms(&spec, &cfg, CrowdPolicy::default()).unwrap();
        let r = total_loss(&cfg, &terms);
        assert!(r.total < 1e-24);
        assert!(r.gradient.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn singleton_sum_equals_term() {
        let spec = parse_spec("point A B\nconstraint equal length(A,B) 2").unwrap();
        let cfg = build_scene(&spec, 8);
        let terms = bind_terms(&spec, &cfg, CrowdPolicy { enabled: false, tau: 0.2 }).unwrap();
        assert_eq!(terms.len(), 1);
        let (a, b) = (cfg.points[0].pos, cfg.points[1].pos);
        let len = (a[0] - b[0]).hypot(a[1] - b[1]);
        let r = total_loss(&cfg, &terms);
        assert!((r.total - loss_equal(len, 2.0)).abs() < 1e-12);
        assert!((loss_values(&cfg, &terms).total - r.total).abs() < 1e-12);
    }

    #[test]
    fn weights_and_scale_apply() {
        let spec = parse_spec(
            "point A B\nscale 1 4 cm\nconstraint equal length(A,B) 8 weight 3",
        )
        .unwrap();
        let mut cfg = build_scene(&spec, 8);
        cfg.points[0].pos = [0.0, 0.0];
        cfg.points[1].pos = [1.0, 0.0];
        let terms = bind_terms(&spec, &cfg, CrowdPolicy { enabled: false, tau: 0.2 }).unwrap();
        // 8 cm = 2 field units; (1 - 2)^2 * 3
        assert_eq!(loss_values(&cfg, &terms).total, 3.0);
    }

    #[test]
    fn automatic_crowd_is_appended_once() {
        let spec = parse_spec("point A B C\nconstraint order A B C").unwrap();
        let cfg = build_scene(&spec, 0);
        let t = bind_terms(&spec, &cfg, CrowdPolicy::default()).unwrap();
        assert_eq!(t.last().unwrap().kind(), ConstraintKind::Crowd);
        let t = bind_terms(&spec, &cfg, CrowdPolicy { enabled: false, tau: 0.2 }).unwrap();
        assert!(t.iter().all(|t| t.kind() != ConstraintKind::Crowd));
        let spec = parse_spec("point A B C\nconstraint order A B C\nconstraint crowd A B 0.5").unwrap();
        let t = bind_terms(&spec, &cfg, CrowdPolicy::default()).unwrap();
        assert_eq!(t.iter().filter(|t| t.kind() == ConstraintKind::Crowd).count(), 1);
        assert_eq!(t[1].form, TermForm::Crowd(vec![0, 1], 0.5));
    }

    fn transform(p: V2<f64>, rot: f64, t: (f64, f64), s: f64) -> V2<f64> {
        let (c, sn) = (rot.cos(), rot.sin());
        v(s * (c * p.x - sn * p.y) + t.0, s * (sn * p.x + c * p.y) + t.1)
    }

    proptest! {
        #[test]
        fn similarity_invariance(
            pts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 5),
            rot in 0.0..6.28f64, tx in -3.0..3.0f64, ty in -3.0..3.0f64, s in 0.2..5.0f64,
        ) {
            let p: Vec<V2<f64>> = pts.iter().map(|&(x, y)| v(x, y)).collect();
            let rigid: Vec<_> = p.iter().map(|&q| transform(q, rot, (tx, ty), 1.0)).collect();
            let sim: Vec<_> = p.iter().map(|&q| transform(q, rot, (tx, ty), s)).collect();
            let d = &mut nd();
            for (q, scaled) in [(&rigid, false), (&sim, true)] {
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
                prop_assert!(close(loss_parallel(p[0], p[1], p[2], p[3], d), loss_parallel(q[0], q[1], q[2], q[3], d)));
                prop_assert!(close(loss_perpendicular(p[0], p[1], p[2], p[3], d), loss_perpendicular(q[0], q[1], q[2], q[3], d)));
                prop_assert!(close(loss_angle(p[0], p[1], p[2], 1.0, d), loss_angle(q[0], q[1], q[2], 1.0, d)));
                if !scaled {
                    prop_assert!(close(loss_order(&p[..4]), loss_order(&q[..4])));
                    prop_assert!(close(loss_convex(&p), loss_convex(q)));
                    prop_assert!(close(loss_inside(p[4], &p[..4]), loss_inside(q[4], &q[..4])));
                }
            }
        }

        #[test]
        fn crowd_hinge_scales(pts in proptest::collection::vec((-0.1..0.1f64, -0.1..0.1f64), 4), s in 0.5..2.0f64) {
            let p: Vec<V2<f64>> = pts.iter().map(|&(x, y)| v(x, y)).collect();
            let q: Vec<V2<f64>> = p.iter().map(|a| v(a.x * s, a.y * s)).collect();
            // tau scales with the layout, so the hinge arguments scale by s
            // and the squared loss by s^2.
            let a = loss_crowd(&p, 1.0);
            let b = loss_crowd(&q, s);
            prop_assert!((b - s * s * a).abs() <= 1e-9 * (1.0 + b));
        }

        #[test]
        fn losses_are_non_negative(pts in proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 5), th in 0.0..3.1f64) {
            let p: Vec<V2<f64>> = pts.iter().map(|&(x, y)| v(x, y)).collect();
            let d = &mut nd();
            prop_assert!(loss_angle(p[0], p[1], p[2], th, d) >= 0.0);
            prop_assert!(loss_parallel(p[0], p[1], p[2], p[3], d) >= 0.0);
            prop_assert!(loss_order(&p) >= 0.0);
            prop_assert!(loss_inside(p[0], &p[1..]) >= 0.0);
            prop_assert!(loss_on(p[0], Target::Segment(p[1], p[2]), d) >= 0.0);
            prop_assert!(loss_area(&p, th) >= 0.0);
        }
    }
}
