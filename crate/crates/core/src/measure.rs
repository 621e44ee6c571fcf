//! Reading quantities off an optimized configuration and answering with
//! them.

use serde::Serialize;
use thiserror::Error;

use crate::dsl::{SceneSpec, TargetDecl, TargetKind};
use crate::geom::{shoelace, V2, EPS};
use crate::optimizer::OptimizeResult;
use crate::scene::Configuration;

/// Angle tolerance in degrees used when `expect` gives none.
pub const DEFAULT_ANGLE_TOL: f64 = 0.5;
/// Relative tolerance for lengths, areas and radii when `expect` gives none.
pub const DEFAULT_RELATIVE_TOL: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("unknown element {0}")]
    UnknownName(String),
    #[error("angle arm at {0} has zero length")]
    DegenerateAngle(String),
    #[error("wrong number of arguments for {0}")]
    Arity(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum AnswerError {
    #[error("optimization did not converge")]
    NotConverged,
    #[error("scene declares no target")]
    NoTarget,
    #[error("scene declares {0} targets; completion needs exactly one")]
    AmbiguousTarget(usize),
    #[error("scene declares no expected value")]
    NoExpectation,
    #[error("need at least two choices")]
    TooFewChoices,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measurement {
    pub kind: TargetKind,
    pub args: Vec<String>,
    /// Degrees, problem units or problem units squared.
    pub value: f64,
    /// Raw field value before scaling (angles in degrees as well).
    pub field_value: f64,
}

fn point(cfg: &Configuration, name: &str) -> Result<V2<f64>, MeasureError> {
    cfg.point(name)
        .map(V2::from_array)
        .ok_or_else(|| MeasureError::UnknownName(name.to_string()))
}

/// Angle `abc` in degrees, in `[0, 180]`.
pub fn measure_angle(cfg: &Configuration, a: &str, b: &str, c: &str) -> Result<f64, MeasureError> {
    let (pa, pb, pc) = (point(cfg, a)?, point(cfg, b)?, point(cfg, c)?);
    let u = pa.sub(pb);
    let v = pc.sub(pb);
    if u.norm() <= EPS || v.norm() <= EPS {
        return Err(MeasureError::DegenerateAngle(b.to_string()));
    }
    Ok(u.cross(v).abs().atan2(u.dot(v)).to_degrees())
}

/// `|ab|` times the scale factor.
pub fn measure_length(cfg: &Configuration, a: &str, b: &str, scale: f64) -> Result<f64, MeasureError> {
    Ok(point(cfg, a)?.sub(point(cfg, b)?).norm() * scale)
}

/// Unsigned polygon area times the squared scale factor.
pub fn measure_area(cfg: &Configuration, polygon: &[String], scale: f64) -> Result<f64, MeasureError> {
    if polygon.len() < 3 {
        return Err(MeasureError::Arity("area"));
    }
    let pts = polygon
        .iter()
        .map(|n| point(cfg, n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(shoelace(&pts).abs() * scale * scale)
}

pub fn measure_radius(cfg: &Configuration, circle: &str, scale: f64) -> Result<f64, MeasureError> {
    let i = cfg
        .circle_index(circle)
        .ok_or_else(|| MeasureError::UnknownName(circle.to_string()))?;
    Ok(cfg.circles[i].radius * scale)
}

pub fn measure_target(
    spec: &SceneSpec,
    cfg: &Configuration,
    target: &TargetDecl,
) -> Result<Measurement, MeasureError> {
    let a = &target.args;
    let (field_value, factor) = match target.kind {
        TargetKind::Angle => {
            if a.len() != 3 {
                return Err(MeasureError::Arity("angle"));
            }
            (measure_angle(cfg, &a[0], &a[1], &a[2])?, 1.0)
        }
        TargetKind::Length => {
            if a.len() != 2 {
                return Err(MeasureError::Arity("length"));
            }
            (measure_length(cfg, &a[0], &a[1], 1.0)?, spec.scale_factor())
        }
        TargetKind::Area => (measure_area(cfg, a, 1.0)?, spec.scale_factor().powi(2)),
        TargetKind::Radius => {
            if a.len() != 1 {
                return Err(MeasureError::Arity("radius"));
            }
            (measure_radius(cfg, &a[0], 1.0)?, spec.scale_factor())
        }
    };
    Ok(Measurement {
        kind: target.kind,
        args: a.clone(),
        value: field_value * factor,
        field_value,
    })
}

/// Every declared target measured on `cfg`.
pub fn measure_all(spec: &SceneSpec, cfg: &Configuration) -> Result<Vec<Measurement>, MeasureError> {
    spec.targets
        .iter()
        .map(|t| measure_target(spec, cfg, t))
        .collect()
}

fn single_target(spec: &SceneSpec) -> Result<&TargetDecl, AnswerError> {
    match spec.targets.as_slice() {
        [] => Err(AnswerError::NoTarget),
        [t] => Ok(t),
        many => Err(AnswerError::AmbiguousTarget(many.len())),
    }
}

/// The measured value of the scene's only target.
pub fn answer_completion(spec: &SceneSpec, result: &OptimizeResult) -> Result<f64, AnswerError> {
    if !result.converged {
        return Err(AnswerError::NotConverged);
    }
    let t = single_target(spec)?;
    Ok(measure_target(spec, &result.final_config, t)?.value)
}

/// Index of the choice nearest to `value`; ties go to the lower index.
pub fn answer_choice(value: f64, choices: &[f64]) -> Result<usize, AnswerError> {
    if choices.len() < 2 {
        return Err(AnswerError::TooFewChoices);
    }
    let mut best = 0;
    for (i, c) in choices.iter().enumerate().skip(1) {
        if (value - c).abs() < (value - choices[best]).abs() {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub loss_pass: bool,
    pub target_pass: bool,
    pub pass: bool,
    pub final_loss: f64,
    pub measured: Measurement,
    pub expected: f64,
    pub tolerance: f64,
}

pub fn default_tolerance(kind: TargetKind, expected: f64) -> f64 {
    match kind {
        TargetKind::Angle => DEFAULT_ANGLE_TOL,
        _ => DEFAULT_RELATIVE_TOL * expected.abs(),
    }
}

/// Checks the loss against `success_threshold` and the measured target
/// against the scene's `expect` line.
pub fn verify(
    spec: &SceneSpec,
    result: &OptimizeResult,
    success_threshold: f64,
) -> Result<VerificationReport, AnswerError> {
    let expect = spec.expected.as_ref().ok_or(AnswerError::NoExpectation)?;
    let t = single_target(spec)?;
    let measured = measure_target(spec, &result.final_config, t)?;
    let tolerance = expect
        .tol
        .unwrap_or_else(|| default_tolerance(t.kind, expect.value));
    let loss_pass = result.final_loss < success_threshold;
    let target_pass = (measured.value - expect.value).abs() <= tolerance;
    Ok(VerificationReport {
        loss_pass,
        target_pass,
        pass: loss_pass && target_pass,
        final_loss: result.final_loss,
        measured,
        expected: expect.value,
        tolerance,
    })
}
