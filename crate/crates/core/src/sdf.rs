//! Distance fields of the drawable elements and their composition into a
//! single scene field.

use thiserror::Error;

use crate::geom::{V2, EPS};
use crate::scene::Configuration;

#[derive(Debug, Error, PartialEq)]
pub enum SdfError {
    #[error("line through two coincident points")]
    DegenerateLine,
    #[error("scene has no drawable element")]
    EmptyScene,
}

type P = [f64; 2];

pub fn sdf_point(x: P, p: P) -> f64 {
    (x[0] - p[0]).hypot(x[1] - p[1])
}

/// Distance to the closed segment `ab`; falls back to [`sdf_point`] when
/// `a == b`.
pub fn sdf_segment(x: P, a: P, b: P) -> f64 {
    let (x, a, b) = (V2::from_array(x), V2::from_array(a), V2::from_array(b));
    let ab = b.sub(a);
    let len2 = ab.norm2();
    if len2 <= EPS * EPS {
        return sdf_point(x.values(), a.values());
    }
    let t = (x.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    let foot = a.add(ab.scale(t));
    sdf_point(x.values(), foot.values())
}

pub fn sdf_line(x: P, a: P, b: P) -> Result<f64, SdfError> {
    let (x, a, b) = (V2::from_array(x), V2::from_array(a), V2::from_array(b));
    let ab = b.sub(a);
    let len = ab.norm();
    if len <= EPS {
        return Err(SdfError::DegenerateLine);
    }
    Ok(ab.cross(x.sub(a)).abs() / len)
}

/// Negative inside, zero on the circle, positive outside.
pub fn sdf_circle(x: P, c: P, r: f64) -> f64 {
    sdf_point(x, c) - r
}

/// Scene field: the minimum over every element's distance. Circles enter as
/// `|sdf_circle|` so that only their outline is drawn; points are discs of
/// radius `point_radius` clamped at zero inside.
pub fn sdf_scene(x: P, cfg: &Configuration, point_radius: f64) -> Result<f64, SdfError> {
    let mut best = f64::INFINITY;
    for p in &cfg.points {
        best = best.min((sdf_point(x, p.pos) - point_radius).max(0.0));
    }
    for &(i, j) in &cfg.segments {
        best = best.min(sdf_segment(x, cfg.points[i].pos, cfg.points[j].pos));
    }
    for &(i, j) in &cfg.lines {
        let (a, b) = (cfg.points[i].pos, cfg.points[j].pos);
        // A collapsed line has no direction; draw what is left of it as a point.
        let d = sdf_line(x, a, b).unwrap_or_else(|_| sdf_point(x, a));
        best = best.min(d);
    }
    for ci in 0..cfg.circles.len() {
        let d = sdf_circle(x, cfg.circle_center(ci), cfg.circles[ci].radius).abs();
        best = best.min(d);
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(SdfError::EmptyScene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;
    use crate::scene::build_scene;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_cases() {
        assert_eq!(sdf_point([0.0, 0.0], [0.0, 0.0]), 0.0);
        assert_eq!(sdf_point([3.0, 4.0], [0.0, 0.0]), 5.0);
    }

    #[test]
    fn segment_cases() {
        assert_eq!(sdf_segment([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(sdf_segment([2.0, 0.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(sdf_segment([1.0, 2.0], [1.0, 1.0], [1.0, 1.0]), 1.0);
    }

    #[test]
    fn segment_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = || [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        for _ in 0..100 {
            let (x, a, b) = (r(), r(), r());
            let n = 100_000;
            let best = (0..=n)
                .map(|k| {
                    let t = k as f64 / n as f64;
                    sdf_point(x, [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
                })
                .fold(f64::INFINITY, f64::min);
            assert!((sdf_segment(x, a, b) - best).abs() < 1e-3);
        }
    }

    #[test]
    fn segment_matches_dense_sampling_many() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut r = || [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        for _ in 0..10_000 {
            let (x, a, b) = (r(), r(), r());
            let got = sdf_segment(x, a, b);
            let n = 2_000;
            let best = (0..=n)
                .map(|k| {
                    let t = k as f64 / n as f64;
                    sdf_point(x, [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
                })
                .fold(f64::INFINITY, f64::min);
            let spacing = sdf_point(a, b) / n as f64;
            assert!(got <= best + 1e-12);
            assert!(best - got <= spacing / 2.0 + 1e-12);
        }
    }

    #[test]
    fn line_cases() {
        assert_eq!(sdf_line([0.0, 5.0], [0.0, 0.0], [1.0, 0.0]), Ok(5.0));
        assert!(sdf_line([2.0, 2.0], [0.0, 0.0], [1.0, 1.0]).unwrap().abs() < 1e-15);
        assert_eq!(
            sdf_line([0.0, 0.0], [1.0, 1.0], [1.0, 1.0]),
            Err(SdfError::DegenerateLine)
        );
    }

    #[test]
    fn line_matches_projection_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut r = || [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        for _ in 0..1000 {
            let (x, a, b) = (r(), r(), r());
            let d = [b[0] - a[0], b[1] - a[1]];
            let t = ((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
            let foot = [a[0] + t * d[0], a[1] + t * d[1]];
            let want = sdf_point(x, foot);
            assert!((sdf_line(x, a, b).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_cases() {
        assert_eq!(sdf_circle([2.0, 0.0], [0.0, 0.0], 1.0), 1.0);
        assert_eq!(sdf_circle([0.0, 0.0], [0.0, 0.0], 1.0), -1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(sdf_circle([s, s], [0.0, 0.0], 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_is_an_error() {
        let spec = parse_spec("").unwrap();
        let cfg = build_scene(&spec, 0);
        assert_eq!(sdf_scene([0.0, 0.0], &cfg, 0.0), Err(SdfError::EmptyScene));
    }

    #[test]
    fn single_segment_scene() {
        let spec = parse_spec("point A B\nsegment A B\nconstraint equal length(A,B) 1").unwrap();
        let cfg = build_scene(&spec, 4);
        let (a, b) = (cfg.points[0].pos, cfg.points[1].pos);
        for &x in &[[0.3, 0.2], [1.5, -0.7], [-2.0, 2.0]] {
            let want = sdf_segment(x, a, b)
                .min((sdf_point(x, a)).max(0.0))
                .min(sdf_point(x, b).max(0.0));
            assert_eq!(sdf_scene(x, &cfg, 0.0).unwrap(), want);
            assert_eq!(sdf_scene(x, &cfg, 0.0).unwrap(), sdf_segment(x, a, b));
        }
    }

    #[test]
    fn point_on_circle_is_zero() {
        let spec = parse_spec("circle u\ncircle v\nconstraint equal radius(u) radius(v)").unwrap();
        let mut cfg = build_scene(&spec, 4);
        if let crate::scene::CircleCenter::Own { pos, .. } = &mut cfg.circles[0].center {
            *pos = [0.0, 0.0];
        }
        if let crate::scene::CircleCenter::Own { pos, .. } = &mut cfg.circles[1].center {
            *pos = [5.0, 0.0];
        }
        cfg.circles[0].radius = 1.0;
        cfg.circles[1].radius = 1.0;
        assert_eq!(sdf_scene([1.0, 0.0], &cfg, 0.0).unwrap(), 0.0);
    }

    fn arb_p() -> impl Strategy<Value = [f64; 2]> {
        [-5.0..5.0f64, -5.0..5.0f64]
    }

    proptest! {
        #[test]
        fn lipschitz(x in arb_p(), y in arb_p(), a in arb_p(), b in arb_p(), r in 0.1..3.0f64) {
            let d = sdf_point(x, y) + 1e-12;
            prop_assert!((sdf_point(x, a) - sdf_point(y, a)).abs() <= d);
            prop_assert!((sdf_segment(x, a, b) - sdf_segment(y, a, b)).abs() <= d);
            prop_assert!((sdf_circle(x, a, r) - sdf_circle(y, a, r)).abs() <= d);
            if sdf_point(a, b) > 1e-3 {
                prop_assert!((sdf_line(x, a, b).unwrap() - sdf_line(y, a, b).unwrap()).abs() <= d);
            }
        }

        #[test]
        fn translation_equivariant(x in arb_p(), a in arb_p(), b in arb_p(), t in arb_p()) {
            let sh = |p: [f64; 2]| [p[0] + t[0], p[1] + t[1]];
            prop_assert!((sdf_segment(x, a, b) - sdf_segment(sh(x), sh(a), sh(b))).abs() < 1e-12);
            prop_assert!((sdf_circle(x, a, 1.0) - sdf_circle(sh(x), sh(a), 1.0)).abs() < 1e-12);
            if sdf_point(a, b) > 1e-3 {
                prop_assert!((sdf_line(x, a, b).unwrap() - sdf_line(sh(x), sh(a), sh(b)).unwrap()).abs() < 1e-9);
            }
        }
    }
}
