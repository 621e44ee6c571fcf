use std::fs;
use std::path::PathBuf;

use diagram_sdf::dsl::ElementDecl;
use diagram_sdf::{
    answer_completion, batch_optimize, bind_terms, build_scene, optimize, parse_spec,
    serialize_spec, validate_spec, CrowdPolicy, OptimizerConfig, SceneSpec, Snapshot,
};

fn fixtures_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/"))
}

fn load(name: &str) -> SceneSpec {
    let text = fs::read_to_string(fixtures_dir().join(format!("{name}.geo"))).unwrap();
    parse_spec(&text).unwrap()
}

#[test]
fn every_valid_fixture_round_trips_through_text() {
    let mut seen = 0;
    for entry in fs::read_dir(fixtures_dir()).unwrap() {
        let p = entry.unwrap().path();
        let text = fs::read_to_string(&p).unwrap();
        if let Ok(spec) = parse_spec(&text) {
            let again = parse_spec(&serialize_spec(&spec)).unwrap();
            assert_eq!(spec, again, "{}", p.display());
            seen += 1;
        }
    }
    assert!(seen >= 20);
}

#[test]
fn stress_fixture_validates_cleanly() {
    let spec = load("imo-stress");
    assert_eq!(spec.elements.len(), 24);
    assert_eq!(spec.constraints.len(), 24);
    let circles = spec
        .elements
        .iter()
        .filter(|e| matches!(e, ElementDecl::Circle { .. }))
        .count();
    assert_eq!(circles, 2);
    assert!(validate_spec(&spec).is_empty());
}

#[test]
fn triangle_batch_accuracy_floor() {
    let spec = load("equilateral");
    let r = batch_optimize(&spec, 64, 0, &OptimizerConfig::default(), CrowdPolicy::default()).unwrap();
    assert!(r.accuracy >= 0.5);
}

#[test]
fn batch_matches_individual_runs() {
    let spec = load("rhombus");
    let ocfg = OptimizerConfig {
        max_steps: 2000,
        ..OptimizerConfig::default()
    };
    let r = batch_optimize(&spec, 6, 40, &ocfg, CrowdPolicy::default()).unwrap();
    for (i, run) in r.runs.iter().enumerate() {
        let cfg = build_scene(&spec, 40 + i as u64);
        let terms = bind_terms(&spec, &cfg, CrowdPolicy::default()).unwrap();
        let solo = optimize(&cfg, &terms, &ocfg);
        assert_eq!(run.seed, 40 + i as u64);
        assert_eq!(run.final_loss, solo.final_loss);
        assert_eq!(run.final_config, solo.final_config);
    }
}

#[test]
fn converged_triangle_satisfies_law_of_cosines() {
    // Sides 3, 5, 7 cm: the angle opposite the longest side is 120 degrees.
    let spec = parse_spec(
        "point A B C\nscale 0.1 1 cm\nconstraint equal length(B,C) 3\nconstraint equal length(C,A) 5\nconstraint equal length(A,B) 7\ntarget angle A C B",
    )
    .unwrap();
    let r = batch_optimize(&spec, 8, 0, &OptimizerConfig::default(), CrowdPolicy::default()).unwrap();
    let best = r.best().unwrap();
    let (a, b, c) = (3.0f64, 5.0f64, 7.0f64);
    let oracle = ((a * a + b * b - c * c) / (2.0 * a * b)).acos().to_degrees();
    let got = answer_completion(&spec, best).unwrap();
    assert!((got - oracle).abs() < 0.5, "{got} vs {oracle}");
}

#[test]
fn snapshot_survives_json() {
    let spec = load("tangent-circles");
    let r = batch_optimize(&spec, 4, 0, &OptimizerConfig::default(), CrowdPolicy::default()).unwrap();
    let best = r.best().unwrap();
    let snap = best.final_config.snapshot(Some(best.final_loss));
    let json = serde_json::to_string(&snap).unwrap();
    let back: Snapshot = serde_json::from_str(&json).unwrap();
    assert_eq!(snap, back);
    let mut cfg = build_scene(&spec, 999);
    cfg.apply_snapshot(&back).unwrap();
    assert_eq!(cfg.snapshot(Some(best.final_loss)), snap);
}
