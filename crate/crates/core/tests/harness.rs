use std::path::PathBuf;

use modsel_core::harness::report::eviction;
use modsel_core::harness::{
    detection_report, mean_curve, run_scenario, Eviction, RegretTrace, Scenario,
};
use modsel_core::Algorithm;
use serde_json::json;

fn nested() -> Scenario {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/nested_tabular.json");
    Scenario::load(
        &path,
        &["run.horizon=20000".into(), "run.seeds=[1,2,3,4,5,6]".into()],
    )
    .unwrap()
}

fn traces(s: &Scenario) -> Vec<RegretTrace> {
    run_scenario(s)
        .into_iter()
        .map(|(_, r)| RegretTrace::from_log(&r.unwrap()).unwrap())
        .collect()
}

#[test]
fn uniform_baseline_matches_closed_form() {
    let s = Scenario::from_value(json!({
        "name": "uniform",
        "environment": {
            "context_weights": [1.0],
            "num_arms": 3,
            "true_model": [[0.8, 0.3, 0.3]],
            "noise": {"kind": "gaussian", "sigma": 0.1}
        },
        "classes": [{"kind": "tabular", "partition": "full"}],
        "algorithm": {"kind": "uniform-random"},
        "run": {"horizon": 3000, "seeds": (1..=30).collect::<Vec<u64>>()}
    }))
    .unwrap();
    let p = mean_curve(&traces(&s), &[3000]).unwrap()[0];
    // gap 0.5 on two of three arms
    let expected = 0.5 * 3000.0 * 2.0 / 3.0;
    assert!(
        (p.mean - expected).abs() <= 3.0 * p.stderr,
        "{p:?} vs {expected}"
    );
}

#[test]
fn single_class_mod_igw_equals_fixed_class() {
    let mut base = nested();
    base.run.horizon = 5000;
    let mut single = base.clone();
    single.classes = vec![base.classes[2].clone()];
    let mut fixed = base.clone();
    fixed.algorithm = Algorithm::FixedClassIgw { class: 2 };
    let a: Vec<_> = run_scenario(&single)
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    let b: Vec<_> = run_scenario(&fixed)
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    assert_eq!(a, b);
    let report = detection_report(&a, 1);
    assert_eq!(report.classes.len(), 1);
    assert!(report.class(0).seeds.iter().all(|s| s.m_hat.is_none()));
    assert_eq!(report.class(0).median_eviction_round, None);
}

#[test]
fn realizable_classes_survive_and_misspecified_one_is_evicted() {
    let s = nested();
    let logs: Vec<_> = run_scenario(&s)
        .into_iter()
        .map(|(_, r)| r.unwrap())
        .collect();
    let report = detection_report(&logs, 4);
    assert_eq!(report.class(0).evicted, logs.len());
    for i in 1..4 {
        assert_eq!(report.class(i).evicted, 0, "class {i}");
    }
    let hist_total: usize = report.class(0).histogram.iter().map(|h| h.1).sum();
    assert_eq!(hist_total, logs.len());
    let text = serde_json::to_string(&report).unwrap();
    assert!(text.contains("\"inf\""));
}

#[test]
fn mod_igw_beats_uniform() {
    let s = nested();
    let mut u = s.clone();
    u.algorithm = Algorithm::UniformRandom;
    let t = s.run.horizon;
    let m = mean_curve(&traces(&s), &[t]).unwrap()[0];
    let b = mean_curve(&traces(&u), &[t]).unwrap()[0];
    assert!(m.mean + m.stderr < b.mean - b.stderr, "{m:?} vs {b:?}");
}

fn context_only(kappa: f64) -> Scenario {
    let half = (kappa / 0.25f64).sqrt() / 2.0;
    Scenario::from_value(json!({
        "name": format!("kappa-{kappa}"),
        "environment": {
            "context_weights": [0.5, 0.5],
            "num_arms": 2,
            "true_model": [[0.5 - half, 0.5 - half], [0.5 + half, 0.5 + half]],
            "noise": {"kind": "bernoulli"}
        },
        "classes": [
            {"kind": "tabular", "partition": "constant"},
            {"kind": "tabular", "partition": "full"}
        ],
        "algorithm": {"kind": "mod-igw"},
        "run": {"horizon": 20000, "seeds": (1..=20).collect::<Vec<u64>>(), "tau1": 50, "c1": 3e-4}
    }))
    .unwrap()
}

#[test]
fn stronger_misspecification_is_not_detected_later() {
    let median = |kappa: f64| {
        let logs: Vec<_> = run_scenario(&context_only(kappa))
            .into_iter()
            .map(|(_, r)| r.unwrap())
            .collect();
        let mut rounds: Vec<Eviction> = logs.iter().map(|l| eviction(l, 0)).collect();
        rounds.sort();
        rounds[rounds.len() / 2]
            .round()
            .expect("median seed evicts")
    };
    let (lo, hi) = (median(0.125), median(0.25));
    assert!(hi <= lo, "kappa 0.25: {hi}, kappa 0.125: {lo}");
}
