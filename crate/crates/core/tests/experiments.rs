use std::path::Path;

use dlcz_core::experiment::{
    chsh_experiment, classify_interval, delay_choice_sweep, fringe_experiment, run_trials, DetectionOrder, Engine,
    ExperimentConfig, IntervalKind, PhotonLabel, Report, SpaceTimeEvent, VerifyBasis,
};

fn shipped() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn shipped_config_round_trips() {
    let cfg = shipped();
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg.sha256(), again.sha256());
    assert!(cfg.noise.memory_lifetime_ns.is_infinite());
}

#[test]
fn calibrated_mode_probabilities_at_ten_million_trials() {
    let mut cfg = shipped();
    cfg.trials = 10_000_000;
    let run = run_trials(&cfg, Engine::Sampling, VerifyBasis::Modes, false).unwrap();
    let c = run.counts.unwrap();
    // D1-heralded rows; columns are [none, L only, R only, both]
    let row = |v: usize| (c.table[1][v] + c.table[3][v]) as f64;
    let heralds = (0..4).map(row).sum::<f64>();
    for (col, target) in [(1, 3.5e-3), (2, 3.1e-3)] {
        let sigma = (heralds * target * (1.0 - target)).sqrt();
        let z = (row(col) - heralds * target) / sigma;
        assert!(z.abs() < 3.0, "column {col}: {} of {heralds} heralds, z = {z:.2}", row(col));
    }
}

#[test]
fn doubling_trials_shrinks_visibility_error_by_root_two() {
    let mut cfg = shipped();
    cfg.fringe.trials_per_point = 2_000_000;
    let small = fringe_experiment(&cfg, Engine::Sampling).unwrap().fit.plus.visibility_err;
    cfg.fringe.trials_per_point = 4_000_000;
    let large = fringe_experiment(&cfg, Engine::Sampling).unwrap().fit.plus.visibility_err;
    let ratio = small / large;
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.15, "ratio {ratio}");
}

#[test]
fn reports_are_deterministic_per_seed() {
    let mut cfg = shipped();
    cfg.chsh.pairs_per_setting = 500;
    let json = |cfg: &ExperimentConfig| {
        let r = chsh_experiment(cfg, Engine::Sampling).unwrap();
        Report::new("chsh", cfg, Engine::Sampling, r).to_json().unwrap()
    };
    let first = json(&cfg);
    assert_eq!(first, json(&cfg));
    cfg.seed += 1;
    assert_ne!(first, json(&cfg));
}

#[test]
fn delayed_stokes_detection_is_timelike_on_the_table() {
    let s = SpaceTimeEvent::new(PhotonLabel::S, 160.0, 0.0).unwrap();
    let a = SpaceTimeEvent::new(PhotonLabel::AS, 0.0, 0.30).unwrap();
    let class = classify_interval(&s, &a, 2.0);
    assert_eq!(class.kind, IntervalKind::Timelike);
    let ct = 0.299792458 * 160.0;
    assert!((class.invariant_m2 - (ct * ct - 0.09)).abs() < 1e-9);
    assert_eq!(DetectionOrder::of(&s, &a, 2.0), DetectionOrder::AntiStokesFirst);
}

#[test]
fn flat_delay_sweep_matches_reported_averages() {
    let cfg = shipped();
    let r = delay_choice_sweep(&cfg, Engine::Exact).unwrap();
    let orders: Vec<_> = r.points.iter().map(|p| p.order).collect();
    assert!(orders.contains(&DetectionOrder::AntiStokesFirst));
    assert!(orders.contains(&DetectionOrder::Simultaneous));
    assert!(orders.contains(&DetectionOrder::StokesFirst));
    for p in &r.points {
        assert!((p.visibility - 0.875).abs() <= 0.04, "{p:?}");
    }
    assert!((r.mean_concurrence - 4.35e-3).abs() <= 0.36e-3, "{}", r.mean_concurrence);
    assert!(r.max_visibility_deviation < 1e-6);
}
