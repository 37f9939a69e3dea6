use fedvlp::config::RunConfig;
use fedvlp::environment::{ScenarioKind, ScenarioSpec};
use fedvlp::exec::Executor;
use fedvlp::experiment::{
    evaluate_checkpoint, gen_data, plot, prepare_out_dir, scenario_sweep, train, Context, Manifest,
    FINAL_CHECKPOINT, ROUNDS_FILE,
};
use fedvlp::metrics::read_rounds_csv;
use fedvlp::nn::{Architecture, CvposnetConfig, MlpConfig, ModelWeights};
use fedvlp::sensing::read_dataset_csv;
use fedvlp::Error;

fn tiny() -> RunConfig {
    let mut c = RunConfig::default();
    c.set_seed(3);
    c.checkpoint_interval = 2;
    c.sensing.dataset_size = 40;
    c.sensing.pilot_grid = 9;
    c.federation.n_ues = 4;
    c.federation.local_epochs = 1;
    c.federation.minibatch_size = 16;
    c.federation.rounds = 4;
    c.federation.refresh_interval = 2;
    c.model = Architecture::Cvposnet(CvposnetConfig {
        conv_filters: 4,
        lstm_units: 5,
        ..Default::default()
    });
    c.baselines.mlp_model = MlpConfig {
        hidden: vec![6],
        ..Default::default()
    };
    c.baselines.frozen.epochs = 2;
    c.evaluation.grid_points = 7;
    c.sweep.rounds = 3;
    c
}

#[test]
fn training_reduces_error_and_logs_every_method() {
    let ctx = Context::new(tiny()).unwrap();
    let mut seen = Vec::new();
    let out = train(&ctx, &Executor::sequential(), None, false, &mut |r| {
        seen.push(r.t)
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert_eq!(out.rounds.len(), 4);
    let first = out.rounds[0].eval.as_ref().unwrap().mean_m;
    assert!(
        out.report.mean_m < first,
        "{} !< {first}",
        out.report.mean_m
    );
    assert_eq!(
        out.rows.iter().filter(|r| r.method == "cvposnet").count(),
        4
    );
    assert_eq!(out.rows.iter().filter(|r| r.method == "mlp").count(), 4);
    assert_eq!(out.rows.iter().filter(|r| r.method == "knn").count(), 1);
    assert!(out.baseline("mlp").is_some() && out.baseline("knn").is_some());
}

#[test]
fn sparse_evaluation_still_scores_the_last_round() {
    let mut cfg = tiny();
    cfg.evaluation.every = 3;
    cfg.baselines.mlp = false;
    cfg.baselines.knn = false;
    let ctx = Context::new(cfg).unwrap();
    let out = train(&ctx, &Executor::sequential(), None, false, &mut |_| {}).unwrap();
    let evaluated: Vec<u32> = out
        .rounds
        .iter()
        .filter(|r| r.eval.is_some())
        .map(|r| r.t)
        .collect();
    assert_eq!(evaluated, vec![2, 3]);
}

#[test]
fn zero_rounds_returns_the_initial_weights() {
    let mut cfg = tiny();
    cfg.federation.rounds = 0;
    let ctx = Context::new(cfg).unwrap();
    let out = train(&ctx, &Executor::sequential(), None, false, &mut |_| {}).unwrap();
    assert_eq!(out.weights, ctx.network.init(3));
    assert!(out.rounds.is_empty());
    assert!(out.report.mean_m > 0.5);
}

#[test]
fn resume_from_a_checkpoint_matches_an_uninterrupted_run() {
    let full_dir = tempfile::tempdir().unwrap();
    let part_dir = tempfile::tempdir().unwrap();
    let exec = Executor::sequential();
    let ctx = Context::new(tiny()).unwrap();
    let full = train(&ctx, &exec, Some(full_dir.path()), false, &mut |_| {}).unwrap();

    let mut short = tiny();
    short.federation.rounds = 2;
    train(
        &Context::new(short).unwrap(),
        &exec,
        Some(part_dir.path()),
        false,
        &mut |_| {},
    )
    .unwrap();
    let mut resumed_rounds = Vec::new();
    let resumed = train(&ctx, &exec, Some(part_dir.path()), true, &mut |r| {
        resumed_rounds.push(r.t)
    })
    .unwrap();
    assert_eq!(resumed_rounds, vec![2, 3]);
    assert_eq!(resumed.weights, full.weights);
    for f in [FINAL_CHECKPOINT, ROUNDS_FILE] {
        assert_eq!(
            std::fs::read(full_dir.path().join(f)).unwrap(),
            std::fs::read(part_dir.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let rows = read_rounds_csv(&part_dir.path().join(ROUNDS_FILE)).unwrap();
    let bits = |rows: &[fedvlp::metrics::RoundRow]| -> Vec<(u32, String, [u64; 4])> {
        rows.iter()
            .map(|r| {
                let v = [r.mean_err_m, r.median_err_m, r.p95_err_m, r.loss].map(f64::to_bits);
                (r.round, r.method.clone(), v)
            })
            .collect()
    };
    assert_eq!(bits(&rows), bits(&resumed.rows));
}

#[test]
fn resume_rejects_a_different_seed() {
    let dir = tempfile::tempdir().unwrap();
    let exec = Executor::sequential();
    train(
        &Context::new(tiny()).unwrap(),
        &exec,
        Some(dir.path()),
        false,
        &mut |_| {},
    )
    .unwrap();
    let mut other = tiny();
    other.set_seed(4);
    let err = train(
        &Context::new(other).unwrap(),
        &exec,
        Some(dir.path()),
        true,
        &mut |_| {},
    )
    .unwrap_err();
    assert!(err.is_config_error(), "{err}");
}

#[test]
fn manifest_records_checkpoints_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.scenario = ScenarioSpec::of(ScenarioKind::AmbientDrift);
    let ctx = Context::new(cfg).unwrap();
    let out = train(
        &ctx,
        &Executor::sequential(),
        Some(dir.path()),
        false,
        &mut |_| {},
    )
    .unwrap();
    let m = Manifest::read(dir.path()).unwrap();
    assert_eq!(m, out.manifest);
    let rounds: Vec<u32> = m.checkpoints.iter().map(|c| c.round).collect();
    assert_eq!(rounds, vec![2, 4, 4]);
    let saved = ModelWeights::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(m.latest_checkpoint().unwrap().checksum, saved.checksum());
    for (t, rec) in m.environment.iter().enumerate() {
        assert_eq!(rec.round, t as u32);
        assert!((rec.background_current_a - t as f64 * 50e-6).abs() < 1e-18);
    }
    assert_eq!(m.scaling, ctx.scaling);
}

#[test]
fn out_dir_guard() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("run");
    prepare_out_dir(&target, false).unwrap();
    prepare_out_dir(&target, false).unwrap();
    std::fs::write(target.join("x"), "1").unwrap();
    assert!(matches!(
        prepare_out_dir(&target, false),
        Err(Error::Config(_))
    ));
    prepare_out_dir(&target, true).unwrap();
}

#[test]
fn generated_datasets_match_the_first_training_data() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(tiny()).unwrap();
    let m = gen_data(&ctx, &Executor::sequential(), dir.path()).unwrap();
    assert_eq!(m.files.iter().filter(|f| f.ends_with(".csv")).count(), 4);
    let ue0 = read_dataset_csv(&dir.path().join("ue_00.csv")).unwrap();
    assert_eq!(ue0.len(), 40);
    assert!(ue0
        .iter()
        .all(|s| s.round_collected == 0 && s.coordinate.x <= 2.5 && s.coordinate.y <= 2.5));
}

#[test]
fn checkpoint_evaluation_names_the_mismatched_layer() {
    let ctx = Context::new(tiny()).unwrap();
    let w = ctx.network.init(1);
    let a = evaluate_checkpoint(&ctx, &w, 0).unwrap();
    let b = evaluate_checkpoint(&ctx, &w, 0).unwrap();
    assert_eq!(a, b);

    let mut other = tiny();
    other.model = Architecture::Cvposnet(CvposnetConfig {
        conv_filters: 4,
        lstm_units: 6,
        ..Default::default()
    });
    let err = evaluate_checkpoint(&Context::new(other).unwrap(), &w, 0).unwrap_err();
    match err {
        Error::LayoutMismatch { layer } => assert!(layer.contains("lstm"), "{layer}"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn sweep_runs_both_arms_and_freezes_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.sweep.scenarios = vec![ScenarioKind::Stationary, ScenarioKind::LedBlackout];
    let ctx = Context::new(cfg).unwrap();
    let mut calls = 0;
    let out = scenario_sweep(
        &ctx,
        &Executor::sequential(),
        Some(dir.path()),
        None,
        &mut |_, _| calls += 1,
    )
    .unwrap();
    assert_eq!(calls, 4 + 2 * 3);
    assert_eq!(out.scenarios.len(), 2);
    let stationary = out.scenario(ScenarioKind::Stationary).unwrap();
    let frozen: Vec<f64> = stationary.frozen.iter().map(|r| r.mean_m).collect();
    assert!(
        frozen.windows(2).all(|w| w[0] == w[1]),
        "frozen arm changed in a stationary room: {frozen:?}"
    );
    let blackout = out.scenario(ScenarioKind::LedBlackout).unwrap();
    assert!(blackout.environment[0].active_leds.iter().all(|&a| a));
    assert_eq!(
        blackout.environment[1]
            .active_leds
            .iter()
            .filter(|&&a| !a)
            .count(),
        1
    );
    assert_eq!(out.rows().len(), 2 * 2 * 3);
    let svgs = plot(dir.path()).unwrap();
    assert_eq!(svgs.len(), 2);
}

#[test]
fn sweep_reuses_a_supplied_checkpoint() {
    let mut cfg = tiny();
    cfg.sweep.scenarios = vec![ScenarioKind::DeviceAging];
    let ctx = Context::new(cfg).unwrap();
    let w = ctx.network.init(11);
    let out = scenario_sweep(
        &ctx,
        &Executor::sequential(),
        None,
        Some(w.clone()),
        &mut |_, _| {},
    )
    .unwrap();
    assert_eq!(out.pretrained, w);
    let bad = ModelWeights::zeros(vec![fedvlp::nn::ParamBlock::new("x", &[2])]);
    assert!(scenario_sweep(
        &ctx,
        &Executor::sequential(),
        None,
        Some(bad),
        &mut |_, _| {}
    )
    .is_err());
}

#[test]
fn mlp_trains_through_the_same_driver() {
    let mut cfg = tiny();
    cfg.model = Architecture::Mlp(MlpConfig {
        hidden: vec![6],
        ..Default::default()
    });
    let ctx = Context::new(cfg).unwrap();
    let out = train(&ctx, &Executor::sequential(), None, false, &mut |_| {}).unwrap();
    assert_eq!(ctx.network.name(), "mlp");
    assert!(
        out.baseline("mlp").is_none(),
        "no separate MLP arm when the model is already an MLP"
    );
    assert!(out.report.mean_m.is_finite());
}
