//! End-to-end runs shared by the command line and the acceptance suite:
//! training with checkpoints and resume, the scenario sweep, dataset export
//! and checkpoint evaluation.
//!
//! Every output file is a function of the configuration alone. Nothing here
//! records wall-clock time or the worker count.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{build_mlp, frozen_centralized, KnnModel};
use crate::config::RunConfig;
use crate::environment::{RoomEnvironment, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::federation::{Federation, FederationConfig, FederationInputs, FederationRound};
use crate::metrics::{
    long_format, read_long_csv, read_rounds_csv, render_svg, write_cdf_csv, write_long_csv,
    write_rounds_csv, EvalReport, GridEvaluator, NetworkLocator, RoundRow, SeriesPoint,
};
use crate::nn::{ModelWeights, Network, ParamBlock};
use crate::sensing::{write_dataset_csv, FeatureScaling};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const CDF_FILE: &str = "cdf.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.bin";
pub const PRETRAINED_CHECKPOINT: &str = "pretrained.bin";
pub const ROUND_FIGURE: &str = "error_vs_round";

/// Creates `path`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        if !path.is_dir() {
            return Err(Error::Config(format!(
                "{} exists and is not a directory",
                path.display()
            )));
        }
        let mut entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                path.display()
            )));
        }
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Environment state recorded for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub round: u32,
    pub led_power_w: Vec<f64>,
    pub active_leds: Vec<bool>,
    pub background_current_a: f64,
}

impl EnvRecord {
    pub fn of(env: &RoomEnvironment) -> Self {
        EnvRecord {
            round: env.round_index,
            led_power_w: env.leds.iter().map(|l| l.emit_power_w).collect(),
            active_leds: env.leds.iter().map(|l| l.active).collect(),
            background_current_a: env.noise.background_current_a,
        }
    }

    fn from_round(r: &FederationRound) -> Self {
        EnvRecord {
            round: r.t,
            led_power_w: r.led_power_w.clone(),
            active_leds: r.active_leds.clone(),
            background_current_a: r.background_current_a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Rounds completed when the weights were saved.
    pub round: u32,
    /// Path relative to the run directory.
    pub file: String,
    pub checksum: u64,
}

/// `manifest.json`: what produced a run directory and how to read it back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    /// `train`, `scenario-sweep` or `gen-data`.
    pub kind: String,
    pub seed: u64,
    pub scenario: String,
    pub model: String,
    pub rounds_planned: u32,
    pub rounds_completed: u32,
    pub scaling: FeatureScaling,
    pub layout: Vec<ParamBlock>,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointRecord>,
    #[serde(default)]
    pub environment: Vec<EnvRecord>,
    #[serde(default)]
    pub files: Vec<String>,
}

impl Manifest {
    fn new(kind: &str, ctx: &Context, scenario: &ScenarioSpec, rounds: u32) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            seed: ctx.cfg.seed,
            scenario: scenario.label(),
            model: ctx.network.name().to_string(),
            rounds_planned: rounds,
            rounds_completed: 0,
            scaling: ctx.scaling.clone(),
            layout: ctx.network.layout(),
            checkpoints: Vec::new(),
            environment: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// The checkpoint with the most completed rounds.
    pub fn latest_checkpoint(&self) -> Option<&CheckpointRecord> {
        self.checkpoints.iter().max_by_key(|c| c.round)
    }
}

/// A validated configuration with everything derived from it.
pub struct Context {
    pub cfg: RunConfig,
    pub env: RoomEnvironment,
    pub network: Network,
    pub scaling: FeatureScaling,
    pub evaluator: GridEvaluator,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let env = cfg.validate()?;
        let network = Network::new(&cfg.model)?;
        let scaling = cfg.sensing.pilot_scaling(&env, network.output_dim())?;
        Self::assemble(cfg, env, network, scaling)
    }

    /// Like [`Context::new`] but with scaling recorded by an earlier run.
    pub fn with_scaling(cfg: RunConfig, scaling: FeatureScaling) -> Result<Self> {
        let env = cfg.validate()?;
        let network = Network::new(&cfg.model)?;
        if scaling.n_inputs() != network.n_inputs() || scaling.output_dim() != network.output_dim()
        {
            return Err(Error::Config(
                "recorded feature scaling does not match the model".into(),
            ));
        }
        Self::assemble(cfg, env, network, scaling)
    }

    fn assemble(
        cfg: RunConfig,
        env: RoomEnvironment,
        network: Network,
        scaling: FeatureScaling,
    ) -> Result<Self> {
        let evaluator = GridEvaluator::new(
            &env,
            cfg.evaluation.grid_points,
            cfg.sensing.plane.grid_z(),
            cfg.evaluation.error_dim,
            cfg.seed,
        )?;
        Ok(Context {
            cfg,
            env,
            network,
            scaling,
            evaluator,
        })
    }

    pub fn inputs<'a>(
        &'a self,
        network: &'a Network,
        scenario: &'a ScenarioSpec,
    ) -> FederationInputs<'a> {
        FederationInputs {
            base_env: &self.env,
            scenario,
            sensing: &self.cfg.sensing,
            network,
            scaling: &self.scaling,
        }
    }

    pub fn evaluate(
        &self,
        network: &Network,
        weights: &ModelWeights,
        env: &RoomEnvironment,
        round: u32,
    ) -> Result<EvalReport> {
        let locator = NetworkLocator {
            network,
            weights,
            scaling: &self.scaling,
        };
        self.evaluator.evaluate(&locator, env, round)
    }

    fn evaluates(&self, t: u32, rounds: u32) -> bool {
        (t + 1).is_multiple_of(self.cfg.evaluation.every) || t + 1 == rounds
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Rounds run by this invocation.
    pub rounds: Vec<FederationRound>,
    /// Every evaluated round of every method, including resumed history.
    pub rows: Vec<RoundRow>,
    pub weights: ModelWeights,
    /// Final-round evaluation of the trained model.
    pub report: EvalReport,
    /// Final-round evaluations of the enabled baselines.
    pub baselines: Vec<(String, EvalReport)>,
    pub manifest: Manifest,
}

impl TrainOutcome {
    pub fn baseline(&self, method: &str) -> Option<&EvalReport> {
        self.baselines
            .iter()
            .find(|(m, _)| m == method)
            .map(|(_, r)| r)
    }
}

fn checkpoint_rel(round: u32) -> String {
    format!("{CHECKPOINT_DIR}/round_{round:04}.bin")
}

fn save_checkpoint(
    dir: &Path,
    rel: &str,
    w: &ModelWeights,
    round: u32,
    manifest: &mut Manifest,
) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    w.save(&path)?;
    manifest.checkpoints.retain(|c| c.file != rel);
    manifest.checkpoints.push(CheckpointRecord {
        round,
        file: rel.to_string(),
        checksum: w.checksum(),
    });
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Federated training of the configured model, then the enabled baselines
/// on the same data. With `out`, writes the resolved config, `manifest.json`,
/// `rounds.csv`, checkpoints, `cdf.csv` and `series.csv`. With `resume`,
/// continues from the newest checkpoint recorded in `out`.
pub fn train(
    ctx: &Context,
    exec: &Executor,
    out: Option<&Path>,
    resume: bool,
    on_round: &mut dyn FnMut(&FederationRound),
) -> Result<TrainOutcome> {
    let cfg = &ctx.cfg;
    let scenario = &cfg.scenario;
    let total = cfg.federation.rounds;
    let method = ctx.network.name();
    let inputs = ctx.inputs(&ctx.network, scenario);

    let mut manifest = Manifest::new("train", ctx, scenario, total);
    let mut rows: Vec<RoundRow> = Vec::new();
    let mut fed = if resume {
        let dir = out.ok_or_else(|| Error::Config("resume needs a run directory".into()))?;
        let old = Manifest::read(dir)?;
        if old.kind != "train" || old.seed != cfg.seed || old.layout != manifest.layout {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration",
                dir.display()
            )));
        }
        let ck = old
            .latest_checkpoint()
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "{} has no checkpoint to resume from",
                    dir.display()
                ))
            })?
            .clone();
        if ck.round > total {
            return Err(Error::Config(format!(
                "checkpoint is at round {} but the run is configured for {total} rounds",
                ck.round
            )));
        }
        let weights = ModelWeights::load(&dir.join(&ck.file))?;
        weights.check_layout(&manifest.layout)?;
        let rows_path = dir.join(ROUNDS_FILE);
        if rows_path.exists() {
            rows = read_rounds_csv(&rows_path)?
                .into_iter()
                .filter(|r| r.method == method && r.round < ck.round)
                .collect();
        }
        manifest.checkpoints = old
            .checkpoints
            .into_iter()
            .filter(|c| c.round <= ck.round)
            .collect();
        manifest.environment = old
            .environment
            .into_iter()
            .filter(|e| e.round < ck.round)
            .collect();
        manifest.rounds_completed = ck.round;
        Federation::resume(
            inputs,
            cfg.federation.clone(),
            weights,
            ck.round,
            exec.clone(),
        )?
    } else {
        Federation::new(
            inputs,
            cfg.federation.clone(),
            ctx.network.init(cfg.seed),
            exec.clone(),
        )?
    };
    if let Some(dir) = out {
        write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
    }
    let survey = if resume {
        None
    } else {
        Some(fed.survey()?.concat())
    };

    let mut log = Vec::new();
    while fed.next_round() < total {
        let mut hook = |t: u32, env: &RoomEnvironment, w: &ModelWeights| {
            if ctx.evaluates(t, total) {
                ctx.evaluate(&ctx.network, w, env, t).map(Some)
            } else {
                Ok(None)
            }
        };
        let rec = fed.step(&mut hook)?;
        if let Some(rep) = &rec.eval {
            rows.push(RoundRow::new(rep, rec.train_loss, method));
        }
        manifest.environment.push(EnvRecord::from_round(&rec));
        manifest.rounds_completed = rec.t + 1;
        if let Some(dir) = out {
            let k = cfg.checkpoint_interval;
            if k > 0 && (rec.t + 1) % k == 0 {
                save_checkpoint(
                    dir,
                    &checkpoint_rel(rec.t + 1),
                    fed.global(),
                    rec.t + 1,
                    &mut manifest,
                )?;
                write_rounds_csv(&dir.join(ROUNDS_FILE), &rows)?;
                manifest.write(dir)?;
            }
        }
        on_round(&rec);
        log.push(rec);
    }
    let weights = fed.global().clone();
    let final_env = fed.environment(total.saturating_sub(1));
    let report = match log.last().and_then(|r| r.eval.clone()) {
        Some(r) => r,
        None => ctx.evaluate(&ctx.network, &weights, &final_env, total.saturating_sub(1))?,
    };

    let mut baselines = Vec::new();
    if cfg.baselines.mlp && ctx.network.name() != "mlp" {
        let (mlp, init) = build_mlp(&cfg.baselines.mlp_model, cfg.seed)?;
        let mut fcfg = cfg.federation.clone();
        if let Some(lr) = cfg.baselines.mlp_learning_rate {
            fcfg.learning_rate = lr;
        }
        let mut mfed = Federation::new(ctx.inputs(&mlp, scenario), fcfg, init, exec.clone())?;
        let mut last = None;
        while mfed.next_round() < total {
            let mut hook = |t: u32, env: &RoomEnvironment, w: &ModelWeights| {
                if ctx.evaluates(t, total) {
                    ctx.evaluate(&mlp, w, env, t).map(Some)
                } else {
                    Ok(None)
                }
            };
            let rec = mfed.step(&mut hook)?;
            if let Some(rep) = rec.eval {
                rows.push(RoundRow::new(&rep, rec.train_loss, "mlp"));
                last = Some(rep);
            }
        }
        let rep = match last {
            Some(r) => r,
            None => ctx.evaluate(&mlp, mfed.global(), &final_env, total.saturating_sub(1))?,
        };
        baselines.push(("mlp".to_string(), rep));
    }
    if cfg.baselines.knn {
        let survey = match survey {
            Some(s) => s,
            None => Federation::new(
                inputs,
                cfg.federation.clone(),
                ctx.network.init(cfg.seed),
                exec.clone(),
            )?
            .survey()?
            .concat(),
        };
        let knn = KnnModel::new(
            cfg.baselines.knn_k,
            cfg.baselines.knn_weighting,
            &survey,
            ctx.scaling.clone(),
        )?;
        let rep = ctx
            .evaluator
            .evaluate(&knn, &final_env, total.saturating_sub(1))?;
        rows.push(RoundRow::new(&rep, f64::NAN, "knn"));
        baselines.push(("knn".to_string(), rep));
    }

    if let Some(dir) = out {
        save_checkpoint(dir, FINAL_CHECKPOINT, &weights, total, &mut manifest)?;
        write_rounds_csv(&dir.join(ROUNDS_FILE), &rows)?;
        let mut cdfs: Vec<(&str, &EvalReport)> = vec![(method, &report)];
        cdfs.extend(baselines.iter().map(|(m, r)| (m.as_str(), r)));
        write_cdf_csv(&dir.join(CDF_FILE), &cdfs)?;
        let curve: Vec<RoundRow> = rows.iter().filter(|r| r.method != "knn").cloned().collect();
        write_long_csv(
            &dir.join(SERIES_FILE),
            &long_format(&curve, &cdfs, ROUND_FIGURE),
        )?;
        manifest.files = [CONFIG_FILE, ROUNDS_FILE, CDF_FILE, SERIES_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect();
        manifest.write(dir)?;
    }
    Ok(TrainOutcome {
        rounds: log,
        rows,
        weights,
        report,
        baselines,
        manifest,
    })
}

/// Per-round errors of one arm in one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub round: u32,
    pub method: String,
    pub mean_err_m: f64,
    pub median_err_m: f64,
    pub p95_err_m: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub kind: ScenarioKind,
    /// Evaluation after every round, federated arm.
    pub federated: Vec<EvalReport>,
    /// The frozen one-shot model evaluated under every round's environment.
    pub frozen: Vec<EvalReport>,
    pub environment: Vec<EnvRecord>,
}

impl ScenarioOutcome {
    pub fn final_federated(&self) -> &EvalReport {
        self.federated
            .last()
            .expect("sweep runs at least one round")
    }

    pub fn final_frozen(&self) -> &EvalReport {
        self.frozen.last().expect("sweep runs at least one round")
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub pretrained: ModelWeights,
    pub scenarios: Vec<ScenarioOutcome>,
}

impl SweepOutcome {
    pub fn scenario(&self, kind: ScenarioKind) -> Option<&ScenarioOutcome> {
        self.scenarios.iter().find(|s| s.kind == kind)
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for s in &self.scenarios {
            for (method, reports) in [("federated", &s.federated), ("frozen", &s.frozen)] {
                rows.extend(reports.iter().map(|r| SweepRow {
                    scenario: s.kind.label().to_string(),
                    round: r.round,
                    method: method.to_string(),
                    mean_err_m: r.mean_m,
                    median_err_m: r.median_m,
                    p95_err_m: r.p95_m,
                }));
            }
        }
        rows
    }
}

/// Runs every scenario in `sweep.scenarios` for `sweep.rounds` rounds from a
/// shared pre-trained model, once federated and once frozen. The frozen arm
/// fine-tunes the pre-trained weights on the pooled round-0 survey of its
/// scenario and never updates again. Without `pretrained`, the stationary
/// configuration is trained first.
pub fn scenario_sweep(
    ctx: &Context,
    exec: &Executor,
    out: Option<&Path>,
    pretrained: Option<ModelWeights>,
    on_round: &mut dyn FnMut(ScenarioKind, &FederationRound),
) -> Result<SweepOutcome> {
    let cfg = &ctx.cfg;
    let pretrained = match pretrained {
        Some(w) => {
            w.check_layout(&ctx.network.layout())?;
            w
        }
        None => {
            let mut pcfg = cfg.clone();
            pcfg.scenario = ScenarioSpec {
                kind: ScenarioKind::Stationary,
                stack: Vec::new(),
                ..cfg.scenario.clone()
            };
            pcfg.baselines.mlp = false;
            pcfg.baselines.knn = false;
            let pctx = Context::with_scaling(pcfg, ctx.scaling.clone())?;
            let mut ignore = |r: &FederationRound| on_round(ScenarioKind::Stationary, r);
            train(&pctx, exec, None, false, &mut ignore)?.weights
        }
    };
    let fcfg = FederationConfig {
        rounds: cfg.sweep.rounds,
        ..cfg.federation.clone()
    };
    let mut scenarios = Vec::new();
    for &kind in &cfg.sweep.scenarios {
        let spec = ScenarioSpec {
            kind,
            stack: Vec::new(),
            ..cfg.scenario.clone()
        };
        let mut fed = Federation::new(
            ctx.inputs(&ctx.network, &spec),
            fcfg.clone(),
            pretrained.clone(),
            exec.clone(),
        )?;
        let survey = fed.survey()?.concat();
        let frozen_w = frozen_centralized(
            &ctx.network,
            &pretrained,
            &survey,
            &ctx.scaling,
            &cfg.baselines.frozen,
            cfg.seed,
        )?;
        let mut outcome = ScenarioOutcome {
            kind,
            federated: Vec::new(),
            frozen: Vec::new(),
            environment: Vec::new(),
        };
        while fed.next_round() < fcfg.rounds {
            let mut hook = |t: u32, env: &RoomEnvironment, w: &ModelWeights| {
                ctx.evaluate(&ctx.network, w, env, t).map(Some)
            };
            let rec = fed.step(&mut hook)?;
            let env = fed.environment(rec.t);
            outcome
                .frozen
                .push(ctx.evaluate(&ctx.network, &frozen_w, &env, rec.t)?);
            outcome
                .federated
                .push(rec.eval.clone().expect("sweep evaluates every round"));
            outcome.environment.push(EnvRecord::from_round(&rec));
            on_round(kind, &rec);
        }
        scenarios.push(outcome);
    }
    let result = SweepOutcome {
        pretrained,
        scenarios,
    };
    if let Some(dir) = out {
        write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
        let mut manifest = Manifest::new("scenario-sweep", ctx, &cfg.scenario, cfg.sweep.rounds);
        manifest.scenario = cfg
            .sweep
            .scenarios
            .iter()
            .map(|k| k.label())
            .collect::<Vec<_>>()
            .join(",");
        manifest.rounds_completed = cfg.sweep.rounds;
        save_checkpoint(
            dir,
            PRETRAINED_CHECKPOINT,
            &result.pretrained,
            0,
            &mut manifest,
        )?;
        let rows = result.rows();
        let path = dir.join(SWEEP_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let series: Vec<SeriesPoint> = rows
            .iter()
            .map(|r| SeriesPoint {
                figure: format!("sweep_{}", r.scenario),
                method: r.method.clone(),
                x: r.round as f64,
                y: r.mean_err_m,
            })
            .collect();
        write_long_csv(&dir.join(SERIES_FILE), &series)?;
        manifest.environment = result
            .scenarios
            .iter()
            .flat_map(|s| s.environment.clone())
            .collect();
        manifest.files = [CONFIG_FILE, SWEEP_FILE, SERIES_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect();
        manifest.write(dir)?;
    }
    Ok(result)
}

/// Writes each UE's round-0 dataset under the configured scenario as
/// `ue_NN.csv` plus a manifest.
pub fn gen_data(ctx: &Context, exec: &Executor, out: &Path) -> Result<Manifest> {
    let scenario = &ctx.cfg.scenario;
    let fed = Federation::new(
        ctx.inputs(&ctx.network, scenario),
        ctx.cfg.federation.clone(),
        ModelWeights::zeros(ctx.network.layout()),
        exec.clone(),
    )?;
    let mut manifest = Manifest::new("gen-data", ctx, scenario, 0);
    for (j, samples) in fed.survey()?.iter().enumerate() {
        let name = format!("ue_{j:02}.csv");
        write_dataset_csv(&out.join(&name), samples)?;
        manifest.files.push(name);
    }
    manifest
        .environment
        .push(EnvRecord::of(&fed.environment(0)));
    write_text(&out.join(CONFIG_FILE), &ctx.cfg.to_toml())?;
    manifest.files.push(CONFIG_FILE.to_string());
    manifest.write(out)?;
    Ok(manifest)
}

/// Evaluates saved weights under the configured scenario at `round`.
pub fn evaluate_checkpoint(
    ctx: &Context,
    weights: &ModelWeights,
    round: u32,
) -> Result<EvalReport> {
    weights.check_layout(&ctx.network.layout())?;
    let env = crate::environment::advance(&ctx.env, &ctx.cfg.scenario, round);
    ctx.evaluate(&ctx.network, weights, &env, round)
}

/// Loads the configuration a run directory was produced with, together with
/// its recorded feature scaling.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Manifest)> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let manifest = Manifest::read(dir)?;
    Ok((cfg, manifest))
}

/// Renders every figure of `dir/series.csv` to `dir/<figure>.svg`.
pub fn plot(dir: &Path) -> Result<Vec<PathBuf>> {
    let points = read_long_csv(&dir.join(SERIES_FILE))?;
    let mut figures: Vec<&str> = Vec::new();
    for p in &points {
        if !figures.contains(&p.figure.as_str()) {
            figures.push(&p.figure);
        }
    }
    let mut written = Vec::new();
    for fig in figures {
        let (x, y) = if fig == "cdf" {
            ("error threshold (m)", "fraction of test points")
        } else {
            ("communication round", "mean positioning error (m)")
        };
        let svg = render_svg(&points, fig, x, y)?;
        let path = dir.join(format!("{fig}.svg"));
        write_text(&path, &svg)?;
        written.push(path);
    }
    Ok(written)
}
