//! `fedvlp`: run federated visible-light-positioning experiments.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
//! failures while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedvlp::config::RunConfig;
use fedvlp::environment::{ScenarioKind, ScenarioSpec};
use fedvlp::exec::Executor;
use fedvlp::experiment::{self, Context, Manifest};
use fedvlp::federation::FederationRound;
use fedvlp::metrics::write_cdf_csv;
use fedvlp::nn::gradcheck::check_gradients;
use fedvlp::nn::ModelWeights;
use fedvlp::Error;

#[derive(Parser)]
#[command(
    name = "fedvlp",
    version,
    about = "Federated visible light positioning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write each UE's round-0 fingerprint dataset as CSV plus a manifest.
    GenData(RunArgs),
    /// Federated training with checkpoints, baselines and per-round logs.
    Train(TrainArgs),
    /// Evaluate saved weights on the held-out grid.
    Eval(EvalArgs),
    /// Federated vs frozen one-shot models across nonstationary scenarios.
    ScenarioSweep(SweepArgs),
    /// Compare analytic gradients with central finite differences.
    CheckGradients(GradArgs),
    /// Render the series of a run directory as SVG charts.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory [default: fedvlp-out].
    #[arg(long, short, env = "FEDVLP_OUT_DIR")]
    out: Option<PathBuf>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Maximum UEs trained concurrently; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, env = "FEDVLP_SEED")]
    seed: Option<u64>,
    /// Scenario: stationary, ambient, blackout or aging. For scenario-sweep, the only one swept.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Communication rounds (`federation.rounds`, or `sweep.rounds` for scenario-sweep).
    #[arg(long)]
    rounds: Option<u32>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue the run in the output directory from its newest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Weights to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run configuration; defaults to `config.toml` beside the checkpoint's run.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Where to write `cdf.csv` and `summary.json`.
    #[arg(long, short, env = "FEDVLP_OUT_DIR")]
    out: Option<PathBuf>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Round whose environment is evaluated.
    #[arg(long, default_value_t = 0)]
    round: u32,
    /// Scenario applied when advancing to `--round`.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Seed for the evaluation environment (overrides `seed` in the config).
    #[arg(long, env = "FEDVLP_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Pre-trained weights shared by every scenario; trained first when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// TOML configuration whose model is checked.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directory containing `series.csv`.
    #[arg(long)]
    run: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> fedvlp::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ScenarioSweep(a) => sweep(a),
        Command::CheckGradients(a) => gradients(a),
        Command::Plot(a) => plot(a),
    }
}

fn load_config(path: Option<&Path>) -> fedvlp::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    scenario: Option<ScenarioKind>,
    rounds: Option<u32>,
) {
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(kind) = scenario {
        cfg.scenario = ScenarioSpec {
            kind,
            ..cfg.scenario.clone()
        };
    }
    if let Some(r) = rounds {
        cfg.federation.rounds = r;
    }
}

fn out_dir(arg: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    arg.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("fedvlp-out"))
}

fn executor(workers: usize) -> Executor {
    if workers == 1 {
        Executor::sequential()
    } else {
        Executor::with_workers(workers)
    }
}

fn prepared(a: &RunArgs) -> fedvlp::Result<(Context, PathBuf)> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply(&mut cfg, a.seed, a.scenario, a.rounds);
    let out = out_dir(a.out.clone(), &cfg);
    let ctx = Context::new(cfg)?;
    experiment::prepare_out_dir(&out, a.force)?;
    Ok((ctx, out))
}

fn progress(r: &FederationRound) {
    match &r.eval {
        Some(e) => eprintln!(
            "round {:>4}  loss {:.5}  mean {:.4} m  median {:.4} m  p95 {:.4} m",
            r.t, r.train_loss, e.mean_m, e.median_m, e.p95_m
        ),
        None => eprintln!("round {:>4}  loss {:.5}", r.t, r.train_loss),
    }
}

fn gen_data(a: RunArgs) -> fedvlp::Result<()> {
    let (ctx, out) = prepared(&a)?;
    let m = experiment::gen_data(&ctx, &executor(a.workers), &out)?;
    println!("wrote {} files to {}", m.files.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs) -> fedvlp::Result<()> {
    let exec = executor(a.run.workers);
    let (ctx, out) = if a.resume {
        let out = out_dir(a.run.out.clone(), &RunConfig::default());
        let mut cfg = match &a.run.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::load(&out.join(experiment::CONFIG_FILE))?,
        };
        apply(&mut cfg, a.run.seed, a.run.scenario, a.run.rounds);
        (Context::new(cfg)?, out)
    } else {
        prepared(&a.run)?
    };
    let o = experiment::train(&ctx, &exec, Some(&out), a.resume, &mut progress)?;
    println!(
        "{}: mean {:.4} m  median {:.4} m  p95 {:.4} m  P(err<=0.10 m) {:.3}",
        ctx.network.name(),
        o.report.mean_m,
        o.report.median_m,
        o.report.p95_m,
        o.report.fraction_within(0.10)
    );
    for (m, r) in &o.baselines {
        println!(
            "{m}: mean {:.4} m  median {:.4} m  p95 {:.4} m",
            r.mean_m, r.median_m, r.p95_m
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> fedvlp::Result<()> {
    let run_dir = a.checkpoint.parent().map(|p| {
        if p.ends_with(experiment::CHECKPOINT_DIR) {
            p.parent().unwrap_or(p).to_path_buf()
        } else {
            p.to_path_buf()
        }
    });
    let mut cfg = match (&a.config, &run_dir) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(d)) if d.join(experiment::CONFIG_FILE).exists() => {
            RunConfig::load(&d.join(experiment::CONFIG_FILE))?
        }
        _ => RunConfig::default(),
    };
    apply(&mut cfg, a.seed, a.scenario, None);
    let recorded = run_dir
        .as_deref()
        .filter(|d| d.join(experiment::MANIFEST_FILE).exists())
        .map(Manifest::read)
        .transpose()?;
    let ctx = match recorded {
        Some(m) => Context::with_scaling(cfg, m.scaling)?,
        None => Context::new(cfg)?,
    };
    let weights = ModelWeights::load(&a.checkpoint)?;
    let report = experiment::evaluate_checkpoint(&ctx, &weights, a.round)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from("fedvlp-eval"));
    experiment::prepare_out_dir(&out, a.force)?;
    let method = ctx.network.name();
    write_cdf_csv(&out.join(experiment::CDF_FILE), &[(method, &report)])?;
    let summary = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "method": method,
        "scenario": ctx.cfg.scenario.label(),
        "round": a.round,
        "points": report.per_point_errors_m.len(),
        "mean_err_m": report.mean_m,
        "median_err_m": report.median_m,
        "p95_err_m": report.p95_m,
        "fraction_within_0_10_m": report.fraction_within(0.10),
    });
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    println!(
        "mean {:.4} m  median {:.4} m  p95 {:.4} m",
        report.mean_m, report.median_m, report.p95_m
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> fedvlp::Result<()> {
    let mut cfg = load_config(a.run.config.as_deref())?;
    apply(&mut cfg, a.run.seed, None, None);
    if let Some(r) = a.run.rounds {
        cfg.sweep.rounds = r;
    }
    if let Some(kind) = a.run.scenario {
        cfg.sweep.scenarios = vec![kind];
    }
    let out = out_dir(a.run.out.clone(), &cfg);
    let ctx = Context::new(cfg)?;
    experiment::prepare_out_dir(&out, a.run.force)?;
    let pretrained = a
        .checkpoint
        .as_deref()
        .map(ModelWeights::load)
        .transpose()?;
    let mut log = |kind: ScenarioKind, r: &FederationRound| {
        eprint!("[{}] ", kind.label());
        progress(r);
    };
    let o = experiment::scenario_sweep(
        &ctx,
        &executor(a.run.workers),
        Some(&out),
        pretrained,
        &mut log,
    )?;
    for s in &o.scenarios {
        println!(
            "{:<10} federated {:.4} m -> {:.4} m   frozen {:.4} m -> {:.4} m",
            s.kind.label(),
            s.federated[0].mean_m,
            s.final_federated().mean_m,
            s.frozen[0].mean_m,
            s.final_frozen().mean_m
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn gradients(a: GradArgs) -> fedvlp::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let arch = match cfg.model {
        fedvlp::nn::Architecture::Cvposnet(c) => c,
        fedvlp::nn::Architecture::Mlp(_) => {
            return Err(Error::Config(
                "check-gradients needs a cvposnet model".into(),
            ));
        }
    };
    let report = check_gradients(&arch, a.tolerance);
    for e in &report.entries {
        println!(
            "{:<14} instance {:>2}  {:<18} checked {:>5} skipped {:>3}  max rel err {:.3e}  {}",
            e.check,
            e.instance,
            e.block,
            e.checked,
            e.skipped,
            e.max_rel_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "overall max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_error(),
        a.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{} gradient checks failed",
            report.failures().count()
        )))
    }
}

fn plot(a: PlotArgs) -> fedvlp::Result<()> {
    for p in experiment::plot(&a.run)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
