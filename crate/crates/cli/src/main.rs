use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rigidmotion_core::harness::evaluate;
use rigidmotion_core::harness::fit::{anchored_params, fit, zero_params, OptConfig, Optimizer};
use rigidmotion_core::harness::io::{
    budget_range, fit_report_to_doc, fitted_from_doc, fitted_to_doc, loss_history_to_string, metrics_to_doc, read_file,
    read_scene_dir, scene_config_from_doc, write_file, write_scene_dir, FittedState, KvDoc, FIT_FILE,
    LOSS_HISTORY_FILE, REPORT_FILE,
};
use rigidmotion_core::harness::scene::generate_scene;
use rigidmotion_core::{Error, LossWeights, MotionModel, RelocationConfig};

const EXIT_INVALID: u8 = 1;
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "rigidmotion",
    version,
    about = "Synthetic rigid-motion scenes: generate, fit, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and its trajectories from a config file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit motion parameters to a generated scene.
    Fit(FitArgs),
    /// Score a fit against the scene it was fitted to.
    Evaluate {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Comma-separated `name=value` loss weights (w_reg, w_motion, w_rigid).
    #[arg(long, default_value = "w_reg=0.01,w_motion=0.0001,w_rigid=1.0")]
    weights: String,
    #[arg(long, default_value_t = 50.0)]
    lambda_c: f64,
    #[arg(long, default_value_t = 3)]
    knn: usize,
    #[arg(long, default_value_t = 100)]
    reloc_period: usize,
    #[arg(long, default_value_t = 0.005)]
    reloc_threshold: f64,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    /// Seed for relocation sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// gauge-fixed, free-anchor or linear.
    #[arg(long, default_value = "gauge-fixed")]
    model: MotionModel,
    /// adam or gd.
    #[arg(long, default_value = "adam")]
    optimizer: Optimizer,
    #[arg(long)]
    lr_twist: Option<f64>,
    #[arg(long)]
    lr_control: Option<f64>,
    #[arg(long)]
    lr_anchor: Option<f64>,
    #[arg(long)]
    lr_final_ratio: Option<f64>,
    /// Start anchors at the ground truth and keep them fixed.
    #[arg(long)]
    hold_anchors: bool,
}

fn parse_weights(text: &str, lambda_c: f64, knn: usize) -> anyhow::Result<LossWeights> {
    let mut w = LossWeights {
        lambda_c,
        k_neighbors: knn,
        ..Default::default()
    };
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .with_context(|| format!("weight `{item}` is not of the form name=value"))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("weight `{item}` has a non-numeric value"))?;
        match name.trim() {
            "w_reg" => w.w_reg = value,
            "w_motion" => w.w_motion = value,
            "w_rigid" => w.w_rigid = value,
            other => bail!("unknown weight `{other}` (expected w_reg, w_motion, w_rigid)"),
        }
    }
    w.validate()?;
    Ok(w)
}

fn generate(config: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = scene_config_from_doc(&KvDoc::read(config)?)?;
    let (scene, data, truth) = generate_scene(&cfg)?;
    write_scene_dir(out, &cfg, &scene, &data, &truth)?;
    println!(
        "wrote {} primitives, {} timesteps to {}",
        scene.len(),
        data.times.len(),
        out.display()
    );
    Ok(())
}

fn run_fit(args: &FitArgs) -> anyhow::Result<()> {
    let weights = parse_weights(&args.weights, args.lambda_c, args.knn)?;
    let (scene, data, truth) = read_scene_dir(&args.scene)?;
    let defaults = OptConfig::default();
    let opt = OptConfig {
        iters: args.iters,
        optimizer: args.optimizer,
        lr_twist: args.lr_twist.unwrap_or(defaults.lr_twist),
        lr_control: args.lr_control.unwrap_or(defaults.lr_control),
        lr_anchor: args.lr_anchor.unwrap_or(defaults.lr_anchor),
        lr_final_ratio: args.lr_final_ratio.unwrap_or(defaults.lr_final_ratio),
        model: args.model,
        learn_anchors: !args.hold_anchors,
        relocation: RelocationConfig {
            opacity_threshold: args.reloc_threshold,
            period: args.reloc_period,
            rng_seed: args.seed,
            ..Default::default()
        },
        ..defaults
    };
    let init = if args.hold_anchors {
        anchored_params(&truth)
    } else {
        zero_params(scene.len())
    };
    let outcome = fit(&scene, &data, &init, &weights, &opt, Some(&truth))?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let state = FittedState {
        scene: outcome.scene,
        params: outcome.params,
        lineage: outcome.lineage,
        model: opt.model,
        anchors_at_truth: args.hold_anchors,
    };
    fitted_to_doc(&state).write(&args.out.join(FIT_FILE))?;
    fit_report_to_doc(&outcome.report, &opt, &weights).write(&args.out.join(REPORT_FILE))?;
    write_file(
        &args.out.join(LOSS_HISTORY_FILE),
        &loss_history_to_string(&outcome.report.loss_history),
    )?;
    println!(
        "fit {} iterations: objective {:.6e}, weighted RMSE {:.6e}",
        outcome.report.loss_history.len(),
        outcome.report.final_objective.total,
        outcome.report.final_rmse
    );
    Ok(())
}

fn run_evaluate(fit_dir: &Path, scene_dir: &Path, report: &Path) -> anyhow::Result<()> {
    let state = fitted_from_doc(&KvDoc::read(&fit_dir.join(FIT_FILE))?)?;
    let (truth_scene, data, truth) = read_scene_dir(scene_dir)?;
    if state.lineage.iter().any(|&row| row >= truth_scene.len()) || state.scene.n_bodies != truth_scene.n_bodies {
        return Err(Error::InvalidInput(format!(
            "fit in {} does not belong to scene {}",
            fit_dir.display(),
            scene_dir.display()
        ))
        .into());
    }
    let metrics = evaluate(&state, &truth_scene, &truth, &data);

    // Budget range comes from the fit run's own report when it is present.
    let fit_report = fit_dir.join(REPORT_FILE);
    let budget = if fit_report.exists() {
        let doc = KvDoc::read(&fit_report)?;
        Some((
            doc.parse_value("metrics.primitive_count_min")?,
            doc.parse_value("metrics.primitive_count_max")?,
        ))
    } else {
        None
    };
    let budget = budget.or(Some(budget_range(&[state.scene.len()])));

    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    metrics_to_doc(&metrics, budget).write(report)?;

    let history_src = fit_dir.join(LOSS_HISTORY_FILE);
    let history_dst = report.with_file_name(LOSS_HISTORY_FILE);
    let same = match (history_src.canonicalize(), history_dst.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if history_src.exists() && !same {
        write_file(&history_dst, &read_file(&history_src)?)?;
    }
    println!(
        "weighted RMSE {:.6e} over {} primitives",
        metrics.weighted_rmse, metrics.primitive_count
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Generate { config, out } => generate(config, out),
        Command::Fit(args) => run_fit(args),
        Command::Evaluate { fit, scene, report } => run_evaluate(fit, scene, report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
