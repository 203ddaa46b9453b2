//! Command-line front-end: parse a model configuration, dispatch an
//! analysis, and emit figure-ready CSV tables plus machine-readable JSON.
//!
//! Exit codes: 0 on success, 1 for computation/domain failures, 2 for
//! configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

mod config;
mod output;

use config::{load_config, resolve_model, ConfigDocument, ResolvedModel};
use msddm::montecarlo::{conditional_ecdf, ecdf, ks_critical, ks_distance};
use msddm::reward::{SurfaceBase, SurfaceCell};
use msddm::{Boundary, RewardConfig64, SimConfig64};
use output::{num, ModelHeader, OutputTarget};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Compute(String),
    #[error("{0}")]
    Io(String),
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }
    pub fn io(msg: impl Into<String>) -> Self {
        AppError::Io(msg.into())
    }
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<msddm::Error> for AppError {
    fn from(e: msddm::Error) -> Self {
        AppError::Compute(e.to_string())
    }
}

/// First-passage-time analysis of multistage diffusion decision models.
#[derive(Parser)]
#[command(name = "msddm", version, about)]
struct Cli {
    /// Model configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output.directory` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the density grid size.
    #[arg(long, global = true)]
    grid: Option<usize>,

    /// Override the number of threshold pieces per O-U stage.
    #[arg(long, global = true)]
    pieces: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic first-passage metrics and CDF samples.
    Metrics,
    /// Euler-Maruyama path simulation with empirical summaries.
    Simulate,
    /// Analytic-vs-simulation comparison with per-curve KS statistics.
    Compare,
    /// Reward-rate curve over thresholds and its local maxima.
    Reward,
    /// Optimal-threshold surface over first-stage drift and switch time.
    Surface,
    /// Approximate first-passage analysis of a leaky (O-U) model.
    Ou,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

struct Ctx {
    doc: ConfigDocument,
    model: ResolvedModel,
    target: OutputTarget,
    seed_override: Option<u64>,
    pieces_override: Option<usize>,
}

fn run(cli: &Cli) -> Result<(), AppError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| AppError::config("--config <path> is required"))?;
    let doc = load_config(config_path)?;
    let model = resolve_model(&doc, cli.grid)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| doc.output.as_ref().map(|o| PathBuf::from(&o.directory)))
        .unwrap_or_else(|| PathBuf::from("."));
    let target = OutputTarget::new(dir, doc.output.as_ref().and_then(|o| o.formats.as_deref()))?;
    target.prepare()?;
    let ctx = Ctx {
        doc,
        model,
        target,
        seed_override: cli.seed,
        pieces_override: cli.pieces,
    };
    match cli.command {
        Command::Metrics => cmd_metrics(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Compare => cmd_compare(&ctx),
        Command::Reward => cmd_reward(&ctx),
        Command::Surface => cmd_surface(&ctx),
        Command::Ou => cmd_ou(&ctx),
    }
}

fn model_header(ctx: &Ctx) -> ModelHeader {
    ModelHeader {
        x0: ctx.model.x0,
        grid_size: ctx.model.grid_size,
        stage_times_seed: ctx.model.times_seed,
        stages: ctx.model.stages.clone(),
    }
}

fn sim_config(ctx: &Ctx) -> Result<SimConfig64, AppError> {
    let s = ctx
        .doc
        .simulation
        .as_ref()
        .ok_or_else(|| AppError::config("simulation: section is required for this command"))?;
    let cfg = SimConfig64 {
        n_paths: s.n_paths,
        dt: s.dt,
        seed: ctx.seed_override.unwrap_or(s.seed),
        max_time: s.max_time,
    };
    cfg.validate()
        .map_err(|e| AppError::config(format!("simulation: {e}")))?;
    Ok(cfg)
}

fn reward_config(ctx: &Ctx) -> Result<RewardConfig64, AppError> {
    let r = ctx
        .doc
        .reward
        .as_ref()
        .ok_or_else(|| AppError::config("reward: section is required for this command"))?;
    let cfg = RewardConfig64 {
        t_nd: r.t_nd,
        z_min: r.z_min,
        z_max: r.z_max,
        resolution: r.resolution,
    };
    cfg.validate()
        .map_err(|e| AppError::config(format!("reward: {e}")))?;
    Ok(cfg)
}

fn pieces(ctx: &Ctx) -> usize {
    ctx.pieces_override
        .or(ctx.doc.ou.as_ref().map(|o| o.pieces_per_stage))
        .unwrap_or(32)
}

/// Analytic result for the configured model, dispatching on leak.
fn analytic_result(ctx: &Ctx) -> Result<msddm::FptResult64, AppError> {
    if ctx.model.has_leak() {
        let spec = ctx.model.to_ou()?;
        Ok(msddm::ou_fpt_distribution(
            &spec,
            pieces(ctx),
            ctx.model.grid_size,
            None,
        )?)
    } else {
        let spec = ctx.model.to_ddm()?;
        Ok(msddm::analyze(&spec, ctx.model.grid_size, None)?)
    }
}

fn cmd_metrics(ctx: &Ctx) -> Result<(), AppError> {
    let spec = ctx.model.to_ddm()?;
    let r = msddm::analyze(&spec, ctx.model.grid_size, None)?;
    if ctx.target.json {
        output::write_json(
            &ctx.target.path("metrics.json"),
            &output::metrics_doc(model_header(ctx), &r),
        )?;
    }
    if ctx.target.csv {
        output::write_cdf_csv(&ctx.target.path("cdf.csv"), &r)?;
    }
    Ok(())
}

fn cmd_ou(ctx: &Ctx) -> Result<(), AppError> {
    let spec = ctx.model.to_ou()?;
    let r = msddm::ou_fpt_distribution(&spec, pieces(ctx), ctx.model.grid_size, None)?;
    if ctx.target.json {
        output::write_json(
            &ctx.target.path("ou_metrics.json"),
            &output::metrics_doc(model_header(ctx), &r),
        )?;
    }
    if ctx.target.csv {
        output::write_cdf_csv(&ctx.target.path("ou_cdf.csv"), &r)?;
    }
    Ok(())
}

fn simulate_outcomes(ctx: &Ctx, cfg: &SimConfig64) -> Result<Vec<msddm::SimOutcome<f64>>, AppError> {
    if ctx.model.has_leak() {
        Ok(msddm::simulate_ou(&ctx.model.to_ou()?, cfg)?)
    } else {
        Ok(msddm::simulate(&ctx.model.to_ddm()?, cfg)?)
    }
}

fn cmd_simulate(ctx: &Ctx) -> Result<(), AppError> {
    let cfg = sim_config(ctx)?;
    let outcomes = simulate_outcomes(ctx, &cfg)?;
    let metrics = msddm::montecarlo::empirical_metrics(&outcomes);
    if ctx.target.csv {
        output::write_outcomes_csv(&ctx.target.path("outcomes.csv"), &outcomes)?;
    }
    if ctx.target.json {
        output::write_json(
            &ctx.target.path("simulation_summary.json"),
            &output::sim_summary_doc(model_header(ctx), &cfg, &metrics),
        )?;
    }
    Ok(())
}

fn cmd_compare(ctx: &Ctx) -> Result<(), AppError> {
    let cfg = sim_config(ctx)?;
    let coeff = ctx
        .doc
        .compare
        .map(|c| c.ks_coefficient)
        .unwrap_or(1.63);
    if !(coeff > 0.0) {
        return Err(AppError::config("compare.ks_coefficient: must be positive"));
    }
    let analytic = analytic_result(ctx)?;
    let outcomes = simulate_outcomes(ctx, &cfg)?;

    let mut curves = Vec::new();
    let mut push = |name: &str, e: &msddm::montecarlo::Ecdf<f64>, values: &[f64]| {
        let statistic = ks_distance(e, &analytic.cdf.times, values);
        let critical = ks_critical(e.total(), coeff);
        curves.push(output::KsCurveDoc {
            curve: name.to_string(),
            n: e.total(),
            statistic,
            critical,
            pass: statistic < critical,
        });
    };
    let e_all = ecdf(&outcomes);
    push("unconditional", &e_all, &analytic.cdf.cdf);
    let e_up = conditional_ecdf(&outcomes, Boundary::Upper);
    if e_up.total() > 0 {
        push("conditional_upper", &e_up, &analytic.cdf.cond_upper);
    }
    let e_lo = conditional_ecdf(&outcomes, Boundary::Lower);
    if e_lo.total() > 0 {
        push("conditional_lower", &e_lo, &analytic.cdf.cond_lower);
    }
    let all_pass = curves.iter().all(|c| c.pass);
    let doc = output::CompareDoc {
        model: model_header(ctx),
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        seed: cfg.seed,
        ks_coefficient: coeff,
        curves,
        all_pass,
    };
    if ctx.target.json {
        output::write_json(&ctx.target.path("compare.json"), &doc)?;
    }
    if ctx.target.csv {
        output::write_cdf_csv(&ctx.target.path("cdf.csv"), &analytic)?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct RewardMaximaDoc {
    model: ModelHeader,
    t_nd: f64,
    z_min: f64,
    z_max: f64,
    resolution: usize,
    z_star: f64,
    rr_star: f64,
    boundary_argmax: bool,
    n_local_maxima: usize,
    local_maxima: Vec<[f64; 2]>,
}

fn cmd_reward(ctx: &Ctx) -> Result<(), AppError> {
    let cfg = reward_config(ctx)?;
    let template = ctx.model.to_ddm()?;
    let opt = msddm::optimize_threshold(&template, &cfg, ctx.model.grid_size)?;
    if ctx.target.csv {
        let n = cfg.resolution;
        let rows: Result<Vec<Vec<String>>, AppError> = (0..n)
            .map(|i| {
                let z = cfg.z_min + (cfg.z_max - cfg.z_min) * i as f64 / (n - 1) as f64;
                let rr = msddm::reward_rate(z, &template, &cfg, ctx.model.grid_size)?;
                Ok(vec![num(z), num(rr)])
            })
            .collect();
        output::write_csv(
            &ctx.target.path("reward_curve.csv"),
            &["z", "reward_rate"],
            rows?.into_iter(),
        )?;
    }
    if ctx.target.json {
        output::write_json(
            &ctx.target.path("reward_maxima.json"),
            &RewardMaximaDoc {
                model: model_header(ctx),
                t_nd: cfg.t_nd,
                z_min: cfg.z_min,
                z_max: cfg.z_max,
                resolution: cfg.resolution,
                z_star: opt.z_star,
                rr_star: opt.rr_star,
                boundary_argmax: opt.boundary_argmax,
                n_local_maxima: opt.local_maxima.len(),
                local_maxima: opt
                    .local_maxima
                    .iter()
                    .map(|m| [m.z, m.reward_rate])
                    .collect(),
            },
        )?;
    }
    Ok(())
}

fn cmd_surface(ctx: &Ctx) -> Result<(), AppError> {
    let s = ctx
        .doc
        .surface
        .ok_or_else(|| AppError::config("surface: section is required for this command"))?;
    let reward = reward_config(ctx)?;
    let cfg = RewardConfig64 {
        resolution: s.resolution,
        ..reward
    };
    if s.a1.count == 0 || s.t1.count == 0 {
        return Err(AppError::config("surface.a1/t1: counts must be positive"));
    }
    let base = SurfaceBase {
        a2: s.a2,
        sigma: s.sigma,
        x0: ctx.model.x0,
    };
    let a1s = s.a1.values();
    let t1s = s.t1.values();
    let cells = msddm::threshold_surface(&a1s, &t1s, &base, &cfg, s.grid_size)?;

    if ctx.target.csv {
        output::write_csv(
            &ctx.target.path("surface_long.csv"),
            &[
                "a1",
                "t1",
                "z_star",
                "rr_star",
                "n_local_maxima",
                "boundary_argmax",
                "error",
            ],
            cells.iter().map(|c: &SurfaceCell<f64>| {
                vec![
                    num(c.a1),
                    num(c.t1),
                    num(c.z_star),
                    num(c.rr_star),
                    c.n_local_maxima.to_string(),
                    if c.boundary_argmax { "1" } else { "0" }.to_string(),
                    c.error.clone().unwrap_or_default(),
                ]
            }),
        )?;
        // matrix form: rows = a1, columns = t1
        let mut rows = Vec::with_capacity(a1s.len());
        for (i, &a1) in a1s.iter().enumerate() {
            let mut row = vec![num(a1)];
            for j in 0..t1s.len() {
                row.push(num(cells[i * t1s.len() + j].z_star));
            }
            rows.push(row);
        }
        let mut header: Vec<String> = vec!["a1_over_t1".to_string()];
        header.extend(t1s.iter().map(|&t| num(t)));
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        output::write_csv(
            &ctx.target.path("surface_matrix.csv"),
            &header_refs,
            rows.into_iter(),
        )?;
    }
    Ok(())
}
