//! Command-line front end: `design`, `beampattern`, `sweep`, `ser` and
//! `factors`, each a pure function of the configuration file and seed.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bfim::{FactorArtifact, FACTOR_FORMAT_VERSION};
use crate::error::{IsacError, Result};
use crate::evaluate::{
    angle_grid_deg, derive_seed, eavesdrop_sinr, frame_snr, received_constellation, region_fraction, simulate_ser,
    sweep_designs, BeampatternTable, LobeMetrics, Scenario, Side, Stream, TradeoffPoint,
};
use crate::linalg::CMat;
use crate::precoder::{sca_design_zones, SolveReport};

pub use config::ExperimentConfig;
use output::{Cell, Csv, OutputDir, RunManifest, SeedSet, MANIFEST_FORMAT, MANIFEST_NAME, MANIFEST_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "secure-isac",
    version,
    about = "Secure sensing/communication frame design by Bayesian CRB minimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design one frame; writes the frame, a solver report and constellations.
    Design(RunArgs),
    /// Design one frame and export its transmit beampattern.
    Beampattern(RunArgs),
    /// BCRB of the symbol-level and block-level designs over a QoS grid.
    Sweep(RunArgs),
    /// Monte-Carlo symbol error rates over a QoS grid.
    Ser(RunArgs),
    /// Compute and store the prior-averaged factors.
    Factors(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `output_dir` of the configuration, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Size of the worker pool.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Design(_) => "design",
            Command::Beampattern(_) => "beampattern",
            Command::Sweep(_) => "sweep",
            Command::Ser(_) => "ser",
            Command::Factors(_) => "factors",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Design(a)
            | Command::Beampattern(a)
            | Command::Sweep(a)
            | Command::Ser(a)
            | Command::Factors(a) => a,
        }
    }
}

pub fn exit_code(err: &IsacError) -> i32 {
    match err {
        IsacError::Config(_) | IsacError::Dimension(_) | IsacError::Json(_) => EXIT_CONFIG,
        IsacError::Infeasible(_) => EXIT_INFEASIBLE,
        IsacError::Singular(_) | IsacError::NonDescent(_) | IsacError::Numerical(_) | IsacError::Io(_) => {
            EXIT_NUMERICAL
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Loads the configuration and runs one command inside a sized pool.
pub fn run(command: &Command) -> Result<()> {
    let started = Instant::now();
    let args = command.args();
    let cfg = ExperimentConfig::load(&args.config)?.with_seed(args.seed);
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(IsacError::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| IsacError::Numerical(format!("cannot start worker pool: {e}")))?;
    let mut out = OutputDir::create(dir)?;
    let ctx = Context::new(command.name(), &cfg);
    let result = pool.install(|| match command {
        Command::Design(_) => cmd_design(&cfg, &ctx, &mut out),
        Command::Beampattern(_) => cmd_beampattern(&cfg, &ctx, &mut out),
        Command::Sweep(_) => cmd_sweep(&cfg, &ctx, &mut out),
        Command::Ser(_) => cmd_ser(&cfg, &ctx, &mut out),
        Command::Factors(_) => cmd_factors(&cfg, &ctx, &mut out),
    });
    let manifest = RunManifest {
        format: MANIFEST_FORMAT,
        format_version: MANIFEST_VERSION,
        command: command.name().to_string(),
        config_hash: ctx.hash.clone(),
        config_schema_version: config::SCHEMA_VERSION,
        seeds: SeedSet {
            run: cfg.seed,
            channels: derive_seed(cfg.seed, Stream::Channels),
            symbols: derive_seed(cfg.seed, Stream::Symbols),
            prior_samples: derive_seed(cfg.seed, Stream::PriorSamples),
            noise: derive_seed(cfg.seed, Stream::Noise),
        },
        crate_version: env!("CARGO_PKG_VERSION"),
        factor_format_version: FACTOR_FORMAT_VERSION,
        outputs: out.files.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        exit_code: result.as_ref().map_or_else(exit_code, |_| EXIT_OK),
    };
    output::write_json(&out.dir.join(MANIFEST_NAME), &manifest)?;
    result
}

/// Values shared by every file of one run.
pub struct Context {
    pub command: &'static str,
    pub hash: String,
    pub seed: u64,
}

impl Context {
    fn new(command: &'static str, cfg: &ExperimentConfig) -> Self {
        Self {
            command,
            hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    /// First line of every CSV.
    fn comment(&self) -> String {
        format!(
            "secure-isac {} config_sha256={} seed={} manifest={MANIFEST_NAME}",
            self.command, self.hash, self.seed
        )
    }
}

fn frame_table(ctx: &Context, x: &CMat) -> Csv {
    let mut t = Csv::new(&ctx.comment(), &["slot", "antenna", "re", "im"]);
    for l in 0..x.ncols() {
        for i in 0..x.nrows() {
            let z = x[(i, l)];
            t.row(vec![l.into(), i.into(), z.re.into(), z.im.into()]);
        }
    }
    t
}

#[derive(Debug, Serialize)]
struct DesignSummary<'a> {
    config_sha256: &'a str,
    seed: u64,
    bcrb: f64,
    winning_case: u8,
    max_violation: f64,
    frame_energy: f64,
    energy_budget: f64,
    frame_snr: Vec<f64>,
    eavesdrop_sinr: Vec<Vec<f64>>,
    user_region_fraction: f64,
    eve_region_fraction: f64,
    report: &'a SolveReport,
}

fn design_once(scn: &Scenario, cfg: &ExperimentConfig) -> Result<(CMat, SolveReport)> {
    let d = sca_design_zones(&scn.problem(), &scn.objective, &cfg.solver, &[None, None, None])?;
    Ok((d.best().clone(), d.report))
}

pub fn cmd_design(cfg: &ExperimentConfig, ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let scn = cfg.scenario()?;
    let (x, report) = design_once(&scn, cfg)?;
    let problem = scn.problem();
    let set = problem.constraints(report.zone)?;
    let users = received_constellation(&x, &problem, Side::User, report.zone)?;
    let eves = received_constellation(&x, &problem, Side::Eve, report.zone)?;

    let mut table = Csv::new(
        &ctx.comment(),
        &["side", "entity", "slot", "re", "im", "margin", "in_region"],
    );
    for p in users.iter().chain(&eves) {
        let side = match p.side {
            Side::User => "user",
            Side::Eve => "eve",
        };
        table.row(vec![
            side.into(),
            p.entity.into(),
            p.slot.into(),
            p.value.re.into(),
            p.value.im.into(),
            p.margin.into(),
            Cell::Int(p.in_region as u64),
        ]);
    }
    let summary = DesignSummary {
        config_sha256: &ctx.hash,
        seed: ctx.seed,
        bcrb: report.bcrb,
        winning_case: report.case,
        max_violation: set.max_violation(&x),
        frame_energy: x.norm_squared(),
        energy_budget: set.energy_budget,
        frame_snr: frame_snr(&x, &scn.channels, &scn.cfg),
        eavesdrop_sinr: eavesdrop_sinr(&x, &scn.priors, &scn.symbols, &scn.cfg)?,
        user_region_fraction: region_fraction(&users),
        eve_region_fraction: region_fraction(&eves),
        report: &report,
    };
    out.csv("frame.csv", &frame_table(ctx, &x))?;
    out.csv("constellation.csv", &table)?;
    out.json("report.json", &summary)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BeampatternSummary<'a> {
    config_sha256: &'a str,
    seed: u64,
    bcrb: f64,
    winning_case: u8,
    metrics: LobeMetrics,
}

pub fn cmd_beampattern(cfg: &ExperimentConfig, ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let scn = cfg.scenario()?;
    let (x, report) = design_once(&scn, cfg)?;
    let table = BeampatternTable::compute(&x, &angle_grid_deg(cfg.beampattern.step_deg))?;
    let db = table.normalized_db();
    let mut csv = Csv::new(&ctx.comment(), &["theta_deg", "p_db", "p_linear"]);
    for ((t, d), p) in table.theta_deg.iter().zip(&db).zip(&table.power) {
        csv.row(vec![(*t).into(), (*d).into(), (*p).into()]);
    }
    let means: Vec<f64> = cfg.priors.targets.iter().map(|t| t.mean_deg).collect();
    out.csv("beampattern.csv", &csv)?;
    out.json(
        "beampattern_metrics.json",
        &BeampatternSummary {
            config_sha256: &ctx.hash,
            seed: ctx.seed,
            bcrb: report.bcrb,
            winning_case: report.case,
            metrics: table.lobe_metrics(&means),
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepPointReport {
    gamma_db: f64,
    power_budget_dbm: f64,
    ci_error: Option<String>,
    block_error: Option<String>,
    continued: bool,
    ci: Option<SolveReport>,
    block_case: Option<u8>,
    block_iterations: Option<usize>,
    block_termination: Option<crate::precoder::Termination>,
    block_objective_trace: Option<Vec<f64>>,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let grid = cfg.sweep()?;
    let scn = cfg.scenario()?;
    let points = sweep_designs(&scn, &grid.gamma_grid_db, &grid.power_list_dbm, &cfg.solver, true)?;
    let mut csv = Csv::new(
        &ctx.comment(),
        &["gamma_db", "power_budget_dbm", "bcrb_ci", "bcrb_block", "status"],
    );
    let mut reports = Vec::new();
    for p in &points {
        let t = TradeoffPoint::from(p);
        let status = match (t.bcrb_ci.is_some(), t.bcrb_block.is_some()) {
            (true, true) => "ok",
            (false, true) => "ci_infeasible",
            (true, false) => "block_infeasible",
            (false, false) => "infeasible",
        };
        csv.row(vec![
            t.gamma_db.into(),
            t.power_budget_dbm.into(),
            t.bcrb_ci.into(),
            t.bcrb_block.into(),
            status.into(),
        ]);
        let block = p.block.as_ref();
        let block_ok = block.and_then(|b| b.as_ref().ok());
        reports.push(SweepPointReport {
            gamma_db: p.gamma_db,
            power_budget_dbm: p.power_dbm,
            ci_error: p.ci.as_ref().err().cloned(),
            block_error: block.and_then(|b| b.as_ref().err().cloned()),
            continued: p.continued,
            ci: p.ci.as_ref().ok().map(|d| d.report.clone()),
            block_case: block_ok.map(|b| b.zone.id()),
            block_iterations: block_ok.map(|b| b.trace.iterations),
            block_termination: block_ok.map(|b| b.trace.termination),
            block_objective_trace: block_ok.map(|b| b.trace.objective_trace.clone()),
        });
    }
    out.csv("tradeoff.csv", &csv)?;
    out.json("sweep_report.json", &reports)?;
    Ok(())
}

pub fn cmd_ser(cfg: &ExperimentConfig, ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let grid = cfg.sweep()?;
    let scn = cfg.scenario()?;
    let points = sweep_designs(&scn, &grid.gamma_grid_db, &grid.power_list_dbm, &cfg.solver, false)?;
    let noise_seed = derive_seed(cfg.seed, Stream::Noise);
    let mut csv = Csv::new(
        &ctx.comment(),
        &[
            "gamma_db",
            "power_budget_dbm",
            "receiver",
            "index",
            "ser",
            "ci95_half_width",
            "decisions",
            "status",
        ],
    );
    let mut reports = Vec::new();
    for p in &points {
        let Some((x, report)) = p.ci_design() else {
            csv.row(vec![
                p.gamma_db.into(),
                p.power_dbm.into(),
                "all".into(),
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                "infeasible".into(),
            ]);
            continue;
        };
        let point = scn.at_point(p.power_dbm, p.gamma_db);
        let ser = simulate_ser(x, &point.problem(), cfg.ser.trials, noise_seed)?;
        let per_user = ser.decisions_per_user;
        let per_eve = per_user * ser.user_ser.len();
        let mut push = |receiver: &str, index: Cell, p_err: f64, hw: f64, n: usize| {
            csv.row(vec![
                p.gamma_db.into(),
                p.power_dbm.into(),
                receiver.into(),
                index,
                p_err.into(),
                hw.into(),
                n.into(),
                "ok".into(),
            ]);
        };
        for (k, (&s, &h)) in ser.user_ser.iter().zip(&ser.user_half_width).enumerate() {
            push("user", k.into(), s, h, per_user);
        }
        for (n, (&s, &h)) in ser.eve_ser.iter().zip(&ser.eve_half_width).enumerate() {
            push("eve", n.into(), s, h, per_eve);
        }
        push(
            "user_mean",
            Cell::Empty,
            ser.mean_user_ser(),
            ser.mean_user_half_width(),
            per_user * ser.user_ser.len(),
        );
        push(
            "eve_mean",
            Cell::Empty,
            ser.mean_eve_ser(),
            ser.mean_eve_half_width(),
            per_eve * ser.eve_ser.len(),
        );
        reports.push(report.clone());
    }
    out.csv("ser.csv", &csv)?;
    out.json("ser_report.json", &reports)?;
    Ok(())
}

pub fn cmd_factors(cfg: &ExperimentConfig, ctx: &Context, out: &mut OutputDir) -> Result<()> {
    let scn = cfg.scenario()?;
    let artifact = FactorArtifact::from_factors(scn.objective.factors(), &ctx.hash, ctx.seed);
    out.json("factors.json", &artifact)?;
    Ok(())
}
