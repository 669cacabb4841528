//! Command-line front end: `verify`, `identify`, `synthesize`, `evaluate`, `sweep`.
//!
//! Exit codes: 0 ok, 1 invariant failure, 2 configuration error, 3 numerical failure.

pub mod config;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::evaluation::{self, ExperimentRecord, RunStatus};
use crate::factorization;
use crate::sdp::InteriorPoint;
use crate::synthesis;
use crate::sysid::{self, IdConfig};
use crate::uncertainty;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "robust-lqg", version, about = "Learn robust LQG controllers from closed-loop data")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset used when no configuration file is given.
    #[arg(long, global = true, default_value = "scalar-unstable")]
    pub preset: String,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configuration output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `key=value` with a dotted key into the configuration, e.g. `identification.horizon=4096`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suites.
    Verify {
        /// Damage the input of one group (self-test of the harness).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Closed-loop experiment, Hankel estimate, realization and uncertainty radius.
    Identify,
    /// Robust synthesis on the nominal model at `synthesis.gamma`.
    Synthesize,
    /// One end-to-end run at `identification.horizon`.
    Evaluate,
    /// Horizon sweep, radius sweep, or both.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepMode::Horizon)]
        mode: SweepMode,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Horizon,
    Gamma,
    Both,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

/// Parse the process arguments, run, and return the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::for_preset(&cli.preset),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<i32> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    if let Command::Verify { corrupt } = &cli.command {
        return Ok(cmd_verify(cli.seed.unwrap_or(0), corrupt.as_deref()));
    }
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Identify => cmd_identify(&cfg)?,
        Command::Synthesize => cmd_synthesize(&cfg)?,
        Command::Evaluate => cmd_evaluate(&cfg)?,
        Command::Sweep { mode } => cmd_sweep(&cfg, *mode)?,
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg)?),
        Command::Verify { .. } => unreachable!("handled above"),
    }
    Ok(EXIT_OK)
}

/// Single sink for every file a command writes.
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        evaluation::write_json(value, &self.path(name))
    }
}

pub fn cmd_verify(seed: u64, corrupt: Option<&str>) -> i32 {
    let outcomes = verify::run_all(seed, corrupt);
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        match &o.error {
            None => println!("{tag} {:<22} cases={:<3} worst={:.3e} limit={:.1e}", o.name, o.cases, o.worst, o.limit),
            Some(e) => println!("{tag} {:<22} error: {e}", o.name),
        }
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!("{} groups, {} failed", outcomes.len(), failed.len());
    if failed.is_empty() {
        EXIT_OK
    } else {
        println!("failing invariants: {}", failed.join(", "));
        EXIT_INVARIANT
    }
}

pub fn cmd_identify(cfg: &RunConfig) -> Result<()> {
    let plant = cfg.plant()?;
    let dcf = cfg.nominal_dcf()?;
    let id = &cfg.identification;
    let data = sysid::run_experiment(&plant, &dcf, id.horizon, id.noise_scale, cfg.seed)?;
    let choice = sysid::choose_order(&data, &dcf, id)?;
    let (input, output) = data.regression_pair(&dcf, id.regressor)?;
    let hankel = sysid::ols_hankel(&input, &output, choice.d_hat, id.horizon)?;
    let bound = sysid::hankel_error_bound(id, choice.d_hat, dcf.inputs(), dcf.outputs());
    let real = sysid::realize(&hankel, bound, id)?;
    let gamma = sysid::uncertainty_radius(&dcf, bound)?;
    let truth = factorization::dual_youla_parameter(&dcf, &plant)?;
    let err = sysid::hankel_error(&hankel, &truth);

    let out = Artifacts::new(&cfg.out)?;
    data.write_dir(&out.path("experiment"))?;
    out.json("hankel.json", &hankel)?;
    out.json("order.json", &choice)?;
    out.json("realization.json", &real)?;
    let summary = json!({
        "horizon": id.horizon,
        "seed": cfg.seed,
        "d_hat": choice.d_hat,
        "order": real.order,
        "stable": real.stable,
        "hankel_bound": bound,
        "hankel_error": err,
        "gamma_est": gamma,
    });
    out.json("identify.json", &summary)?;
    println!(
        "T={} d_hat={} order={} hankel_bound={:.4e} hankel_error={:.4e} gamma_est={:.4e}",
        id.horizon, choice.d_hat, real.order, bound, err, gamma
    );
    Ok(())
}

pub fn cmd_synthesize(cfg: &RunConfig) -> Result<()> {
    let model = cfg.nominal_model()?;
    let dcf = factorization::normalized_left_dcf(&model, &factorization::lqr_gain(&model)?)?;
    let res = synthesis::solve_outer(&dcf, &cfg.synthesis, &InteriorPoint::default())?;
    let q = factorization::YoulaParam::Fir(res.q_star.clone());
    let check = uncertainty::is_gamma_robust(&dcf, &q, cfg.synthesis.gamma)?;
    let bound = synthesis::suboptimality_bound(&res, cfg.synthesis.gamma, res.nominal_norm)?;
    let out = Artifacts::new(&cfg.out)?;
    out.json("synthesis.json", &res)?;
    out.json(
        "certificate.json",
        &json!({ "robust": check.robust, "factor_hinf": check.factor_hinf, "margin": check.margin, "bound": bound }),
    )?;
    println!(
        "gamma={} delta_star={:.6} factor_hinf={:.6} factor_h2={:.6} bound={:.4e} robust={}",
        cfg.synthesis.gamma, res.delta_star, res.factor_hinf, res.factor_h2, bound, check.robust
    );
    if !check.robust {
        return Err(Error::NoConvergence("synthesized controller failed the robustness check".into()));
    }
    Ok(())
}

fn calibrated(cfg: &RunConfig) -> Result<IdConfig> {
    let mut id = cfg.identification.clone();
    if let Some(cal) = &cfg.sweep.calibration {
        let plant = cfg.plant()?;
        let dcf = cfg.nominal_dcf()?;
        let truth = factorization::dual_youla_parameter(&dcf, &plant)?;
        let pilot = IdConfig { horizon: cal.horizon, ..id.clone() };
        id.c_const = evaluation::calibrate_c(&plant, &dcf, &truth, &pilot, &cal.seeds, cal.quantile)?;
        println!("calibrated c_const={:.6e} from {} pilot runs", id.c_const, cal.seeds.len());
    }
    Ok(id)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let plant = cfg.plant()?;
    let dcf = cfg.nominal_dcf()?;
    let truth = factorization::dual_youla_parameter(&dcf, &plant)?;
    let id = calibrated(cfg)?;
    let run = evaluation::run_endtoend(&plant, &dcf, &id, &cfg.synthesis, cfg.seed, Some(&truth), &InteriorPoint::default())?;
    let out = Artifacts::new(&cfg.out)?;
    out.json("record.json", &run.record)?;
    evaluation::write_records_csv(std::slice::from_ref(&run.record), &out.path("record.csv"))?;
    if let Some(h) = &run.hankel {
        out.json("hankel.json", h)?;
    }
    if let Some(r) = &run.realization {
        out.json("realization.json", r)?;
    }
    if let Some(s) = &run.synthesis {
        out.json("synthesis.json", s)?;
    }
    print_record(&run.record);
    Ok(())
}

fn print_record(r: &ExperimentRecord) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
    println!(
        "T={} seed={} status={:?} gamma_est={} delta_star={} cost_learned={} cost_opt={:.6} gap={} bound={}",
        r.horizon,
        r.seed,
        r.status,
        f(r.gamma_est),
        f(r.delta_star),
        f(r.cost_learned),
        r.cost_opt,
        f(r.relative_gap),
        f(r.bound)
    );
}

pub fn cmd_sweep(cfg: &RunConfig, mode: SweepMode) -> Result<()> {
    let out = Artifacts::new(&cfg.out)?;
    let backend = InteriorPoint::default();
    if matches!(mode, SweepMode::Horizon | SweepMode::Both) {
        let plant = cfg.plant()?;
        let dcf = cfg.nominal_dcf()?;
        let truth = factorization::dual_youla_parameter(&dcf, &plant)?;
        let id = calibrated(cfg)?;
        let s = &cfg.sweep;
        let rep = evaluation::sweep(&plant, &dcf, &s.horizons, &s.seeds, &id, &cfg.synthesis, Some(&truth), &backend)?;
        evaluation::write_records_csv(&rep.records, &out.path("records.csv"))?;
        evaluation::write_long_csv(&rep.records, &out.path("records_long.csv"))?;
        let gap_ok = rep.gap_slope.is_some_and(|k| (k + 0.5).abs() <= 0.2);
        let gamma_ok = rep.gamma_slope.is_some_and(|k| (k + 0.5).abs() <= 0.15);
        let summary = json!({
            "c_const": id.c_const,
            "summaries": rep.summaries,
            "gap_slope": rep.gap_slope,
            "gamma_slope": rep.gamma_slope,
            "hankel_slope": rep.hankel_slope,
            "gap_inversions": rep.gap_inversions,
            "bound_violations": rep.bound_violations,
            "checks": {
                "gap_slope": { "target": -0.5, "tolerance": 0.2, "pass": gap_ok },
                "gamma_slope": { "target": -0.5, "tolerance": 0.15, "pass": gamma_ok },
                "monotone_gap": { "allowed_inversions": 1, "pass": rep.gap_inversions <= 1 },
                "bound_dominance": { "pass": rep.bound_violations == 0 },
            },
        });
        out.json("summary.json", &summary)?;
        for h in &rep.summaries {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
            println!(
                "T={:<6} ok={}/{} gamma={} gap={} hankel_error={}",
                h.horizon, h.ok, h.runs, f(h.median_gamma), f(h.median_gap), f(h.median_hankel_error)
            );
        }
        let failed = rep.records.iter().filter(|r| r.status != RunStatus::Ok).count();
        println!(
            "slopes: gap={:?} gamma={:?} hankel={:?}; inversions={} violations={} failed_runs={}",
            rep.gap_slope, rep.gamma_slope, rep.hankel_slope, rep.gap_inversions, rep.bound_violations, failed
        );
    }
    if matches!(mode, SweepMode::Gamma | SweepMode::Both) {
        let model = cfg.nominal_model()?;
        let dcf = factorization::normalized_left_dcf(&model, &factorization::lqr_gain(&model)?)?;
        let sw = evaluation::gamma_sweep(&dcf, &cfg.sweep.gammas, &cfg.synthesis, &backend)?;
        out.json("gamma_sweep.json", &sw)?;
        let mut wtr = csv::Writer::from_path(out.path("gamma_sweep.csv"))?;
        for p in &sw.points {
            wtr.serialize(p)?;
        }
        wtr.flush()?;
        for p in &sw.points {
            println!("gamma={:.4e} delta_star={:.6} bound={:.6e} excess={:.6e}", p.gamma, p.delta_star, p.bound, p.excess);
        }
        println!("slopes: bound={:?} excess={:?}", sw.bound_slope, sw.excess_slope);
    }
    Ok(())
}
