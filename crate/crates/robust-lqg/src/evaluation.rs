//! Optimal LQG baseline, suboptimality gaps and the end-to-end sweeps.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{self, Dcf};
use crate::linalg::{self, Mat};
use crate::lti::{self, StateSpace};
use crate::norms::{self, DEFAULT_TOL};
use crate::sdp::SdpBackend;
use crate::synthesis::{self, SynthesisConfig, SynthesisResult};
use crate::sysid::{self, HankelEstimate, IdConfig, OrderChoice, RealizationEstimate};
use crate::uncertainty;

/// H2-optimal controller for unit noise and unit weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalLqg {
    pub controller: StateSpace,
    pub cost: f64,
}

/// LQR state feedback on `C'C` and unit input weight, combined with the current
/// (filtered) Kalman estimate for process noise `B w` and unit measurement noise.
///
/// The controller uses the current measurement, so it has a feedthrough term.
pub fn optimal_lqg(plant: &StateSpace) -> Result<OptimalLqg> {
    let (nx, m, p) = (plant.nx(), plant.nu(), plant.ny());
    if plant.d.amax() > 0.0 {
        return Err(Error::InvalidArgument("optimal LQG needs a strictly proper plant".into()));
    }
    let controller = if nx == 0 {
        StateSpace::zero(m, p)
    } else {
        let (a, b, c) = (&plant.a, &plant.b, &plant.c);
        let ctc = c.transpose() * c;
        let im = Mat::identity(m, m);
        let ip = Mat::identity(p, p);
        let pc = lti::solve_dare(a, b, &ctc, &im)?;
        let f = lti::dare_gain(a, b, &im, None, &pc)?;
        let pe = lti::solve_dare(&a.transpose(), &c.transpose(), &(b * b.transpose()), &ip)?;
        let inn = linalg::inverse(&(c * &pe * c.transpose() + &ip))
            .ok_or_else(|| Error::Singular("innovation covariance".into()))?;
        let lf = &pe * c.transpose() * inn;
        let closed = a - b * &f;
        let update = Mat::identity(nx, nx) - &lf * c;
        // the controller sees z = -y and outputs u = -F x̂(t|t)
        StateSpace::new(&closed * &update, -(&closed * &lf), -(&f * &update), &f * &lf)?
    };
    let cost = uncertainty::lqg_cost_direct(plant, &controller)?;
    Ok(OptimalLqg { controller, cost })
}

/// `(H(G, K)² - H(G, K_opt)²) / H(G, K_opt)²`.
pub fn relative_gap(plant: &StateSpace, learned: &StateSpace, optimal: &StateSpace) -> Result<f64> {
    let cl = uncertainty::lqg_cost_direct(plant, learned)?;
    let co = uncertainty::lqg_cost_direct(plant, optimal)?;
    Ok((cl * cl - co * co) / (co * co))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    SynthInfeasible,
    LoopUnstable,
    IdFailed,
}

/// One end-to-end run. Fields past the failing stage are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub horizon: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub d_hat: Option<usize>,
    pub order: Option<usize>,
    /// Bound on the Hankel error used for the radius.
    pub hankel_bound: Option<f64>,
    /// Actual Hankel error, when the true parameter is known.
    pub hankel_error: Option<f64>,
    /// Radius on the refreshed left factors.
    pub gamma_est: Option<f64>,
    /// Radius carried over to the normalized factors used for synthesis.
    pub gamma_synth: Option<f64>,
    pub delta_star: Option<f64>,
    pub cost_learned: Option<f64>,
    pub cost_opt: f64,
    pub relative_gap: Option<f64>,
    pub bound: Option<f64>,
    pub message: Option<String>,
}

/// Stage outputs of an end-to-end run.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub record: ExperimentRecord,
    pub order: Option<OrderChoice>,
    pub hankel: Option<HankelEstimate>,
    pub realization: Option<RealizationEstimate>,
    pub identified_plant: Option<StateSpace>,
    pub synthesis: Option<SynthesisResult>,
}

/// Normalized factorization of the plant of `model` and the factor by which a radius
/// on `model`'s left factors grows when moved to it.
///
/// Two left factorizations of one plant differ by a unimodular `U`; with the
/// controller factors of `model`, `U = M̃ₙ Ỹ + Ñₙ X̃`.
pub fn synthesis_dcf(model: &Dcf) -> Result<(Dcf, f64)> {
    let plant = model.plant()?;
    let dcf = factorization::normalized_left_dcf(&plant, &factorization::lqr_gain(&plant)?)?;
    let u = dcf.mt.mul(&model.yt)?.add(&dcf.nt.mul(&model.xt)?)?;
    let scale = norms::hinf_norm(&u, DEFAULT_TOL)?.value;
    Ok((dcf, scale))
}

/// Identification, radius, synthesis and evaluation on the true plant.
///
/// `nominal` is the factorization whose central controller runs the experiment;
/// `truth` is the true dual-Youla parameter, used only to report the Hankel error.
pub fn run_endtoend(
    plant: &StateSpace,
    nominal: &Dcf,
    id_cfg: &IdConfig,
    synth_cfg: &SynthesisConfig,
    seed: u64,
    truth: Option<&StateSpace>,
    backend: &dyn SdpBackend,
) -> Result<PipelineRun> {
    id_cfg.validate()?;
    synth_cfg.validate()?;
    let opt = optimal_lqg(plant)?;
    let mut run = PipelineRun {
        record: ExperimentRecord {
            horizon: id_cfg.horizon,
            seed,
            status: RunStatus::IdFailed,
            d_hat: None,
            order: None,
            hankel_bound: None,
            hankel_error: None,
            gamma_est: None,
            gamma_synth: None,
            delta_star: None,
            cost_learned: None,
            cost_opt: opt.cost,
            relative_gap: None,
            bound: None,
            message: None,
        },
        order: None,
        hankel: None,
        realization: None,
        identified_plant: None,
        synthesis: None,
    };
    let fail = |mut run: PipelineRun, status: RunStatus, e: Error| {
        run.record.status = status;
        run.record.message = Some(e.to_string());
        Ok(run)
    };

    // identification
    let data = match sysid::run_experiment(plant, nominal, id_cfg.horizon, id_cfg.noise_scale, seed) {
        Ok(d) => d,
        Err(e) => return fail(run, RunStatus::IdFailed, e),
    };
    let choice = match sysid::choose_order(&data, nominal, id_cfg) {
        Ok(c) => c,
        Err(e) => return fail(run, RunStatus::IdFailed, e),
    };
    let d = choice.d_hat;
    run.record.d_hat = Some(d);
    run.order = Some(choice);
    let (input, output) = data.regression_pair(nominal, id_cfg.regressor)?;
    let hankel = match sysid::ols_hankel(&input, &output, d, id_cfg.horizon) {
        Ok(h) => h,
        Err(e) => return fail(run, RunStatus::IdFailed, e),
    };
    if let Some(r) = truth {
        run.record.hankel_error = Some(sysid::hankel_error(&hankel, r));
    }
    let (m, p) = (nominal.inputs(), nominal.outputs());
    let bound = sysid::hankel_error_bound(id_cfg, d, m, p);
    run.record.hankel_bound = Some(bound);
    let real = match sysid::realize(&hankel, bound, id_cfg) {
        Ok(r) => r,
        Err(e) => return fail(run, RunStatus::IdFailed, e),
    };
    run.hankel = Some(hankel);
    run.record.order = Some(real.order);
    let gamma_est = sysid::uncertainty_radius(nominal, bound)?;
    run.record.gamma_est = Some(gamma_est);
    let model = match sysid::model_from_r(nominal, &real) {
        Ok(m) => m,
        Err(e) => {
            run.realization = Some(real);
            return fail(run, RunStatus::IdFailed, e);
        }
    };
    run.realization = Some(real);
    let (syn_dcf, scale) = match synthesis_dcf(&model) {
        Ok(x) => x,
        Err(e) => return fail(run, RunStatus::IdFailed, e),
    };
    run.identified_plant = Some(syn_dcf.plant()?);

    // synthesis
    let gamma = scale * gamma_est;
    run.record.gamma_synth = Some(gamma);
    let cfg = SynthesisConfig { gamma: gamma.max(1e-12), ..synth_cfg.clone() };
    let result = match synthesis::solve_outer(&syn_dcf, &cfg, backend) {
        Ok(r) => r,
        Err(e) => return fail(run, RunStatus::SynthInfeasible, e),
    };
    run.record.delta_star = Some(result.delta_star);
    run.record.bound = synthesis::suboptimality_bound(&result, cfg.gamma, result.nominal_norm).ok();

    // evaluation on the true plant
    let k = result.controller.clone();
    run.synthesis = Some(result);
    if !factorization::is_internally_stabilizing(plant, &k)? {
        return fail(run, RunStatus::LoopUnstable, Error::Unstable("learned controller".into()));
    }
    let cost = uncertainty::lqg_cost_direct(plant, &k)?;
    run.record.cost_learned = Some(cost);
    run.record.relative_gap = Some((cost * cost - opt.cost * opt.cost) / (opt.cost * opt.cost));
    run.record.status = RunStatus::Ok;
    Ok(run)
}

/// Smallest error-bound constant `c` for which the bound dominates the actual Hankel
/// error on the given quantile of pilot runs.
pub fn calibrate_c(
    plant: &StateSpace,
    nominal: &Dcf,
    truth: &StateSpace,
    cfg: &IdConfig,
    seeds: &[u64],
    quantile: f64,
) -> Result<f64> {
    let unit = IdConfig { c_const: 1.0, ..cfg.clone() };
    let mut ratios = seeds
        .par_iter()
        .map(|&seed| {
            let data = sysid::run_experiment(plant, nominal, cfg.horizon, cfg.noise_scale, seed)?;
            let d = sysid::choose_order(&data, nominal, &unit)?.d_hat;
            let (i, o) = data.regression_pair(nominal, cfg.regressor)?;
            let h = sysid::ols_hankel(&i, &o, d, cfg.horizon)?;
            let bound = sysid::hankel_error_bound(&unit, d, nominal.inputs(), nominal.outputs());
            Ok(sysid::hankel_error(&h, truth) / bound)
        })
        .collect::<Result<Vec<f64>>>()?;
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("no pilot seeds".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let idx = ((quantile.clamp(0.0, 1.0) * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
    Ok(ratios[idx])
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(0.5 * (v[(n - 1) / 2] + v[n / 2]))
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs at least 3 positive points, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub runs: usize,
    pub ok: usize,
    pub median_gamma: Option<f64>,
    pub median_gap: Option<f64>,
    pub median_hankel_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<ExperimentRecord>,
    pub summaries: Vec<HorizonSummary>,
    pub gamma_slope: Option<f64>,
    pub gap_slope: Option<f64>,
    pub hankel_slope: Option<f64>,
    /// Consecutive horizons where the median gap increased.
    pub gap_inversions: usize,
    /// Ok records whose gap exceeds their finite bound.
    pub bound_violations: usize,
}

/// End-to-end runs over every `(T, seed)` pair, with per-horizon medians and slopes.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    plant: &StateSpace,
    nominal: &Dcf,
    horizons: &[usize],
    seeds: &[u64],
    id_cfg: &IdConfig,
    synth_cfg: &SynthesisConfig,
    truth: Option<&StateSpace>,
    backend: &dyn SdpBackend,
) -> Result<SweepReport> {
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("horizons must be increasing".into()));
    }
    if horizons.len() < 3 {
        return Err(Error::InvalidArgument("a slope fit needs at least 3 horizons".into()));
    }
    let jobs: Vec<(usize, u64)> = horizons
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let cfg = IdConfig { horizon: t, ..id_cfg.clone() };
            run_endtoend(plant, nominal, &cfg, synth_cfg, seed, truth, backend).map(|r| r.record)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(records, horizons))
}

/// Per-horizon medians, slopes and invariant counts of a record table.
pub fn summarize(records: Vec<ExperimentRecord>, horizons: &[usize]) -> SweepReport {
    let summaries: Vec<HorizonSummary> = horizons
        .iter()
        .map(|&t| {
            let at: Vec<&ExperimentRecord> = records.iter().filter(|r| r.horizon == t).collect();
            let ok: Vec<&&ExperimentRecord> = at.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let gaps: Vec<f64> = ok.iter().filter_map(|r| r.relative_gap).collect();
            let gammas: Vec<f64> = at.iter().filter_map(|r| r.gamma_est).collect();
            let herr: Vec<f64> = at.iter().filter_map(|r| r.hankel_error).collect();
            HorizonSummary {
                horizon: t,
                runs: at.len(),
                ok: ok.len(),
                median_gamma: median(&gammas),
                median_gap: median(&gaps),
                median_hankel_error: median(&herr),
            }
        })
        .collect();
    let fit = |get: fn(&HorizonSummary) -> Option<f64>| {
        let pts: Vec<(f64, f64)> = summaries
            .iter()
            .filter_map(|s| get(s).map(|v| (s.horizon as f64, v)))
            .collect();
        loglog_slope(&pts).ok()
    };
    let gaps: Vec<f64> = summaries.iter().filter_map(|s| s.median_gap).collect();
    let gap_inversions = gaps.windows(2).filter(|w| w[1] > w[0]).count();
    let bound_violations = records
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .filter(|r| matches!((r.relative_gap, r.bound), (Some(g), Some(b)) if b.is_finite() && g > b))
        .count();
    SweepReport {
        gamma_slope: fit(|s| s.median_gamma),
        gap_slope: fit(|s| s.median_gap),
        hankel_slope: fit(|s| s.median_hankel_error),
        summaries,
        records,
        gap_inversions,
        bound_violations,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub delta_star: f64,
    pub factor_hinf: f64,
    /// Relative-gap bound of the robust controller at this radius.
    pub bound: f64,
    /// Bound minus its γ → 0 limit `(‖·‖∞ ‖[M̃ Ñ]‖∞)² - 1`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub points: Vec<GammaPoint>,
    pub bound_slope: Option<f64>,
    pub excess_slope: Option<f64>,
}

/// Robust synthesis at fixed radii and the resulting relative-gap bounds.
pub fn gamma_sweep(dcf: &Dcf, gammas: &[f64], synth_cfg: &SynthesisConfig, backend: &dyn SdpBackend) -> Result<GammaSweep> {
    let points = gammas
        .iter()
        .map(|&gamma| {
            let cfg = SynthesisConfig { gamma, ..synth_cfg.clone() };
            let res = synthesis::solve_outer(dcf, &cfg, backend)?;
            let bound = synthesis::suboptimality_bound(&res, gamma, res.nominal_norm)?;
            let base = (res.factor_hinf * res.nominal_norm).powi(2) - 1.0;
            Ok(GammaPoint {
                gamma,
                delta_star: res.delta_star,
                factor_hinf: res.factor_hinf,
                bound,
                excess: bound - base,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = |f: fn(&GammaPoint) -> f64| loglog_slope(&points.iter().map(|p| (p.gamma, f(p))).collect::<Vec<_>>()).ok();
    Ok(GammaSweep {
        bound_slope: slope(|p| p.bound),
        excess_slope: slope(|p| p.excess),
        points,
    })
}

/// Rightmost zero of `γ² T - s d ln(T/δ) - s (m d + p d²)` with
/// `s = 144 ‖[X Y]‖∞² c² β² R²`; zero when the function has no positive root.
pub fn sample_threshold(gamma: f64, xy_norm: f64, cfg: &IdConfig, d: usize, m: usize, p: usize) -> f64 {
    let s = 144.0 * (xy_norm * cfg.c_const * cfg.beta * cfg.r_const).powi(2);
    let d = d as f64;
    let g = |t: f64| gamma * gamma * t - s * d * (t / cfg.fail_prob).ln() - s * (m as f64 * d + p as f64 * d * d);
    // g is concave, so past its peak a sign change brackets the rightmost root
    let peak = s * d / (gamma * gamma);
    let mut hi = peak.max(1.0);
    if g(hi) >= 0.0 && g(cfg.fail_prob) >= 0.0 {
        return 0.0;
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut lo = peak.max(cfg.fail_prob);
    if g(lo) >= 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Records as CSV, one row per run.
pub fn write_records_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Long-format `horizon,seed,metric,value` table for external plotting.
pub fn write_long_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["horizon", "seed", "metric", "value"])?;
    for r in records {
        let metrics = [
            ("gamma_est", r.gamma_est),
            ("gamma_synth", r.gamma_synth),
            ("hankel_error", r.hankel_error),
            ("hankel_bound", r.hankel_bound),
            ("delta_star", r.delta_star),
            ("cost_learned", r.cost_learned),
            ("cost_opt", Some(r.cost_opt)),
            ("relative_gap", r.relative_gap),
            ("bound", r.bound),
        ];
        for (name, v) in metrics {
            if let Some(v) = v {
                wtr.write_record([r.horizon.to_string(), r.seed.to_string(), name.to_string(), format!("{v:e}")])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
