//! Closed-loop identification of the dual-Youla parameter.
//!
//! The experiment runs the true plant under a known stabilizing controller with
//! shaped excitation, recovers the two measured signals `e1 = X r + Y w` and
//! `e2 = M̃ y - Ñ u`, regresses `e2` on past inputs to estimate a Hankel matrix,
//! and realizes it by an SVD. The identified parameter `R` refreshes the
//! nominal factorization through `M̃ - R X`, `Ñ + R Y`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::Dcf;
use crate::linalg::{self, Mat};
use crate::lti::{self, mat_from_rows, mat_to_rows, StateSpace, Trajectory};
use crate::norms::{self, DEFAULT_TOL};

/// How the Hankel size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    Fixed(usize),
    /// Pairwise-distance test over admissible sizes, floored at `⌈ln(T/δ)⌉`.
    Adaptive,
    /// Only the floor `⌈ln(T/δ)⌉`, without the pairwise test.
    LogHorizon,
}

/// Which measured signal serves as the regression input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    /// `e1 = X r + Y w` as measured.
    E1,
    /// `e1 - X r`, the part of `e1` driven by `w` alone.
    Excitation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdConfig {
    /// Half the number of collected samples.
    pub horizon: usize,
    pub order_mode: OrderMode,
    /// Bound on the H∞ norm of the dual-Youla parameter.
    pub beta: f64,
    /// Bound on the noise-to-signal Toeplitz ratio.
    pub r_const: f64,
    /// Absolute constant of the error bound.
    pub c_const: f64,
    /// Absolute constant in the admissible-size set of the adaptive rule.
    pub dim_const: f64,
    /// Failure probability.
    pub fail_prob: f64,
    /// Largest Hankel size tried by the adaptive rule.
    pub max_order: usize,
    /// Cap on the realized state dimension (`None` keeps the Hankel size).
    pub realization_order: Option<usize>,
    /// Relative singular-value floor below which directions are dropped.
    pub rank_tol: f64,
    pub regressor: Regressor,
    /// Scale of the output noise `nu` (and hence of `r = nu`).
    pub noise_scale: f64,
    /// Drop Hankel singular values at or below the error bound before realizing.
    pub truncate_at_bound: bool,
}

impl Default for IdConfig {
    fn default() -> Self {
        IdConfig {
            horizon: 1024,
            order_mode: OrderMode::LogHorizon,
            beta: 1.0,
            r_const: 1.0,
            c_const: 1.0,
            dim_const: 1.0,
            fail_prob: 0.05,
            max_order: 40,
            realization_order: None,
            rank_tol: 1e-10,
            regressor: Regressor::Excitation,
            noise_scale: 1.0,
            truncate_at_bound: true,
        }
    }
}

impl IdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.beta >= 1.0) || !(self.r_const >= 1.0) {
            return bad("beta and r_const must be at least 1");
        }
        if !(self.c_const > 0.0) || !(self.dim_const > 0.0) {
            return bad("c_const and dim_const must be positive");
        }
        if !(self.fail_prob > 0.0 && self.fail_prob < 1.0) {
            return bad("fail_prob must lie in (0, 1)");
        }
        if self.max_order < 1 {
            return bad("max_order must be at least 1");
        }
        if let OrderMode::Fixed(0) = self.order_mode {
            return bad("fixed Hankel size must be at least 1");
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol < 1.0) {
            return bad("rank_tol must lie in [0, 1)");
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return bad("noise_scale must be finite and nonnegative");
        }
        Ok(())
    }

    /// `⌈ln(T/δ)⌉`, the floor of the order rule.
    pub fn log_floor(&self) -> usize {
        ((self.horizon as f64 / self.fail_prob).ln().ceil()).max(1.0) as usize
    }
}

/// One closed-loop experiment with all signals of the identification loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub r: Trajectory,
    pub w: Trajectory,
    pub nu: Trajectory,
    pub u: Trajectory,
    pub y: Trajectory,
    pub e1: Trajectory,
    pub e2: Trajectory,
    pub horizon: usize,
    pub seed: u64,
}

fn white(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> Trajectory {
    Trajectory::new(Mat::from_fn(dim, len, |_, _| StandardNormal.sample(&mut *rng)))
}

/// Excitation `(r, w, nu)` of length `2T`: `nu` has spectrum `M̃⁻¹M̃⁻*` so that `M̃ nu`
/// is unit white, `r = nu`, and `w` has spectrum `Y⁻¹Y⁻*` so that `Y w` is unit white.
pub fn shape_noise(dcf: &Dcf, horizon: usize, seed: u64) -> Result<(Trajectory, Trajectory, Trajectory)> {
    let (m, p) = (dcf.inputs(), dcf.outputs());
    let len = 2 * horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_nu = white(&mut rng, p, len);
    let eps_w = white(&mut rng, m, len);
    let nu_filter = lti::spectral_factor(&dcf.mt.inverse()?)?;
    let w_filter = lti::spectral_factor(&dcf.y.inverse()?)?;
    let nu = nu_filter.filter(&eps_nu)?;
    let w = w_filter.filter(&eps_w)?;
    Ok((nu.clone(), w, nu))
}

/// Loop of `plant` under negative feedback `u = K (r - y)`, with inputs `[r; w; nu]`
/// and outputs `[u; y]`, where `u` is the plant input `K (r - y) + w`.
pub fn experiment_loop(plant: &StateSpace, controller: &StateSpace) -> Result<StateSpace> {
    let (m, p) = (plant.nu(), plant.ny());
    if controller.nu() != p || controller.ny() != m {
        return Err(Error::dim("controller must be inputs x outputs"));
    }
    let (ng, nk) = (plant.nx(), controller.nx());
    let (g, k) = (plant, controller);
    let e = linalg::inverse(&(Mat::identity(m, m) + &k.d * &g.d))
        .ok_or_else(|| Error::Singular("ill-posed loop".into()))?;
    // u = E (C_k x_k - D_k C_g x_g + D_k r + w - D_k nu)
    let u_x = linalg::hstack(&[&(-(&e * &k.d * &g.c)), &(&e * &k.c)]);
    let u_in = linalg::hstack(&[&(&e * &k.d), &e, &(-(&e * &k.d))]);
    // y = C_g x_g + D_g u + nu
    let nu_sel = linalg::hstack(&[&Mat::zeros(p, p + m), &Mat::identity(p, p)]);
    let y_x = linalg::hstack(&[&g.c, &Mat::zeros(p, nk)]) + &g.d * &u_x;
    let y_in = &g.d * &u_in + &nu_sel;
    let r_sel = linalg::hstack(&[&Mat::identity(p, p), &Mat::zeros(p, m + p)]);
    let mut a = Mat::zeros(ng + nk, ng + nk);
    let mut b = Mat::zeros(ng + nk, 2 * p + m);
    let gx = linalg::hstack(&[&Mat::identity(ng, ng), &Mat::zeros(ng, nk)]);
    let kx = linalg::hstack(&[&Mat::zeros(nk, ng), &Mat::identity(nk, nk)]);
    a.view_mut((0, 0), (ng, ng + nk)).copy_from(&(&g.a * &gx + &g.b * &u_x));
    a.view_mut((ng, 0), (nk, ng + nk)).copy_from(&(&k.a * &kx - &k.b * &y_x));
    b.view_mut((0, 0), (ng, 2 * p + m)).copy_from(&(&g.b * &u_in));
    b.view_mut((ng, 0), (nk, 2 * p + m)).copy_from(&(&k.b * (&r_sel - &y_in)));
    let c = linalg::vstack(&[&u_x, &y_x]);
    let d = linalg::vstack(&[&u_in, &y_in]);
    StateSpace::new(a, b, c, d)
}

/// Plant input and output of the identification loop.
pub fn simulate_closed_loop(
    plant: &StateSpace,
    controller: &StateSpace,
    r: &Trajectory,
    w: &Trajectory,
    nu: &Trajectory,
) -> Result<(Trajectory, Trajectory)> {
    let lp = experiment_loop(plant, controller)?;
    let a = lp.a.clone();
    if a.nrows() > 0 && lti::spectral_radius(&a)? >= 1.0 {
        return Err(Error::Unstable("identification loop is unstable".into()));
    }
    let out = lp.filter(&Trajectory::stack(&[r, w, nu])?)?;
    let m = plant.nu();
    Ok((out.rows(0, m), out.rows(m, plant.ny())))
}

/// `e1 = X r + Y w` and `e2 = M̃ y - Ñ u`.
pub fn compute_signals(
    dcf: &Dcf,
    u: &Trajectory,
    y: &Trajectory,
    r: &Trajectory,
    w: &Trajectory,
) -> Result<(Trajectory, Trajectory)> {
    let e1 = dcf.x.filter(r)?.add(&dcf.y.filter(w)?)?;
    let e2 = dcf.mt.filter(y)?.sub(&dcf.nt.filter(u)?)?;
    Ok((e1, e2))
}

/// Shaped excitation, closed-loop simulation and measured signals in one call.
pub fn run_experiment(
    plant: &StateSpace,
    dcf: &Dcf,
    horizon: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<ExperimentData> {
    let (r, w, nu) = shape_noise(dcf, horizon, seed)?;
    let nu = Trajectory::new(nu.data * noise_scale);
    let r = Trajectory::new(r.data * noise_scale);
    let controller = dcf.central_controller()?;
    let (u, y) = simulate_closed_loop(plant, &controller, &r, &w, &nu)?;
    let (e1, e2) = compute_signals(dcf, &u, &y, &r, &w)?;
    Ok(ExperimentData {
        r,
        w,
        nu,
        u,
        y,
        e1,
        e2,
        horizon,
        seed,
    })
}

impl ExperimentData {
    /// Regression input and output for the chosen regressor.
    pub fn regression_pair(&self, dcf: &Dcf, regressor: Regressor) -> Result<(Trajectory, Trajectory)> {
        let input = match regressor {
            Regressor::E1 => self.e1.clone(),
            Regressor::Excitation => self.e1.sub(&dcf.x.filter(&self.r)?)?,
        };
        Ok((input, self.e2.clone()))
    }

    fn channels(&self) -> [(&'static str, &Trajectory); 7] {
        [
            ("r", &self.r),
            ("w", &self.w),
            ("nu", &self.nu),
            ("u", &self.u),
            ("y", &self.y),
            ("e1", &self.e1),
            ("e2", &self.e2),
        ]
    }

    /// Write `signals.csv` (one row per sample) and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut wtr = csv::Writer::from_path(dir.join("signals.csv"))?;
        let mut header = vec!["t".to_string()];
        for (name, tr) in self.channels() {
            header.extend((0..tr.dim()).map(|i| format!("{name}_{i}")));
        }
        wtr.write_record(&header)?;
        for t in 0..self.u.len() {
            let mut row = vec![t.to_string()];
            for (_, tr) in self.channels() {
                row.extend(tr.data.column(t).iter().map(|v| format!("{v:e}")));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        let manifest = Manifest {
            seed: self.seed,
            horizon: self.horizon,
            samples: self.u.len(),
            inputs: self.u.dim(),
            outputs: self.y.dim(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let (m, p, len) = (manifest.inputs, manifest.outputs, manifest.samples);
        // r, w, nu, u, y, e1, e2
        let dims = [p, m, p, m, p, m, p];
        let mut data: Vec<Mat> = dims.iter().map(|&d| Mat::zeros(d, len)).collect();
        let mut rdr = csv::Reader::from_path(dir.join("signals.csv"))?;
        let width = 1 + dims.iter().sum::<usize>();
        let mut count = 0;
        for (t, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != width || t >= len {
                return Err(Error::Io("signals.csv does not match the manifest".into()));
            }
            let mut col = 1;
            for (k, &d) in dims.iter().enumerate() {
                for i in 0..d {
                    data[k][(i, t)] = rec[col]
                        .parse()
                        .map_err(|_| Error::Io(format!("bad number in row {t}")))?;
                    col += 1;
                }
            }
            count += 1;
        }
        if count != len {
            return Err(Error::Io("signals.csv is shorter than the manifest".into()));
        }
        let mut it = data.into_iter().map(Trajectory::new);
        let mut next = || it.next().unwrap();
        Ok(ExperimentData {
            r: next(),
            w: next(),
            nu: next(),
            u: next(),
            y: next(),
            e1: next(),
            e2: next(),
            horizon: manifest.horizon,
            seed: manifest.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    horizon: usize,
    samples: usize,
    inputs: usize,
    outputs: usize,
}

/// Estimated `d x d` block Hankel matrix; block `(i, j)` approximates `C A^(i+j) B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "HankelDoc", try_from = "HankelDoc")]
pub struct HankelEstimate {
    pub h: Mat,
    pub d: usize,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Serialize, Deserialize)]
struct HankelDoc {
    d: usize,
    inputs: usize,
    outputs: usize,
    h: Vec<Vec<f64>>,
}

impl From<HankelEstimate> for HankelDoc {
    fn from(e: HankelEstimate) -> Self {
        HankelDoc {
            d: e.d,
            inputs: e.inputs,
            outputs: e.outputs,
            h: mat_to_rows(&e.h),
        }
    }
}

impl TryFrom<HankelDoc> for HankelEstimate {
    type Error = Error;
    fn try_from(doc: HankelDoc) -> Result<Self> {
        let h = mat_from_rows(&doc.h, doc.outputs * doc.d, doc.inputs * doc.d)?;
        Ok(HankelEstimate {
            h,
            d: doc.d,
            inputs: doc.inputs,
            outputs: doc.outputs,
        })
    }
}

impl HankelEstimate {
    /// Exact `d x d` Hankel matrix of a system's Markov parameters (feedthrough excluded).
    pub fn exact(sys: &StateSpace, d: usize) -> Self {
        let (p, m) = (sys.ny(), sys.nu());
        let mk = sys.markov_params(2 * d);
        let mut h = Mat::zeros(p * d, m * d);
        for i in 0..d {
            for j in 0..d {
                h.view_mut((i * p, j * m), (p, m)).copy_from(&mk.coeffs[i + j + 1]);
            }
        }
        HankelEstimate {
            h,
            d,
            inputs: m,
            outputs: p,
        }
    }

    /// Zero-padded to `d` blocks per side.
    pub fn padded(&self, d: usize) -> Mat {
        let d = d.max(self.d);
        let mut out = Mat::zeros(self.outputs * d, self.inputs * d);
        out.view_mut((0, 0), self.h.shape()).copy_from(&self.h);
        out
    }

    /// Spectral-norm distance after padding both to a common size.
    pub fn distance(&self, other: &HankelEstimate) -> f64 {
        let d = self.d.max(other.d);
        linalg::sigma_max(&(self.padded(d) - other.padded(d)))
    }
}

/// Least-squares Hankel estimate from `T` windows: future outputs
/// `[z_{l+d+1} … z_{l+2d}]` against past inputs `[u_{l+d} … u_{l+1}]`, `l = 0 … T-1`.
pub fn ols_hankel(input: &Trajectory, output: &Trajectory, d: usize, horizon: usize) -> Result<HankelEstimate> {
    let (m, p) = (input.dim(), output.dim());
    if input.len() != output.len() {
        return Err(Error::dim("input and output lengths differ"));
    }
    if d == 0 || horizon <= d * m {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} too short for Hankel size {d} with {m} inputs"
        )));
    }
    if input.len() < horizon + 2 * d - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot hold {horizon} windows of size {d}",
            input.len()
        )));
    }
    let mut past = Mat::zeros(m * d, horizon);
    let mut future = Mat::zeros(p * d, horizon);
    for l in 0..horizon {
        for j in 0..d {
            past.view_mut((j * m, l), (m, 1))
                .copy_from(&input.data.column(l + d - 1 - j));
            future
                .view_mut((j * p, l), (p, 1))
                .copy_from(&output.data.column(l + d + j));
        }
    }
    let gram = &past * past.transpose();
    let cross = &future * past.transpose();
    // H gram = cross, solved through the symmetric system gram Hᵀ = crossᵀ
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("regressor Gramian is singular".into()))?;
    let h = chol.solve(&cross.transpose()).transpose();
    if !linalg::all_finite(&h) {
        return Err(Error::Singular("regressor Gramian is singular".into()));
    }
    Ok(HankelEstimate {
        h,
        d,
        inputs: m,
        outputs: p,
    })
}

/// Outcome of the order rule with its diagnostic table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderChoice {
    pub d_hat: usize,
    /// Smallest size passing the pairwise test (`None` outside the adaptive rule).
    pub d0: Option<usize>,
    pub log_floor: usize,
    /// Admissible sizes examined.
    pub admissible: Vec<usize>,
    /// `(l, h, ‖Ĥ_l - Ĥ_h‖, threshold)` for every examined pair.
    pub distances: Vec<(usize, usize, f64, f64)>,
}

/// `α(h) = √h · √((m + h p + ln(T/δ)) / T)`.
pub fn alpha_width(h: usize, m: usize, p: usize, cfg: &IdConfig) -> f64 {
    let t = cfg.horizon as f64;
    let h = h as f64;
    h.sqrt() * ((m as f64 + h * p as f64 + (t / cfg.fail_prob).ln()) / t).sqrt()
}

/// Largest size in `{d : d ≤ T / (c m² ln³(T m / δ))}`, capped at `max_order`.
pub fn admissible_max(m: usize, cfg: &IdConfig) -> usize {
    let t = cfg.horizon as f64;
    let lg = (t * m as f64 / cfg.fail_prob).ln();
    let bound = t / (cfg.dim_const * (m * m) as f64 * lg.powi(3));
    (bound.floor().max(0.0) as usize).min(cfg.max_order)
}

/// Hankel size for the data.
pub fn choose_order(data: &ExperimentData, dcf: &Dcf, cfg: &IdConfig) -> Result<OrderChoice> {
    cfg.validate()?;
    let log_floor = cfg.log_floor();
    match cfg.order_mode {
        OrderMode::Fixed(d) => Ok(OrderChoice {
            d_hat: d,
            d0: None,
            log_floor,
            admissible: vec![],
            distances: vec![],
        }),
        OrderMode::LogHorizon => Ok(OrderChoice {
            d_hat: log_floor,
            d0: None,
            log_floor,
            admissible: vec![],
            distances: vec![],
        }),
        OrderMode::Adaptive => {
            let (input, output) = data.regression_pair(dcf, cfg.regressor)?;
            let (m, p) = (input.dim(), output.dim());
            let top = admissible_max(m, cfg);
            if top == 0 {
                return Err(Error::InvalidArgument(format!(
                    "T too small: no admissible Hankel size at horizon {}",
                    cfg.horizon
                )));
            }
            let sizes: Vec<usize> = (1..=top).collect();
            let estimates = sizes
                .iter()
                .map(|&d| ols_hankel(&input, &output, d, cfg.horizon))
                .collect::<Result<Vec<_>>>()?;
            let scale = 16.0 * cfg.beta * cfg.r_const;
            let mut distances = Vec::new();
            let mut d0 = None;
            for (i, &l) in sizes.iter().enumerate() {
                let mut pass = true;
                for (j, &h) in sizes.iter().enumerate().skip(i) {
                    let dist = estimates[i].distance(&estimates[j]);
                    let thr = scale * (alpha_width(h, m, p, cfg) + 2.0 * alpha_width(l, m, p, cfg));
                    distances.push((l, h, dist, thr));
                    pass &= dist <= thr;
                }
                if pass && d0.is_none() {
                    d0 = Some(l);
                }
            }
            let d0 = d0.unwrap_or(top);
            Ok(OrderChoice {
                d_hat: d0.max(log_floor),
                d0: Some(d0),
                log_floor,
                admissible: sizes,
                distances,
            })
        }
    }
}

/// State-space estimate `(A, B, C)` of the dual-Youla parameter (no feedthrough).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationEstimate {
    pub system: StateSpace,
    pub order: usize,
    /// Singular values of the padded Hankel matrix, largest first.
    pub singular_values: Vec<f64>,
    pub stable: bool,
}

impl RealizationEstimate {
    pub fn a(&self) -> &Mat {
        &self.system.a
    }
    pub fn b(&self) -> &Mat {
        &self.system.b
    }
    pub fn c(&self) -> &Mat {
        &self.system.c
    }

    /// Clip the singular values of `A` to `radius`, making the estimate stable.
    pub fn clipped(&self, radius: f64) -> RealizationEstimate {
        let (u, s, vt) = linalg::svd_sorted(&self.system.a);
        let s = Mat::from_diagonal(&s.map(|v| v.min(radius)));
        let mut system = self.system.clone();
        system.a = u * s * vt;
        RealizationEstimate {
            stable: system.is_stable(),
            system,
            ..self.clone()
        }
    }
}

/// SVD realization of a Hankel estimate padded to `4pd x 4md`.
pub fn ho_kalman(h: &HankelEstimate, order_cap: Option<usize>, rank_tol: f64) -> Result<RealizationEstimate> {
    let (p, m, d) = (h.outputs, h.inputs, h.d);
    let big = h.padded(4 * d);
    let (u, s, vt) = linalg::svd_sorted(&big);
    let smax = s.max();
    let rank = s.iter().filter(|&&v| v > rank_tol * smax && v > 0.0).count();
    if smax <= 0.0 || rank == 0 {
        return Err(Error::Singular("Hankel estimate has no significant singular value".into()));
    }
    let order = rank.min(d).min(order_cap.unwrap_or(usize::MAX)).max(1);
    let root = s.rows(0, order).map(f64::sqrt);
    let obs = u.columns(0, order) * Mat::from_diagonal(&root);
    let ctr = Mat::from_diagonal(&root) * vt.rows(0, order);
    let c = obs.rows(0, p).into_owned();
    let b = ctr.columns(0, m).into_owned();
    let rows = obs.nrows();
    let z0 = obs.rows(0, rows - p).into_owned();
    let z1 = obs.rows(p, rows - p).into_owned();
    let a = z0
        .clone()
        .svd(true, true)
        .solve(&z1, 1e-14 * smax)
        .map_err(|e| Error::Singular(format!("shift equation: {e}")))?;
    let system = StateSpace::new(a, b, c, Mat::zeros(p, m))?;
    Ok(RealizationEstimate {
        stable: system.is_stable(),
        system,
        order,
        singular_values: s.iter().cloned().collect(),
    })
}

/// Ho-Kalman with the order caps of `cfg`; `error_bound` is the Hankel error
/// bound used as the singular-value floor when `cfg.truncate_at_bound` is set.
/// An estimate with nothing above the floor (or exactly zero) realizes as the zero system.
pub fn realize(h: &HankelEstimate, error_bound: f64, cfg: &IdConfig) -> Result<RealizationEstimate> {
    let mut cap = cfg.realization_order;
    let (_, sv, _) = linalg::svd_sorted(&h.padded(4 * h.d));
    if cfg.truncate_at_bound {
        let keep = noise_floor_order(sv.as_slice(), error_bound);
        cap = Some(cap.map_or(keep, |c| c.min(keep)));
    }
    if h.h.amax() == 0.0 || cap == Some(0) {
        return Ok(RealizationEstimate {
            system: StateSpace::zero(h.outputs, h.inputs),
            order: 0,
            singular_values: sv.iter().cloned().collect(),
            stable: true,
        });
    }
    ho_kalman(h, cap, cfg.rank_tol)
}

/// Number of singular values strictly above `floor`.
pub fn noise_floor_order(singular_values: &[f64], floor: f64) -> usize {
    singular_values.iter().filter(|&&s| s > floor).count()
}

/// `12 c β R √((m d + p d² + d ln(T/δ)) / T)`.
pub fn hankel_error_bound(cfg: &IdConfig, d: usize, inputs: usize, outputs: usize) -> f64 {
    let t = cfg.horizon as f64;
    let d = d as f64;
    let inner = inputs as f64 * d + outputs as f64 * d * d + d * (t / cfg.fail_prob).ln();
    12.0 * cfg.c_const * cfg.beta * cfg.r_const * (inner / t).sqrt()
}

/// `‖[X Y]‖∞`, the factor converting a parameter error into a coprime-factor radius.
pub fn controller_factor_norm(dcf: &Dcf) -> Result<f64> {
    Ok(norms::hinf_norm(&StateSpace::hstack(&[&dcf.x, &dcf.y])?, DEFAULT_TOL)?.value)
}

/// Radius on `[ΔM̃ ΔÑ]` implied by a parameter error: `‖[X Y]‖∞ · err`.
pub fn uncertainty_radius(dcf: &Dcf, hankel_err: f64) -> Result<f64> {
    if !(hankel_err >= 0.0) {
        return Err(Error::InvalidArgument("error must be nonnegative".into()));
    }
    Ok(controller_factor_norm(dcf)? * hankel_err)
}

/// Factorization of the plant generated by `R`: `M̃ - R X`, `Ñ + R Y`, `M - X̃ R`,
/// `N + Ỹ R`, with the controller factors unchanged.
pub fn model_from_r(dcf: &Dcf, r_hat: &RealizationEstimate) -> Result<Dcf> {
    let r = &r_hat.system;
    if r.ny() != dcf.outputs() || r.nu() != dcf.inputs() {
        return Err(Error::dim("parameter must be outputs x inputs"));
    }
    if !r.is_stable() {
        return Err(Error::Unstable("identified parameter is unstable".into()));
    }
    let tol = 1e-10;
    Ok(Dcf {
        mt: dcf.mt.sub(&r.mul(&dcf.x)?)?.reduce(tol),
        nt: dcf.nt.add(&r.mul(&dcf.y)?)?.reduce(tol),
        m: dcf.m.sub(&dcf.xt.mul(r)?)?.reduce(tol),
        n: dcf.n.add(&dcf.yt.mul(r)?)?.reduce(tol),
        ..dcf.clone()
    })
}

/// Markov-parameter count after which a stable system's impulse response is below `tol`.
pub fn settling_length(sys: &StateSpace, tol: f64, max_len: usize) -> usize {
    let mk = sys.markov_params(max_len);
    let mut last = 1;
    for (i, c) in mk.coeffs.iter().enumerate() {
        if c.amax() > tol {
            last = i + 1;
        }
    }
    last
}

/// `‖Ĥ - H_{∞,∞}‖₂` against the exact Hankel of `truth`, truncated where its
/// impulse response has decayed.
pub fn hankel_error(estimate: &HankelEstimate, truth: &StateSpace) -> f64 {
    let len = settling_length(truth, 1e-13, 4000);
    let d = estimate.d.max(len / 2 + 1);
    let exact = HankelEstimate::exact(truth, d);
    exact.distance(estimate)
}

/// Random input vectors at every `spacing`-th sample and zero elsewhere.
///
/// With `spacing = 2d` no regression window sees input in both its past and its
/// future half, so noiseless data from a system with fewer than `d` Markov
/// parameters yields the Hankel matrix exactly.
pub fn spaced_impulses(dim: usize, len: usize, spacing: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Mat::zeros(dim, len);
    for t in (0..len).step_by(spacing.max(1)) {
        for i in 0..dim {
            data[(i, t)] = StandardNormal.sample(&mut rng);
        }
    }
    Trajectory::new(data)
}
