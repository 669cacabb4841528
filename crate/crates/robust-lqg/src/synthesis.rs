//! Robust LQG synthesis: an outer scalar search over the H∞ budget of the
//! factor map and an inner convex program over FIR Youla parameters.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{self, Dcf, YoulaParam};
use crate::linalg::Mat;
use crate::lti::{FirSeries, StateSpace};
use crate::norms;
use crate::sdp::{Constraint, SdpBackend, SdpProblem, SdpStatus, Term};
use crate::uncertainty;

/// Tail mass allowed when truncating the factors to FIR.
pub const TRUNC_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub gamma: f64,
    /// Cap on the factor-map H∞ norm. `None` picks twice the norm of the
    /// central factor map.
    pub alpha: Option<f64>,
    /// Number of Youla FIR taps.
    pub fir_len: usize,
    pub delta_grid: usize,
    pub refine_iters: usize,
    pub sdp_tol: f64,
    pub trunc_tol: f64,
    /// Longest factor truncation accepted before giving up.
    pub max_factor_len: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            gamma: 0.05,
            alpha: None,
            fir_len: 20,
            delta_grid: 24,
            refine_iters: 20,
            sdp_tol: 1e-8,
            trunc_tol: TRUNC_TOL,
            max_factor_len: 400,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad("alpha must be positive");
            }
        }
        if self.fir_len < 1 {
            return bad("fir_len must be at least 1");
        }
        if self.delta_grid < 1 {
            return bad("delta_grid must be at least 1");
        }
        if !(self.sdp_tol > 0.0 && self.sdp_tol < 1e-2) {
            return bad("sdp_tol must lie in (0, 1e-2)");
        }
        if !(self.trunc_tol > 0.0) {
            return bad("trunc_tol must be positive");
        }
        Ok(())
    }
}

/// Coefficients of `[Ỹ_Q; X̃_Q] = [Ỹ; X̃] + [-N; M] Q` as `cbar + phat * vec(q)`.
///
/// Coefficient `t` of the map is stored column-major at offset
/// `t * rows * cols`; `vec(q)` stacks the taps the same way.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    /// `p + m`.
    pub rows: usize,
    /// `p`, the number of plant outputs.
    pub cols: usize,
    /// `m`, the number of plant inputs.
    pub inputs: usize,
    pub taps: usize,
    /// Number of coefficients of the factor map.
    pub len: usize,
    pub cbar: DVector<f64>,
    pub phat: Mat,
    /// Truncation length used for the factors.
    pub factor_len: usize,
    /// Tail mass dropped from the factors.
    pub tail: f64,
}

impl AffineMap {
    pub fn q_dim(&self) -> usize {
        self.inputs * self.cols * self.taps
    }

    pub fn q_vec(&self, q: &FirSeries) -> Result<DVector<f64>> {
        if q.shape() != (self.inputs, self.cols) || q.len() > self.taps {
            return Err(Error::dim("Youla FIR does not fit the affine map"));
        }
        let mut v = DVector::zeros(self.q_dim());
        for (s, c) in q.coeffs.iter().enumerate() {
            let at = s * self.inputs * self.cols;
            v.rows_mut(at, c.len()).copy_from_slice(c.as_slice());
        }
        Ok(v)
    }

    pub fn q_from_vec(&self, v: &DVector<f64>) -> FirSeries {
        let block = self.inputs * self.cols;
        FirSeries {
            coeffs: (0..self.taps)
                .map(|s| Mat::from_column_slice(self.inputs, self.cols, &v.as_slice()[s * block..(s + 1) * block]))
                .collect(),
        }
    }

    /// Factor-map coefficients for a stacked Youla vector.
    pub fn coefficients(&self, qv: &DVector<f64>) -> FirSeries {
        let f = &self.cbar + &self.phat * qv;
        let block = self.rows * self.cols;
        FirSeries {
            coeffs: (0..self.len)
                .map(|t| Mat::from_column_slice(self.rows, self.cols, &f.as_slice()[t * block..(t + 1) * block]))
                .collect(),
        }
    }

    /// The same map written for the transposed coefficients.
    pub fn transposed(&self) -> AffineFir {
        let (r, c) = (self.rows, self.cols);
        let block = r * c;
        let n = self.len * block;
        let perm: Vec<usize> = (0..n)
            .map(|e| {
                // entry (i, j) of coefficient t of the transpose, stored column-major with c rows
                let t = e / block;
                let k = e % block;
                let (i, j) = (k % c, k / c);
                t * block + i * r + j
            })
            .collect();
        AffineFir {
            rows: c,
            cols: r,
            len: self.len,
            constant: DVector::from_fn(n, |e, _| self.cbar[perm[e]]),
            linear: Some((0, Mat::from_fn(n, self.phat.ncols(), |e, k| self.phat[(perm[e], k)]))),
        }
    }
}

/// Truncate a stable system to the shortest FIR whose dropped tail has
/// coefficient-norm mass at most `tol`. Returns the series and the tail mass.
pub fn fir_truncation(sys: &StateSpace, tol: f64, max_len: usize) -> Result<(FirSeries, f64)> {
    if sys.nx() == 0 {
        return Ok((FirSeries { coeffs: vec![sys.d.clone()] }, 0.0));
    }
    let rho = sys.spectral_radius()?;
    if rho >= 1.0 - crate::lti::STABILITY_MARGIN {
        return Err(Error::Unstable("cannot truncate an unstable factor".into()));
    }
    let horizon = 2 * max_len + sys.nx() + 1;
    let series = sys.markov_params(horizon);
    let norms: Vec<f64> = series.coeffs.iter().map(|c| c.norm()).collect();
    let beyond = norms[horizon - 1] * rho / (1.0 - rho).max(1e-12);
    let mut tail = vec![0.0; horizon + 1];
    tail[horizon] = beyond;
    for k in (0..horizon).rev() {
        tail[k] = tail[k + 1] + norms[k];
    }
    let len = (1..=horizon).find(|&l| tail[l] <= tol).unwrap_or(horizon + 1);
    if len > max_len {
        return Err(Error::InvalidArgument(format!(
            "factor truncation needs {len} coefficients for tail {tol:e}, above the limit {max_len}"
        )));
    }
    Ok((series.resized(len), tail[len]))
}

/// Stack the factor coefficients and the convolution operator acting on the
/// Youla taps.
pub fn build_affine_map(dcf: &Dcf, taps: usize, trunc_tol: f64, max_len: usize) -> Result<AffineMap> {
    if taps == 0 {
        return Err(Error::InvalidArgument("at least one Youla tap is needed".into()));
    }
    let (p, m) = (dcf.outputs(), dcf.inputs());
    let central_sys = dcf.central_map()?;
    let right_sys = StateSpace::vstack(&[&dcf.n.neg(), &dcf.m])?;
    let (central, tail_c) = fir_truncation(&central_sys, trunc_tol, max_len)?;
    let (right, tail_r) = fir_truncation(&right_sys, trunc_tol, max_len)?;
    let flen = central.len().max(right.len());
    let central = central_sys.markov_params(flen);
    let right = right_sys.markov_params(flen);
    let rows = p + m;
    let len = flen + taps - 1;
    let block = rows * p;
    let qblock = m * p;
    let mut cbar = DVector::zeros(len * block);
    for (t, c) in central.coeffs.iter().enumerate() {
        cbar.rows_mut(t * block, block).copy_from_slice(c.as_slice());
    }
    // vec(P Q) = (I_p ⊗ P) vec(Q)
    let mut phat = Mat::zeros(len * block, taps * qblock);
    for t in 0..len {
        for s in 0..taps.min(t + 1) {
            let Some(pc) = right.coeffs.get(t - s) else { continue };
            for col in 0..p {
                phat.view_mut((t * block + col * rows, s * qblock + col * m), (rows, m))
                    .copy_from(pc);
            }
        }
    }
    Ok(AffineMap {
        rows,
        cols: p,
        inputs: m,
        taps,
        len,
        cbar,
        phat,
        factor_len: flen,
        tail: tail_c.max(tail_r),
    })
}

/// FIR coefficients affine in a block of free variables, stacked like
/// [`AffineMap::cbar`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFir {
    pub rows: usize,
    pub cols: usize,
    pub len: usize,
    pub constant: DVector<f64>,
    /// First free variable and the coefficient matrix acting on the block.
    pub linear: Option<(usize, Mat)>,
}

impl AffineFir {
    pub fn constant(f: &FirSeries) -> Self {
        let (rows, cols) = f.shape();
        let block = rows * cols;
        let mut constant = DVector::zeros(f.len() * block);
        for (t, c) in f.coeffs.iter().enumerate() {
            constant.rows_mut(t * block, block).copy_from_slice(c.as_slice());
        }
        AffineFir { rows, cols, len: f.len(), constant, linear: None }
    }
}

/// How the bound enters the LMI.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LmiBound {
    Fixed(f64),
    /// Index of a free variable holding the bound.
    Free(usize),
}

/// Append the trace-parameterized bounded-real LMI for `‖F‖∞ ≤ bound`:
///
/// `[[S, F], [F', bound I]] ⪰ 0` with `Σ_i S_{i+k,i} = bound ξ(k) I`, where `F`
/// stacks the coefficients vertically and `S` has `rows * len` rows.
///
/// With `shift = Some(t)` the PSD block is `X = [[S, F], [F', bound I]] + t I`
/// instead, so minimizing `t` measures how far the LMI is from feasibility.
/// Returns the index of the PSD block.
pub fn add_hinf_lmi(problem: &mut SdpProblem, f: &AffineFir, bound: LmiBound, shift: Option<usize>) -> usize {
    let (r, c, len) = (f.rows, f.cols, f.len);
    let ns = r * len;
    let blk = problem.add_block(ns + c);
    let (bound_rhs, bound_free) = match bound {
        LmiBound::Fixed(v) => (v, None),
        LmiBound::Free(k) => (0.0, Some(k)),
    };
    for k in 0..len {
        for a in 0..r {
            let lo = if k == 0 { a } else { 0 };
            for b in lo..r {
                let terms: Vec<Term> = (0..len - k)
                    .map(|i| Term { block: blk, row: (i + k) * r + a, col: i * r + b, value: 1.0 })
                    .collect();
                let mut free = Vec::new();
                let mut rhs = 0.0;
                if k == 0 && a == b {
                    rhs = bound_rhs;
                    if let Some(bk) = bound_free {
                        free.push((bk, -1.0));
                    }
                    if let Some(t) = shift {
                        free.push((t, -(len as f64)));
                    }
                }
                problem.push(Constraint { terms, free, rhs });
            }
        }
    }
    let block = r * c;
    for t in 0..len {
        for j in 0..c {
            for i in 0..r {
                let e = t * block + j * r + i;
                let mut free = Vec::new();
                if let Some((first, lin)) = &f.linear {
                    for (k, &v) in lin.row(e).iter().enumerate() {
                        if v != 0.0 {
                            free.push((first + k, -v));
                        }
                    }
                }
                problem.push(Constraint {
                    terms: vec![Term { block: blk, row: t * r + i, col: ns + j, value: 1.0 }],
                    free,
                    rhs: f.constant[e],
                });
            }
        }
    }
    for a in 0..c {
        for b in 0..=a {
            let mut free = Vec::new();
            let mut rhs = 0.0;
            if a == b {
                rhs = bound_rhs;
                if let Some(bk) = bound_free {
                    free.push((bk, -1.0));
                }
                if let Some(t) = shift {
                    free.push((t, -1.0));
                }
            }
            problem.push(Constraint {
                terms: vec![Term { block: blk, row: ns + a, col: ns + b, value: 1.0 }],
                free,
                rhs,
            });
        }
    }
    blk
}

/// Feasibility problem of the bounded-real LMI for a fixed FIR and bound.
pub fn hinf_lmi(f: &FirSeries, bound: f64) -> Result<SdpProblem> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument("LMI bound must be positive".into()));
    }
    let mut p = SdpProblem::default();
    add_hinf_lmi(&mut p, &AffineFir::constant(f), LmiBound::Fixed(bound), None);
    Ok(p)
}

/// Smallest `t` with `[[S, F], [F', bound I]] + t I ⪰ 0` under the trace
/// equalities. The LMI is feasible exactly when the margin is `≤ 0`.
pub fn lmi_margin(f: &FirSeries, bound: f64, backend: &dyn SdpBackend) -> Result<f64> {
    let mut p = SdpProblem::default();
    let t = p.add_free(1);
    p.set_free_cost(t, 1.0);
    add_hinf_lmi(&mut p, &AffineFir::constant(f), LmiBound::Fixed(bound), Some(t));
    let sol = backend.solve(&p)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::NoConvergence("LMI margin problem did not solve".into()));
    }
    Ok(sol.free[t])
}

pub fn lmi_feasible(f: &FirSeries, bound: f64, backend: &dyn SdpBackend) -> Result<bool> {
    Ok(lmi_margin(f, bound, backend)? <= 0.0)
}

/// Smallest feasible LMI bound by bisection on [`lmi_feasible`].
pub fn lmi_bisect(f: &FirSeries, rel_tol: f64, backend: &dyn SdpBackend) -> Result<f64> {
    let mut hi: f64 = f.coeffs.iter().map(crate::linalg::sigma_max).sum::<f64>().max(1e-300) * 1.01;
    let mut lo: f64 = 0.0;
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if lmi_feasible(f, mid, backend)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest bound admitted by the LMI, found directly with the bound as a variable.
pub fn lmi_min_bound(f: &FirSeries, backend: &dyn SdpBackend) -> Result<f64> {
    let mut p = SdpProblem::default();
    let g = p.add_free(1);
    p.set_free_cost(g, 1.0);
    add_hinf_lmi(&mut p, &AffineFir::constant(f), LmiBound::Free(g), None);
    let sol = backend.solve(&p)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::NoConvergence("LMI bound problem did not solve".into()));
    }
    Ok(sol.free[g])
}

/// Outcome of one inner program.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InnerSolution {
    pub q: FirSeries,
    /// `‖[Ỹ_Q; X̃_Q]‖_H2` of the truncated map.
    pub h2_value: f64,
    /// `‖[Ỹ_Q; X̃_Q]‖∞` of the truncated map.
    pub hinf_value: f64,
    /// `h(γ, α) * h2_value`.
    pub objective: f64,
}

fn achieved(map: &AffineMap, qv: &DVector<f64>) -> (FirSeries, f64, f64) {
    let coeffs = map.coefficients(qv);
    let h2 = coeffs.h2_norm();
    let hinf = norms::hinf_norm_fir(&coeffs, 1e-9).upper();
    (map.q_from_vec(qv), h2, hinf)
}

/// Smallest H∞ norm of the truncated factor map over all FIR Youla parameters.
pub fn min_factor_hinf(map: &AffineMap, backend: &dyn SdpBackend) -> Result<(f64, FirSeries)> {
    let mut p = SdpProblem::default();
    let first = p.add_free(map.q_dim());
    let g = p.add_free(1);
    p.set_free_cost(g, 1.0);
    let mut fir = map.transposed();
    fir.linear = fir.linear.map(|(_, lin)| (first, lin));
    add_hinf_lmi(&mut p, &fir, LmiBound::Free(g), None);
    let sol = backend.solve(&p)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::NoConvergence("minimal H∞ level did not solve".into()));
    }
    let qv = sol.free.rows(first, map.q_dim()).into_owned();
    Ok((sol.free[g], map.q_from_vec(&qv)))
}

/// Minimize `h(γ, α) ‖cbar + phat q‖₂` subject to `‖[Ỹ_Q; X̃_Q]‖∞ ≤ min(δ, α)`.
pub fn solve_inner_map(
    map: &AffineMap,
    h: f64,
    bound: f64,
    backend: &dyn SdpBackend,
) -> Result<InnerSolution> {
    if !(bound > 0.0) {
        return Err(Error::Infeasible("a zero H∞ budget admits no factor map".into()));
    }
    let nq = map.q_dim();
    let mut p = SdpProblem::default();
    let first = p.add_free(nq);
    let gram = map.phat.transpose() * &map.phat;
    let lin = map.phat.transpose() * &map.cbar;
    p.free_quadratic = Some(crate::lti::mat_to_rows(&gram));
    p.free_cost = lin.iter().cloned().collect();
    let mut fir = map.transposed();
    fir.linear = fir.linear.map(|(_, l)| (first, l));
    add_hinf_lmi(&mut p, &fir, LmiBound::Fixed(bound), None);
    let sol = backend.solve(&p)?;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => {
            return Err(Error::Infeasible(format!("no FIR Youla parameter reaches H∞ level {bound}")))
        }
        SdpStatus::Unbounded => return Err(Error::NoConvergence("inner program reported unbounded".into())),
    }
    let qv = sol.free.rows(first, nq).into_owned();
    let (q, h2, hinf) = achieved(map, &qv);
    Ok(InnerSolution { q, h2_value: h2, hinf_value: hinf, objective: h * h2 })
}

/// Inner program on a DCF with `n` Youla taps.
pub fn solve_inner(
    dcf: &Dcf,
    gamma: f64,
    alpha: f64,
    delta: f64,
    n: usize,
    backend: &dyn SdpBackend,
) -> Result<InnerSolution> {
    if !(gamma >= 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("gamma must be nonnegative and alpha positive".into()));
    }
    if gamma > 0.0 && delta >= 1.0 / gamma {
        return Err(Error::InvalidArgument("delta must lie below 1/gamma".into()));
    }
    let map = build_affine_map(dcf, n, TRUNC_TOL, 400)?;
    let h = uncertainty::h_func(gamma, alpha, uncertainty::nominal_norm(dcf)?);
    solve_inner_map(&map, h, delta.min(alpha), backend)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub q_star: FirSeries,
    pub delta_star: f64,
    /// Outer objective `h(γ, α) ‖·‖_H2 / (1 − γ δ*)` at the optimum.
    pub upper_bound: f64,
    pub factor_hinf: f64,
    pub factor_h2: f64,
    pub controller: StateSpace,
    pub gamma: f64,
    pub alpha: f64,
    /// Smallest H∞ level any FIR Youla parameter reaches.
    pub delta_min: f64,
    pub nominal_norm: f64,
    /// Every `(δ, objective)` evaluated by the search; infeasible points carry infinity.
    pub evaluations: Vec<(f64, f64)>,
}

/// `2 ‖[Ỹ; X̃]‖∞`, the default cap on the factor-map norm.
pub fn default_alpha(dcf: &Dcf) -> Result<f64> {
    Ok(2.0 * norms::hinf_norm(&dcf.central_map()?, norms::DEFAULT_TOL)?.upper())
}

/// Quasi-convex search over `δ` followed by assembly of the controller.
pub fn solve_outer(dcf: &Dcf, config: &SynthesisConfig, backend: &dyn SdpBackend) -> Result<SynthesisResult> {
    config.validate()?;
    let gamma = config.gamma;
    let alpha = match config.alpha {
        Some(a) => a,
        None => default_alpha(dcf)?,
    };
    let map = build_affine_map(dcf, config.fir_len, config.trunc_tol, config.max_factor_len)?;
    let nominal = uncertainty::nominal_norm(dcf)?;
    let h = uncertainty::h_func(gamma, alpha, nominal);
    let top = alpha.min((1.0 - 1e-6) / gamma);
    let (delta_min, _) = min_factor_hinf(&map, backend)?;
    if delta_min >= top {
        return Err(Error::Infeasible(format!(
            "smallest achievable H∞ level {delta_min:.6e} is not below min(alpha, 1/gamma) = {top:.6e}"
        )));
    }
    let eval = |delta: f64| -> (f64, Option<InnerSolution>) {
        match solve_inner_map(&map, h, delta.min(alpha), backend) {
            Ok(sol) => (sol.objective / (1.0 - gamma * delta), Some(sol)),
            Err(_) => (f64::INFINITY, None),
        }
    };
    // the objective is infinite below delta_min, so the grid covers the feasible part
    let grid: Vec<f64> = (1..=config.delta_grid)
        .map(|k| delta_min + (top - delta_min) * k as f64 / config.delta_grid as f64)
        .collect();
    let points: Vec<(f64, f64, Option<InnerSolution>)> = grid
        .par_iter()
        .map(|&d| {
            let (v, s) = eval(d);
            (d, v, s)
        })
        .collect();
    let mut evaluations: Vec<(f64, f64)> = points.iter().map(|(d, v, _)| (*d, *v)).collect();
    let best_idx = (0..points.len())
        .min_by(|&i, &j| points[i].1.total_cmp(&points[j].1))
        .expect("nonempty grid");
    if !points[best_idx].1.is_finite() {
        return Err(Error::Infeasible(format!(
            "every δ grid point failed; smallest achievable H∞ level {delta_min:.6e}"
        )));
    }
    let mut best = (points[best_idx].0, points[best_idx].1, points[best_idx].2.clone().expect("feasible"));
    let mut a = if best_idx == 0 { delta_min } else { grid[best_idx - 1] };
    let mut b = if best_idx + 1 == grid.len() { top } else { grid[best_idx + 1] };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, sc) = eval(c);
    let (mut fd, sd) = eval(d);
    evaluations.push((c, fc));
    evaluations.push((d, fd));
    for (x, v, s) in [(c, fc, sc), (d, fd, sd)] {
        if v < best.1 {
            best = (x, v, s.expect("finite value has a solution"));
        }
    }
    for _ in 0..config.refine_iters.saturating_sub(2) {
        let (x, v, s) = if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            let (v, s) = eval(c);
            fc = v;
            (c, v, s)
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            let (v, s) = eval(d);
            fd = v;
            (d, v, s)
        };
        evaluations.push((x, v));
        if v < best.1 {
            best = (x, v, s.expect("finite value has a solution"));
        }
    }
    let (delta_star, upper_bound, inner) = best;
    let controller = factorization::youla_controller(dcf, &YoulaParam::Fir(inner.q.clone()))?.controller;
    Ok(SynthesisResult {
        q_star: inner.q,
        delta_star,
        upper_bound,
        factor_hinf: inner.hinf_value,
        factor_h2: inner.h2_value,
        controller,
        gamma,
        alpha,
        delta_min,
        nominal_norm: nominal,
        evaluations,
    })
}

/// Relative LQG excess bound `g(γ, ‖·‖∞)² / (1 − γ ‖·‖∞)² − 1` for a synthesized map.
pub fn suboptimality_bound(result: &SynthesisResult, gamma: f64, nominal_norm: f64) -> Result<f64> {
    let eta = gamma * result.factor_hinf;
    if eta >= 1.0 {
        return Err(Error::InvalidArgument(format!("γ ‖·‖∞ = {eta} is not below one")));
    }
    Ok(uncertainty::relative_error_bound(gamma, result.factor_hinf, nominal_norm))
}
