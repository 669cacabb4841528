//! Block semidefinite programs and a primal-dual interior-point solver.
//!
//! Problems are stated in primal standard form
//!
//! ```text
//! minimize    sum_b <C_b, X_b> + c'x + x'Hx / 2
//! subject to  sum_b <A_ib, X_b> + a_i'x = b_i,   X_b PSD,   x free
//! ```
//!
//! An affine matrix inequality is written with a slack PSD block whose entries
//! are tied to the affine expression by equality constraints.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// `value * X_block[row, col]` inside a linear form. For off-diagonal
/// positions the symmetric partner is implied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<Term>,
    /// `(index, coefficient)` pairs on the free vector.
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    /// Sizes of the PSD blocks.
    pub blocks: Vec<usize>,
    /// Length of the free vector.
    pub free: usize,
    pub constraints: Vec<Constraint>,
    /// Linear objective on the PSD blocks.
    pub cost: Vec<Term>,
    /// Linear objective on the free vector (empty means zero).
    pub free_cost: Vec<f64>,
    /// Optional PSD weight `H` of `x'Hx / 2`, row-major.
    pub free_quadratic: Option<Vec<Vec<f64>>>,
}

impl SdpProblem {
    pub fn add_block(&mut self, size: usize) -> usize {
        self.blocks.push(size);
        self.blocks.len() - 1
    }

    /// Append `count` free variables and return the index of the first.
    pub fn add_free(&mut self, count: usize) -> usize {
        let start = self.free;
        self.free += count;
        if !self.free_cost.is_empty() {
            self.free_cost.resize(self.free, 0.0);
        }
        if let Some(h) = self.free_quadratic.as_mut() {
            for row in h.iter_mut() {
                row.resize(start + count, 0.0);
            }
            h.resize(start + count, vec![0.0; start + count]);
        }
        start
    }

    pub fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Fix `X_block[row, col] = value`.
    pub fn fix_entry(&mut self, block: usize, row: usize, col: usize, value: f64) {
        self.push(Constraint {
            terms: vec![Term { block, row, col, value: 1.0 }],
            free: Vec::new(),
            rhs: value,
        });
    }

    pub fn set_free_cost(&mut self, index: usize, value: f64) {
        if self.free_cost.is_empty() {
            self.free_cost = vec![0.0; self.free];
        }
        self.free_cost[index] = value;
    }

    pub fn validate(&self) -> Result<()> {
        let check_term = |t: &Term| -> Result<()> {
            let size = *self
                .blocks
                .get(t.block)
                .ok_or_else(|| Error::dim(format!("term refers to block {}", t.block)))?;
            if t.row >= size || t.col >= size {
                return Err(Error::dim(format!(
                    "entry ({}, {}) outside block {} of size {size}",
                    t.row, t.col, t.block
                )));
            }
            if !t.value.is_finite() {
                return Err(Error::InvalidArgument("non-finite coefficient".into()));
            }
            Ok(())
        };
        for c in &self.constraints {
            c.terms.iter().try_for_each(check_term)?;
            if c.free.iter().any(|&(k, _)| k >= self.free) {
                return Err(Error::dim("constraint refers to a missing free variable"));
            }
            if !c.rhs.is_finite() {
                return Err(Error::InvalidArgument("non-finite right-hand side".into()));
            }
        }
        self.cost.iter().try_for_each(check_term)?;
        if !self.free_cost.is_empty() && self.free_cost.len() != self.free {
            return Err(Error::dim("free cost length differs from the free vector"));
        }
        if let Some(h) = &self.free_quadratic {
            if h.len() != self.free || h.iter().any(|r| r.len() != self.free) {
                return Err(Error::dim("quadratic weight must be square over the free vector"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    /// A dual ray certifies that the constraints admit no PSD point.
    Infeasible,
    /// A primal ray drives the objective to minus infinity.
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub blocks: Vec<Mat>,
    pub free: DVector<f64>,
    pub dual: DVector<f64>,
    pub slack: Vec<Mat>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

/// Anything that can solve an [`SdpProblem`].
pub trait SdpBackend: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution>;
}

/// Infeasible-start path-following method with the HKM direction and
/// Mehrotra predictor-corrector steps.
#[derive(Clone, Copy, Debug)]
pub struct InteriorPoint {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        InteriorPoint { tol: 1e-8, max_iter: 120 }
    }
}

impl SdpBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "interior-point"
    }

    fn solve(&self, problem: &SdpProblem) -> Result<SdpSolution> {
        problem.validate()?;
        Solver::new(problem).run(self.tol, self.max_iter)
    }
}

/// Constraint `i` restricted to one block, expanded to both symmetric halves.
type Sparse = Vec<(usize, usize, f64)>;

struct Solver {
    sizes: Vec<usize>,
    rows: Vec<Vec<(usize, Sparse)>>,
    af: Mat,
    b: DVector<f64>,
    c: Vec<Mat>,
    cf: DVector<f64>,
    h: Mat,
    quadratic: bool,
}

fn expand(terms: &[Term], nblocks: usize) -> Vec<(usize, Sparse)> {
    let mut per: Vec<Sparse> = vec![Vec::new(); nblocks];
    for t in terms {
        if t.row == t.col {
            per[t.block].push((t.row, t.col, t.value));
        } else {
            per[t.block].push((t.row, t.col, 0.5 * t.value));
            per[t.block].push((t.col, t.row, 0.5 * t.value));
        }
    }
    per.into_iter().enumerate().filter(|(_, s)| !s.is_empty()).collect()
}

impl Solver {
    fn new(p: &SdpProblem) -> Self {
        let nb = p.blocks.len();
        let m = p.constraints.len();
        let rows = p.constraints.iter().map(|c| expand(&c.terms, nb)).collect();
        let mut af = Mat::zeros(m, p.free);
        for (i, c) in p.constraints.iter().enumerate() {
            for &(k, v) in &c.free {
                af[(i, k)] += v;
            }
        }
        let b = DVector::from_iterator(m, p.constraints.iter().map(|c| c.rhs));
        let mut c: Vec<Mat> = p.blocks.iter().map(|&n| Mat::zeros(n, n)).collect();
        for (blk, s) in expand(&p.cost, nb) {
            for (r, col, v) in s {
                c[blk][(r, col)] += v;
            }
        }
        let cf = if p.free_cost.is_empty() {
            DVector::zeros(p.free)
        } else {
            DVector::from_column_slice(&p.free_cost)
        };
        let (h, quadratic) = match &p.free_quadratic {
            Some(rows) => (
                linalg::sym(&Mat::from_fn(p.free, p.free, |i, j| rows[i][j])),
                true,
            ),
            None => (Mat::zeros(p.free, p.free), false),
        };
        Solver {
            sizes: p.blocks.clone(),
            rows,
            af,
            b,
            c,
            cf,
            h,
            quadratic,
        }
    }

    fn apply(&self, xs: &[Mat]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                row.iter()
                    .map(|(blk, s)| s.iter().map(|&(r, c, v)| v * xs[*blk][(r, c)]).sum::<f64>())
                    .sum::<f64>()
            }),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<Mat> {
        let mut out: Vec<Mat> = self.sizes.iter().map(|&n| Mat::zeros(n, n)).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for (blk, s) in row {
                for &(r, c, v) in s {
                    out[*blk][(r, c)] += y[i] * v;
                }
            }
        }
        out
    }

    /// Schur complement `M_ij = tr(A_i X A_j Z^-1)`.
    fn schur(&self, xs: &[Mat], zinv: &[Mat]) -> Mat {
        let m = self.rows.len();
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut col = vec![0.0; m - i];
                for (j, cell) in (i..m).zip(col.iter_mut()) {
                    let mut acc = 0.0;
                    for (bi, si) in &self.rows[i] {
                        for (bj, sj) in &self.rows[j] {
                            if bi != bj {
                                continue;
                            }
                            let (x, w) = (&xs[*bi], &zinv[*bi]);
                            for &(r1, c1, v1) in si {
                                for &(r2, c2, v2) in sj {
                                    acc += v1 * v2 * x[(c1, r2)] * w[(c2, r1)];
                                }
                            }
                        }
                    }
                    *cell = acc;
                }
                col
            })
            .collect();
        let mut out = Mat::zeros(m, m);
        for (i, col) in cols.iter().enumerate() {
            for (k, &v) in col.iter().enumerate() {
                out[(i, i + k)] = v;
                out[(i + k, i)] = v;
            }
        }
        out
    }

    fn run(&self, tol: f64, max_iter: usize) -> Result<SdpSolution> {
        let m = self.rows.len();
        let nf = self.af.ncols();
        let ntot: usize = self.sizes.iter().sum();
        let cnorm = self.c.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
        let bnorm = self.b.norm();
        let row_norms: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.iter().flat_map(|(_, s)| s.iter()).map(|t| t.2 * t.2).sum::<f64>().sqrt())
            .collect();
        let mut xi: f64 = 10.0 * (ntot as f64).sqrt().max(1.0);
        let mut eta: f64 = xi;
        for (i, &rn) in row_norms.iter().enumerate() {
            xi = xi.max(10.0 * (1.0 + self.b[i].abs()) / (1.0 + rn));
            eta = eta.max(10.0 * rn);
        }
        eta = eta.max(10.0 * cnorm);
        let mut xs: Vec<Mat> = self.sizes.iter().map(|&n| Mat::identity(n, n) * xi).collect();
        let mut zs: Vec<Mat> = self.sizes.iter().map(|&n| Mat::identity(n, n) * eta).collect();
        let mut y = DVector::<f64>::zeros(m);
        let mut xf = DVector::<f64>::zeros(nf);
        let pscale = 1.0 + bnorm;
        let dscale = 1.0 + cnorm + self.cf.norm();

        for iter in 0..max_iter {
            let rp = &self.b - self.apply(&xs) - &self.af * &xf;
            let aty = self.adjoint(&y);
            let rd: Vec<Mat> = (0..xs.len()).map(|k| &self.c[k] - &aty[k] - &zs[k]).collect();
            let rf = &self.cf + &self.h * &xf - self.af.transpose() * &y;
            let gap: f64 = xs.iter().zip(&zs).map(|(x, z)| x.dot(z)).sum();
            let mu = if ntot > 0 { gap / ntot as f64 } else { 0.0 };
            let quad = 0.5 * xf.dot(&(&self.h * &xf));
            let lin: f64 = self.c.iter().zip(&xs).map(|(c, x)| c.dot(x)).sum::<f64>() + self.cf.dot(&xf);
            let pobj = lin + quad;
            let dobj = self.b.dot(&y) - quad;
            let prel = rp.norm() / pscale;
            let drel = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rf.norm_squared()).sqrt() / dscale;
            let grel = gap / (1.0 + pobj.abs() + dobj.abs());
            if !(prel.is_finite() && drel.is_finite() && grel.is_finite()) {
                return Err(Error::NoConvergence("sdp iterates became non-finite".into()));
            }
            let finish = |status| SdpSolution {
                status,
                blocks: xs.clone(),
                free: xf.clone(),
                dual: y.clone(),
                slack: zs.clone(),
                primal_objective: pobj,
                dual_objective: dobj,
                primal_residual: prel,
                dual_residual: drel,
                iterations: iter,
            };
            if prel <= tol && drel <= tol && grel <= tol {
                return Ok(finish(SdpStatus::Optimal));
            }
            let by = self.b.dot(&y);
            if by > 0.0 {
                // dual ray: A'y + Z = C - Rd with b'y growing
                let lhs = (self.c.iter().zip(&rd).map(|(c, r)| (c - r).norm_squared()).sum::<f64>()
                    + (&self.cf + &self.h * &xf - &rf).norm_squared())
                .sqrt();
                if lhs / by < tol && prel > tol {
                    return Ok(finish(SdpStatus::Infeasible));
                }
            }
            if lin < 0.0 && !self.quadratic {
                let ax = (&self.b - &rp).norm();
                if ax / -lin < tol && drel > tol {
                    return Ok(finish(SdpStatus::Unbounded));
                }
            }

            let zinv: Vec<Mat> = zs
                .iter()
                .map(|z| spd_inverse(z))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::NoConvergence("sdp slack lost definiteness".into()))?;
            let schur = self.schur(&xs, &zinv);
            let mut kkt = Mat::zeros(m + nf, m + nf);
            kkt.view_mut((0, 0), (m, m)).copy_from(&schur);
            kkt.view_mut((0, m), (m, nf)).copy_from(&self.af);
            kkt.view_mut((m, 0), (nf, m)).copy_from(&self.af.transpose());
            kkt.view_mut((m, m), (nf, nf)).copy_from(&(-&self.h));
            let lu = kkt.clone().lu();

            let hkm = |k: usize, r: &Mat| linalg::sym(&(&xs[k] * r * &zinv[k]));
            let direction = |e: &[Mat]| -> Result<(DVector<f64>, DVector<f64>, Vec<Mat>, Vec<Mat>)> {
                let shifted: Vec<Mat> = (0..xs.len()).map(|k| &e[k] - hkm(k, &rd[k])).collect();
                let mut rhs = DVector::<f64>::zeros(m + nf);
                rhs.rows_mut(0, m).copy_from(&(&rp - self.apply(&shifted)));
                rhs.rows_mut(m, nf).copy_from(&rf);
                let mut sol = if m + nf == 0 { Some(rhs.clone()) } else { lu.solve(&rhs) }
                    .ok_or_else(|| Error::NoConvergence("sdp Newton system is singular".into()))?;
                // one step of iterative refinement
                if m + nf > 0 {
                    let res = &rhs - &kkt * &sol;
                    if let Some(fix) = lu.solve(&res) {
                        sol += fix;
                    }
                }
                if sol.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NoConvergence("sdp Newton system is ill-conditioned".into()));
                }
                let dy = sol.rows(0, m).into_owned();
                let dxf = sol.rows(m, nf).into_owned();
                let atdy = self.adjoint(&dy);
                let dz: Vec<Mat> = (0..xs.len()).map(|k| &rd[k] - &atdy[k]).collect();
                let dx: Vec<Mat> = (0..xs.len()).map(|k| &e[k] - hkm(k, &dz[k])).collect();
                Ok((dy, dxf, dx, dz))
            };

            let e_aff: Vec<Mat> = xs.iter().map(|x| -x).collect();
            let (_, _, dxa, dza) = direction(&e_aff)?;
            let ap = max_step(&xs, &dxa)?.min(1.0);
            let ad = max_step(&zs, &dza)?.min(1.0);
            let gap_aff: f64 = (0..xs.len())
                .map(|k| (&xs[k] + &dxa[k] * ap).dot(&(&zs[k] + &dza[k] * ad)))
                .sum();
            let sigma = if gap > 0.0 { (gap_aff / gap).clamp(0.0, 1.0).powi(3) } else { 0.0 };
            let e: Vec<Mat> = (0..xs.len())
                .map(|k| {
                    &zinv[k] * (sigma * mu) - &xs[k] - linalg::sym(&(&dxa[k] * &dza[k] * &zinv[k]))
                })
                .collect();
            let (dy, dxf, dx, dz) = direction(&e)?;
            let tau = if iter < 2 { 0.9 } else { 0.98 };
            let mut ap = (tau * max_step(&xs, &dx)?).min(1.0);
            let mut ad = (tau * max_step(&zs, &dz)?).min(1.0);
            if self.quadratic {
                ap = ap.min(ad);
                ad = ap;
            }
            for k in 0..xs.len() {
                xs[k] += &dx[k] * ap;
                zs[k] += &dz[k] * ad;
                xs[k] = linalg::sym(&xs[k]);
                zs[k] = linalg::sym(&zs[k]);
            }
            xf += dxf * ap;
            y += dy * ad;
        }
        Err(Error::NoConvergence(format!("sdp did not converge in {max_iter} iterations")))
    }
}

fn spd_inverse(z: &Mat) -> Option<Mat> {
    if z.nrows() == 0 {
        return Some(Mat::zeros(0, 0));
    }
    let chol = z.clone().cholesky()?;
    Some(linalg::sym(&chol.inverse()))
}

/// Largest step `a` keeping every `x + a dx` positive semidefinite.
fn max_step(xs: &[Mat], dxs: &[Mat]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (x, dx) in xs.iter().zip(dxs) {
        if x.nrows() == 0 {
            continue;
        }
        let chol = x
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NoConvergence("sdp iterate lost definiteness".into()))?;
        let l = chol.l();
        let left = l
            .solve_lower_triangular(dx)
            .ok_or_else(|| Error::NoConvergence("sdp step: singular factor".into()))?;
        let scaled = l
            .solve_lower_triangular(&left.transpose())
            .ok_or_else(|| Error::NoConvergence("sdp step: singular factor".into()))?;
        let low = linalg::min_eig_sym(&scaled);
        if low < 0.0 {
            best = best.min(-1.0 / low);
        }
    }
    Ok(best)
}

/// Read a dense matrix back from the row-major quadratic weight.
pub fn quadratic_rows(h: &Mat) -> Vec<Vec<f64>> {
    crate::lti::mat_to_rows(h)
}
