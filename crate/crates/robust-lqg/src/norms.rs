//! H2 and H∞ norms of stable discrete-time systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::{self, FirSeries, StateSpace};

/// Default relative tolerance for H∞ computations.
pub const DEFAULT_TOL: f64 = 1e-6;

/// How a norm value was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    Gramian,
    BisectionInterval { lo: f64, hi: f64 },
    GridPeak { omega: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormResult {
    pub value: f64,
    pub certificate: Certificate,
}

impl NormResult {
    /// Largest value consistent with the certificate.
    pub fn upper(&self) -> f64 {
        match self.certificate {
            Certificate::BisectionInterval { hi, .. } => hi,
            _ => self.value,
        }
    }

    /// Smallest value consistent with the certificate.
    pub fn lower(&self) -> f64 {
        match self.certificate {
            Certificate::BisectionInterval { lo, .. } => lo,
            _ => self.value,
        }
    }
}

/// H2 norm from the controllability Gramian.
pub fn h2_norm(sys: &StateSpace) -> Result<NormResult> {
    let feed = sys.d.norm_squared();
    if sys.nx() == 0 {
        return Ok(NormResult {
            value: feed.sqrt(),
            certificate: Certificate::Gramian,
        });
    }
    if !sys.is_stable() {
        return Err(Error::Unstable("h2 norm of an unstable system".into()));
    }
    let gram = lti::solve_dlyap(&sys.a, &(&sys.b * sys.b.transpose()))?;
    let state = (&sys.c * gram * sys.c.transpose()).trace().max(0.0);
    Ok(NormResult {
        value: (state + feed).sqrt(),
        certificate: Certificate::Gramian,
    })
}

/// H2 norm of a FIR series (Parseval).
pub fn h2_norm_fir(f: &FirSeries) -> f64 {
    f.coeffs.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt()
}

/// Peak of `eval` over `[0, pi]`: dense grid, then golden-section refinement
/// around the best local maxima. Returns `(omega, value)`.
pub fn grid_peak<F>(eval: F, points: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let grid = lti::frequency_grid(points);
    let vals: Vec<f64> = grid.iter().map(|&w| eval(w)).collect();
    let n = grid.len();
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || vals[i] >= vals[i - 1]) && (i + 1 == n || vals[i] >= vals[i + 1]))
        .collect();
    maxima.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    maxima.truncate(4);
    let mut best = (grid[maxima[0]], vals[maxima[0]]);
    for &i in &maxima {
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(n - 1)];
        let (w, v) = golden_max(&eval, lo, hi, 60);
        if v > best.1 {
            best = (w, v);
        }
    }
    best
}

fn golden_max<F: Fn(f64) -> f64>(eval: &F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    let mut best = if fc > fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d);
        }
        for (w, v) in [(c, fc), (d, fd)] {
            if v > best.1 {
                best = (w, v);
            }
        }
        if b - a < 1e-13 {
            break;
        }
    }
    best
}

fn sigma_at(sys: &StateSpace, w: f64) -> f64 {
    sys.freq_response(w)
        .map(|r| linalg::sigma_max_c(&r))
        .unwrap_or(f64::INFINITY)
}

/// Bilinear map to continuous time, `z = (1 + s) / (1 - s)`.
fn tustin(sys: &StateSpace) -> Result<StateSpace> {
    let n = sys.nx();
    let w = Mat::identity(n, n) + &sys.a;
    let winv = linalg::inverse(&w).ok_or_else(|| Error::Singular("tustin: pole at -1".into()))?;
    let root2 = std::f64::consts::SQRT_2;
    Ok(StateSpace {
        a: &winv * (&sys.a - Mat::identity(n, n)),
        b: &winv * &sys.b * root2,
        c: &sys.c * &winv * root2,
        d: &sys.d - &sys.c * &winv * &sys.b,
    })
}

/// Discrete frequencies in `[0, pi]` where `gamma` is a singular value of the response.
fn crossings(cont: &StateSpace, gamma: f64) -> Result<Vec<f64>> {
    let n = cont.nx();
    let (a, b, c, d) = (&cont.a, &cont.b, &cont.c, &cont.d);
    let r = Mat::identity(d.ncols(), d.ncols()) * (gamma * gamma) - d.transpose() * d;
    let rinv = linalg::inverse(&r).ok_or_else(|| Error::Singular("hamiltonian weight".into()))?;
    let top_left = a + b * &rinv * d.transpose() * c;
    let top_right = b * &rinv * b.transpose();
    let bottom_left = -(c.transpose()
        * (Mat::identity(d.nrows(), d.nrows()) + d * &rinv * d.transpose())
        * c);
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&top_left);
    h.view_mut((0, n), (n, n)).copy_from(&top_right);
    h.view_mut((n, 0), (n, n)).copy_from(&bottom_left);
    h.view_mut((n, n), (n, n)).copy_from(&(-top_left.transpose()));
    let scale = h.norm().max(1.0);
    let mut out: Vec<f64> = lti::eigenvalues(&h)?
        .into_iter()
        .filter(|e| e.im >= 0.0 && e.re.abs() <= 1e-8 * scale.max(e.norm()))
        .map(|e| 2.0 * e.im.atan())
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    Ok(out)
}

/// H∞ norm to relative tolerance `tol`.
///
/// The lower bound comes from a refined grid; the level set iteration on the
/// Hamiltonian of the bilinear-transformed system raises it until no crossing
/// remains at `lo * (1 + tol)`.
pub fn hinf_norm(sys: &StateSpace, tol: f64) -> Result<NormResult> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("hinf tolerance must be positive".into()));
    }
    if sys.nx() == 0 || sys.nu() == 0 || sys.ny() == 0 {
        let value = if sys.nu() == 0 || sys.ny() == 0 { 0.0 } else { linalg::sigma_max(&sys.d) };
        return Ok(NormResult {
            value,
            certificate: Certificate::BisectionInterval { lo: value, hi: value },
        });
    }
    if !sys.is_stable() {
        return Err(Error::Unstable("hinf norm of an unstable system".into()));
    }
    let (w0, mut lo) = grid_peak(|w| sigma_at(sys, w), lti::DEFAULT_GRID);
    if !lo.is_finite() {
        return Err(Error::NoConvergence("hinf norm: non-finite response".into()));
    }
    if lo <= 1e-300 {
        return Ok(NormResult {
            value: 0.0,
            certificate: Certificate::BisectionInterval { lo: 0.0, hi: 0.0 },
        });
    }
    let cont = match tustin(sys) {
        Ok(c) => c,
        Err(_) => return Ok(grid_fallback(w0, lo)),
    };
    for _ in 0..60 {
        let gamma = lo * (1.0 + tol);
        let freqs = match crossings(&cont, gamma) {
            Ok(f) => f,
            Err(_) => return Ok(grid_fallback(w0, lo)),
        };
        if freqs.is_empty() {
            return Ok(NormResult {
                value: 0.5 * (lo + gamma),
                certificate: Certificate::BisectionInterval { lo, hi: gamma },
            });
        }
        let mut probes = freqs.clone();
        probes.extend(freqs.windows(2).map(|p| 0.5 * (p[0] + p[1])));
        let best = probes.iter().map(|&w| sigma_at(sys, w)).fold(lo, f64::max);
        if best <= lo * (1.0 + 0.25 * tol) {
            // crossings that do not raise the bound are rounding artifacts
            return Ok(NormResult {
                value: 0.5 * (lo + gamma),
                certificate: Certificate::BisectionInterval { lo, hi: gamma },
            });
        }
        lo = best;
    }
    Err(Error::NoConvergence("hinf norm: level-set iteration".into()))
}

fn grid_fallback(omega: f64, value: f64) -> NormResult {
    NormResult {
        value,
        certificate: Certificate::GridPeak { omega },
    }
}

/// H∞ norm of a FIR polynomial matrix with a certified interval.
///
/// Branch and bound over `[0, pi]` using the Lipschitz constant `sum k ||F_k||`
/// of the largest singular value along the circle.
pub fn hinf_norm_fir(f: &FirSeries, tol: f64) -> NormResult {
    let lip: f64 = f
        .coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| k as f64 * c.norm())
        .sum();
    let eval = |w: f64| linalg::sigma_max_c(&f.freq_response(w));
    if lip == 0.0 {
        let v = f.coeffs.first().map(linalg::sigma_max).unwrap_or(0.0);
        return NormResult {
            value: v,
            certificate: Certificate::BisectionInterval { lo: v, hi: v },
        };
    }
    let points = (8 * f.len()).clamp(64, 4096);
    let grid = lti::frequency_grid(points);
    let vals: Vec<f64> = grid.iter().map(|&w| eval(w)).collect();
    let mut lo = vals.iter().cloned().fold(0.0, f64::max);
    let mut intervals: Vec<(f64, f64, f64, f64)> = grid
        .windows(2)
        .zip(vals.windows(2))
        .map(|(w, v)| (w[0], w[1], v[0], v[1]))
        .collect();
    let tol = tol.max(1e-12);
    let mut hi = lo;
    for _ in 0..60 {
        let bound = |iv: &(f64, f64, f64, f64)| iv.2.max(iv.3) + 0.5 * lip * (iv.1 - iv.0);
        let target = lo * (1.0 + tol);
        intervals.retain(|iv| bound(iv) > target);
        hi = intervals.iter().map(bound).fold(lo, f64::max);
        if intervals.is_empty() || hi <= target || intervals.len() > 200_000 {
            break;
        }
        let mut next = Vec::with_capacity(2 * intervals.len());
        for (a, b, fa, fb) in intervals.drain(..) {
            let m = 0.5 * (a + b);
            let fm = eval(m);
            lo = lo.max(fm);
            next.push((a, m, fa, fm));
            next.push((m, b, fm, fb));
        }
        intervals = next;
    }
    let hi = hi.max(lo);
    NormResult {
        value: 0.5 * (lo + hi),
        certificate: Certificate::BisectionInterval { lo, hi },
    }
}
