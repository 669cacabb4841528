//! Discrete-time LTI state-space algebra, simulation and matrix-equation solvers.
//!
//! A [`StateSpace`] value represents `G(z) = C (zI - A)^-1 B + D`. Interconnections
//! produce non-minimal realizations; [`StateSpace::reduce`] removes uncontrollable
//! and unobservable modes when sizes need to stay bounded.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, hstack, sym, vstack, CMat, Mat};

/// Spectral radius margin used by [`StateSpace::is_stable`].
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Default number of points of the uniform frequency grid on `[0, pi]`.
pub const DEFAULT_GRID: usize = 256;

pub fn frequency_grid(points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|k| std::f64::consts::PI * k as f64 / (n - 1) as f64)
        .collect()
}

pub fn default_grid() -> Vec<f64> {
    frequency_grid(DEFAULT_GRID)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "StateSpaceDoc", try_from = "StateSpaceDoc")]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connection {
    /// `g1` followed by `g2`, response `g2 * g1`.
    Series,
    Parallel,
    /// Negative feedback of `g1` in the forward path and `g2` in the return path.
    Feedback,
    Vstack,
    Hstack,
    /// Negation of `g1` (the second operand is ignored).
    Neg,
}

pub fn connect(op: Connection, g1: &StateSpace, g2: &StateSpace) -> Result<StateSpace> {
    match op {
        Connection::Series => g2.mul(g1),
        Connection::Parallel => g1.add(g2),
        Connection::Feedback => g1.feedback(g2),
        Connection::Vstack => StateSpace::vstack(&[g1, g2]),
        Connection::Hstack => StateSpace::hstack(&[g1, g2]),
        Connection::Neg => Ok(g1.neg()),
    }
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let nx = a.nrows();
        if a.ncols() != nx {
            return Err(Error::dim("state matrix must be square"));
        }
        if b.nrows() != nx || c.ncols() != nx {
            return Err(Error::dim(format!(
                "b is {}x{}, c is {}x{}, expected {} states",
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                nx
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(format!(
                "d is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        for m in [&a, &b, &c, &d] {
            if !linalg::all_finite(m) {
                return Err(Error::InvalidArgument("non-finite entry".into()));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// Build from row-major slices; convenient in tests and examples.
    pub fn from_rows(
        nx: usize,
        nu: usize,
        ny: usize,
        a: &[f64],
        b: &[f64],
        c: &[f64],
        d: &[f64],
    ) -> Result<Self> {
        let check = |len: usize, want: usize, name: &str| {
            if len != want {
                Err(Error::dim(format!("{name} has {len} entries, expected {want}")))
            } else {
                Ok(())
            }
        };
        check(a.len(), nx * nx, "a")?;
        check(b.len(), nx * nu, "b")?;
        check(c.len(), ny * nx, "c")?;
        check(d.len(), ny * nu, "d")?;
        Self::new(
            Mat::from_row_slice(nx, nx, a),
            Mat::from_row_slice(nx, nu, b),
            Mat::from_row_slice(ny, nx, c),
            Mat::from_row_slice(ny, nu, d),
        )
    }

    pub fn gain(d: Mat) -> Self {
        let (ny, nu) = d.shape();
        Self {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, nu),
            c: Mat::zeros(ny, 0),
            d,
        }
    }

    pub fn zero(ny: usize, nu: usize) -> Self {
        Self::gain(Mat::zeros(ny, nu))
    }

    pub fn identity(n: usize) -> Self {
        Self::gain(Mat::identity(n, n))
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    /// Response at an arbitrary complex point `z`.
    pub fn eval(&self, z: Complex64) -> Result<CMat> {
        let d = linalg::to_complex(&self.d);
        if self.nx() == 0 {
            return Ok(d);
        }
        let n = self.nx();
        let mut zi_a = linalg::to_complex(&self.a) * Complex64::new(-1.0, 0.0);
        for i in 0..n {
            zi_a[(i, i)] += z;
        }
        let x = zi_a
            .lu()
            .solve(&linalg::to_complex(&self.b))
            .ok_or_else(|| Error::Singular(format!("zI - A singular at z = {z}")))?;
        Ok(linalg::to_complex(&self.c) * x + d)
    }

    /// Frequency response at `z = exp(j w)`.
    pub fn freq_response(&self, w: f64) -> Result<CMat> {
        self.eval(Complex64::from_polar(1.0, w))
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        eigenvalues(&self.a)
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        match self.spectral_radius() {
            Ok(r) => r < 1.0 - STABILITY_MARGIN,
            Err(_) => false,
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            a: self.a.transpose(),
            b: self.c.transpose(),
            c: self.b.transpose(),
            d: self.d.transpose(),
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: -&self.c,
            d: -&self.d,
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: &self.c * k,
            d: &self.d * k,
        }
    }

    /// Left multiplication by a constant matrix: `k * G`.
    pub fn premul(&self, k: &Mat) -> Result<Self> {
        if k.ncols() != self.ny() {
            return Err(Error::dim("premul: gain columns must match outputs"));
        }
        Ok(Self {
            a: self.a.clone(),
            b: self.b.clone(),
            c: k * &self.c,
            d: k * &self.d,
        })
    }

    /// Right multiplication by a constant matrix: `G * k`.
    pub fn postmul(&self, k: &Mat) -> Result<Self> {
        if k.nrows() != self.nu() {
            return Err(Error::dim("postmul: gain rows must match inputs"));
        }
        Ok(Self {
            a: self.a.clone(),
            b: &self.b * k,
            c: self.c.clone(),
            d: &self.d * k,
        })
    }

    /// Transfer product `self * rhs` (the signal passes through `rhs` first).
    pub fn mul(&self, rhs: &StateSpace) -> Result<Self> {
        if self.nu() != rhs.ny() {
            return Err(Error::dim(format!(
                "product of {}x{} and {}x{} systems",
                self.ny(),
                self.nu(),
                rhs.ny(),
                rhs.nu()
            )));
        }
        let (n1, n2) = (rhs.nx(), self.nx());
        let mut a = Mat::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&rhs.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&self.b * &rhs.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&self.a);
        let b = vstack(&[&rhs.b, &(&self.b * &rhs.d)]);
        let c = hstack(&[&(&self.d * &rhs.c), &self.c]);
        let d = &self.d * &rhs.d;
        Ok(Self { a, b, c, d })
    }

    pub fn add(&self, rhs: &StateSpace) -> Result<Self> {
        if self.ny() != rhs.ny() || self.nu() != rhs.nu() {
            return Err(Error::dim("sum of systems with different shapes"));
        }
        Ok(Self {
            a: block_diag(&[&self.a, &rhs.a]),
            b: vstack(&[&self.b, &rhs.b]),
            c: hstack(&[&self.c, &rhs.c]),
            d: &self.d + &rhs.d,
        })
    }

    pub fn sub(&self, rhs: &StateSpace) -> Result<Self> {
        self.add(&rhs.neg())
    }

    /// Stack outputs of systems sharing the same input.
    pub fn vstack(parts: &[&StateSpace]) -> Result<Self> {
        let nu = parts.first().map(|p| p.nu()).unwrap_or(0);
        if parts.iter().any(|p| p.nu() != nu) {
            return Err(Error::dim("vstack: input dimensions differ"));
        }
        let a: Vec<&Mat> = parts.iter().map(|p| &p.a).collect();
        let b: Vec<&Mat> = parts.iter().map(|p| &p.b).collect();
        let c: Vec<&Mat> = parts.iter().map(|p| &p.c).collect();
        let d: Vec<&Mat> = parts.iter().map(|p| &p.d).collect();
        Ok(Self {
            a: block_diag(&a),
            b: vstack(&b),
            c: block_diag(&c),
            d: vstack(&d),
        })
    }

    /// Concatenate inputs of systems sharing the same output.
    pub fn hstack(parts: &[&StateSpace]) -> Result<Self> {
        let ny = parts.first().map(|p| p.ny()).unwrap_or(0);
        if parts.iter().any(|p| p.ny() != ny) {
            return Err(Error::dim("hstack: output dimensions differ"));
        }
        let a: Vec<&Mat> = parts.iter().map(|p| &p.a).collect();
        let b: Vec<&Mat> = parts.iter().map(|p| &p.b).collect();
        let c: Vec<&Mat> = parts.iter().map(|p| &p.c).collect();
        let d: Vec<&Mat> = parts.iter().map(|p| &p.d).collect();
        Ok(Self {
            a: block_diag(&a),
            b: block_diag(&b),
            c: hstack(&c),
            d: hstack(&d),
        })
    }

    pub fn block_diag(parts: &[&StateSpace]) -> Self {
        let a: Vec<&Mat> = parts.iter().map(|p| &p.a).collect();
        let b: Vec<&Mat> = parts.iter().map(|p| &p.b).collect();
        let c: Vec<&Mat> = parts.iter().map(|p| &p.c).collect();
        let d: Vec<&Mat> = parts.iter().map(|p| &p.d).collect();
        Self {
            a: block_diag(&a),
            b: block_diag(&b),
            c: block_diag(&c),
            d: block_diag(&d),
        }
    }

    /// Negative feedback loop `(I + self * ret)^-1 * self`.
    pub fn feedback(&self, ret: &StateSpace) -> Result<Self> {
        let (g, k) = (self, ret);
        if g.nu() != k.ny() || g.ny() != k.nu() {
            return Err(Error::dim("feedback: loop dimensions incompatible"));
        }
        // e = u - k y and y = g e, solved for y and e in terms of states and u
        let m = linalg::inverse(&(Mat::identity(g.ny(), g.ny()) + &g.d * &k.d))
            .ok_or_else(|| Error::Singular("I + D1 D2 not invertible".into()))?;
        // y = m (Cg xg - Dg Ck xk + Dg u)
        let (ng, nk) = (g.nx(), k.nx());
        let y_x = hstack(&[&(&m * &g.c), &(-(&m * &g.d * &k.c))]);
        let y_u = &m * &g.d;
        // e = u - Ck xk - Dk y
        let e_x = hstack(&[&Mat::zeros(g.nu(), ng), &(-&k.c)]) - &k.d * &y_x;
        let e_u = Mat::identity(g.nu(), g.nu()) - &k.d * &y_u;
        // xg+ = Ag xg + Bg e ; xk+ = Ak xk + Bk y
        let mut a = block_diag(&[&g.a, &k.a]);
        let top = &g.b * &e_x;
        let bot = &k.b * &y_x;
        {
            let mut v = a.view_mut((0, 0), (ng, ng + nk));
            v += &top;
        }
        {
            let mut v = a.view_mut((ng, 0), (nk, ng + nk));
            v += &bot;
        }
        let b = vstack(&[&(&g.b * &e_u), &(&k.b * &y_u)]);
        Ok(Self {
            a,
            b,
            c: y_x,
            d: y_u,
        })
    }

    /// Realization of the inverse system; requires a square invertible `D`.
    pub fn inverse(&self) -> Result<Self> {
        if self.ny() != self.nu() {
            return Err(Error::dim("inverse of a non-square system"));
        }
        let dinv = linalg::inverse(&self.d)
            .ok_or_else(|| Error::Singular("feedthrough not invertible".into()))?;
        Ok(Self {
            a: &self.a - &self.b * &dinv * &self.c,
            b: &self.b * &dinv,
            c: -(&dinv * &self.c),
            d: dinv,
        })
    }

    /// Markov parameters `D, CB, CAB, ...` (`count` coefficients).
    pub fn markov_params(&self, count: usize) -> FirSeries {
        let mut coeffs = Vec::with_capacity(count);
        if count == 0 {
            return FirSeries::zeros(self.ny(), self.nu(), 0);
        }
        coeffs.push(self.d.clone());
        let mut ab = self.b.clone();
        for _ in 1..count {
            coeffs.push(&self.c * &ab);
            ab = &self.a * ab;
        }
        FirSeries { coeffs }
    }

    pub fn simulate(&self, input: &Trajectory, x0: &Mat) -> Result<Trajectory> {
        if input.dim() != self.nu() {
            return Err(Error::dim(format!(
                "input has dimension {}, system has {} inputs",
                input.dim(),
                self.nu()
            )));
        }
        if x0.nrows() != self.nx() || x0.ncols() != 1 {
            return Err(Error::dim("initial state has wrong length"));
        }
        let len = input.len();
        let mut out = Mat::zeros(self.ny(), len);
        let mut x: nalgebra::DVector<f64> = x0.column(0).into_owned();
        for t in 0..len {
            let u = input.data.column(t);
            let y = &self.c * &x + &self.d * u;
            out.set_column(t, &y);
            x = &self.a * &x + &self.b * u;
        }
        Ok(Trajectory { data: out })
    }

    /// Zero-initial-state simulation that reports divergence.
    pub fn filter(&self, input: &Trajectory) -> Result<Trajectory> {
        let out = self.simulate(input, &Mat::zeros(self.nx(), 1))?;
        if !linalg::all_finite(&out.data) || out.data.amax() > 1e12 {
            return Err(Error::Unstable("simulation diverged".into()));
        }
        Ok(out)
    }

    /// Remove uncontrollable and unobservable modes (orthogonal staircase projections).
    pub fn reduce(&self, tol: f64) -> Self {
        if self.nx() == 0 {
            return self.clone();
        }
        let ctrl = krylov_basis(&self.a, &self.b, tol);
        let step = Self {
            a: ctrl.transpose() * &self.a * &ctrl,
            b: ctrl.transpose() * &self.b,
            c: &self.c * &ctrl,
            d: self.d.clone(),
        };
        if step.nx() == 0 {
            return step;
        }
        let obs = krylov_basis(&step.a.transpose(), &step.c.transpose(), tol);
        Self {
            a: obs.transpose() * &step.a * &obs,
            b: obs.transpose() * &step.b,
            c: &step.c * &obs,
            d: step.d,
        }
    }

    /// Largest response deviation between two systems on a frequency grid.
    pub fn grid_distance(&self, other: &StateSpace, grid: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &w in grid {
            let diff = self.freq_response(w)? - other.freq_response(w)?;
            worst = worst.max(linalg::sigma_max_c(&diff));
        }
        Ok(worst)
    }
}

fn krylov_basis(a: &Mat, b: &Mat, tol: f64) -> Mat {
    let n = a.nrows();
    let scale = 1.0_f64.max(a.norm()).max(b.norm());
    let thresh = tol * scale;
    let mut basis = Mat::zeros(n, 0);
    let mut block = b.clone();
    while basis.ncols() < n && block.ncols() > 0 {
        let mut w = block.clone();
        for _ in 0..2 {
            if basis.ncols() > 0 {
                let proj = &basis * (basis.transpose() * &w);
                w -= proj;
            }
        }
        let fresh = linalg::range_basis(&w, thresh);
        if fresh.ncols() == 0 {
            break;
        }
        // small singular directions lose orthogonality to the old basis
        let fresh = &fresh - &basis * (basis.transpose() * &fresh);
        let fresh = fresh.qr().q();
        basis = hstack(&[&basis, &fresh]);
        block = a * fresh;
    }
    basis
}

pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if !linalg::all_finite(a) {
        return Err(Error::NoConvergence("eigenvalues of a non-finite matrix".into()));
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let ev = m
        .eigenvalues()
        .map_err(|_| Error::NoConvergence("eigenvalue iteration did not converge".into()))?;
    Ok(ev.iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Finite impulse response `F_0 + F_1 z^-1 + ... + F_N z^-N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "FirDoc", try_from = "FirDoc")]
pub struct FirSeries {
    pub coeffs: Vec<Mat>,
}

impl FirSeries {
    pub fn new(coeffs: Vec<Mat>) -> Result<Self> {
        if let Some(first) = coeffs.first() {
            if coeffs.iter().any(|c| c.shape() != first.shape()) {
                return Err(Error::dim("FIR coefficients differ in shape"));
            }
        }
        Ok(Self { coeffs })
    }

    pub fn scalar(values: &[f64]) -> Self {
        Self {
            coeffs: values.iter().map(|&v| Mat::from_element(1, 1, v)).collect(),
        }
    }

    pub fn zeros(rows: usize, cols: usize, len: usize) -> Self {
        Self {
            coeffs: vec![Mat::zeros(rows, cols); len],
        }
    }

    /// Number of coefficients (`N + 1`).
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree `N` of the polynomial in `z^-1`.
    pub fn horizon(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs.first().map(|c| c.shape()).unwrap_or((0, 0))
    }

    pub fn freq_response(&self, w: f64) -> CMat {
        let (r, c) = self.shape();
        let mut out = CMat::zeros(r, c);
        for (k, f) in self.coeffs.iter().enumerate() {
            let zk = Complex64::from_polar(1.0, -(k as f64) * w);
            out += linalg::to_complex(f) * zk;
        }
        out
    }

    /// Euclidean norm of all coefficients (the H2 norm by Parseval).
    pub fn h2_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Shift-register realization with `N * cols` states.
    pub fn to_state_space(&self) -> StateSpace {
        let (r, c) = self.shape();
        let n = self.horizon();
        if self.coeffs.is_empty() {
            return StateSpace::zero(r, c);
        }
        let nx = n * c;
        let mut a = Mat::zeros(nx, nx);
        for k in 1..n {
            a.view_mut((k * c, (k - 1) * c), (c, c))
                .copy_from(&Mat::identity(c, c));
        }
        let mut b = Mat::zeros(nx, c);
        if n > 0 {
            b.view_mut((0, 0), (c, c)).copy_from(&Mat::identity(c, c));
        }
        let mut cm = Mat::zeros(r, nx);
        for k in 1..=n {
            cm.view_mut((0, (k - 1) * c), (r, c))
                .copy_from(&self.coeffs[k]);
        }
        StateSpace {
            a,
            b,
            c: cm,
            d: self.coeffs[0].clone(),
        }
    }

    /// Polynomial product `self * rhs`.
    pub fn convolve(&self, rhs: &FirSeries) -> Result<FirSeries> {
        let (r, k1) = self.shape();
        let (k2, c) = rhs.shape();
        if k1 != k2 {
            return Err(Error::dim("FIR product inner dimensions differ"));
        }
        if self.is_empty() || rhs.is_empty() {
            return Ok(FirSeries::zeros(r, c, 0));
        }
        let len = self.len() + rhs.len() - 1;
        let mut out = vec![Mat::zeros(r, c); len];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Ok(FirSeries { coeffs: out })
    }

    pub fn add(&self, rhs: &FirSeries) -> Result<FirSeries> {
        if self.shape() != rhs.shape() && !self.is_empty() && !rhs.is_empty() {
            return Err(Error::dim("FIR sum of different shapes"));
        }
        let shape = if self.is_empty() { rhs.shape() } else { self.shape() };
        let len = self.len().max(rhs.len());
        let coeffs = (0..len)
            .map(|k| {
                let mut m = Mat::zeros(shape.0, shape.1);
                if let Some(a) = self.coeffs.get(k) {
                    m += a;
                }
                if let Some(b) = rhs.coeffs.get(k) {
                    m += b;
                }
                m
            })
            .collect();
        Ok(FirSeries { coeffs })
    }

    pub fn scale(&self, k: f64) -> FirSeries {
        FirSeries {
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    /// Pad with zeros or truncate to exactly `len` coefficients.
    pub fn resized(&self, len: usize) -> FirSeries {
        let (r, c) = self.shape();
        let coeffs = (0..len)
            .map(|k| self.coeffs.get(k).cloned().unwrap_or_else(|| Mat::zeros(r, c)))
            .collect();
        FirSeries { coeffs }
    }

    /// Stack coefficient blocks vertically: `[F_0; F_1; ...; F_N]`.
    pub fn stacked(&self) -> Mat {
        let refs: Vec<&Mat> = self.coeffs.iter().collect();
        vstack(&refs)
    }
}

/// Sampled signal: one column per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub data: Mat,
}

impl Trajectory {
    pub fn new(data: Mat) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        Self {
            data: Mat::zeros(dim, len),
        }
    }

    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let dim = samples.first().map(|s| s.len()).unwrap_or(0);
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::dim("trajectory samples differ in length"));
        }
        Ok(Self {
            data: Mat::from_fn(dim, samples.len(), |i, t| samples[t][i]),
        })
    }

    /// Unit impulse in channel `channel` at time zero.
    pub fn impulse(dim: usize, len: usize, channel: usize) -> Self {
        let mut data = Mat::zeros(dim, len);
        if len > 0 {
            data[(channel, 0)] = 1.0;
        }
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn sample(&self, t: usize) -> Vec<f64> {
        self.data.column(t).iter().cloned().collect()
    }

    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.data.shape() != other.data.shape() {
            return Err(Error::dim("trajectory sum of different shapes"));
        }
        Ok(Trajectory {
            data: &self.data + &other.data,
        })
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.data.shape() != other.data.shape() {
            return Err(Error::dim("trajectory difference of different shapes"));
        }
        Ok(Trajectory {
            data: &self.data - &other.data,
        })
    }

    /// Stack channels of equally long trajectories.
    pub fn stack(parts: &[&Trajectory]) -> Result<Trajectory> {
        let len = parts.first().map(|p| p.len()).unwrap_or(0);
        if parts.iter().any(|p| p.len() != len) {
            return Err(Error::dim("stacking trajectories of different lengths"));
        }
        let refs: Vec<&Mat> = parts.iter().map(|p| &p.data).collect();
        Ok(Trajectory { data: vstack(&refs) })
    }

    pub fn rows(&self, start: usize, count: usize) -> Trajectory {
        Trajectory {
            data: self.data.rows(start, count).into_owned(),
        }
    }
}

/// Solve `a P a' - P + q = 0` for stable `a`.
pub fn solve_dlyap(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::dim("dlyap: a and q must be square of equal size"));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if spectral_radius(a)? >= 1.0 {
        return Err(Error::Unstable("dlyap requires a stable state matrix".into()));
    }
    let mut p = lyap_doubling(a, &sym(q));
    let qn = q.norm().max(1.0);
    for _ in 0..3 {
        let res = a * &p * a.transpose() - &p + q;
        if res.norm() <= 1e-14 * qn {
            break;
        }
        p += lyap_doubling(a, &sym(&res));
    }
    Ok(sym(&p))
}

fn lyap_doubling(a: &Mat, q: &Mat) -> Mat {
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..80 {
        let inc = &ak * &p * ak.transpose();
        p += &inc;
        ak = &ak * &ak;
        if ak.norm() < 1e-300 || inc.norm() <= 1e-18 * p.norm().max(1e-300) {
            break;
        }
    }
    p
}

/// Stabilizing solution of `P = a'Pa - a'Pb (r + b'Pb)^-1 b'Pa + q`.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    solve_dare_cross(a, b, q, r, None)
}

/// Riccati equation with cross weight `s`:
/// `P = a'Pa - (a'Pb + s)(r + b'Pb)^-1 (b'Pa + s') + q`.
pub fn solve_dare_cross(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: Option<&Mat>) -> Result<Mat> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim("dare: inconsistent dimensions"));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let rinv = linalg::inverse(r).ok_or_else(|| Error::Singular("dare: r singular".into()))?;
    let (abar, qbar) = match s {
        Some(s) => (a - b * &rinv * s.transpose(), sym(&(q - s * &rinv * s.transpose()))),
        None => (a.clone(), sym(q)),
    };
    let scale = q.norm().max(r.norm()).max(1.0);
    let accept = |p: &Mat| -> Result<bool> {
        let res = dare_residual(a, b, q, r, s, p)?;
        let gain = dare_gain(a, b, r, s, p)?;
        Ok(res <= 1e-8 * scale.max(p.norm()) && spectral_radius(&(a - b * gain))? < 1.0)
    };
    let doubled = dare_doubling(&abar, &sym(&(b * &rinv * b.transpose())), &qbar);
    if let Ok(p) = &doubled {
        if accept(p)? {
            return Ok(p.clone());
        }
    }
    // Newton iteration from a stabilizing gain; zero works whenever `a` is stable
    let start = match &doubled {
        Ok(p) if linalg::all_finite(p) => {
            let k = dare_gain(a, b, r, s, p)?;
            if spectral_radius(&(a - b * &k))? < 1.0 {
                Some(k)
            } else {
                None
            }
        }
        _ => None,
    };
    let start = match start {
        Some(k) => k,
        None if spectral_radius(a)? < 1.0 => Mat::zeros(m, n),
        None => {
            return Err(doubled
                .err()
                .unwrap_or_else(|| Error::NoConvergence("dare: no stabilizing solution".into())))
        }
    };
    let p = dare_newton(a, b, q, r, s, start)?;
    if accept(&p)? {
        Ok(p)
    } else {
        Err(Error::NoConvergence("dare: no stabilizing solution".into()))
    }
}

fn dare_doubling(a: &Mat, g: &Mat, h: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut gk = g.clone();
    let mut hk = h.clone();
    let eye = Mat::identity(n, n);
    for _ in 0..200 {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let w_a = lu
            .solve(&ak)
            .ok_or_else(|| Error::NoConvergence("dare: doubling step singular".into()))?;
        let w_g = lu
            .solve(&gk)
            .ok_or_else(|| Error::NoConvergence("dare: doubling step singular".into()))?;
        let a_next = &ak * &w_a;
        let g_next = sym(&(&gk + &ak * &w_g * ak.transpose()));
        let h_next = sym(&(&hk + ak.transpose() * &hk * &w_a));
        let change = (&h_next - &hk).norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !linalg::all_finite(&hk) {
            return Err(Error::NoConvergence("dare: iteration diverged".into()));
        }
        if change <= 1e-15 * hk.norm().max(1.0) || ak.norm() < 1e-300 {
            return Ok(hk);
        }
    }
    Err(Error::NoConvergence("dare: doubling did not converge".into()))
}

fn dare_newton(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: Option<&Mat>, mut gain: Mat) -> Result<Mat> {
    let mut prev: Option<Mat> = None;
    for _ in 0..100 {
        let closed = a - b * &gain;
        let mut weight = q + gain.transpose() * r * &gain;
        if let Some(s) = s {
            let cross = s * &gain;
            weight -= &cross + cross.transpose();
        }
        let p = solve_dlyap(&closed.transpose(), &sym(&weight))?;
        gain = dare_gain(a, b, r, s, &p)?;
        if let Some(old) = &prev {
            if (&p - old).norm() <= 1e-14 * p.norm().max(1.0) {
                return Ok(p);
            }
        }
        prev = Some(p);
    }
    prev.ok_or_else(|| Error::NoConvergence("dare: newton iteration".into()))
}

/// Gain `(r + b'Pb)^-1 (b'Pa + s')` of a Riccati solution.
pub fn dare_gain(a: &Mat, b: &Mat, r: &Mat, s: Option<&Mat>, p: &Mat) -> Result<Mat> {
    let lhs = r + b.transpose() * p * b;
    let mut rhs = b.transpose() * p * a;
    if let Some(s) = s {
        rhs += s.transpose();
    }
    linalg::solve(&lhs, &rhs).ok_or_else(|| Error::Singular("dare gain: r + b'Pb singular".into()))
}

pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: Option<&Mat>, p: &Mat) -> Result<f64> {
    let gain = dare_gain(a, b, r, s, p)?;
    let mut cross = a.transpose() * p * b;
    if let Some(s) = s {
        cross += s;
    }
    let res = a.transpose() * p * a - cross * gain - p + q;
    Ok(res.norm())
}

/// Outer spectral factor `V` with `V(z) V'(1/z) = G(z) G'(1/z)`.
///
/// Handles stable systems directly and unstable systems whose inverse is stable.
pub fn spectral_factor(sys: &StateSpace) -> Result<StateSpace> {
    if sys.ny() != sys.nu() {
        return Err(Error::dim("spectral factor needs a square system"));
    }
    if sys.is_stable() {
        return innovations_factor(sys);
    }
    let inv = sys.inverse().map_err(|_| {
        Error::InvalidArgument("spectral factor of an unstable system with singular feedthrough".into())
    })?;
    if !inv.is_stable() {
        return Err(Error::InvalidArgument(
            "spectral factor needs a stable system or a system with stable inverse".into(),
        ));
    }
    let dual = innovations_factor(&inv.transpose())?;
    dual.transpose().inverse()
}

fn innovations_factor(sys: &StateSpace) -> Result<StateSpace> {
    let mut g = sys.clone();
    let mut rotation = Mat::identity(sys.ny(), sys.ny());
    // output directions with no feedthrough are rotated out and delayed by one step;
    // an orthogonal rotation and a shift leave the spectrum unchanged
    for _ in 0..=sys.nx() {
        if g.ny() == 0 {
            break;
        }
        let (u, sv, _) = linalg::svd_sorted(&g.d);
        let tol = 1e-10 * sv.max().max(1e-300);
        let rank = sv.iter().filter(|&&x| x > tol).count();
        if rank == g.ny() {
            break;
        }
        let ut = u.transpose();
        rotation = &rotation * &u;
        let (c, d) = (&ut * &g.c, &ut * &g.d);
        let mut c_new = c.clone();
        let mut d_new = d.clone();
        for i in rank..g.ny() {
            let row = c.row(i).into_owned();
            c_new.set_row(i, &(&row * &g.a).row(0));
            d_new.set_row(i, &(&row * &g.b).row(0));
        }
        g = StateSpace {
            a: g.a.clone(),
            b: g.b.clone(),
            c: c_new,
            d: d_new,
        };
    }
    let ddt = &g.d * g.d.transpose();
    if g.nx() == 0 {
        let root = ddt
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("spectral factor: zero spectrum".into()))?
            .l();
        return Ok(StateSpace::gain(root));
    }
    let bdt = &g.b * g.d.transpose();
    let p = solve_dare_cross(
        &g.a.transpose(),
        &g.c.transpose(),
        &(&g.b * g.b.transpose()),
        &ddt,
        Some(&bdt),
    )
    .map_err(|e| Error::NoConvergence(format!("spectral factor Riccati: {e}")))?;
    let re = sym(&(&g.c * &p * g.c.transpose() + &ddt));
    let gain = linalg::solve(&re, &(&g.a * &p * g.c.transpose() + &bdt).transpose())
        .ok_or_else(|| Error::Singular("spectral factor: innovation covariance".into()))?
        .transpose();
    let root = re
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("spectral factor: innovation covariance".into()))?
        .l();
    // undo the rotation, then restore a lower-triangular feedthrough with positive diagonal
    let d = &rotation * &root;
    let qr = d.transpose().qr();
    let mut w = qr.q();
    let tri = d.clone() * &w;
    for j in 0..tri.ncols() {
        if tri[(j, j)] < 0.0 {
            w.column_mut(j).neg_mut();
        }
    }
    Ok(StateSpace {
        a: g.a.clone(),
        b: gain * &root * &w,
        c: &rotation * &g.c,
        d: d * w,
    })
}

/// Single-input deadbeat gain `f` placing every eigenvalue of `a - b f` at zero.
pub fn deadbeat_gain(a: &Mat, b: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if b.ncols() != 1 {
        return Err(Error::InvalidArgument("deadbeat gain needs a single input".into()));
    }
    let mut ctrb = Mat::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col.column(0));
        col = a * col;
    }
    // Ackermann: f = e_n' C^-1 a^n
    let mut en = Mat::zeros(1, n);
    en[(0, n - 1)] = 1.0;
    let row = linalg::solve(&ctrb.transpose(), &en.transpose())
        .ok_or_else(|| Error::Singular("deadbeat gain: pair not controllable".into()))?
        .transpose();
    let mut an = Mat::identity(n, n);
    for _ in 0..n {
        an = &an * a;
    }
    Ok(row * an)
}

/// Random stable system with spectral radius at most `radius`.
pub fn random_stable<R: rand::Rng + ?Sized>(
    rng: &mut R,
    nx: usize,
    nu: usize,
    ny: usize,
    radius: f64,
) -> StateSpace {
    use rand_distr::{Distribution, StandardNormal};
    let mut gauss = |r: usize, c: usize| -> Mat {
        Mat::from_fn(r, c, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        })
    };
    let mut a = gauss(nx, nx);
    let b = gauss(nx, nu);
    let c = gauss(ny, nx);
    let d = gauss(ny, nu);
    if nx > 0 {
        let rho = spectral_radius(&a).unwrap_or(1.0).max(1e-6);
        a *= radius / rho;
    }
    StateSpace { a, b, c, d }
}

/// Row-major nested arrays.
pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Inverse of [`mat_to_rows`]; `cols` disambiguates empty row lists.
pub fn mat_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<Mat> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::dim(format!("expected a {nrows}x{ncols} array")));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct StateSpaceDoc {
    nx: usize,
    nu: usize,
    ny: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl From<StateSpace> for StateSpaceDoc {
    fn from(s: StateSpace) -> Self {
        StateSpaceDoc {
            nx: s.nx(),
            nu: s.nu(),
            ny: s.ny(),
            a: mat_to_rows(&s.a),
            b: mat_to_rows(&s.b),
            c: mat_to_rows(&s.c),
            d: mat_to_rows(&s.d),
        }
    }
}

impl TryFrom<StateSpaceDoc> for StateSpace {
    type Error = Error;
    fn try_from(doc: StateSpaceDoc) -> Result<Self> {
        let (nx, nu, ny) = (doc.nx, doc.nu, doc.ny);
        StateSpace::new(
            mat_from_rows(&doc.a, nx, nx)?,
            mat_from_rows(&doc.b, nx, nu)?,
            mat_from_rows(&doc.c, ny, nx)?,
            mat_from_rows(&doc.d, ny, nu)?,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct FirDoc {
    rows: usize,
    cols: usize,
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl From<FirSeries> for FirDoc {
    fn from(f: FirSeries) -> Self {
        let (rows, cols) = f.shape();
        FirDoc {
            rows,
            cols,
            coeffs: f.coeffs.iter().map(mat_to_rows).collect(),
        }
    }
}

impl TryFrom<FirDoc> for FirSeries {
    type Error = Error;
    fn try_from(doc: FirDoc) -> Result<Self> {
        let coeffs = doc
            .coeffs
            .iter()
            .map(|c| mat_from_rows(c, doc.rows, doc.cols))
            .collect::<Result<Vec<_>>>()?;
        FirSeries::new(coeffs)
    }
}
