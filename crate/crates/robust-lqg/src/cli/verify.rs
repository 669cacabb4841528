//! Invariant groups run by `robust-lqg verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::factorization::{self, Dcf, YoulaParam};
use crate::linalg::{self, Mat};
use crate::lti::{self, FirSeries, StateSpace};
use crate::norms::{self, DEFAULT_TOL};
use crate::sdp::InteriorPoint;
use crate::synthesis::{self, SynthesisConfig};
use crate::sysid::{self, HankelEstimate};
use crate::uncertainty::{self, UncertainModel};

#[derive(Clone, Debug, Serialize)]
pub struct GroupOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub passed: bool,
    /// Largest violation-side quantity seen, against `limit`.
    pub worst: f64,
    pub limit: f64,
    pub error: Option<String>,
}

type Check = fn(&mut Ctx) -> Result<(usize, f64)>;

pub struct Ctx {
    rng: ChaCha8Rng,
    /// Damage every factorization handed out by this context.
    corrupt: bool,
}

impl Ctx {
    fn gauss(&mut self, r: usize, c: usize, scale: f64) -> Mat {
        Mat::from_fn(r, c, |_, _| {
            let v: f64 = StandardNormal.sample(&mut self.rng);
            scale * v
        })
    }

    fn plant(&mut self) -> StateSpace {
        let nx = self.rng.random_range(1..=4);
        let nu = self.rng.random_range(1..=2);
        let ny = self.rng.random_range(1..=2);
        let mut g = lti::random_stable(&mut self.rng, nx, nu, ny, 1.3);
        g.d = Mat::zeros(ny, nu);
        g
    }

    fn stable(&mut self, nx: usize, nu: usize, ny: usize, radius: f64) -> StateSpace {
        lti::random_stable(&mut self.rng, nx, nu, ny, radius)
    }

    fn fir(&mut self, rows: usize, cols: usize, len: usize, scale: f64) -> FirSeries {
        FirSeries::new((0..len).map(|_| self.gauss(rows, cols, scale)).collect()).expect("nonempty")
    }

    fn dcf(&mut self, g: &StateSpace) -> Result<Dcf> {
        let mut dcf = factorization::default_dcf(g)?;
        if self.corrupt {
            dcf.m = dcf.m.scale(1.01);
        }
        Ok(dcf)
    }
}

pub const GROUPS: [(&str, f64, Check); 13] = [
    ("bezout", 1e-7, bezout),
    ("youla_stability", 0.5, youla_stability),
    ("dual_youla_stability", 0.5, dual_youla_stability),
    ("riccati_residual", 1e-8, riccati_residual),
    ("spectral_factor", 1e-8, spectral_factor),
    ("h2_parseval", 1e-8, h2_parseval),
    ("norm_inequalities", 1e-6, norm_inequalities),
    ("lmi_calibration", 1e-4, lmi_calibration),
    ("dual_path_cost", 1e-6, dual_path_cost),
    ("cost_bound_dominance", 1e-6, cost_bound_dominance),
    ("hankel_exactness", 1e-8, hankel_exactness),
    ("ho_kalman_recovery", 1e-8, ho_kalman_recovery),
    ("robust_certificate", 0.5, robust_certificate),
];

/// Run every group; `corrupt` names a group whose input is deliberately damaged.
pub fn run_all(seed: u64, corrupt: Option<&str>) -> Vec<GroupOutcome> {
    GROUPS
        .iter()
        .enumerate()
        .map(|(i, &(name, limit, check))| {
            let mut ctx = Ctx {
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)),
                corrupt: corrupt == Some(name),
            };
            match check(&mut ctx) {
                Ok((cases, worst)) => GroupOutcome { name, cases, passed: worst <= limit, worst, limit, error: None },
                Err(e) => GroupOutcome { name, cases: 0, passed: false, worst: f64::INFINITY, limit, error: Some(e.to_string()) },
            }
        })
        .collect()
}

fn hinf(s: &StateSpace) -> Result<f64> {
    Ok(norms::hinf_norm(s, DEFAULT_TOL)?.value)
}

/// Failure count as a value compared against a limit of one half.
fn failures(flags: impl Iterator<Item = bool>) -> f64 {
    flags.filter(|ok| !ok).count() as f64
}

fn bezout(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = ctx.plant();
        let dcf = ctx.dcf(&g)?;
        worst = worst.max(factorization::verify_bezout(&dcf)?);
    }
    Ok((20, worst))
}

fn youla_stability(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut flags = Vec::new();
    for _ in 0..10 {
        let g = ctx.plant();
        let dcf = ctx.dcf(&g)?;
        let q = YoulaParam::Fir(ctx.fir(g.nu(), g.ny(), 3, 0.3));
        let k = factorization::youla_controller(&dcf, &q)?.controller;
        flags.push(factorization::is_internally_stabilizing(&g, &k)?);
    }
    Ok((flags.len(), failures(flags.into_iter())))
}

fn dual_youla_stability(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut flags = Vec::new();
    for _ in 0..10 {
        let g = ctx.plant();
        let dcf = ctx.dcf(&g)?;
        let r = ctx.stable(2, g.nu(), g.ny(), 0.8).scale(0.3);
        let gr = factorization::dual_youla_plant(&dcf, &r)?.plant;
        flags.push(factorization::is_internally_stabilizing(&gr, &dcf.central_controller()?)?);
    }
    Ok((flags.len(), failures(flags.into_iter())))
}

fn riccati_residual(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = ctx.plant();
        let q = Mat::identity(g.nx(), g.nx());
        let r = Mat::identity(g.nu(), g.nu());
        let p = lti::solve_dare(&g.a, &g.b, &q, &r)?;
        let res = lti::dare_residual(&g.a, &g.b, &q, &r, None, &p)?;
        worst = worst.max(res / p.norm().max(1.0));
    }
    Ok((10, worst))
}

fn spectral_factor(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let n = ctx.rng.random_range(1..=2);
        let mut g = ctx.stable(2, n, n, 0.8);
        g.d += Mat::identity(n, n) * 3.0;
        let v = lti::spectral_factor(&g)?;
        for w in lti::frequency_grid(32) {
            let gw = g.freq_response(w)?;
            let vw = v.freq_response(w)?;
            let diff = &gw * gw.adjoint() - &vw * vw.adjoint();
            worst = worst.max(linalg::sigma_max_c(&diff) / linalg::sigma_max_c(&(&gw * gw.adjoint())));
        }
    }
    Ok((8, worst))
}

fn h2_parseval(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = ctx.stable(3, 2, 2, 0.6);
        let h2 = norms::h2_norm(&g)?.value;
        let fir = g.markov_params(200);
        worst = worst.max((fir.h2_norm() - h2).abs() / h2);
    }
    Ok((10, worst))
}

fn norm_inequalities(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = ctx.stable(2, 2, 2, 0.8);
        let h = ctx.stable(2, 2, 2, 0.8);
        let (ng, nh) = (hinf(&g)?, hinf(&h)?);
        let excess = [
            hinf(&g.mul(&h)?)? - ng * nh,
            hinf(&g.add(&h)?)? - (ng + nh),
            hinf(&StateSpace::vstack(&[&g, &h])?)? - (ng * ng + nh * nh).sqrt(),
            ng.max(nh) - hinf(&StateSpace::hstack(&[&g, &h])?)?,
        ];
        let scale = ng.max(nh).max(1.0);
        worst = worst.max(excess.iter().cloned().fold(f64::MIN, f64::max) / scale);
        // ‖(I - Δ)⁻¹‖∞ ≤ 1 / (1 - ‖Δ‖∞) for ‖Δ‖∞ < 1
        let delta = g.scale(0.7 / ng);
        let inv = StateSpace::identity(2).sub(&delta)?.inverse()?;
        worst = worst.max(hinf(&inv)? - 1.0 / (1.0 - 0.7) - 1e-9);
    }
    Ok((10, worst.max(0.0)))
}

fn lmi_calibration(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for k in 0..4 {
        let f = ctx.fir(2, 1 + k % 2, 3 + 3 * k, 1.0);
        let oracle = norms::hinf_norm_fir(&f, 1e-9).value;
        let lmi = synthesis::lmi_min_bound(&f, &InteriorPoint::default())?;
        worst = worst.max((lmi - oracle).abs() / oracle);
    }
    Ok((4, worst))
}

fn perturbed_instance(ctx: &mut Ctx) -> Result<(UncertainModel, YoulaParam, uncertainty::Perturbation, f64, f64)> {
    let mut g = ctx.stable(3, 1, 2, 1.2);
    g.d = Mat::zeros(2, 1);
    let nominal = ctx.dcf(&g)?;
    let q = YoulaParam::Fir(ctx.fir(1, 2, 3, 0.1));
    let map = uncertainty::factor_map(&nominal, &q)?;
    let fnorm = hinf(&map)?;
    let fh2 = norms::h2_norm(&map)?.value;
    let gamma = ctx.rng.random_range(0.1..0.9) / fnorm;
    let seed = ctx.rng.random();
    let delta = uncertainty::sample_perturbation(2, 1, gamma, 2, seed)?;
    Ok((UncertainModel { nominal, gamma }, q, delta, fnorm, fh2))
}

fn dual_path_cost(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let (m, q, d, _, _) = perturbed_instance(ctx)?;
        let factored = uncertainty::lqg_cost(&m, &d, &q)?;
        let k = factorization::youla_controller(&m.nominal, &q)?.controller;
        let direct = uncertainty::lqg_cost_direct(&uncertainty::perturbed_plant(&m, &d)?, &k)?;
        worst = worst.max((factored - direct).abs() / direct);
    }
    Ok((8, worst))
}

fn cost_bound_dominance(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let mut worst = f64::MIN;
    for _ in 0..8 {
        let (m, q, d, fnorm, fh2) = perturbed_instance(ctx)?;
        let cost = uncertainty::lqg_cost(&m, &d, &q)?;
        let nn = uncertainty::nominal_norm(&m.nominal)?;
        worst = worst.max(cost - uncertainty::cost_upper_bound(m.gamma, fnorm, fh2, nn));
    }
    Ok((8, worst.max(0.0)))
}

fn hankel_exactness(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let fir = ctx.fir(2, 2, 4, 1.0);
    let mut coeffs = fir.coeffs.clone();
    coeffs[0] = Mat::zeros(2, 2);
    let sys = FirSeries::new(coeffs)?.to_state_space();
    let seed = ctx.rng.random();
    let u = sysid::spaced_impulses(2, 4000, 10, seed);
    let z = sys.filter(&u)?;
    let est = sysid::ols_hankel(&u, &z, 5, 1990)?;
    let exact = HankelEstimate::exact(&sys, 5);
    Ok((1, (est.h - exact.h).amax()))
}

fn ho_kalman_recovery(_: &mut Ctx) -> Result<(usize, f64)> {
    let sys = StateSpace::from_rows(1, 1, 1, &[0.5], &[1.0], &[1.0], &[0.0])?;
    let est = sysid::ho_kalman(&HankelEstimate::exact(&sys, 20), None, 1e-10)?;
    Ok((1, (est.a()[(0, 0)] - 0.5).abs()))
}

fn robust_certificate(ctx: &mut Ctx) -> Result<(usize, f64)> {
    let g = StateSpace::from_rows(1, 1, 1, &[1.5], &[1.0], &[1.0], &[0.0])?;
    let dcf = factorization::normalized_left_dcf(&g, &factorization::lqr_gain(&g)?)?;
    let cfg = SynthesisConfig { gamma: 0.05, fir_len: 6, delta_grid: 5, refine_iters: 4, trunc_tol: 1e-3, ..Default::default() };
    let res = synthesis::solve_outer(&dcf, &cfg, &InteriorPoint::default())?;
    let q = YoulaParam::Fir(res.q_star.clone());
    let mut flags = vec![uncertainty::is_gamma_robust(&dcf, &q, cfg.gamma)?.robust];
    let model = UncertainModel { nominal: dcf, gamma: cfg.gamma };
    for _ in 0..20 {
        let seed = ctx.rng.random();
        let d = uncertainty::sample_perturbation(1, 1, cfg.gamma, 2, seed)?;
        let gp = uncertainty::perturbed_plant(&model, &d)?;
        flags.push(factorization::is_internally_stabilizing(&gp, &res.controller)?);
    }
    Ok((flags.len(), failures(flags.into_iter())))
}
