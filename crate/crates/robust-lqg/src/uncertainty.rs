//! Coprime-factor uncertainty sets, robust stability and the LQG cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::{self, Dcf, YoulaParam};
use crate::linalg::{self, Mat};
use crate::lti::{self, StateSpace};
use crate::norms::{self, DEFAULT_TOL};

/// Additive perturbation `[ΔM̃ ΔÑ]` of the left factors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Perturbation {
    pub dm: StateSpace,
    pub dn: StateSpace,
    pub joint_norm: f64,
}

impl Perturbation {
    pub fn zero(outputs: usize, inputs: usize) -> Self {
        Perturbation {
            dm: StateSpace::zero(outputs, outputs),
            dn: StateSpace::zero(outputs, inputs),
            joint_norm: 0.0,
        }
    }

    /// `[ΔM̃ ΔÑ]` as one system.
    pub fn joint(&self) -> Result<StateSpace> {
        StateSpace::hstack(&[&self.dm, &self.dn])
    }
}

/// Nominal factorization plus the radius of the uncertainty set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UncertainModel {
    pub nominal: Dcf,
    pub gamma: f64,
}

/// Random stable perturbation with joint H∞ norm a random fraction of `gamma`.
pub fn sample_perturbation(
    outputs: usize,
    inputs: usize,
    gamma: f64,
    order: usize,
    seed: u64,
) -> Result<Perturbation> {
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = rng.random_range(0.1..0.9);
    let joint = lti::random_stable(&mut rng, order, outputs + inputs, outputs, radius);
    let norm = norms::hinf_norm(&joint, DEFAULT_TOL)?.upper();
    let fraction: f64 = loop {
        let f: f64 = rng.random();
        if f > 0.0 {
            break f;
        }
    };
    let joint = if norm > 0.0 { joint.scale(fraction * gamma / norm) } else { joint };
    let joint_norm = if norm > 0.0 { fraction * gamma } else { 0.0 };
    let split = |cols: std::ops::Range<usize>| -> Result<StateSpace> {
        StateSpace::new(
            joint.a.clone(),
            joint.b.columns(cols.start, cols.len()).into_owned(),
            joint.c.clone(),
            joint.d.columns(cols.start, cols.len()).into_owned(),
        )
    };
    Ok(Perturbation {
        dm: split(0..outputs)?,
        dn: split(outputs..outputs + inputs)?,
        joint_norm,
    })
}

fn perturbed_left(model: &UncertainModel, delta: &Perturbation) -> Result<(StateSpace, StateSpace)> {
    Ok((
        model.nominal.mt.add(&delta.dm)?,
        model.nominal.nt.add(&delta.dn)?,
    ))
}

/// `(M̃ + ΔM̃)⁻¹ (Ñ + ΔÑ)`.
pub fn perturbed_plant(model: &UncertainModel, delta: &Perturbation) -> Result<StateSpace> {
    let (mt, nt) = perturbed_left(model, delta)?;
    let inv = mt
        .inverse()
        .map_err(|_| Error::Singular("perturbed denominator has singular feedthrough".into()))?;
    Ok(inv.mul(&nt)?.reduce(1e-10))
}

/// `[Ỹ_Q; X̃_Q]` for a Youla parameter.
pub fn factor_map(dcf: &Dcf, q: &YoulaParam) -> Result<StateSpace> {
    let (xt_q, yt_q) = factorization::right_youla_factors(dcf, &q.to_state_space())?;
    StateSpace::vstack(&[&yt_q, &xt_q])
}

/// `Φ11 = I + [ΔM̃ ΔÑ] [Ỹ_Q; X̃_Q]`.
pub fn phi11(dcf: &Dcf, q: &YoulaParam, delta: &Perturbation) -> Result<StateSpace> {
    let map = factor_map(dcf, q)?;
    StateSpace::identity(dcf.outputs()).add(&delta.joint()?.mul(&map)?)
}

/// Right-factor perturbations `(ΔN, ΔM)` such that `(N + ΔN)(M + ΔM)⁻¹` is the
/// perturbed plant, taken from an observer factorization of that plant.
pub fn right_perturbation(model: &UncertainModel, delta: &Perturbation) -> Result<(StateSpace, StateSpace)> {
    let plant = perturbed_plant(model, delta)?;
    let own = factorization::default_dcf(&plant)?;
    Ok((own.n.sub(&model.nominal.n)?, own.m.sub(&model.nominal.m)?))
}

/// `Φ22 = I + [X_Q Y_Q] [ΔN; ΔM]`.
pub fn phi22(dcf: &Dcf, q: &YoulaParam, dn: &StateSpace, dm: &StateSpace) -> Result<StateSpace> {
    let yk = factorization::youla_controller(dcf, q)?;
    let row = StateSpace::hstack(&[&yk.x_q, &yk.y_q])?;
    let col = StateSpace::vstack(&[dn, dm])?;
    StateSpace::identity(dcf.inputs()).add(&row.mul(&col)?)
}

/// Outcome of the robust-stability test `‖[Ỹ_Q; X̃_Q]‖∞ ≤ 1/γ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessCheck {
    pub robust: bool,
    pub factor_hinf: f64,
    pub margin: f64,
    /// The norm sits within tolerance of `1/γ`.
    pub boundary: bool,
}

pub fn is_gamma_robust(dcf: &Dcf, q: &YoulaParam, gamma: f64) -> Result<RobustnessCheck> {
    let res = norms::hinf_norm(&factor_map(dcf, q)?, DEFAULT_TOL)?;
    let limit = if gamma > 0.0 { 1.0 / gamma } else { f64::INFINITY };
    let margin = limit - res.value;
    let boundary = limit.is_finite() && res.lower() <= limit && res.upper() >= limit;
    Ok(RobustnessCheck {
        robust: margin >= 0.0,
        factor_hinf: res.value,
        margin,
        boundary,
    })
}

/// Map from `(nu, w)` to `(y, u)` of the negative-feedback loop of `plant` and `controller`.
pub fn performance_map(plant: &StateSpace, controller: &StateSpace) -> Result<StateSpace> {
    let a = factorization::closed_loop_state_matrix(plant, controller)?;
    let (ng, nk) = (plant.nx(), controller.nx());
    let (m, p) = (plant.nu(), plant.ny());
    let e = linalg::inverse(&(Mat::identity(m, m) + &controller.d * &plant.d))
        .ok_or_else(|| Error::Singular("ill-posed loop".into()))?;
    // u = E (C_k x_k - D_k C_g x_g - D_k D_g w - D_k nu)
    let u_x = linalg::hstack(&[&(-(&e * &controller.d * &plant.c)), &(&e * &controller.c)]);
    let u_nu = -(&e * &controller.d);
    let u_w = -(&e * &controller.d * &plant.d);
    // y = C_g x_g + D_g u + D_g w + nu
    let cg = linalg::hstack(&[&plant.c, &Mat::zeros(p, nk)]);
    let y_x = &cg + &plant.d * &u_x;
    let y_nu = Mat::identity(p, p) + &plant.d * &u_nu;
    let y_w = &plant.d + &plant.d * &u_w;
    // x_g+ gets B_g (u + w); x_k+ gets -B_k y
    let mut b = Mat::zeros(ng + nk, p + m);
    b.view_mut((0, 0), (ng, p)).copy_from(&(&plant.b * &u_nu));
    b.view_mut((0, p), (ng, m)).copy_from(&(&plant.b * (&u_w + Mat::identity(m, m))));
    b.view_mut((ng, 0), (nk, p)).copy_from(&(-(&controller.b * &y_nu)));
    b.view_mut((ng, p), (nk, m)).copy_from(&(-(&controller.b * &y_w)));
    let c = linalg::vstack(&[&y_x, &u_x]);
    let d = linalg::vstack(&[
        &linalg::hstack(&[&y_nu, &y_w]),
        &linalg::hstack(&[&u_nu, &u_w]),
    ]);
    StateSpace::new(a, b, c, d)
}

/// Square-root LQG cost of `controller` on `plant`, computed from the loop directly.
pub fn lqg_cost_direct(plant: &StateSpace, controller: &StateSpace) -> Result<f64> {
    if !factorization::is_internally_stabilizing(plant, controller)? {
        return Err(Error::Unstable("closed loop is unstable".into()));
    }
    Ok(norms::h2_norm(&performance_map(plant, controller)?)?.value)
}

/// Square-root LQG cost `‖[Ỹ_Q; X̃_Q] Φ11⁻¹ [M̃ + ΔM̃, Ñ + ΔÑ]‖_H2` of the Youla
/// controller on the perturbed plant.
pub fn lqg_cost(model: &UncertainModel, delta: &Perturbation, q: &YoulaParam) -> Result<f64> {
    let dcf = &model.nominal;
    let phi = phi11(dcf, q, delta)?;
    let phi_inv = phi
        .inverse()
        .map_err(|_| Error::Unstable("Φ11 has singular feedthrough".into()))?;
    if !phi_inv.is_stable() {
        return Err(Error::Unstable("perturbed closed loop is unstable".into()));
    }
    let (mt, nt) = perturbed_left(model, delta)?;
    let map = factor_map(dcf, q)?
        .mul(&phi_inv)?
        .mul(&StateSpace::hstack(&[&mt, &nt])?)?;
    Ok(norms::h2_norm(&map)?.value)
}

/// `‖[M̃ Ñ]‖∞` of the nominal factorization.
pub fn nominal_norm(dcf: &Dcf) -> Result<f64> {
    Ok(norms::hinf_norm(&StateSpace::hstack(&[&dcf.mt, &dcf.nt])?, DEFAULT_TOL)?.value)
}

/// `h(γ, α) = (1 + γ α)(‖[M̃ Ñ]‖∞ + γ)`.
pub fn h_func(gamma: f64, alpha: f64, nominal_norm: f64) -> f64 {
    (1.0 + gamma * alpha) * (nominal_norm + gamma)
}

/// `g = ‖[Ỹ_Q; X̃_Q]‖∞ (1 + γ ‖[Ỹ_Q; X̃_Q]‖∞)(‖[M̃ Ñ]‖∞ + γ)`.
pub fn g_func(gamma: f64, factor_norm: f64, nominal_norm: f64) -> f64 {
    factor_norm * (1.0 + gamma * factor_norm) * (nominal_norm + gamma)
}

/// Cost bound `h(γ, ‖·‖∞) ‖·‖_H2 / (1 − γ ‖·‖∞)` for a γ-robust factor map.
pub fn cost_upper_bound(gamma: f64, factor_hinf: f64, factor_h2: f64, nominal_norm: f64) -> f64 {
    let eta = gamma * factor_hinf;
    if eta >= 1.0 {
        return f64::INFINITY;
    }
    h_func(gamma, factor_hinf, nominal_norm) * factor_h2 / (1.0 - eta)
}

/// Bound on the relative excess of the squared cost: `g² / (1 − η)² − 1`.
pub fn relative_error_bound(gamma: f64, factor_hinf: f64, nominal_norm: f64) -> f64 {
    let eta = gamma * factor_hinf;
    if eta >= 1.0 {
        return f64::INFINITY;
    }
    let g = g_func(gamma, factor_hinf, nominal_norm);
    g * g / ((1.0 - eta) * (1.0 - eta)) - 1.0
}
