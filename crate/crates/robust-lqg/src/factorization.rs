//! Doubly coprime factorizations, Youla and dual-Youla parameterizations and
//! closed-loop maps.
//!
//! Loop conventions: `y = G v + nu`, `v = u + w`, `u = K z`, `z = r - y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lti::{self, FirSeries, StateSpace};

/// Grid tolerance for the Bezout identity.
pub const BEZOUT_TOL: f64 = 1e-7;

/// The eight stable factors of a doubly coprime factorization.
///
/// `mt`, `nt`, `xt`, `yt` are the left (tilde) factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dcf {
    pub m: StateSpace,
    pub n: StateSpace,
    pub mt: StateSpace,
    pub nt: StateSpace,
    pub x: StateSpace,
    pub y: StateSpace,
    pub xt: StateSpace,
    pub yt: StateSpace,
}

impl Dcf {
    /// Number of plant inputs.
    pub fn inputs(&self) -> usize {
        self.m.ny()
    }

    /// Number of plant outputs.
    pub fn outputs(&self) -> usize {
        self.mt.ny()
    }

    /// `M̃⁻¹ Ñ`, with cancelled modes removed.
    pub fn plant(&self) -> Result<StateSpace> {
        Ok(self.mt.inverse()?.mul(&self.nt)?.reduce(1e-10))
    }

    /// Central controller `X̃ Ỹ⁻¹`.
    pub fn central_controller(&self) -> Result<StateSpace> {
        Ok(self.xt.mul(&self.yt.inverse()?)?.reduce(1e-10))
    }

    /// Premultiply the left factors by `z` and postmultiply `Ỹ`, `X̃` by `z⁻¹`.
    /// Both Bezout products and the plant/controller pair are unchanged.
    pub fn scale_left(&self, z: &Mat) -> Result<Dcf> {
        let zinv = linalg::inverse(z).ok_or_else(|| Error::Singular("left scaling".into()))?;
        Ok(Dcf {
            mt: self.mt.premul(z)?,
            nt: self.nt.premul(z)?,
            yt: self.yt.postmul(&zinv)?,
            xt: self.xt.postmul(&zinv)?,
            ..self.clone()
        })
    }

    /// `[Ỹ; X̃]`, the central factor map.
    pub fn central_map(&self) -> Result<StateSpace> {
        StateSpace::vstack(&[&self.yt, &self.xt])
    }
}

fn check_stable(a: &Mat, what: &str) -> Result<()> {
    if a.nrows() > 0 && lti::spectral_radius(a)? >= 1.0 - lti::STABILITY_MARGIN {
        return Err(Error::Unstable(format!("{what} is not stable")));
    }
    Ok(())
}

/// Observer-based DCF from a state-feedback gain `f` (`A - B F` stable) and an
/// observer gain `l` (`A - L C` stable).
pub fn observer_dcf(plant: &StateSpace, f: &Mat, l: &Mat) -> Result<Dcf> {
    let (nx, nu, ny) = (plant.nx(), plant.nu(), plant.ny());
    if f.shape() != (nu, nx) || l.shape() != (nx, ny) {
        return Err(Error::dim("observer_dcf: gain shapes"));
    }
    let (a, b, c, d) = (&plant.a, &plant.b, &plant.c, &plant.d);
    let af = a - b * f;
    let al = a - l * c;
    check_stable(&af, "A - B F")?;
    check_stable(&al, "A - L C")?;
    let cf = c - d * f;
    let bl = b - l * d;
    let im = Mat::identity(nu, nu);
    let ip = Mat::identity(ny, ny);
    let ss = |a: &Mat, b: Mat, c: Mat, d: Mat| StateSpace::new(a.clone(), b, c, d);
    Ok(Dcf {
        m: ss(&af, b.clone(), -f, im.clone())?,
        n: ss(&af, b.clone(), cf.clone(), d.clone())?,
        xt: ss(&af, l.clone(), f.clone(), Mat::zeros(nu, ny))?,
        yt: ss(&af, l.clone(), cf, ip.clone())?,
        mt: ss(&al, -l, c.clone(), ip)?,
        nt: ss(&al, bl.clone(), c.clone(), d.clone())?,
        x: ss(&al, l.clone(), f.clone(), Mat::zeros(nu, ny))?,
        y: ss(&al, bl, f.clone(), im)?,
    })
}

/// LQR gain for unit state and input weights.
pub fn lqr_gain(plant: &StateSpace) -> Result<Mat> {
    let (nx, nu) = (plant.nx(), plant.nu());
    if nx == 0 {
        return Ok(Mat::zeros(nu, 0));
    }
    let q = Mat::identity(nx, nx);
    let r = Mat::identity(nu, nu);
    let p = lti::solve_dare(&plant.a, &plant.b, &q, &r)?;
    lti::dare_gain(&plant.a, &plant.b, &r, None, &p)
}

/// Kalman (observer) gain for unit process and measurement weights.
pub fn kalman_gain(plant: &StateSpace) -> Result<Mat> {
    let (nx, ny) = (plant.nx(), plant.ny());
    if nx == 0 {
        return Ok(Mat::zeros(0, ny));
    }
    let q = Mat::identity(nx, nx);
    let r = Mat::identity(ny, ny);
    let at = plant.a.transpose();
    let ct = plant.c.transpose();
    let p = lti::solve_dare(&at, &ct, &q, &r)?;
    Ok(lti::dare_gain(&at, &ct, &r, None, &p)?.transpose())
}

/// Observer DCF with unit-weight LQR and Kalman gains.
pub fn default_dcf(plant: &StateSpace) -> Result<Dcf> {
    observer_dcf(plant, &lqr_gain(plant)?, &kalman_gain(plant)?)
}

/// Observer gain and left scaling that make `[M̃ Ñ]` co-inner.
pub fn normalized_left_gain(plant: &StateSpace) -> Result<(Mat, Mat)> {
    let (nx, ny) = (plant.nx(), plant.ny());
    let (a, b, c, d) = (&plant.a, &plant.b, &plant.c, &plant.d);
    let r = Mat::identity(ny, ny) + d * d.transpose();
    if nx == 0 {
        return Ok((Mat::zeros(0, ny), inv_root(&r)?));
    }
    let s = b * d.transpose();
    let p = lti::solve_dare_cross(
        &a.transpose(),
        &c.transpose(),
        &(b * b.transpose()),
        &r,
        Some(&s),
    )?;
    let l = lti::dare_gain(&a.transpose(), &c.transpose(), &r, Some(&s), &p)?.transpose();
    let z = inv_root(&(r + c * p * c.transpose()))?;
    Ok((l, z))
}

fn inv_root(m: &Mat) -> Result<Mat> {
    linalg::inv_sqrtm_pd(m).ok_or_else(|| Error::Singular("inverse square root".into()))
}

/// DCF with the given state-feedback gain and a normalized left factorization.
pub fn normalized_left_dcf(plant: &StateSpace, f: &Mat) -> Result<Dcf> {
    let (l, z) = normalized_left_gain(plant)?;
    observer_dcf(plant, f, &l)?.scale_left(&z)
}

/// Identity factorization of a stable plant: `M = M̃ = I`, `N = Ñ = G`, `X = X̃ = 0`, `Y = Ỹ = I`.
pub fn identity_dcf(plant: &StateSpace) -> Result<Dcf> {
    if !plant.is_stable() {
        return Err(Error::Unstable("identity factorization needs a stable plant".into()));
    }
    observer_dcf(
        plant,
        &Mat::zeros(plant.nu(), plant.nx()),
        &Mat::zeros(plant.nx(), plant.ny()),
    )
}

fn max_grid_error(lhs: &[[&StateSpace; 2]; 2], rhs: &[[&StateSpace; 2]; 2], grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in grid {
        let eval = |blk: &[[&StateSpace; 2]; 2]| -> Result<linalg::CMat> {
            let r0 = linalg::hstack(&[&blk[0][0].freq_response(w)?, &blk[0][1].freq_response(w)?]);
            let r1 = linalg::hstack(&[&blk[1][0].freq_response(w)?, &blk[1][1].freq_response(w)?]);
            Ok(linalg::vstack(&[&r0, &r1]))
        };
        let prod = eval(lhs)? * eval(rhs)?;
        let n = prod.nrows();
        let err = linalg::sigma_max_c(&(prod - linalg::CMat::identity(n, n)));
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Largest deviation of either Bezout product from the identity on the default grid.
pub fn verify_bezout(dcf: &Dcf) -> Result<f64> {
    let neg_x = dcf.x.neg();
    let neg_n = dcf.n.neg();
    let left = [[&dcf.mt, &dcf.nt], [&neg_x, &dcf.y]];
    let right = [[&dcf.yt, &neg_n], [&dcf.xt, &dcf.m]];
    let grid = lti::default_grid();
    Ok(max_grid_error(&left, &right, &grid)?.max(max_grid_error(&right, &left, &grid)?))
}

/// Youla parameter, carried either as FIR coefficients or as a realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", content = "value", rename_all = "snake_case")]
pub enum YoulaParam {
    Fir(FirSeries),
    StateSpace(StateSpace),
}

impl YoulaParam {
    pub fn zero(inputs: usize, outputs: usize) -> Self {
        YoulaParam::StateSpace(StateSpace::zero(inputs, outputs))
    }

    pub fn to_state_space(&self) -> StateSpace {
        match self {
            YoulaParam::Fir(f) => f.to_state_space(),
            YoulaParam::StateSpace(s) => s.clone(),
        }
    }
}

/// Controller `K_Q` together with its four Youla-modified factors.
#[derive(Clone, Debug)]
pub struct YoulaController {
    pub controller: StateSpace,
    pub x_q: StateSpace,
    pub y_q: StateSpace,
    pub xt_q: StateSpace,
    pub yt_q: StateSpace,
}

/// `X̃_Q = X̃ + M Q` and `Ỹ_Q = Ỹ - N Q`.
pub fn right_youla_factors(dcf: &Dcf, q: &StateSpace) -> Result<(StateSpace, StateSpace)> {
    check_youla_shape(dcf, q)?;
    Ok((dcf.xt.add(&dcf.m.mul(q)?)?, dcf.yt.sub(&dcf.n.mul(q)?)?))
}

fn check_youla_shape(dcf: &Dcf, q: &StateSpace) -> Result<()> {
    if q.ny() != dcf.inputs() || q.nu() != dcf.outputs() {
        return Err(Error::dim("Youla parameter must be inputs x outputs"));
    }
    if !q.is_stable() {
        return Err(Error::Unstable("Youla parameter must be stable".into()));
    }
    Ok(())
}

pub fn youla_controller(dcf: &Dcf, q: &YoulaParam) -> Result<YoulaController> {
    let q = q.to_state_space();
    let (xt_q, yt_q) = right_youla_factors(dcf, &q)?;
    let x_q = dcf.x.add(&q.mul(&dcf.mt)?)?;
    let y_q = dcf.y.sub(&q.mul(&dcf.nt)?)?;
    let yinv = yt_q
        .inverse()
        .map_err(|_| Error::Singular("Youla factor Ỹ_Q has singular feedthrough".into()))?;
    let controller = xt_q.mul(&yinv)?.reduce(1e-10);
    Ok(YoulaController {
        controller,
        x_q,
        y_q,
        xt_q,
        yt_q,
    })
}

/// Plant `G_R` generated by a dual-Youla parameter, with its factors.
#[derive(Clone, Debug)]
pub struct DualYoulaPlant {
    pub plant: StateSpace,
    pub m_r: StateSpace,
    pub n_r: StateSpace,
    pub mt_r: StateSpace,
    pub nt_r: StateSpace,
}

pub fn dual_youla_plant(dcf: &Dcf, r: &StateSpace) -> Result<DualYoulaPlant> {
    if r.ny() != dcf.outputs() || r.nu() != dcf.inputs() {
        return Err(Error::dim("dual-Youla parameter must be outputs x inputs"));
    }
    if !r.is_stable() {
        return Err(Error::Unstable("dual-Youla parameter must be stable".into()));
    }
    let m_r = dcf.m.sub(&dcf.xt.mul(r)?)?;
    let n_r = dcf.n.add(&dcf.yt.mul(r)?)?;
    let mt_r = dcf.mt.sub(&r.mul(&dcf.x)?)?;
    let nt_r = dcf.nt.add(&r.mul(&dcf.y)?)?;
    let minv = m_r
        .inverse()
        .map_err(|_| Error::Singular("M_R has singular feedthrough".into()))?;
    let plant = n_r.mul(&minv)?.reduce(1e-10);
    Ok(DualYoulaPlant {
        plant,
        m_r,
        n_r,
        mt_r,
        nt_r,
    })
}

/// Dual-Youla parameter of `plant` relative to `dcf`, assuming the central
/// controller stabilizes it: `R = (M̃ N_p - Ñ M_p)(Y M_p + X N_p)⁻¹`.
pub fn dual_youla_parameter(dcf: &Dcf, plant: &StateSpace) -> Result<StateSpace> {
    let own = default_dcf(plant)?;
    let num = dcf.mt.mul(&own.n)?.sub(&dcf.nt.mul(&own.m)?)?;
    let den = dcf.y.mul(&own.m)?.add(&dcf.x.mul(&own.n)?)?;
    let r = num.mul(&den.inverse()?)?.reduce(1e-9);
    if !r.is_stable() {
        return Err(Error::Unstable(
            "central controller does not stabilize the plant".into(),
        ));
    }
    Ok(r)
}

/// Row and column labels of the closed-loop map table.
pub const CLOSED_LOOP_OUTPUTS: [&str; 4] = ["y", "u", "z", "v"];
pub const CLOSED_LOOP_INPUTS: [&str; 3] = ["r", "w", "nu"];

/// Closed-loop maps from `(r, w, nu)` to `(y, u, z, v)`, built from the left factors.
#[derive(Clone, Debug)]
pub struct ClosedLoopMaps {
    pub entries: [[StateSpace; 3]; 4],
}

impl ClosedLoopMaps {
    /// The full 4x3 block map as one realization.
    pub fn assembled(&self) -> Result<StateSpace> {
        let rows: Vec<StateSpace> = self
            .entries
            .iter()
            .map(|row| StateSpace::hstack(&[&row[0], &row[1], &row[2]]))
            .collect::<Result<_>>()?;
        let refs: Vec<&StateSpace> = rows.iter().collect();
        StateSpace::vstack(&refs)
    }
}

pub fn closed_loop_maps(dcf: &Dcf, q: &YoulaParam) -> Result<ClosedLoopMaps> {
    let q = q.to_state_space();
    let (xt_q, yt_q) = right_youla_factors(dcf, &q)?;
    let (p, m) = (dcf.outputs(), dcf.inputs());
    let ym = yt_q.mul(&dcf.mt)?;
    let yn = yt_q.mul(&dcf.nt)?;
    let xm = xt_q.mul(&dcf.mt)?;
    let xn = xt_q.mul(&dcf.nt)?;
    let ip = StateSpace::identity(p);
    let im = StateSpace::identity(m);
    Ok(ClosedLoopMaps {
        entries: [
            [ip.sub(&ym)?, yn.clone(), ym.clone()],
            [xm.clone(), xn.neg(), xm.neg()],
            [ym.clone(), yn.neg(), ym.neg()],
            [xm.clone(), im.sub(&xn)?, xm.neg()],
        ],
    })
}

/// Closed-loop state matrix of the negative-feedback loop of `plant` and `controller`.
pub fn closed_loop_state_matrix(plant: &StateSpace, controller: &StateSpace) -> Result<Mat> {
    if controller.nu() != plant.ny() || controller.ny() != plant.nu() {
        return Err(Error::dim("controller must be inputs x outputs"));
    }
    let (ng, nk) = (plant.nx(), controller.nx());
    let m = plant.nu();
    let e = linalg::inverse(&(Mat::identity(m, m) + &controller.d * &plant.d))
        .ok_or_else(|| Error::Singular("ill-posed loop: I + D_K D_G singular".into()))?;
    // u = E (C_k x_k - D_k C_g x_g), y = C_g x_g + D_g u
    let u_g = -(&e * &controller.d * &plant.c);
    let u_k = &e * &controller.c;
    let y_g = &plant.c + &plant.d * &u_g;
    let y_k = &plant.d * &u_k;
    let mut a = Mat::zeros(ng + nk, ng + nk);
    a.view_mut((0, 0), (ng, ng)).copy_from(&(&plant.a + &plant.b * &u_g));
    a.view_mut((0, ng), (ng, nk)).copy_from(&(&plant.b * &u_k));
    a.view_mut((ng, 0), (nk, ng)).copy_from(&(-(&controller.b * &y_g)));
    a.view_mut((ng, ng), (nk, nk)).copy_from(&(&controller.a - &controller.b * &y_k));
    Ok(a)
}

pub fn is_internally_stabilizing(plant: &StateSpace, controller: &StateSpace) -> Result<bool> {
    let a = closed_loop_state_matrix(plant, controller)?;
    if a.nrows() == 0 {
        return Ok(true);
    }
    Ok(lti::spectral_radius(&a)? < 1.0 - lti::STABILITY_MARGIN)
}
