use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_lqg::factorization::{
    default_dcf, identity_dcf, is_internally_stabilizing, youla_controller, Dcf, YoulaParam,
};
use robust_lqg::linalg::{self, CMat, Mat};
use robust_lqg::lti::{frequency_grid, random_stable, FirSeries, StateSpace};
use robust_lqg::norms::{h2_norm, hinf_norm, DEFAULT_TOL};
use robust_lqg::uncertainty::{
    cost_upper_bound, factor_map, g_func, h_func, is_gamma_robust, lqg_cost, lqg_cost_direct,
    nominal_norm, perturbed_plant, phi11, phi22, right_perturbation, sample_perturbation,
    Perturbation, UncertainModel,
};

fn resp(s: &StateSpace, w: f64) -> CMat {
    s.freq_response(w).unwrap()
}

fn unstable_plant(seed: u64) -> StateSpace {
    random_stable(&mut ChaCha8Rng::seed_from_u64(seed), 3, 1, 2, 1.2)
}

fn small_fir(seed: u64) -> YoulaParam {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    YoulaParam::Fir(
        FirSeries::new(
            (0..3)
                .map(|_| {
                    Mat::from_fn(1, 2, |_, _| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        0.1 * v
                    })
                })
                .collect(),
        )
        .unwrap(),
    )
}

fn model(seed: u64, gamma: f64) -> UncertainModel {
    UncertainModel {
        nominal: default_dcf(&unstable_plant(seed)).unwrap(),
        gamma,
    }
}

fn hinf(s: &StateSpace) -> f64 {
    hinf_norm(s, DEFAULT_TOL).unwrap().value
}

#[test]
fn sampled_perturbations_respect_radius() {
    let d = sample_perturbation(2, 1, 0.1, 3, 7).unwrap();
    assert!(d.joint_norm < 0.1);
    assert!((hinf(&d.joint().unwrap()) - d.joint_norm).abs() < 1e-6 * 0.1);
    let c = sample_perturbation(2, 1, 0.1, 0, 8).unwrap();
    assert_eq!(c.dm.nx(), 0);
    assert_eq!(c.dn.nx(), 0);
    let worst = (0..1000u64)
        .map(|s| hinf(&sample_perturbation(2, 1, 0.3, 2, s).unwrap().joint().unwrap()))
        .fold(0.0, f64::max);
    assert!(worst < 0.3);
}

#[test]
fn perturbed_plant_examples() {
    let m = model(1, 0.1);
    let g = m.nominal.plant().unwrap();
    let zero = Perturbation::zero(2, 1);
    let grid = frequency_grid(32);
    assert!(perturbed_plant(&m, &zero).unwrap().grid_distance(&g, &grid).unwrap() < 1e-8);

    let s = random_stable(&mut ChaCha8Rng::seed_from_u64(2), 2, 1, 2, 0.7);
    let im = UncertainModel { nominal: identity_dcf(&s).unwrap(), gamma: 1.0 };
    let mut d = sample_perturbation(2, 1, 0.5, 2, 3).unwrap();
    d.dm = StateSpace::zero(2, 2);
    let gp = perturbed_plant(&im, &d).unwrap();
    assert!(gp.grid_distance(&s.add(&d.dn).unwrap(), &grid).unwrap() < 1e-10);

    let d = sample_perturbation(2, 1, 0.1, 2, 4).unwrap();
    let gp = perturbed_plant(&m, &d).unwrap();
    for &w in &grid {
        let mt = resp(&m.nominal.mt, w) + resp(&d.dm, w);
        let nt = resp(&m.nominal.nt, w) + resp(&d.dn, w);
        let oracle = mt.try_inverse().unwrap() * nt;
        let err = linalg::sigma_max_c(&(oracle.clone() - resp(&gp, w)));
        assert!(err < 1e-9 * linalg::sigma_max_c(&oracle).max(1.0));
    }
}

#[test]
fn phi11_examples() {
    let m = model(5, 0.1);
    let q = small_fir(6);
    let p = phi11(&m.nominal, &q, &Perturbation::zero(2, 1)).unwrap();
    assert!(p.grid_distance(&StateSpace::identity(2), &frequency_grid(16)).unwrap() < 1e-13);

    let fnorm = hinf(&factor_map(&m.nominal, &q).unwrap());
    let d = sample_perturbation(2, 1, 0.9 / fnorm, 2, 7).unwrap();
    let p = phi11(&m.nominal, &q, &d).unwrap();
    assert!(p.is_stable());
    assert!(p.inverse().unwrap().is_stable());
}

fn eq14_residual(m: &UncertainModel, q: &YoulaParam, d: &Perturbation) -> f64 {
    let dcf: &Dcf = &m.nominal;
    let yk = youla_controller(dcf, q).unwrap();
    let (dn, dm) = right_perturbation(m, d).unwrap();
    let p11 = phi11(dcf, q, d).unwrap();
    let p22 = phi22(dcf, q, &dn, &dm).unwrap();
    let n_p = dcf.n.add(&dn).unwrap();
    let m_p = dcf.m.add(&dm).unwrap();
    let mut worst: f64 = 0.0;
    for w in frequency_grid(64) {
        let top = linalg::hstack(&[
            &(resp(&dcf.mt, w) + resp(&d.dm, w)),
            &(resp(&dcf.nt, w) + resp(&d.dn, w)),
        ]);
        let bot = linalg::hstack(&[&(-resp(&yk.x_q, w)), &resp(&yk.y_q, w)]);
        let left = linalg::vstack(&[&top, &bot]);
        let top = linalg::hstack(&[&resp(&yk.yt_q, w), &(-resp(&n_p, w))]);
        let bot = linalg::hstack(&[&resp(&yk.xt_q, w), &resp(&m_p, w)]);
        let right = linalg::vstack(&[&top, &bot]);
        let mut expect = CMat::zeros(3, 3);
        expect.view_mut((0, 0), (2, 2)).copy_from(&resp(&p11, w));
        expect.view_mut((2, 2), (1, 1)).copy_from(&resp(&p22, w));
        let prod = left * right;
        worst = worst.max(linalg::sigma_max_c(&(prod - &expect)) / linalg::sigma_max_c(&expect).max(1.0));
    }
    worst
}

#[test]
fn block_identity_holds() {
    let m = model(8, 0.1);
    let q = small_fir(9);
    let d = sample_perturbation(2, 1, 0.05, 2, 10).unwrap();
    assert!(eq14_residual(&m, &q, &d) <= 1e-7);
}

#[test]
fn gamma_robust_examples() {
    let m = model(11, 0.1);
    let q = YoulaParam::zero(1, 2);
    assert!(is_gamma_robust(&m.nominal, &q, 1e-12).unwrap().robust);
    let central = hinf(&m.nominal.central_map().unwrap());
    let check = is_gamma_robust(&m.nominal, &q, 0.5 / central).unwrap();
    assert!(check.robust);
    assert!((check.margin - central).abs() < 1e-5 * central);
    let check = is_gamma_robust(&m.nominal, &q, 2.0 / central).unwrap();
    assert!(!check.robust);
}

#[test]
fn robust_controllers_survive_sampled_perturbations() {
    let m = model(12, 0.1);
    let q = small_fir(13);
    let fnorm = hinf(&factor_map(&m.nominal, &q).unwrap());
    let gamma = 0.95 / fnorm;
    assert!(is_gamma_robust(&m.nominal, &q, gamma).unwrap().robust);
    let k = youla_controller(&m.nominal, &q).unwrap().controller;
    let um = UncertainModel { gamma, ..m };
    for s in 0..200u64 {
        let d = sample_perturbation(2, 1, gamma, 2, 1000 + s).unwrap();
        let gp = perturbed_plant(&um, &d).unwrap();
        assert!(is_internally_stabilizing(&gp, &k).unwrap());
    }
}

#[test]
fn lqg_cost_examples() {
    let s = random_stable(&mut ChaCha8Rng::seed_from_u64(14), 2, 1, 2, 0.7);
    let im = UncertainModel { nominal: identity_dcf(&s).unwrap(), gamma: 0.1 };
    let q0 = YoulaParam::zero(1, 2);
    let zero = Perturbation::zero(2, 1);
    // K = 0: the cost is the H2 norm of [I, G; 0, 0]
    let oracle = (2.0 + h2_norm(&s).unwrap().value.powi(2)).sqrt();
    assert!((lqg_cost(&im, &zero, &q0).unwrap() - oracle).abs() < 1e-10);

    let m = model(15, 0.1);
    let q = small_fir(16);
    let map = factor_map(&m.nominal, &q).unwrap();
    let left = StateSpace::hstack(&[&m.nominal.mt, &m.nominal.nt]).unwrap();
    let nominal = h2_norm(&map.mul(&left).unwrap()).unwrap().value;
    assert!((lqg_cost(&m, &zero, &q).unwrap() - nominal).abs() < 1e-9 * nominal);
}

#[test]
fn bound_functions() {
    assert_eq!(h_func(0.0, 7.0, 1.3), 1.3);
    assert_eq!(g_func(0.0, 2.0, 3.0), 6.0);
    let eta: f64 = 0.2;
    assert!(1.0 / (1.0 - eta).powi(2) <= 2.0);
    assert!(cost_upper_bound(1.0, 1.0, 1.0, 1.0).is_infinite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cost_paths_agree_and_bound_holds(seed in 0u64..100_000, frac in 0.1f64..0.9) {
        let base = model(seed, 0.1);
        let q = small_fir(seed + 1);
        let fnorm = hinf(&factor_map(&base.nominal, &q).unwrap());
        let fh2 = h2_norm(&factor_map(&base.nominal, &q).unwrap()).unwrap().value;
        let gamma = frac / fnorm;
        let m = UncertainModel { gamma, ..base };
        let d = sample_perturbation(2, 1, gamma, 2, seed + 2).unwrap();
        let factored = lqg_cost(&m, &d, &q).unwrap();
        let k = youla_controller(&m.nominal, &q).unwrap().controller;
        let direct = lqg_cost_direct(&perturbed_plant(&m, &d).unwrap(), &k).unwrap();
        prop_assert!((factored - direct).abs() <= 1e-6 * direct);
        let nn = nominal_norm(&m.nominal).unwrap();
        prop_assert!(factored <= cost_upper_bound(gamma, fnorm, fh2, nn) + 1e-6);
    }

    #[test]
    fn small_gain_gives_unimodular_phi(seed in 0u64..100_000, frac in 0.05f64..0.95) {
        let m = model(seed, 0.1);
        let q = small_fir(seed + 3);
        let fnorm = hinf(&factor_map(&m.nominal, &q).unwrap());
        let d = sample_perturbation(2, 1, frac / fnorm, 1, seed + 4).unwrap();
        let p = phi11(&m.nominal, &q, &d).unwrap();
        prop_assert!(p.is_stable());
        prop_assert!(p.inverse().unwrap().is_stable());
    }

    #[test]
    fn block_identity_random(seed in 0u64..100_000) {
        let m = model(seed, 0.1);
        let q = small_fir(seed + 5);
        let d = sample_perturbation(2, 1, 0.05, 2, seed + 6).unwrap();
        prop_assert!(eq14_residual(&m, &q, &d) <= 1e-7);
    }
}
