use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_lqg::factorization::{
    closed_loop_maps, default_dcf, dual_youla_parameter, dual_youla_plant, identity_dcf,
    is_internally_stabilizing, normalized_left_dcf, observer_dcf, verify_bezout, youla_controller,
    Dcf, YoulaParam,
};
use robust_lqg::linalg::{self, CMat, Mat};
use robust_lqg::lti::{frequency_grid, random_stable, FirSeries, StateSpace};

fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
    StateSpace::from_rows(1, 1, 1, &[a], &[b], &[c], &[d]).unwrap()
}

fn m1(v: f64) -> Mat {
    DMatrix::from_element(1, 1, v)
}

fn resp(s: &StateSpace, w: f64) -> CMat {
    s.freq_response(w).unwrap()
}

fn dist(a: &CMat, b: &CMat) -> f64 {
    linalg::sigma_max_c(&(a - b))
}

fn inv(a: &CMat) -> CMat {
    a.clone().try_inverse().unwrap()
}

fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

fn unstable_plant(seed: u64) -> StateSpace {
    random_stable(&mut ChaCha8Rng::seed_from_u64(seed), 4, 2, 2, 1.3)
}

fn random_fir(seed: u64, rows: usize, cols: usize, len: usize, scale: f64) -> FirSeries {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FirSeries::new(
        (0..len)
            .map(|_| {
                Mat::from_fn(rows, cols, |_, _| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    scale * v
                })
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn identity_dcf_of_stable_plant() {
    let g = random_stable(&mut ChaCha8Rng::seed_from_u64(1), 3, 2, 2, 0.8);
    let dcf = identity_dcf(&g).unwrap();
    for w in frequency_grid(16) {
        let gw = resp(&g, w);
        assert!(dist(&resp(&dcf.m, w), &eye(2)) < 1e-14);
        assert!(dist(&resp(&dcf.mt, w), &eye(2)) < 1e-14);
        assert!(dist(&resp(&dcf.y, w), &eye(2)) < 1e-14);
        assert!(dist(&resp(&dcf.yt, w), &eye(2)) < 1e-14);
        assert!(linalg::sigma_max_c(&resp(&dcf.x, w)) < 1e-14);
        assert!(linalg::sigma_max_c(&resp(&dcf.xt, w)) < 1e-14);
        assert!(dist(&resp(&dcf.n, w), &gw) < 1e-12);
        assert!(dist(&resp(&dcf.nt, w), &gw) < 1e-12);
    }
    assert!(verify_bezout(&dcf).unwrap() < 1e-12);
}

#[test]
fn deadbeat_factors_of_scalar_unstable_plant() {
    let g = scalar(1.5, 1.0, 1.0, 0.0);
    let dcf = observer_dcf(&g, &m1(1.5), &m1(1.5)).unwrap();
    // coefficients of 1, z^-1, z^-2 worked out by hand
    let expect: [(&StateSpace, [f64; 3]); 8] = [
        (&dcf.m, [1.0, -1.5, 0.0]),
        (&dcf.n, [0.0, 1.0, 0.0]),
        (&dcf.xt, [0.0, 2.25, 0.0]),
        (&dcf.yt, [1.0, 1.5, 0.0]),
        (&dcf.mt, [1.0, -1.5, 0.0]),
        (&dcf.nt, [0.0, 1.0, 0.0]),
        (&dcf.x, [0.0, 2.25, 0.0]),
        (&dcf.y, [1.0, 1.5, 0.0]),
    ];
    for (factor, coeffs) in expect {
        let mk = factor.markov_params(3);
        for k in 0..3 {
            assert!((mk.coeffs[k][(0, 0)] - coeffs[k]).abs() < 1e-15);
        }
    }
    assert!(verify_bezout(&dcf).unwrap() < 1e-13);
    assert!(observer_dcf(&g, &m1(0.0), &m1(1.5)).is_err());
}

#[test]
fn bezout_detects_perturbation() {
    let dcf = default_dcf(&unstable_plant(2)).unwrap();
    assert!(verify_bezout(&dcf).unwrap() < 1e-8);
    let bumped = Dcf {
        x: dcf.x.add(&StateSpace::gain(Mat::from_element(2, 2, 0.1))).unwrap(),
        ..dcf.clone()
    };
    assert!(verify_bezout(&bumped).unwrap() >= 0.05);
}

#[test]
fn factors_reproduce_plant() {
    let g = unstable_plant(3);
    let dcf = default_dcf(&g).unwrap();
    for w in frequency_grid(32) {
        let gw = resp(&g, w);
        let left = inv(&resp(&dcf.mt, w)) * resp(&dcf.nt, w);
        let right = resp(&dcf.n, w) * inv(&resp(&dcf.m, w));
        assert!(dist(&left, &gw) < 1e-9 * linalg::sigma_max_c(&gw).max(1.0));
        assert!(dist(&right, &gw) < 1e-9 * linalg::sigma_max_c(&gw).max(1.0));
    }
    assert!(dcf.plant().unwrap().grid_distance(&g, &frequency_grid(32)).unwrap() < 1e-8);
}

#[test]
fn normalized_left_factor_is_co_inner() {
    let g = StateSpace::new(
        unstable_plant(4).a,
        unstable_plant(4).b,
        unstable_plant(4).c,
        Mat::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.5]),
    )
    .unwrap();
    let f = robust_lqg::factorization::lqr_gain(&g).unwrap();
    let dcf = normalized_left_dcf(&g, &f).unwrap();
    assert!(verify_bezout(&dcf).unwrap() < 1e-8);
    for w in frequency_grid(64) {
        let row = linalg::hstack(&[&resp(&dcf.mt, w), &resp(&dcf.nt, w)]);
        assert!(dist(&(&row * row.adjoint()), &eye(2)) < 1e-9);
    }
}

#[test]
fn zero_youla_gives_central_controller() {
    let dcf = default_dcf(&unstable_plant(5)).unwrap();
    let k = youla_controller(&dcf, &YoulaParam::zero(2, 2)).unwrap();
    let central = dcf.central_controller().unwrap();
    assert!(k.controller.grid_distance(&central, &frequency_grid(32)).unwrap() < 1e-9);
}

#[test]
fn youla_on_identity_dcf_matches_closed_form() {
    let g = random_stable(&mut ChaCha8Rng::seed_from_u64(6), 3, 1, 1, 0.7);
    let dcf = identity_dcf(&g).unwrap();
    let q = random_stable(&mut ChaCha8Rng::seed_from_u64(7), 2, 1, 1, 0.6).scale(0.3);
    let k = youla_controller(&dcf, &YoulaParam::StateSpace(q.clone())).unwrap();
    for w in frequency_grid(32) {
        let qw = resp(&q, w);
        let oracle = &qw * inv(&(eye(1) - resp(&g, w) * &qw));
        assert!(dist(&resp(&k.controller, w), &oracle) < 1e-9);
    }
    assert!(is_internally_stabilizing(&g, &k.controller).unwrap());
}

#[test]
fn dual_youla_examples() {
    let g = unstable_plant(8);
    let dcf = default_dcf(&g).unwrap();
    let same = dual_youla_plant(&dcf, &StateSpace::zero(2, 2)).unwrap();
    assert!(same.plant.grid_distance(&g, &frequency_grid(32)).unwrap() < 1e-8);

    let s = random_stable(&mut ChaCha8Rng::seed_from_u64(9), 2, 1, 1, 0.8);
    let r = random_stable(&mut ChaCha8Rng::seed_from_u64(10), 2, 1, 1, 0.5);
    let gr = dual_youla_plant(&identity_dcf(&s).unwrap(), &r).unwrap();
    assert!(gr.plant.grid_distance(&s.add(&r).unwrap(), &frequency_grid(32)).unwrap() < 1e-10);
}

#[test]
fn dual_youla_parameter_round_trip() {
    let dcf = default_dcf(&unstable_plant(11)).unwrap();
    let r = random_stable(&mut ChaCha8Rng::seed_from_u64(12), 2, 2, 2, 0.6).scale(0.2);
    let gr = dual_youla_plant(&dcf, &r).unwrap();
    let back = dual_youla_parameter(&dcf, &gr.plant).unwrap();
    assert!(back.grid_distance(&r, &frequency_grid(32)).unwrap() < 1e-7);
}

fn eq7(g: &CMat, k: &CMat) -> CMat {
    let (p, m) = g.shape();
    let s = inv(&(eye(p) + g * k));
    let t = inv(&(eye(m) + k * g));
    let rows = [
        [&s * g * k, &s * g, s.clone()],
        [&t * k, -(&t * k * g), -(&t * k)],
        [s.clone(), -(&s * g), -s.clone()],
        [&t * k, t.clone(), -(&t * k)],
    ];
    let r: Vec<CMat> = rows
        .iter()
        .map(|row| linalg::hstack(&[&row[0], &row[1], &row[2]]))
        .collect();
    let refs: Vec<&CMat> = r.iter().collect();
    linalg::vstack(&refs)
}

#[test]
fn closed_loop_maps_match_definition_and_right_table() {
    let g = unstable_plant(13);
    let dcf = default_dcf(&g).unwrap();
    let q = random_fir(14, 2, 2, 4, 0.2);
    let yk = youla_controller(&dcf, &YoulaParam::Fir(q.clone())).unwrap();
    let maps = closed_loop_maps(&dcf, &YoulaParam::Fir(q.clone())).unwrap();
    let full = maps.assembled().unwrap();
    assert!(full.is_stable());
    for w in frequency_grid(24) {
        let gw = resp(&g, w);
        let kw = resp(&yk.controller, w);
        let direct = eq7(&gw, &kw);
        let got = resp(&full, w);
        assert!(dist(&direct, &got) < 1e-7 * linalg::sigma_max_c(&direct).max(1.0));

        // right-factor table
        let (n, m) = (resp(&dcf.n, w), resp(&dcf.m, w));
        let (xq, yq) = (resp(&yk.x_q, w), resp(&yk.y_q, w));
        let nx = &n * &xq;
        let mx = &m * &xq;
        let rows = [
            [nx.clone(), &n * &yq, eye(2) - &nx],
            [mx.clone(), -(eye(2) - &m * &yq), -mx.clone()],
            [eye(2) - &nx, -(&n * &yq), -(eye(2) - &nx)],
            [mx.clone(), &m * &yq, -mx.clone()],
        ];
        for (i, row) in rows.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                let block = got.view((2 * i, 2 * j), (2, 2)).into_owned();
                assert!(dist(entry, &block) < 1e-7 * linalg::sigma_max_c(entry).max(1.0));
            }
        }
        // input-to-control from noise is the negative of that from reference
        let ur = resp(&maps.entries[1][0], w);
        let unu = resp(&maps.entries[1][2], w);
        assert!(dist(&ur, &(-unu)) < 1e-12);
    }
}

#[test]
fn internal_stability_examples() {
    let stable = random_stable(&mut ChaCha8Rng::seed_from_u64(15), 2, 1, 1, 0.8);
    assert!(is_internally_stabilizing(&stable, &StateSpace::zero(1, 1)).unwrap());

    let g = scalar(1.5, 1.0, 1.0, 0.0);
    assert!(!is_internally_stabilizing(&g, &StateSpace::zero(1, 1)).unwrap());
    let dcf = observer_dcf(&g, &m1(1.5), &m1(1.5)).unwrap();
    let k = dcf.central_controller().unwrap();
    assert!(is_internally_stabilizing(&g, &k).unwrap());
    let a = robust_lqg::factorization::closed_loop_state_matrix(&g, &k).unwrap();
    assert!(robust_lqg::lti::spectral_radius(&a).unwrap() < 1e-4);

    let ill = StateSpace::gain(m1(-1.0));
    assert!(is_internally_stabilizing(&StateSpace::gain(m1(1.0)), &ill).is_err());
}

#[test]
fn dcf_json_round_trip() {
    let dcf = default_dcf(&unstable_plant(16)).unwrap();
    let text = serde_json::to_string(&dcf).unwrap();
    let back: Dcf = serde_json::from_str(&text).unwrap();
    assert_eq!(back, dcf);
    let gain = StateSpace::gain(Mat::from_row_slice(1, 2, &[1.0, 2.0]));
    let back: StateSpace = serde_json::from_str(&serde_json::to_string(&gain).unwrap()).unwrap();
    assert_eq!(back, gain);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn observer_dcf_satisfies_bezout(seed in 0u64..100_000) {
        let dcf = default_dcf(&unstable_plant(seed)).unwrap();
        prop_assert!(verify_bezout(&dcf).unwrap() <= 1e-8);
    }

    #[test]
    fn youla_controllers_stabilize(seed in 0u64..100_000) {
        let g = unstable_plant(seed);
        let dcf = default_dcf(&g).unwrap();
        for k in 0..4u64 {
            let q = YoulaParam::Fir(random_fir(seed * 7 + k, 2, 2, 5, 0.5));
            let yk = youla_controller(&dcf, &q).unwrap();
            prop_assert!(is_internally_stabilizing(&g, &yk.controller).unwrap());
            for w in frequency_grid(8) {
                let right = resp(&yk.xt_q, w) * inv(&resp(&yk.yt_q, w));
                let left = inv(&resp(&yk.y_q, w)) * resp(&yk.x_q, w);
                prop_assert!(dist(&right, &left) < 1e-7 * linalg::sigma_max_c(&left).max(1.0));
            }
        }
    }

    #[test]
    fn closed_loop_maps_are_affine_and_stable(seed in 0u64..100_000) {
        let dcf = default_dcf(&unstable_plant(seed)).unwrap();
        let q1 = random_fir(seed + 1, 2, 2, 3, 0.5);
        let q2 = random_fir(seed + 2, 2, 2, 3, 0.5);
        let at = |q: &FirSeries| closed_loop_maps(&dcf, &YoulaParam::Fir(q.clone())).unwrap().assembled().unwrap();
        let h12 = at(&q1.add(&q2).unwrap());
        let h1 = at(&q1);
        let h2 = at(&q2);
        let h0 = at(&FirSeries::zeros(2, 2, 1));
        prop_assert!(h12.is_stable() && h1.is_stable());
        for w in frequency_grid(16) {
            let combo = resp(&h12, w) - resp(&h1, w) - resp(&h2, w) + resp(&h0, w);
            prop_assert!(linalg::sigma_max_c(&combo) <= 1e-8);
        }
    }

    #[test]
    fn dual_youla_plants_are_stabilized(seed in 0u64..100_000) {
        let dcf = default_dcf(&unstable_plant(seed)).unwrap();
        let r = random_stable(&mut ChaCha8Rng::seed_from_u64(seed + 3), 2, 2, 2, 0.7).scale(0.5);
        let gr = dual_youla_plant(&dcf, &r).unwrap();
        let k = dcf.central_controller().unwrap();
        prop_assert!(is_internally_stabilizing(&gr.plant, &k).unwrap());
        for w in frequency_grid(16) {
            let top = linalg::hstack(&[&resp(&gr.mt_r, w), &resp(&gr.nt_r, w)]);
            let bot = linalg::hstack(&[&(-resp(&dcf.x, w)), &resp(&dcf.y, w)]);
            let left = linalg::vstack(&[&top, &bot]);
            let top = linalg::hstack(&[&resp(&dcf.yt, w), &(-resp(&gr.n_r, w))]);
            let bot = linalg::hstack(&[&resp(&dcf.xt, w), &resp(&gr.m_r, w)]);
            let right = linalg::vstack(&[&top, &bot]);
            prop_assert!(dist(&(left * right), &eye(4)) <= 1e-8);
        }
    }
}
