use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robust_lqg::linalg::{eig_sym, Mat};
use robust_lqg::sdp::{Constraint, InteriorPoint, SdpBackend, SdpProblem, SdpStatus, Term};

fn solver() -> InteriorPoint {
    InteriorPoint::default()
}

fn random_sym(seed: u64, n: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    (&a + a.transpose()) * 0.5
}

/// `min t  s.t.  tI - M = X`, `X` PSD.
fn lambda_max_problem(m: &Mat) -> SdpProblem {
    let n = m.nrows();
    let mut p = SdpProblem::default();
    let blk = p.add_block(n);
    let t = p.add_free(1);
    p.set_free_cost(t, 1.0);
    for i in 0..n {
        for j in 0..=i {
            let free = if i == j { vec![(t, -1.0)] } else { Vec::new() };
            p.push(Constraint {
                terms: vec![Term { block: blk, row: i, col: j, value: 1.0 }],
                free,
                rhs: -m[(i, j)],
            });
        }
    }
    p
}

#[test]
fn scalar_cone() {
    let mut p = SdpProblem::default();
    let b = p.add_block(1);
    p.cost.push(Term { block: b, row: 0, col: 0, value: 1.0 });
    let s = solver().solve(&p).unwrap();
    assert_eq!(s.status, SdpStatus::Optimal);
    assert!(s.blocks[0][(0, 0)].abs() < 1e-7);
}

#[test]
fn largest_eigenvalue() {
    let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, -1.0]);
    let s = solver().solve(&lambda_max_problem(&m)).unwrap();
    let oracle = (1.0 + 13f64.sqrt()) / 2.0;
    assert!((s.free[0] - oracle).abs() < 1e-7);
    for seed in 0..10 {
        let m = random_sym(seed, 6);
        let s = solver().solve(&lambda_max_problem(&m)).unwrap();
        let (vals, _) = eig_sym(&m);
        assert!((s.free[0] - vals[5]).abs() < 1e-7 * (1.0 + vals[5].abs()));
    }
}

#[test]
fn smallest_eigenvalue_by_trace() {
    // min <C, X>  s.t.  tr X = 1
    let c = random_sym(42, 5);
    let mut p = SdpProblem::default();
    let b = p.add_block(5);
    for i in 0..5 {
        for j in 0..=i {
            p.cost.push(Term { block: b, row: i, col: j, value: if i == j { c[(i, i)] } else { 2.0 * c[(i, j)] } });
        }
    }
    p.push(Constraint {
        terms: (0..5).map(|i| Term { block: b, row: i, col: i, value: 1.0 }).collect(),
        free: Vec::new(),
        rhs: 1.0,
    });
    let s = solver().solve(&p).unwrap();
    let (vals, _) = eig_sym(&c);
    assert!((s.primal_objective - vals[0]).abs() < 1e-7);
    assert!((s.dual_objective - vals[0]).abs() < 1e-7);
}

#[test]
fn infeasible_and_unbounded() {
    let mut p = SdpProblem::default();
    let b = p.add_block(2);
    p.fix_entry(b, 0, 0, -1.0);
    assert_eq!(solver().solve(&p).unwrap().status, SdpStatus::Infeasible);

    let mut p = SdpProblem::default();
    let b = p.add_block(1);
    p.cost.push(Term { block: b, row: 0, col: 0, value: -1.0 });
    assert_eq!(solver().solve(&p).unwrap().status, SdpStatus::Unbounded);
}

#[test]
fn quadratic_free_objective() {
    // min (x - 3)^2 / 2 over x = X >= 0, then the same pulled to -3
    for (target, expect) in [(3.0, 3.0), (-3.0, 0.0)] {
        let mut p = SdpProblem::default();
        let b = p.add_block(1);
        let x = p.add_free(1);
        p.set_free_cost(x, -target);
        p.free_quadratic = Some(vec![vec![1.0]]);
        p.push(Constraint {
            terms: vec![Term { block: b, row: 0, col: 0, value: 1.0 }],
            free: vec![(x, -1.0)],
            rhs: 0.0,
        });
        let s = solver().solve(&p).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.free[0] - expect).abs() < 1e-6, "{} vs {expect}", s.free[0]);
    }
}

#[test]
fn problem_round_trips_through_json() {
    let p = lambda_max_problem(&random_sym(3, 3));
    let text = serde_json::to_string(&p).unwrap();
    let back: SdpProblem = serde_json::from_str(&text).unwrap();
    assert_eq!(p, back);
}
