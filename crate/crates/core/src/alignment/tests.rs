use super::*;
use crate::csbm::{generate_stream, CsbmConfig};
use crate::gnn::{Activation, Arch};
use ndarray::{array, Array2};
use proptest::prelude::{prop, prop_assert, proptest};
use rand::Rng as _;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = crate::rng::rng_from(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// `‖Σ β_u φ(h_u) − Σ φ(h'_v)‖²` expanded term by term with `kernel_eval`.
fn direct_norm(h: &Array2<f64>, hp: &Array2<f64>, beta: &[f64], spec: &KernelSpec) -> f64 {
    let k = |a: ArrayView1<f64>, b: ArrayView1<f64>| kernel_eval(spec, a, b).unwrap();
    let n = h.nrows();
    let mut total = 0.0;
    for u in 0..n {
        for v in 0..n {
            total += beta[u] * beta[v] * k(h.row(u), h.row(v));
            total -= 2.0 * beta[u] * k(h.row(u), hp.row(v));
            total += k(hp.row(u), hp.row(v));
        }
    }
    total
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Minimum over every lower/upper/free pattern of the equality-reduced
/// stationary point, keeping only feasible ones.
fn active_set_oracle(prob: &KmmProblem, bounds: &BetaBounds) -> f64 {
    let n = prob.len();
    let (lo, hi) = (bounds.lower, bounds.upper_closed());
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            pattern.push(c % 3);
            c /= 3;
        }
        let mut beta = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        for i in 0..n {
            match pattern[i] {
                0 => beta[i] = lo,
                1 => beta[i] = hi,
                _ => {}
            }
        }
        if !free.is_empty() {
            let a = free.iter().map(|&i| free.iter().map(|&j| prob.gram[[i, j]]).collect()).collect();
            let b = free
                .iter()
                .map(|&i| {
                    prob.kappa[i]
                        - (0..n).filter(|j| pattern[*j] != 2).map(|j| prob.gram[[i, j]] * beta[j]).sum::<f64>()
                })
                .collect();
            let Some(x) = gauss_solve(a, b) else { continue };
            for (&i, xi) in free.iter().zip(x) {
                beta[i] = xi;
            }
        }
        if beta.iter().all(|&b| b >= lo - 1e-12 && b <= hi + 1e-12) {
            best = best.min(prob.objective(Array1::from(beta).view()));
        }
    }
    best
}

fn random_psd_problem(n: usize, seed: u64) -> KmmProblem {
    let a = random_matrix(n, n, seed);
    let gram = a.t().dot(&a);
    let mut rng = crate::rng::rng_from(seed ^ 0xabcdef);
    let kappa = Array1::from_shape_simple_fn(n, || rng.random_range(-2.0..6.0));
    KmmProblem { gram, kappa, constant: 0.0 }
}

#[test]
fn kernel_examples() {
    let spec = KernelSpec::default();
    let x = array![0.3, -1.2, 4.0];
    assert_eq!(kernel_eval(&spec, x.view(), x.view()).unwrap(), 3.0);
    let y = array![0.3, -1.2, 5.0];
    let want = (-1.0f64).exp() + (-0.1f64).exp() + (-0.01f64).exp();
    assert!((kernel_eval(&spec, x.view(), y.view()).unwrap() - want).abs() < 1e-15);
    let z = array![1.0, 2.0, -0.5];
    assert_eq!(
        kernel_eval(&spec, x.view(), z.view()).unwrap(),
        kernel_eval(&spec, z.view(), x.view()).unwrap()
    );
    assert!(kernel_eval(&spec, x.view(), array![1.0].view()).is_err());
    assert!(KernelSpec { scales: vec![1.0, -0.1] }.validate().is_err());
}

#[test]
fn single_vertex_problem() {
    let h = array![[0.5, 0.25]];
    let p = build_problem(h.view(), h.view(), &KernelSpec::default()).unwrap();
    assert_eq!(p.gram, array![[3.0]]);
    assert_eq!(p.kappa, array![3.0]);
    assert_eq!(p.constant, 3.0);
    assert_eq!(p.objective(array![1.0].view()), 0.0);
}

#[test]
fn objective_matches_direct_kernel_expansion() {
    let spec = KernelSpec::default();
    for seed in 0..10 {
        let h = random_matrix(3, 4, seed);
        let hp = random_matrix(3, 4, seed + 100);
        let p = build_problem(h.view(), hp.view(), &spec).unwrap();
        let beta = [0.4, 1.7, 3.2];
        let got = p.objective(Array1::from(beta.to_vec()).view());
        assert!((got - direct_norm(&h, &hp, &beta, &spec)).abs() < 1e-10);
    }
}

#[test]
fn problem_is_rotation_invariant() {
    let (c, s) = (0.6f64, 0.8f64);
    let rot = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    let h = random_matrix(4, 3, 1);
    let hp = random_matrix(4, 3, 2);
    let spec = KernelSpec::default();
    let a = build_problem(h.view(), hp.view(), &spec).unwrap();
    let b = build_problem(h.dot(&rot).view(), hp.dot(&rot).view(), &spec).unwrap();
    assert!((&a.gram - &b.gram).iter().all(|d| d.abs() < 1e-12));
    assert!((&a.kappa - &b.kappa).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn mismatched_tables_are_rejected() {
    let spec = KernelSpec::default();
    assert!(build_problem(random_matrix(3, 2, 0).view(), random_matrix(2, 2, 0).view(), &spec).is_err());
}

#[test]
fn one_dimensional_interior_and_boundary() {
    let bounds = BetaBounds { lower: 0.0, upper: 1.0 };
    let opts = SolverOptions::default();
    let inner = KmmProblem { gram: array![[1.0]], kappa: array![0.5], constant: 0.0 };
    let sol = solve_box_qp(&inner, &bounds, &opts).unwrap();
    assert!((sol.beta[0] - 0.5).abs() < 1e-9);
    assert!(sol.converged);
    let clipped = KmmProblem { gram: array![[1.0]], kappa: array![2.0], constant: 0.0 };
    let sol = solve_box_qp(&clipped, &bounds, &opts).unwrap();
    assert_eq!(sol.beta[0], bounds.upper_closed());
    assert!(sol.beta[0] < 1.0);
}

#[test]
fn matches_active_set_oracle_on_random_problems() {
    let opts = SolverOptions { trace: true, ..Default::default() };
    for (seed, bounds) in (0..50).zip([BetaBounds::default(), BetaBounds { lower: 0.0, upper: 1.0 }].iter().cycle()) {
        let prob = random_psd_problem(5, seed);
        let sol = solve_box_qp(&prob, bounds, &opts).unwrap();
        let oracle = active_set_oracle(&prob, bounds);
        assert!(
            (sol.objective - oracle).abs() < 1e-4,
            "seed {seed}: {} vs oracle {oracle}",
            sol.objective
        );
        assert!(sol.beta.iter().all(|&b| b >= bounds.lower && b < bounds.upper));
        assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.converged, "seed {seed}: residual {}", sol.residual);
    }
}

#[test]
fn indefinite_input_is_shifted() {
    let prob = KmmProblem { gram: array![[1.0, 2.0], [2.0, 1.0]], kappa: array![1.0, 1.0], constant: 0.0 };
    let sol = solve_box_qp(&prob, &BetaBounds::default(), &SolverOptions::default()).unwrap();
    assert!((sol.diagonal_shift - 1.0).abs() < 1e-6);
}

#[test]
fn non_finite_problem_is_a_computation_error() {
    let prob = KmmProblem { gram: array![[f64::NAN]], kappa: array![1.0], constant: 0.0 };
    assert!(matches!(
        solve_box_qp(&prob, &BetaBounds::default(), &SolverOptions::default()),
        Err(Error::Computation(_))
    ));
    assert!(solve_box_qp(
        &KmmProblem { gram: array![[1.0]], kappa: array![1.0], constant: 0.0 },
        &BetaBounds { lower: 2.0, upper: 1.0 },
        &SolverOptions::default()
    )
    .is_err());
}

#[test]
fn sum_penalty_adds_the_squared_deviation() {
    let prob = random_psd_problem(4, 3);
    let beta = array![0.5, 1.0, 2.0, 0.1];
    let dev: f64 = beta.sum() - 4.0;
    let pen = prob.clone().with_sum_penalty(0.7);
    let want = prob.objective(beta.view()) + 0.7 * dev * dev;
    assert!((pen.objective(beta.view()) - want).abs() < 1e-12);
}

fn two_task_setup(seed: u64) -> (ModelParams, GraphInput, GraphInput) {
    let cfg = CsbmConfig { n_per_stage: 20, p_dim: 8, delta: 4, p_stage: 0.3, seed, ..Default::default() };
    let s = generate_stream(&cfg).unwrap();
    let input = |upto| {
        let g = s.induce_graph(upto).unwrap();
        let x = s.features_for(&g).unwrap();
        GraphInput::new(Arch::Gcn, &g, x).unwrap()
    };
    let params = ModelParams::init(Arch::Gcn, 8, 4, Activation::Sigmoid, seed);
    (params, input(1), input(2))
}

#[test]
fn unchanged_graph_gives_unit_weights() {
    let (params, old, _) = two_task_setup(1);
    let buffer = [0, 3, 7, 11];
    let sol = kmm_weights(&params, &old, &old, &buffer, &AlignmentConfig::default()).unwrap();
    assert_eq!(sol.beta, vec![1.0; 4]);
    assert!(sol.objective.abs() <= 1e-8);
}

#[test]
fn empty_buffer_is_a_no_op() {
    let (params, old, new) = two_task_setup(1);
    let sol = kmm_weights(&params, &old, &new, &[], &AlignmentConfig::default()).unwrap();
    assert!(sol.beta.is_empty());
}

#[test]
fn buffer_vertex_missing_from_snapshot_is_rejected() {
    let (params, old, new) = two_task_setup(1);
    // Vertex 25 belongs to the second stage, absent from the old snapshot.
    assert!(kmm_weights(&params, &old, &new, &[0, 25], &AlignmentConfig::default()).is_err());
}

#[test]
fn two_vertex_weights_match_grid_search() {
    let cfg = AlignmentConfig::default();
    let mut checked = 0;
    for seed in 0..6 {
        let (params, old, new) = two_task_setup(seed);
        let buffer = [2, 9];
        let sol = kmm_weights(&params, &old, &new, &buffer, &cfg).unwrap();
        let h_old = embed(&params, &old).unwrap().select(&buffer).unwrap();
        let h_new = embed(&params, &new).unwrap().select(&buffer).unwrap();
        let prob = build_problem(h_new.view(), h_old.view(), &cfg.kernel).unwrap();
        // Skip instances whose optimum is not unique to grid resolution.
        let det = prob.gram[[0, 0]] * prob.gram[[1, 1]] - prob.gram[[0, 1]].powi(2);
        if det < 1e-3 {
            continue;
        }
        let (lo, hi) = (cfg.bounds.lower, cfg.bounds.upper_closed());
        let steps = ((hi - lo) / 1e-3).floor() as usize;
        let (k, kap) = (&prob.gram, &prob.kappa);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=steps {
            let a = lo + i as f64 * 1e-3;
            for j in 0..=steps {
                let b = lo + j as f64 * 1e-3;
                let f = k[[0, 0]] * a * a + 2.0 * k[[0, 1]] * a * b + k[[1, 1]] * b * b
                    - 2.0 * (kap[0] * a + kap[1] * b);
                if f < best.0 {
                    best = (f, a, b);
                }
            }
        }
        assert!((sol.beta[0] - best.1).abs() < 5e-3, "seed {seed}: {:?} vs {:?}", sol.beta, best);
        assert!((sol.beta[1] - best.2).abs() < 5e-3, "seed {seed}: {:?} vs {:?}", sol.beta, best);
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} well-conditioned instances");
}

proptest! {
    #[test]
    fn expansion_matches_direct_norm(
        n in 1usize..=6,
        d in 1usize..4,
        seed in 0u64..10_000,
        beta in prop::collection::vec(0.0f64..5.0, 6),
    ) {
        let spec = KernelSpec::default();
        let h = random_matrix(n, d, seed);
        let hp = random_matrix(n, d, seed + 1);
        let p = build_problem(h.view(), hp.view(), &spec).unwrap();
        let b = &beta[..n];
        let got = p.objective(Array1::from(b.to_vec()).view());
        prop_assert!((got - direct_norm(&h, &hp, b, &spec)).abs() < 1e-9);
    }

    #[test]
    fn solver_respects_box_and_never_increases(seed in 0u64..10_000, n in 1usize..7) {
        let prob = random_psd_problem(n, seed);
        let bounds = BetaBounds::default();
        let sol = solve_box_qp(&prob, &bounds, &SolverOptions { trace: true, max_iter: 5_000, ..Default::default() }).unwrap();
        prop_assert!(sol.beta.iter().all(|&b| b >= bounds.lower && b < bounds.upper));
        prop_assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
