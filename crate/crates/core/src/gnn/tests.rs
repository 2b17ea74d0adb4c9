use super::*;
use crate::csbm::{generate_stream, CsbmConfig};
use crate::graph::tests::random_graph;
use ndarray::array;

fn dense_adjacency(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.num_vertices();
    let mut a = vec![vec![0.0; n]; n];
    for (u, v) in g.edges() {
        let (u, v) = (g.local(u).unwrap(), g.local(v).unwrap());
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    a
}

/// Dense `D^-1/2 (A + I) D^-1/2`, built without the CSR path.
fn dense_gcn_operator(g: &Graph) -> Vec<Vec<f64>> {
    let mut a = dense_adjacency(g);
    let n = a.len();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| a[i][j] / (d[i] * d[j]).sqrt()).collect())
        .collect()
}

fn dense_mean_operator(g: &Graph) -> Vec<Vec<f64>> {
    let a = dense_adjacency(g);
    a.iter()
        .map(|r| {
            let d: f64 = r.iter().sum();
            r.iter().map(|&x| if d > 0.0 { x / d } else { 0.0 }).collect()
        })
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for t in 0..k {
            for j in 0..m {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

fn to_vecs(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn add_bias(z: &mut [Vec<f64>], b: &Array1<f64>) {
    for row in z {
        for (x, &bb) in row.iter_mut().zip(b.iter()) {
            *x += bb;
        }
    }
}

fn add(a: &mut [Vec<f64>], b: &[Vec<f64>]) {
    for (ra, rb) in a.iter_mut().zip(b) {
        for (x, y) in ra.iter_mut().zip(rb) {
            *x += y;
        }
    }
}

/// Straight dense reimplementation of the forward pass.
fn dense_forward(params: &ModelParams, g: &Graph, x: &Array2<f64>, task: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let x = to_vecs(x);
    let op = match params.arch {
        Arch::Gcn => dense_gcn_operator(g),
        Arch::Sage => dense_mean_operator(g),
    };
    let layer = |l: &GraphLayer, h: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let prop = matmul(&op, h);
        let mut z = match params.arch {
            Arch::Gcn => matmul(&prop, &to_vecs(&l.weight)),
            Arch::Sage => {
                let mut z = matmul(h, &to_vecs(&l.weight));
                add(&mut z, &matmul(&prop, &to_vecs(l.neigh_weight.as_ref().unwrap())));
                z
            }
        };
        add_bias(&mut z, &l.bias);
        z
    };
    let h1: Vec<Vec<f64>> = layer(&params.layer1, &x)
        .into_iter()
        .map(|r| r.into_iter().map(|z| z.max(0.0)).collect())
        .collect();
    let emb: Vec<Vec<f64>> = layer(&params.layer2, &h1)
        .into_iter()
        .map(|r| r.into_iter().map(|z| params.last_activation.apply(z)).collect())
        .collect();
    let head = &params.heads[task - 1];
    let mut logits = matmul(&emb, &to_vecs(&head.weight));
    add_bias(&mut logits, &head.bias);
    (emb, logits)
}

fn random_params(arch: Arch, p: usize, h: usize, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(arch, p, h, Activation::Sigmoid, seed);
    params.add_head(2, seed + 1);
    params.add_head(3, seed + 2);
    // Larger head weights so every tensor carries a non-trivial gradient.
    let mut rng = crate::rng::rng_from(seed + 3);
    for head in &mut params.heads {
        head.weight.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        head.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    params.layer1.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    params
}

fn random_features(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = crate::rng::rng_from(seed);
    Array2::from_shape_simple_fn((n, p), || rng.random_range(-1.0..1.0))
}

fn random_sets(n: usize, seed: u64) -> Vec<WeightedSet> {
    let mut rng = crate::rng::rng_from(seed);
    let train: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let labels = train.iter().map(|_| rng.random_range(0..3)).collect();
    let buffer: Vec<usize> = (0..n).filter(|i| i % 3 == 1).collect();
    let blabels = buffer.iter().map(|_| rng.random_range(0..2)).collect();
    let weights = buffer.iter().map(|_| rng.random_range(0.1..3.0)).collect();
    vec![
        WeightedSet::uniform(2, train, labels),
        WeightedSet::weighted(1, buffer, blabels, weights),
    ]
}

fn loss_at(params: &ModelParams, input: &GraphInput, sets: &[WeightedSet]) -> f64 {
    weighted_loss_and_grads(params, input, sets).unwrap().0
}

/// Largest relative deviation between analytic and central-difference
/// gradients over every parameter entry. Entries where both are below
/// `1e-6` in magnitude are compared on an absolute `1e-6` scale.
fn max_gradient_error(params: &ModelParams, input: &GraphInput, sets: &[WeightedSet]) -> f64 {
    let eps = 1e-5;
    let (_, grads) = weighted_loss_and_grads(params, input, sets).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, _, d)| (n, d.to_vec()))
        .collect();
    let mut worst: f64 = 0.0;
    for (name, grad) in analytic {
        for (i, &a) in grad.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut q = params.clone();
                for (n, data) in q.tensors_mut() {
                    if n == name {
                        data[i] += delta;
                    }
                }
                loss_at(&q, input, sets)
            };
            let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn gcn_operator_small_cases() {
    let single = Graph::from_edges([0], []).unwrap();
    assert_eq!(normalize_adjacency(&single).to_dense(), array![[1.0]]);
    let pair = Graph::from_edges(0..2, [(0, 1)]).unwrap();
    assert_eq!(normalize_adjacency(&pair).to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
}

#[test]
fn gcn_operator_matches_dense_construction() {
    for seed in 0..5 {
        let g = random_graph(15, 0.25, seed);
        let op = normalize_adjacency(&g).to_dense();
        let want = dense_gcn_operator(&g);
        for i in 0..15 {
            for j in 0..15 {
                assert!((op[[i, j]] - want[i][j]).abs() < 1e-15);
                assert_eq!(op[[i, j]], op[[j, i]]);
            }
            // Row sums of Â·1 never exceed 1 by more than rounding.
            let row: f64 = op.row(i).sum();
            assert!(row <= 1.0 + 1e-12 || g.degree_local(i) > 0);
        }
    }
}

#[test]
fn sparse_transpose_matches_dense() {
    let g = random_graph(12, 0.3, 8);
    let op = mean_aggregator(&g);
    let x = random_features(12, 3, 1);
    let got = op.apply_transpose(x.view());
    let want = op.to_dense().t().dot(&x);
    assert!((&got - &want).iter().all(|d| d.abs() < 1e-14));
}

#[test]
fn forward_matches_dense_oracle() {
    for arch in [Arch::Gcn, Arch::Sage] {
        for seed in 0..3 {
            let g = random_graph(10, 0.3, 40 + seed);
            let x = random_features(10, 4, seed);
            let params = random_params(arch, 4, 5, 70 + seed);
            let (emb, logits) = forward(&params, &g, &x, 2).unwrap();
            let (want_emb, want_logits) = dense_forward(&params, &g, &x, 2);
            for i in 0..10 {
                for j in 0..5 {
                    assert!((emb.rows[[i, j]] - want_emb[i][j]).abs() < 1e-12);
                }
                for j in 0..3 {
                    assert!((logits[[i, j]] - want_logits[i][j]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_weights_give_uniform_predictions() {
    let g = random_graph(6, 0.5, 1);
    let x = random_features(6, 3, 2);
    let mut params = random_params(Arch::Gcn, 3, 4, 3);
    for (_, d) in params.tensors_mut() {
        d.fill(0.0);
    }
    let (_, logits) = forward(&params, &g, &x, 1).unwrap();
    assert!(logits.iter().all(|&z| z == 0.0));
}

#[test]
fn isolated_vertex_sees_only_itself() {
    let g = Graph::from_edges(0..4, [(0, 1), (1, 2)]).unwrap();
    let params = random_params(Arch::Gcn, 3, 4, 5);
    let x = random_features(4, 3, 6);
    let mut y = random_features(4, 3, 7);
    y.row_mut(3).assign(&x.row(3));
    let a = embeddings_for(&params, &g, &x).unwrap();
    let b = embeddings_for(&params, &g, &y).unwrap();
    assert_eq!(a.get(3).unwrap(), b.get(3).unwrap());
    assert_ne!(a.get(0).unwrap(), b.get(0).unwrap());
}

#[test]
fn forward_rejects_bad_shapes() {
    let g = random_graph(5, 0.5, 1);
    let params = random_params(Arch::Gcn, 3, 4, 5);
    assert!(forward(&params, &g, &random_features(5, 2, 0), 1).is_err());
    assert!(forward(&params, &g, &random_features(4, 3, 0), 1).is_err());
    assert!(forward(&params, &g, &random_features(5, 3, 0), 3).is_err());
}

#[test]
fn forward_is_pure() {
    let g = random_graph(20, 0.2, 3);
    let x = random_features(20, 6, 4);
    let params = random_params(Arch::Sage, 6, 8, 9);
    let (a, la) = forward(&params, &g, &x, 1).unwrap();
    let (b, lb) = forward(&params, &g, &x, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn gradients_match_finite_differences() {
    for arch in [Arch::Gcn, Arch::Sage] {
        for seed in 0..3 {
            let n = 9;
            let g = random_graph(n, 0.35, 500 + seed);
            let input = GraphInput::new(arch, &g, random_features(n, 4, 600 + seed)).unwrap();
            let params = random_params(arch, 4, 3, 700 + seed);
            let sets = random_sets(n, 800 + seed);
            let err = max_gradient_error(&params, &input, &sets);
            assert!(err < 1e-4, "{arch:?} seed {seed}: max relative error {err}");
        }
    }
}

#[test]
fn zero_replay_weights_leave_only_the_train_term() {
    let g = random_graph(8, 0.4, 2);
    let input = GraphInput::new(Arch::Gcn, &g, random_features(8, 3, 3)).unwrap();
    let params = random_params(Arch::Gcn, 3, 4, 4);
    let train = WeightedSet::uniform(2, vec![0, 2, 4], vec![0, 1, 2]);
    let buffer = WeightedSet::weighted(1, vec![1, 3], vec![1, 0], vec![0.0, 0.0]);
    let both = loss_at(&params, &input, &[train.clone(), buffer]);
    assert_eq!(both, loss_at(&params, &input, &[train]));
}

#[test]
fn doubled_weight_equals_duplicated_vertex() {
    let g = random_graph(8, 0.4, 2);
    let input = GraphInput::new(Arch::Gcn, &g, random_features(8, 3, 3)).unwrap();
    let params = random_params(Arch::Gcn, 3, 4, 4);
    let mut a = WeightedSet::weighted(1, vec![1, 3], vec![1, 0], vec![2.0, 1.0]);
    a.scale = 0.5;
    let mut b = WeightedSet::weighted(1, vec![1, 1, 3], vec![1, 1, 0], vec![1.0, 1.0, 1.0]);
    b.scale = 0.5;
    let (la, ga) = weighted_loss_and_grads(&params, &input, &[a]).unwrap();
    let (lb, gb) = weighted_loss_and_grads(&params, &input, &[b]).unwrap();
    assert!((la - lb).abs() < 1e-14);
    for ((_, _, x), (_, _, y)) in ga.tensors().iter().zip(gb.tensors().iter()) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-14));
    }
}

#[test]
fn bad_weights_are_rejected() {
    let g = random_graph(5, 0.4, 2);
    let input = GraphInput::new(Arch::Gcn, &g, random_features(5, 3, 3)).unwrap();
    let params = random_params(Arch::Gcn, 3, 4, 4);
    let nan = WeightedSet::weighted(1, vec![0], vec![0], vec![f64::NAN]);
    assert!(matches!(
        weighted_loss_and_grads(&params, &input, &[nan]),
        Err(Error::Computation(_))
    ));
    let neg = WeightedSet::weighted(1, vec![0], vec![0], vec![-1.0]);
    assert!(weighted_loss_and_grads(&params, &input, &[neg]).is_err());
    let mut x = random_features(5, 3, 3);
    x[[0, 0]] = f64::NAN;
    assert!(matches!(GraphInput::new(Arch::Gcn, &g, x), Err(Error::Computation(_))));
}

#[test]
fn embeddings_are_permutation_equivariant() {
    let n = 12;
    let g = random_graph(n, 0.3, 17);
    let x = random_features(n, 5, 18);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.reverse();
    perm.swap(0, 5);
    let pg = Graph::from_edges(0..n, g.edges().map(|(u, v)| (perm[u], perm[v])).collect::<Vec<_>>()).unwrap();
    let mut px = Array2::zeros((n, 5));
    for i in 0..n {
        px.row_mut(perm[i]).assign(&x.row(i));
    }
    for arch in [Arch::Gcn, Arch::Sage] {
        let params = random_params(arch, 5, 6, 19);
        let a = embeddings_for(&params, &g, &x).unwrap();
        let b = embeddings_for(&params, &pg, &px).unwrap();
        for i in 0..n {
            let d = &a.get(i).unwrap() - &b.get(perm[i]).unwrap();
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
    }
}

#[test]
fn training_separates_an_assortative_csbm() {
    let cfg = CsbmConfig {
        n_per_stage: 80,
        p_dim: 30,
        mu: 20.0,
        p_intra: 0.2,
        p_inter: 0.0,
        num_stages: 1,
        seed: 5,
        ..Default::default()
    };
    let s = generate_stream(&cfg).unwrap();
    let g = s.induce_graph(1).unwrap();
    let input = GraphInput::new(Arch::Gcn, &g, s.features_for(&g).unwrap()).unwrap();
    let mut params = ModelParams::init(Arch::Gcn, 30, 16, Activation::Sigmoid, 1);
    params.add_head(2, 2);
    let rows: Vec<usize> = (0..80).collect();
    let labels = s.batch(1).unwrap().labels.clone();
    let sets = [WeightedSet::uniform(1, rows.clone(), labels.clone())];
    let losses = train(&mut params, &input, &sets, 200, &AdamConfig::default()).unwrap();
    assert!(losses.last().unwrap() < &(losses[0] * 0.5), "{:?}", (losses[0], losses.last()));
    let emb = embed(&params, &input).unwrap();
    let logits = head_logits(&params, 1, emb.rows.view()).unwrap();
    assert_eq!(accuracy(&logits, &rows, &labels), 1.0);
}

#[test]
fn adam_leaves_params_alone_without_gradient_or_decay() {
    let mut params = random_params(Arch::Gcn, 3, 4, 1);
    let before = params.clone();
    let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
    let mut state = AdamState::default();
    adam_step(&mut state, &mut params, &before.zeros_like(), &cfg);
    assert_eq!(params, before);
}

#[test]
fn decay_only_step_shrinks_norms() {
    let mut params = random_params(Arch::Sage, 3, 4, 1);
    let norm = |p: &ModelParams| p.tensors().iter().map(|(_, _, d)| d.iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
    let before = norm(&params);
    let zeros = params.zeros_like();
    adam_step(&mut AdamState::default(), &mut params, &zeros, &AdamConfig { weight_decay: 0.1, ..Default::default() });
    assert!(norm(&params) < before);
}

#[test]
fn adam_converges_on_a_one_dimensional_quadratic() {
    // f(x) = 2 (x - 3)^2, minimizer x* = 3.
    let cfg = AdamConfig { learning_rate: 0.05, weight_decay: 0.0, ..Default::default() };
    let (mut x, mut m, mut v) = ([0.0], [0.0], [0.0]);
    let mut converged_at = None;
    for t in 1..=2000 {
        let g = [4.0 * (x[0] - 3.0)];
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        adam_update(&mut x, &g, &mut m, &mut v, bc1, bc2, &cfg);
        if (x[0] - 3.0).abs() < 1e-6 && converged_at.is_none() {
            converged_at = Some(t);
        }
    }
    assert!(converged_at.is_some(), "x = {}", x[0]);
    assert!((x[0] - 3.0).abs() < 1e-6, "x = {}", x[0]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for arch in [Arch::Gcn, Arch::Sage] {
        let params = random_params(arch, 4, 3, 42);
        let text = params.to_checkpoint_json();
        let back = ModelParams::from_checkpoint_json(&text).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.to_checkpoint_json(), text);
    }
}

#[test]
fn checkpoint_rejects_mismatched_shapes() {
    let params = random_params(Arch::Gcn, 4, 3, 42);
    let text = params.to_checkpoint_json().replacen("\"shape\":[4,3]", "\"shape\":[3,4]", 1);
    assert!(ModelParams::from_checkpoint_json(&text).is_err());
    assert!(ModelParams::from_checkpoint_json("{\"format\":1}").is_err());
}
