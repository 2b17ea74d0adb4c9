//! Kernel mean matching replay weights.
//!
//! For buffer vertices with embeddings `h` under the current graph and `h'`
//! under the previous one, the weights minimize
//! `‖Σ_v β_v φ(h_v) − Σ_v φ(h'_v)‖²` subject to `B_l ≤ β_v < B_u`, which in
//! kernel form is the box-constrained convex QP `βᵀKβ − 2κᵀβ + c`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{embed, GraphInput, ModelParams};
use crate::graph::VertexId;

/// Gap kept below the open upper bound.
pub const UPPER_MARGIN: f64 = 1e-9;

/// `K(x, y) = Σ_i exp(−α_i ‖x − y‖₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub scales: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { scales: vec![1.0, 0.1, 0.01] }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("kernel scales must be positive and finite"));
        }
        Ok(())
    }

    fn eval_distance(&self, d: f64) -> f64 {
        self.scales.iter().map(|a| (-a * d).exp()).sum()
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("kernel inputs have dimensions {} and {}", x.len(), y.len())));
    }
    Ok(spec.eval_distance(euclidean(x, y)))
}

fn euclidean(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Half-open box `[lower, upper)` for every weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for BetaBounds {
    fn default() -> Self {
        BetaBounds { lower: 0.1, upper: 10.0 }
    }
}

impl BetaBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower >= 0.0 && self.lower < self.upper && self.upper.is_finite()) {
            return Err(Error::invalid(format!(
                "weight bounds must satisfy 0 <= lower < upper, got [{}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// Largest value the solver will return.
    pub fn upper_closed(&self) -> f64 {
        (self.upper - UPPER_MARGIN).max(self.lower)
    }

    pub fn project(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper_closed())
    }
}

/// `βᵀ K β − 2 κᵀ β + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct KmmProblem {
    pub gram: Array2<f64>,
    pub kappa: Array1<f64>,
    pub constant: f64,
}

impl KmmProblem {
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn objective(&self, beta: ArrayView1<f64>) -> f64 {
        beta.dot(&self.gram.dot(&beta)) - 2.0 * self.kappa.dot(&beta) + self.constant
    }

    /// `2 (K β − κ)`.
    pub fn gradient(&self, beta: ArrayView1<f64>) -> Array1<f64> {
        2.0 * (self.gram.dot(&beta) - &self.kappa)
    }

    /// Adds `ρ (Σβ − n)²`, pulling the weights towards mean one.
    pub fn with_sum_penalty(mut self, rho: f64) -> Self {
        let n = self.len() as f64;
        self.gram.mapv_inplace(|k| k + rho);
        self.kappa.mapv_inplace(|k| k + rho * n);
        self.constant += rho * n * n;
        self
    }
}

/// Builds the QP from embeddings of the same vertices under the new
/// (`h_new`) and previous (`h_old`) graphs, one row per vertex.
pub fn build_problem(h_new: ArrayView2<f64>, h_old: ArrayView2<f64>, spec: &KernelSpec) -> Result<KmmProblem> {
    spec.validate()?;
    if h_new.dim() != h_old.dim() {
        return Err(Error::invalid(format!(
            "embedding tables differ in shape: {:?} vs {:?}",
            h_new.dim(),
            h_old.dim()
        )));
    }
    let n = h_new.nrows();
    let cross = |a: ArrayView2<f64>, b: ArrayView2<f64>| {
        Array2::from_shape_fn((n, n), |(u, v)| spec.eval_distance(euclidean(a.row(u), b.row(v))))
    };
    let gram = cross(h_new, h_new);
    let kappa = cross(h_new, h_old).sum_axis(ndarray::Axis(1));
    let constant = cross(h_old, h_old).sum();
    Ok(KmmProblem { gram, kappa, constant })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Stop once the projected-gradient residual (∞-norm) is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Record the objective after every iteration.
    #[serde(skip)]
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-6, max_iter: 100_000, trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaWeights {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Final projected-gradient residual.
    pub residual: f64,
    pub converged: bool,
    /// Amount added to the Gram diagonal to restore positive semidefiniteness.
    pub diagonal_shift: f64,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

fn power_iteration(m: &Array2<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    // A slightly tilted start avoids starting orthogonal to the top eigenvector.
    let mut x = Array1::from_shape_fn(n, |i| 1.0 + 1e-3 * i as f64);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = m.dot(&x);
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = x.dot(&y) / x.dot(&x);
        x = y / norm;
    }
    lambda
}

/// Row-sum bound on the spectral radius of a symmetric matrix.
fn gershgorin(m: &Array2<f64>) -> f64 {
    m.rows().into_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn residual(prob: &KmmProblem, bounds: &BetaBounds, beta: &Array1<f64>) -> f64 {
    let g = prob.gradient(beta.view());
    beta.iter()
        .zip(g.iter())
        .map(|(&b, &gi)| (b - bounds.project(b - gi)).abs())
        .fold(0.0, f64::max)
}

/// Projected gradient descent with step `1/L`, starting from the projection
/// of the all-ones vector.
///
/// `L` starts at `2 λ_max(K)` estimated by power iteration (inflated by 5%
/// and capped by the Gershgorin bound) and doubles whenever a step would
/// raise the objective, so the objective sequence never increases.
pub fn solve_box_qp(prob: &KmmProblem, bounds: &BetaBounds, opts: &SolverOptions) -> Result<BetaWeights> {
    bounds.validate()?;
    let n = prob.len();
    if prob.gram.dim() != (n, n) {
        return Err(Error::invalid("Gram matrix does not match kappa"));
    }
    if !prob.gram.iter().chain(prob.kappa.iter()).all(|x| x.is_finite()) || !prob.constant.is_finite() {
        return Err(Error::computation("KMM problem has non-finite entries"));
    }
    let mut gram = (&prob.gram + &prob.gram.t()) * 0.5;
    let bound = gershgorin(&gram);
    let mut diagonal_shift = 0.0;
    if n > 0 {
        let shifted = Array2::from_diag_elem(n, bound) - &gram;
        let lambda_min = bound - power_iteration(&shifted, 500);
        if lambda_min < -1e-12 * bound.max(1.0) {
            diagonal_shift = -lambda_min;
            gram.diag_mut().mapv_inplace(|d| d + diagonal_shift);
            log::debug!("KMM Gram matrix shifted by {diagonal_shift:e} to restore PSD");
        }
    }
    let prob = KmmProblem { gram, kappa: prob.kappa.clone(), constant: prob.constant };
    let bound = gershgorin(&prob.gram);
    let mut lip = 2.0 * (1.05 * power_iteration(&prob.gram, 100)).min(bound);
    if lip <= 0.0 {
        lip = 1.0;
    }

    let mut beta = Array1::from_elem(n, bounds.project(1.0));
    let mut obj = prob.objective(beta.view());
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(obj);
    }
    let mut res = residual(&prob, bounds, &beta);
    let mut iterations = 0;
    while res > opts.tol && iterations < opts.max_iter {
        let g = prob.gradient(beta.view());
        loop {
            let next = (&beta - &(&g / lip)).mapv(|x| bounds.project(x));
            let next_obj = prob.objective(next.view());
            if next_obj <= obj || lip > 1e300 {
                beta = next;
                obj = next_obj;
                break;
            }
            lip *= 2.0;
        }
        iterations += 1;
        if opts.trace {
            trace.push(obj);
        }
        res = residual(&prob, bounds, &beta);
    }
    Ok(BetaWeights {
        beta: beta.to_vec(),
        objective: obj,
        iterations,
        residual: res,
        converged: res <= opts.tol,
        diagonal_shift,
        trace,
    })
}

/// Kernel, bounds and solver settings for replay reweighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    pub kernel: KernelSpec,
    pub bounds: BetaBounds,
    pub solver: SolverOptions,
    /// Weight of the optional `(Σβ − n)²` penalty; zero disables it.
    pub sum_penalty: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            kernel: KernelSpec::default(),
            bounds: BetaBounds::default(),
            solver: SolverOptions::default(),
            sum_penalty: 0.0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.bounds.validate()?;
        if !(self.sum_penalty >= 0.0 && self.sum_penalty.is_finite()) {
            return Err(Error::invalid("sum_penalty must be non-negative"));
        }
        if self.solver.tol.is_nan() || self.solver.tol <= 0.0 {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        Ok(())
    }
}

/// Replay weights for `buffer`: embeds both snapshots with `params` (the
/// previous task's checkpoint) and solves the resulting QP.
pub fn kmm_weights(
    params: &ModelParams,
    old: &GraphInput,
    new: &GraphInput,
    buffer: &[VertexId],
    cfg: &AlignmentConfig,
) -> Result<BetaWeights> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Ok(BetaWeights {
            beta: Vec::new(),
            objective: 0.0,
            iterations: 0,
            residual: 0.0,
            converged: true,
            diagonal_shift: 0.0,
            trace: Vec::new(),
        });
    }
    let h_old = embed(params, old)?.select(buffer)?;
    let h_new = embed(params, new)?.select(buffer)?;
    let mut prob = build_problem(h_new.view(), h_old.view(), &cfg.kernel)?;
    if cfg.sum_penalty > 0.0 {
        prob = prob.with_sum_penalty(cfg.sum_penalty);
    }
    solve_box_qp(&prob, &cfg.bounds, &cfg.solver)
}

#[cfg(test)]
mod tests;
