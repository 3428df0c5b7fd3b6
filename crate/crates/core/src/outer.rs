//! Outer loop: Riemannian conjugate gradient over the product of
//! spectrahedron factors.
//!
//! The outer objective is g(U) = max h(Z, S), the inner solve's value at
//! its maximizer. By the envelope argument, its Euclidean gradient in
//! the k-th factor is
//!
//!   ∇_{U_k} g = −λ_k (Ẑ + Ŝ)_k (Ẑ + Ŝ)_k ᵀ U_k,
//!
//! computed as two streaming matrix products through M_k = (Ẑ+Ŝ)_kᵀ U_k,
//! never forming the n_k×n_k outer product. The Riemannian gradient is
//! its tangent projection; directions combine by Hestenes–Stiefel with a
//! nonnegativity clamp and a descent reset; Armijo backtracking accepts
//! the first step with sufficient decrease, each trial refining the dual
//! pair by a warm-started inner solve.
//!
//! Each iterate's recorded cost is the inner objective of the dual pair
//! produced by its own accepting trial, and later iterations warm-start
//! from exactly that pair. Refining the dual again at the start of an
//! iteration would raise the recorded value at inner-tolerance scale and
//! break the trace's monotonicity, so the solver never does that: one
//! inner solve per point, performed when the point is first tried.
//!
//! The reconstruction is Ŵ = Σ_k λ_k (Ẑ + Ŝ) ×_k U_k U_kᵀ.

use crate::error::{Error, Result};
use crate::inner::{
    accumulate_dense, alternating_inner_solve, contract_dense, inner_objective, scatter_dense,
    DualPair, InnerConfig, InnerStats, ProblemData,
};
use crate::manifold::{ProductPoint, ProductTangent};
use crate::tensor::{DenseTensor, Matrix, ObservationMask, Shape, SparseTensor};

// ─── timing ─────────────────────────────────────────────────────────────

#[cfg(not(target_arch = "wasm32"))]
#[derive(Clone, Copy, Debug)]
struct Stopwatch {
    start: std::time::Instant,
}

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch { start: std::time::Instant::now() }
    }

    fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
#[derive(Clone, Copy, Debug)]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start() -> Self {
        Stopwatch
    }

    fn elapsed_s(&self) -> f64 {
        0.0
    }
}

// ─── configuration ──────────────────────────────────────────────────────

/// Backtracking line-search parameters.
#[derive(Clone, Debug)]
pub struct ArmijoConfig {
    /// Sufficient-decrease constant c₁ in g(trial) ≤ g − c₁·t·‖grad‖².
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub shrink: f64,
    /// Backtracks after the first trial.
    pub max_backtracks: usize,
    /// Cap on the step, and the step of the very first iteration.
    pub initial_step: f64,
    /// Next iteration's first trial is min(initial_step, growth·accepted).
    pub step_growth: f64,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        ArmijoConfig {
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 5,
            initial_step: 1.0,
            step_growth: 2.0,
        }
    }
}

/// Conjugacy rule for combining successive directions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BetaRule {
    /// Hestenes–Stiefel with β clamped at zero.
    #[default]
    HestenesStiefel,
    FletcherReeves,
}

/// Everything the outer solver needs beyond the data.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Per-mode factor ranks; `None` picks (10, 10, 5) clamped to the
    /// dimensions for order-3 data and min(10, nₖ) otherwise.
    pub ranks: Option<Vec<usize>>,
    /// Per-mode weights, all positive; `None` picks 1/K.
    pub lambda: Option<Vec<f64>>,
    /// Cost parameter C.
    pub c: f64,
    /// Gradient-norm stopping tolerance τ.
    pub tau: f64,
    pub max_outer_iters: usize,
    pub seed: u64,
    pub armijo: ArmijoConfig,
    pub beta_rule: BetaRule,
    pub inner: InnerConfig,
    /// Also stop when the cost moves less than this, relatively, across
    /// the stagnation window.
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
    /// Refuse to hold dense buffers beyond this many elements.
    pub dense_cap: usize,
}

/// Default ceiling on dense buffer sizes (elements, not bytes).
pub const DEFAULT_DENSE_CAP: usize = 1 << 26;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            ranks: None,
            lambda: None,
            c: 10.0,
            tau: 1e-5,
            max_outer_iters: 200,
            seed: 0,
            armijo: ArmijoConfig::default(),
            beta_rule: BetaRule::default(),
            // S off the observed support admits nonnegative null
            // directions of the projectors that flatten the outer cost,
            // so the solver keeps the multiplier on Ω.
            inner: InnerConfig { restrict_s_support: true, ..InnerConfig::default() },
            stagnation_tol: 1e-9,
            stagnation_window: 5,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SolverConfig {
    fn resolved_ranks(&self, shape: &Shape) -> Result<Vec<usize>> {
        let ranks = match &self.ranks {
            Some(r) => r.clone(),
            None if shape.order() == 3 => vec![
                10.min(shape.dim(0)),
                10.min(shape.dim(1)),
                5.min(shape.dim(2)),
            ],
            None => (0..shape.order()).map(|k| 10.min(shape.dim(k))).collect(),
        };
        if ranks.len() != shape.order() {
            return Err(Error::mismatch(format!(
                "{} ranks for an order-{} tensor",
                ranks.len(),
                shape.order()
            )));
        }
        for (k, &r) in ranks.iter().enumerate() {
            if r == 0 || r > shape.dim(k) {
                return Err(Error::invalid(format!(
                    "rank {} of mode {} must lie in 1..={}",
                    r,
                    k + 1,
                    shape.dim(k)
                )));
            }
        }
        Ok(ranks)
    }

    fn resolved_lambda(&self, order: usize) -> Result<Vec<f64>> {
        let lambda = match &self.lambda {
            Some(l) => l.clone(),
            None => vec![1.0 / order as f64; order],
        };
        if lambda.len() != order {
            return Err(Error::mismatch(format!(
                "{} weights for an order-{} tensor",
                lambda.len(),
                order
            )));
        }
        if lambda.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::invalid("mode weights must be positive and finite"));
        }
        Ok(lambda)
    }

    fn validate(&self) -> Result<()> {
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(Error::invalid("cost parameter C must be positive and finite"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        let a = &self.armijo;
        if !(a.c1 > 0.0 && a.c1 < 1.0) || !(a.shrink > 0.0 && a.shrink < 1.0) {
            return Err(Error::invalid("Armijo constants must lie in (0, 1)"));
        }
        if !(a.initial_step > 0.0) || !(a.step_growth >= 1.0) {
            return Err(Error::invalid("Armijo step parameters out of range"));
        }
        if self.stagnation_window == 0 || !(self.stagnation_tol >= 0.0) {
            return Err(Error::invalid("stagnation parameters out of range"));
        }
        Ok(())
    }
}

// ─── cost, gradient, reconstruction primitives ──────────────────────────

/// The outer cost g at a point, i.e. the inner objective of the dual
/// pair solved there.
pub fn cost_g(p: &ProblemData, dual: &DualPair) -> Result<f64> {
    inner_objective(p, dual)
}

/// Dense Ẑ + Ŝ, the tensor every gradient and reconstruction pass
/// streams over.
fn dense_pair_sum(dual: &DualPair) -> DenseTensor {
    let mut t = dual.z().to_dense();
    for (tv, sv) in t.values_mut().iter_mut().zip(dual.s().values()) {
        *tv += sv;
    }
    t
}

/// Euclidean gradient blocks ∇_{U_k} g = −λ_k (Ẑ+Ŝ)_k (Ẑ+Ŝ)_kᵀ U_k, one
/// matrix per mode, via two streaming products through
/// M_k = (Ẑ+Ŝ)_kᵀ U_k.
pub fn euclidean_gradient(p: &ProblemData, dual: &DualPair) -> Result<Vec<Matrix>> {
    if !dual.z().support_matches(p.mask()) {
        return Err(Error::mismatch("dual Z support must equal the observation mask"));
    }
    if dual.s().shape() != p.shape() {
        return Err(Error::mismatch("dual S shape must match the observations"));
    }
    let shape = p.shape();
    let t_hat = dense_pair_sum(dual);
    let mut out = Vec::with_capacity(shape.order());
    for k in 0..shape.order() {
        let u = p.point().factor(k).factor();
        let r = u.cols();
        let n = u.rows();
        let lam = p.lambda()[k];
        if lam == 0.0 {
            out.push(Matrix::zeros(n, r));
            continue;
        }
        let mut m = vec![0.0f64; shape.unfold_cols(k) * r];
        accumulate_dense(shape, k, t_hat.values(), u, &mut m);
        let mut g = vec![0.0f64; n * r];
        contract_dense(shape, k, t_hat.values(), &m, r, &mut g);
        for v in g.iter_mut() {
            *v *= -lam;
        }
        out.push(Matrix::from_values(n, r, g)?);
    }
    Ok(out)
}

/// Tangent projection of the Euclidean gradient at the problem's point.
pub fn riemannian_gradient(p: &ProblemData, dual: &DualPair) -> Result<ProductTangent> {
    let parts = euclidean_gradient(p, dual)?;
    p.point().project(&parts)
}

fn reconstruct_from_parts(
    point: &ProductPoint,
    dual: &DualPair,
    lambda: &[f64],
    dense_cap: usize,
) -> Result<DenseTensor> {
    let shape = dual.s().shape().clone();
    if shape.len() > dense_cap {
        return Err(Error::DenseCapExceeded { elements: shape.len(), cap: dense_cap });
    }
    let t_hat = dense_pair_sum(dual);
    let mut out = DenseTensor::zeros(shape.clone());
    for k in 0..shape.order() {
        let lam = lambda[k];
        if lam == 0.0 {
            continue;
        }
        let u = point.factor(k).factor();
        let r = u.cols();
        let mut m = vec![0.0f64; shape.unfold_cols(k) * r];
        accumulate_dense(&shape, k, t_hat.values(), u, &mut m);
        scatter_dense(&shape, k, &m, u, lam, out.values_mut());
    }
    Ok(out)
}

// ─── completion model ───────────────────────────────────────────────────

/// A fitted completion: the factor point, the dual pair solved there,
/// and the weights that combine them into the reconstruction.
#[derive(Clone, Debug)]
pub struct CompletionModel {
    point: ProductPoint,
    dual: DualPair,
    lambda: Vec<f64>,
    c: f64,
    dense_cap: usize,
}

impl CompletionModel {
    /// Validates cross-component consistency and assembles a model.
    pub fn new(
        point: ProductPoint,
        dual: DualPair,
        lambda: Vec<f64>,
        c: f64,
    ) -> Result<Self> {
        let shape = dual.s().shape();
        if point.order() != shape.order() {
            return Err(Error::mismatch("factor count differs from the tensor order"));
        }
        for k in 0..shape.order() {
            if point.factor(k).rows() != shape.dim(k) {
                return Err(Error::mismatch(format!(
                    "factor {} has {} rows but mode {} has dimension {}",
                    k + 1,
                    point.factor(k).rows(),
                    k + 1,
                    shape.dim(k)
                )));
            }
        }
        if lambda.len() != shape.order() {
            return Err(Error::mismatch("one weight per mode is required"));
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("mode weights must be finite and nonnegative"));
        }
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::invalid("cost parameter C must be positive and finite"));
        }
        Ok(CompletionModel { point, dual, lambda, c, dense_cap: DEFAULT_DENSE_CAP })
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        self.dual.s().shape()
    }

    #[inline]
    pub fn point(&self) -> &ProductPoint {
        &self.point
    }

    #[inline]
    pub fn dual(&self) -> &DualPair {
        &self.dual
    }

    #[inline]
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    #[inline]
    pub fn cost_parameter(&self) -> f64 {
        self.c
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.point.factors().iter().map(|f| f.rank()).collect()
    }

    /// Overrides the dense-buffer guard used by reconstruction.
    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    /// The full reconstruction Ŵ = Σ_k λ_k (Ẑ+Ŝ) ×_k U_k U_kᵀ.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        reconstruct_from_parts(&self.point, &self.dual, &self.lambda, self.dense_cap)
    }

    /// One summand Ŵ⁽ᵏ⁾ = λ_k (Ẑ+Ŝ) ×_k U_k U_kᵀ of the reconstruction.
    pub fn reconstruct_component(&self, mode: usize) -> Result<DenseTensor> {
        let shape = self.shape().clone();
        shape.check_mode(mode)?;
        if shape.len() > self.dense_cap {
            return Err(Error::DenseCapExceeded { elements: shape.len(), cap: self.dense_cap });
        }
        let t_hat = dense_pair_sum(&self.dual);
        let mut out = DenseTensor::zeros(shape.clone());
        let lam = self.lambda[mode];
        if lam != 0.0 {
            let u = self.point.factor(mode).factor();
            let r = u.cols();
            let mut m = vec![0.0f64; shape.unfold_cols(mode) * r];
            accumulate_dense(&shape, mode, t_hat.values(), u, &mut m);
            scatter_dense(&shape, mode, &m, u, lam, out.values_mut());
        }
        Ok(out)
    }

    /// Entries of Ŵ at the given index tuples, without densifying the
    /// whole reconstruction.
    pub fn predict_entries(&self, indices: &[Vec<usize>]) -> Result<Vec<f64>> {
        let shape = self.shape();
        let z = self.dual.z();
        let s = self.dual.s();
        let z_at = |off: usize| -> f64 {
            match z.offsets().binary_search(&off) {
                Ok(pos) => z.values()[pos],
                Err(_) => 0.0,
            }
        };
        let mut out = Vec::with_capacity(indices.len());
        let mut probe = vec![0usize; shape.order()];
        for index in indices {
            shape.offset_of(index)?;
            let mut acc = 0.0;
            for k in 0..shape.order() {
                let lam = self.lambda[k];
                if lam == 0.0 {
                    continue;
                }
                let u = self.point.factor(k).factor();
                probe.copy_from_slice(index);
                let urow = u.row(index[k]);
                for j in 0..shape.dim(k) {
                    // (U_k U_kᵀ)[i_k, j], one inner product of factor rows.
                    let w: f64 =
                        urow.iter().zip(u.row(j)).map(|(&a, &b)| a * b).sum();
                    if w == 0.0 {
                        continue;
                    }
                    probe[k] = j;
                    let off = shape.offset_of(&probe)?;
                    acc += lam * w * (s.values()[off] + z_at(off));
                }
            }
            out.push(acc);
        }
        Ok(out)
    }
}

// ─── trace & status ─────────────────────────────────────────────────────

/// One accepted outer iteration (row 0 records the starting point).
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Accepted step length; 0 for the initial row.
    pub step: f64,
    pub cg_iterations: usize,
    pub nnls_iterations: usize,
    pub elapsed_s: f64,
    /// RMSE against the reference tensor, when one was provided.
    pub rmse: Option<f64>,
}

/// Why the outer loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    /// ‖grad‖ ≤ τ.
    GradientBelowTau,
    MaxIterations,
    /// Cost stopped moving relative to the stagnation tolerance.
    Stagnated,
    /// No Armijo step succeeded, even along −grad: stationary within
    /// inner-solve noise.
    LineSearchFailed,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::GradientBelowTau => "gradient-below-tau",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::Stagnated => "stagnated",
            SolveStatus::LineSearchFailed => "line-search-failed",
        }
    }
}

/// A finished solve: the model plus the full per-iteration record.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub model: CompletionModel,
    pub trace: Vec<TraceRow>,
    pub status: SolveStatus,
}

// ─── the solver ─────────────────────────────────────────────────────────

struct Accepted {
    problem: ProblemData,
    dual: DualPair,
    stats: InnerStats,
    cost: f64,
    step: f64,
}

/// Stepwise Riemannian conjugate-gradient driver. Construct, optionally
/// attach a reference tensor for per-iteration RMSE, then `run` (or
/// `step` repeatedly, e.g. from an interactive frontend).
pub struct Solver {
    cfg: SolverConfig,
    problem: ProblemData,
    dual: DualPair,
    cost: f64,
    rgrad: ProductTangent,
    grad_norm: f64,
    dir: ProductTangent,
    dir_is_steepest: bool,
    prev_step: f64,
    iteration: usize,
    trace: Vec<TraceRow>,
    status: Option<SolveStatus>,
    truth: Option<DenseTensor>,
    clock: Stopwatch,
}

impl Solver {
    /// Validates the configuration, draws the seeded starting point, and
    /// performs the starting point's inner solve (trace row 0).
    pub fn new(y: SparseTensor, omega: ObservationMask, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let shape = y.shape().clone();
        if shape.len() > cfg.dense_cap {
            return Err(Error::DenseCapExceeded { elements: shape.len(), cap: cfg.dense_cap });
        }
        let ranks = cfg.resolved_ranks(&shape)?;
        let lambda = cfg.resolved_lambda(shape.order())?;
        let point = ProductPoint::random(shape.dims(), &ranks, cfg.seed)?;
        let problem = ProblemData::new(y, omega, lambda, cfg.c, point)?;

        let clock = Stopwatch::start();
        let (dual, stats) =
            alternating_inner_solve(&problem, &DualPair::zeros(&problem), &cfg.inner)?;
        let cost = stats.objective;
        let rgrad = riemannian_gradient(&problem, &dual)?;
        let grad_norm = rgrad.norm();
        let dir = rgrad.scaled(-1.0);
        let trace = vec![TraceRow {
            iteration: 0,
            cost,
            grad_norm,
            step: 0.0,
            cg_iterations: stats.cg_iterations,
            nnls_iterations: stats.nnls_iterations,
            elapsed_s: clock.elapsed_s(),
            rmse: None,
        }];
        Ok(Solver {
            cfg,
            problem,
            dual,
            cost,
            rgrad,
            grad_norm,
            dir,
            dir_is_steepest: true,
            prev_step: 0.0,
            iteration: 0,
            trace,
            status: None,
            truth: None,
            clock,
        })
    }

    /// Attaches a reference tensor so every trace row carries RMSE
    /// against it. Must be called before the first step, since earlier
    /// rows cannot be recomputed once their iterates are gone.
    pub fn set_truth(&mut self, truth: DenseTensor) -> Result<()> {
        if truth.shape() != self.problem.shape() {
            return Err(Error::mismatch("reference tensor shape differs from the data"));
        }
        if self.trace.len() > 1 {
            return Err(Error::invalid(
                "attach the reference tensor before stepping the solver",
            ));
        }
        let w = self.snapshot_model().reconstruct()?;
        self.trace[0].rmse = Some(crate::eval::rmse(&w, &truth)?);
        self.truth = Some(truth);
        Ok(())
    }

    #[inline]
    pub fn cost(&self) -> f64 {
        self.cost
    }

    #[inline]
    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    #[inline]
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    #[inline]
    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    #[inline]
    pub fn status(&self) -> Option<SolveStatus> {
        self.status
    }

    #[inline]
    pub fn problem(&self) -> &ProblemData {
        &self.problem
    }

    /// The current iterate as a standalone model.
    pub fn snapshot_model(&self) -> CompletionModel {
        CompletionModel {
            point: self.problem.point().clone(),
            dual: self.dual.clone(),
            lambda: self.problem.lambda().to_vec(),
            c: self.problem.cost_parameter(),
            dense_cap: self.cfg.dense_cap,
        }
    }

    fn stagnated(&self) -> bool {
        let w = self.cfg.stagnation_window;
        if self.trace.len() <= w {
            return false;
        }
        let recent = &self.trace[self.trace.len() - (w + 1)..];
        let hi = recent.iter().map(|r| r.cost).fold(f64::NEG_INFINITY, f64::max);
        let lo = recent.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
        (hi - lo) <= self.cfg.stagnation_tol * hi.abs().max(1.0)
    }

    fn line_search(&self, dir: &ProductTangent, t0: f64) -> Result<Option<Accepted>> {
        let c1 = self.cfg.armijo.c1;
        let mut t = t0;
        for _ in 0..=self.cfg.armijo.max_backtracks {
            let trial_point = self.problem.point().retract(dir, t)?;
            let trial_problem = self.problem.with_point(trial_point)?;
            let (dual, stats) =
                alternating_inner_solve(&trial_problem, &self.dual, &self.cfg.inner)?;
            let cost = stats.objective;
            if cost <= self.cost - c1 * t * self.grad_norm * self.grad_norm {
                return Ok(Some(Accepted { problem: trial_problem, dual, stats, cost, step: t }));
            }
            t *= self.cfg.armijo.shrink;
        }
        Ok(None)
    }

    /// One outer iteration. Returns `false` once a stopping condition
    /// has fired (the status is then set and further calls do nothing).
    pub fn step(&mut self) -> Result<bool> {
        if self.status.is_some() {
            return Ok(false);
        }
        if self.grad_norm <= self.cfg.tau {
            self.status = Some(SolveStatus::GradientBelowTau);
            return Ok(false);
        }
        if self.iteration >= self.cfg.max_outer_iters {
            self.status = Some(SolveStatus::MaxIterations);
            return Ok(false);
        }
        if self.stagnated() {
            self.status = Some(SolveStatus::Stagnated);
            return Ok(false);
        }

        let t0 = if self.prev_step > 0.0 {
            (self.cfg.armijo.step_growth * self.prev_step).min(self.cfg.armijo.initial_step)
        } else {
            // No accepted step yet: start at the gradient's own scale so
            // the first Armijo test is not hopeless when ‖grad‖ is large.
            self.cfg.armijo.initial_step / self.grad_norm.max(1.0)
        };

        let mut accepted = self.line_search(&self.dir, t0)?;
        if accepted.is_none() && !self.dir_is_steepest {
            // Fall back to steepest descent once before giving up.
            let steepest = self.rgrad.scaled(-1.0);
            accepted = self.line_search(&steepest, t0)?;
        }
        let acc = match accepted {
            Some(acc) => acc,
            None => {
                self.status = Some(SolveStatus::LineSearchFailed);
                return Ok(false);
            }
        };

        let new_rgrad = riemannian_gradient(&acc.problem, &acc.dual)?;
        let new_norm = new_rgrad.norm();
        let old_point = self.problem.point().clone();
        let new_point = acc.problem.point();

        let beta = match self.cfg.beta_rule {
            BetaRule::HestenesStiefel => {
                let moved_grad = old_point.transport_to(new_point, &self.rgrad)?;
                let moved_dir = old_point.transport_to(new_point, &self.dir)?;
                let mut y = new_rgrad.clone();
                y.add_scaled(&moved_grad, -1.0)?;
                let num = new_rgrad.inner(&y)?;
                let den = moved_dir.inner(&y)?;
                let scale = moved_dir.norm() * y.norm();
                if den.abs() <= 1e-14 * scale.max(1e-300) {
                    0.0
                } else {
                    (num / den).max(0.0)
                }
            }
            BetaRule::FletcherReeves => {
                let g2 = new_norm * new_norm;
                let prev2 = self.grad_norm * self.grad_norm;
                if prev2 == 0.0 {
                    0.0
                } else {
                    g2 / prev2
                }
            }
        };

        let mut new_dir = new_rgrad.scaled(-1.0);
        let mut steepest = true;
        if beta > 0.0 {
            let moved_dir = old_point.transport_to(new_point, &self.dir)?;
            new_dir.add_scaled(&moved_dir, beta)?;
            steepest = false;
            if new_dir.inner(&new_rgrad)? >= 0.0 {
                new_dir = new_rgrad.scaled(-1.0);
                steepest = true;
            }
        }

        self.problem = acc.problem;
        self.dual = acc.dual;
        self.cost = acc.cost;
        self.rgrad = new_rgrad;
        self.grad_norm = new_norm;
        self.dir = new_dir;
        self.dir_is_steepest = steepest;
        self.prev_step = acc.step;
        self.iteration += 1;

        let rmse = match &self.truth {
            Some(truth) => Some(crate::eval::rmse(&self.snapshot_model().reconstruct()?, truth)?),
            None => None,
        };
        self.trace.push(TraceRow {
            iteration: self.iteration,
            cost: self.cost,
            grad_norm: self.grad_norm,
            step: acc.step,
            cg_iterations: acc.stats.cg_iterations,
            nnls_iterations: acc.stats.nnls_iterations,
            elapsed_s: self.clock.elapsed_s(),
            rmse,
        });
        Ok(true)
    }

    /// Steps until a stopping condition fires.
    pub fn run(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    /// Consumes the solver into its result. Runs to termination first if
    /// no stopping condition has fired yet.
    pub fn finish(mut self) -> Result<SolveResult> {
        if self.status.is_none() {
            self.run()?;
        }
        let status = self.status.expect("run sets a status");
        let model = self.snapshot_model();
        Ok(SolveResult { model, trace: self.trace, status })
    }
}

/// End-to-end completion: seeded initialization, Riemannian conjugate
/// gradient to termination, and the fitted model with its trace.
pub fn solve(
    y: SparseTensor,
    omega: ObservationMask,
    cfg: SolverConfig,
) -> Result<SolveResult> {
    Solver::new(y, omega, cfg)?.finish()
}
