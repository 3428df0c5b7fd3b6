//! Inner dual solver: the maximization the outer loop differentiates.
//!
//! For fixed factors U = (U₁,…,U_K), the inner problem is
//!
//!   max  h(Z, S) = ⟨Z, Y_Ω⟩ − ‖Z‖²/(4C) − Σ_k (λ_k/2) ‖U_kᵀ (Z + S)_k‖²
//!   s.t. Z supported on Ω,  S ≥ 0 entrywise.
//!
//! Holding S fixed, the optimal Z solves the Ω-supported linear system
//!
//!   Z/(2C) + Σ_k λ_k (Z ×_k U_k U_kᵀ)_Ω = Y_Ω − Σ_k λ_k (S ×_k U_k U_kᵀ)_Ω,
//!
//! whose operator is symmetric positive definite with spectrum bounded
//! below by 1/(2C); conjugate gradients handles it. Holding Z fixed, S
//! solves a nonnegative least-squares problem, handled by projected
//! gradient with Nesterov momentum, a fixed step 1/Σλ_k (a valid
//! Lipschitz bound because ‖U_k U_kᵀ‖₂ ≤ ‖U_k‖_F² = 1), and a restart
//! whenever momentum would break monotonicity. Alternations repeat until
//! a full round moves h by less than a relative tolerance (warm starts
//! make that quick near convergence); each half-step can only increase h.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::manifold::ProductPoint;
use crate::tensor::{DenseTensor, ObservationMask, Shape, SparseTensor};

// ─── configuration & stats ──────────────────────────────────────────────

/// Tolerances and budgets for one inner solve.
#[derive(Clone, Debug)]
pub struct InnerConfig {
    /// Relative residual target for the Z-system conjugate gradient.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// KKT residual target ‖s − max(0, s − ∇f(s))‖_F for the S-problem,
    /// scaled by max(1, ‖Z‖_F) since Z sets the subproblem's magnitude.
    pub nnls_tol: f64,
    pub nnls_max_iters: usize,
    /// Cap on Z/S alternations per solve; `alt_rel_tol` is the intended
    /// stop, this bounds the worst case.
    pub alternations: usize,
    /// Early stop once a full alternation moves the objective by less
    /// than this, relative to max(1, |objective|).
    pub alt_rel_tol: f64,
    /// Restrict the multiplier S to the observed support, pinning every
    /// entry off Ω to zero. Off-support freedom lets S drift along
    /// nonnegative null directions of the per-mode projectors (inflating
    /// h toward its trivial C‖Y‖² cap and flattening the outer cost), so
    /// the outer solver keeps this on.
    pub restrict_s_support: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            cg_tol: 1e-8,
            cg_max_iters: 1000,
            nnls_tol: 1e-8,
            nnls_max_iters: 500,
            alternations: 50,
            alt_rel_tol: 1e-6,
            restrict_s_support: false,
        }
    }
}

impl InnerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) || !(self.nnls_tol > 0.0) || !(self.alt_rel_tol >= 0.0) {
            return Err(Error::invalid("inner tolerances must be positive"));
        }
        if self.cg_max_iters == 0 || self.nnls_max_iters == 0 || self.alternations == 0 {
            return Err(Error::invalid("inner iteration budgets must be at least 1"));
        }
        Ok(())
    }
}

/// Convergence record of one conjugate-gradient solve.
#[derive(Clone, Debug)]
pub struct CgStats {
    pub iterations: usize,
    /// True residual ‖rhs − A z‖ / ‖rhs‖ at exit (0 when rhs = 0).
    pub relative_residual: f64,
    pub converged: bool,
}

/// Convergence record of one nonnegative least-squares solve.
#[derive(Clone, Debug)]
pub struct NnlsStats {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Final value of Σ_k (λ_k/2) ‖U_kᵀ(Z+S)_k‖².
    pub objective: f64,
}

/// Aggregate record of one alternating inner solve.
#[derive(Clone, Debug)]
pub struct InnerStats {
    pub cg_iterations: usize,
    pub nnls_iterations: usize,
    pub alternations_used: usize,
    /// Final inner objective h(Z, S).
    pub objective: f64,
    pub cg_relative_residual: f64,
    pub nnls_kkt_residual: f64,
    /// h after the initial point and after every half-step, in order.
    /// Nondecreasing up to rounding; tests lean on this.
    pub objective_path: Vec<f64>,
}

// ─── problem data ───────────────────────────────────────────────────────

/// Everything the inner problem depends on: observations, weights, the
/// cost parameter, and the current factors. Per-mode index maps for the
/// observed set are precomputed once and shared across factor updates.
#[derive(Clone, Debug)]
pub struct ProblemData {
    y: SparseTensor,
    omega: ObservationMask,
    lambda: Vec<f64>,
    c: f64,
    point: ProductPoint,
    ctx: Arc<OmegaContext>,
}

/// Per-mode (row, column) coordinates of each observed entry in the
/// mode's unfolding, with columns also compacted to the distinct set
/// that actually occurs, so Ω-to-Ω operator passes touch only those.
#[derive(Debug)]
struct OmegaContext {
    modes: Vec<ModeMap>,
}

#[derive(Debug)]
struct ModeMap {
    rows: Vec<u32>,
    full_cols: Vec<u32>,
    compact_cols: Vec<u32>,
    ncols_compact: usize,
}

impl OmegaContext {
    fn build(shape: &Shape, omega: &ObservationMask) -> Result<Self> {
        let order = shape.order();
        for k in 0..order {
            if shape.unfold_cols(k) > u32::MAX as usize || shape.dim(k) > u32::MAX as usize {
                return Err(Error::invalid(format!(
                    "shape {shape} too large for the observed-entry index maps"
                )));
            }
        }
        let mut modes: Vec<ModeMap> = (0..order)
            .map(|_| ModeMap {
                rows: Vec::with_capacity(omega.len()),
                full_cols: Vec::with_capacity(omega.len()),
                compact_cols: Vec::new(),
                ncols_compact: 0,
            })
            .collect();
        let mut index = vec![0usize; order];
        for &off in omega.offsets() {
            shape.decode(off, &mut index);
            for k in 0..order {
                modes[k].rows.push(index[k] as u32);
                modes[k].full_cols.push(shape.unfold_col_of(&index, k) as u32);
            }
        }
        for map in &mut modes {
            let mut distinct = map.full_cols.clone();
            distinct.sort_unstable();
            distinct.dedup();
            map.ncols_compact = distinct.len();
            map.compact_cols = map
                .full_cols
                .iter()
                .map(|c| distinct.binary_search(c).expect("column present") as u32)
                .collect();
        }
        Ok(OmegaContext { modes })
    }
}

impl ProblemData {
    /// Validates and assembles the inner-problem data. The observed
    /// tensor's support must equal the mask exactly; weights must be
    /// nonnegative and finite; C must be positive; the factors must
    /// match the tensor order and mode dimensions.
    pub fn new(
        y: SparseTensor,
        omega: ObservationMask,
        lambda: Vec<f64>,
        c: f64,
        point: ProductPoint,
    ) -> Result<Self> {
        if !y.support_matches(&omega) {
            return Err(Error::mismatch(
                "observed tensor support must equal the observation mask",
            ));
        }
        if omega.is_empty() {
            return Err(Error::invalid("observation mask is empty"));
        }
        let shape = y.shape().clone();
        if lambda.len() != shape.order() {
            return Err(Error::mismatch(format!(
                "{} weights for an order-{} tensor",
                lambda.len(),
                shape.order()
            )));
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("mode weights must be finite and nonnegative"));
        }
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::invalid("cost parameter C must be positive and finite"));
        }
        Self::check_point(&shape, &point)?;
        let ctx = Arc::new(OmegaContext::build(&shape, &omega)?);
        Ok(ProblemData { y, omega, lambda, c, point, ctx })
    }

    fn check_point(shape: &Shape, point: &ProductPoint) -> Result<()> {
        if point.order() != shape.order() {
            return Err(Error::mismatch(format!(
                "{} factors for an order-{} tensor",
                point.order(),
                shape.order()
            )));
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
        Ok(())
    }

    /// Same problem at a different point on the factor manifold; the
    /// precomputed observed-entry maps are shared, not rebuilt.
    pub fn with_point(&self, point: ProductPoint) -> Result<Self> {
        Self::check_point(self.y.shape(), &point)?;
        Ok(ProblemData {
            y: self.y.clone(),
            omega: self.omega.clone(),
            lambda: self.lambda.clone(),
            c: self.c,
            point,
            ctx: Arc::clone(&self.ctx),
        })
    }

    #[inline]
    pub fn observed(&self) -> &SparseTensor {
        &self.y
    }

    #[inline]
    pub fn mask(&self) -> &ObservationMask {
        &self.omega
    }

    #[inline]
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    #[inline]
    pub fn cost_parameter(&self) -> f64 {
        self.c
    }

    #[inline]
    pub fn point(&self) -> &ProductPoint {
        &self.point
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        self.y.shape()
    }

    /// Ω-to-Ω application of the Z-system operator on aligned values:
    /// out = z/(2C) + Σ_k λ_k (z ×_k U_k U_kᵀ)_Ω.
    fn apply_operator(&self, z_vals: &[f64], out: &mut [f64]) {
        let half_c = 1.0 / (2.0 * self.c);
        for (o, &zv) in out.iter_mut().zip(z_vals) {
            *o = zv * half_c;
        }
        for k in 0..self.shape().order() {
            let lam = self.lambda[k];
            if lam == 0.0 {
                continue;
            }
            let u = self.point.factor(k).factor();
            let r = u.cols();
            let map = &self.ctx.modes[k];
            let mut m = vec![0.0f64; map.ncols_compact * r];
            for (t, &zv) in z_vals.iter().enumerate() {
                if zv == 0.0 {
                    continue;
                }
                let urow = u.row(map.rows[t] as usize);
                let mrow = &mut m[map.compact_cols[t] as usize * r..][..r];
                for (acc, &uu) in mrow.iter_mut().zip(urow) {
                    *acc += zv * uu;
                }
            }
            for (t, o) in out.iter_mut().enumerate() {
                let urow = u.row(map.rows[t] as usize);
                let mrow = &m[map.compact_cols[t] as usize * r..][..r];
                let dot: f64 = urow.iter().zip(mrow).map(|(&a, &b)| a * b).sum();
                *o += lam * dot;
            }
        }
    }

    /// Σ_k (λ_k/2) ‖U_kᵀ (Z + S)_k‖² for Ω-aligned z values and an
    /// optional dense s.
    pub(crate) fn regularizer(&self, z_vals: &[f64], s: Option<&DenseTensor>) -> f64 {
        let shape = self.shape();
        let mut total = 0.0;
        for k in 0..shape.order() {
            let lam = self.lambda[k];
            if lam == 0.0 {
                continue;
            }
            let u = self.point.factor(k).factor();
            let r = u.cols();
            let map = &self.ctx.modes[k];
            let mut m;
            if let Some(s) = s {
                m = vec![0.0f64; shape.unfold_cols(k) * r];
                accumulate_dense(shape, k, s.values(), u, &mut m);
                for (t, &zv) in z_vals.iter().enumerate() {
                    if zv == 0.0 {
                        continue;
                    }
                    let urow = u.row(map.rows[t] as usize);
                    let mrow = &mut m[map.full_cols[t] as usize * r..][..r];
                    for (acc, &uu) in mrow.iter_mut().zip(urow) {
                        *acc += zv * uu;
                    }
                }
            } else {
                m = vec![0.0f64; map.ncols_compact * r];
                for (t, &zv) in z_vals.iter().enumerate() {
                    if zv == 0.0 {
                        continue;
                    }
                    let urow = u.row(map.rows[t] as usize);
                    let mrow = &mut m[map.compact_cols[t] as usize * r..][..r];
                    for (acc, &uu) in mrow.iter_mut().zip(urow) {
                        *acc += zv * uu;
                    }
                }
            }
            total += 0.5 * lam * m.iter().map(|v| v * v).sum::<f64>();
        }
        total
    }
}

/// M += U_kᵀ X_k for dense values `x` in canonical order: one sweep over
/// all cells, tracking the unfolding (row, column) incrementally.
pub(crate) fn accumulate_dense(
    shape: &Shape,
    mode: usize,
    x: &[f64],
    u: &crate::tensor::Matrix,
    m: &mut [f64],
) {
    let r = u.cols();
    let col_strides = shape.unfold_col_strides(mode);
    let dims = shape.dims();
    let mut index = vec![0usize; shape.order()];
    let mut col = 0usize;
    let mut off = 0usize;
    loop {
        let v = x[off];
        if v != 0.0 {
            let urow = u.row(index[mode]);
            let mrow = &mut m[col * r..][..r];
            for (acc, &uu) in mrow.iter_mut().zip(urow) {
                *acc += v * uu;
            }
        }
        off += 1;
        let mut mm = shape.order();
        loop {
            if mm == 0 {
                return;
            }
            mm -= 1;
            index[mm] += 1;
            col += col_strides[mm];
            if index[mm] < dims[mm] {
                break;
            }
            index[mm] = 0;
            col -= dims[mm] * col_strides[mm];
        }
    }
}

/// grad += factor · fold_k(U_k M): the adjoint sweep of
/// [`accumulate_dense`], scattering u_{i_k,:} · M_{:,col} back to cells.
pub(crate) fn scatter_dense(
    shape: &Shape,
    mode: usize,
    m: &[f64],
    u: &crate::tensor::Matrix,
    factor: f64,
    grad: &mut [f64],
) {
    let r = u.cols();
    let col_strides = shape.unfold_col_strides(mode);
    let dims = shape.dims();
    let mut index = vec![0usize; shape.order()];
    let mut col = 0usize;
    let mut off = 0usize;
    loop {
        let urow = u.row(index[mode]);
        let mrow = &m[col * r..][..r];
        let dot: f64 = urow.iter().zip(mrow).map(|(&a, &b)| a * b).sum();
        grad[off] += factor * dot;
        off += 1;
        let mut mm = shape.order();
        loop {
            if mm == 0 {
                return;
            }
            mm -= 1;
            index[mm] += 1;
            col += col_strides[mm];
            if index[mm] < dims[mm] {
                break;
            }
            index[mm] = 0;
            col -= dims[mm] * col_strides[mm];
        }
    }
}

/// G += X_k M for dense values `x` and M of shape (unfold columns)×r:
/// the remaining GEMM of the gradient, G[i_k, :] += x[cell]·M[col, :],
/// with G stored row-major n_k×r.
pub(crate) fn contract_dense(
    shape: &Shape,
    mode: usize,
    x: &[f64],
    m: &[f64],
    r: usize,
    g: &mut [f64],
) {
    let col_strides = shape.unfold_col_strides(mode);
    let dims = shape.dims();
    let mut index = vec![0usize; shape.order()];
    let mut col = 0usize;
    let mut off = 0usize;
    loop {
        let v = x[off];
        if v != 0.0 {
            let grow = &mut g[index[mode] * r..][..r];
            let mrow = &m[col * r..][..r];
            for (acc, &mv) in grow.iter_mut().zip(mrow) {
                *acc += v * mv;
            }
        }
        off += 1;
        let mut mm = shape.order();
        loop {
            if mm == 0 {
                return;
            }
            mm -= 1;
            index[mm] += 1;
            col += col_strides[mm];
            if index[mm] < dims[mm] {
                break;
            }
            index[mm] = 0;
            col -= dims[mm] * col_strides[mm];
        }
    }
}

// ─── dual pair ──────────────────────────────────────────────────────────

/// The inner solve's unknowns: the observed-support dual Z and the dense
/// nonnegativity multiplier S.
#[derive(Clone, Debug)]
pub struct DualPair {
    pub(crate) z: SparseTensor,
    pub(crate) s: DenseTensor,
}

impl DualPair {
    /// Validates shapes, S ≥ 0, and finiteness. Z's support is checked
    /// against the observation set by the solver entry points.
    pub fn new(z: SparseTensor, s: DenseTensor) -> Result<Self> {
        if z.shape() != s.shape() {
            return Err(Error::mismatch("dual pair components have different shapes"));
        }
        if s.values().iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("nonnegativity dual S has negative entries"));
        }
        Ok(DualPair { z, s })
    }

    /// All-zero pair on the problem's observation set and shape.
    pub fn zeros(p: &ProblemData) -> Self {
        DualPair {
            z: SparseTensor::zeros_on(p.mask()),
            s: DenseTensor::zeros(p.shape().clone()),
        }
    }

    #[inline]
    pub fn z(&self) -> &SparseTensor {
        &self.z
    }

    #[inline]
    pub fn s(&self) -> &DenseTensor {
        &self.s
    }
}

// ─── public operator & objective ────────────────────────────────────────

/// Applies the Z-system operator A z = z/(2C) + Σ_k λ_k (z ×_k U_k U_kᵀ)_Ω
/// to a tensor supported exactly on the observation set.
pub fn apply_normal_operator(z: &SparseTensor, p: &ProblemData) -> Result<SparseTensor> {
    if !z.support_matches(p.mask()) {
        return Err(Error::mismatch("operator input support must equal the observation mask"));
    }
    let mut out = vec![0.0f64; z.nnz()];
    p.apply_operator(z.values(), &mut out);
    SparseTensor::on_mask(p.mask(), out)
}

/// Right-hand side of the Z system: Y_Ω − Σ_k λ_k (S ×_k U_k U_kᵀ)_Ω.
pub fn build_rhs(p: &ProblemData, s: &DenseTensor) -> Result<SparseTensor> {
    if s.shape() != p.shape() {
        return Err(Error::mismatch("S has a different shape than the observations"));
    }
    let shape = p.shape();
    let mut out = p.observed().values().to_vec();
    for k in 0..shape.order() {
        let lam = p.lambda[k];
        if lam == 0.0 {
            continue;
        }
        let u = p.point.factor(k).factor();
        let r = u.cols();
        let map = &p.ctx.modes[k];
        let mut m = vec![0.0f64; shape.unfold_cols(k) * r];
        accumulate_dense(shape, k, s.values(), u, &mut m);
        for (t, o) in out.iter_mut().enumerate() {
            let urow = u.row(map.rows[t] as usize);
            let mrow = &m[map.full_cols[t] as usize * r..][..r];
            let dot: f64 = urow.iter().zip(mrow).map(|(&a, &b)| a * b).sum();
            *o -= lam * dot;
        }
    }
    SparseTensor::on_mask(p.mask(), out)
}

/// The inner objective h(Z, S) itself.
pub fn inner_objective(p: &ProblemData, dual: &DualPair) -> Result<f64> {
    if !dual.z.support_matches(p.mask()) {
        return Err(Error::mismatch("dual Z support must equal the observation mask"));
    }
    if dual.s.shape() != p.shape() {
        return Err(Error::mismatch("dual S shape must match the observations"));
    }
    let z_vals = dual.z.values();
    let fit: f64 = z_vals.iter().zip(p.observed().values()).map(|(a, b)| a * b).sum();
    let znorm2: f64 = z_vals.iter().map(|v| v * v).sum();
    Ok(fit - znorm2 / (4.0 * p.c) - p.regularizer(z_vals, Some(&dual.s)))
}

// ─── conjugate gradient for Z ───────────────────────────────────────────

/// Solves the Z system for fixed S by conjugate gradients, warm-started
/// at `z0`. Stops when the residual falls to `cg_tol` relative to the
/// right-hand side; a warm start already at the solution takes zero
/// iterations.
pub fn cg_solve_z(
    p: &ProblemData,
    s: &DenseTensor,
    z0: &SparseTensor,
    cfg: &InnerConfig,
) -> Result<(SparseTensor, CgStats)> {
    cfg.validate()?;
    if !z0.support_matches(p.mask()) {
        return Err(Error::mismatch("warm start support must equal the observation mask"));
    }
    let rhs = build_rhs(p, s)?;
    let b = rhs.values();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = b.len();
    if bnorm == 0.0 {
        // SPD operator: zero right-hand side means the zero solution.
        let stats = CgStats { iterations: 0, relative_residual: 0.0, converged: true };
        return Ok((SparseTensor::zeros_on(p.mask()), stats));
    }

    let mut z = z0.values().to_vec();
    let mut az = vec![0.0f64; n];
    p.apply_operator(&z, &mut az);
    let mut resid: Vec<f64> = b.iter().zip(&az).map(|(bb, aa)| bb - aa).collect();
    let mut rs: f64 = resid.iter().map(|v| v * v).sum();
    let mut dir = resid.clone();
    let mut adir = vec![0.0f64; n];
    let mut iterations = 0usize;

    while rs.sqrt() > cfg.cg_tol * bnorm && iterations < cfg.cg_max_iters {
        p.apply_operator(&dir, &mut adir);
        let dad: f64 = dir.iter().zip(&adir).map(|(a, b)| a * b).sum();
        if !dad.is_finite() {
            return Err(Error::NonFinite("conjugate gradient".to_string()));
        }
        if dad <= 0.0 {
            return Err(Error::invalid(
                "conjugate gradient breakdown: operator is not positive definite",
            ));
        }
        let alpha = rs / dad;
        for ((zz, dd), (rr, aa)) in
            z.iter_mut().zip(&dir).zip(resid.iter_mut().zip(&adir))
        {
            *zz += alpha * dd;
            *rr -= alpha * aa;
        }
        let rs_new: f64 = resid.iter().map(|v| v * v).sum();
        if !rs_new.is_finite() {
            return Err(Error::NonFinite("conjugate gradient".to_string()));
        }
        let beta = rs_new / rs;
        for (dd, &rr) in dir.iter_mut().zip(&resid) {
            *dd = rr + beta * *dd;
        }
        rs = rs_new;
        iterations += 1;
    }

    // Report the true residual, not the recurrence's estimate.
    p.apply_operator(&z, &mut az);
    let true_resid = b
        .iter()
        .zip(&az)
        .map(|(bb, aa)| (bb - aa) * (bb - aa))
        .sum::<f64>()
        .sqrt();
    let relative_residual = true_resid / bnorm;
    let stats = CgStats {
        iterations,
        relative_residual,
        converged: relative_residual <= cfg.cg_tol * 10.0 || rs.sqrt() <= cfg.cg_tol * bnorm,
    };
    Ok((SparseTensor::on_mask(p.mask(), z)?, stats))
}

// ─── projected gradient for S ───────────────────────────────────────────

struct NnlsWork<'a> {
    p: &'a ProblemData,
    z_vals: &'a [f64],
    sum_lambda: f64,
    /// Offsets where S is pinned to zero (the complement of Ω), when
    /// support restriction is on.
    pinned: Vec<usize>,
}

impl<'a> NnlsWork<'a> {
    /// f(s) and ∇f(s) in one pass set: f = Σ λ_k/2 ‖M_k‖² with
    /// M_k = U_kᵀ(Z+S)_k, ∇f = Σ λ_k fold_k(U_k M_k).
    fn eval(&self, s: &[f64], grad: &mut [f64]) -> f64 {
        let shape = self.p.shape();
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        let mut f = 0.0;
        for k in 0..shape.order() {
            let lam = self.p.lambda[k];
            if lam == 0.0 {
                continue;
            }
            let u = self.p.point.factor(k).factor();
            let r = u.cols();
            let map = &self.p.ctx.modes[k];
            let mut m = vec![0.0f64; shape.unfold_cols(k) * r];
            accumulate_dense(shape, k, s, u, &mut m);
            for (t, &zv) in self.z_vals.iter().enumerate() {
                if zv == 0.0 {
                    continue;
                }
                let urow = u.row(map.rows[t] as usize);
                let mrow = &mut m[map.full_cols[t] as usize * r..][..r];
                for (acc, &uu) in mrow.iter_mut().zip(urow) {
                    *acc += zv * uu;
                }
            }
            f += 0.5 * lam * m.iter().map(|v| v * v).sum::<f64>();
            scatter_dense(shape, k, &m, u, lam, grad);
        }
        f
    }

    /// Projection onto the feasible set: clamp at zero, plus any pins.
    fn project(&self, s: &mut [f64]) {
        for v in s.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        for &off in &self.pinned {
            s[off] = 0.0;
        }
    }

    fn kkt_residual(&self, s: &[f64], grad: &[f64]) -> f64 {
        let mut stepped: Vec<f64> = s.iter().zip(grad).map(|(sv, gv)| sv - gv).collect();
        self.project(&mut stepped);
        s.iter()
            .zip(&stepped)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Solves the S subproblem for fixed Z: min over S ≥ 0 of
/// Σ_k (λ_k/2) ‖U_kᵀ(Z+S)_k‖², warm-started at `s0`. The iteration is
/// monotone: the objective never rises above its value at the warm start.
pub fn nnls_solve_s(
    p: &ProblemData,
    z: &SparseTensor,
    s0: &DenseTensor,
    cfg: &InnerConfig,
) -> Result<(DenseTensor, NnlsStats)> {
    cfg.validate()?;
    if !z.support_matches(p.mask()) {
        return Err(Error::mismatch("Z support must equal the observation mask"));
    }
    if s0.shape() != p.shape() {
        return Err(Error::mismatch("warm start S shape must match the observations"));
    }
    if s0.values().iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("warm start S has negative entries"));
    }
    let sum_lambda: f64 = p.lambda.iter().sum();
    let pinned = if cfg.restrict_s_support {
        let mut pins = Vec::with_capacity(p.shape().len() - p.mask().len());
        let mut observed = p.mask().offsets().iter().copied().peekable();
        for off in 0..p.shape().len() {
            match observed.peek() {
                Some(&next) if next == off => {
                    observed.next();
                }
                _ => pins.push(off),
            }
        }
        pins
    } else {
        Vec::new()
    };
    let work = NnlsWork { p, z_vals: z.values(), sum_lambda, pinned };

    let mut s = s0.values().to_vec();
    work.project(&mut s);
    let n = s.len();
    let mut grad = vec![0.0f64; n];

    if sum_lambda == 0.0 {
        // The objective is identically zero; any feasible point is optimal.
        let stats =
            NnlsStats { iterations: 0, kkt_residual: 0.0, converged: true, objective: 0.0 };
        return Ok((DenseTensor::from_values(p.shape().clone(), s)?, stats));
    }
    let step = 1.0 / work.sum_lambda;
    let kkt_target = cfg.nnls_tol * z.frob_norm().max(1.0);

    let mut f_s = work.eval(&s, &mut grad);
    let mut kkt = work.kkt_residual(&s, &grad);
    if kkt <= kkt_target {
        let stats = NnlsStats { iterations: 0, kkt_residual: kkt, converged: true, objective: f_s };
        return Ok((DenseTensor::from_values(p.shape().clone(), s)?, stats));
    }

    let mut s_prev = s.clone();
    let mut grad_y = vec![0.0f64; n];
    let mut momentum = 1.0f64;
    let mut iterations = 0usize;
    let mut converged = false;

    for _ in 0..cfg.nnls_max_iters {
        iterations += 1;
        let momentum_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let gamma = (momentum - 1.0) / momentum_next;

        // Extrapolate, step, project.
        let mut cand: Vec<f64> = s
            .iter()
            .zip(&s_prev)
            .map(|(cur, prev)| cur + gamma * (cur - prev))
            .collect();
        let f_y = work.eval(&cand, &mut grad_y);
        debug_assert!(f_y.is_finite());
        for (cv, &gv) in cand.iter_mut().zip(&grad_y) {
            *cv -= step * gv;
        }
        work.project(&mut cand);
        let mut f_c = work.eval(&cand, &mut grad);

        if f_c > f_s {
            // Momentum overshot; fall back to a plain projected step from
            // s, which the 1/Σλ step size makes a guaranteed descent.
            let f_at_s = work.eval(&s, &mut grad_y);
            cand = s.iter().zip(&grad_y).map(|(sv, gv)| sv - step * gv).collect();
            work.project(&mut cand);
            f_c = work.eval(&cand, &mut grad);
            debug_assert!(f_c <= f_at_s + 1e-12 * f_at_s.abs().max(1.0));
            momentum = 1.0;
        } else {
            momentum = momentum_next;
        }

        s_prev = std::mem::replace(&mut s, cand);
        f_s = f_c;
        kkt = work.kkt_residual(&s, &grad);
        if kkt <= kkt_target {
            converged = true;
            break;
        }
    }

    let stats = NnlsStats { iterations, kkt_residual: kkt, converged, objective: f_s };
    Ok((DenseTensor::from_values(p.shape().clone(), s)?, stats))
}

// ─── alternating solve ──────────────────────────────────────────────────

/// Runs Z-solve / S-solve alternations from a warm start and returns the
/// refined dual pair. The objective path it records is nondecreasing up
/// to rounding, because each half-step maximizes h in its own block.
pub fn alternating_inner_solve(
    p: &ProblemData,
    warm: &DualPair,
    cfg: &InnerConfig,
) -> Result<(DualPair, InnerStats)> {
    cfg.validate()?;
    if !warm.z.support_matches(p.mask()) {
        return Err(Error::mismatch("warm start Z support must equal the observation mask"));
    }
    let mut z = warm.z.clone();
    let mut s = warm.s.clone();
    let mut stats = InnerStats {
        cg_iterations: 0,
        nnls_iterations: 0,
        alternations_used: 0,
        objective: 0.0,
        cg_relative_residual: 0.0,
        nnls_kkt_residual: 0.0,
        objective_path: Vec::with_capacity(2 * cfg.alternations + 1),
    };
    let mut h = inner_objective(p, &DualPair { z: z.clone(), s: s.clone() })?;
    stats.objective_path.push(h);

    for _ in 0..cfg.alternations {
        let h_start = h;
        stats.alternations_used += 1;

        let (z_new, cg) = cg_solve_z(p, &s, &z, cfg)?;
        z = z_new;
        stats.cg_iterations += cg.iterations;
        stats.cg_relative_residual = cg.relative_residual;
        h = inner_objective(p, &DualPair { z: z.clone(), s: s.clone() })?;
        stats.objective_path.push(h);

        let (s_new, nn) = nnls_solve_s(p, &z, &s, cfg)?;
        s = s_new;
        stats.nnls_iterations += nn.iterations;
        stats.nnls_kkt_residual = nn.kkt_residual;
        h = inner_objective(p, &DualPair { z: z.clone(), s: s.clone() })?;
        stats.objective_path.push(h);

        if (h - h_start).abs() <= cfg.alt_rel_tol * h.abs().max(1.0) {
            break;
        }
    }
    stats.objective = h;
    Ok((DualPair { z, s }, stats))
}
