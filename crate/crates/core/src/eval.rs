//! Metrics, synthetic data, and independent oracles.
//!
//! The oracles anchor correctness of the main kernels:
//!
//!   • nuclear-norm identity  ‖X‖_*² = ⟨Θ̄†X, X⟩ with Θ̄ = √(XXᵀ)/tr√(XXᵀ),
//!     the closed form the whole dual factorization rests on;
//!   • a dense |Ω|×|Ω| assembly of the inner Z system solved by Cholesky,
//!     cross-checking conjugate gradients;
//!   • exhaustive active-set enumeration for the S subproblem on tiny
//!     shapes, cross-checking projected gradient.
//!
//! The linear algebra here (cyclic Jacobi eigensolver, Cholesky) is
//! deliberately self-contained so the oracles share nothing with the
//! kernels they check. Sweep cap 60, off-diagonal tolerance 1e-13·‖A‖_F,
//! pseudo-inverse threshold 1e-12·λ_max, all frozen for reproducibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inner::{apply_normal_operator, InnerConfig, ProblemData};
use crate::manifold::ProductPoint;
use crate::tensor::{mode_product, DenseTensor, Matrix, ObservationMask, Shape, SparseTensor};

// ─── metrics ────────────────────────────────────────────────────────────

/// Root-mean-square error √(‖W − W_true‖_F² / ∏nₖ) over all entries.
pub fn rmse(w: &DenseTensor, w_true: &DenseTensor) -> Result<f64> {
    if w.shape() != w_true.shape() {
        return Err(Error::mismatch(format!(
            "rmse between shapes {} and {}",
            w.shape(),
            w_true.shape()
        )));
    }
    let sum: f64 = w
        .values()
        .iter()
        .zip(w_true.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / w.shape().len() as f64).sqrt())
}

/// RMSE restricted to the complement of the observed set; `None` when
/// every entry is observed.
pub fn held_out_rmse(
    w: &DenseTensor,
    w_true: &DenseTensor,
    omega: &ObservationMask,
) -> Result<Option<f64>> {
    if w.shape() != w_true.shape() {
        return Err(Error::mismatch("held-out rmse between different shapes"));
    }
    if omega.shape() != w.shape() {
        return Err(Error::mismatch("observation mask shape differs from the tensors"));
    }
    let total = w.shape().len();
    let hidden = total - omega.len();
    if hidden == 0 {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut next = omega.offsets().iter().copied().peekable();
    for (off, (a, b)) in w.values().iter().zip(w_true.values()).enumerate() {
        if next.peek() == Some(&off) {
            next.next();
            continue;
        }
        sum += (a - b) * (a - b);
    }
    Ok(Some((sum / hidden as f64).sqrt()))
}

/// Summary quality figures for a reconstruction against a known truth.
#[derive(Clone, Debug)]
pub struct Metrics {
    pub rmse: f64,
    /// RMSE over unobserved entries; `None` when the mask is full.
    pub held_out_rmse: Option<f64>,
    /// Fraction of reconstructed entries strictly below zero.
    pub negative_fraction: f64,
    pub min_entry: f64,
}

/// Computes [`Metrics`]; pass the mask used for training to split out the
/// held-out error, or `None` to skip it.
pub fn metrics(
    w: &DenseTensor,
    w_true: &DenseTensor,
    omega: Option<&ObservationMask>,
) -> Result<Metrics> {
    let all = rmse(w, w_true)?;
    let held = match omega {
        Some(mask) => held_out_rmse(w, w_true, mask)?,
        None => None,
    };
    let negatives = w.values().iter().filter(|v| **v < 0.0).count();
    let min_entry = w.values().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Metrics {
        rmse: all,
        held_out_rmse: held,
        negative_fraction: negatives as f64 / w.shape().len() as f64,
        min_entry,
    })
}

/// Root-mean-square of a tensor's entries, the natural scale for
/// relative error thresholds.
pub fn rms(t: &DenseTensor) -> f64 {
    (t.values().iter().map(|v| v * v).sum::<f64>() / t.shape().len() as f64).sqrt()
}

// ─── sampling & synthetic data ──────────────────────────────────────────

/// Uniformly random observation set of round(fraction·∏nₖ) entries,
/// without replacement, deterministic per seed.
pub fn sample_mask(shape: &Shape, fraction: f64, seed: u64) -> Result<ObservationMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "observation fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let count = (fraction * shape.len() as f64).round() as usize;
    if count == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} entries rounds to an empty mask",
            shape.len()
        )));
    }
    let count = count.min(shape.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = rand::seq::index::sample(&mut rng, shape.len(), count).into_vec();
    offsets.sort_unstable();
    ObservationMask::from_offsets(shape.clone(), offsets)
}

/// Recipe for a synthetic nonnegative low-multilinear-rank tensor.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub core_rank: Vec<usize>,
    pub seed: u64,
    pub noise_sigma: f64,
}

/// Draws a Tucker-form tensor G ×₁ A₁ ×₂ A₂ ⋯ with i.i.d. uniform[0,1]
/// core and factors, so every entry is nonnegative and each mode-k
/// unfolding has rank at most rₖ. Optional Gaussian noise is added and
/// the result clamped at zero to stay nonnegative.
pub fn synth_nonneg_lowrank(spec: &SyntheticSpec) -> Result<DenseTensor> {
    if spec.core_rank.len() != spec.dims.len() {
        return Err(Error::mismatch(format!(
            "{} core ranks for {} modes",
            spec.core_rank.len(),
            spec.dims.len()
        )));
    }
    for (k, (&r, &n)) in spec.core_rank.iter().zip(&spec.dims).enumerate() {
        if r == 0 || r > n {
            return Err(Error::invalid(format!(
                "core rank {} of mode {} must lie in 1..={}",
                r,
                k + 1,
                n
            )));
        }
    }
    if !spec.noise_sigma.is_finite() || spec.noise_sigma < 0.0 {
        return Err(Error::invalid("noise level must be finite and nonnegative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let core_shape = Shape::new(spec.core_rank.clone())?;
    let core_vals: Vec<f64> = (0..core_shape.len()).map(|_| rng.random::<f64>()).collect();
    let mut t = DenseTensor::from_values(core_shape, core_vals)?;
    for (k, (&n, &r)) in spec.dims.iter().zip(&spec.core_rank).enumerate() {
        let vals: Vec<f64> = (0..n * r).map(|_| rng.random::<f64>()).collect();
        let a = Matrix::from_values(n, r, vals)?;
        t = mode_product(&t, &a, k)?;
    }
    if spec.noise_sigma > 0.0 {
        for v in t.values_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = (*v + spec.noise_sigma * g).max(0.0);
        }
    }
    Ok(t)
}

// ─── self-contained linear algebra ──────────────────────────────────────

const JACOBI_SWEEP_CAP: usize = 60;
const JACOBI_OFF_TOL: f64 = 1e-13;

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns the
/// eigenvalues in ascending order and the matching orthonormal
/// eigenvector columns, so A = V diag(w) Vᵀ.
pub(crate) fn jacobi_eigh(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::mismatch("eigendecomposition of a non-square matrix"));
    }
    let scale = a.frob_norm();
    for i in 0..n {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::invalid("eigendecomposition input is not symmetric"));
            }
        }
    }
    let mut w: Vec<f64> = a.values().to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    if scale == 0.0 {
        return Ok((vec![0.0; n], Matrix::from_values(n, n, v)?));
    }

    let mut converged = false;
    for _ in 0..JACOBI_SWEEP_CAP {
        let mut off2 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off2 += 2.0 * w[i * n + j] * w[i * n + j];
            }
        }
        if off2.sqrt() <= JACOBI_OFF_TOL * scale {
            converged = true;
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = w[i * n + j];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[j * n + j] - w[i * n + i]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // W ← JᵀWJ with the rotation acting in the (i, j) plane.
                for k in 0..n {
                    let wik = w[k * n + i];
                    let wjk = w[k * n + j];
                    w[k * n + i] = c * wik - s * wjk;
                    w[k * n + j] = s * wik + c * wjk;
                }
                for k in 0..n {
                    let wik = w[i * n + k];
                    let wjk = w[j * n + k];
                    w[i * n + k] = c * wik - s * wjk;
                    w[j * n + k] = s * wik + c * wjk;
                }
                for k in 0..n {
                    let vik = v[k * n + i];
                    let vjk = v[k * n + j];
                    v[k * n + i] = c * vik - s * vjk;
                    v[k * n + j] = s * vik + c * vjk;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { routine: "jacobi_eigh", limit: JACOBI_SWEEP_CAP });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[i * n + i].partial_cmp(&w[j * n + j]).unwrap());
    let evals: Vec<f64> = order.iter().map(|&i| w[i * n + i]).collect();
    let mut vp = vec![0.0f64; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vp[k * n + new_col] = v[k * n + old_col];
        }
    }
    Ok((evals, Matrix::from_values(n, n, vp)?))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix; L Lᵀ = A.
pub(crate) fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::mismatch("Cholesky of a non-square matrix"));
    }
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        for i in j..n {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::invalid("matrix is not positive definite"));
                }
                l[j * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Matrix::from_values(n, n, l)
}

/// Solves L Lᵀ x = b given the Cholesky factor.
pub(crate) fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l.get(i, k) * x[k];
        }
        x[i] /= l.get(i, i);
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            x[i] -= l.get(k, i) * x[k];
        }
        x[i] /= l.get(i, i);
    }
    x
}

// ─── nuclear norm & the identity behind the factorization ──────────────

/// Singular values of a matrix in descending order, by one-sided Jacobi:
/// plane rotations orthogonalize the columns, whose norms then read off
/// the singular values. Working on X directly rather than on XXᵀ keeps
/// small singular values accurate relative to themselves, so a rank-one
/// matrix really reports σ₂/σ₁ at rounding level rather than at √ε.
pub fn svd_singular_values(x: &Matrix) -> Result<Vec<f64>> {
    let mut w = if x.cols() <= x.rows() { x.clone() } else { x.transpose() };
    let rows = w.rows();
    let cols = w.cols();
    let mut converged = false;
    for _ in 0..JACOBI_SWEEP_CAP {
        let mut rotated = false;
        for i in 0..cols.saturating_sub(1) {
            for j in (i + 1)..cols {
                let mut a = 0.0;
                let mut b = 0.0;
                let mut g = 0.0;
                for k in 0..rows {
                    let wi = w.get(k, i);
                    let wj = w.get(k, j);
                    a += wi * wi;
                    b += wj * wj;
                    g += wi * wj;
                }
                if g == 0.0 || g.abs() <= JACOBI_OFF_TOL * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (b - a) / (2.0 * g);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..rows {
                    let wi = w.get(k, i);
                    let wj = w.get(k, j);
                    w.set(k, i, c * wi - s * wj);
                    w.set(k, j, s * wi + c * wj);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            routine: "one-sided Jacobi SVD",
            limit: JACOBI_SWEEP_CAP,
        });
    }
    let mut sigmas: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|k| w.get(k, j) * w.get(k, j)).sum::<f64>().sqrt())
        .collect();
    sigmas.sort_by(|p, q| q.partial_cmp(p).unwrap());
    Ok(sigmas)
}

/// Sum of singular values.
pub fn svd_nuclear_norm(x: &Matrix) -> Result<f64> {
    Ok(svd_singular_values(x)?.iter().sum())
}

/// Both sides of the identity ‖X‖_*² = ⟨Θ̄†X, X⟩, with the maximizing
/// trace-one PSD matrix Θ̄ = √(XXᵀ)/tr√(XXᵀ) reported alongside.
#[derive(Clone, Debug)]
pub struct NuclearNormIdentity {
    /// ‖X‖_*², from the singular-value route.
    pub lhs: f64,
    /// ⟨Θ̄†X, X⟩, from the closed-form maximizer.
    pub rhs: f64,
    pub theta_bar: Matrix,
}

/// Evaluates the identity the dual factorization rests on. The
/// pseudo-inverse thresholds eigenvalues at 1e-12·λ_max; the zero matrix
/// is rejected since Θ̄ is undefined there.
pub fn nuclear_norm_identity_check(x: &Matrix) -> Result<NuclearNormIdentity> {
    if x.frob_norm() == 0.0 {
        return Err(Error::invalid("the identity is undefined at the zero matrix"));
    }
    let n = x.rows();
    let gram = x.matmul(&x.transpose())?;
    let (evals, v) = jacobi_eigh(&gram)?;
    // Eigenvalues at rounding level are null-space noise; thresholding
    // happens in the eigenvalue domain, where noise sits at ε·λ_max
    // rather than at √ε·σ_max.
    let lam_max = evals.iter().cloned().fold(0.0, f64::max);
    let sigmas: Vec<f64> = evals
        .iter()
        .map(|l| if *l > 1e-12 * lam_max { l.sqrt() } else { 0.0 })
        .collect();
    let trace: f64 = sigmas.iter().sum();

    let mut sqrt_gram = Matrix::zeros(n, n);
    let mut pinv_sqrt = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut root = 0.0;
            let mut pinv = 0.0;
            for (e, &sig) in sigmas.iter().enumerate() {
                if sig == 0.0 {
                    continue;
                }
                let ve = v.get(i, e) * v.get(j, e);
                root += sig * ve;
                pinv += ve / sig;
            }
            sqrt_gram.set(i, j, root);
            pinv_sqrt.set(i, j, pinv);
        }
    }
    let theta_bar = sqrt_gram.scaled(1.0 / trace);
    // Θ̄† = tr√(XXᵀ) · (√(XXᵀ))†.
    let theta_pinv_x = pinv_sqrt.scaled(trace).matmul(x)?;
    let rhs = theta_pinv_x.dot(x)?;
    let nuc = svd_nuclear_norm(x)?;
    Ok(NuclearNormIdentity { lhs: nuc * nuc, rhs, theta_bar })
}

// ─── dense oracle for the inner Z system ────────────────────────────────

/// Practical ceiling for the |Ω|×|Ω| assembly.
pub const DENSE_ORACLE_CAP: usize = 500;

/// The probed operator matrix and the reference solution it yields.
#[derive(Clone, Debug)]
pub struct DenseInnerOracle {
    pub operator: Matrix,
    pub z: SparseTensor,
}

/// Reference solution of the inner Z system: probes the production
/// operator with unit vectors to assemble the full |Ω|×|Ω| matrix,
/// verifies symmetry, and solves by dense Cholesky. The right-hand side
/// is assembled here from first principles, independent of the solver's
/// own path.
pub fn dense_inner_oracle(p: &ProblemData, s: &DenseTensor) -> Result<DenseInnerOracle> {
    let m = p.mask().len();
    if m > DENSE_ORACLE_CAP {
        return Err(Error::invalid(format!(
            "dense oracle supports at most {DENSE_ORACLE_CAP} observed entries, got {m}"
        )));
    }
    if s.shape() != p.shape() {
        return Err(Error::mismatch("S has a different shape than the observations"));
    }
    let shape = p.shape();
    let order = shape.order();

    let mut operator = Matrix::zeros(m, m);
    for t in 0..m {
        let mut unit = vec![0.0f64; m];
        unit[t] = 1.0;
        let probe = SparseTensor::on_mask(p.mask(), unit)?;
        let col = apply_normal_operator(&probe, p)?;
        for (i, &val) in col.values().iter().enumerate() {
            operator.set(i, t, val);
        }
    }
    let mut asym: f64 = 0.0;
    for i in 0..m {
        for j in 0..i {
            asym = asym.max((operator.get(i, j) - operator.get(j, i)).abs());
        }
    }
    if asym > 1e-10 * operator.frob_norm().max(1.0) {
        return Err(Error::invalid(
            "assembled inner operator is not symmetric; the operator is buggy",
        ));
    }

    // rhs[t] = y[t] − Σ_k λ_k Σ_j (U_kU_kᵀ)[i_k, j] · S[i with i_k → j].
    let grams: Vec<Matrix> = (0..order)
        .map(|k| {
            let u = p.point().factor(k).factor();
            u.matmul(&u.transpose())
        })
        .collect::<Result<_>>()?;
    let mut rhs = p.observed().values().to_vec();
    let mut index = vec![0usize; order];
    for (t, &off) in p.mask().offsets().iter().enumerate() {
        shape.decode(off, &mut index);
        for k in 0..order {
            let lam = p.lambda()[k];
            if lam == 0.0 {
                continue;
            }
            let mut probe = index.clone();
            let mut acc = 0.0;
            for j in 0..shape.dim(k) {
                probe[k] = j;
                acc += grams[k].get(index[k], j) * s.get(&probe)?;
            }
            rhs[t] -= lam * acc;
        }
    }

    let l = cholesky(&operator)?;
    let z_vals = cholesky_solve(&l, &rhs);
    Ok(DenseInnerOracle { operator, z: SparseTensor::on_mask(p.mask(), z_vals)? })
}

// ─── exhaustive oracle for the S subproblem ─────────────────────────────

/// Practical ceiling for active-set enumeration (2^cells patterns).
pub const NNLS_ORACLE_CAP: usize = 16;

/// Reference solution of min over S ≥ 0 of Σ_k (λ_k/2)‖U_kᵀ(Z+S)_k‖² by
/// enumerating every active set: for each subset of entries forced to
/// zero, solve the unconstrained quadratic on the rest, keep candidates
/// that are feasible and stationary, and return the best.
pub fn nnls_exhaustive_oracle(p: &ProblemData, z: &SparseTensor) -> Result<DenseTensor> {
    let shape = p.shape();
    let n = shape.len();
    if n > NNLS_ORACLE_CAP {
        return Err(Error::invalid(format!(
            "exhaustive oracle supports at most {NNLS_ORACLE_CAP} entries, got {n}"
        )));
    }
    if !z.support_matches(p.mask()) {
        return Err(Error::mismatch("Z support must equal the observation mask"));
    }
    let order = shape.order();
    let grams: Vec<Matrix> = (0..order)
        .map(|k| {
            let u = p.point().factor(k).factor();
            u.matmul(&u.transpose())
        })
        .collect::<Result<_>>()?;
    let cells: Vec<Vec<usize>> = (0..n)
        .map(|off| {
            let mut idx = vec![0usize; order];
            shape.decode(off, &mut idx);
            idx
        })
        .collect();

    // Quadratic model f(s) = ½ sᵀH s + g₀ᵀ s (+ a constant in Z).
    let mut h = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut val = 0.0;
            for k in 0..order {
                let lam = p.lambda()[k];
                if lam == 0.0 {
                    continue;
                }
                let equal_elsewhere =
                    (0..order).all(|m2| m2 == k || cells[a][m2] == cells[b][m2]);
                if equal_elsewhere {
                    val += lam * grams[k].get(cells[a][k], cells[b][k]);
                }
            }
            h.set(a, b, val);
        }
    }
    let mut g0 = vec![0.0f64; n];
    let mut e_idx = vec![0usize; order];
    for (t, &off) in p.mask().offsets().iter().enumerate() {
        shape.decode(off, &mut e_idx);
        let zv = z.values()[t];
        if zv == 0.0 {
            continue;
        }
        for (a, cell) in cells.iter().enumerate() {
            for k in 0..order {
                let lam = p.lambda()[k];
                if lam == 0.0 {
                    continue;
                }
                let equal_elsewhere =
                    (0..order).all(|m2| m2 == k || cell[m2] == e_idx[m2]);
                if equal_elsewhere {
                    g0[a] += lam * grams[k].get(cell[k], e_idx[k]) * zv;
                }
            }
        }
    }

    let g0_scale = g0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pattern in 0..(1usize << n) {
        let free: Vec<usize> = (0..n).filter(|i| pattern & (1 << i) != 0).collect();
        let nf = free.len();

        // Solve H_FF s_F = −g0_F by eigendecomposition pseudo-inverse.
        let mut s_free = vec![0.0f64; nf];
        if nf > 0 {
            let mut hff = Matrix::zeros(nf, nf);
            for (ia, &aa) in free.iter().enumerate() {
                for (ib, &bb) in free.iter().enumerate() {
                    hff.set(ia, ib, h.get(aa, bb));
                }
            }
            let (evals, v) = jacobi_eigh(&hff)?;
            let lmax = evals.iter().cloned().fold(0.0, f64::max);
            let thresh = 1e-12 * lmax.max(1e-300);
            let mut vt_b = vec![0.0f64; nf];
            for e in 0..nf {
                let mut acc = 0.0;
                for (ia, &aa) in free.iter().enumerate() {
                    acc += v.get(ia, e) * (-g0[aa]);
                }
                vt_b[e] = acc;
            }
            for (ia, sf) in s_free.iter_mut().enumerate() {
                let mut acc = 0.0;
                for e in 0..nf {
                    if evals[e] > thresh {
                        acc += v.get(ia, e) * vt_b[e] / evals[e];
                    }
                }
                *sf = acc;
            }
            // Stationarity on the free block; a least-squares pseudo
            // solution of an inconsistent system is not a candidate.
            let mut resid = 0.0f64;
            for &aa in &free {
                let mut acc = g0[aa];
                for (ib, &bb) in free.iter().enumerate() {
                    acc += h.get(aa, bb) * s_free[ib];
                }
                resid += acc * acc;
            }
            if resid.sqrt() > 1e-8 * g0_scale {
                continue;
            }
        }

        if s_free.iter().any(|v| *v < -1e-10) {
            continue;
        }
        let mut s = vec![0.0f64; n];
        for (ia, &aa) in free.iter().enumerate() {
            s[aa] = s_free[ia].max(0.0);
        }
        // Dual feasibility on the active set.
        let mut kkt_ok = true;
        for a in 0..n {
            if pattern & (1 << a) != 0 {
                continue;
            }
            let mut grad = g0[a];
            for b in 0..n {
                grad += h.get(a, b) * s[b];
            }
            if grad < -1e-8 * g0_scale {
                kkt_ok = false;
                break;
            }
        }
        if !kkt_ok {
            continue;
        }

        let mut f = 0.0;
        for a in 0..n {
            f += g0[a] * s[a];
            let mut hrow = 0.0;
            for b in 0..n {
                hrow += h.get(a, b) * s[b];
            }
            f += 0.5 * hrow * s[a];
        }
        if best.as_ref().map_or(true, |(fb, _)| f < *fb) {
            best = Some((f, s));
        }
    }

    let (_, s) = best.ok_or_else(|| {
        Error::invalid("active-set enumeration found no stationary feasible candidate")
    })?;
    DenseTensor::from_values(shape.clone(), s)
}

// ─── suite runners ──────────────────────────────────────────────────────

/// Case counts and base seed for [`oracle_suite`].
#[derive(Clone, Debug)]
pub struct OracleSuiteConfig {
    /// Nuclear-norm identity cases (random matrices up to 8×12).
    pub identity_cases: usize,
    /// Conjugate gradient vs dense-assembly cases (shapes up to 5×6×7).
    pub inner_cases: usize,
    /// Projected gradient vs exhaustive enumeration cases (∏nₖ ≤ 12).
    pub nnls_cases: usize,
    pub seed: u64,
}

impl Default for OracleSuiteConfig {
    fn default() -> Self {
        OracleSuiteConfig { identity_cases: 100, inner_cases: 50, nnls_cases: 30, seed: 0x0eac1e }
    }
}

/// Worst-case deviations of the iterative kernels from their oracles.
#[derive(Clone, Debug)]
pub struct OracleReport {
    pub identity_cases: usize,
    /// max |‖X‖_*² − ⟨Θ̄†X, X⟩| / ‖X‖_*² over the identity cases.
    pub identity_max_rel: f64,
    pub inner_cases: usize,
    /// max ‖z_cg − z_dense‖ / ‖z_dense‖ over the inner cases.
    pub inner_max_rel: f64,
    pub nnls_cases: usize,
    /// max |h(Z, S_pg) − h(Z, S_enum)| over the NNLS cases.
    pub nnls_max_abs: f64,
    /// Smallest entry any projected-gradient solve returned (contract: ≥ 0).
    pub nnls_min_entry: f64,
}

fn mixed_seed(base: u64, salt: u64) -> u64 {
    base.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let vals: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_values(rows, cols, vals).expect("dimensions match the value count")
}

/// Random inner-problem instance within the oracle guards: order-3 shape
/// with mode sizes up to (5, 6, 7), about half the entries observed (at
/// most `max_obs`), factor ranks up to 3, λₖ ∈ [0.1, 1.5], C ∈ [0.1, 10].
fn random_inner_instance(seed: u64, max_obs: usize) -> Result<ProblemData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = vec![
        2 + rng.random_range(0..4usize),
        2 + rng.random_range(0..5usize),
        2 + rng.random_range(0..6usize),
    ];
    let shape = Shape::new(dims.clone())?;
    let mut offsets: Vec<usize> = (0..shape.len()).filter(|_| rng.random::<f64>() < 0.5).collect();
    if offsets.is_empty() {
        offsets.push(rng.random_range(0..shape.len()));
    }
    offsets.truncate(max_obs);
    let omega = ObservationMask::from_offsets(shape.clone(), offsets)?;
    let y_vals: Vec<f64> =
        (0..omega.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y = SparseTensor::on_mask(&omega, y_vals)?;
    let ranks: Vec<usize> =
        dims.iter().map(|&n| 1 + rng.random_range(0..n.min(3))).collect();
    let point = ProductPoint::random(&dims, &ranks, mixed_seed(seed, 101))?;
    let lambda: Vec<f64> = (0..3).map(|_| 0.1 + 1.4 * rng.random::<f64>()).collect();
    let c = 0.1 + 9.9 * rng.random::<f64>();
    ProblemData::new(y, omega, lambda, c, point)
}

/// Small random instance inside the exhaustive-enumeration guard
/// (∏nₖ ≤ 12), mixing order-2 and order-3 shapes.
fn random_tiny_instance(seed: u64) -> Result<ProblemData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let menu: [&[usize]; 6] =
        [&[2, 2, 2], &[2, 3, 2], &[3, 2, 2], &[2, 2, 3], &[3, 4], &[2, 5]];
    let dims = menu[rng.random_range(0..menu.len())].to_vec();
    let shape = Shape::new(dims.clone())?;
    let mut offsets: Vec<usize> = (0..shape.len()).filter(|_| rng.random::<f64>() < 0.6).collect();
    if offsets.is_empty() {
        offsets.push(rng.random_range(0..shape.len()));
    }
    let omega = ObservationMask::from_offsets(shape.clone(), offsets)?;
    let y_vals: Vec<f64> =
        (0..omega.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y = SparseTensor::on_mask(&omega, y_vals)?;
    let ranks: Vec<usize> =
        dims.iter().map(|&n| 1 + rng.random_range(0..n.min(2))).collect();
    let point = ProductPoint::random(&dims, &ranks, mixed_seed(seed, 211))?;
    let lambda: Vec<f64> = dims.iter().map(|_| 0.2 + rng.random::<f64>()).collect();
    let c = 0.5 + 4.5 * rng.random::<f64>();
    ProblemData::new(y, omega, lambda, c, point)
}

/// Runs the three oracle suites and reports worst-case deviations; the
/// CLI prints them and the acceptance harness asserts them.
pub fn oracle_suite(cfg: &OracleSuiteConfig) -> Result<OracleReport> {
    let mut report = OracleReport {
        identity_cases: cfg.identity_cases,
        identity_max_rel: 0.0,
        inner_cases: cfg.inner_cases,
        inner_max_rel: 0.0,
        nnls_cases: cfg.nnls_cases,
        nnls_max_abs: 0.0,
        nnls_min_entry: 0.0,
    };

    for i in 0..cfg.identity_cases {
        let mut rng = ChaCha8Rng::seed_from_u64(mixed_seed(cfg.seed, i as u64));
        let rows = 1 + rng.random_range(0..8usize);
        let cols = 1 + rng.random_range(0..12usize);
        let x = random_matrix(&mut rng, rows, cols);
        let check = nuclear_norm_identity_check(&x)?;
        let rel = (check.lhs - check.rhs).abs() / check.lhs.max(1e-300);
        report.identity_max_rel = report.identity_max_rel.max(rel);
    }

    let tight = InnerConfig {
        cg_tol: 1e-12,
        cg_max_iters: 10_000,
        ..Default::default()
    };
    for i in 0..cfg.inner_cases {
        let p = random_inner_instance(mixed_seed(cfg.seed, 1_000 + i as u64), 200)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mixed_seed(cfg.seed, 2_000 + i as u64));
        let s_vals: Vec<f64> =
            (0..p.shape().len()).map(|_| rng.random::<f64>().max(0.0)).collect();
        let s = DenseTensor::from_values(p.shape().clone(), s_vals)?;
        let oracle = dense_inner_oracle(&p, &s)?;
        let (z_cg, _) = crate::inner::cg_solve_z(&p, &s, &SparseTensor::zeros_on(p.mask()), &tight)?;
        let denom = oracle.z.frob_norm().max(1e-300);
        let diff = z_cg
            .values()
            .iter()
            .zip(oracle.z.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        report.inner_max_rel = report.inner_max_rel.max(diff / denom);
    }

    let nnls_cfg = InnerConfig {
        nnls_tol: 1e-12,
        nnls_max_iters: 20_000,
        restrict_s_support: false,
        ..Default::default()
    };
    for i in 0..cfg.nnls_cases {
        let p = random_tiny_instance(mixed_seed(cfg.seed, 3_000 + i as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mixed_seed(cfg.seed, 4_000 + i as u64));
        let z_vals: Vec<f64> =
            (0..p.mask().len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z = SparseTensor::on_mask(p.mask(), z_vals)?;
        let s_oracle = nnls_exhaustive_oracle(&p, &z)?;
        let zeros = DenseTensor::zeros(p.shape().clone());
        let (s_pg, _) = crate::inner::nnls_solve_s(&p, &z, &zeros, &nnls_cfg)?;
        let h_pg =
            crate::inner::inner_objective(&p, &crate::inner::DualPair::new(z.clone(), s_pg.clone())?)?;
        let h_oracle =
            crate::inner::inner_objective(&p, &crate::inner::DualPair::new(z, s_oracle)?)?;
        report.nnls_max_abs = report.nnls_max_abs.max((h_pg - h_oracle).abs());
        let min = s_pg.values().iter().cloned().fold(f64::INFINITY, f64::min);
        report.nnls_min_entry = report.nnls_min_entry.min(min);
    }

    Ok(report)
}

/// Case counts, step size, and seed for [`gradient_check_suite`].
#[derive(Clone, Debug)]
pub struct GradientCheckConfig {
    pub cases: usize,
    pub directions_per_case: usize,
    /// Central-difference step along each unit tangent direction.
    pub step: f64,
    pub seed: u64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        GradientCheckConfig { cases: 10, directions_per_case: 5, step: 1e-5, seed: 0x9fad }
    }
}

/// Worst directional-derivative mismatch found by the suite.
#[derive(Clone, Debug)]
pub struct GradientCheckReport {
    pub cases: usize,
    pub directions_per_case: usize,
    /// max |⟨∇g, ξ⟩ − central difference| / max(|⟨∇g, ξ⟩|, 1e-9).
    pub max_rel_error: f64,
    /// Case index attaining the maximum, for reproduction.
    pub worst_case: usize,
}

/// Checks the envelope gradient of g(U) = max_{Z,S} h(Z, S; U) against
/// central differences along random unit tangent directions, on seeded
/// 4×3×2 instances with factor ranks (2, 2, 1). Each evaluation of g is
/// an independent tightly-converged inner solve, so the comparison
/// exercises the full chain the outer loop differentiates.
pub fn gradient_check_suite(cfg: &GradientCheckConfig) -> Result<GradientCheckReport> {
    if cfg.cases == 0 || cfg.directions_per_case == 0 {
        return Err(Error::invalid("gradient check needs at least one case and direction"));
    }
    if !(cfg.step > 0.0) || !cfg.step.is_finite() {
        return Err(Error::invalid("gradient check step must be positive and finite"));
    }
    let tight = InnerConfig {
        cg_tol: 1e-12,
        cg_max_iters: 10_000,
        nnls_tol: 1e-10,
        nnls_max_iters: 20_000,
        alternations: 400,
        alt_rel_tol: 1e-13,
        restrict_s_support: true,
    };
    let dims = [4usize, 3, 2];
    let ranks = [2usize, 2, 1];
    let cost_at = |p: &ProblemData, point: &crate::manifold::ProductPoint| -> Result<f64> {
        let q = p.with_point(point.clone())?;
        let zero = crate::inner::DualPair::zeros(&q);
        let (_, stats) = crate::inner::alternating_inner_solve(&q, &zero, &tight)?;
        Ok(stats.objective)
    };

    let mut report = GradientCheckReport {
        cases: cfg.cases,
        directions_per_case: cfg.directions_per_case,
        max_rel_error: 0.0,
        worst_case: 0,
    };
    for case in 0..cfg.cases {
        let seed = mixed_seed(cfg.seed, case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(dims.to_vec())?;
        let mut offsets: Vec<usize> =
            (0..shape.len()).filter(|_| rng.random::<f64>() < 0.6).collect();
        if offsets.is_empty() {
            offsets.push(rng.random_range(0..shape.len()));
        }
        let omega = ObservationMask::from_offsets(shape.clone(), offsets)?;
        let y_vals: Vec<f64> =
            (0..omega.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = SparseTensor::on_mask(&omega, y_vals)?;
        let lambda: Vec<f64> = (0..3).map(|_| 0.2 + 1.3 * rng.random::<f64>()).collect();
        let c = 0.5 + 4.5 * rng.random::<f64>();
        let point = crate::manifold::ProductPoint::random(&dims, &ranks, mixed_seed(seed, 7))?;
        let p = ProblemData::new(y, omega, lambda, c, point.clone())?;

        let zero = crate::inner::DualPair::zeros(&p);
        let (dual, _) = crate::inner::alternating_inner_solve(&p, &zero, &tight)?;
        let grad = crate::outer::riemannian_gradient(&p, &dual)?;

        for dir in 0..cfg.directions_per_case {
            let mut drng =
                ChaCha8Rng::seed_from_u64(mixed_seed(seed, 100 + dir as u64));
            let ambient: Vec<Matrix> = (0..3)
                .map(|k| random_matrix(&mut drng, dims[k], ranks[k]))
                .collect();
            let xi = point.project(&ambient)?;
            let norm = xi.norm();
            if norm <= 1e-12 {
                continue;
            }
            let xi = xi.scaled(1.0 / norm);
            let analytic = grad.inner(&xi)?;
            let plus = cost_at(&p, &point.retract(&xi, cfg.step)?)?;
            let minus = cost_at(&p, &point.retract(&xi, -cfg.step)?)?;
            let fd = (plus - minus) / (2.0 * cfg.step);
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-9);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_case = case;
            }
        }
    }
    Ok(report)
}
