//! Dense and sparse order-K tensors, matricization, and mode products.
//!
//! Layout conventions, fixed once here and relied on everywhere else:
//!
//! * Canonical dense order: lexicographic in the index tuple with the
//!   *last* index fastest, i.e. offset(i₁,…,i_K) = Σ i_m · stride_m with
//!   stride_K = 1 and stride_m = n_{m+1} ⋯ n_K.
//! * Mode-k unfolding maps entry (i₁,…,i_K) to row i_k and column
//!   j = Σ_{m≠k} i_m · J_m with J_m = ∏_{l<m, l≠k} n_l, so among the
//!   remaining modes the *first* varies fastest. For an order-2 tensor
//!   this makes unfold₁ the matrix itself and unfold₂ its transpose.
//! * Sparse tensors keep entries strictly ascending in the canonical
//!   order and keep explicit zeros, so the stored support is exact and
//!   two tensors over the same observation set align entry for entry.

use crate::error::{Error, Result};

// ─── shape ──────────────────────────────────────────────────────────────

/// Dimensions (n₁,…,n_K) of an order-K tensor, K ≥ 2, with cached strides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Shape {
    /// Builds a shape, rejecting orders below 2, zero dimensions, and
    /// element counts that overflow `usize`.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(format!(
                "tensor order must be at least 2, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::invalid(format!("zero dimension in shape {dims:?}")));
        }
        let mut len = 1usize;
        for &n in &dims {
            len = len
                .checked_mul(n)
                .ok_or_else(|| Error::invalid(format!("element count overflows for {dims:?}")))?;
        }
        let mut strides = vec![1usize; dims.len()];
        for m in (0..dims.len().saturating_sub(1)).rev() {
            strides[m] = strides[m + 1] * dims[m + 1];
        }
        Ok(Shape { dims, strides, len })
    }

    /// Number of modes K.
    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    /// Total element count ∏ n_m.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            Err(Error::ModeOutOfRange { mode, order: self.order() })
        } else {
            Ok(())
        }
    }

    /// Canonical linear offset of an index tuple, with bounds checking.
    pub fn offset_of(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.order() {
            return Err(Error::mismatch(format!(
                "index of length {} against order-{} shape",
                index.len(),
                self.order()
            )));
        }
        let mut off = 0usize;
        for (m, (&i, &n)) in index.iter().zip(&self.dims).enumerate() {
            if i >= n {
                return Err(Error::invalid(format!(
                    "index {i} out of bounds for dimension {n} in mode {}",
                    m + 1
                )));
            }
            off += i * self.strides[m];
        }
        Ok(off)
    }

    /// Writes the index tuple of a canonical offset into `out`.
    pub fn decode(&self, offset: usize, out: &mut [usize]) {
        debug_assert!(offset < self.len && out.len() == self.order());
        let mut rem = offset;
        for m in 0..self.order() {
            out[m] = rem / self.strides[m];
            rem %= self.strides[m];
        }
    }

    /// Index tuple of a canonical offset, allocating.
    pub fn index_of(&self, offset: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.order()];
        self.decode(offset, &mut out);
        out
    }

    /// Column count of the mode-k unfolding, ∏_{m≠k} n_m.
    pub fn unfold_cols(&self, mode: usize) -> usize {
        self.len / self.dims[mode]
    }

    /// Per-mode multipliers for the unfolding column map: entry m holds
    /// J_m = ∏_{l<m, l≠k} n_l for m ≠ k and 0 at m = k, so the column of
    /// an index tuple is the dot product with this vector.
    pub fn unfold_col_strides(&self, mode: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.order()];
        let mut j = 1usize;
        for m in 0..self.order() {
            if m == mode {
                continue;
            }
            out[m] = j;
            j *= self.dims[m];
        }
        out
    }

    /// Unfolding column of an index tuple for the given mode.
    pub fn unfold_col_of(&self, index: &[usize], mode: usize) -> usize {
        let mut col = 0usize;
        let mut j = 1usize;
        for m in 0..self.order() {
            if m == mode {
                continue;
            }
            col += index[m] * j;
            j *= self.dims[m];
        }
        col
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for n in &self.dims {
            if !first {
                write!(f, "x")?;
            }
            write!(f, "{n}")?;
            first = false;
        }
        Ok(())
    }
}

/// Advances `index` one step in canonical order (last mode fastest).
/// Returns false after the final tuple wraps back to all zeros.
pub(crate) fn next_index(dims: &[usize], index: &mut [usize]) -> bool {
    for m in (0..dims.len()).rev() {
        index[m] += 1;
        if index[m] < dims[m] {
            return true;
        }
        index[m] = 0;
    }
    false
}

// ─── matrix ─────────────────────────────────────────────────────────────

/// Dense row-major matrix of f64, the workhorse for factors and unfoldings.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    pub(crate) values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, values: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row-major values, checking length and finiteness.
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix construction".into()));
        }
        Ok(Matrix { rows, cols, values })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.values[i * self.cols + j] = v;
    }

    /// Borrow of row i as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// self · other.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::mismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (kk, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(kk);
                for (j, &b) in brow.iter().enumerate() {
                    orow[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// selfᵀ · other, without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::mismatch(format!(
                "t_matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for kk in 0..self.rows {
            let arow = self.row(kk);
            let brow = other.row(kk);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (j, &b) in brow.iter().enumerate() {
                    orow[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Frobenius inner product ⟨self, other⟩.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::mismatch(format!(
                "dot of {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// self += factor · other.
    pub fn add_scaled(&mut self, other: &Matrix, factor: f64) {
        debug_assert!(self.rows == other.rows && self.cols == other.cols);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::mismatch("matrix subtraction"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, values })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

// ─── dense tensor ───────────────────────────────────────────────────────

/// Order-K tensor stored densely in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    pub(crate) values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        DenseTensor { shape, values: vec![0.0; n] }
    }

    /// Builds a tensor from values in canonical order, checking length
    /// and finiteness.
    pub fn from_values(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} values for shape {shape} ({} elements)",
                values.len(),
                shape.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense tensor construction".into()));
        }
        Ok(DenseTensor { shape, values })
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.shape.offset_of(index)?])
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

// ─── sparse tensor ──────────────────────────────────────────────────────

/// Order-K tensor holding only the entries on its support, kept strictly
/// ascending in canonical order. Explicit zeros are legal and preserved,
/// so the support is a structural property rather than a numeric one.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    shape: Shape,
    offsets: Vec<usize>,
    pub(crate) values: Vec<f64>,
}

impl SparseTensor {
    /// Builds from (index tuple, value) pairs, which must arrive strictly
    /// ascending in canonical order with in-bounds indices and finite values.
    pub fn new(shape: Shape, entries: &[(Vec<usize>, f64)]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (index, v) in entries {
            let off = shape.offset_of(index)?;
            if let Some(&prev) = offsets.last() {
                if off <= prev {
                    return Err(Error::invalid(format!(
                        "sparse entries out of order or duplicated at index {index:?}"
                    )));
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("sparse tensor construction".into()));
            }
            offsets.push(off);
            values.push(*v);
        }
        Ok(SparseTensor { shape, offsets, values })
    }

    /// Builds from canonical offsets, which must be strictly ascending
    /// and in range.
    pub fn from_offsets(shape: Shape, offsets: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if offsets.len() != values.len() {
            return Err(Error::invalid("offset and value counts differ"));
        }
        for (t, &off) in offsets.iter().enumerate() {
            if off >= shape.len() {
                return Err(Error::invalid(format!("offset {off} out of range for {shape}")));
            }
            if t > 0 && off <= offsets[t - 1] {
                return Err(Error::invalid("offsets not strictly ascending"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse tensor construction".into()));
        }
        Ok(SparseTensor { shape, offsets, values })
    }

    /// All-zero tensor supported exactly on the given observation set.
    pub fn zeros_on(mask: &ObservationMask) -> Self {
        SparseTensor {
            shape: mask.shape.clone(),
            offsets: mask.offsets.clone(),
            values: vec![0.0; mask.len()],
        }
    }

    /// Tensor supported exactly on `mask` with the given aligned values.
    pub fn on_mask(mask: &ObservationMask, values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::invalid(format!(
                "{} values for a mask of {} entries",
                values.len(),
                mask.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse tensor construction".into()));
        }
        Ok(SparseTensor { shape: mask.shape.clone(), offsets: mask.offsets.clone(), values })
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index tuple of the t-th stored entry.
    pub fn index_of_entry(&self, t: usize) -> Vec<usize> {
        self.shape.index_of(self.offsets[t])
    }

    /// Whether the stored support equals the observation set exactly.
    pub fn support_matches(&self, mask: &ObservationMask) -> bool {
        self.shape == mask.shape && self.offsets == mask.offsets
    }

    /// Densifies, scattering stored entries into a zero background.
    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.shape.clone());
        for (&off, &v) in self.offsets.iter().zip(&self.values) {
            out.values[off] = v;
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// ─── observation mask ───────────────────────────────────────────────────

/// The observed index set Ω, stored as strictly ascending canonical offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask {
    shape: Shape,
    offsets: Vec<usize>,
}

impl ObservationMask {
    /// Builds from index tuples in any order; duplicates are rejected.
    pub fn new(shape: Shape, indices: &[Vec<usize>]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(indices.len());
        for index in indices {
            offsets.push(shape.offset_of(index)?);
        }
        offsets.sort_unstable();
        if offsets.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate index in observation mask"));
        }
        Ok(ObservationMask { shape, offsets })
    }

    /// Builds from strictly ascending canonical offsets.
    pub fn from_offsets(shape: Shape, offsets: Vec<usize>) -> Result<Self> {
        for (t, &off) in offsets.iter().enumerate() {
            if off >= shape.len() {
                return Err(Error::invalid(format!("offset {off} out of range for {shape}")));
            }
            if t > 0 && off <= offsets[t - 1] {
                return Err(Error::invalid("mask offsets not strictly ascending"));
            }
        }
        Ok(ObservationMask { shape, offsets })
    }

    /// Mask covering every entry of the shape.
    pub fn full(shape: Shape) -> Self {
        let offsets = (0..shape.len()).collect();
        ObservationMask { shape, offsets }
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Position of a canonical offset within the mask, if observed.
    pub fn position(&self, offset: usize) -> Option<usize> {
        self.offsets.binary_search(&offset).ok()
    }

    /// Index tuple of the t-th observed entry.
    pub fn index_of_entry(&self, t: usize) -> Vec<usize> {
        self.shape.index_of(self.offsets[t])
    }
}

// ─── views & generic ops ────────────────────────────────────────────────

/// Borrowed dense-or-sparse tensor, for ops that accept either.
#[derive(Clone, Copy)]
pub enum TensorView<'a> {
    Dense(&'a DenseTensor),
    Sparse(&'a SparseTensor),
}

impl<'a> From<&'a DenseTensor> for TensorView<'a> {
    fn from(t: &'a DenseTensor) -> Self {
        TensorView::Dense(t)
    }
}

impl<'a> From<&'a SparseTensor> for TensorView<'a> {
    fn from(t: &'a SparseTensor) -> Self {
        TensorView::Sparse(t)
    }
}

impl<'a> TensorView<'a> {
    pub fn shape(&self) -> &Shape {
        match self {
            TensorView::Dense(t) => t.shape(),
            TensorView::Sparse(t) => t.shape(),
        }
    }
}

/// Frobenius inner product ⟨a, b⟩ across any mix of representations.
pub fn inner_product<'a, 'b>(
    a: impl Into<TensorView<'a>>,
    b: impl Into<TensorView<'b>>,
) -> Result<f64> {
    let (a, b) = (a.into(), b.into());
    if a.shape() != b.shape() {
        return Err(Error::mismatch(format!(
            "inner product of {} with {}",
            a.shape(),
            b.shape()
        )));
    }
    let total = match (a, b) {
        (TensorView::Dense(x), TensorView::Dense(y)) => {
            x.values.iter().zip(&y.values).map(|(p, q)| p * q).sum()
        }
        (TensorView::Sparse(x), TensorView::Dense(y)) | (TensorView::Dense(y), TensorView::Sparse(x)) => {
            x.offsets.iter().zip(&x.values).map(|(&off, &v)| v * y.values[off]).sum()
        }
        (TensorView::Sparse(x), TensorView::Sparse(y)) => {
            // Two-pointer merge over the sorted supports.
            let mut total = 0.0;
            let (mut i, mut j) = (0usize, 0usize);
            while i < x.offsets.len() && j < y.offsets.len() {
                match x.offsets[i].cmp(&y.offsets[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        total += x.values[i] * y.values[j];
                        i += 1;
                        j += 1;
                    }
                }
            }
            total
        }
    };
    Ok(total)
}

/// Restriction of a tensor to the observation set. The output support
/// equals the mask exactly, with explicit zeros where the source has no
/// entry.
pub fn project_omega<'a>(t: impl Into<TensorView<'a>>, omega: &ObservationMask) -> Result<SparseTensor> {
    let t = t.into();
    if t.shape() != omega.shape() {
        return Err(Error::mismatch(format!(
            "projecting a {} tensor onto a {} mask",
            t.shape(),
            omega.shape()
        )));
    }
    let values = match t {
        TensorView::Dense(x) => omega.offsets.iter().map(|&off| x.values[off]).collect(),
        TensorView::Sparse(x) => {
            let mut values = vec![0.0; omega.len()];
            let mut i = 0usize;
            for (t_idx, &off) in omega.offsets.iter().enumerate() {
                while i < x.offsets.len() && x.offsets[i] < off {
                    i += 1;
                }
                if i < x.offsets.len() && x.offsets[i] == off {
                    values[t_idx] = x.values[i];
                    i += 1;
                }
            }
            values
        }
    };
    Ok(SparseTensor {
        shape: omega.shape.clone(),
        offsets: omega.offsets.clone(),
        values,
    })
}

// ─── matricization & mode products ──────────────────────────────────────

/// Mode-k unfolding of a dense tensor into an n_k × ∏_{m≠k} n_m matrix.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    let shape = t.shape();
    shape.check_mode(mode)?;
    let rows = shape.dim(mode);
    let cols = shape.unfold_cols(mode);
    let col_strides = shape.unfold_col_strides(mode);
    let mut out = Matrix::zeros(rows, cols);
    let mut index = vec![0usize; shape.order()];
    let mut off = 0usize;
    loop {
        let col: usize = index.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
        out.values[index[mode] * cols + col] = t.values[off];
        off += 1;
        if !next_index(shape.dims(), &mut index) {
            break;
        }
    }
    Ok(out)
}

/// Inverse of [`unfold`]: rebuilds the tensor of the given shape from its
/// mode-k unfolding.
pub fn fold(m: &Matrix, mode: usize, shape: &Shape) -> Result<DenseTensor> {
    shape.check_mode(mode)?;
    if m.rows() != shape.dim(mode) || m.cols() != shape.unfold_cols(mode) {
        return Err(Error::mismatch(format!(
            "folding a {}x{} matrix into {} along mode {}",
            m.rows(),
            m.cols(),
            shape,
            mode + 1
        )));
    }
    let cols = m.cols();
    let col_strides = shape.unfold_col_strides(mode);
    let mut out = DenseTensor::zeros(shape.clone());
    let mut index = vec![0usize; shape.order()];
    let mut off = 0usize;
    loop {
        let col: usize = index.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
        out.values[off] = m.values[index[mode] * cols + col];
        off += 1;
        if !next_index(shape.dims(), &mut index) {
            break;
        }
    }
    Ok(out)
}

/// Mode-k product T ×_k X for an m × n_k matrix X, contracting the k-th
/// mode: the result unfolds to X · unfold_k(T) and has n_k replaced by m.
pub fn mode_product(t: &DenseTensor, x: &Matrix, mode: usize) -> Result<DenseTensor> {
    let shape = t.shape();
    shape.check_mode(mode)?;
    if x.cols() != shape.dim(mode) {
        return Err(Error::mismatch(format!(
            "mode-{} product of {} tensor with {}x{} matrix",
            mode + 1,
            shape,
            x.rows(),
            x.cols()
        )));
    }
    let unfolded = unfold(t, mode)?;
    let product = x.matmul(&unfolded)?;
    let mut new_dims = shape.dims().to_vec();
    new_dims[mode] = x.rows();
    fold(&product, mode, &Shape::new(new_dims)?)
}

/// Ω-restricted symmetric mode product (Z ×_k U Uᵀ)_Ω for sparse Z.
///
/// Two passes: first accumulate M = Uᵀ Z_k over the columns Z actually
/// touches, then emit u_{i_k,:} · M_{:,col(ω)} for each observed ω. Runs
/// in O((nnz(z) + |Ω|) · (K + r + log nnz)) and never forms U Uᵀ.
pub fn restricted_sym_mode_product(
    z: &SparseTensor,
    u: &Matrix,
    mode: usize,
    omega: &ObservationMask,
) -> Result<SparseTensor> {
    let shape = z.shape();
    if shape != omega.shape() {
        return Err(Error::mismatch(format!(
            "restricted product of {} tensor against {} mask",
            shape,
            omega.shape()
        )));
    }
    shape.check_mode(mode)?;
    if u.rows() != shape.dim(mode) {
        return Err(Error::mismatch(format!(
            "factor is {}x{} but mode {} has dimension {}",
            u.rows(),
            u.cols(),
            mode + 1,
            shape.dim(mode)
        )));
    }
    let r = u.cols();
    let order = shape.order();
    let mut index = vec![0usize; order];

    // Pass 1: per-entry (row, column) of z, then M over the distinct columns.
    let mut zrows = Vec::with_capacity(z.nnz());
    let mut zcols = Vec::with_capacity(z.nnz());
    for &off in z.offsets() {
        shape.decode(off, &mut index);
        zrows.push(index[mode]);
        zcols.push(shape.unfold_col_of(&index, mode));
    }
    let mut distinct = zcols.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut m = vec![0.0f64; distinct.len() * r];
    for (t, &v) in z.values().iter().enumerate() {
        let ci = distinct.binary_search(&zcols[t]).expect("column was collected above");
        let urow = u.row(zrows[t]);
        let mrow = &mut m[ci * r..(ci + 1) * r];
        for (acc, &uu) in mrow.iter_mut().zip(urow) {
            *acc += v * uu;
        }
    }

    // Pass 2: gather per observed entry; columns z never touches give 0.
    let mut values = vec![0.0f64; omega.len()];
    for (t, &off) in omega.offsets().iter().enumerate() {
        shape.decode(off, &mut index);
        let col = shape.unfold_col_of(&index, mode);
        if let Ok(ci) = distinct.binary_search(&col) {
            let urow = u.row(index[mode]);
            let mrow = &m[ci * r..(ci + 1) * r];
            values[t] = urow.iter().zip(mrow).map(|(&a, &b)| a * b).sum();
        }
    }
    Ok(SparseTensor {
        shape: shape.clone(),
        offsets: omega.offsets().to_vec(),
        values,
    })
}

/// Ω-restricted symmetric mode product (T ×_k U Uᵀ)_Ω for dense T.
pub fn restricted_sym_mode_product_dense(
    t: &DenseTensor,
    u: &Matrix,
    mode: usize,
    omega: &ObservationMask,
) -> Result<SparseTensor> {
    let shape = t.shape();
    if shape != omega.shape() {
        return Err(Error::mismatch(format!(
            "restricted product of {} tensor against {} mask",
            shape,
            omega.shape()
        )));
    }
    shape.check_mode(mode)?;
    if u.rows() != shape.dim(mode) {
        return Err(Error::mismatch(format!(
            "factor is {}x{} but mode {} has dimension {}",
            u.rows(),
            u.cols(),
            mode + 1,
            shape.dim(mode)
        )));
    }
    let r = u.cols();
    let ncols = shape.unfold_cols(mode);
    let col_strides = shape.unfold_col_strides(mode);
    let mut m = vec![0.0f64; ncols * r];
    let mut index = vec![0usize; shape.order()];
    let mut off = 0usize;
    loop {
        let v = t.values[off];
        if v != 0.0 {
            let col: usize = index.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
            let urow = u.row(index[mode]);
            let mrow = &mut m[col * r..(col + 1) * r];
            for (acc, &uu) in mrow.iter_mut().zip(urow) {
                *acc += v * uu;
            }
        }
        off += 1;
        if !next_index(shape.dims(), &mut index) {
            break;
        }
    }
    let mut values = vec![0.0f64; omega.len()];
    for (t_idx, &o) in omega.offsets().iter().enumerate() {
        shape.decode(o, &mut index);
        let col: usize = index.iter().zip(&col_strides).map(|(&i, &s)| i * s).sum();
        let urow = u.row(index[mode]);
        let mrow = &m[col * r..(col + 1) * r];
        values[t_idx] = urow.iter().zip(mrow).map(|(&a, &b)| a * b).sum();
    }
    Ok(SparseTensor {
        shape: shape.clone(),
        offsets: omega.offsets().to_vec(),
        values,
    })
}
