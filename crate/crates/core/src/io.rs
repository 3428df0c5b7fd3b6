//! File formats: NNTC text tensors, observation masks, portable
//! graymap/pixmap frames, CSV iteration reports, and model files.
//!
//! The tensor format is line-oriented text:
//!
//! ```text
//! NNTC 1
//! dense | sparse
//! K n₁ … n_K
//! dense:  ∏nₖ whitespace-separated values in canonical (row-major) order
//! sparse: entry count, then one line per entry  i₁ … i_K value
//!         with 1-based indices in ascending canonical order
//! ```
//!
//! Values are serialized with Rust's shortest round-tripping decimal
//! formatting, so write → read reproduces binary64 payloads bit-exactly.
//! Parse errors carry the 1-based line number they occurred on. Every
//! writer in this module goes through a temp-file-then-rename so a
//! crashed run never leaves a half-written file behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inner::DualPair;
use crate::manifold::{ProductPoint, SpectrahedronPoint};
use crate::outer::{CompletionModel, TraceRow};
use crate::tensor::{DenseTensor, Matrix, ObservationMask, Shape, SparseTensor};

// ─── atomic writes ──────────────────────────────────────────────────────

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `bytes` to `path` atomically: a temp file in the same
/// directory is written first, then renamed over the target.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

// ─── tensor files ───────────────────────────────────────────────────────

/// A tensor read from or destined for an NNTC file, in whichever
/// density the file declares.
#[derive(Clone, Debug)]
pub enum TensorData {
    Dense(DenseTensor),
    Sparse(SparseTensor),
}

impl TensorData {
    #[inline]
    pub fn shape(&self) -> &Shape {
        match self {
            TensorData::Dense(t) => t.shape(),
            TensorData::Sparse(t) => t.shape(),
        }
    }

    #[inline]
    pub fn is_dense(&self) -> bool {
        matches!(self, TensorData::Dense(_))
    }

    /// Materializes the dense form; sparse entries land on a zero
    /// background.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        match self {
            TensorData::Dense(t) => Ok(t.clone()),
            TensorData::Sparse(t) => {
                let mut values = vec![0.0f64; t.shape().len()];
                for (&off, &v) in t.offsets().iter().zip(t.values()) {
                    values[off] = v;
                }
                DenseTensor::from_values(t.shape().clone(), values)
            }
        }
    }
}

impl From<DenseTensor> for TensorData {
    fn from(t: DenseTensor) -> Self {
        TensorData::Dense(t)
    }
}

impl From<SparseTensor> for TensorData {
    fn from(t: SparseTensor) -> Self {
        TensorData::Sparse(t)
    }
}

/// Line-by-line token cursor with 1-based line numbers for diagnostics.
struct Lines<'a> {
    lines: std::str::Lines<'a>,
    number: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { lines: text.lines(), number: 0 }
    }

    /// Next non-blank line and its number.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        loop {
            let line = self.lines.next()?;
            self.number += 1;
            if !line.trim().is_empty() {
                return Some((self.number, line));
            }
        }
    }

    fn expect_line(&mut self, want: &str) -> Result<(usize, &'a str)> {
        self.next_line()
            .ok_or_else(|| Error::parse(self.number + 1, format!("expected {want}, found end of file")))
    }
}

fn parse_count(token: &str, line: usize, what: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| Error::parse(line, format!("{what} must be a nonnegative integer, got {token:?}")))
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, got {token:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {token:?}")));
    }
    Ok(v)
}

/// Parses NNTC text into a tensor; errors carry 1-based line numbers.
pub fn parse_tensor(text: &str) -> Result<TensorData> {
    let mut lines = Lines::new(text);

    let (n1, magic) = lines.expect_line("the NNTC header")?;
    if magic.trim() != "NNTC 1" {
        return Err(Error::parse(n1, format!("bad header {:?}, expected \"NNTC 1\"", magic.trim())));
    }

    let (n2, density) = lines.expect_line("the density line")?;
    let dense = match density.trim() {
        "dense" => true,
        "sparse" => false,
        other => {
            return Err(Error::parse(n2, format!("density must be \"dense\" or \"sparse\", got {other:?}")))
        }
    };

    let (n3, dims_line) = lines.expect_line("the dimension line")?;
    let mut toks = dims_line.split_whitespace();
    let order = parse_count(
        toks.next().ok_or_else(|| Error::parse(n3, "empty dimension line"))?,
        n3,
        "tensor order",
    )?;
    let dims: Vec<usize> = toks
        .by_ref()
        .take(order)
        .map(|t| parse_count(t, n3, "dimension"))
        .collect::<Result<_>>()?;
    if dims.len() != order || toks.next().is_some() {
        return Err(Error::parse(
            n3,
            format!("dimension line must hold the order then exactly {order} dimensions"),
        ));
    }
    let shape = Shape::new(dims).map_err(|e| Error::parse(n3, e.to_string()))?;

    if dense {
        let mut values = Vec::with_capacity(shape.len());
        while values.len() < shape.len() {
            let (ln, line) = lines
                .expect_line(&format!("{} more dense values", shape.len() - values.len()))?;
            for tok in line.split_whitespace() {
                if values.len() == shape.len() {
                    return Err(Error::parse(
                        ln,
                        format!("more than {} values for the declared shape", shape.len()),
                    ));
                }
                values.push(parse_value(tok, ln)?);
            }
        }
        if let Some((ln, _)) = lines.next_line() {
            return Err(Error::parse(
                ln,
                format!("trailing content after {} dense values", shape.len()),
            ));
        }
        Ok(TensorData::Dense(DenseTensor::from_values(shape, values)?))
    } else {
        let (nc, count_line) = lines.expect_line("the sparse entry count")?;
        let count = parse_count(count_line.trim(), nc, "entry count")?;
        if count > shape.len() {
            return Err(Error::parse(
                nc,
                format!("{count} entries exceed the {} cells of the shape", shape.len()),
            ));
        }
        let mut offsets = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        let mut index = vec![0usize; shape.order()];
        for _ in 0..count {
            let (ln, line) = lines.expect_line("another sparse entry")?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != shape.order() + 1 {
                return Err(Error::parse(
                    ln,
                    format!(
                        "sparse entry needs {} indices and a value, got {} tokens",
                        shape.order(),
                        toks.len()
                    ),
                ));
            }
            for (k, tok) in toks[..shape.order()].iter().enumerate() {
                let i = parse_count(tok, ln, "index")?;
                if i == 0 || i > shape.dim(k) {
                    return Err(Error::parse(
                        ln,
                        format!(
                            "index {i} out of bounds for mode {} of dimension {}",
                            k + 1,
                            shape.dim(k)
                        ),
                    ));
                }
                index[k] = i - 1;
            }
            let off = shape.offset_of(&index).map_err(|e| Error::parse(ln, e.to_string()))?;
            if let Some(&prev) = offsets.last() {
                if off == prev {
                    return Err(Error::parse(ln, "duplicate sparse entry"));
                }
                if off < prev {
                    return Err(Error::parse(ln, "sparse entries must be in ascending order"));
                }
            }
            offsets.push(off);
            values.push(parse_value(toks[shape.order()], ln)?);
        }
        if let Some((ln, _)) = lines.next_line() {
            return Err(Error::parse(ln, format!("trailing content after {count} sparse entries")));
        }
        Ok(TensorData::Sparse(SparseTensor::from_offsets(shape, offsets, values)?))
    }
}

/// Reads an NNTC tensor file.
pub fn read_tensor(path: &Path) -> Result<TensorData> {
    parse_tensor(&fs::read_to_string(path)?)
}

/// Renders a tensor in NNTC text form.
pub fn format_tensor(t: &TensorData) -> Result<String> {
    let shape = t.shape();
    let mut out = String::new();
    out.push_str("NNTC 1\n");
    out.push_str(if t.is_dense() { "dense\n" } else { "sparse\n" });
    out.push_str(&shape.order().to_string());
    for k in 0..shape.order() {
        out.push(' ');
        out.push_str(&shape.dim(k).to_string());
    }
    out.push('\n');
    match t {
        TensorData::Dense(d) => {
            if !d.is_finite() {
                return Err(Error::NonFinite("tensor file payload".to_string()));
            }
            for chunk in d.values().chunks(8) {
                let mut first = true;
                for v in chunk {
                    if !first {
                        out.push(' ');
                    }
                    out.push_str(&format!("{v}"));
                    first = false;
                }
                out.push('\n');
            }
        }
        TensorData::Sparse(s) => {
            if s.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("tensor file payload".to_string()));
            }
            out.push_str(&s.nnz().to_string());
            out.push('\n');
            let mut index = vec![0usize; shape.order()];
            for (&off, v) in s.offsets().iter().zip(s.values()) {
                shape.decode(off, &mut index);
                for i in &index {
                    out.push_str(&(i + 1).to_string());
                    out.push(' ');
                }
                out.push_str(&format!("{v}"));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Writes a tensor to an NNTC file, atomically.
pub fn write_tensor(t: &TensorData, path: &Path) -> Result<()> {
    atomic_write(path, format_tensor(t)?.as_bytes())
}

// ─── mask files ─────────────────────────────────────────────────────────

/// Saves an observation mask as a sparse NNTC file holding a 1 at every
/// observed index; readers use only the support.
pub fn write_mask(mask: &ObservationMask, path: &Path) -> Result<()> {
    let ones = vec![1.0f64; mask.len()];
    let t = SparseTensor::on_mask(mask, ones)?;
    write_tensor(&TensorData::Sparse(t), path)
}

/// Reads an observation mask from a sparse NNTC file (the support is the
/// mask; values are ignored).
pub fn read_mask(path: &Path) -> Result<ObservationMask> {
    match read_tensor(path)? {
        TensorData::Sparse(t) => {
            ObservationMask::from_offsets(t.shape().clone(), t.offsets().to_vec())
        }
        TensorData::Dense(_) => Err(Error::invalid(format!(
            "mask file {} must be sparse (a 1 at each observed index)",
            path.display()
        ))),
    }
}

// ─── portable graymap / pixmap ──────────────────────────────────────────

struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    /// Row-major samples scaled to [0, 1]; channel fastest for color.
    samples: Vec<f64>,
}

/// Pulls the next header token, skipping whitespace and '#' comments.
fn netpbm_token<'a>(bytes: &'a [u8], pos: &mut usize, label: &str) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::invalid(format!("{label}: truncated header")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::invalid(format!("{label}: header is not ASCII")))
}

fn parse_netpbm(bytes: &[u8], label: &str) -> Result<Frame> {
    let mut pos = 0usize;
    let magic = netpbm_token(bytes, &mut pos, label)?;
    let (channels, ascii) = match magic {
        "P2" => (1usize, true),
        "P5" => (1, false),
        "P3" => (3, true),
        "P6" => (3, false),
        other => {
            return Err(Error::invalid(format!(
                "{label}: unsupported magic {other:?} (want P2/P3/P5/P6)"
            )))
        }
    };
    let width: usize = netpbm_token(bytes, &mut pos, label)?
        .parse()
        .map_err(|_| Error::invalid(format!("{label}: bad width")))?;
    let height: usize = netpbm_token(bytes, &mut pos, label)?
        .parse()
        .map_err(|_| Error::invalid(format!("{label}: bad height")))?;
    let maxval: usize = netpbm_token(bytes, &mut pos, label)?
        .parse()
        .map_err(|_| Error::invalid(format!("{label}: bad maxval")))?;
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("{label}: degenerate {width}x{height} image")));
    }
    if maxval == 0 || maxval > 65_535 {
        return Err(Error::invalid(format!("{label}: maxval {maxval} outside 1..=65535")));
    }
    let count = width * height * channels;
    let scale = 1.0 / maxval as f64;
    let mut samples = Vec::with_capacity(count);
    if ascii {
        for _ in 0..count {
            let v: usize = netpbm_token(bytes, &mut pos, label)?
                .parse()
                .map_err(|_| Error::invalid(format!("{label}: bad sample value")))?;
            if v > maxval {
                return Err(Error::invalid(format!("{label}: sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v as f64 * scale);
        }
    } else {
        // Exactly one whitespace byte separates the maxval from the raster.
        pos += 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if bytes.len() < pos + need {
            return Err(Error::invalid(format!(
                "{label}: raster truncated ({} bytes, need {need})",
                bytes.len().saturating_sub(pos)
            )));
        }
        for i in 0..count {
            let v = if wide {
                let hi = bytes[pos + 2 * i] as usize;
                let lo = bytes[pos + 2 * i + 1] as usize;
                (hi << 8) | lo
            } else {
                bytes[pos + i] as usize
            };
            if v > maxval {
                return Err(Error::invalid(format!("{label}: sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v as f64 * scale);
        }
    }
    Ok(Frame { width, height, channels, samples })
}

/// Reads an ordered stack of graymap/pixmap frames into an order-3
/// tensor, scaled to [0, 1]. A graymap stack becomes height×width×frames;
/// pixmap frames contribute their three channels in order, so F color
/// frames become height×width×3F (a single color image is height×width×3).
pub fn import_image_stack(paths: &[PathBuf]) -> Result<DenseTensor> {
    if paths.is_empty() {
        return Err(Error::invalid("image stack needs at least one frame"));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = fs::read(p)?;
        frames.push(parse_netpbm(&bytes, &p.display().to_string())?);
    }
    let (w, h, ch) = (frames[0].width, frames[0].height, frames[0].channels);
    for (f, p) in frames.iter().zip(paths) {
        if f.width != w || f.height != h || f.channels != ch {
            return Err(Error::mismatch(format!(
                "frame {} is {}x{}x{}, expected {}x{}x{}",
                p.display(),
                f.height,
                f.width,
                f.channels,
                h,
                w,
                ch
            )));
        }
    }
    let depth = frames.len() * ch;
    let shape = Shape::new(vec![h, w, depth])?;
    let mut values = vec![0.0f64; shape.len()];
    for (f, frame) in frames.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                for c in 0..ch {
                    let slice = f * ch + c;
                    values[(i * w + j) * depth + slice] =
                        frame.samples[(i * w + j) * ch + c];
                }
            }
        }
    }
    DenseTensor::from_values(shape, values)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn order3(t: &DenseTensor, what: &str) -> Result<()> {
    if t.shape().order() != 3 {
        return Err(Error::invalid(format!(
            "{what} needs an order-3 tensor, got order {}",
            t.shape().order()
        )));
    }
    Ok(())
}

/// Binary graymap bytes for one slice of an order-3 tensor along `mode`.
fn pgm_slice(t: &DenseTensor, mode: usize, slice: usize) -> Result<Vec<u8>> {
    order3(t, "graymap export")?;
    let dims = t.shape().dims();
    let (a, b) = match mode {
        0 => (1usize, 2usize),
        1 => (0, 2),
        2 => (0, 1),
        m => return Err(Error::ModeOutOfRange { mode: m, order: 3 }),
    };
    let (rows, cols) = (dims[a], dims[b]);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    let mut index = [0usize; 3];
    index[mode] = slice;
    for i in 0..rows {
        for j in 0..cols {
            index[a] = i;
            index[b] = j;
            out.push(quantize(t.get(&index)?));
        }
    }
    Ok(out)
}

/// Writes one binary graymap per slice along `mode` into `out_dir`
/// (created if missing), named `slice_000.pgm`, `slice_001.pgm`, …
/// Values are clamped to [0, 1] and quantized to maxval 255. Returns the
/// written paths in slice order.
pub fn export_slices(t: &DenseTensor, mode: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    order3(t, "slice export")?;
    if mode >= 3 {
        return Err(Error::ModeOutOfRange { mode, order: 3 });
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for s in 0..t.shape().dim(mode) {
        let path = out_dir.join(format!("slice_{s:03}.pgm"));
        atomic_write(&path, &pgm_slice(t, mode, s)?)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the per-mode components of a model the same way
/// [`export_slices`] writes the full reconstruction: component k's
/// slices land at `component_{k+1}_slice_{s:03}.pgm`. Returns the
/// written paths, components outermost.
pub fn export_component_slices(
    model: &CompletionModel,
    mode: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if mode >= model.shape().order() {
        return Err(Error::ModeOutOfRange { mode, order: model.shape().order() });
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for k in 0..model.shape().order() {
        let comp = model.reconstruct_component(k)?;
        order3(&comp, "component slice export")?;
        for s in 0..comp.shape().dim(mode) {
            let path = out_dir.join(format!("component_{}_slice_{s:03}.pgm", k + 1));
            atomic_write(&path, &pgm_slice(&comp, mode, s)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes a height×width×3 tensor as one binary pixmap, clamped to
/// [0, 1] and quantized to maxval 255.
pub fn export_ppm(t: &DenseTensor, path: &Path) -> Result<()> {
    order3(t, "pixmap export")?;
    let dims = t.shape().dims();
    if dims[2] != 3 {
        return Err(Error::invalid(format!(
            "pixmap export needs 3 channel slices, got {}",
            dims[2]
        )));
    }
    let (h, w) = (dims[0], dims[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for v in t.values() {
        out.push(quantize(*v));
    }
    atomic_write(path, &out)
}

// ─── CSV reports ────────────────────────────────────────────────────────

/// Column order of the iteration report.
pub const REPORT_HEADER: &str = "iteration,cost,grad_norm,step,cg_iters,nnls_iters,elapsed_s,rmse";

/// Renders the trace as CSV: [`REPORT_HEADER`] then one row per
/// iteration, the `rmse` field empty when no truth was attached.
pub fn format_report(trace: &[TraceRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in trace {
        let rmse = row.rmse.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.iteration,
            row.cost,
            row.grad_norm,
            row.step,
            row.cg_iterations,
            row.nnls_iterations,
            row.elapsed_s,
            rmse
        ));
    }
    out
}

/// Writes the CSV iteration report, atomically.
pub fn write_report(trace: &[TraceRow], path: &Path) -> Result<()> {
    atomic_write(path, format_report(trace).as_bytes())
}

// ─── model files ────────────────────────────────────────────────────────

/// Renders a completion model as line-oriented text: header, shape,
/// ranks, weights, C, the factor matrices, then the sparse dual pair
/// (S keeps only its nonzero entries).
pub fn format_model(model: &CompletionModel) -> String {
    let shape = model.shape();
    let mut out = String::from("NNTCM 1\n");
    out.push_str(&shape.order().to_string());
    for k in 0..shape.order() {
        out.push(' ');
        out.push_str(&shape.dim(k).to_string());
    }
    out.push('\n');
    let ranks = model.ranks();
    out.push_str(
        &ranks.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "),
    );
    out.push('\n');
    out.push_str(
        &model.lambda().iter().map(|l| format!("{l}")).collect::<Vec<_>>().join(" "),
    );
    out.push('\n');
    out.push_str(&format!("{}\n", model.cost_parameter()));
    for k in 0..shape.order() {
        let u = model.point().factor(k).factor();
        out.push_str(&format!("factor {} {}\n", u.rows(), u.cols()));
        for i in 0..u.rows() {
            let row: Vec<String> = u.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    let z = model.dual().z();
    out.push_str(&format!("z {}\n", z.nnz()));
    let mut index = vec![0usize; shape.order()];
    for (&off, v) in z.offsets().iter().zip(z.values()) {
        shape.decode(off, &mut index);
        for i in &index {
            out.push_str(&(i + 1).to_string());
            out.push(' ');
        }
        out.push_str(&format!("{v}\n"));
    }
    let s = model.dual().s();
    let nonzero: Vec<(usize, f64)> = s
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(off, v)| (off, *v))
        .collect();
    out.push_str(&format!("s {}\n", nonzero.len()));
    for (off, v) in nonzero {
        shape.decode(off, &mut index);
        for i in &index {
            out.push_str(&(i + 1).to_string());
            out.push(' ');
        }
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Writes a model file, atomically.
pub fn write_model(model: &CompletionModel, path: &Path) -> Result<()> {
    atomic_write(path, format_model(model).as_bytes())
}

fn parse_indexed_entries(
    lines: &mut Lines<'_>,
    shape: &Shape,
    count: usize,
    what: &str,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut offsets = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    let mut index = vec![0usize; shape.order()];
    for _ in 0..count {
        let (ln, line) = lines.expect_line(what)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != shape.order() + 1 {
            return Err(Error::parse(
                ln,
                format!("{what} needs {} indices and a value", shape.order()),
            ));
        }
        for (k, tok) in toks[..shape.order()].iter().enumerate() {
            let i = parse_count(tok, ln, "index")?;
            if i == 0 || i > shape.dim(k) {
                return Err(Error::parse(ln, format!("index {i} out of bounds for mode {}", k + 1)));
            }
            index[k] = i - 1;
        }
        let off = shape.offset_of(&index).map_err(|e| Error::parse(ln, e.to_string()))?;
        if offsets.last().is_some_and(|&prev| off <= prev) {
            return Err(Error::parse(ln, format!("{what} entries must be strictly ascending")));
        }
        offsets.push(off);
        values.push(parse_value(toks[shape.order()], ln)?);
    }
    Ok((offsets, values))
}

/// Parses a model file produced by [`format_model`].
pub fn parse_model(text: &str) -> Result<CompletionModel> {
    let mut lines = Lines::new(text);
    let (n1, magic) = lines.expect_line("the NNTCM header")?;
    if magic.trim() != "NNTCM 1" {
        return Err(Error::parse(n1, format!("bad header {:?}, expected \"NNTCM 1\"", magic.trim())));
    }

    let (n2, dims_line) = lines.expect_line("the dimension line")?;
    let mut toks = dims_line.split_whitespace();
    let order = parse_count(
        toks.next().ok_or_else(|| Error::parse(n2, "empty dimension line"))?,
        n2,
        "tensor order",
    )?;
    let dims: Vec<usize> = toks
        .by_ref()
        .take(order)
        .map(|t| parse_count(t, n2, "dimension"))
        .collect::<Result<_>>()?;
    if dims.len() != order || toks.next().is_some() {
        return Err(Error::parse(n2, "dimension line must hold the order then the dimensions"));
    }
    let shape = Shape::new(dims).map_err(|e| Error::parse(n2, e.to_string()))?;

    let (n3, ranks_line) = lines.expect_line("the rank line")?;
    let ranks: Vec<usize> = ranks_line
        .split_whitespace()
        .map(|t| parse_count(t, n3, "rank"))
        .collect::<Result<_>>()?;
    if ranks.len() != order {
        return Err(Error::parse(n3, format!("expected {order} ranks")));
    }

    let (n4, lambda_line) = lines.expect_line("the weight line")?;
    let lambda: Vec<f64> = lambda_line
        .split_whitespace()
        .map(|t| parse_value(t, n4))
        .collect::<Result<_>>()?;
    if lambda.len() != order {
        return Err(Error::parse(n4, format!("expected {order} weights")));
    }

    let (n5, c_line) = lines.expect_line("the cost parameter")?;
    let c = parse_value(c_line.trim(), n5)?;

    let mut factors = Vec::with_capacity(order);
    for k in 0..order {
        let (ln, header) = lines.expect_line("a factor header")?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "factor" {
            return Err(Error::parse(ln, "expected \"factor rows cols\""));
        }
        let rows = parse_count(toks[1], ln, "factor rows")?;
        let cols = parse_count(toks[2], ln, "factor cols")?;
        if rows != shape.dim(k) || cols != ranks[k] {
            return Err(Error::parse(
                ln,
                format!("factor {} must be {}x{}", k + 1, shape.dim(k), ranks[k]),
            ));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rline, row) = lines.expect_line("a factor row")?;
            let toks: Vec<&str> = row.split_whitespace().collect();
            if toks.len() != cols {
                return Err(Error::parse(rline, format!("factor row needs {cols} values")));
            }
            for tok in toks {
                values.push(parse_value(tok, rline)?);
            }
        }
        let u = Matrix::from_values(rows, cols, values)
            .map_err(|e| Error::parse(lines.number, e.to_string()))?;
        factors.push(SpectrahedronPoint::new(u).map_err(|e| Error::parse(lines.number, e.to_string()))?);
    }
    let point = ProductPoint::new(factors).map_err(|e| Error::parse(lines.number, e.to_string()))?;

    let (zn, z_header) = lines.expect_line("the z header")?;
    let toks: Vec<&str> = z_header.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != "z" {
        return Err(Error::parse(zn, "expected \"z count\""));
    }
    let z_count = parse_count(toks[1], zn, "z entry count")?;
    let (z_offsets, z_values) = parse_indexed_entries(&mut lines, &shape, z_count, "dual z entry")?;
    let z = SparseTensor::from_offsets(shape.clone(), z_offsets, z_values)
        .map_err(|e| Error::parse(lines.number, e.to_string()))?;

    let (sn, s_header) = lines.expect_line("the s header")?;
    let toks: Vec<&str> = s_header.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != "s" {
        return Err(Error::parse(sn, "expected \"s count\""));
    }
    let s_count = parse_count(toks[1], sn, "s entry count")?;
    let (s_offsets, s_values) = parse_indexed_entries(&mut lines, &shape, s_count, "dual s entry")?;
    let mut s_dense = vec![0.0f64; shape.len()];
    for (off, v) in s_offsets.into_iter().zip(s_values) {
        s_dense[off] = v;
    }
    let s = DenseTensor::from_values(shape.clone(), s_dense)
        .map_err(|e| Error::parse(lines.number, e.to_string()))?;

    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(ln, "trailing content after the dual pair"));
    }

    let dual = DualPair::new(z, s).map_err(|e| Error::parse(lines.number, e.to_string()))?;
    CompletionModel::new(point, dual, lambda, c).map_err(|e| Error::parse(lines.number, e.to_string()))
}

/// Reads a model file.
pub fn read_model(path: &Path) -> Result<CompletionModel> {
    parse_model(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outer::{solve, SolverConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("nntc-io-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dense_round_trip_is_bit_exact() {
        let shape = Shape::new(vec![2, 3, 2]).unwrap();
        let values: Vec<f64> = (0..12).map(|i| (i as f64 + 0.1) / 3.0).collect();
        let t = DenseTensor::from_values(shape, values).unwrap();
        let text = format_tensor(&TensorData::Dense(t.clone())).unwrap();
        match parse_tensor(&text).unwrap() {
            TensorData::Dense(back) => {
                assert_eq!(back.shape(), t.shape());
                for (a, b) in back.values().iter().zip(t.values()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            TensorData::Sparse(_) => panic!("density flag lost"),
        }
    }

    #[test]
    fn hand_written_dense_fixture_parses() {
        let text = "NNTC 1\ndense\n3 2 2 2\n1 2 3 4\n5 6 7 8\n";
        match parse_tensor(text).unwrap() {
            TensorData::Dense(t) => {
                assert_eq!(t.shape().dims(), &[2, 2, 2]);
                assert_eq!(t.values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
            }
            TensorData::Sparse(_) => panic!("wrong density"),
        }
    }

    #[test]
    fn sparse_round_trip_is_bit_exact() {
        let shape = Shape::new(vec![3, 4]).unwrap();
        let t = SparseTensor::from_offsets(shape, vec![0, 5, 11], vec![0.25, -1.5, 1.0 / 3.0])
            .unwrap();
        let text = format_tensor(&TensorData::Sparse(t.clone())).unwrap();
        match parse_tensor(&text).unwrap() {
            TensorData::Sparse(back) => {
                assert_eq!(back.offsets(), t.offsets());
                for (a, b) in back.values().iter().zip(t.values()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            TensorData::Dense(_) => panic!("density flag lost"),
        }
    }

    #[test]
    fn malformed_files_are_rejected_with_line_numbers() {
        let cases: &[(&str, usize)] = &[
            ("NNTC 2\ndense\n2 2 2\n1 2 3 4\n", 1),
            ("NNTC 1\nplaid\n2 2 2\n1 2 3 4\n", 2),
            ("NNTC 1\ndense\n2 2\n1 2 3 4\n", 3),
            ("NNTC 1\ndense\n2 2 2\n1 2 3\n", 5),
            ("NNTC 1\ndense\n2 2 2\n1 2 3 4 5\n", 4),
            ("NNTC 1\ndense\n2 2 2\n1 2 nan 4\n", 4),
            ("NNTC 1\nsparse\n2 2 2\n2\n1 1 5\n1 1 6\n", 6),
            ("NNTC 1\nsparse\n2 2 2\n2\n2 1 5\n1 1 6\n", 6),
            ("NNTC 1\nsparse\n2 2 2\n1\n3 1 5\n", 5),
            ("NNTC 1\nsparse\n2 2 2\n1\n0 1 5\n", 5),
            ("NNTC 1\nsparse\n2 2 2\n1\n1 1\n", 5),
        ];
        for (text, want_line) in cases {
            match parse_tensor(text) {
                Err(Error::Parse { line, .. }) => {
                    assert_eq!(line, *want_line, "wrong line for fixture {text:?}")
                }
                other => panic!("fixture {text:?} should fail to parse, got {other:?}"),
            }
        }
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tmp_dir("tensor");
        let path = dir.join("t.nntc");
        let shape = Shape::new(vec![2, 2]).unwrap();
        let t = DenseTensor::from_values(shape, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        write_tensor(&TensorData::Dense(t.clone()), &path).unwrap();
        let back = read_tensor(&path).unwrap().to_dense().unwrap();
        assert_eq!(back.values(), t.values());
        assert!(!temp_sibling(&path).exists(), "temp file should be renamed away");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mask_round_trip_preserves_support() {
        let dir = tmp_dir("mask");
        let path = dir.join("omega.nntc");
        let shape = Shape::new(vec![4, 3]).unwrap();
        let mask = ObservationMask::from_offsets(shape, vec![0, 3, 7, 11]).unwrap();
        write_mask(&mask, &path).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back.offsets(), mask.offsets());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn non_finite_values_are_not_written() {
        let shape = Shape::new(vec![2, 2]).unwrap();
        let t = DenseTensor::from_values(shape, vec![1.0, f64::NAN, 0.0, 0.0]);
        // DenseTensor accepts the values; the writer must refuse them.
        if let Ok(t) = t {
            assert!(format_tensor(&TensorData::Dense(t)).is_err());
        }
    }

    #[test]
    fn netpbm_ascii_and_binary_agree() {
        let ascii = b"P2\n# comment\n3 2\n255\n0 128 255\n64 32 16\n".to_vec();
        let mut binary = b"P5\n3 2\n255\n".to_vec();
        binary.extend_from_slice(&[0, 128, 255, 64, 32, 16]);
        let a = parse_netpbm(&ascii, "ascii").unwrap();
        let b = parse_netpbm(&binary, "binary").unwrap();
        assert_eq!(a.width, 3);
        assert_eq!(a.height, 2);
        assert_eq!(a.samples, b.samples);
        assert!((a.samples[1] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn sixteen_bit_graymaps_scale_by_their_maxval() {
        let mut wide = b"P5\n2 1\n65535\n".to_vec();
        wide.extend_from_slice(&[0xff, 0xff, 0x00, 0x01]);
        let f = parse_netpbm(&wide, "wide").unwrap();
        assert!((f.samples[0] - 1.0).abs() < 1e-12);
        assert!((f.samples[1] - 1.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn image_stack_round_trips_within_quantization() {
        let dir = tmp_dir("stack");
        let shape = Shape::new(vec![4, 5, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let t = DenseTensor::from_values(shape, values).unwrap();
        let paths = export_slices(&t, 2, &dir).unwrap();
        assert_eq!(paths.len(), 3);
        let back = import_image_stack(&paths).unwrap();
        assert_eq!(back.shape().dims(), t.shape().dims());
        for (a, b) in back.values().iter().zip(t.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12, "{a} vs {b}");
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn color_pixmap_import_matches_export() {
        let dir = tmp_dir("ppm");
        let path = dir.join("img.ppm");
        let shape = Shape::new(vec![2, 2, 3]).unwrap();
        let values: Vec<f64> =
            vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1, 0.9, 0.3, 0.6, 0.2, 0.8, 0.4];
        let t = DenseTensor::from_values(shape, values).unwrap();
        export_ppm(&t, &path).unwrap();
        let back = import_image_stack(&[path]).unwrap();
        assert_eq!(back.shape().dims(), &[2, 2, 3]);
        for (a, b) in back.values().iter().zip(t.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn clamping_handles_out_of_range_values() {
        let shape = Shape::new(vec![1, 2, 1]).unwrap();
        let t = DenseTensor::from_values(shape, vec![-0.5, 1.5]).unwrap();
        let bytes = pgm_slice(&t, 2, 0).unwrap();
        let raster = &bytes[bytes.len() - 2..];
        assert_eq!(raster, &[0u8, 255u8]);
    }

    #[test]
    fn report_has_fixed_header_and_one_row_per_iteration() {
        let trace = vec![
            TraceRow {
                iteration: 0,
                cost: 2.5,
                grad_norm: 1.25,
                step: 0.0,
                cg_iterations: 3,
                nnls_iterations: 4,
                elapsed_s: 0.5,
                rmse: None,
            },
            TraceRow {
                iteration: 1,
                cost: 2.0,
                grad_norm: 1.0,
                step: 0.5,
                cg_iterations: 5,
                nnls_iterations: 6,
                elapsed_s: 1.0,
                rmse: Some(0.125),
            },
        ];
        let text = format_report(&trace);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        assert_eq!(lines.next().unwrap(), "0,2.5,1.25,0,3,4,0.5,");
        assert_eq!(lines.next().unwrap(), "1,2,1,0.5,5,6,1,0.125");
        assert!(lines.next().is_none());
    }

    #[test]
    fn model_round_trip_reproduces_the_reconstruction() {
        let truth = crate::eval::synth_nonneg_lowrank(&crate::eval::SyntheticSpec {
            dims: vec![5, 4, 3],
            core_rank: vec![2, 2, 2],
            seed: 3,
            noise_sigma: 0.0,
        })
        .unwrap();
        let omega = crate::eval::sample_mask(truth.shape(), 0.6, 4).unwrap();
        let y = crate::tensor::project_omega(&truth, &omega).unwrap();
        let cfg = SolverConfig {
            ranks: Some(vec![2, 2, 2]),
            max_outer_iters: 10,
            seed: 5,
            ..Default::default()
        };
        let out = solve(y, omega, cfg).unwrap();
        let dir = tmp_dir("model");
        let path = dir.join("model.nntcm");
        write_model(&out.model, &path).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back.lambda(), out.model.lambda());
        assert_eq!(back.cost_parameter(), out.model.cost_parameter());
        let w0 = out.model.reconstruct().unwrap();
        let w1 = back.reconstruct().unwrap();
        for (a, b) in w0.values().iter().zip(w1.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn model_parser_rejects_corrupted_sections() {
        let text = "NNTCM 1\n2 2 2\n1 1\n0.5 0.5\nnot-a-number\n";
        assert!(matches!(parse_model(text), Err(Error::Parse { line: 5, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn randomized_round_trips_are_bit_exact(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let order = 2 + (seed % 2) as usize;
            let dims: Vec<usize> = (0..order).map(|_| 1 + rng.random_range(0..4usize)).collect();
            let shape = Shape::new(dims).unwrap();
            let n = shape.len();
            let data = if rng.random::<bool>() {
                let values: Vec<f64> = (0..n)
                    .map(|_| {
                        let base: f64 = rng.random::<f64>() * 2.0 - 1.0;
                        let scale = 10f64.powi(rng.random_range(-300..300));
                        base * scale
                    })
                    .collect();
                TensorData::Dense(DenseTensor::from_values(shape, values).unwrap())
            } else {
                let mut offsets: Vec<usize> =
                    (0..n).filter(|_| rng.random::<f64>() < 0.4).collect();
                if offsets.is_empty() {
                    offsets.push(0);
                }
                let values: Vec<f64> =
                    (0..offsets.len()).map(|_| rng.random::<f64>() * 100.0 - 50.0).collect();
                TensorData::Sparse(SparseTensor::from_offsets(shape, offsets, values).unwrap())
            };
            let text = format_tensor(&data).unwrap();
            let back = parse_tensor(&text).unwrap();
            prop_assert_eq!(back.is_dense(), data.is_dense());
            match (&back, &data) {
                (TensorData::Dense(a), TensorData::Dense(b)) => {
                    prop_assert_eq!(a.shape().dims(), b.shape().dims());
                    for (x, y) in a.values().iter().zip(b.values()) {
                        prop_assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
                (TensorData::Sparse(a), TensorData::Sparse(b)) => {
                    prop_assert_eq!(a.shape().dims(), b.shape().dims());
                    prop_assert_eq!(a.offsets(), b.offsets());
                    for (x, y) in a.values().iter().zip(b.values()) {
                        prop_assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
                _ => unreachable!(),
            }
        }
    }
}
