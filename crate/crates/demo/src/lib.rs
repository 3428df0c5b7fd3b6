//! Browser front end for the tensor completion solver.
//!
//! Compiles to WebAssembly through wasm-bindgen and drives the same outer
//! Riemannian conjugate-gradient loop as the command line tool, on a small
//! color-image instance chosen to render well on a canvas: a 32x32x3
//! tensor built from a flat pedestal plus two separable color bumps,
//!
//!   W[i,j,c] = p + sum_t a_t u_t[i] v_t[j] g_t[c],
//!
//! so every mode-k unfolding has rank at most 3 and every entry is
//! positive. A seeded fraction of the entries is revealed and the solver
//! recovers the rest. [`DemoSession`] owns the instance and the solver
//! state; the `*_rgba` methods serialize panels as RGBA scanlines for
//! `putImageData`, and `step` advances the solver a bounded number of
//! iterations so the page can animate progress without blocking.
//!
//! Inputs arriving from script are clamped to valid ranges rather than
//! rejected, so the exported API has no fallible paths. Solver errors
//! (which a well-formed instance does not produce) stop the session and
//! surface through [`DemoSession::status`]. The crate also builds as a
//! plain rlib so the session logic is tested natively.

use nntc_core::eval::{held_out_rmse, rmse, sample_mask};
use nntc_core::tensor::project_omega;
use nntc_core::{DenseTensor, ObservationMask, Shape, Solver, SolverConfig, SparseTensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Image height of the demo instance.
pub const HEIGHT: usize = 32;
/// Image width of the demo instance.
pub const WIDTH: usize = 32;
/// Color channels of the demo instance.
pub const CHANNELS: usize = 3;

const PEDESTAL: f64 = 0.25;
const BUMP_COUNT: usize = 2;

// ─── instance generation ─────────────────────────────────────────────────

fn bump_profile(n: usize, center: f64, width: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            (-((x - center) * (x - center)) / (2.0 * width * width)).exp()
        })
        .collect()
}

/// Draws the seeded truth image and a seed for the observation mask from
/// the same stream, so one seed pins the whole instance.
fn smooth_truth(seed: u64) -> (DenseTensor, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = vec![PEDESTAL; HEIGHT * WIDTH * CHANNELS];
    for _ in 0..BUMP_COUNT {
        let center_u = 0.2 + 0.6 * rng.random::<f64>();
        let center_v = 0.2 + 0.6 * rng.random::<f64>();
        let width_u = 0.12 + 0.18 * rng.random::<f64>();
        let width_v = 0.12 + 0.18 * rng.random::<f64>();
        let amplitude = 0.6 + 0.4 * rng.random::<f64>();
        let mut gains = [0.0f64; CHANNELS];
        for g in &mut gains {
            *g = 0.15 + 0.85 * rng.random::<f64>();
        }
        let u = bump_profile(HEIGHT, center_u, width_u);
        let v = bump_profile(WIDTH, center_v, width_v);
        for i in 0..HEIGHT {
            for j in 0..WIDTH {
                for (c, g) in gains.iter().enumerate() {
                    vals[(i * WIDTH + j) * CHANNELS + c] += amplitude * u[i] * v[j] * g;
                }
            }
        }
    }
    let peak = vals.iter().cloned().fold(f64::MIN, f64::max);
    for v in &mut vals {
        *v /= peak;
    }
    let shape = Shape::new(vec![HEIGHT, WIDTH, CHANNELS]).expect("static dims");
    let truth = DenseTensor::from_values(shape, vals).expect("generated values are finite");
    (truth, rng.random())
}

/// Weights the two spatial modes equally and keeps the channel mode's
/// weight small: its unfolding is low rank by shape alone, so an equal
/// weight would let it absorb the whole tensor and kill extrapolation,
/// while a near-zero weight leaves the nonnegativity subproblem almost
/// singular and stalls its projected-gradient solver. 0.02 sits between.
fn solver_config() -> SolverConfig {
    SolverConfig {
        ranks: Some(vec![3, 3, 3]),
        lambda: Some(vec![0.5, 0.5, 0.02]),
        c: 300.0,
        tau: 1e-4,
        max_outer_iters: 400,
        ..SolverConfig::default()
    }
}

// ─── session ─────────────────────────────────────────────────────────────

/// One interactive completion run: a seeded truth image, an observation
/// mask, and a stepping solver, with cached reconstruction panels.
#[wasm_bindgen]
pub struct DemoSession {
    truth: DenseTensor,
    omega: ObservationMask,
    observed: Vec<bool>,
    y: SparseTensor,
    solver: Solver,
    recon: Option<DenseTensor>,
    done: bool,
    failure: Option<String>,
}

#[wasm_bindgen]
impl DemoSession {
    /// Builds the instance for `seed` with `fraction` of the entries
    /// revealed (clamped to [0.02, 0.95]) and a solver at iteration 0.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, fraction: f64) -> DemoSession {
        let fraction = if fraction.is_finite() { fraction.clamp(0.02, 0.95) } else { 0.25 };
        let (truth, mask_seed) = smooth_truth(seed as u64);
        let omega =
            sample_mask(truth.shape(), fraction, mask_seed).expect("fraction is clamped valid");
        let mut observed = vec![false; truth.shape().len()];
        for &off in omega.offsets() {
            observed[off] = true;
        }
        let y = project_omega(&truth, &omega).expect("mask matches the truth shape");
        let solver = Solver::new(y.clone(), omega.clone(), solver_config())
            .expect("static demo configuration is valid");
        DemoSession { truth, omega, observed, y, solver, recon: None, done: false, failure: None }
    }

    /// Image height in pixels.
    pub fn height(&self) -> u32 {
        HEIGHT as u32
    }

    /// Image width in pixels.
    pub fn width(&self) -> u32 {
        WIDTH as u32
    }

    /// Number of observed entries (out of height x width x 3).
    pub fn observed_entries(&self) -> u32 {
        self.omega.len() as u32
    }

    /// Advances the solver by at most `n` outer iterations. Returns true
    /// while the solver can still make progress, false once it has
    /// stopped, so an animation loop can call this until it reports false.
    pub fn step(&mut self, n: u32) -> bool {
        if self.done {
            return false;
        }
        for _ in 0..n.max(1) {
            match self.solver.step() {
                Ok(true) => {}
                Ok(false) => {
                    self.done = true;
                    break;
                }
                Err(e) => {
                    self.failure = Some(e.to_string());
                    self.done = true;
                    break;
                }
            }
        }
        self.recon = None;
        !self.done
    }

    /// Restarts the solver from iteration 0 on the same truth and mask.
    pub fn reset(&mut self) {
        self.solver = Solver::new(self.y.clone(), self.omega.clone(), solver_config())
            .expect("static demo configuration is valid");
        self.recon = None;
        self.done = false;
        self.failure = None;
    }

    /// Outer iterations accepted so far.
    pub fn iteration(&self) -> u32 {
        self.solver.iteration() as u32
    }

    /// Current outer objective value.
    pub fn cost(&self) -> f64 {
        self.solver.cost()
    }

    /// Current Riemannian gradient norm.
    pub fn grad_norm(&self) -> f64 {
        self.solver.grad_norm()
    }

    /// Why the solver stopped, or "running" while it has not.
    pub fn status(&self) -> String {
        if let Some(msg) = &self.failure {
            return format!("failed: {msg}");
        }
        match self.solver.status() {
            Some(s) => s.as_str().to_string(),
            None => "running".to_string(),
        }
    }

    /// Root-mean-square error of the reconstruction against the truth
    /// over every entry.
    pub fn rmse(&mut self) -> f64 {
        let w = self.reconstruction().clone();
        rmse(&w, &self.truth).expect("shapes match by construction")
    }

    /// Root-mean-square error over the held-out (unobserved) entries,
    /// or NaN when the mask covers the whole tensor.
    pub fn held_out_rmse(&mut self) -> f64 {
        let w = self.reconstruction().clone();
        held_out_rmse(&w, &self.truth, &self.omega)
            .expect("shapes match by construction")
            .unwrap_or(f64::NAN)
    }

    /// The truth image as RGBA scanlines.
    pub fn truth_rgba(&self) -> Vec<u8> {
        rgba_panel(|off| self.truth.values()[off])
    }

    /// The observed entries as RGBA scanlines; unobserved channel values
    /// render black, so partially observed pixels keep a color speckle.
    pub fn observed_rgba(&self) -> Vec<u8> {
        rgba_panel(|off| if self.observed[off] { self.truth.values()[off] } else { 0.0 })
    }

    /// The current reconstruction as RGBA scanlines.
    pub fn reconstruction_rgba(&mut self) -> Vec<u8> {
        let w = self.reconstruction();
        rgba_panel(|off| w.values()[off])
    }

    /// Absolute reconstruction error amplified by `gain` (clamped to
    /// [1, 50]) as RGBA scanlines.
    pub fn error_rgba(&mut self, gain: f64) -> Vec<u8> {
        let gain = if gain.is_finite() { gain.clamp(1.0, 50.0) } else { 5.0 };
        let truth = self.truth.clone();
        let w = self.reconstruction();
        rgba_panel(|off| gain * (w.values()[off] - truth.values()[off]).abs())
    }

    fn reconstruction(&mut self) -> &DenseTensor {
        if self.recon.is_none() {
            let w = self
                .solver
                .snapshot_model()
                .reconstruct()
                .expect("demo tensor is far below the dense cap");
            self.recon = Some(w);
        }
        self.recon.as_ref().expect("cache was just filled")
    }
}

// ─── rendering ───────────────────────────────────────────────────────────

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Serializes a [H, W, 3] entry lookup as RGBA scanlines: the tensor is
/// stored row-major with the channel index fastest, so entries are
/// already interleaved RGB in scanline order.
fn rgba_panel(value_at: impl Fn(usize) -> f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEIGHT * WIDTH * 4);
    for p in 0..HEIGHT * WIDTH {
        out.push(byte(value_at(3 * p)));
        out.push(byte(value_at(3 * p + 1)));
        out.push(byte(value_at(3 * p + 2)));
        out.push(255);
    }
    out
}

// ─── tests ───────────────────────────────────────────────────────────────
