//! Kernel regression: SOCS forward model on network-predicted kernels, MSE
//! loss, hand-written reverse-mode gradients and Adam.
//!
//! Gradients of the real loss `L` with respect to a complex quantity `z` are
//! stored as `dL/dRe(z) + j dL/dIm(z)`, so real and imaginary parts are
//! independent real parameters.
//!
//! The loss is the full-resolution MSE, evaluated on a reduced grid. A field
//! `E = F^-1(embed(Q))` with `Q` supported on `n x m` bins produces an
//! intensity whose spectrum lives on `|nu| <= n - 1`. Any working grid of
//! `Pw >= 2n - 1` bins per axis holds that spectrum without aliasing, so by
//! Parseval the full MSE splits into a working-grid MSE against the band-passed
//! truth plus the truth energy outside the window, a constant.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{LithoError, Result};
use crate::grid::{fft2_in_place, ComplexGrid, RealGrid};
use crate::kernels::{KernelMeta, KernelStack};
use crate::metrics;
use crate::neural_field::{
    architecture, init_params, make_coord_grid, output_to_stack, CMlpParams, Encoder, EncoderSpec,
};
use crate::optics::{mask_spectrum, socs_image};

/// Gradients share the parameter layout.
pub type GradientSet = CMlpParams;

/// `x` rounded up, except values within round-off of an integer stay put.
fn guarded_ceil(x: f64) -> usize {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// Kernel support from the resolution limit: `2 * ceil(W * px * 2 NA / lambda) + 1`
/// per axis. Returns `(m, n)` for `(width, height)`.
pub fn kernel_dims(width_px: usize, height_px: usize, wavelength_nm: f64, na: f64, pixel_nm: f64) -> (usize, usize) {
    let side = |len: usize| 2 * guarded_ceil(len as f64 * pixel_nm * 2.0 * na / wavelength_nm) + 1;
    (side(width_px), side(height_px))
}

fn is_smooth(mut v: usize) -> bool {
    for p in [2, 3, 5, 7] {
        while v.is_multiple_of(p) {
            v /= p;
        }
    }
    v == 1
}

/// Smallest FFT-friendly length whose symmetric window `|nu| <= (L - 1) / 2`
/// covers `|nu| <= k - 1`, or `full` when that is not smaller.
pub fn working_len(k: usize, full: usize) -> usize {
    let mut l = 2 * k - 1;
    while !is_smooth(l) {
        l += 1;
    }
    if l >= full {
        full
    } else {
        l
    }
}

/// Unshifted DFT index of signed frequency `nu` on a grid of `len` bins.
#[inline]
fn wrap(nu: isize, len: usize) -> usize {
    nu.rem_euclid(len as isize) as usize
}

/// One mask/aerial pair reduced to what the loss needs.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    n: usize,
    m: usize,
    rows: usize,
    cols: usize,
    rw: usize,
    cw: usize,
    spectrum: ComplexGrid,
    truth: Vec<f64>,
    out_of_band: f64,
    peak: f64,
}

impl TrainingSample {
    /// Uses the smallest exact working grid.
    pub fn new(mask: &RealGrid, truth: &RealGrid, n: usize, m: usize) -> Result<Self> {
        let (rows, cols) = mask.shape();
        Self::with_working_grid(mask, truth, n, m, working_len(n, rows), working_len(m, cols))
    }

    /// Works directly at the mask resolution.
    pub fn full_resolution(mask: &RealGrid, truth: &RealGrid, n: usize, m: usize) -> Result<Self> {
        let (rows, cols) = mask.shape();
        Self::with_working_grid(mask, truth, n, m, rows, cols)
    }

    fn with_working_grid(
        mask: &RealGrid,
        truth: &RealGrid,
        n: usize,
        m: usize,
        rw: usize,
        cw: usize,
    ) -> Result<Self> {
        mask.check_same_shape(truth)?;
        let (rows, cols) = mask.shape();
        if n > rows || m > cols {
            return Err(LithoError::dim(format!(
                "kernel support {n}x{m} exceeds the {rows}x{cols} mask"
            )));
        }
        let full = (rw, cw) == (rows, cols);
        if !full && (rw > rows || cw > cols || (rw - 1) / 2 < n - 1 || (cw - 1) / 2 < m - 1) {
            return Err(LithoError::dim(format!(
                "working grid {rw}x{cw} cannot hold the intensity band of {n}x{m} kernels"
            )));
        }
        let spectrum = mask_spectrum(mask, n, m)?;
        let peak = truth.max();
        if full {
            return Ok(Self {
                n,
                m,
                rows,
                cols,
                rw,
                cw,
                spectrum,
                truth: truth.as_slice().to_vec(),
                out_of_band: 0.0,
                peak,
            });
        }

        let mut spec: Vec<Complex64> = truth.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2_in_place(rows, cols, &mut spec, FftDirection::Forward);
        let (hr, hc) = (((rw - 1) / 2) as isize, ((cw - 1) / 2) as isize);
        let mut window = vec![Complex64::default(); rw * cw];
        let mut outside = 0.0;
        for r in 0..rows {
            let nu = if r <= rows / 2 { r as isize } else { r as isize - rows as isize };
            for c in 0..cols {
                let mu = if c <= cols / 2 { c as isize } else { c as isize - cols as isize };
                let v = spec[r * cols + c];
                // The Nyquist line of an even grid is its own negative, so it is
                // in band only when the window reaches it from both sides.
                let in_band = nu.abs() <= hr && mu.abs() <= hc && 2 * nu.unsigned_abs() < rows && 2 * mu.unsigned_abs() < cols;
                if in_band {
                    window[wrap(nu, rw) * cw + wrap(mu, cw)] = v;
                } else {
                    outside += v.norm_sqr();
                }
            }
        }
        fft2_in_place(rw, cw, &mut window, FftDirection::Inverse);
        let norm = 1.0 / (rw * cw) as f64;
        let p = (rows * cols) as f64;
        Ok(Self {
            n,
            m,
            rows,
            cols,
            rw,
            cw,
            spectrum,
            truth: window.iter().map(|z| z.re * norm).collect(),
            out_of_band: outside / (p * p),
            peak,
        })
    }

    pub fn kernel_support(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn working_grid(&self) -> (usize, usize) {
        (self.rw, self.cw)
    }

    pub fn mask_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Maximum of the full-resolution truth image.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    fn check_kernels(&self, kernels: &[ComplexGrid]) -> Result<()> {
        if let Some(k) = kernels.iter().find(|k| k.shape() != (self.n, self.m)) {
            return Err(LithoError::dim(format!(
                "kernel {:?} does not match sample support {}x{}",
                k.shape(),
                self.n,
                self.m
            )));
        }
        Ok(())
    }

    /// Field of kernel `k` on the working grid, unshifted layout.
    fn field(&self, k: &ComplexGrid) -> Vec<Complex64> {
        let (rw, cw) = (self.rw, self.cw);
        let mut buf = vec![Complex64::default(); rw * cw];
        let (h, w) = ((self.n / 2) as isize, (self.m / 2) as isize);
        let s = self.spectrum.as_slice();
        let kv = k.as_slice();
        for a in 0..self.n {
            let row = wrap(a as isize - h, rw) * cw;
            for b in 0..self.m {
                let i = a * self.m + b;
                buf[row + wrap(b as isize - w, cw)] = kv[i] * s[i];
            }
        }
        fft2_in_place(rw, cw, &mut buf, FftDirection::Inverse);
        let norm = 1.0 / (rw * cw) as f64;
        for v in &mut buf {
            *v *= norm;
        }
        buf
    }

    fn intensity_scale(&self) -> f64 {
        (self.rw * self.cw) as f64 / (self.rows * self.cols) as f64
    }

    /// Full-resolution MSE of the SOCS image of `kernels` against the truth.
    pub fn loss(&self, kernels: &[ComplexGrid]) -> Result<f64> {
        self.check_kernels(kernels)?;
        let mut raw = vec![0.0; self.rw * self.cw];
        for k in kernels {
            for (acc, e) in raw.iter_mut().zip(self.field(k)) {
                *acc += e.norm_sqr();
            }
        }
        Ok(self.residual_energy(&raw))
    }

    fn residual_energy(&self, raw: &[f64]) -> f64 {
        let scale = self.intensity_scale();
        let p = (self.rows * self.cols) as f64;
        let sq: f64 = raw
            .iter()
            .zip(&self.truth)
            .map(|(r, t)| {
                let d = scale * r - t;
                d * d
            })
            .sum();
        (self.rw * self.cw) as f64 / (p * p) * sq + self.out_of_band
    }

    /// Loss and `dL/dK_i` for every kernel.
    pub fn loss_and_kernel_grad(&self, kernels: &[ComplexGrid]) -> Result<(f64, Vec<ComplexGrid>)> {
        self.check_kernels(kernels)?;
        let (rw, cw) = (self.rw, self.cw);
        let fields: Vec<Vec<Complex64>> = kernels.iter().map(|k| self.field(k)).collect();
        let mut raw = vec![0.0; rw * cw];
        for f in &fields {
            for (acc, e) in raw.iter_mut().zip(f) {
                *acc += e.norm_sqr();
            }
        }
        let loss = self.residual_energy(&raw);

        // dL/d(raw) = (Pw / P) * 2 (Pw / P^2) (scale * raw - t).
        let scale = self.intensity_scale();
        let p = (self.rows * self.cols) as f64;
        let pw = (rw * cw) as f64;
        let coef = scale * 2.0 * pw / (p * p);
        let g_raw: Vec<f64> = raw
            .iter()
            .zip(&self.truth)
            .map(|(r, t)| coef * (scale * r - t))
            .collect();

        let (h, w) = ((self.n / 2) as isize, (self.m / 2) as isize);
        let s = self.spectrum.as_slice();
        let grads = fields
            .into_iter()
            .map(|mut e| {
                for (v, g) in e.iter_mut().zip(&g_raw) {
                    *v *= 2.0 * g;
                }
                fft2_in_place(rw, cw, &mut e, FftDirection::Forward);
                let mut gk = ComplexGrid::zeros(self.n, self.m);
                let out = gk.as_mut_slice();
                for a in 0..self.n {
                    let row = wrap(a as isize - h, rw) * cw;
                    for b in 0..self.m {
                        let i = a * self.m + b;
                        out[i] = e[row + wrap(b as isize - w, cw)] / pw * s[i].conj();
                    }
                }
                gk
            })
            .collect();
        Ok((loss, grads))
    }
}

/// Features for an `n x m` kernel support.
pub fn encode_support(encoder: &Encoder, n: usize, m: usize) -> Result<Array2<Complex64>> {
    encoder.encode(&make_coord_grid(n, m)?)
}

/// Single network evaluation over the coordinate grid.
pub fn export_kernels(
    params: &CMlpParams,
    encoder: &Encoder,
    n: usize,
    m: usize,
    meta: &KernelMeta,
) -> Result<KernelStack> {
    output_to_stack(&params.forward(&encode_support(encoder, n, m)?)?, n, m, meta)
}

/// Full-resolution aerial image from the network's kernels.
pub fn forward_predict(
    params: &CMlpParams,
    encoder: &Encoder,
    mask: &RealGrid,
    n: usize,
    m: usize,
    meta: &KernelMeta,
) -> Result<RealGrid> {
    socs_image(&export_kernels(params, encoder, n, m, meta)?, mask)
}

pub fn loss(predicted: &RealGrid, truth: &RealGrid) -> Result<f64> {
    metrics::mse(predicted, truth)
}

fn output_grad(grads: &[ComplexGrid], coords: usize) -> Array2<Complex64> {
    let mut g = Array2::zeros((coords, grads.len()));
    for (i, k) in grads.iter().enumerate() {
        for (c, v) in k.as_slice().iter().enumerate() {
            g[(c, i)] = *v;
        }
    }
    g
}

fn output_kernels(out: &Array2<Complex64>, n: usize, m: usize) -> Vec<ComplexGrid> {
    (0..out.ncols())
        .map(|i| ComplexGrid::from_vec(n, m, out.column(i).to_vec()).expect("shape"))
        .collect()
}

/// Mean loss over `samples` and its gradient with respect to every parameter.
/// Per-sample work runs in parallel and is summed in sample order.
pub fn batch_loss_and_grad(
    params: &CMlpParams,
    features: &Array2<Complex64>,
    samples: &[&TrainingSample],
) -> Result<(f64, GradientSet)> {
    let first = samples
        .first()
        .ok_or_else(|| LithoError::data("empty batch"))?;
    let (n, m) = first.kernel_support();
    if features.nrows() != n * m {
        return Err(LithoError::dim(format!(
            "{} feature rows for a {n}x{m} kernel support",
            features.nrows()
        )));
    }
    let cache = params.forward_cached(features)?;
    let kernels = output_kernels(&cache.output, n, m);
    let per_sample: Vec<Result<(f64, Vec<ComplexGrid>)>> = samples
        .par_iter()
        .map(|s| s.loss_and_kernel_grad(&kernels))
        .collect();
    let inv = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut g_out = Array2::<Complex64>::zeros(cache.output.raw_dim());
    for r in per_sample {
        let (l, g) = r?;
        total += l;
        g_out += &output_grad(&g, n * m);
    }
    g_out.mapv_inplace(|v| v * inv);
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(LithoError::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, params.backward(&cache, &g_out)))
}

/// Full-resolution loss and parameter gradient for one mask/truth pair.
pub fn loss_and_grad(
    params: &CMlpParams,
    encoder: &Encoder,
    mask: &RealGrid,
    truth: &RealGrid,
    n: usize,
    m: usize,
) -> Result<(f64, GradientSet)> {
    let sample = TrainingSample::full_resolution(mask, truth, n, m)?;
    batch_loss_and_grad(params, &encode_support(encoder, n, m)?, &[&sample])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// First-order optimizer whose state mirrors the parameter layout. Real and
/// imaginary parts carry separate moments.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: CMlpParams,
    second: CMlpParams,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &CMlpParams) -> Self {
        Self {
            kind,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn state_widths(&self) -> (Vec<usize>, Vec<usize>) {
        (self.first.widths(), self.second.widths())
    }

    pub fn step(&mut self, params: &mut CMlpParams, grads: &GradientSet, lr: f64) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
                    p.w.zip_mut_with(&g.w, |w, g| *w -= g * lr);
                    p.b.zip_mut_with(&g.b, |b, g| *b -= g * lr);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |x: f64, g: f64, m: &mut f64, v: &mut f64| -> f64 {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    x - lr * (*m / c1) / ((*v / c2).sqrt() + eps)
                };
                let adam = |x: &mut Complex64, g: &Complex64, m: &mut Complex64, v: &mut Complex64| {
                    x.re = update(x.re, g.re, &mut m.re, &mut v.re);
                    x.im = update(x.im, g.im, &mut m.im, &mut v.im);
                };
                for (((p, g), m), v) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first.layers)
                    .zip(&mut self.second.layers)
                {
                    for (((x, g), m), v) in p.w.iter_mut().zip(g.w.iter()).zip(m.w.iter_mut()).zip(v.w.iter_mut()) {
                        adam(x, g, m, v);
                    }
                    for (((x, g), m), v) in p.b.iter_mut().zip(g.b.iter()).zip(m.b.iter_mut()).zip(v.b.iter_mut()) {
                        adam(x, g, m, v);
                    }
                }
            }
        }
    }
}

/// Cosine decay from `lr0` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(lr0: f64, lr_min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = (step as f64 / total as f64).min(1.0);
    lr_min + (lr0 - lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub r: usize,
    /// `(n, m)`; derived from the resolution limit when absent.
    pub kernel_dims: Option<(usize, usize)>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            learning_rate: 1e-3,
            min_learning_rate: 1e-5,
            optimizer: OptimizerKind::default(),
            seed: 0,
            r: 24,
            kernel_dims: None,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LithoError::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate) {
            return Err(LithoError::config("min_learning_rate must lie in [0, learning_rate]"));
        }
        if self.r == 0 {
            return Err(LithoError::config("r must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(LithoError::config("batch_size must be at least 1"));
        }
        if let Some((n, m)) = self.kernel_dims {
            if n % 2 == 0 || m % 2 == 0 || n < 3 || m < 3 {
                return Err(LithoError::config(format!("kernel dims {n}x{m} must be odd and >= 3")));
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(LithoError::config("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        if self.precision == Precision::F32 {
            return Err(LithoError::config("single-precision training is not supported; use f64"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub encoder: EncoderSpec,
    pub hidden: usize,
    pub blocks: usize,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::default(),
            hidden: 256,
            blocks: 3,
            init_seed: 0,
        }
    }
}

impl NetConfig {
    pub fn widths(&self, r: usize) -> Vec<usize> {
        architecture(self.encoder.width(), self.hidden, self.blocks, r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub mask: RealGrid,
    pub aerial: RealGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_psnr_db: f64,
    pub wall_seconds: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in log {
        w.serialize(row).map_err(|e| LithoError::format(e.to_string()))?;
    }
    if log.is_empty() {
        w.write_record(["epoch", "mean_loss", "val_psnr_db", "wall_seconds"])
            .map_err(|e| LithoError::format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| LithoError::format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: CMlpParams,
    pub encoder: EncoderSpec,
    pub kernels: KernelStack,
    pub log: Vec<EpochLog>,
    /// Set when a non-finite loss stopped training; `params` are the last finite ones.
    pub diverged: Option<String>,
}

/// Kernel support for a dataset: the config override or the resolution limit.
pub fn resolve_kernel_dims(tcfg: &TrainConfig, rows: usize, cols: usize, meta: &KernelMeta) -> Result<(usize, usize)> {
    let (n, m) = match tcfg.kernel_dims {
        Some(d) => d,
        None => {
            let (m, n) = kernel_dims(cols, rows, meta.wavelength_nm, meta.numerical_aperture, meta.pixel_size_nm);
            (n, m)
        }
    };
    if n > rows || m > cols {
        return Err(LithoError::config(format!(
            "kernel support {n}x{m} exceeds the {rows}x{cols} tiles"
        )));
    }
    Ok((n, m))
}

fn prepare(pairs: &[Pair], n: usize, m: usize) -> Result<Vec<TrainingSample>> {
    pairs
        .par_iter()
        .map(|p| TrainingSample::new(&p.mask, &p.aerial, n, m))
        .collect()
}

/// Mean PSNR of the kernels over prepared samples.
pub fn mean_psnr(kernels: &[ComplexGrid], samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let vals: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| Ok(metrics::psnr_from_mse(s.peak(), s.loss(kernels)?)))
        .collect();
    let mut total = 0.0;
    for v in vals {
        total += v?;
    }
    Ok(total / samples.len() as f64)
}

/// Runs `epochs` passes of shuffled mini-batches. `on_epoch` sees every log row
/// together with the current parameters.
pub fn train(
    train_set: &[Pair],
    val_set: &[Pair],
    tcfg: &TrainConfig,
    net: &NetConfig,
    meta: &KernelMeta,
    mut on_epoch: impl FnMut(&EpochLog, &CMlpParams) -> Result<()>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| LithoError::data("training set is empty"))?;
    let (rows, cols) = first.mask.shape();
    for p in train_set.iter().chain(val_set) {
        if p.mask.shape() != (rows, cols) || p.aerial.shape() != (rows, cols) {
            return Err(LithoError::data(format!(
                "all samples must be {rows}x{cols}, found mask {:?} / aerial {:?}",
                p.mask.shape(),
                p.aerial.shape()
            )));
        }
    }
    let (n, m) = resolve_kernel_dims(tcfg, rows, cols, meta)?;
    let encoder = net.encoder.build()?;
    let features = encode_support(&encoder, n, m)?;
    let mut params = init_params(&net.widths(tcfg.r), net.init_seed)?;
    let train_samples = prepare(train_set, n, m)?;
    let val_samples = prepare(val_set, n, m)?;

    let mut opt = Optimizer::new(tcfg.optimizer, &params);
    let batches = train_samples.len().div_ceil(tcfg.batch_size);
    let total_steps = tcfg.epochs * batches;
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let start = Instant::now();
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut diverged = None;
    let mut step = 0;

    'epochs: for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let (loss, grads) = match batch_loss_and_grad(&params, &features, &batch) {
                Ok(v) => v,
                Err(LithoError::Numeric(msg)) => {
                    diverged = Some(format!("epoch {epoch}, step {step}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let lr = cosine_lr(tcfg.learning_rate, tcfg.min_learning_rate, step, total_steps);
            let before = params.clone();
            opt.step(&mut params, &grads, lr);
            if params.to_flat().iter().any(|v| !v.is_finite()) {
                params = before;
                diverged = Some(format!("epoch {epoch}, step {step}: non-finite parameters"));
                break 'epochs;
            }
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let kernels = output_kernels(&params.forward(&features)?, n, m);
        let row = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / train_samples.len() as f64,
            val_psnr_db: mean_psnr(&kernels, &val_samples)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row, &params)?;
        log.push(row);
    }

    let kernels = output_to_stack(&params.forward(&features)?, n, m, meta)?;
    Ok(TrainOutcome {
        params,
        encoder: net.encoder.clone(),
        kernels,
        log,
        diverged,
    })
}
