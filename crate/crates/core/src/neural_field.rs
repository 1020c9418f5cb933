//! Coordinate-based complex MLP that maps kernel-bin coordinates to kernel values.
//!
//! Features and activations are `(rows = n * m coordinates) x width` complex
//! matrices. A network with widths `[d_in, h, .., h, r]` applies an input
//! `CLinear`, then `CLinear -> CReLU` hidden blocks, then an output `CLinear`
//! with no activation. Output column `i` reshaped row-major to `n x m` is
//! kernel `i`.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LithoError, Result};
use crate::grid::ComplexGrid;
use crate::kernels::{read_u32, KernelMeta, KernelStack, Provenance};

pub const NMLP_MAGIC: &[u8; 4] = b"NMLP";
pub const NMLP_VERSION: u32 = 1;

const LIFT: Complex64 = Complex64::new(1.0, 1.0);

/// Normalized kernel-bin coordinates, row `k` is bin `(k / m, k % m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    pub n: usize,
    pub m: usize,
    pub coords: Vec<[f64; 2]>,
}

impl CoordGrid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn make_coord_grid(n: usize, m: usize) -> Result<CoordGrid> {
    if n < 2 || m < 2 {
        return Err(LithoError::dim(format!("coordinate grid needs n, m >= 2, got {n}x{m}")));
    }
    let coords = (0..n)
        .flat_map(|i| (0..m).map(move |j| [i as f64 / (n - 1) as f64, j as f64 / (m - 1) as f64]))
        .collect();
    Ok(CoordGrid { n, m, coords })
}

/// Random Fourier features with a Gaussian `l x 2` frequency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RffEncoder {
    pub b: Array2<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl RffEncoder {
    pub fn new(features: usize, sigma: f64, seed: u64) -> Result<Self> {
        if features == 0 {
            return Err(LithoError::config("RFF needs at least one feature"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(LithoError::config(format!("RFF sigma must be positive, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).expect("sigma checked");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_fn((features, 2), |_| normal.sample(&mut rng));
        Ok(Self { b, sigma, seed })
    }

    pub fn features(&self) -> usize {
        self.b.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NerfEncoder {
    pub octaves: usize,
}

/// `[cos(2 pi B v), sin(2 pi B v)] * (1 + j)`, width `2 l`.
pub fn rff_encode(coords: &CoordGrid, enc: &RffEncoder) -> Result<Array2<Complex64>> {
    if enc.b.ncols() != 2 {
        return Err(LithoError::dim(format!(
            "RFF matrix must have 2 columns, has {}",
            enc.b.ncols()
        )));
    }
    let l = enc.features();
    let mut out = Array2::zeros((coords.len(), 2 * l));
    for (k, v) in coords.coords.iter().enumerate() {
        for f in 0..l {
            let z = 2.0 * PI * (enc.b[(f, 0)] * v[0] + enc.b[(f, 1)] * v[1]);
            out[(k, f)] = LIFT * z.cos();
            out[(k, l + f)] = LIFT * z.sin();
        }
    }
    Ok(out)
}

/// Per coordinate component `c`: `sin(2^k pi c), cos(2^k pi c)` for `k < L`,
/// lifted by `(1 + j)`; width `4 L`.
pub fn nerf_encode(coords: &CoordGrid, enc: &NerfEncoder) -> Array2<Complex64> {
    let l = enc.octaves;
    let mut out = Array2::zeros((coords.len(), 4 * l));
    for (k, v) in coords.coords.iter().enumerate() {
        for (axis, &c) in v.iter().enumerate() {
            for o in 0..l {
                let z = (1u64 << o) as f64 * PI * c;
                let col = axis * 2 * l + 2 * o;
                out[(k, col)] = LIFT * z.sin();
                out[(k, col + 1)] = LIFT * z.cos();
            }
        }
    }
    out
}

/// Raw coordinates lifted by `(1 + j)`; width 2.
pub fn identity_encode(coords: &CoordGrid) -> Array2<Complex64> {
    Array2::from_shape_fn((coords.len(), 2), |(k, a)| LIFT * coords.coords[k][a])
}

/// Serializable encoder description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Rff { features: usize, sigma: f64, seed: u64 },
    Nerf { octaves: usize },
    None,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Rff {
            features: 256,
            sigma: 10.0,
            seed: 0,
        }
    }
}

impl EncoderSpec {
    pub fn nerf_default() -> Self {
        EncoderSpec::Nerf { octaves: 10 }
    }

    pub fn build(&self) -> Result<Encoder> {
        Ok(match *self {
            EncoderSpec::Rff {
                features,
                sigma,
                seed,
            } => Encoder::Rff(RffEncoder::new(features, sigma, seed)?),
            EncoderSpec::Nerf { octaves } => {
                if octaves == 0 || octaves > 52 {
                    return Err(LithoError::config(format!("NeRF octaves must be in 1..=52, got {octaves}")));
                }
                Encoder::Nerf(NerfEncoder { octaves })
            }
            EncoderSpec::None => Encoder::None,
        })
    }

    pub fn width(&self) -> usize {
        match *self {
            EncoderSpec::Rff { features, .. } => 2 * features,
            EncoderSpec::Nerf { octaves } => 4 * octaves,
            EncoderSpec::None => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Rff(RffEncoder),
    Nerf(NerfEncoder),
    None,
}

impl Encoder {
    pub fn spec(&self) -> EncoderSpec {
        match self {
            Encoder::Rff(e) => EncoderSpec::Rff {
                features: e.features(),
                sigma: e.sigma,
                seed: e.seed,
            },
            Encoder::Nerf(e) => EncoderSpec::Nerf { octaves: e.octaves },
            Encoder::None => EncoderSpec::None,
        }
    }

    pub fn encode(&self, coords: &CoordGrid) -> Result<Array2<Complex64>> {
        match self {
            Encoder::Rff(e) => rff_encode(coords, e),
            Encoder::Nerf(e) => Ok(nerf_encode(coords, e)),
            Encoder::None => Ok(identity_encode(coords)),
        }
    }
}

#[inline]
pub fn crelu(z: Complex64) -> Complex64 {
    Complex64::new(z.re.max(0.0), z.im.max(0.0))
}

/// `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct CLinear {
    pub w: Array2<Complex64>,
    pub b: Array1<Complex64>,
}

impl CLinear {
    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn apply(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CMlpParams {
    pub layers: Vec<CLinear>,
}

/// Widths `[d_in, h, h (x blocks), r]`: input layer, `blocks` hidden layers, output head.
pub fn architecture(d_in: usize, hidden: usize, blocks: usize, r: usize) -> Vec<usize> {
    let mut w = vec![d_in, hidden];
    w.extend(std::iter::repeat_n(hidden, blocks));
    w.push(r);
    w
}

/// Complex Glorot init: Rayleigh magnitude with `sigma = 1 / sqrt(fan_in + fan_out)`,
/// uniform phase, zero biases.
pub fn init_params(widths: &[usize], seed: u64) -> Result<CMlpParams> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(LithoError::config(format!("invalid layer widths {widths:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = widths
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let sigma = 1.0 / ((fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                let u: f64 = rng.random();
                let mag = sigma * (-2.0 * (1.0 - u).ln()).sqrt();
                let phase = rng.random::<f64>() * 2.0 * PI;
                Complex64::from_polar(mag, phase)
            });
            CLinear {
                w,
                b: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(CMlpParams { layers })
}

impl CMlpParams {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].input_dim()];
        w.extend(self.layers.iter().map(CLinear::output_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, CLinear::output_dim)
    }

    /// Number of complex scalars.
    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// In-memory size at 8 bytes per complex scalar (two f32).
    pub fn size_bytes_f32(&self) -> usize {
        self.num_scalars() * 8
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| CLinear {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(LithoError::dim("network has no layers"));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(LithoError::dim(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        if let Some(l) = self.layers.iter().find(|l| l.b.len() != l.output_dim()) {
            return Err(LithoError::dim(format!(
                "bias of length {} on a layer with {} outputs",
                l.b.len(),
                l.output_dim()
            )));
        }
        Ok(())
    }

    fn activated(&self, k: usize) -> bool {
        k >= 1 && k + 1 < self.layers.len()
    }

    /// Output matrix `(coords x r)`.
    pub fn forward(&self, features: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        Ok(self.forward_cached(features)?.output)
    }

    pub(crate) fn forward_cached(&self, features: &Array2<Complex64>) -> Result<ForwardCache> {
        self.validate()?;
        if features.ncols() != self.input_dim() {
            return Err(LithoError::dim(format!(
                "feature width {} does not match network input {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = features.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let y = layer.apply(&x);
            inputs.push(x);
            x = if self.activated(k) { y.mapv(crelu) } else { y.clone() };
            pre.push(y);
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: x,
        })
    }

    /// Backpropagates `g_out = dL/dRe(out) + j dL/dIm(out)` to every weight and bias.
    pub(crate) fn backward(&self, cache: &ForwardCache, g_out: &Array2<Complex64>) -> CMlpParams {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = g_out.clone();
        for k in (0..self.layers.len()).rev() {
            if self.activated(k) {
                g.zip_mut_with(&cache.pre[k], |gv, y| {
                    *gv = Complex64::new(
                        if y.re > 0.0 { gv.re } else { 0.0 },
                        if y.im > 0.0 { gv.im } else { 0.0 },
                    );
                });
            }
            let x = &cache.inputs[k];
            let gw = g.t().dot(&x.mapv(|v| v.conj()));
            let gb = g.sum_axis(Axis(0));
            if k > 0 {
                let wc = self.layers[k].w.mapv(|v| v.conj());
                g = g.dot(&wc);
            }
            grads.push(CLinear { w: gw, b: gb });
        }
        grads.reverse();
        CMlpParams { layers: grads }
    }

    /// Flat view of every real degree of freedom, weights then biases per layer,
    /// each complex scalar as `(re, im)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars() * 2);
        for l in &self.layers {
            for z in l.w.iter().chain(l.b.iter()) {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() * 2 {
            return Err(LithoError::dim(format!(
                "flat vector of {} reals for {} complex parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut it = flat.chunks_exact(2);
        for l in &mut self.layers {
            for z in l.w.iter_mut().chain(l.b.iter_mut()) {
                let p = it.next().unwrap();
                *z = Complex64::new(p[0], p[1]);
            }
        }
        Ok(())
    }
}

pub(crate) struct ForwardCache {
    inputs: Vec<Array2<Complex64>>,
    pre: Vec<Array2<Complex64>>,
    pub output: Array2<Complex64>,
}

/// Reshapes a `(n * m) x r` output matrix into a learned kernel stack.
pub fn output_to_stack(out: &Array2<Complex64>, n: usize, m: usize, meta: &KernelMeta) -> Result<KernelStack> {
    if out.nrows() != n * m {
        return Err(LithoError::dim(format!(
            "network produced {} rows for a {n}x{m} kernel",
            out.nrows()
        )));
    }
    let kernels = (0..out.ncols())
        .map(|i| ComplexGrid::from_vec(n, m, out.column(i).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let meta = KernelMeta {
        provenance: Provenance::Learned,
        ..meta.clone()
    };
    KernelStack::new(n, m, kernels, meta)
}

pub fn cmlp_forward(
    params: &CMlpParams,
    features: &Array2<Complex64>,
    n: usize,
    m: usize,
    meta: &KernelMeta,
) -> Result<KernelStack> {
    output_to_stack(&params.forward(features)?, n, m, meta)
}

/// Self-describing trailer of an `NMLP` checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderSpec,
    pub kernel_n: usize,
    pub kernel_m: usize,
    pub imaging: KernelMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: CMlpParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.params.validate()?;
        let mut buf = Vec::new();
        buf.extend_from_slice(NMLP_MAGIC);
        buf.extend_from_slice(&NMLP_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.params.layers.len() as u32).to_le_bytes());
        for l in &self.params.layers {
            buf.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
        }
        for l in &self.params.layers {
            for z in l.w.iter().chain(l.b.iter()) {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        let trailer = serde_json::to_vec(&self.meta)?;
        buf.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        buf.extend_from_slice(&trailer);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| LithoError::format("truncated NMLP header"))?;
        if &magic != NMLP_MAGIC {
            return Err(LithoError::format(format!("bad NMLP magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != NMLP_VERSION {
            return Err(LithoError::format(format!("unsupported NMLP version {version}")));
        }
        let count = read_u32(r)? as usize;
        if count == 0 || count > 1024 {
            return Err(LithoError::format(format!("implausible NMLP layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let out = read_u32(r)? as usize;
            let inp = read_u32(r)? as usize;
            if out == 0 || inp == 0 || out.saturating_mul(inp) > 1 << 26 {
                return Err(LithoError::format(format!("implausible NMLP layer {out}x{inp}")));
            }
            dims.push((out, inp));
        }
        let mut layers = Vec::with_capacity(count);
        for &(out, inp) in &dims {
            let w = read_complex(r, out * inp)?;
            let b = read_complex(r, out)?;
            layers.push(CLinear {
                w: Array2::from_shape_vec((out, inp), w).expect("length matches"),
                b: Array1::from_vec(b),
            });
        }
        let len = read_u32(r)? as usize;
        let mut trailer = vec![0u8; len];
        r.read_exact(&mut trailer)
            .map_err(|_| LithoError::format("truncated NMLP trailer"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&trailer)
            .map_err(|e| LithoError::format(format!("bad NMLP trailer: {e}")))?;
        let params = CMlpParams { layers };
        params.validate().map_err(|e| LithoError::format(e.to_string()))?;
        if params.input_dim() != meta.encoder.width() {
            return Err(LithoError::format(format!(
                "network input {} does not match encoder width {}",
                params.input_dim(),
                meta.encoder.width()
            )));
        }
        Ok(Self { params, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_complex(r: &mut impl Read, count: usize) -> Result<Vec<Complex64>> {
    let mut raw = vec![0u8; count * 16];
    r.read_exact(&mut raw)
        .map_err(|_| LithoError::format("truncated NMLP payload"))?;
    Ok(raw
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn meta() -> KernelMeta {
        KernelMeta {
            wavelength_nm: 193.0,
            numerical_aperture: 1.35,
            pixel_size_nm: 4.0,
            provenance: Provenance::Oracle,
        }
    }

    #[test]
    fn coord_grid_layout() {
        let g = make_coord_grid(2, 2).unwrap();
        assert_eq!(g.coords, vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(make_coord_grid(3, 3).unwrap().coords[4], [0.5, 0.5]);
        let g = make_coord_grid(15, 15).unwrap();
        assert_eq!(g.len(), 225);
        assert!(g.coords.iter().flatten().all(|&c| (0.0..=1.0).contains(&c)));
        assert!(make_coord_grid(1, 5).is_err());
    }

    #[test]
    fn rff_features() {
        let enc = RffEncoder::new(6, 3.0, 11).unwrap();
        let g = make_coord_grid(4, 5).unwrap();
        let f = rff_encode(&g, &enc).unwrap();
        assert_eq!(f.dim(), (20, 12));
        for c in 0..6 {
            assert_eq!(f[(0, c)], LIFT);
            assert_eq!(f[(0, 6 + c)], Complex64::default());
        }
        for z in f.iter() {
            assert_eq!(z.re, z.im);
            assert!(z.norm() <= 2f64.sqrt() + 1e-15);
        }
        assert_eq!(RffEncoder::new(6, 3.0, 11).unwrap(), enc);
        assert_ne!(RffEncoder::new(6, 3.0, 12).unwrap().b, enc.b);
        assert!(RffEncoder::new(6, 0.0, 1).is_err());
    }

    #[test]
    fn nerf_features() {
        let enc = NerfEncoder { octaves: 1 };
        let g = CoordGrid {
            n: 1,
            m: 2,
            coords: vec![[0.0, 0.0], [0.5, 0.0]],
        };
        let f = nerf_encode(&g, &enc);
        assert_eq!(f.ncols(), 4);
        assert_eq!(f.row(0).to_vec(), vec![Complex64::default(), LIFT, Complex64::default(), LIFT]);
        assert_abs_diff_eq!(f[(1, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[(1, 1)].im, 0.0, epsilon = 1e-15);
        let wide = nerf_encode(&make_coord_grid(3, 3).unwrap(), &NerfEncoder { octaves: 10 });
        assert_eq!(wide.ncols(), 40);
    }

    #[test]
    fn crelu_cases() {
        assert_eq!(crelu(Complex64::new(3.0, -4.0)), Complex64::new(3.0, 0.0));
        assert_eq!(crelu(Complex64::new(-1.0, -2.0)), Complex64::default());
        assert_eq!(crelu(Complex64::new(2.0, 5.0)), Complex64::new(2.0, 5.0));
    }

    #[test]
    fn zero_network_gives_zero_kernels() {
        let mut p = init_params(&[4, 3, 3, 2], 1).unwrap();
        p = p.zeros_like();
        let f = rff_encode(&make_coord_grid(3, 3).unwrap(), &RffEncoder::new(2, 1.0, 0).unwrap()).unwrap();
        let ks = cmlp_forward(&p, &f, 3, 3, &meta()).unwrap();
        assert_eq!(ks.order(), 2);
        assert!(ks.kernels().iter().all(|k| k.norm_sqr() == 0.0));
        assert_eq!(ks.meta.provenance, Provenance::Learned);
    }

    #[test]
    fn identity_layer_reshapes_features() {
        let f = rff_encode(&make_coord_grid(3, 5).unwrap(), &RffEncoder::new(2, 1.0, 3).unwrap()).unwrap();
        let p = CMlpParams {
            layers: vec![CLinear {
                w: Array2::from_shape_fn((4, 4), |(i, j)| if i == j { Complex64::new(1.0, 0.0) } else { Complex64::default() }),
                b: Array1::zeros(4),
            }],
        };
        let ks = cmlp_forward(&p, &f, 3, 5, &meta()).unwrap();
        for i in 0..4 {
            for k in 0..15 {
                assert_eq!(ks.kernel(i).as_slice()[k], f[(k, i)]);
            }
        }
    }

    #[test]
    fn init_statistics() {
        let a = init_params(&[256, 256], 7).unwrap();
        assert_eq!(a, init_params(&[256, 256], 7).unwrap());
        assert!(a.layers[0].b.iter().all(|b| *b == Complex64::default()));
        let second: f64 = a.layers[0].w.iter().map(|z| z.norm_sqr()).sum::<f64>() / a.layers[0].w.len() as f64;
        let expected = 2.0 / 512.0;
        assert!((second / expected - 1.0).abs() < 0.2, "{second} vs {expected}");
        assert!(init_params(&[3], 0).is_err());
    }

    #[test]
    fn architecture_and_activation_layout() {
        assert_eq!(architecture(8, 4, 2, 3), vec![8, 4, 4, 4, 3]);
        let p = init_params(&architecture(8, 4, 2, 3), 0).unwrap();
        assert_eq!(p.layers.len(), 4);
        assert!(!p.activated(0) && p.activated(1) && p.activated(2) && !p.activated(3));
        assert_eq!(p.widths(), vec![8, 4, 4, 4, 3]);
    }

    #[test]
    fn forward_rejects_bad_width() {
        let p = init_params(&[4, 2], 0).unwrap();
        assert!(p.forward(&Array2::zeros((3, 5))).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let ck = Checkpoint {
            params: init_params(&[4, 3, 2], 5).unwrap(),
            meta: CheckpointMeta {
                encoder: EncoderSpec::Rff {
                    features: 2,
                    sigma: 10.0,
                    seed: 9,
                },
                kernel_n: 5,
                kernel_m: 5,
                imaging: meta(),
            },
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"NMLP");
        assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), ck);
        buf[1] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut buf.as_slice()), Err(LithoError::Format(_))));
    }

    #[test]
    fn encoder_spec_json() {
        let s: EncoderSpec = serde_json::from_str(r#"{"type":"nerf","octaves":4}"#).unwrap();
        assert_eq!(s, EncoderSpec::Nerf { octaves: 4 });
        assert!(serde_json::from_str::<EncoderSpec>(r#"{"type":"nerf","octaves":4,"x":1}"#).is_err());
        assert_eq!(s.build().unwrap().spec(), s);
        assert_eq!(EncoderSpec::None.width(), 2);
    }
}
