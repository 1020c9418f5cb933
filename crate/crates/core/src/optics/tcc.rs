use nalgebra::DMatrix;
use num_complex::Complex64;

use super::source::{PupilFunction, SourceMap};
use crate::error::{LithoError, Result};
use crate::grid::ComplexGrid;
use crate::kernels::{KernelMeta, KernelStack, Provenance};

/// Discretized transmission cross-coefficient over an `n x m` block of
/// frequency bins. Row/column index `p = a * m + b` addresses kernel bin `(a, b)`.
#[derive(Clone, Debug)]
pub struct TccMatrix {
    n: usize,
    m: usize,
    entries: Vec<Complex64>,
}

impl TccMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> Complex64 {
        self.entries[p * self.dim() + q]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn from_entries(n: usize, m: usize, entries: Vec<Complex64>) -> Result<Self> {
        let dim = n * m;
        if entries.len() != dim * dim {
            return Err(LithoError::dim(format!(
                "{} entries do not form a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        Ok(Self { n, m, entries })
    }

    pub fn max_hermitian_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for p in 0..d {
            for q in p..d {
                worst = worst.max((self.get(p, q) - self.get(q, p).conj()).norm());
            }
        }
        worst
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub(crate) fn to_matrix(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.entries)
    }
}

/// Physical frequency of kernel bin `(a, b)` in an `n x m` support.
#[inline]
pub fn bin_frequency(a: usize, b: usize, n: usize, m: usize, freq_step: f64) -> (f64, f64) {
    (
        (a as f64 - (n / 2) as f64) * freq_step,
        (b as f64 - (m / 2) as f64) * freq_step,
    )
}

/// `T(p, q) = sum_s w_s H(f_s + f_p, g_s + g_p) conj(H(f_s + f_q, g_s + g_q))`.
///
/// Only the lower triangle is accumulated; the upper triangle is its conjugate
/// mirror, so the result is Hermitian bit-for-bit.
pub fn assemble_tcc(
    src: &SourceMap,
    pupil: &PupilFunction,
    n: usize,
    m: usize,
    freq_step: f64,
) -> Result<TccMatrix> {
    if n.is_multiple_of(2) || m.is_multiple_of(2) {
        return Err(LithoError::dim(format!("kernel support {n}x{m} must be odd")));
    }
    if !(freq_step > 0.0 && freq_step.is_finite()) {
        return Err(LithoError::dim(format!(
            "frequency step must be positive, got {freq_step}"
        )));
    }
    let dim = n * m;
    let mut entries = vec![Complex64::default(); dim * dim];
    let mut support: Vec<(usize, Complex64)> = Vec::with_capacity(dim);

    for s in &src.points {
        support.clear();
        for a in 0..n {
            for b in 0..m {
                let (f, g) = bin_frequency(a, b, n, m, freq_step);
                let h = pupil.transmission(s.f + f, s.g + g);
                if h != Complex64::default() {
                    support.push((a * m + b, h));
                }
            }
        }
        for (i, &(p, hp)) in support.iter().enumerate() {
            let wp = hp * s.weight;
            for &(q, hq) in &support[..=i] {
                entries[p * dim + q] += wp * hq.conj();
            }
        }
    }
    for p in 0..dim {
        for q in 0..p {
            entries[q * dim + p] = entries[p * dim + q].conj();
        }
        entries[p * dim + p].im = 0.0;
    }
    Ok(TccMatrix { n, m, entries })
}

/// Eigenvalues below `-NEG_EIG_CLAMP * lambda_max` mean the matrix is not PSD.
pub const NEG_EIG_CLAMP: f64 = 1e-10;

/// Full Hermitian eigendecomposition of a TCC, sorted by descending eigenvalue.
#[derive(Clone, Debug)]
pub struct TccEigen {
    n: usize,
    m: usize,
    /// Clamped, descending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`, phase-normalized.
    vectors: DMatrix<Complex64>,
}

impl TccEigen {
    pub fn compute(tcc: &TccMatrix) -> Result<Self> {
        let dim = tcc.dim();
        let eig = tcc
            .to_matrix()
            .try_symmetric_eigen(f64::EPSILON, 0)
            .ok_or(LithoError::Eigen(dim))?;

        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let lambda_max = eig.eigenvalues[order[0]].max(0.0);
        let mut eigenvalues = Vec::with_capacity(dim);
        let mut vectors = DMatrix::<Complex64>::zeros(dim, dim);
        for (k, &i) in order.iter().enumerate() {
            let mut a = eig.eigenvalues[i];
            if !a.is_finite() {
                return Err(LithoError::Numeric(format!("non-finite eigenvalue {a}")));
            }
            if a < 0.0 {
                if a < -NEG_EIG_CLAMP * lambda_max {
                    return Err(LithoError::Numeric(format!(
                        "TCC is not positive semidefinite: eigenvalue {a:e} against max {lambda_max:e}"
                    )));
                }
                a = 0.0;
            }
            eigenvalues.push(a);

            let col = eig.eigenvectors.column(i);
            // Largest-magnitude component (first on ties) made real and positive.
            let mut pivot = 0;
            let mut best = -1.0;
            for (j, v) in col.iter().enumerate() {
                let mag = v.norm_sqr();
                if mag > best {
                    best = mag;
                    pivot = j;
                }
            }
            let phase = if best > 0.0 {
                col[pivot].conj() / col[pivot].norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            for (j, v) in col.iter().enumerate() {
                let mut z = v * phase;
                if j == pivot {
                    z = Complex64::new(z.norm(), 0.0);
                }
                vectors[(j, k)] = z;
            }
        }
        Ok(Self {
            n: tcc.n,
            m: tcc.m,
            eigenvalues,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn total(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Smallest `r` with `sum_{i<r} alpha_i >= coverage * sum alpha`.
    pub fn rank_for_coverage(&self, coverage: f64) -> usize {
        let total = self.total();
        let mut acc = 0.0;
        for (i, a) in self.eigenvalues.iter().enumerate() {
            acc += a;
            if acc >= coverage * total {
                return i + 1;
            }
        }
        self.dim()
    }

    /// Number of eigenvalues above `1e-12 * alpha_1`.
    pub fn numerical_rank(&self) -> usize {
        let floor = 1e-12 * self.eigenvalues.first().copied().unwrap_or(0.0);
        self.eigenvalues.iter().filter(|&&a| a > floor).count()
    }

    /// Unit eigenvector `i` reshaped to the kernel support.
    pub fn eigenvector(&self, i: usize) -> ComplexGrid {
        let col = self.vectors.column(i);
        ComplexGrid::from_fn(self.n, self.m, |a, b| col[a * self.m + b])
    }

    /// Top-`r` kernels with `sqrt(alpha_i)` absorbed.
    pub fn kernels(&self, r: usize, meta: KernelMeta) -> Result<KernelStack> {
        if r == 0 || r > self.dim() {
            return Err(LithoError::dim(format!(
                "requested {r} kernels from a TCC of dimension {}",
                self.dim()
            )));
        }
        let kernels = (0..r)
            .map(|i| {
                let s = self.eigenvalues[i].sqrt();
                self.eigenvector(i).scale(Complex64::new(s, 0.0))
            })
            .collect();
        KernelStack::new(self.n, self.m, kernels, KernelMeta {
            provenance: Provenance::Oracle,
            ..meta
        })
    }
}

/// Top-`r` SOCS kernels of `tcc` in descending eigenvalue order.
pub fn decompose_tcc(tcc: &TccMatrix, r: usize, meta: KernelMeta) -> Result<KernelStack> {
    if r == 0 || r > tcc.dim() {
        return Err(LithoError::dim(format!(
            "requested {r} kernels from a TCC of dimension {}",
            tcc.dim()
        )));
    }
    TccEigen::compute(tcc)?.kernels(r, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::config::{ImagingConfig, SourceShape};
    use crate::optics::source::{build_pupil, build_source};

    fn setup(source: SourceShape, grid: usize, n: usize) -> (TccMatrix, KernelMeta) {
        let cfg = ImagingConfig {
            source,
            source_grid: grid,
            pixel_size_nm: 4.0,
            ..ImagingConfig::default()
        };
        let src = build_source(&cfg).unwrap();
        let pupil = build_pupil(&cfg).unwrap();
        let step = 1.0 / (64.0 * cfg.pixel_size_nm);
        (
            assemble_tcc(&src, &pupil, n, n, step).unwrap(),
            KernelMeta::from_config(&cfg, Provenance::Oracle),
        )
    }

    fn annular() -> SourceShape {
        SourceShape::Annular {
            sigma_inner: 0.5,
            sigma_outer: 0.8,
        }
    }

    #[test]
    fn point_source_tcc_is_rank_one_outer_product() {
        let (t, meta) = setup(SourceShape::Point, 1, 9);
        let cfg = ImagingConfig::default();
        let cutoff = cfg.numerical_aperture / cfg.wavelength_nm;
        let step = 1.0 / 256.0;
        let h = |p: usize| {
            let (f, g) = bin_frequency(p / 9, p % 9, 9, 9, step);
            if f * f + g * g <= cutoff * cutoff * (1.0 + 1e-9) {
                1.0
            } else {
                0.0
            }
        };
        for p in 0..81 {
            for q in 0..81 {
                assert_eq!(t.get(p, q), Complex64::new(h(p) * h(q), 0.0));
            }
        }
        let eig = TccEigen::compute(&t).unwrap();
        assert_eq!(eig.numerical_rank(), 1);
        let k = eig.kernels(1, meta).unwrap();
        let k0 = k.kernel(0).as_slice();
        let mut worst = 0.0f64;
        for p in 0..81 {
            for q in 0..81 {
                worst = worst.max((k0[p] * k0[q].conj() - t.get(p, q)).norm());
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn hermitian_exactly() {
        let (t, _) = setup(annular(), 9, 7);
        assert_eq!(t.max_hermitian_defect(), 0.0);
    }

    #[test]
    fn eigenvalues_sorted_nonnegative() {
        let (t, _) = setup(annular(), 9, 9);
        let eig = TccEigen::compute(&t).unwrap();
        for w in eig.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(eig.eigenvalues.iter().all(|&a| a >= 0.0));
        assert!((eig.total() - trace(&t)).abs() < 1e-10);
    }

    fn trace(t: &TccMatrix) -> f64 {
        (0..t.dim()).map(|p| t.get(p, p).re).sum()
    }

    #[test]
    fn reconstruction_error_nonincreasing_in_rank() {
        let (t, meta) = setup(annular(), 9, 9);
        let eig = TccEigen::compute(&t).unwrap();
        let d = t.dim();
        let norm = t.frobenius_norm();
        let mut approx = vec![Complex64::default(); d * d];
        let mut prev = f64::INFINITY;
        let stack = eig.kernels(d, meta).unwrap();
        for i in 0..d {
            let k = stack.kernel(i).as_slice();
            for p in 0..d {
                for q in 0..d {
                    approx[p * d + q] += k[p] * k[q].conj();
                }
            }
            let err = approx
                .iter()
                .zip(t.as_slice())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / norm;
            assert!(err <= prev + 1e-12, "rank {}: {err} > {prev}", i + 1);
            prev = err;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn oracle_kernels_are_orthogonal() {
        let (t, meta) = setup(annular(), 9, 9);
        let eig = TccEigen::compute(&t).unwrap();
        let r = eig.numerical_rank().min(12);
        let stack = eig.kernels(r, meta).unwrap();
        for i in 0..r {
            for j in 0..i {
                let ki = stack.kernel(i);
                let kj = stack.kernel(j);
                let ip = ki.inner(kj).norm();
                assert!(ip < 1e-8 * (ki.norm_sqr() * kj.norm_sqr()).sqrt());
            }
        }
    }

    #[test]
    fn sign_convention_makes_pivot_real_positive() {
        let (t, _) = setup(annular(), 9, 7);
        let eig = TccEigen::compute(&t).unwrap();
        for i in 0..5 {
            let v = eig.eigenvector(i);
            let pivot = v
                .as_slice()
                .iter()
                .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
                .unwrap();
            assert!(pivot.im.abs() < 1e-15 && pivot.re > 0.0);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let (t, meta) = setup(SourceShape::Point, 1, 5);
        assert!(matches!(
            decompose_tcc(&t, 26, meta.clone()),
            Err(LithoError::Dimension(_))
        ));
        assert!(decompose_tcc(&t, 0, meta).is_err());
        let src = SourceMap { points: vec![] };
        let pupil = PupilFunction {
            cutoff_frequency: 0.01,
        };
        assert!(assemble_tcc(&src, &pupil, 4, 5, 0.001).is_err());
        assert!(assemble_tcc(&src, &pupil, 5, 5, 0.0).is_err());
    }

    #[test]
    fn non_psd_matrix_is_rejected() {
        let mut e = vec![Complex64::default(); 4];
        e[0] = Complex64::new(1.0, 0.0);
        e[3] = Complex64::new(-0.5, 0.0);
        let t = TccMatrix::from_entries(1, 2, e).unwrap();
        assert!(matches!(TccEigen::compute(&t), Err(LithoError::Numeric(_))));
    }
}
