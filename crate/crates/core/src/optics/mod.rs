//! Rigorous partially coherent imaging: source, pupil, TCC, SOCS and Abbe.

mod config;
mod imaging;
mod source;
mod tcc;

pub use config::{ImagingConfig, SourceShape, MAX_NUMERICAL_APERTURE};
pub use imaging::{abbe_image, freq_step, mask_spectrum, relative_l2, resist_image, socs_image};
pub use source::{build_pupil, build_source, PupilFunction, SourceMap, SourcePoint};
pub use tcc::{assemble_tcc, bin_frequency, decompose_tcc, TccEigen, TccMatrix, NEG_EIG_CLAMP};

use crate::error::{LithoError, Result};
use crate::grid::RealGrid;
use crate::kernels::{KernelMeta, KernelStack, Provenance};
use crate::trainer::kernel_dims;

/// Default exposure threshold on clear-field-normalized intensity.
pub const DEFAULT_THRESHOLD: f64 = 0.225;

/// Ground-truth imaging model for one tile size: source, pupil and the
/// eigendecomposed TCC over the kernel support.
#[derive(Clone, Debug)]
pub struct Oracle {
    cfg: ImagingConfig,
    rows: usize,
    cols: usize,
    source: SourceMap,
    pupil: PupilFunction,
    tcc: TccMatrix,
    eigen: TccEigen,
}

impl Oracle {
    /// Kernel support from the resolution-limit rule.
    pub fn new(cfg: &ImagingConfig, rows: usize, cols: usize) -> Result<Self> {
        let (m, n) = kernel_dims(
            cols,
            rows,
            cfg.wavelength_nm,
            cfg.numerical_aperture,
            cfg.pixel_size_nm,
        );
        Self::with_dims(cfg, rows, cols, n.min(odd_floor(rows)), m.min(odd_floor(cols)))
    }

    pub fn with_dims(cfg: &ImagingConfig, rows: usize, cols: usize, n: usize, m: usize) -> Result<Self> {
        cfg.validate()?;
        if rows != cols {
            return Err(LithoError::config(format!(
                "the oracle needs square tiles, got {rows}x{cols}"
            )));
        }
        if n > rows || m > cols {
            return Err(LithoError::dim(format!(
                "kernel support {n}x{m} exceeds the {rows}x{cols} tile"
            )));
        }
        let source = build_source(cfg)?;
        let pupil = build_pupil(cfg)?;
        let tcc = assemble_tcc(&source, &pupil, n, m, freq_step(rows, cfg.pixel_size_nm))?;
        let eigen = TccEigen::compute(&tcc)?;
        Ok(Self {
            cfg: cfg.clone(),
            rows,
            cols,
            source,
            pupil,
            tcc,
            eigen,
        })
    }

    pub fn config(&self) -> &ImagingConfig {
        &self.cfg
    }

    pub fn tile(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn kernel_support(&self) -> (usize, usize) {
        (self.tcc.n(), self.tcc.m())
    }

    pub fn source(&self) -> &SourceMap {
        &self.source
    }

    pub fn pupil(&self) -> &PupilFunction {
        &self.pupil
    }

    pub fn tcc(&self) -> &TccMatrix {
        &self.tcc
    }

    pub fn eigen(&self) -> &TccEigen {
        &self.eigen
    }

    pub fn meta(&self) -> KernelMeta {
        KernelMeta::from_config(&self.cfg, Provenance::Oracle)
    }

    pub fn kernels(&self, r: usize) -> Result<KernelStack> {
        self.eigen.kernels(r, self.meta())
    }

    /// Smallest stack whose eigenvalues cover `coverage` of the trace.
    pub fn kernels_for_coverage(&self, coverage: f64) -> Result<KernelStack> {
        self.kernels(self.eigen.rank_for_coverage(coverage))
    }

    /// Every eigenpair (`r = n * m`).
    pub fn full_stack(&self) -> Result<KernelStack> {
        self.kernels(self.eigen.dim())
    }

    pub fn abbe(&self, mask: &RealGrid) -> Result<RealGrid> {
        self.check_tile(mask)?;
        abbe_image(&self.source, &self.pupil, mask, self.cfg.pixel_size_nm)
    }

    fn check_tile(&self, mask: &RealGrid) -> Result<()> {
        if mask.shape() != (self.rows, self.cols) {
            return Err(LithoError::dim(format!(
                "mask {:?} does not match the oracle tile {}x{}",
                mask.shape(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }
}

fn odd_floor(v: usize) -> usize {
    if v % 2 == 1 {
        v
    } else {
        v.saturating_sub(1).max(1)
    }
}
