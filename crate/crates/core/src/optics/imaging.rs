use num_complex::Complex64;
use rayon::prelude::*;

use super::source::{PupilFunction, SourceMap};
use crate::error::{LithoError, Result};
use crate::grid::{center_crop, center_embed, fft2_centered, ifft2_centered, ComplexGrid, RealGrid};
use crate::kernels::KernelStack;

/// Spacing of one DFT bin for an axis of `len` pixels of `pixel_nm` each.
#[inline]
pub fn freq_step(len: usize, pixel_nm: f64) -> f64 {
    1.0 / (len as f64 * pixel_nm)
}

/// Sums `count` per-item images of `len` pixels. Items are split into one
/// contiguous chunk per worker; each chunk accumulates in index order and the
/// chunk partials are then added in chunk order, so the result only depends on
/// the thread count.
pub(crate) fn ordered_sum<F>(count: usize, len: usize, item: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let workers = rayon::current_num_threads().max(1).min(count.max(1));
    let chunk = count.div_ceil(workers).max(1);
    let partials: Vec<Vec<f64>> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let mut acc = vec![0.0; len];
            for i in (w * chunk)..((w + 1) * chunk).min(count) {
                item(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Centered mask spectrum cropped to the kernel support.
pub fn mask_spectrum(mask: &RealGrid, n: usize, m: usize) -> Result<ComplexGrid> {
    center_crop(&fft2_centered(&ComplexGrid::from_real(mask)), n, m)
}

/// SOCS aerial image `sum_i |F^-1(embed(K_i . crop(F(M))))|^2` at full mask resolution.
pub fn socs_image(kernels: &KernelStack, mask: &RealGrid) -> Result<RealGrid> {
    let (n, m) = (kernels.n(), kernels.m());
    let (rows, cols) = mask.shape();
    if n > rows || m > cols {
        return Err(LithoError::dim(format!(
            "kernel support {n}x{m} exceeds mask spectrum {rows}x{cols}"
        )));
    }
    let spectrum = mask_spectrum(mask, n, m)?;
    socs_from_spectrum(kernels, &spectrum, rows, cols)
}

pub(crate) fn socs_from_spectrum(
    kernels: &KernelStack,
    spectrum: &ComplexGrid,
    rows: usize,
    cols: usize,
) -> Result<RealGrid> {
    if spectrum.shape() != (kernels.n(), kernels.m()) {
        return Err(LithoError::dim(format!(
            "spectrum {:?} does not match kernel support {}x{}",
            spectrum.shape(),
            kernels.n(),
            kernels.m()
        )));
    }
    let data = ordered_sum(kernels.order(), rows * cols, |i, acc| {
        let k = kernels.kernel(i);
        if k.as_slice().iter().all(|v| *v == Complex64::default()) {
            return;
        }
        let q = k.hadamard(spectrum).expect("shape checked");
        let field = ifft2_centered(&center_embed(&q, rows, cols).expect("dims checked"));
        for (a, e) in acc.iter_mut().zip(field.as_slice()) {
            *a += e.norm_sqr();
        }
    });
    RealGrid::from_vec(rows, cols, data)
}

/// Abbe imaging: `sum_s w_s |F^-1(H(f + f_s, g + g_s) . F(M))|^2`.
pub fn abbe_image(
    src: &SourceMap,
    pupil: &PupilFunction,
    mask: &RealGrid,
    pixel_nm: f64,
) -> Result<RealGrid> {
    if src.is_empty() {
        return Err(LithoError::config("empty source"));
    }
    if !(pixel_nm > 0.0) {
        return Err(LithoError::config(format!("pixel size must be positive, got {pixel_nm}")));
    }
    let (rows, cols) = mask.shape();
    let spectrum = fft2_centered(&ComplexGrid::from_real(mask));
    let (step_r, step_c) = (freq_step(rows, pixel_nm), freq_step(cols, pixel_nm));
    let (hr, hc) = ((rows / 2) as f64, (cols / 2) as f64);

    let data = ordered_sum(src.len(), rows * cols, |s, acc| {
        let p = src.points[s];
        let mut filtered = ComplexGrid::zeros(rows, cols);
        let mut any = false;
        for i in 0..rows {
            let f = (i as f64 - hr) * step_r + p.f;
            for j in 0..cols {
                let g = (j as f64 - hc) * step_c + p.g;
                let h = pupil.transmission(f, g);
                if h != Complex64::default() {
                    filtered[(i, j)] = h * spectrum[(i, j)];
                    any = true;
                }
            }
        }
        if !any {
            return;
        }
        let field = ifft2_centered(&filtered);
        for (a, e) in acc.iter_mut().zip(field.as_slice()) {
            *a += p.weight * e.norm_sqr();
        }
    });
    RealGrid::from_vec(rows, cols, data)
}

/// Constant-threshold resist: 1 where `aerial >= threshold`, else 0.
pub fn resist_image(aerial: &RealGrid, threshold: f64) -> RealGrid {
    aerial.map(|&v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Relative L2 distance `||a - b|| / ||b||`.
pub fn relative_l2(a: &RealGrid, b: &RealGrid) -> f64 {
    let num: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let den: f64 = b.as_slice().iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
