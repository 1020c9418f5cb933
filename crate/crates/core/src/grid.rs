//! Dense 2D grids and the centered FFT conventions shared by every module.
//!
//! Spectra are stored "centered": the zero-frequency bin of an `rows x cols`
//! spectrum lives at `(rows / 2, cols / 2)` for even and odd sizes alike.
//! The forward transform is unnormalized; the inverse carries `1 / (rows * cols)`.

use std::cell::RefCell;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{LithoError, Result};

/// Row-major complex grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// Row-major real grid (masks, aerial and resist images).
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

macro_rules! grid_common {
    ($ty:ident, $elem:ty) => {
        impl $ty {
            pub fn zeros(rows: usize, cols: usize) -> Self {
                assert!(rows >= 1 && cols >= 1, "grid dimensions must be positive");
                Self {
                    rows,
                    cols,
                    data: vec![<$elem>::default(); rows * cols],
                }
            }

            pub fn from_vec(rows: usize, cols: usize, data: Vec<$elem>) -> Result<Self> {
                if rows == 0 || cols == 0 {
                    return Err(LithoError::dim(format!("empty grid {rows}x{cols}")));
                }
                if data.len() != rows * cols {
                    return Err(LithoError::dim(format!(
                        "buffer of length {} cannot hold a {rows}x{cols} grid",
                        data.len()
                    )));
                }
                Ok(Self { rows, cols, data })
            }

            pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> $elem) -> Self {
                let mut g = Self::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        g.data[r * cols + c] = f(r, c);
                    }
                }
                g
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
            pub fn shape(&self) -> (usize, usize) {
                (self.rows, self.cols)
            }

            #[inline]
            pub fn len(&self) -> usize {
                self.data.len()
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            #[inline]
            pub fn as_slice(&self) -> &[$elem] {
                &self.data
            }

            #[inline]
            pub fn as_mut_slice(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<$elem> {
                self.data
            }

            pub fn map(&self, f: impl FnMut(&$elem) -> $elem) -> Self {
                Self {
                    rows: self.rows,
                    cols: self.cols,
                    data: self.data.iter().map(f).collect(),
                }
            }

            pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
                if self.shape() != other.shape() {
                    return Err(LithoError::dim(format!(
                        "shape mismatch: {:?} vs {:?}",
                        self.shape(),
                        other.shape()
                    )));
                }
                Ok(())
            }
        }

        impl Index<(usize, usize)> for $ty {
            type Output = $elem;

            #[inline]
            fn index(&self, (r, c): (usize, usize)) -> &$elem {
                debug_assert!(r < self.rows && c < self.cols);
                &self.data[r * self.cols + c]
            }
        }

        impl IndexMut<(usize, usize)> for $ty {
            #[inline]
            fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut $elem {
                debug_assert!(r < self.rows && c < self.cols);
                &mut self.data[r * self.cols + c]
            }
        }
    };
}

grid_common!(ComplexGrid, Complex64);
grid_common!(RealGrid, f64);

impl ComplexGrid {
    pub fn from_real(g: &RealGrid) -> Self {
        Self {
            rows: g.rows,
            cols: g.cols,
            data: g.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Elementwise product with a grid of the same shape.
    pub fn hadamard(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn scale(&self, s: Complex64) -> ComplexGrid {
        self.map(|v| v * s)
    }

    /// Flattened inner product `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexGrid) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn real_part(&self) -> RealGrid {
        RealGrid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.re).collect(),
        }
    }
}

impl RealGrid {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut g = Self::zeros(rows, cols);
        g.data.fill(value);
        g
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// True when every pixel is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Circular shift: output pixel `(r + dr, c + dc)` takes input pixel `(r, c)`.
    pub fn roll(&self, dr: isize, dc: isize) -> RealGrid {
        let (rows, cols) = self.shape();
        let mut out = RealGrid::zeros(rows, cols);
        for r in 0..rows {
            let rr = (r as isize + dr).rem_euclid(rows as isize) as usize;
            for c in 0..cols {
                let cc = (c as isize + dc).rem_euclid(cols as isize) as usize;
                out.data[rr * cols + cc] = self.data[r * cols + c];
            }
        }
        out
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized in-place 2D DFT of a row-major buffer.
pub(crate) fn fft2_in_place(rows: usize, cols: usize, buf: &mut [Complex64], direction: FftDirection) {
    debug_assert_eq!(buf.len(), rows * cols);
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(cols, direction), p.plan_fft(rows, direction))
    });

    let scratch_len = row_fft
        .get_inplace_scratch_len()
        .max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::default(); scratch_len];
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    if rows > 1 {
        let mut column = vec![Complex64::default(); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = buf[r * cols + c];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..rows {
                buf[r * cols + c] = column[r];
            }
        }
    }
}

/// Moves index 0 to `(rows / 2, cols / 2)`.
pub fn fftshift<T: Copy + Default>(rows: usize, cols: usize, data: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    let (hr, hc) = (rows / 2, cols / 2);
    for r in 0..rows {
        let rr = (r + hr) % rows;
        for c in 0..cols {
            out[rr * cols + (c + hc) % cols] = data[r * cols + c];
        }
    }
    out
}

/// Exact inverse of [`fftshift`] for both even and odd sizes.
pub fn ifftshift<T: Copy + Default>(rows: usize, cols: usize, data: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    let (hr, hc) = (rows / 2, cols / 2);
    for r in 0..rows {
        let rr = (r + hr) % rows;
        for c in 0..cols {
            out[r * cols + c] = data[rr * cols + (c + hc) % cols];
        }
    }
    out
}

/// `fftshift(fft2(g))`, unnormalized.
pub fn fft2_centered(g: &ComplexGrid) -> ComplexGrid {
    let (rows, cols) = g.shape();
    let mut buf = g.data.clone();
    fft2_in_place(rows, cols, &mut buf, FftDirection::Forward);
    ComplexGrid {
        rows,
        cols,
        data: fftshift(rows, cols, &buf),
    }
}

/// `ifft2(ifftshift(g))` including the `1 / (rows * cols)` factor.
pub fn ifft2_centered(g: &ComplexGrid) -> ComplexGrid {
    let (rows, cols) = g.shape();
    let mut buf = ifftshift(rows, cols, &g.data);
    fft2_in_place(rows, cols, &mut buf, FftDirection::Inverse);
    let norm = 1.0 / (rows * cols) as f64;
    for v in &mut buf {
        *v *= norm;
    }
    ComplexGrid { rows, cols, data: buf }
}

fn check_odd_window(n: usize, m: usize) -> Result<()> {
    if n.is_multiple_of(2) || m.is_multiple_of(2) {
        return Err(LithoError::dim(format!("window {n}x{m} must have odd sides")));
    }
    Ok(())
}

/// Central `n x m` window of a centered spectrum; its middle bin is the DC bin of `g`.
pub fn center_crop(g: &ComplexGrid, n: usize, m: usize) -> Result<ComplexGrid> {
    check_odd_window(n, m)?;
    if n > g.rows || m > g.cols {
        return Err(LithoError::dim(format!(
            "cannot crop {n}x{m} out of {}x{}",
            g.rows, g.cols
        )));
    }
    let r0 = g.rows / 2 - n / 2;
    let c0 = g.cols / 2 - m / 2;
    let mut out = ComplexGrid::zeros(n, m);
    for r in 0..n {
        let src = (r0 + r) * g.cols + c0;
        out.data[r * m..(r + 1) * m].copy_from_slice(&g.data[src..src + m]);
    }
    Ok(out)
}

/// Zero-pads an odd-sized centered grid to `n x m`, aligning its middle bin with the new DC bin.
pub fn center_embed(g: &ComplexGrid, n: usize, m: usize) -> Result<ComplexGrid> {
    check_odd_window(g.rows, g.cols)?;
    if n < g.rows || m < g.cols {
        return Err(LithoError::dim(format!(
            "cannot embed {}x{} into {n}x{m}",
            g.rows, g.cols
        )));
    }
    let r0 = n / 2 - g.rows / 2;
    let c0 = m / 2 - g.cols / 2;
    let mut out = ComplexGrid::zeros(n, m);
    for r in 0..g.rows {
        let dst = (r0 + r) * m + c0;
        out.data[dst..dst + g.cols].copy_from_slice(&g.data[r * g.cols..(r + 1) * g.cols]);
    }
    Ok(out)
}

pub fn magnitude_sq(g: &ComplexGrid) -> RealGrid {
    RealGrid {
        rows: g.rows,
        cols: g.cols,
        data: g.data.iter().map(|v| v.norm_sqr()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rows: usize, cols: usize, seed: u64) -> ComplexGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexGrid::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn max_abs_diff(a: &ComplexGrid, b: &ComplexGrid) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn centered_impulse_has_unit_magnitude_spectrum() {
        let mut g = ComplexGrid::zeros(8, 8);
        g[(4, 4)] = Complex64::new(1.0, 0.0);
        let s = fft2_centered(&g);
        for v in s.as_slice() {
            assert!((v.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_transforms_to_dc() {
        let g = ComplexGrid::from_fn(4, 4, |_, _| Complex64::new(1.0, 0.0));
        let s = fft2_centered(&g);
        for r in 0..4 {
            for c in 0..4 {
                let expected = if (r, c) == (2, 2) { 16.0 } else { 0.0 };
                assert!((s[(r, c)] - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_random() {
        let g = random_grid(16, 16, 7);
        let back = ifft2_centered(&fft2_centered(&g));
        assert!(max_abs_diff(&g, &back) < 1e-12);
    }

    #[test]
    fn round_trip_odd_and_rectangular() {
        for &(r, c) in &[(5, 7), (9, 4), (1, 6), (3, 1)] {
            let g = random_grid(r, c, (r * 31 + c) as u64);
            let back = ifft2_centered(&fft2_centered(&g));
            assert!(max_abs_diff(&g, &back) < 1e-12, "{r}x{c}");
        }
    }

    #[test]
    fn centered_delta_inverts_to_ones() {
        let mut g = ComplexGrid::zeros(6, 5);
        g[(3, 2)] = Complex64::new(30.0, 0.0);
        let img = ifft2_centered(&g);
        for v in img.as_slice() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-13);
        }
        let z = ifft2_centered(&ComplexGrid::zeros(4, 4));
        assert!(z.as_slice().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn parseval() {
        let g = random_grid(16, 16, 3);
        let s = fft2_centered(&g);
        let lhs = g.norm_sqr();
        let rhs = s.norm_sqr() / 256.0;
        assert!((lhs - rhs).abs() / lhs < 1e-12);
    }

    #[test]
    fn shift_is_inverted_by_ifftshift() {
        let data: Vec<u32> = (0..35).collect();
        let s = fftshift(5, 7, &data);
        assert_eq!(s[2 * 7 + 3], 0);
        assert_eq!(ifftshift(5, 7, &s), data);
    }

    #[test]
    fn crop_of_dc_only_grid() {
        let mut g = ComplexGrid::zeros(8, 8);
        g[(4, 4)] = Complex64::new(2.0, -1.0);
        let c = center_crop(&g, 5, 5).unwrap();
        assert_eq!(c[(2, 2)], Complex64::new(2.0, -1.0));
        assert_eq!(c.norm_sqr(), 5.0);
    }

    #[test]
    fn identity_crop_and_embed() {
        let g = random_grid(7, 5, 11);
        assert_eq!(center_crop(&g, 7, 5).unwrap(), g);
        assert_eq!(center_embed(&g, 7, 5).unwrap(), g);
        let big = center_embed(&g, 12, 9).unwrap();
        assert_eq!(center_crop(&big, 7, 5).unwrap(), g);
        assert!((big.norm_sqr() - g.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn embed_places_center_on_dc() {
        let mut k = ComplexGrid::zeros(3, 3);
        k[(1, 1)] = Complex64::new(1.0, 0.0);
        let e = center_embed(&k, 6, 6).unwrap();
        assert_eq!(e[(3, 3)], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn crop_and_embed_reject_bad_dims() {
        let g = random_grid(8, 8, 1);
        assert!(matches!(center_crop(&g, 4, 5), Err(LithoError::Dimension(_))));
        assert!(matches!(center_crop(&g, 9, 5), Err(LithoError::Dimension(_))));
        let k = random_grid(5, 5, 2);
        assert!(matches!(center_embed(&k, 4, 8), Err(LithoError::Dimension(_))));
        assert!(matches!(center_embed(&g, 16, 16), Err(LithoError::Dimension(_))));
    }

    #[test]
    fn magnitude_square_values() {
        let mut g = ComplexGrid::zeros(2, 2);
        g[(0, 1)] = Complex64::new(3.0, 4.0);
        let m = magnitude_sq(&g);
        assert_eq!(m[(0, 1)], 25.0);
        assert_eq!(m.sum(), 25.0);

        let r = random_grid(6, 6, 5);
        let m = magnitude_sq(&r);
        for (v, z) in m.as_slice().iter().zip(r.as_slice()) {
            assert!((v - (z * z.conj()).re).abs() < 1e-15);
            assert!(*v >= 0.0);
        }
    }

    #[test]
    fn from_vec_validates_length() {
        assert!(RealGrid::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(RealGrid::from_vec(0, 3, vec![]).is_err());
        assert!(RealGrid::from_vec(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn roll_moves_pixels() {
        let mut g = RealGrid::zeros(4, 5);
        g[(0, 0)] = 1.0;
        let s = g.roll(-1, 2);
        assert_eq!(s[(3, 2)], 1.0);
        assert_eq!(s.sum(), 1.0);
    }
}
