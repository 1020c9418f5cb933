//! Kernel stacks and the `NKRN` binary container.
//!
//! Layout (all integers u32 little-endian, floats f64 little-endian):
//!
//! ```text
//! "NKRN" | version=1 | r | n | m | r*n*m (re, im) pairs | trailer_len | JSON trailer
//! ```
//!
//! Kernels are written in stack order, each row-major. The JSON trailer holds
//! the imaging metadata and provenance tag.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LithoError, Result};
use crate::grid::ComplexGrid;
use crate::optics::ImagingConfig;

pub const NKRN_MAGIC: &[u8; 4] = b"NKRN";
pub const NKRN_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub wavelength_nm: f64,
    pub numerical_aperture: f64,
    pub pixel_size_nm: f64,
    pub provenance: Provenance,
}

impl KernelMeta {
    pub fn from_config(cfg: &ImagingConfig, provenance: Provenance) -> Self {
        Self {
            wavelength_nm: cfg.wavelength_nm,
            numerical_aperture: cfg.numerical_aperture,
            pixel_size_nm: cfg.pixel_size_nm,
            provenance,
        }
    }
}

/// `r` complex kernels of shape `n x m` with eigenvalue weights absorbed.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelStack {
    n: usize,
    m: usize,
    kernels: Vec<ComplexGrid>,
    pub meta: KernelMeta,
}

impl KernelStack {
    pub fn new(n: usize, m: usize, kernels: Vec<ComplexGrid>, meta: KernelMeta) -> Result<Self> {
        if n.is_multiple_of(2) || m.is_multiple_of(2) {
            return Err(LithoError::dim(format!("kernel dims {n}x{m} must be odd")));
        }
        if kernels.is_empty() {
            return Err(LithoError::dim("a kernel stack needs at least one kernel"));
        }
        if let Some(k) = kernels.iter().find(|k| k.shape() != (n, m)) {
            return Err(LithoError::dim(format!(
                "kernel of shape {:?} in a {n}x{m} stack",
                k.shape()
            )));
        }
        Ok(Self { n, m, kernels, meta })
    }

    pub fn order(&self) -> usize {
        self.kernels.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kernel(&self, i: usize) -> &ComplexGrid {
        &self.kernels[i]
    }

    pub fn kernels(&self) -> &[ComplexGrid] {
        &self.kernels
    }

    /// Leading `r` kernels.
    pub fn truncated(&self, r: usize) -> Result<KernelStack> {
        if r == 0 || r > self.order() {
            return Err(LithoError::dim(format!(
                "cannot truncate a stack of order {} to {r}",
                self.order()
            )));
        }
        Ok(Self {
            n: self.n,
            m: self.m,
            kernels: self.kernels[..r].to_vec(),
            meta: self.meta.clone(),
        })
    }

    /// Intensity a fully open mask produces: `sum_i |K_i(DC)|^2`.
    pub fn clear_field_intensity(&self) -> f64 {
        let dc = (self.n / 2, self.m / 2);
        self.kernels.iter().map(|k| k[dc].norm_sqr()).sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(NKRN_MAGIC)?;
        for v in [NKRN_VERSION, self.order() as u32, self.n as u32, self.m as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.order() * self.n * self.m * 16);
        for k in &self.kernels {
            for z in k.as_slice() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        let trailer = serde_json::to_vec(&self.meta)?;
        w.write_all(&(trailer.len() as u32).to_le_bytes())?;
        w.write_all(&trailer)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| LithoError::format("truncated NKRN header"))?;
        if &magic != NKRN_MAGIC {
            return Err(LithoError::format(format!("bad NKRN magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != NKRN_VERSION {
            return Err(LithoError::format(format!("unsupported NKRN version {version}")));
        }
        let order = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let m = read_u32(r)? as usize;
        if order == 0 || n == 0 || m == 0 || order.saturating_mul(n).saturating_mul(m) > 1 << 28 {
            return Err(LithoError::format(format!(
                "implausible NKRN dims r={order} n={n} m={m}"
            )));
        }
        let mut kernels = Vec::with_capacity(order);
        let mut raw = vec![0u8; n * m * 16];
        for _ in 0..order {
            r.read_exact(&mut raw)
                .map_err(|_| LithoError::format("truncated NKRN payload"))?;
            let data = raw
                .chunks_exact(16)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect();
            kernels.push(ComplexGrid::from_vec(n, m, data)?);
        }
        let len = read_u32(r)? as usize;
        let mut trailer = vec![0u8; len];
        r.read_exact(&mut trailer)
            .map_err(|_| LithoError::format("truncated NKRN trailer"))?;
        let meta: KernelMeta = serde_json::from_slice(&trailer)
            .map_err(|e| LithoError::format(format!("bad NKRN trailer: {e}")))?;
        Self::new(n, m, kernels, meta).map_err(|e| LithoError::format(e.to_string()))
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

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| LithoError::format("unexpected end of file"))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> KernelMeta {
        KernelMeta {
            wavelength_nm: 193.0,
            numerical_aperture: 1.35,
            pixel_size_nm: 4.0,
            provenance: Provenance::Learned,
        }
    }

    fn stack() -> KernelStack {
        let ks = (0..3)
            .map(|i| {
                ComplexGrid::from_fn(3, 5, |a, b| {
                    Complex64::new((i * 15 + a * 5 + b) as f64 * 0.1, -(a as f64) / 7.0)
                })
            })
            .collect();
        KernelStack::new(3, 5, ks, meta()).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        stack().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"NKRN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 5);
        // First kernel value (0, 0) then (0.1, 0).
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), 0.1);
        let payload_end = 20 + 3 * 15 * 16;
        let len = u32::from_le_bytes(buf[payload_end..payload_end + 4].try_into().unwrap());
        let trailer: serde_json::Value =
            serde_json::from_slice(&buf[payload_end + 4..]).unwrap();
        assert_eq!(len as usize, buf.len() - payload_end - 4);
        assert_eq!(trailer["provenance"], "learned");
    }

    #[test]
    fn round_trip() {
        let s = stack();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(KernelStack::read_from(&mut buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn corrupt_magic_and_truncation() {
        let mut buf = Vec::new();
        stack().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            KernelStack::read_from(&mut bad.as_slice()),
            Err(LithoError::Format(_))
        ));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            KernelStack::read_from(&mut &short[..]),
            Err(LithoError::Format(_))
        ));
    }

    #[test]
    fn rejects_even_or_mismatched_kernels() {
        let k = ComplexGrid::zeros(4, 5);
        assert!(KernelStack::new(4, 5, vec![k], meta()).is_err());
        let k = ComplexGrid::zeros(3, 3);
        assert!(KernelStack::new(3, 5, vec![k], meta()).is_err());
        assert!(KernelStack::new(3, 5, vec![], meta()).is_err());
    }
}
