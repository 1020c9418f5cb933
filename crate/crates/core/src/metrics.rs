//! Aerial-image and resist-image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{LithoError, Result};
use crate::grid::RealGrid;

/// Reported PSNR for an exact match.
pub const PSNR_SENTINEL_DB: f64 = 200.0;

pub fn mse(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(peak^2 / mse)`, clamped to the sentinel when `mse == 0`.
pub fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_SENTINEL_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_SENTINEL_DB)
}

/// PSNR with the peak taken from the ground truth `a`.
pub fn psnr(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    Ok(psnr_from_mse(a.max(), mse(a, b)?))
}

pub fn max_error(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Pixel counts `[class][class]`: `c[t][p]` pixels of truth class `t` predicted as `p`.
fn confusion(z: &RealGrid, zh: &RealGrid) -> Result<[[u64; 2]; 2]> {
    z.check_same_shape(zh)?;
    if !z.is_binary() || !zh.is_binary() {
        return Err(LithoError::data("resist metrics need binary images"));
    }
    let mut c = [[0u64; 2]; 2];
    for (t, p) in z.as_slice().iter().zip(zh.as_slice()) {
        c[(*t == 1.0) as usize][(*p == 1.0) as usize] += 1;
    }
    Ok(c)
}

/// Mean intersection-over-union over the two classes. A class absent from
/// both images scores 1.
pub fn miou(z: &RealGrid, zh: &RealGrid) -> Result<f64> {
    let c = confusion(z, zh)?;
    let iou = |k: usize| {
        let inter = c[k][k];
        let union = c[k][0] + c[k][1] + c[0][k] + c[1][k] - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    Ok((iou(0) + iou(1)) / 2.0)
}

/// Mean per-class recall over the classes present in the truth `z`.
pub fn mpa(z: &RealGrid, zh: &RealGrid) -> Result<f64> {
    let c = confusion(z, zh)?;
    let (mut sum, mut present) = (0.0, 0);
    for (k, row) in c.iter().enumerate() {
        let total = row[0] + row[1];
        if total > 0 {
            sum += row[k] as f64 / total as f64;
            present += 1;
        }
    }
    Ok(sum / present as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub name: String,
    pub mse: f64,
    pub psnr_db: f64,
    pub max_error: f64,
    pub miou: f64,
    pub mpa: f64,
}

impl SampleMetrics {
    pub fn compute(
        name: impl Into<String>,
        aerial: &RealGrid,
        predicted: &RealGrid,
        resist: &RealGrid,
        predicted_resist: &RealGrid,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            mse: mse(aerial, predicted)?,
            psnr_db: psnr(aerial, predicted)?,
            max_error: max_error(aerial, predicted)?,
            miou: miou(resist, predicted_resist)?,
            mpa: mpa(resist, predicted_resist)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub mean: SampleMetrics,
    pub count: usize,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleMetrics>) -> Result<Self> {
        if samples.is_empty() {
            return Err(LithoError::data("cannot summarize an empty evaluation"));
        }
        let k = samples.len() as f64;
        let avg = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / k;
        let mean = SampleMetrics {
            name: "mean".into(),
            mse: avg(|s| s.mse),
            psnr_db: avg(|s| s.psnr_db),
            max_error: avg(|s| s.max_error),
            miou: avg(|s| s.miou),
            mpa: avg(|s| s.mpa),
        };
        Ok(Self {
            count: samples.len(),
            samples,
            mean,
        })
    }

    /// One row per sample followed by the mean row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.samples.iter().chain(std::iter::once(&self.mean)) {
            w.serialize(row).map_err(|e| LithoError::format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| LithoError::format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
