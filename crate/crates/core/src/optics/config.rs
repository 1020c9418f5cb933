use serde::{Deserialize, Serialize};

use crate::error::{LithoError, Result};

/// Largest numerical aperture accepted (water immersion).
pub const MAX_NUMERICAL_APERTURE: f64 = 1.44;

/// Illumination shape in pupil-normalized (sigma) units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceShape {
    Point,
    Circular { sigma: f64 },
    Annular { sigma_inner: f64, sigma_outer: f64 },
}

impl SourceShape {
    /// `(sigma_inner, sigma_outer)`; a point source is `(0, 0)`.
    pub fn sigma_range(&self) -> (f64, f64) {
        match *self {
            SourceShape::Point => (0.0, 0.0),
            SourceShape::Circular { sigma } => (0.0, sigma),
            SourceShape::Annular {
                sigma_inner,
                sigma_outer,
            } => (sigma_inner, sigma_outer),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingConfig {
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    #[serde(default = "default_na")]
    pub numerical_aperture: f64,
    #[serde(default = "default_pixel")]
    pub pixel_size_nm: f64,
    #[serde(default = "default_source")]
    pub source: SourceShape,
    /// Samples per axis across the source disk.
    #[serde(default = "default_source_grid")]
    pub source_grid: usize,
}

fn default_wavelength() -> f64 {
    193.0
}
fn default_na() -> f64 {
    1.35
}
fn default_pixel() -> f64 {
    1.0
}
fn default_source() -> SourceShape {
    SourceShape::Annular {
        sigma_inner: 0.5,
        sigma_outer: 0.8,
    }
}
fn default_source_grid() -> usize {
    17
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: default_wavelength(),
            numerical_aperture: default_na(),
            pixel_size_nm: default_pixel(),
            source: default_source(),
            source_grid: default_source_grid(),
        }
    }
}

impl ImagingConfig {
    /// Desk-scale setup used by the examples and acceptance runs: 4 nm pixels so a
    /// 256 px tile spans about one micron.
    pub fn desk_scale() -> Self {
        Self {
            pixel_size_nm: 4.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0 && self.wavelength_nm.is_finite()) {
            return Err(LithoError::config(format!(
                "wavelength must be positive, got {}",
                self.wavelength_nm
            )));
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture <= MAX_NUMERICAL_APERTURE) {
            return Err(LithoError::config(format!(
                "numerical aperture must lie in (0, {MAX_NUMERICAL_APERTURE}], got {}",
                self.numerical_aperture
            )));
        }
        if !(self.pixel_size_nm > 0.0 && self.pixel_size_nm.is_finite()) {
            return Err(LithoError::config(format!(
                "pixel size must be positive, got {}",
                self.pixel_size_nm
            )));
        }
        match self.source {
            SourceShape::Point => {}
            SourceShape::Circular { sigma } => {
                if !(sigma > 0.0 && sigma <= 1.0) {
                    return Err(LithoError::config(format!(
                        "circular sigma must lie in (0, 1], got {sigma}"
                    )));
                }
            }
            SourceShape::Annular {
                sigma_inner,
                sigma_outer,
            } => {
                if !(0.0 <= sigma_inner && sigma_inner < sigma_outer && sigma_outer <= 1.0) {
                    return Err(LithoError::config(format!(
                        "annular sigmas must satisfy 0 <= inner < outer <= 1, got ({sigma_inner}, {sigma_outer})"
                    )));
                }
            }
        }
        if !matches!(self.source, SourceShape::Point) && self.source_grid == 0 {
            return Err(LithoError::config("source_grid must be at least 1"));
        }
        Ok(())
    }

    /// Pupil cutoff `NA / lambda` in 1/nm.
    pub fn cutoff_frequency(&self) -> f64 {
        self.numerical_aperture / self.wavelength_nm
    }

    /// Half-pitch resolution limit `0.5 * lambda / NA` in nm.
    pub fn resolution_nm(&self) -> f64 {
        0.5 * self.wavelength_nm / self.numerical_aperture
    }
}
