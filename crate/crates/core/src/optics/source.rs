use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{ImagingConfig, SourceShape};
use crate::error::{LithoError, Result};

/// Relative slack on the pupil edge so grid points computed as `i * step`
/// land inside when they sit on the cutoff circle analytically.
pub(crate) const PUPIL_EDGE_TOL: f64 = 1e-9;

/// Ideal circular projector pupil: transmission 1 inside `|f| <= NA / lambda`, 0 outside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PupilFunction {
    pub cutoff_frequency: f64,
}

impl PupilFunction {
    #[inline]
    pub fn transmission(&self, f: f64, g: f64) -> Complex64 {
        let limit = self.cutoff_frequency * self.cutoff_frequency * (1.0 + PUPIL_EDGE_TOL);
        if f * f + g * g <= limit {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

pub fn build_pupil(cfg: &ImagingConfig) -> Result<PupilFunction> {
    cfg.validate()?;
    Ok(PupilFunction {
        cutoff_frequency: cfg.cutoff_frequency(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourcePoint {
    /// Spatial frequencies in 1/nm.
    pub f: f64,
    pub g: f64,
    pub weight: f64,
}

/// Discrete illumination: point frequencies with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceMap {
    pub points: Vec<SourcePoint>,
}

impl SourceMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }
}

/// Samples the source region on a uniform Cartesian grid spanning
/// `[-sigma_outer, sigma_outer]` per axis, keeping points with
/// `sigma_inner <= rho <= sigma_outer`. Weights are uniform and normalized.
pub fn build_source(cfg: &ImagingConfig) -> Result<SourceMap> {
    cfg.validate()?;
    let scale = cfg.cutoff_frequency();
    if let SourceShape::Point = cfg.source {
        return Ok(SourceMap {
            points: vec![SourcePoint {
                f: 0.0,
                g: 0.0,
                weight: 1.0,
            }],
        });
    }

    let (inner, outer) = cfg.source.sigma_range();
    let samples = cfg.source_grid;
    let coord = |i: usize| -> f64 {
        if samples == 1 {
            0.0
        } else {
            outer * (2.0 * i as f64 / (samples - 1) as f64 - 1.0)
        }
    };

    let tol = 1e-12;
    let mut sigmas = Vec::new();
    for i in 0..samples {
        for j in 0..samples {
            let (u, v) = (coord(i), coord(j));
            let rho = (u * u + v * v).sqrt();
            if rho >= inner - tol && rho <= outer + tol {
                sigmas.push((u, v));
            }
        }
    }
    if sigmas.is_empty() {
        return Err(LithoError::config(format!(
            "source grid of {samples} samples per axis places no point inside sigma range ({inner}, {outer})"
        )));
    }
    let w = 1.0 / sigmas.len() as f64;
    Ok(SourceMap {
        points: sigmas
            .into_iter()
            .map(|(u, v)| SourcePoint {
                f: u * scale,
                g: v * scale,
                weight: w,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(source: SourceShape, grid: usize) -> ImagingConfig {
        ImagingConfig {
            source,
            source_grid: grid,
            ..ImagingConfig::default()
        }
    }

    #[test]
    fn pupil_cutoff() {
        let p = build_pupil(&ImagingConfig::default()).unwrap();
        assert!((p.cutoff_frequency - 6.994_818_652_849_741e-3).abs() < 1e-15);
        assert_eq!(p.transmission(0.0, 0.0).re, 1.0);
        let c = 1.01 * p.cutoff_frequency;
        assert_eq!(p.transmission(c, 0.0).re, 0.0);
        assert_eq!(p.transmission(c / 2f64.sqrt(), c / 2f64.sqrt()).re, 0.0);
        assert_eq!(p.transmission(p.cutoff_frequency, 0.0).re, 1.0);
    }

    #[test]
    fn point_source_is_single_dc_point() {
        let s = build_source(&cfg(SourceShape::Point, 9)).unwrap();
        assert_eq!(
            s.points,
            vec![SourcePoint {
                f: 0.0,
                g: 0.0,
                weight: 1.0
            }]
        );
    }

    #[test]
    fn circular_source_fills_disk() {
        let c = cfg(SourceShape::Circular { sigma: 1.0 }, 9);
        let s = build_source(&c).unwrap();
        let scale = c.cutoff_frequency();
        let w0 = s.points[0].weight;
        for p in &s.points {
            assert!((p.f * p.f + p.g * p.g).sqrt() <= scale * (1.0 + 1e-12));
            assert_eq!(p.weight, w0);
        }
        assert!((s.total_weight() - 1.0).abs() < 1e-12);
        // 9x9 grid over [-1, 1]: count of (i, j) in -4..=4 with i^2 + j^2 <= 16.
        let expected = (-4i32..=4)
            .flat_map(|i| (-4i32..=4).map(move |j| (i, j)))
            .filter(|(i, j)| i * i + j * j <= 16)
            .count();
        assert_eq!(s.len(), expected);
    }

    #[test]
    fn annular_count_matches_grid_scan() {
        let s = build_source(&cfg(
            SourceShape::Annular {
                sigma_inner: 0.5,
                sigma_outer: 0.8,
            },
            21,
        ))
        .unwrap();
        // Brute-force scan of the 21x21 grid over [-0.8, 0.8].
        let mut count = 0;
        for i in 0..21 {
            for j in 0..21 {
                let u = -0.8 + 1.6 * i as f64 / 20.0;
                let v = -0.8 + 1.6 * j as f64 / 20.0;
                let rho = (u * u + v * v).sqrt();
                if (0.5 - 1e-12..=0.8 + 1e-12).contains(&rho) {
                    count += 1;
                }
            }
        }
        assert_eq!(s.len(), count);
        assert_eq!(count, 196);
        assert!((s.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thin_annulus_on_coarse_grid_is_an_error() {
        let r = build_source(&cfg(
            SourceShape::Annular {
                sigma_inner: 0.70,
                sigma_outer: 0.71,
            },
            2,
        ));
        // A 2-sample grid only has the four corners at rho = 0.71 * sqrt(2).
        assert!(matches!(r, Err(LithoError::Config(_))));
    }
}
