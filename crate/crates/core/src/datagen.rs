//! Synthetic Manhattan masks (via and metal styles), ground-truth rendering
//! and on-disk datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LithoError, Result};
use crate::grid::RealGrid;
use crate::io::{read_pfm, read_pgm, write_atomic, write_pfm, write_pgm};
use crate::kernels::KernelStack;
use crate::optics::{resist_image, socs_image, ImagingConfig, Oracle, DEFAULT_THRESHOLD};
use crate::trainer::Pair;

/// Eigenvalue coverage used for ground-truth kernels.
pub const TRUTH_COVERAGE: f64 = 0.99999;

const PLACEMENT_ATTEMPTS: usize = 4000;
const RESTARTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStyle {
    Via,
    Metal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub style: MaskStyle,
    pub image_px: usize,
    pub pixel_size_nm: f64,
    pub min_feature_nm: f64,
    pub min_space_nm: f64,
    /// Target open-area fraction.
    pub density: f64,
    pub seed: u64,
}

impl MaskSpec {
    /// Desk-scale defaults: 256 px tiles at 4 nm, features at twice the
    /// resolution element of the default optics.
    pub fn desk(style: MaskStyle, seed: u64) -> Self {
        let cfg = ImagingConfig::desk_scale();
        let feature = 2.0 * cfg.resolution_nm();
        Self {
            style,
            image_px: 256,
            pixel_size_nm: cfg.pixel_size_nm,
            min_feature_nm: feature,
            min_space_nm: feature,
            density: match style {
                MaskStyle::Via => 0.15,
                MaskStyle::Metal => 0.3,
            },
            seed,
        }
    }

    pub fn feature_px(&self) -> usize {
        px_ceil(self.min_feature_nm / self.pixel_size_nm)
    }

    pub fn space_px(&self) -> usize {
        px_ceil(self.min_space_nm / self.pixel_size_nm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_px == 0 || !(self.pixel_size_nm > 0.0) {
            return Err(LithoError::config("mask tiles need positive size and pixel pitch"));
        }
        if !(self.min_feature_nm > 0.0 && self.min_space_nm >= 0.0) {
            return Err(LithoError::config("min feature must be positive and min space nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(LithoError::config(format!("density {} outside [0, 1]", self.density)));
        }
        if 2 * self.feature_px() > self.image_px {
            return Err(LithoError::config(format!(
                "features of {} px do not fit a {} px tile",
                2 * self.feature_px(),
                self.image_px
            )));
        }
        Ok(())
    }

    /// Printability: features at least twice the resolution element.
    pub fn check_printable(&self, cfg: &ImagingConfig) -> Result<()> {
        let limit = 2.0 * cfg.resolution_nm();
        if self.min_feature_nm + 1e-9 < limit {
            return Err(LithoError::config(format!(
                "min feature {} nm is below twice the resolution element ({limit:.2} nm)",
                self.min_feature_nm
            )));
        }
        if (self.pixel_size_nm - cfg.pixel_size_nm).abs() > 1e-12 {
            return Err(LithoError::config("mask and imaging pixel sizes differ"));
        }
        Ok(())
    }
}

fn px_ceil(v: f64) -> usize {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as usize
    } else {
        v.ceil() as usize
    }
}

/// Half-open pixel rectangle `[r0, r1) x [c0, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }

    /// Largest axis gap between two rectangles; negative when they overlap.
    pub fn gap(&self, o: &Rect) -> isize {
        let gr = (o.r0 as isize - self.r1 as isize).max(self.r0 as isize - o.r1 as isize);
        let gc = (o.c0 as isize - self.c1 as isize).max(self.c0 as isize - o.c1 as isize);
        gr.max(gc)
    }
}

/// Connected feature made of overlapping or abutting rectangles.
pub type Feature = Vec<Rect>;

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub size: usize,
    pub features: Vec<Feature>,
}

impl Layout {
    pub fn rasterize(&self) -> RealGrid {
        let mut g = RealGrid::zeros(self.size, self.size);
        for r in self.features.iter().flatten() {
            for i in r.r0..r.r1 {
                for j in r.c0..r.c1 {
                    g[(i, j)] = 1.0;
                }
            }
        }
        g
    }

    /// Smallest gap between rectangles of different features.
    pub fn min_separation(&self) -> Option<isize> {
        let mut best: Option<isize> = None;
        for (i, a) in self.features.iter().enumerate() {
            for b in &self.features[i + 1..] {
                for ra in a {
                    for rb in b {
                        let g = ra.gap(rb);
                        best = Some(best.map_or(g, |v| v.min(g)));
                    }
                }
            }
        }
        best
    }
}

fn fits(features: &[Feature], cand: &[Rect], space: usize) -> bool {
    features
        .iter()
        .flatten()
        .all(|r| cand.iter().all(|c| c.gap(r) >= space as isize))
}

fn via_candidate(rng: &mut ChaCha8Rng, size: usize, feature: usize) -> Feature {
    let side = rng.random_range(feature..=(2 * feature).min(size));
    let r0 = rng.random_range(0..=size - side);
    let c0 = rng.random_range(0..=size - side);
    vec![Rect {
        r0,
        c0,
        r1: r0 + side,
        c1: c0 + side,
    }]
}

/// A bar along the primary axis, optionally with one jog to a parallel track.
fn metal_candidate(rng: &mut ChaCha8Rng, size: usize, feature: usize, horizontal: bool) -> Feature {
    let width = rng.random_range(feature..=(2 * feature).min(size));
    let min_len = (4 * feature).min(size);
    let len = rng.random_range(min_len..=size);
    let start = rng.random_range(0..=size - len);
    let track = rng.random_range(0..=size - width);
    let mut along = vec![(start, start + len, track)];

    if len >= 2 * min_len && rng.random_bool(0.5) {
        let split = rng.random_range(start + min_len / 2..=start + len - min_len / 2);
        let shift = rng.random_range(width..=(3 * width).max(width + 1));
        let up = rng.random_bool(0.5);
        let other = if up { track.checked_sub(shift) } else { Some(track + shift).filter(|t| t + width <= size) };
        if let Some(t2) = other {
            along = vec![(start, split + width / 2, track), (split - width / 2, start + len, t2)];
            let (lo, hi) = (track.min(t2), track.max(t2) + width);
            let jog = (split - width / 2, split + width - width / 2, lo, hi);
            let mut f: Feature = along.iter().map(|&(a, b, t)| orient(a, b, t, t + width, horizontal)).collect();
            f.push(orient(jog.0, jog.1, jog.2, jog.3, horizontal));
            return f;
        }
    }
    along.iter().map(|&(a, b, t)| orient(a, b, t, t + width, horizontal)).collect()
}

fn orient(a0: usize, a1: usize, t0: usize, t1: usize, horizontal: bool) -> Rect {
    if horizontal {
        Rect {
            r0: t0,
            r1: t1,
            c0: a0,
            c1: a1,
        }
    } else {
        Rect {
            r0: a0,
            r1: a1,
            c0: t0,
            c1: t1,
        }
    }
}

fn feature_area(f: &Feature, size: usize) -> usize {
    let g = Layout {
        size,
        features: vec![f.clone()],
    };
    g.rasterize().sum() as usize
}

/// Random placement until the target density is reached. Each restart gets a
/// fixed attempt budget; failing every restart is an error.
pub fn gen_layout(spec: &MaskSpec) -> Result<Layout> {
    spec.validate()?;
    let size = spec.image_px;
    let target = (spec.density * (size * size) as f64).ceil() as usize;
    let (feature, space) = (spec.feature_px(), spec.space_px());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut best = 0;
    for _ in 0..RESTARTS {
        let horizontal = rng.random_bool(0.5);
        let mut features: Vec<Feature> = Vec::new();
        let mut area = 0;
        for _ in 0..PLACEMENT_ATTEMPTS {
            if area >= target {
                break;
            }
            let cand = match spec.style {
                MaskStyle::Via => via_candidate(&mut rng, size, feature),
                MaskStyle::Metal => metal_candidate(&mut rng, size, feature, horizontal),
            };
            if fits(&features, &cand, space) {
                area += feature_area(&cand, size);
                features.push(cand);
            }
        }
        if area >= target {
            return Ok(Layout { size, features });
        }
        best = best.max(area);
    }
    Err(LithoError::data(format!(
        "could not reach density {} with {:?} features of {feature} px at {space} px spacing (best {:.3})",
        spec.density,
        spec.style,
        best as f64 / (size * size) as f64
    )))
}

pub fn gen_mask(spec: &MaskSpec) -> Result<RealGrid> {
    Ok(gen_layout(spec)?.rasterize())
}

/// Aerial image under `kernels` and its thresholded resist image.
pub fn render_truth(mask: &RealGrid, kernels: &KernelStack, threshold: f64) -> Result<(RealGrid, RealGrid)> {
    let aerial = socs_image(kernels, mask)?;
    let resist = resist_image(&aerial, threshold);
    Ok((aerial, resist))
}

/// Ground-truth kernels for square tiles of `size` pixels.
pub fn truth_kernels(cfg: &ImagingConfig, size: usize) -> Result<KernelStack> {
    Oracle::new(cfg, size, size)?.kernels_for_coverage(TRUTH_COVERAGE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub split: Split,
    pub seed: u64,
    pub mask: String,
    pub aerial: String,
    pub resist: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub imaging: ImagingConfig,
    pub threshold: f64,
    pub kernel_order: usize,
    pub coverage: f64,
    pub mask_spec: MaskSpec,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| LithoError::data(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LithoError::data(format!("bad manifest {}: {e}", path.display())))
    }
}

/// A loaded record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub mask: RealGrid,
    pub aerial: RealGrid,
    pub resist: RealGrid,
}

/// Reads every record of `split`, resolving paths relative to `root`.
pub fn load_split(manifest: &DatasetManifest, root: &Path, split: Split) -> Result<Vec<Sample>> {
    let recs: Vec<&Record> = manifest.split(split).collect();
    let samples = recs
        .par_iter()
        .map(|r| {
            let s = Sample {
                name: Path::new(&r.mask)
                    .file_stem()
                    .map_or_else(|| r.mask.clone(), |s| s.to_string_lossy().into_owned()),
                mask: read_pgm(root.join(&r.mask))?,
                aerial: read_pfm(root.join(&r.aerial))?,
                resist: read_pgm(root.join(&r.resist))?,
            };
            if s.mask.shape() != s.aerial.shape() || s.mask.shape() != s.resist.shape() {
                return Err(LithoError::data(format!("record {} has mismatched image sizes", r.mask)));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = samples.first() {
        if samples.iter().any(|t| t.mask.shape() != s.mask.shape()) {
            return Err(LithoError::data("dataset images do not share one size"));
        }
    }
    Ok(samples)
}

pub fn to_pairs(samples: &[Sample]) -> Vec<Pair> {
    samples
        .iter()
        .map(|s| Pair {
            mask: s.mask.clone(),
            aerial: s.aerial.clone(),
        })
        .collect()
}

/// Seeds for the two splits; train seeds are even and test seeds odd
/// offsets from a common base, so the splits never share a seed.
pub fn split_seed(base: u64, split: Split, index: usize) -> u64 {
    let parity = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(2 * index as u64 + parity)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPlan {
    pub n_train: usize,
    pub n_test: usize,
    /// Template; its `seed` is the base for per-record seeds.
    pub mask: MaskSpec,
    pub imaging: ImagingConfig,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Generates, renders and writes a dataset under `out_dir`, returning its manifest
/// (also written to `out_dir/manifest.json`).
pub fn build_dataset(plan: &DatasetPlan, out_dir: &Path) -> Result<DatasetManifest> {
    plan.imaging.validate()?;
    plan.mask.validate()?;
    plan.mask.check_printable(&plan.imaging)?;
    let kernels = truth_kernels(&plan.imaging, plan.mask.image_px)?;
    build_dataset_with_kernels(plan, &kernels, out_dir)
}

pub fn build_dataset_with_kernels(plan: &DatasetPlan, kernels: &KernelStack, out_dir: &Path) -> Result<DatasetManifest> {
    for sub in ["masks", "aerial", "resist"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let jobs: Vec<(Split, usize)> = (0..plan.n_train)
        .map(|i| (Split::Train, i))
        .chain((0..plan.n_test).map(|i| (Split::Test, i)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(split, i)| {
            let seed = split_seed(plan.mask.seed, split, i);
            let spec = MaskSpec {
                seed,
                ..plan.mask.clone()
            };
            let mask = gen_mask(&spec)?;
            let (aerial, resist) = render_truth(&mask, kernels, plan.threshold)?;
            let stem = format!(
                "{}_{i:04}",
                match split {
                    Split::Train => "train",
                    Split::Test => "test",
                }
            );
            let rec = Record {
                split,
                seed,
                mask: rel(&["masks", &format!("{stem}.pgm")]),
                aerial: rel(&["aerial", &format!("{stem}.pfm")]),
                resist: rel(&["resist", &format!("{stem}.pgm")]),
            };
            write_pgm(out_dir.join(&rec.mask), &mask)?;
            write_pfm(out_dir.join(&rec.aerial), &aerial)?;
            write_pgm(out_dir.join(&rec.resist), &resist)?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        imaging: plan.imaging.clone(),
        threshold: plan.threshold,
        kernel_order: kernels.order(),
        coverage: TRUTH_COVERAGE,
        mask_spec: plan.mask.clone(),
        records,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn rel(parts: &[&str]) -> String {
    parts.iter().collect::<PathBuf>().to_string_lossy().into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(style: MaskStyle, seed: u64) -> MaskSpec {
        MaskSpec {
            image_px: 96,
            min_feature_nm: 40.0,
            min_space_nm: 32.0,
            density: 0.12,
            ..MaskSpec::desk(style, seed)
        }
    }

    #[test]
    fn zero_density_is_empty() {
        let spec = MaskSpec {
            density: 0.0,
            ..small(MaskStyle::Via, 1)
        };
        assert_eq!(gen_mask(&spec).unwrap().sum(), 0.0);
    }

    #[test]
    fn spacing_rules_hold() {
        for style in [MaskStyle::Via, MaskStyle::Metal] {
            for seed in 0..20 {
                let spec = small(style, seed);
                let layout = gen_layout(&spec).unwrap();
                if let Some(gap) = layout.min_separation() {
                    assert!(gap >= spec.space_px() as isize, "{style:?} seed {seed}: gap {gap}");
                }
                let mask = layout.rasterize();
                assert!(mask.is_binary());
                assert!(mask.mean() >= spec.density);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for style in [MaskStyle::Via, MaskStyle::Metal] {
            assert_eq!(gen_mask(&small(style, 5)).unwrap(), gen_mask(&small(style, 5)).unwrap());
            assert_ne!(gen_mask(&small(style, 5)).unwrap(), gen_mask(&small(style, 6)).unwrap());
        }
    }

    #[test]
    fn unsatisfiable_density_is_an_error() {
        let spec = MaskSpec {
            density: 0.9,
            ..small(MaskStyle::Via, 2)
        };
        assert!(matches!(gen_mask(&spec), Err(LithoError::Data(_))));
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let train: Vec<u64> = (0..500).map(|i| split_seed(42, Split::Train, i)).collect();
        let test: Vec<u64> = (0..500).map(|i| split_seed(42, Split::Test, i)).collect();
        assert!(train.iter().all(|s| !test.contains(s)));
    }

    #[test]
    fn printability_rule() {
        let cfg = ImagingConfig::desk_scale();
        assert!(MaskSpec::desk(MaskStyle::Via, 0).check_printable(&cfg).is_ok());
        let thin = MaskSpec {
            min_feature_nm: 60.0,
            ..MaskSpec::desk(MaskStyle::Via, 0)
        };
        assert!(thin.check_printable(&cfg).is_err());
    }

    /// Clear field renders at exactly 1, but edge ringing lets a bounded
    /// feature overshoot it, so a peak bound of 1 does not hold for subsets.
    #[test]
    fn clear_field_is_unity_but_features_overshoot() {
        let cfg = ImagingConfig::desk_scale();
        let kernels = Oracle::new(&cfg, 128, 128).unwrap().full_stack().unwrap();
        let (clear, _) = render_truth(&RealGrid::filled(128, 128, 1.0), &kernels, DEFAULT_THRESHOLD).unwrap();
        assert!(clear.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-6));
        let square = RealGrid::from_fn(128, 128, |i, j| ((24..104).contains(&i) && (24..104).contains(&j)) as u8 as f64);
        let (aerial, _) = render_truth(&square, &kernels, DEFAULT_THRESHOLD).unwrap();
        assert!(aerial.max() > 1.1, "peak {}", aerial.max());
    }

    #[test]
    fn rect_gap() {
        let a = Rect { r0: 0, c0: 0, r1: 2, c1: 2 };
        let b = Rect { r0: 0, c0: 5, r1: 2, c1: 7 };
        assert_eq!(a.gap(&b), 3);
        assert_eq!(b.gap(&a), 3);
        assert!(a.gap(&a) < 0);
    }
}
