//! Randomized invariants of the transforms, imaging model, network pieces,
//! metrics and file formats.

use litho_core::datagen::{gen_mask, MaskSpec, MaskStyle};
use litho_core::metrics::{max_error, miou, mpa, mse, psnr, PSNR_SENTINEL_DB};
use litho_core::neural_field::{crelu, init_params, Checkpoint, CheckpointMeta, EncoderSpec};
use litho_core::optics::{socs_image, ImagingConfig};
use litho_core::{
    center_crop, center_embed, fft2_centered, ifft2_centered, ComplexGrid, KernelMeta, KernelStack, Provenance,
    RealGrid,
};
use num_complex::Complex64;
use proptest::prelude::*;

const CASES: u32 = 256;

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        ..ProptestConfig::default()
    }
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(re, im)| Complex64::new(re, im))
}

fn cgrid(max: usize) -> impl Strategy<Value = ComplexGrid> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        proptest::collection::vec(complex(), r * c).prop_map(move |v| ComplexGrid::from_vec(r, c, v).unwrap())
    })
}

fn binary(rows: usize, cols: usize) -> impl Strategy<Value = RealGrid> {
    proptest::collection::vec(any::<bool>(), rows * cols)
        .prop_map(move |v| RealGrid::from_vec(rows, cols, v.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
}

fn meta() -> KernelMeta {
    KernelMeta::from_config(&ImagingConfig::desk_scale(), Provenance::Oracle)
}

fn stack(n: usize, m: usize, r: usize) -> impl Strategy<Value = KernelStack> {
    proptest::collection::vec(complex(), n * m * r).prop_map(move |v| {
        let ks = v.chunks(n * m).map(|c| ComplexGrid::from_vec(n, m, c.to_vec()).unwrap()).collect();
        KernelStack::new(n, m, ks, meta()).unwrap()
    })
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn fft_round_trip(g in cgrid(12)) {
        let back = ifft2_centered(&fft2_centered(&g));
        prop_assert!(max_abs_diff(back.as_slice(), g.as_slice()) < 1e-12);
    }

    #[test]
    fn parseval(g in cgrid(12)) {
        let f = fft2_centered(&g);
        let lhs = g.norm_sqr();
        let rhs = f.norm_sqr() / g.len() as f64;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }

    #[test]
    fn fft_is_linear(
        (a, b) in (1usize..=10, 1usize..=10).prop_flat_map(|(r, c)| {
            let v = || proptest::collection::vec(complex(), r * c);
            (v(), v()).prop_map(move |(x, y)| {
                (ComplexGrid::from_vec(r, c, x).unwrap(), ComplexGrid::from_vec(r, c, y).unwrap())
            })
        }),
        s in complex(),
    ) {
        let sum: Vec<Complex64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| s * x + y).collect();
        let lhs = fft2_centered(&ComplexGrid::from_vec(a.rows(), a.cols(), sum).unwrap());
        let fa = fft2_centered(&a);
        let fb = fft2_centered(&b);
        let rhs: Vec<Complex64> = fa.as_slice().iter().zip(fb.as_slice()).map(|(x, y)| s * x + y).collect();
        prop_assert!(max_abs_diff(lhs.as_slice(), &rhs) < 1e-11);
    }

    #[test]
    fn crop_undoes_embed(
        g in (0usize..4, 0usize..4).prop_flat_map(|(a, b)| {
            let (r, c) = (2 * a + 1, 2 * b + 1);
            proptest::collection::vec(complex(), r * c).prop_map(move |v| ComplexGrid::from_vec(r, c, v).unwrap())
        }),
        pr in 0usize..6,
        pc in 0usize..6,
    ) {
        let (rows, cols) = (g.rows() + pr, g.cols() + pc);
        let big = center_embed(&g, rows, cols).unwrap();
        prop_assert_eq!(big.norm_sqr(), g.norm_sqr());
        prop_assert_eq!(big[(rows / 2, cols / 2)], g[(g.rows() / 2, g.cols() / 2)]);
        prop_assert_eq!(center_crop(&big, g.rows(), g.cols()).unwrap(), g);
    }

    #[test]
    fn socs_image_is_band_limited(
        (mask, k) in (3usize..=6, 3usize..=6).prop_flat_map(|(hr, hc)| {
            let (rows, cols) = (4 * hr, 4 * hc - 1);
            (binary(rows, cols), stack(3, 3, 2))
        }),
    ) {
        let img = socs_image(&k, &mask).unwrap();
        let spec = fft2_centered(&ComplexGrid::from_real(&img));
        let (cr, cc) = ((mask.rows() / 2) as isize, (mask.cols() / 2) as isize);
        let total = spec.norm_sqr().max(1e-30);
        let mut outside = 0.0;
        for i in 0..mask.rows() {
            for j in 0..mask.cols() {
                if (i as isize - cr).abs() > 2 || (j as isize - cc).abs() > 2 {
                    outside += spec[(i, j)].norm_sqr();
                }
            }
        }
        prop_assert!(outside <= 1e-20 * total, "out-of-band energy {outside:e} of {total:e}");
    }

    #[test]
    fn socs_commutes_with_circular_shift(
        mask in binary(16, 15),
        k in stack(5, 5, 3),
        dr in -20isize..20,
        dc in -20isize..20,
    ) {
        let a = socs_image(&k, &mask.roll(dr, dc)).unwrap();
        let b = socs_image(&k, &mask).unwrap().roll(dr, dc);
        let peak = b.max().max(1e-12);
        let diff = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-10 * peak);
    }

    #[test]
    fn crelu_identities(z in complex(), a in 0.0f64..10.0) {
        let c = crelu(z);
        prop_assert_eq!(c.re, z.re.max(0.0));
        prop_assert_eq!(c.im, z.im.max(0.0));
        prop_assert_eq!(crelu(c), c);
        let scaled = crelu(z * a);
        prop_assert!((scaled - c * a).norm() <= 1e-15 * (1.0 + a));
        if z.re > 0.0 && z.im > 0.0 {
            prop_assert_eq!(c, z);
        }
    }

    #[test]
    fn metric_bounds(
        (z, zh, a, b) in (1usize..=12, 1usize..=12).prop_flat_map(|(r, c)| {
            let real = move || {
                proptest::collection::vec(0.0f64..2.0, r * c).prop_map(move |v| RealGrid::from_vec(r, c, v).unwrap())
            };
            (binary(r, c), binary(r, c), real(), real())
        }),
    ) {
        for v in [miou(&z, &zh).unwrap(), mpa(&z, &zh).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(miou(&z, &z).unwrap(), 1.0);
        prop_assert_eq!(mpa(&z, &z).unwrap(), 1.0);
        let e = mse(&a, &b).unwrap();
        let me = max_error(&a, &b).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(e <= me * me + 1e-15);
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_SENTINEL_DB);
    }

    #[test]
    fn nkrn_round_trip(
        (n, m, r) in (0usize..4, 0usize..4, 1usize..5).prop_map(|(a, b, r)| (2 * a + 1, 2 * b + 1, r)),
        seed in any::<u64>(),
        learned in any::<bool>(),
    ) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let ks = (0..r).map(|_| ComplexGrid::from_fn(n, m, |_, _| Complex64::new(next(), next()))).collect();
        let mut meta = meta();
        if learned {
            meta.provenance = Provenance::Learned;
        }
        let s = KernelStack::new(n, m, ks, meta).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        prop_assert_eq!(KernelStack::read_from(&mut buf.as_slice()).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn nmlp_round_trip(
        hidden in 1usize..6,
        blocks in 0usize..3,
        r in 1usize..4,
        seed in any::<u64>(),
        which in 0usize..3,
    ) {
        let encoder = match which {
            0 => EncoderSpec::None,
            1 => EncoderSpec::Nerf { octaves: 2 },
            _ => EncoderSpec::Rff { features: 3, sigma: 1.5, seed },
        };
        let widths = litho_core::neural_field::architecture(encoder.width(), hidden, blocks, r);
        let ck = Checkpoint {
            params: init_params(&widths, seed).unwrap(),
            meta: CheckpointMeta { encoder, kernel_n: 5, kernel_m: 7, imaging: meta() },
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        prop_assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn mask_generation_is_deterministic(seed in any::<u64>(), metal in any::<bool>()) {
        let style = if metal { MaskStyle::Metal } else { MaskStyle::Via };
        let spec = MaskSpec {
            image_px: 64,
            min_feature_nm: 40.0,
            min_space_nm: 32.0,
            density: 0.1,
            ..MaskSpec::desk(style, seed)
        };
        let a = gen_mask(&spec).unwrap();
        prop_assert!(a.is_binary());
        prop_assert_eq!(a, gen_mask(&spec).unwrap());
    }
}
