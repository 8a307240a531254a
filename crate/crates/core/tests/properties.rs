use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqseg::eval::ConfusionMatrix;
use seqseg::fcn::{build_fcn, fcn_forward, replace_low_logits, FcnConfig, StageConfig};
use seqseg::ops::{
    bilinear_upsample, conv2d, maxpool2, maxpool2_backward, softmax_channels, Padding, Phase, SUPPORTED_FACTORS,
};
use seqseg::{Dims, KernelBank, LabelMap, Tensor4, IGNORE_LABEL};

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..3, 1usize..4, 1usize..9, 1usize..9).prop_map(|(n, c, h, w)| Dims::new(n, c, h, w))
}

fn tiny_fcn() -> FcnConfig {
    FcnConfig {
        input_height: 16,
        input_width: 16,
        stem_channels: 4,
        stages: vec![
            StageConfig { blocks: 1, channels: 4 },
            StageConfig { blocks: 1, channels: 6 },
            StageConfig { blocks: 1, channels: 6 },
        ],
        ..FcnConfig::desk(4)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(d in dims(), out_c in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
                      a in -2.0f64..2.0, b in -2.0f64..2.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = KernelBank::fan_in_normal(out_c, d.c, k, k, false, 1.0, &mut rng).unwrap();
        let x = Tensor4::random_normal(d, 1.0, &mut rng);
        let y = Tensor4::random_normal(d, 1.0, &mut rng);
        let lhs = conv2d(&x.zip_map(&y, |p, q| a * p + b * q).unwrap(), &bank, 1, Padding::Same).unwrap();
        let cx = conv2d(&x, &bank, 1, Padding::Same).unwrap();
        let cy = conv2d(&y, &bank, 1, Padding::Same).unwrap();
        let rhs = cx.zip_map(&cy, |p, q| a * p + b * q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn constant_maps_stay_constant(d in dims(), v in -50.0f64..50.0, f in prop::sample::select(SUPPORTED_FACTORS.to_vec())) {
        let x = Tensor4::filled(d, v);
        let (p, _) = maxpool2(&x);
        prop_assert!(p.data().iter().all(|&y| y == v));
        let u = bilinear_upsample(&x, f).unwrap();
        prop_assert!(u.data().iter().all(|&y| (y - v).abs() <= 1e-14 * v.abs().max(1.0)));
    }

    #[test]
    fn maxpool_backward_conserves_mass(d in dims(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor4::random_normal(d, 1.0, &mut rng);
        let (y, idx) = maxpool2(&x);
        let g = Tensor4::random_normal(y.dims(), 1.0, &mut rng);
        let gi = maxpool2_backward(&g, &idx).unwrap();
        prop_assert!((gi.sum() - g.sum()).abs() < 1e-12 * (1.0 + g.norm()));
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(d in dims(), scale in 0.1f64..20.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor4::random_normal(d, scale, &mut rng);
        let shift = Tensor4::random_normal(Dims::new(d.n, 1, d.h, d.w), 30.0, &mut rng);
        let shifted = Tensor4::from_fn(d, |n, c, y, x| logits.at(n, c, y, x) + shift.at(n, 0, y, x));
        let p = softmax_channels(&logits);
        for n in 0..d.n {
            for y in 0..d.h {
                for x in 0..d.w {
                    let total: f64 = (0..d.c).map(|c| p.at(n, c, y, x)).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
        prop_assert!(softmax_channels(&shifted).max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn confusion_ignores_frame_order(frames in prop::collection::vec(
        (prop::collection::vec(prop_oneof![0u8..4, Just(IGNORE_LABEL)], 12), prop::collection::vec(0u8..4, 12)), 1..6),
        rot in 0usize..6)
    {
        let maps: Vec<(LabelMap, LabelMap)> = frames
            .iter()
            .map(|(t, p)| (LabelMap::new(1, 3, 4, t.clone()).unwrap(), LabelMap::new(1, 3, 4, p.clone()).unwrap()))
            .collect();
        let mut forward = ConfusionMatrix::new(4);
        for (t, p) in &maps {
            forward.accumulate(t, p).unwrap();
        }
        let mut rotated = ConfusionMatrix::new(4);
        let k = rot % maps.len();
        for (t, p) in maps[k..].iter().chain(&maps[..k]).rev() {
            rotated.accumulate(t, p).unwrap();
        }
        prop_assert_eq!(&forward, &rotated);

        let scored = frames.iter().flat_map(|(t, _)| t).filter(|&&v| v != IGNORE_LABEL).count() as u64;
        prop_assert_eq!(forward.total(), scored);
        match forward.pixel_accuracy() {
            Ok(acc) => prop_assert!((0.0..=1.0).contains(&acc)),
            Err(_) => prop_assert_eq!(scored, 0),
        }
        for row in forward.row_normalized().into_iter().flatten() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn replacing_low_logits_with_themselves_is_exact(seed: u64) {
        let p = build_fcn(&tiny_fcn(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let img = Tensor4::random_uniform(Dims::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let b = fcn_forward(&p, &img, Phase::Infer).unwrap();
        prop_assert_eq!(replace_low_logits(&b, b.logits_low.clone()).unwrap(), b);
    }

    #[test]
    fn brightness_reaches_the_logits(seed: u64) {
        let p = build_fcn(&tiny_fcn(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let img = Tensor4::random_uniform(Dims::new(1, 3, 16, 16), 0.0, 0.5, &mut rng);
        let a = fcn_forward(&p, &img, Phase::Infer).unwrap();
        let b = fcn_forward(&p, &img.map(|v| 2.0 * v), Phase::Infer).unwrap();
        prop_assert!(a.logits_full.max_abs_diff(&b.logits_full) > 1e-6);
    }
}
