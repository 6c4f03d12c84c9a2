use proptest::prelude::*;
use ukan_core::diffusion::{q_sample, timestep_embedding, NoiseSchedule};
use ukan_core::kan::{bspline_basis_tensor, SplineSpec};
use ukan_core::loss::dice_loss;
use ukan_core::metrics::{f1, iou};
use ukan_core::model::{detokenize, tokenize};
use ukan_core::nn::{bilinear_resize, layer_norm, maxpool2x2, upsample_bilinear2x};
use ukan_core::{Tape, Tensor};

fn mask(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_is_a_nonnegative_partition_of_unity(
        g in 1usize..10, k in 1usize..5, x in -1.0f64..1.0,
    ) {
        let spec = SplineSpec::new(g, k, -1.0, 1.0).unwrap();
        let b = bspline_basis_tensor(&Tensor::new(vec![1], vec![x]).unwrap(), &spec);
        prop_assert_eq!(b.numel(), g + k);
        prop_assert!(b.data().iter().all(|&v| v >= -1e-15));
        prop_assert!((b.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(b.data().iter().filter(|&&v| v > 1e-15).count() <= k + 1);
    }

    #[test]
    fn iou_and_f1_are_related((p, g) in (1usize..64).prop_flat_map(|n| (mask(n), mask(n)))) {
        let i = iou(&p, &g).unwrap();
        let f = f1(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&i) && (0.0..=1.0).contains(&f));
        prop_assert!(i <= f + 1e-15);
        prop_assert!((f - 2.0 * i / (1.0 + i)).abs() <= 1e-12);
        prop_assert_eq!(i, iou(&g, &p).unwrap());
        prop_assert_eq!(iou(&p, &p).unwrap(), 1.0);
    }

    #[test]
    fn tokenization_round_trips(b in 1usize..3, c in 1usize..5, h in 1usize..6, w in 1usize..6, seed in 0u64..1000) {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(vec![b, c, h, w], |i| (i as f64 * 0.37 + seed as f64).sin());
        let z = tokenize(tape.constant(x.clone())).unwrap();
        prop_assert_eq!(z.tokens.shape(), vec![b, h * w, c]);
        prop_assert_eq!(detokenize(z).unwrap().to_tensor(), x);
    }

    #[test]
    fn layer_norm_standardizes_each_token(
        rows in 1usize..5, d in 2usize..12, scale in 0.5f64..20.0, seed in 0u64..1000,
    ) {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(vec![rows, d], |i| scale * ((i as f64 + 1.0) * 1.7 + seed as f64).sin());
        let y = layer_norm(
            tape.constant(x.clone()),
            tape.constant(Tensor::ones(vec![d])),
            tape.constant(Tensor::zeros(vec![d])),
            1e-6,
        ).unwrap().to_tensor();
        for r in 0..rows {
            let row = &y.data()[r * d..(r + 1) * d];
            let src = &x.data()[r * d..(r + 1) * d];
            let sm = src.iter().sum::<f64>() / d as f64;
            let sv = src.iter().map(|a| (a - sm).powi(2)).sum::<f64>() / d as f64;
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(m.abs() <= 1e-10);
            prop_assert!((v - sv / (sv + 1e-6)).abs() <= 1e-9);
        }
    }

    #[test]
    fn maxpool_picks_window_maxima(h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(vec![1, 2, 2 * h, 2 * w], |i| ((i as f64) * 2.3 + seed as f64).cos());
        let y = maxpool2x2(tape.constant(x.clone())).unwrap().to_tensor();
        prop_assert_eq!(y.shape(), &[1, 2, h, w]);
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(a, b)| x.get(&[0, c, 2 * i + a, 2 * j + b]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(y.get(&[0, c, i, j]), m);
                }
            }
        }
    }

    #[test]
    fn resampling_preserves_constants_and_range(
        h in 1usize..6, w in 1usize..6, oh in 1usize..12, ow in 1usize..12, v in -3.0f64..3.0,
    ) {
        let x = Tensor::full(vec![1, 1, h, w], v);
        let r = bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|&a| (a - v).abs() <= 1e-12));
        let tape = Tape::new();
        let ramp = Tensor::from_fn(vec![1, 1, h, w], |i| i as f64);
        let u = upsample_bilinear2x(tape.constant(ramp.clone())).unwrap().to_tensor();
        prop_assert_eq!(u.shape(), &[1, 1, 2 * h, 2 * w]);
        let (lo, hi) = (0.0, (h * w - 1) as f64);
        prop_assert!(u.data().iter().all(|&a| a >= lo - 1e-12 && a <= hi + 1e-12));
    }

    #[test]
    fn dice_loss_is_bounded((m, z) in (1usize..32).prop_flat_map(|n| (mask(n), prop::collection::vec(-10.0f64..10.0, n)))) {
        let n = m.len();
        let tape = Tape::new();
        let l = dice_loss(
            tape.constant(Tensor::new(vec![1, n], z).unwrap()),
            &Tensor::new(vec![1, n], m).unwrap(),
        ).unwrap().value().item();
        prop_assert!((0.0..1.0).contains(&l));
    }

    #[test]
    fn noiseless_forward_process_only_scales(t in 1usize..=1000, v in -1.0f64..1.0) {
        let s = NoiseSchedule::default();
        let x0 = Tensor::full(vec![1, 3], v);
        let xt = q_sample(&s, &x0, &[t], &Tensor::zeros(vec![1, 3])).unwrap();
        prop_assert!(xt.data().iter().all(|&a| (a - s.alpha_bar(t).sqrt() * v).abs() <= 1e-15));
    }

    #[test]
    fn embedding_pairs_lie_on_the_unit_circle(t in 1usize..=1000, half in 1usize..40) {
        let e = timestep_embedding::<f64>(&[t], 2 * half);
        for i in 0..half {
            let (s, c) = (e.get(&[0, i]), e.get(&[0, half + i]));
            prop_assert!((s * s + c * c - 1.0).abs() <= 1e-12);
        }
    }
}
