use ecgtl_nn::layers::softmax_cross_entropy;
use ecgtl_nn::{Feat, Optimizer, OptimizerKind, ResNet, ResNetConfig};
use proptest::prelude::*;

fn batch(n: usize, c: usize, hw: usize, seed: u64) -> Vec<f32> {
    (0..n * c * hw * hw)
        .map(|i| (((i as u64).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 1000.0)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn outputs_are_probability_rows(
        variant in prop::sample::select(vec![18u32, 50]),
        width in 2usize..5,
        channels in 1usize..4,
        classes in 2usize..6,
        n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let cfg = ResNetConfig::new(variant, channels, classes).unwrap().with_base_width(width);
        let m = ResNet::<f32>::build(cfg, seed).unwrap();
        let x = Feat::<f32>::from_nchw(n, channels, 32, 32, &batch(n, channels, 32, seed)).unwrap();
        let logits = m.forward(&x).unwrap();
        prop_assert_eq!((logits.rows, logits.cols), (n, classes));
        let p = logits.softmax();
        for r in 0..n {
            prop_assert!(p.row(r).iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        // each row depends only on its own image
        let first = Feat::<f32>::from_nchw(1, channels, 32, 32, &batch(n, channels, 32, seed)[..channels * 1024]).unwrap();
        let alone = m.forward(&first).unwrap();
        for (a, b) in alone.row(0).iter().zip(logits.row(0)) {
            prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()));
        }
    }
}

/// Bright versus dark images: a few Adam steps must drive the loss down
/// and keep every parameter finite.
#[test]
fn learns_a_separable_toy_problem() {
    let cfg = ResNetConfig::new(18, 1, 2).unwrap().with_base_width(4);
    let mut m = ResNet::<f32>::build(cfg, 3).unwrap();
    let n = 8;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let level = if i % 2 == 0 { 0.1 } else { 0.9 };
        data.extend((0..256).map(|k| level + 0.05 * ((k * 7 + i) % 5) as f32 / 5.0));
        labels.push(i % 2);
    }
    let x = Feat::<f32>::from_nchw(n, 1, 16, 16, &data).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2);
    let mut losses = Vec::new();
    for _ in 0..30 {
        let logits = m.forward_train(&x).unwrap();
        let (loss, d) = softmax_cross_entropy(&logits, &labels, None).unwrap();
        losses.push(loss);
        m.zero_grad();
        m.backward(&d);
        opt.step(&mut m.trainable_params_mut());
    }
    assert!(m.all_finite());
    assert!(losses[29] < 0.5 * losses[0], "{losses:?}");
    assert_eq!(m.forward(&x).unwrap().argmax_rows(), labels);
}

#[test]
fn exported_weights_rebuild_the_same_function() {
    let cfg = ResNetConfig::new(50, 2, 3).unwrap().with_base_width(2);
    let a = ResNet::<f32>::build(cfg.clone(), 1).unwrap();
    let mut b = ResNet::<f32>::build(cfg, 2).unwrap();
    let x = Feat::<f32>::from_nchw(2, 2, 32, 32, &batch(2, 2, 32, 9)).unwrap();
    assert_ne!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    b.import(&a.export()).unwrap();
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    assert_eq!(a.param_count(), b.param_count());
}
