mod common;

use common::{instance, max_gradient_error, Objective, LAYER_KINDS};
use inferguard::nn::{
    l2_recon_loss, Conv2d, ConvTranspose2d, Dense, Layer, Optimizer, Parameterized, Sequential, Tensor, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dense_three_to_two_matches_finite_differences_tightly() {
    for seed in 0..5 {
        let (net, x, obj) = instance("dense", seed);
        let err = max_gradient_error(&net, &x, &obj);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    for kind in LAYER_KINDS {
        for seed in 0..20 {
            let (net, x, obj) = instance(kind, 1000 + seed);
            let err = max_gradient_error(&net, &x, &obj);
            assert!(err < 1e-4, "{kind} seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn composed_stack_gradients() {
    // conv -> relu -> pool -> up -> sigmoid, the decoder/encoder path end to end
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let net = Sequential::new(
        vec![1, 4, 4],
        vec![
            Layer::Conv2d(Conv2d::new("c", 1, 2, 3, &mut rng)),
            Layer::Relu,
            Layer::MaxPool2d,
            Layer::ConvTranspose2d(ConvTranspose2d::new("u", 2, 2, &mut rng)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::new("o", 2, 1, 3, &mut rng)),
            Layer::Sigmoid,
        ],
    )
    .unwrap();
    let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.4).collect()).unwrap();
    let r: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let err = max_gradient_error(&net, &x, &Objective::Projection(r));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn identity_reconstruction_has_zero_gradient() {
    let conv = Conv2d {
        name: "id".into(),
        weight: Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
        bias: Tensor::zeros(&[1]),
    };
    let mut net = Sequential::new(vec![1, 3, 3], vec![Layer::Conv2d(conv)]).unwrap();
    let x = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| i as f64 / 7.0).collect()).unwrap();
    let y = net.forward(&x).unwrap();
    let loss = l2_recon_loss(&y, &x).unwrap();
    assert_eq!(loss.value(), 0.0);
    net.backward(&loss).unwrap();
    for (_, p) in net.named_params() {
        assert!(p.grad().unwrap().iter().all(|&g| g == 0.0));
    }
}

fn train_steps(seed: u64, steps: usize) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new(
        vec![3],
        vec![Layer::Dense(Dense::new("a", 3, 5, &mut rng)), Layer::Relu, Layer::Dense(Dense::new("b", 5, 3, &mut rng))],
    )
    .unwrap();
    let mut opt = Optimizer::new(&TrainConfig::default());
    for _ in 0..steps {
        let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        let target = Tensor::zeros(y.shape());
        let loss = l2_recon_loss(&y, &target).unwrap();
        net.backward(&loss).unwrap();
        opt.step(&mut net).unwrap();
    }
    net
}

#[test]
fn identical_seeds_give_bit_identical_parameters() {
    assert_eq!(train_steps(5, 25), train_steps(5, 25));
    assert_ne!(train_steps(5, 25), train_steps(6, 25));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_outputs_are_strictly_positive_and_normalised(
        logits in proptest::collection::vec(-50.0f64..50.0, 2..10)
    ) {
        let n = logits.len();
        let net = Sequential::new(vec![n], vec![Layer::Softmax]).unwrap();
        let y = net.predict(&Tensor::new(vec![1, n], logits).unwrap()).unwrap();
        prop_assert!(y.data().iter().all(|&p| p > 0.0));
        prop_assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_and_backward_stay_finite(seed in 0u64..1000) {
        let (net, x, obj) = instance("conv_transpose", seed);
        let mut net = net;
        let y = net.forward(&x).unwrap();
        prop_assert!(y.is_finite());
        if let Objective::Projection(r) = obj {
            let g = Tensor::from_slice(y.shape(), &r).unwrap();
            let dx = net.backward_from(&g, true).unwrap().unwrap();
            prop_assert!(dx.is_finite());
        }
    }
}
