use inferguard::defenses::{
    expected_perturbed_accuracy, perturb_label, perturb_model, LabelPerturbConfig, ModelPerturbConfig,
};
use inferguard::models::build_split_cnn;
use inferguard::nn::{Dense, Layer, Parameterized, Sequential};
use inferguard::seed::{rng_from_seed, stream};

const DRAWS: usize = 100_000;

/// Empirical distribution of perturbed labels starting from `y`.
fn frequencies(y: usize, p: f64, classes: usize, seed: u64) -> Vec<f64> {
    let cfg = LabelPerturbConfig::new(p, classes).unwrap();
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0usize; classes];
    for _ in 0..DRAWS {
        counts[perturb_label(y, &cfg, &mut rng).unwrap()] += 1;
    }
    counts.into_iter().map(|c| c as f64 / DRAWS as f64).collect()
}

fn three_sigma(q: f64) -> f64 {
    3.0 * (q * (1.0 - q) / DRAWS as f64).sqrt()
}

#[test]
fn randomized_response_marginals() {
    for (p, c) in [(0.3, 2), (0.2, 4), (0.5, 3), (0.3, 4)] {
        for y in 0..c {
            let f = frequencies(y, p, c, 1000 + y as u64);
            for (k, &fk) in f.iter().enumerate() {
                let q = if k == y { 1.0 - p } else { p / (c as f64 - 1.0) };
                assert!((fk - q).abs() <= three_sigma(q), "p={p} C={c} y={y} class {k}: {fk} vs {q}");
            }
        }
    }
}

#[test]
fn documented_four_class_bounds() {
    let f = frequencies(2, 0.3, 4, 5);
    assert!((0.69..=0.71).contains(&f[2]), "{f:?}");
    for k in [0, 1, 3] {
        assert!((0.09..=0.11).contains(&f[k]), "{f:?}");
    }
}

#[test]
fn label_boundaries() {
    let mut rng = rng_from_seed(0);
    let keep = LabelPerturbConfig::new(0.0, 3).unwrap();
    let flip = LabelPerturbConfig::new(1.0, 2).unwrap();
    for _ in 0..1000 {
        for y in 0..2 {
            assert_eq!(perturb_label(y, &keep, &mut rng).unwrap(), y);
            assert_eq!(perturb_label(y, &flip, &mut rng).unwrap(), 1 - y);
        }
    }
    assert!(perturb_label(3, &keep, &mut rng).is_err());
    assert!(LabelPerturbConfig::new(1.5, 2).is_err());
}

#[test]
fn closed_form_accuracy() {
    assert!((expected_perturbed_accuracy(0.9, 0.2, 2) - 0.74).abs() < 1e-12);
    assert_eq!(expected_perturbed_accuracy(0.8, 0.0, 3), 0.8);
    for p in [0.0, 0.3, 0.7, 1.0] {
        assert!((expected_perturbed_accuracy(0.5, p, 2) - 0.5).abs() < 1e-12);
    }
}

fn big_model() -> Sequential {
    // 316 * 316 + 316 = 100,172 parameters
    let mut rng = rng_from_seed(1);
    Sequential::new(vec![316], vec![Layer::Dense(Dense::new("w", 316, 316, &mut rng))]).unwrap()
}

fn flat(m: &impl Parameterized) -> Vec<f64> {
    m.named_params().into_iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

#[test]
fn gaussian_noise_statistics() {
    let base = big_model();
    let mut noisy = base.clone();
    perturb_model(&mut noisy, &ModelPerturbConfig::new(0.05).unwrap(), &mut stream(3, "noise")).unwrap();
    let deltas: Vec<f64> = flat(&noisy).iter().zip(flat(&base)).map(|(a, b)| a - b).collect();
    let n = deltas.len() as f64;
    assert!(n >= 1e5);
    let mean = deltas.iter().sum::<f64>() / n;
    let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 0.0005, "{mean}");
    assert!((0.0495..=0.0505).contains(&std), "{std}");
}

#[test]
fn zero_sigma_is_identity_and_noise_is_reproducible() {
    let base = build_split_cnn(16, 2, 4, 8, 0).unwrap();
    let mut same = base.clone();
    perturb_model(&mut same, &ModelPerturbConfig::new(0.0).unwrap(), &mut rng_from_seed(1)).unwrap();
    assert_eq!(same.full(), base.full());

    let cfg = ModelPerturbConfig::new(0.02).unwrap();
    let (mut a, mut b) = (base.clone(), base.clone());
    perturb_model(&mut a, &cfg, &mut rng_from_seed(9)).unwrap();
    perturb_model(&mut b, &cfg, &mut rng_from_seed(9)).unwrap();
    assert_eq!(a.full(), b.full());
    assert_ne!(a.full(), base.full());

    let names = |m: &inferguard::models::SplitCnn| {
        m.named_params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect::<Vec<_>>()
    };
    assert_eq!(names(&a), names(&base));
    assert!(ModelPerturbConfig::new(-0.1).is_err());
}
