//! Invariants of the weighted aggregation `q = Σ r w / Σ w`.

use ara_core::autodiff::{weighted_mean_raw, Tensor};
use ara_core::model::{ModelParams, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=30);
    let r = (0..n).map(|_| rng.random_range(-5.0..10.0)).collect();
    let w = (0..n).map(|_| rng.random_range(1e-6..1.0)).collect();
    (r, w)
}

#[test]
fn quality_lies_between_extreme_ratings() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (r, w) = instance(&mut rng);
        let q = weighted_mean_raw(&r, &w);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo - TOL <= q && q <= hi + TOL, "{lo} <= {q} <= {hi}");
    }
}

#[test]
fn weight_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (r, w) = instance(&mut rng);
        let c = rng.random_range(1e-3..1e3);
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let (a, b) = (weighted_mean_raw(&r, &w), weighted_mean_raw(&r, &scaled));
        assert!((a - b).abs() <= TOL * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn single_utterance_identity_and_equal_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let r: f64 = rng.random_range(-5.0..10.0);
        let w: f64 = rng.random_range(1e-6..1.0);
        assert!((weighted_mean_raw(&[r], &[w]) - r).abs() <= TOL);

        let (ratings, _) = instance(&mut rng);
        let w = rng.random_range(1e-3..1.0);
        let mean = ratings.iter().sum::<f64>() / ratings.len() as f64;
        let q = weighted_mean_raw(&ratings, &vec![w; ratings.len()]);
        assert!((q - mean).abs() <= TOL, "{q} vs {mean}");
    }
}

#[test]
fn model_quality_respects_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..50 {
        for variant in [Variant::Ara, Variant::AraO, Variant::AraA] {
            let n = rng.random_range(1..=8);
            let x = Tensor::new(vec![n, 5], (0..n * 5).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let report = ModelParams::init(variant, 5, 6, seed).unwrap().forward(&x).unwrap();
            let lo = report.utterances.iter().map(|u| u.r).fold(f64::INFINITY, f64::min);
            let hi = report.utterances.iter().map(|u| u.r).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo - TOL <= report.q && report.q <= hi + TOL);
            assert!(report.utterances.iter().all(|u| u.w > 0.0 && u.w < 1.0));
            if n == 1 {
                assert!((report.q - report.utterances[0].r).abs() <= TOL);
            }
        }
    }
}
