mod common;

use asdplda::plda::{fit_two_cov, plda_score, two_cov_to_scorer};
use asdplda::synth::seeded_rng;
use asdplda::TwoCovModel;
use common::{frobenius_rel, joint_gaussian_llr, random_spd, two_cov_set};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scorer_for(b: &DMatrix<f64>, w: &DMatrix<f64>, m: &DVector<f64>) -> asdplda::PldaScorer {
    two_cov_to_scorer(&TwoCovModel { between: b.clone(), within: w.clone(), mean: m.clone() }).unwrap()
}

#[test]
fn one_dimensional_grid_matches_closed_form() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let s = scorer_for(&one, &one, &DVector::zeros(1));
    // Same: [[2,1],[1,2]] (det 3); different: 2·I (det 4).
    let closed = |a: f64, b: f64| {
        let q_same = (2.0 * a * a - 2.0 * a * b + 2.0 * b * b) / 3.0;
        let q_diff = (a * a + b * b) / 2.0;
        -0.5 * (q_same - q_diff) - 0.5 * (3.0f64 / 4.0).ln()
    };
    let grid = [-2.0, -0.7, 0.0, 1.1, 2.5];
    for &a in &grid {
        for &b in &grid {
            let got = plda_score(&[a], &[b], &s).unwrap();
            assert!((got - closed(a, b)).abs() < 1e-10, "({a}, {b}): {got} vs {}", closed(a, b));
        }
    }
}

#[test]
fn random_models_at_dim_8_match_joint_gaussian() {
    let mut rng = seeded_rng(8, 0);
    let d = 8;
    let b = random_spd(&mut rng, d, 0.1);
    let w = random_spd(&mut rng, d, 0.3);
    let m = asdplda::synth::normal_vec(&mut rng, d);
    let s = scorer_for(&b, &w, &m);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x1 = asdplda::synth::normal_vec(&mut rng, d) * 1.5;
        let x2 = asdplda::synth::normal_vec(&mut rng, d) * 1.5;
        let got = plda_score(x1.as_slice(), x2.as_slice(), &s).unwrap();
        worst = worst.max((got - joint_gaussian_llr(x1.as_slice(), x2.as_slice(), &b, &w, &m)).abs());
    }
    assert!(worst < 1e-8, "max abs error {worst:e}");
}

#[test]
fn two_covariance_fit_recovers_generating_model() {
    let mut rng = seeded_rng(5, 0);
    let b0 = random_spd(&mut rng, 5, 0.5);
    let w0 = random_spd(&mut rng, 5, 0.2);
    let set = two_cov_set(&b0, &w0, 500, 10, 17);
    let labels: Vec<&str> = set.meta().unwrap().iter().map(|m| m.speaker_id.as_str()).collect();
    let fit = fit_two_cov(&set.matrix(), &labels).unwrap();
    let (eb, ew) = (frobenius_rel(&fit.between, &b0), frobenius_rel(&fit.within, &w0));
    assert!(eb < 0.15 && ew < 0.15, "between {eb}, within {ew}");
}

#[test]
fn targets_outscore_impostors_on_synthetic_data() {
    let d = 4;
    let b = DMatrix::identity(d, d);
    let w = DMatrix::identity(d, d) * 0.5;
    let set = two_cov_set(&b, &w, 50, 4, 3);
    let labels: Vec<&str> = set.meta().unwrap().iter().map(|m| m.speaker_id.as_str()).collect();
    let s = two_cov_to_scorer(&fit_two_cov(&set.matrix(), &labels).unwrap()).unwrap();
    let (mut tgt, mut imp) = (Vec::new(), Vec::new());
    for i in 0..set.len() {
        for j in (i + 1)..set.len() {
            let v = plda_score(set.vector(i), set.vector(j), &s).unwrap();
            if labels[i] == labels[j] { tgt.push(v) } else { imp.push(v) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&tgt) > mean(&imp) + 1.0);
}

fn model_strategy() -> impl Strategy<Value = (usize, u64, f64)> {
    (1usize..=10, any::<u64>(), 0.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scoring_equals_joint_gaussian_llr((d, seed, rank_frac) in model_strategy()) {
        let mut rng = seeded_rng(seed, 1);
        let w = random_spd(&mut rng, d, 0.2);
        // PSD between-speaker covariance, possibly rank deficient.
        let r = ((d as f64 * rank_frac).ceil() as usize).clamp(1, d);
        let c = DMatrix::from_fn(d, r, |_, _| asdplda::synth::normal_vec(&mut rng, 1)[0]) / (d as f64).sqrt();
        let b = &c * c.transpose();
        let m = asdplda::synth::normal_vec(&mut rng, d) * 0.5;
        let s = scorer_for(&b, &w, &m);
        for _ in 0..10 {
            let x1 = asdplda::synth::normal_vec(&mut rng, d);
            let x2 = asdplda::synth::normal_vec(&mut rng, d);
            let got = plda_score(x1.as_slice(), x2.as_slice(), &s).unwrap();
            let want = joint_gaussian_llr(x1.as_slice(), x2.as_slice(), &b, &w, &m);
            prop_assert!((got - want).abs() < 1e-8, "d={} got {} want {}", d, got, want);
        }
    }

    #[test]
    fn scoring_is_exactly_symmetric(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = seeded_rng(seed, 2);
        let s = scorer_for(&random_spd(&mut rng, d, 0.1), &random_spd(&mut rng, d, 0.1), &DVector::zeros(d));
        let x1 = asdplda::synth::normal_vec(&mut rng, d);
        let x2 = asdplda::synth::normal_vec(&mut rng, d);
        let a = plda_score(x1.as_slice(), x2.as_slice(), &s).unwrap();
        let b = plda_score(x2.as_slice(), x1.as_slice(), &s).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
