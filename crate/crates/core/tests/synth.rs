mod common;

use asdplda::benchmark::fit_plda;
use asdplda::calibration::{fit_global, EffectivePrior};
use asdplda::metrics::evaluate;
use asdplda::plda::{plda_score, two_cov_to_scorer, TwoCovModel};
use asdplda::synth::{build_trials, generate, normal_vec, oracle_llr, seeded_rng, ConditionSpec, SynthConfig};
use asdplda::{EmbeddingSet, ScoreKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cond(name: &str, within_scale: f64, dim: usize) -> ConditionSpec {
    ConditionSpec {
        name: name.into(),
        domain: "d".into(),
        mean_shift: vec![0.0; dim],
        within_scale,
        score_shift_bias: 0.0,
    }
}

fn condition_set(dim: usize, n_spk: usize, within_scale: f64, seed: u64, prefix: &str) -> EmbeddingSet {
    let mut cfg = SynthConfig::new(dim, n_spk, vec![cond("c", within_scale, dim)], seed);
    cfg.id_prefix = prefix.into();
    generate(&cfg).unwrap().set
}

#[test]
fn speaker_means_approach_between_covariance() {
    let dim = 5;
    let mut rng = seeded_rng(31, 0);
    let b0 = common::random_spd(&mut rng, dim, 0.5);
    let mut cfg = SynthConfig::new(dim, 500, vec![cond("c", 1.0, dim)], 32);
    cfg.between = b0.clone();
    let set = generate(&cfg).unwrap().set;
    let meta = set.meta().unwrap();
    let per = cfg.sessions_per_speaker * cfg.samples_per_session;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in 0..500 {
        let mut m = DVector::zeros(dim);
        for i in s * per..(s + 1) * per {
            assert_eq!(meta[i].speaker_id, meta[s * per].speaker_id);
            m += set.dvector(i);
        }
        m /= per as f64;
        cov += &m * m.transpose();
    }
    cov /= 500.0;
    let rel = common::frobenius_rel(&cov, &b0);
    assert!(rel < 0.2, "relative error {rel}");
}

#[test]
fn oracle_matches_plda_scorer() {
    let mut rng = seeded_rng(33, 0);
    for d in [1, 4, 9] {
        let model = TwoCovModel {
            between: common::random_spd(&mut rng, d, 0.1),
            within: common::random_spd(&mut rng, d, 0.1),
            mean: normal_vec(&mut rng, d),
        };
        let scorer = two_cov_to_scorer(&model).unwrap();
        for _ in 0..30 {
            let (x1, x2) = (normal_vec(&mut rng, d), normal_vec(&mut rng, d));
            let o = oracle_llr(x1.as_slice(), x2.as_slice(), &model).unwrap();
            let s = plda_score(x1.as_slice(), x2.as_slice(), &scorer).unwrap();
            assert!((o - s).abs() < 1e-8, "d={d}: oracle {o} scorer {s}");
        }
    }
}

#[test]
fn zero_between_covariance_gives_zero_llr() {
    let d = 3;
    let model = TwoCovModel { between: DMatrix::zeros(d, d), within: DMatrix::identity(d, d), mean: DVector::zeros(d) };
    let mut rng = seeded_rng(34, 0);
    for _ in 0..10 {
        let (x1, x2) = (normal_vec(&mut rng, d), normal_vec(&mut rng, d));
        assert!(oracle_llr(x1.as_slice(), x2.as_slice(), &model).unwrap().abs() < 1e-12);
    }
}

#[test]
fn within_scale_mismatch_miscalibrates_plda() {
    let dim = 10;
    let pi = EffectivePrior::new(0.5).unwrap();
    let train = condition_set(dim, 300, 0.5, 40, "tr-");
    let (front, _, scorer) = fit_plda(&train, dim).unwrap();
    let raw = |set: &EmbeddingSet, seed| {
        let trials = build_trials(set, 10_000, seed).unwrap();
        asdplda::benchmark::raw_scores(&front, &scorer, set, &trials).unwrap()
    };
    let cal_set = condition_set(dim, 200, 0.5, 41, "cal-");
    let cal = fit_global(&raw(&cal_set, 41), pi).unwrap();
    let gap = |within_scale, seed| {
        let s = raw(&condition_set(dim, 200, within_scale, seed, "ev-"), seed);
        evaluate(&s.map(ScoreKind::Llr, |v| cal.apply(v)).unwrap()).unwrap().cal_loss()
    };
    let matched = gap(0.5, 42);
    let mismatched = gap(2.0, 43);
    assert!(matched < 0.05, "matched gap {matched}");
    assert!(mismatched > 0.3, "mismatched gap {mismatched}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_is_symmetric(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = seeded_rng(seed, 0);
        let model = TwoCovModel {
            between: common::random_spd(&mut rng, d, 0.1),
            within: common::random_spd(&mut rng, d, 0.1),
            mean: normal_vec(&mut rng, d),
        };
        let (x1, x2) = (normal_vec(&mut rng, d), normal_vec(&mut rng, d));
        let a = oracle_llr(x1.as_slice(), x2.as_slice(), &model).unwrap();
        let b = oracle_llr(x2.as_slice(), x1.as_slice(), &model).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }
}
