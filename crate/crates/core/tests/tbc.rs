use std::collections::HashSet;

use asdplda::benchmark::{fit_plda, raw_scores};
use asdplda::calibration::{fit_global, GlobalCal};
use asdplda::plda::{fit_two_cov, two_cov_to_scorer, PldaScorer};
use asdplda::preprocess::{fit_lda, FrontEnd};
use asdplda::synth::{build_trials, generate, seeded_rng, ConditionSpec, SynthConfig};
use asdplda::tbc::{fit_cond_plda, select_prefixes, select_subset, CondPlda, TbcConfig, TbcPool, TbcScorer};
use asdplda::{EmbeddingSet, SampleMeta};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const DIM: usize = 8;

fn spec(name: &str, axis: usize, shift: f64, within_scale: f64) -> ConditionSpec {
    let mut mean_shift = vec![0.0; DIM];
    mean_shift[axis] = shift;
    ConditionSpec { name: name.into(), domain: "d".into(), mean_shift, within_scale, score_shift_bias: 0.0 }
}

fn dataset(conds: Vec<ConditionSpec>, n_spk: usize, seed: u64, prefix: &str) -> EmbeddingSet {
    let mut cfg = SynthConfig::new(DIM, n_spk, conds, seed);
    cfg.id_prefix = prefix.into();
    generate(&cfg).unwrap().set
}

fn two_conditions() -> Vec<ConditionSpec> {
    vec![spec("near", 0, 4.0, 0.7), spec("far", 1, 4.0, 1.5)]
}

#[test]
fn condition_plda_prefers_same_condition_pairs() {
    let pool = dataset(two_conditions(), 150, 1, "p-");
    let cond = fit_cond_plda(&pool, None).unwrap();
    let meta = pool.meta().unwrap();
    let mut rng = seeded_rng(2, 0);
    let (mut wins, mut total) = (0, 0);
    for _ in 0..2000 {
        let [a, b, c] = [0; 3].map(|_| rng.random_range(0..pool.len()));
        if a == b || meta[a].condition != meta[b].condition || meta[a].condition == meta[c].condition {
            continue;
        }
        total += 1;
        if cond.similarity(pool.vector(a), pool.vector(b)).unwrap() > cond.similarity(pool.vector(a), pool.vector(c)).unwrap() {
            wins += 1;
        }
    }
    assert!(total > 300);
    let rate = wins as f64 / total as f64;
    assert!(rate >= 0.95, "same-condition win rate {rate}");
}

#[test]
fn condition_plda_is_speaker_plda_on_condition_labels() {
    let pool = dataset(two_conditions(), 60, 3, "p-");
    let cond = fit_cond_plda(&pool, Some(4)).unwrap();
    let labels: Vec<&str> = pool.meta().unwrap().iter().map(|m| m.condition.as_str()).collect();
    let x = pool.matrix();
    let (front, _) = fit_lda(&x, &labels, 4).unwrap();
    let (xt, _) = front.apply_rows(&x).unwrap();
    let scorer = two_cov_to_scorer(&fit_two_cov(&xt, &labels).unwrap()).unwrap();
    assert_eq!(cond, CondPlda { front, scorer });
}

#[test]
fn single_condition_pool_is_rejected() {
    let pool = dataset(vec![spec("only", 0, 0.0, 1.0)], 20, 4, "p-");
    assert!(fit_cond_plda(&pool, None).is_err());
}

struct Fixture {
    train: EmbeddingSet,
    pool: EmbeddingSet,
    eval: EmbeddingSet,
}

fn fixture() -> Fixture {
    let conds = || vec![spec("near", 0, 2.0, 0.6), spec("far", 1, 2.0, 1.8)];
    Fixture {
        train: dataset(conds(), 150, 10, "tr-"),
        pool: dataset(conds(), 100, 11, "pool-"),
        eval: dataset(conds(), 30, 12, "ev-"),
    }
}

fn scorer(f: &Fixture, cfg: impl FnOnce(GlobalCal) -> TbcConfig) -> TbcScorer {
    let (front, _, plda) = fit_plda(&f.train, DIM).unwrap();
    let trials = build_trials(&f.pool, 5000, 13).unwrap();
    let global = fit_global(&raw_scores(&front, &plda, &f.pool, &trials).unwrap(), Default::default()).unwrap();
    let cond = fit_cond_plda(&f.pool, None).unwrap();
    TbcScorer::new(front, plda, cond, f.pool.clone(), cfg(global)).unwrap()
}

#[test]
fn huge_regularization_reproduces_global_calibration() {
    let f = fixture();
    let tbc = scorer(&f, |g| TbcConfig { reg_weight: 1e6, ..TbcConfig::new(g) });
    let g = tbc.cfg.global_cal;
    let trials = build_trials(&f.eval, 200, 14).unwrap();
    for t in &trials {
        let (i, j) = (f.eval.position(&t.enroll_id).unwrap(), f.eval.position(&t.test_id).unwrap());
        let out = tbc.score(f.eval.vector(i), f.eval.vector(j)).unwrap();
        assert!((out.cal.alpha - g.alpha).abs() < 1e-6 && (out.cal.beta - g.beta).abs() < 1e-6, "{:?} vs {g:?}", out.cal);
        assert!((out.llr - g.apply(out.raw)).abs() < 1e-6 * out.raw.abs().max(1.0));
    }
}

#[test]
fn scoring_is_deterministic_and_finite() {
    let f = fixture();
    let tbc = scorer(&f, TbcConfig::new);
    let trials = build_trials(&f.eval, 150, 15).unwrap();
    let a = tbc.score_trials(&f.eval, &trials).unwrap();
    let b = tbc.score_trials(&f.eval, &trials).unwrap();
    assert_eq!(a, b);
    assert!(a.scores().iter().all(|s| s.is_finite()));
}

#[test]
fn homogeneous_pool_recovers_condition_calibration() {
    let train = dataset(vec![spec("near", 0, 2.0, 0.6), spec("far", 1, 2.0, 1.8)], 150, 20, "tr-");
    let (front, _, plda) = fit_plda(&train, DIM).unwrap();
    let pool = dataset(vec![spec("far", 1, 2.0, 1.8)], 200, 22, "pool-");
    let pool_trials = build_trials(&pool, 50_000, 22).unwrap();
    let condition_fit = fit_global(&raw_scores(&front, &plda, &pool, &pool_trials).unwrap(), Default::default()).unwrap();
    // Uninformative similarity: every trial selects the same prefix in id order.
    let cond = CondPlda {
        front: FrontEnd::new(DMatrix::identity(DIM, DIM), DVector::zeros(DIM)).unwrap(),
        scorer: PldaScorer::zeros(DIM),
    };
    let mut cfg = TbcConfig::new(GlobalCal { alpha: 0.5, beta: 0.0 });
    cfg.target_trial_goal = 1000;
    let tbc = TbcScorer::new(front, plda, cond, pool, cfg).unwrap();
    let eval = dataset(vec![spec("far", 1, 2.0, 1.8)], 10, 23, "ev-");
    for (i, j) in [(0, 5), (3, 30), (12, 70)] {
        let out = tbc.score(eval.vector(i), eval.vector(j)).unwrap();
        assert!(out.reached_goal && !out.fallback);
        let da = (out.cal.alpha - condition_fit.alpha).abs() / condition_fit.alpha.abs();
        let db = (out.cal.beta - condition_fit.beta).abs() / condition_fit.beta.abs();
        assert!(da < 0.1 && db < 0.1, "per-trial {:?} vs condition {condition_fit:?}", out.cal);
    }
}

fn toy_pool(meta: Vec<SampleMeta>) -> TbcPool {
    let n = meta.len();
    let ids = meta.iter().map(|m| m.sample_id.clone()).collect();
    let vecs = (0..n).map(|i| vec![1.0 + i as f64, 1.0]).collect();
    let set = EmbeddingSet::new(2, ids, vecs).unwrap().with_meta(meta).unwrap();
    let front = FrontEnd::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
    let cond = CondPlda { front: front.clone(), scorer: PldaScorer::zeros(2) };
    TbcPool::new(set, &cond, &front, &PldaScorer::zeros(2)).unwrap()
}

fn random_meta(rng: &mut impl Rng) -> Vec<SampleMeta> {
    let n_spk = rng.random_range(1..8);
    let mut meta = Vec::new();
    for s in 0..n_spk {
        let sessions = rng.random_range(1..4);
        for k in 0..rng.random_range(1..5) {
            let sess = rng.random_range(0..sessions);
            meta.push(SampleMeta::new(format!("s{s}-{k}"), format!("s{s}"), format!("s{s}-x{sess}"), "d", "c"));
        }
    }
    meta
}

fn brute_targets(meta: &[SampleMeta], enroll: &[usize], test: &[usize]) -> usize {
    let mut pairs = HashSet::new();
    for &e in enroll {
        for &t in test {
            let (a, b) = (&meta[e], &meta[t]);
            if e != t && a.speaker_id == b.speaker_id && a.session_id != b.session_id {
                pairs.insert((e.min(t), e.max(t)));
            }
        }
    }
    pairs.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prefix_selection_counts_pairs_and_is_minimal(seed in any::<u64>(), goal in 1usize..20) {
        let mut rng = seeded_rng(seed, 0);
        let meta = random_meta(&mut rng);
        let pool = toy_pool(meta.clone());
        let n = meta.len();
        let mut er: Vec<usize> = (0..n).collect();
        let mut tr = er.clone();
        er.shuffle(&mut rng);
        tr.shuffle(&mut rng);
        let sel = select_prefixes(&pool, &er, &tr, goal);
        let k = sel.enroll.len();
        prop_assert_eq!(&sel.enroll[..], &er[..k]);
        prop_assert_eq!(&sel.test[..], &tr[..k]);
        prop_assert_eq!(sel.n_targets, brute_targets(&meta, &sel.enroll, &sel.test));
        prop_assert_eq!(sel.reached_goal, sel.n_targets >= goal);
        if sel.reached_goal {
            prop_assert!(k == 0 || brute_targets(&meta, &er[..k - 1], &tr[..k - 1]) < goal);
        } else {
            prop_assert_eq!(k, n);
        }
    }

    #[test]
    fn ranking_ignores_a_constant_shift(seed in any::<u64>(), shift in -1e3f64..1e3) {
        let mut rng = seeded_rng(seed, 1);
        let pool = toy_pool(random_meta(&mut rng));
        let sims: Vec<f64> = (0..pool.len()).map(|_| rng.random_range(0..4) as f64).collect();
        let shifted: Vec<f64> = sims.iter().map(|s| s + shift.round()).collect();
        prop_assert_eq!(pool.rank(&sims), pool.rank(&shifted));
    }
}

#[test]
fn goal_of_one_needs_two_samples_when_the_top_pair_matches() {
    let meta = vec![
        SampleMeta::new("a0", "a", "a-0", "d", "c"),
        SampleMeta::new("a1", "a", "a-1", "d", "c"),
        SampleMeta::new("b0", "b", "b-0", "d", "c"),
    ];
    let pool = toy_pool(meta);
    let sel = select_prefixes(&pool, &[0, 1, 2], &[0, 1, 2], 1);
    assert_eq!((sel.enroll.len(), sel.n_targets, sel.reached_goal), (2, 1, true));
}

#[test]
fn unreachable_goal_returns_the_whole_pool() {
    let f = fixture();
    let tbc = scorer(&f, TbcConfig::new);
    let mut cfg = tbc.cfg;
    cfg.target_trial_goal = usize::MAX;
    let (ids, reached) = select_subset(f.eval.vector(0), &tbc.pool, &tbc.cond, &cfg).unwrap();
    assert!(!reached);
    assert_eq!(ids.len(), f.pool.len());
}
