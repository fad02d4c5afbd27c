//! PLDA baseline backend and the frozen synthetic multi-condition benchmark.

use std::collections::BTreeMap;

use crate::calibration::{fit_global, EffectivePrior, GlobalCal};
use crate::data::{EmbeddingSet, ScoreKind, ScoreSet, Trial};
use crate::dplda::{
    prepare_all, sample_minibatch, trial_sides, warm_start, BatchSpec, DpldaModel, ModelDims,
    TrainConfig, TrainingPool, WarmStartOptions,
};
use crate::error::Result;
use crate::plda::{fit_two_cov, two_cov_to_scorer, PldaScorer, TwoCovModel};
use crate::preprocess::{fit_lda, FrontEnd, LdaBasis};
use crate::synth::{build_trials, generate, seeded_rng, ConditionSpec, SynthConfig};

/// LDA front-end, PLDA scorer and global calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaBackend {
    pub front: FrontEnd,
    pub scorer: PldaScorer,
    pub cal: GlobalCal,
}

impl PldaBackend {
    /// Uncalibrated PLDA scores of trials over `set`.
    pub fn raw_scores(&self, set: &EmbeddingSet, trials: &[Trial]) -> Result<ScoreSet> {
        raw_scores(&self.front, &self.scorer, set, trials)
    }

    pub fn score_trials(&self, set: &EmbeddingSet, trials: &[Trial]) -> Result<ScoreSet> {
        let raw = self.raw_scores(set, trials)?;
        raw.map(ScoreKind::Llr, |s| self.cal.apply(s))
    }
}

pub fn raw_scores(
    front: &FrontEnd,
    scorer: &PldaScorer,
    set: &EmbeddingSet,
    trials: &[Trial],
) -> Result<ScoreSet> {
    let prepared = prepare_all(set, trials, |i| scorer.prepare(front.apply(set.vector(i))?))?;
    let scores = trials
        .iter()
        .map(|t| {
            let (a, b) = trial_sides(set, t)?;
            Ok(scorer.score_prepared(
                prepared[a].as_ref().expect("prepared"),
                prepared[b].as_ref().expect("prepared"),
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::new(trials.to_vec(), scores, ScoreKind::Raw)
}

/// LDA on speaker labels followed by a two-covariance PLDA fit on the
/// front-end outputs.
pub fn fit_plda(set: &EmbeddingSet, lda_dim: usize) -> Result<(FrontEnd, LdaBasis, PldaScorer)> {
    let meta = set.require_meta("PLDA training")?;
    let labels: Vec<&str> = meta.iter().map(|m| m.speaker_id.as_str()).collect();
    let x = set.matrix();
    let (front, basis) = fit_lda(&x, &labels, lda_dim)?;
    let (xt, _) = front.apply_rows(&x)?;
    let scorer = two_cov_to_scorer(&fit_two_cov(&xt, &labels)?)?;
    Ok((front, basis, scorer))
}

/// Raw scores of trials drawn with the training sampler, so that they obey the
/// same exclusion rules as training batches.
pub fn sampled_training_trials(set: &EmbeddingSet, n_batches: usize, n_speakers: usize, seed: u64) -> Result<Vec<Trial>> {
    let pool = TrainingPool::from_set(set)?;
    let spec = BatchSpec::new(n_speakers.min(pool.n_speakers()))?;
    let mut rng = seeded_rng(seed, 30);
    let mut trials = Vec::new();
    for _ in 0..n_batches {
        trials.extend(sample_minibatch(&pool, &spec, &mut rng)?.to_trials(set));
    }
    Ok(trials)
}

/// Global calibration of a front-end and scorer fitted on sampled training
/// trials.
pub fn fit_training_cal(
    front: &FrontEnd,
    scorer: &PldaScorer,
    set: &EmbeddingSet,
    pi: EffectivePrior,
    seed: u64,
) -> Result<GlobalCal> {
    let trials = sampled_training_trials(set, 20, 64, seed)?;
    fit_global(&raw_scores(front, scorer, set, &trials)?, pi)
}

/// Settings of the synthetic benchmark and of the systems run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub dim: usize,
    pub n_train_speakers: usize,
    /// Speakers per condition in each held-out set.
    pub n_dev_speakers: usize,
    pub n_eval_speakers: usize,
    pub conditions: Vec<ConditionSpec>,
    pub seed: u64,
    pub max_impostors: usize,
    pub baseline_lda_dim: usize,
    pub lda_dim: usize,
    pub m_dim: usize,
    pub z_dim: usize,
    pub pi: EffectivePrior,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub epochs: Vec<usize>,
}

fn shift(dim: usize, dims: std::ops::Range<usize>, value: f64) -> Vec<f64> {
    (0..dim).map(|i| if dims.contains(&i) { value } else { 0.0 }).collect()
}

impl Default for BenchmarkConfig {
    /// Two domains, each with a clean and a degraded condition, at dim 20.
    fn default() -> Self {
        let dim = 20;
        let cond = |name: &str, domain: &str, mean_shift: Vec<f64>, within_scale: f64, bias: f64| ConditionSpec {
            name: name.into(),
            domain: domain.into(),
            mean_shift,
            within_scale,
            score_shift_bias: bias,
        };
        let add = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<f64>>();
        let domain = shift(dim, 0..5, 2.5);
        let noise = shift(dim, 10..15, 2.5);
        let conditions = vec![
            cond("d1-clean", "d1", vec![0.0; dim], 0.6, 0.1),
            cond("d1-noisy", "d1", noise.clone(), 1.6, 0.3),
            cond("d2-clean", "d2", domain.clone(), 0.8, 0.1),
            cond("d2-noisy", "d2", add(domain, noise), 2.0, 0.3),
        ];
        BenchmarkConfig {
            dim,
            n_train_speakers: 500,
            n_dev_speakers: 60,
            n_eval_speakers: 100,
            conditions,
            seed: 2024,
            max_impostors: 20_000,
            baseline_lda_dim: 10,
            lda_dim: 12,
            m_dim: 8,
            z_dim: 5,
            pi: EffectivePrior::default(),
            train: TrainConfig {
                epochs: 40,
                adam: crate::dplda::AdamConfig { lr: 0.003, ..Default::default() },
                ..TrainConfig::default()
            },
            seeds: vec![1, 2, 3],
            epochs: vec![20, 25, 30, 35, 40],
        }
    }
}

/// Held-out samples of one condition with their evaluation trials.
#[derive(Debug, Clone)]
pub struct ConditionSet {
    pub condition: String,
    pub set: EmbeddingSet,
    pub trials: Vec<Trial>,
    /// Generating model of the condition, for oracle LLRs.
    pub oracles: BTreeMap<String, TwoCovModel>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: EmbeddingSet,
    /// One per condition: calibration and model-selection data.
    pub dev: Vec<ConditionSet>,
    /// One per condition: evaluation data.
    pub eval: Vec<ConditionSet>,
}

fn condition_sets(cfg: &BenchmarkConfig, n_speakers: usize, tag: &str, seed_offset: u64) -> Result<Vec<ConditionSet>> {
    cfg.conditions
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut sc = SynthConfig::new(cfg.dim, n_speakers, vec![c.clone()], cfg.seed + seed_offset + k as u64);
            sc.id_prefix = format!("{tag}-{}-", c.name);
            let data = generate(&sc)?;
            let trials = build_trials(&data.set, cfg.max_impostors, sc.seed)?;
            Ok(ConditionSet {
                condition: c.name.clone(),
                set: data.set,
                trials,
                oracles: data.oracles,
            })
        })
        .collect()
}

pub fn build_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    let mut sc = SynthConfig::new(cfg.dim, cfg.n_train_speakers, cfg.conditions.clone(), cfg.seed);
    sc.id_prefix = "train-".into();
    let train = generate(&sc)?.set;
    Ok(Benchmark {
        train,
        dev: condition_sets(cfg, cfg.n_dev_speakers, "dev", 1000)?,
        eval: condition_sets(cfg, cfg.n_eval_speakers, "eval", 2000)?,
    })
}

/// Every `target_step`-th target and every `impostor_step`-th impostor, in
/// input order.
pub fn subsample_trials(trials: &[Trial], target_step: usize, impostor_step: usize) -> Vec<Trial> {
    let (mut nt, mut ni) = (0usize, 0usize);
    trials
        .iter()
        .filter(|t| {
            let (count, step) = if t.label.is_target() {
                (&mut nt, target_step.max(1))
            } else {
                (&mut ni, impostor_step.max(1))
            };
            *count += 1;
            (*count - 1) % step == 0
        })
        .cloned()
        .collect()
}

/// Baseline components a joint model is warm-started from.
#[derive(Debug, Clone)]
pub struct DpldaInit {
    pub basis: LdaBasis,
    pub scorer: PldaScorer,
    pub cal: GlobalCal,
    pub dims: ModelDims,
    pub opts: WarmStartOptions,
}

impl DpldaInit {
    /// Fits LDA, PLDA and a training-data global calibration.
    pub fn fit(train: &EmbeddingSet, dims: ModelDims, opts: WarmStartOptions) -> Result<Self> {
        let (front, basis, scorer) = fit_plda(train, dims.lda_dim)?;
        let cal = fit_training_cal(&front, &scorer, train, opts.pi, 0)?;
        Ok(DpldaInit {
            basis,
            scorer,
            cal,
            dims,
            opts,
        })
    }

    pub fn model(&self, seed: u64) -> Result<DpldaModel> {
        warm_start(&self.basis, &self.scorer, self.cal, self.dims, seed, &self.opts)
    }
}
