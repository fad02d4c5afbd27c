//! Shared fixture for the criterion benchmarks: a reduced synthetic benchmark
//! with a PLDA baseline, a warm-started AS-DPLDA model and a TBC scorer.

use asdplda::benchmark::{build_benchmark, fit_plda, raw_scores, subsample_trials, Benchmark, BenchmarkConfig, DpldaInit, PldaBackend};
use asdplda::calibration::fit_global;
use asdplda::dplda::{sample_minibatch, BatchSpec, DpldaModel, ModelDims, TrainingPool, WarmStartOptions};
use asdplda::synth::seeded_rng;
use asdplda::tbc::{fit_cond_plda, TbcConfig, TbcScorer};
use asdplda::{EmbeddingSet, Label, Trial};
use nalgebra::DMatrix;

pub struct Fixture {
    pub bench: Benchmark,
    pub plda: PldaBackend,
    pub model: DpldaModel,
    pub tbc: TbcScorer,
}

impl Fixture {
    /// Default benchmark conditions at 200 training speakers and 40 speakers
    /// per held-out set.
    pub fn new() -> Self {
        let cfg = BenchmarkConfig {
            n_train_speakers: 200,
            n_dev_speakers: 40,
            n_eval_speakers: 40,
            max_impostors: 10_000,
            ..BenchmarkConfig::default()
        };
        let bench = build_benchmark(&cfg).expect("benchmark data");
        let (front, _, scorer) = fit_plda(&bench.train, cfg.baseline_lda_dim).expect("PLDA fit");
        let pool = EmbeddingSet::concat(&bench.dev.iter().map(|d| &d.set).collect::<Vec<_>>()).expect("pool");
        let trials: Vec<Trial> = bench.dev.iter().flat_map(|d| d.trials.iter().cloned()).collect();
        let cal = fit_global(&raw_scores(&front, &scorer, &pool, &trials).expect("scores"), cfg.pi).expect("calibration");
        let cond = fit_cond_plda(&pool, None).expect("condition PLDA");
        let tbc = TbcScorer::new(front.clone(), scorer.clone(), cond, pool, TbcConfig::new(cal)).expect("TBC scorer");
        let dims = ModelDims { lda_dim: cfg.lda_dim, m_dim: cfg.m_dim, z_dim: cfg.z_dim };
        let model = DpldaInit::fit(&bench.train, dims, WarmStartOptions::default()).expect("warm start").model(1).expect("model");
        Fixture { bench, plda: PldaBackend { front, scorer, cal }, model, tbc }
    }

    pub fn eval_set(&self) -> &EmbeddingSet {
        &self.bench.eval[0].set
    }

    /// The first `n` evaluation trials of the first condition.
    pub fn eval_trials(&self, n: usize) -> Vec<Trial> {
        self.bench.eval[0].trials.iter().take(n).cloned().collect()
    }

    /// A thinned subset of evaluation trials, small enough for TBC.
    pub fn tbc_trials(&self) -> Vec<Trial> {
        subsample_trials(&self.bench.eval[0].trials, 40, 400)
    }

    /// Rows and labelled pairs of one training minibatch.
    pub fn minibatch(&self, n_speakers: usize) -> (DMatrix<f64>, Vec<(usize, usize, Label)>) {
        let pool = TrainingPool::from_set(&self.bench.train).expect("pool");
        let spec = BatchSpec::new(n_speakers).expect("batch spec");
        let batch = sample_minibatch(&pool, &spec, &mut seeded_rng(7, 0)).expect("minibatch");
        let set = &self.bench.train;
        let x = DMatrix::from_fn(batch.rows.len(), set.dim(), |r, c| set.vector(batch.rows[r])[c]);
        (x, batch.pairs)
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
