use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;

use super::grad::{batch_loss_and_grad, BatchInput, Gradients, Tensor};
use super::sampler::{sample_minibatch, BatchSpec, TrainingPool};
use super::DpldaModel;
use crate::data::{EmbeddingSet, SampleMeta, Trial};
use crate::error::{Error, Result};
use crate::metrics::cllr;
use crate::synth::seeded_rng;

const STAGE1_STREAM: u64 = 10;
const STAGE2_STREAM: u64 = 11;
const BALANCE_STREAM: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for every tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &DpldaModel, cfg: AdamConfig) -> Self {
        let zeros = |t: Tensor| vec![0.0; model.tensor(t).map_or(0, <[f64]>::len)];
        Adam {
            cfg,
            step: 0,
            m: Tensor::ALL.iter().map(|&t| zeros(t)).collect(),
            v: Tensor::ALL.iter().map(|&t| zeros(t)).collect(),
        }
    }

    /// One update of the listed tensors with learning rate `lr`.
    pub fn update(&mut self, model: &mut DpldaModel, grads: &Gradients, tensors: &[Tensor], lr: f64) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for &t in tensors {
            let g = grads.get(t);
            let Some(p) = model.tensor_mut(t) else { continue };
            let (m, v) = (&mut self.m[t.index()], &mut self.v[t.index()]);
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total epochs over both stages.
    pub epochs: usize,
    /// Epochs of stage 1; defaults to a third of the total (at least one).
    pub stage1_epochs: Option<usize>,
    pub batch_speakers: usize,
    pub adam: AdamConfig,
    /// Stage-2 learning rate; defaults to the stage-1 rate.
    pub stage2_lr: Option<f64>,
    /// Epochs after which a snapshot is returned; empty means the last epoch.
    pub snapshot_epochs: Vec<usize>,
    /// Downsample the stage-2 pool to equal per-domain sample counts.
    pub balance_stage2: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            stage1_epochs: None,
            batch_speakers: 64,
            adam: AdamConfig::default(),
            stage2_lr: None,
            snapshot_epochs: Vec::new(),
            balance_stage2: true,
        }
    }
}

impl TrainConfig {
    pub fn stage1(&self) -> usize {
        self.stage1_epochs
            .unwrap_or((self.epochs / 3).max(1))
            .min(self.epochs)
    }

    fn snapshots(&self) -> Vec<usize> {
        if self.snapshot_epochs.is_empty() {
            vec![self.epochs]
        } else {
            self.snapshot_epochs.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_speakers < 2 {
            return Err(Error::Config("batch_speakers must be at least 2".into()));
        }
        if let Some(&e) = self.snapshot_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::Config(format!(
                "snapshot epoch {e} outside 1..={}",
                self.epochs
            )));
        }
        Ok(())
    }
}

/// Training samples with metadata, and their m-vectors in external mode.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub set: &'a EmbeddingSet,
    pub m_vectors: Option<&'a EmbeddingSet>,
}

impl TrainData<'_> {
    /// Row of every sample in the m-vector set.
    fn m_rows(&self) -> Result<Option<Vec<usize>>> {
        let Some(ms) = self.m_vectors else { return Ok(None) };
        (0..self.set.len())
            .map(|i| {
                ms.position(self.set.id(i)).ok_or_else(|| {
                    Error::InvalidData(format!("no m-vector for sample '{}'", self.set.id(i)))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Rows downsampled so that every domain keeps as many samples as the
/// smallest one. Output is grouped by domain name, rows ascending.
pub fn balance_by_domain(meta: &[SampleMeta], rows: &[usize], seed: u64) -> Vec<usize> {
    let mut by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by_domain.entry(meta[r].domain.as_str()).or_default().push(r);
    }
    let Some(min) = by_domain.values().map(Vec::len).min() else {
        return Vec::new();
    };
    let mut rng = seeded_rng(seed, BALANCE_STREAM);
    let mut out = Vec::with_capacity(min * by_domain.len());
    for group in by_domain.values() {
        let mut pick: Vec<usize> = sample_indices(&mut rng, group.len(), min)
            .into_iter()
            .map(|k| group[k])
            .collect();
        pick.sort_unstable();
        out.extend(pick);
    }
    out
}

fn gather_rows(set: &EmbeddingSet, rows: impl ExactSizeIterator<Item = usize>) -> DMatrix<f64> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * set.dim());
    for r in rows {
        data.extend_from_slice(set.vector(r));
    }
    DMatrix::from_row_slice(n, set.dim(), &data)
}

/// Two-stage training. Stage 1 updates every trainable tensor; stage 2
/// freezes the front-end and scorer and trains the side-information and
/// calibration tensors on a domain-balanced pool. Returns the snapshots
/// requested in the config, in epoch order.
pub fn train(mut model: DpldaModel, data: TrainData<'_>, cfg: &TrainConfig) -> Result<Vec<(usize, DpldaModel)>> {
    cfg.validate()?;
    model.validate()?;
    if data.set.dim() != model.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.in_dim(),
            got: data.set.dim(),
        });
    }
    if model.side.is_external() != data.m_vectors.is_some() {
        return Err(Error::InvalidData(
            "m-vectors must be supplied exactly when the model expects them".into(),
        ));
    }
    let meta = data.set.require_meta("training")?;
    let m_rows = data.m_rows()?;
    let seed = model.info.seed;
    let all: Vec<usize> = (0..data.set.len()).collect();
    let pool1 = TrainingPool::new(meta, &all)?;
    let pool2 = if cfg.balance_stage2 {
        TrainingPool::new(meta, &balance_by_domain(meta, &all, seed))?
    } else {
        pool1.clone()
    };
    let mut rng1 = seeded_rng(seed, STAGE1_STREAM);
    let mut rng2 = seeded_rng(seed, STAGE2_STREAM);
    let tensors1 = model.trainable_tensors(false);
    let tensors2 = model.trainable_tensors(true);
    let stage1 = cfg.stage1();
    let snapshots = cfg.snapshots();
    let mut adam = Adam::new(&model, cfg.adam);
    let mut out = Vec::new();

    for epoch in 1..=cfg.epochs {
        let stage2 = epoch > stage1;
        let (pool, rng, tensors, lr) = if stage2 {
            (&pool2, &mut rng2, &tensors2, cfg.stage2_lr.unwrap_or(cfg.adam.lr))
        } else {
            (&pool1, &mut rng1, &tensors1, cfg.adam.lr)
        };
        let spec = BatchSpec::new(cfg.batch_speakers.min(pool.n_speakers()))?;
        for _ in 0..pool.batches_per_epoch(&spec) {
            let mb = sample_minibatch(pool, &spec, rng)?;
            let x = gather_rows(data.set, mb.rows.iter().copied());
            let m = match (&m_rows, data.m_vectors) {
                (Some(mr), Some(ms)) => Some(gather_rows(ms, mb.rows.iter().map(|&r| mr[r]))),
                _ => None,
            };
            let input = BatchInput {
                x: &x,
                m: m.as_ref(),
                pairs: &mb.pairs,
            };
            let grads = match batch_loss_and_grad(&model, &input) {
                Ok((_, g)) => g,
                Err(Error::InsufficientData(_)) => continue,
                Err(Error::Diverged(msg)) => {
                    return Err(Error::Diverged(format!("epoch {epoch}: {msg}")))
                }
                Err(e) => return Err(e),
            };
            adam.update(&mut model, &grads, tensors, lr);
        }
        model.info.epoch = epoch;
        if snapshots.contains(&epoch) {
            out.push((epoch, model.clone()));
        }
    }
    Ok(out)
}

/// Held-out trials used for model selection.
#[derive(Debug, Clone, Copy)]
pub struct DevSet<'a> {
    pub name: &'a str,
    pub set: &'a EmbeddingSet,
    pub m_vectors: Option<&'a EmbeddingSet>,
    pub trials: &'a [Trial],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub epoch: usize,
    /// Actual Cllr on each dev set, in input order.
    pub dev_cllr: Vec<f64>,
    pub mean_cllr: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub best: DpldaModel,
    pub best_seed: u64,
    pub best_epoch: usize,
    /// One row per (seed, epoch), seeds and epochs in ascending order.
    pub table: Vec<SweepRow>,
}

/// Trains one model per seed (built by `init`), scores every snapshot on the
/// dev sets and returns the snapshot with the lowest mean actual Cllr. Ties
/// go to the lower seed, then the lower epoch.
pub fn sweep_and_select(
    init: impl Fn(u64) -> Result<DpldaModel>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    seeds: &[u64],
    epochs: &[usize],
    dev: &[DevSet<'_>],
) -> Result<SweepResult> {
    if seeds.is_empty() || epochs.is_empty() || dev.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one seed, one epoch and one dev set".into(),
        ));
    }
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let mut epochs = epochs.to_vec();
    epochs.sort_unstable();
    epochs.dedup();
    let mut run_cfg = cfg.clone();
    run_cfg.epochs = *epochs.last().expect("non-empty");
    run_cfg.snapshot_epochs = epochs.clone();
    if let Some(s1) = cfg.stage1_epochs {
        run_cfg.stage1_epochs = Some(s1.min(run_cfg.epochs));
    }

    let mut table = Vec::new();
    let mut best: Option<(f64, u64, usize, DpldaModel)> = None;
    for &seed in &seeds {
        let model = init(seed)?;
        for (epoch, snap) in train(model, data, &run_cfg)? {
            let dev_cllr = dev
                .iter()
                .map(|d| cllr(&snap.score_trials(d.set, d.m_vectors, d.trials)?))
                .collect::<Result<Vec<f64>>>()?;
            let mean_cllr = dev_cllr.iter().sum::<f64>() / dev_cllr.len() as f64;
            if best.as_ref().is_none_or(|b| mean_cllr < b.0) {
                best = Some((mean_cllr, seed, epoch, snap));
            }
            table.push(SweepRow {
                seed,
                epoch,
                dev_cllr,
                mean_cllr,
            });
        }
    }
    let (_, best_seed, best_epoch, best) = best.expect("at least one snapshot");
    Ok(SweepResult {
        best,
        best_seed,
        best_epoch,
        table,
    })
}
