//! Seeded synthetic multi-condition embeddings with exact oracle LLRs.
//!
//! A speaker has a latent identity `y ~ N(0, B0)`. A sample recorded in
//! condition `c` is `x = y + shift_c + h + scale_c·e` with `e ~ N(0, W0)` and
//! `h ~ N(0, bias_c²·I)` a per-session offset shared by the session's samples.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)` and a fixed stream number per purpose; normals are
//! drawn with `rand_distr::StandardNormal`. With the crate versions pinned in
//! the lockfile the output is identical across platforms.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{EmbeddingSet, Label, SampleMeta, Trial};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::plda::TwoCovModel;

/// Seeded generator for one named purpose.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSpec {
    pub name: String,
    pub domain: String,
    pub mean_shift: Vec<f64>,
    pub within_scale: f64,
    /// Standard deviation of the per-session offset. Samples of one session
    /// share it, which inflates same-session scores.
    pub score_shift_bias: f64,
}

impl ConditionSpec {
    /// Generative model of cross-session pairs in this condition.
    pub fn oracle_model(&self, between: &DMatrix<f64>, within: &DMatrix<f64>) -> TwoCovModel {
        let dim = between.nrows();
        let w = within * (self.within_scale * self.within_scale)
            + DMatrix::identity(dim, dim) * (self.score_shift_bias * self.score_shift_bias);
        TwoCovModel {
            between: between.clone(),
            within: w,
            mean: DVector::from_column_slice(&self.mean_shift),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_speakers: usize,
    pub sessions_per_speaker: usize,
    pub samples_per_session: usize,
    pub conditions: Vec<ConditionSpec>,
    /// Speaker share of each domain; speakers are assigned in this order.
    /// Empty means equal shares over the domains of `conditions`.
    pub domain_shares: Vec<(String, f64)>,
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    pub seed: u64,
    /// Prefix of generated speaker, session and sample ids.
    pub id_prefix: String,
}

impl SynthConfig {
    /// Identity between-speaker and half-identity within-speaker covariance.
    pub fn new(dim: usize, n_speakers: usize, conditions: Vec<ConditionSpec>, seed: u64) -> Self {
        SynthConfig {
            dim,
            n_speakers,
            sessions_per_speaker: 4,
            samples_per_session: 2,
            conditions,
            domain_shares: Vec::new(),
            between: DMatrix::identity(dim, dim),
            within: DMatrix::identity(dim, dim) * 0.5,
            seed,
            id_prefix: String::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_speakers == 0 || self.sessions_per_speaker == 0 {
            return Err(Error::Config("synthetic dims and counts must be positive".into()));
        }
        if self.samples_per_session == 0 {
            return Err(Error::Config("samples_per_session must be positive".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("no conditions".into()));
        }
        if self.between.shape() != (self.dim, self.dim) || self.within.shape() != (self.dim, self.dim) {
            return Err(Error::Config("covariance shapes do not match dim".into()));
        }
        for c in &self.conditions {
            if c.mean_shift.len() != self.dim {
                return Err(Error::Config(format!(
                    "condition '{}' mean shift has length {}, expected {}",
                    c.name,
                    c.mean_shift.len(),
                    self.dim
                )));
            }
            if !(c.within_scale > 0.0) || c.score_shift_bias < 0.0 {
                return Err(Error::Config(format!(
                    "condition '{}' needs within_scale > 0 and bias >= 0",
                    c.name
                )));
            }
        }
        Ok(())
    }

    fn domains(&self) -> Vec<(String, f64)> {
        if !self.domain_shares.is_empty() {
            return self.domain_shares.clone();
        }
        let names = crate::data::distinct(self.conditions.iter().map(|c| c.domain.as_str()));
        names.into_iter().map(|d| (d, 1.0)).collect()
    }
}

/// Generated set plus the generative model of every condition.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub set: EmbeddingSet,
    pub oracles: BTreeMap<String, TwoCovModel>,
}

/// Matrix square root factor `L` with `L·Lᵀ = m`, allowing PSD input.
fn sampling_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    match cholesky(m, "covariance") {
        Ok(c) => c.l(),
        Err(_) => {
            let (vals, vecs) = crate::linalg::sym_eigen_desc(&symmetrize(m));
            vecs * DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()))
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, 1);
    let lb = sampling_factor(&cfg.between);
    let lw = sampling_factor(&cfg.within);

    let domains = cfg.domains();
    let total_share: f64 = domains.iter().map(|d| d.1).sum();
    let mut speaker_domain = Vec::with_capacity(cfg.n_speakers);
    let mut acc = 0.0;
    for (name, share) in &domains {
        acc += share;
        let upto = ((acc / total_share) * cfg.n_speakers as f64).round() as usize;
        while speaker_domain.len() < upto.min(cfg.n_speakers) {
            speaker_domain.push(name.clone());
        }
    }
    while speaker_domain.len() < cfg.n_speakers {
        speaker_domain.push(domains.last().map(|d| d.0.clone()).unwrap_or_default());
    }

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut meta = Vec::new();
    let p = &cfg.id_prefix;
    for (s, domain) in speaker_domain.iter().enumerate() {
        let conds: Vec<&ConditionSpec> =
            cfg.conditions.iter().filter(|c| &c.domain == domain).collect();
        if conds.is_empty() {
            return Err(Error::Config(format!("domain '{domain}' has no conditions")));
        }
        let y = &lb * normal_vec(&mut rng, cfg.dim);
        let speaker = format!("{p}spk{s:04}");
        for sess in 0..cfg.sessions_per_speaker {
            let cond = conds[rng.random_range(0..conds.len())];
            let session = format!("{speaker}-s{sess}");
            let h = normal_vec(&mut rng, cfg.dim) * cond.score_shift_bias;
            for k in 0..cfg.samples_per_session {
                let e = &lw * normal_vec(&mut rng, cfg.dim);
                let x = &y + DVector::from_column_slice(&cond.mean_shift) + &h + e * cond.within_scale;
                let id = format!("{session}-{k}");
                data.extend(x.iter().copied());
                meta.push(SampleMeta::new(&id, &speaker, &session, domain, &cond.name));
                ids.push(id);
            }
        }
    }
    let set = EmbeddingSet::from_flat(cfg.dim, ids, data)?.with_meta(meta)?;
    let oracles = cfg
        .conditions
        .iter()
        .map(|c| (c.name.clone(), c.oracle_model(&cfg.between, &cfg.within)))
        .collect();
    Ok(SynthData { set, oracles })
}

fn gaussian_log_density(y: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(cov, "joint covariance")?;
    let sol = chol.solve(y);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = y.len() as f64;
    Ok(-0.5 * (y.dot(&sol) + log_det + n * (2.0 * std::f64::consts::PI).ln()))
}

/// Exact LLR of same vs different speaker when each side comes from its own
/// two-covariance model (sharing the between-speaker covariance of `a`).
///
/// Builds the `2d × 2d` joint covariance under each hypothesis and evaluates
/// both Gaussian log-densities directly.
pub fn oracle_llr_cross(x1: &[f64], a: &TwoCovModel, x2: &[f64], b: &TwoCovModel) -> Result<f64> {
    let d = a.dim();
    if x1.len() != d || x2.len() != d || b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x1.len().max(x2.len()),
        });
    }
    let mut y = DVector::zeros(2 * d);
    for i in 0..d {
        y[i] = x1[i] - a.mean[i];
        y[d + i] = x2[i] - b.mean[i];
    }
    let bb = &a.between;
    let mut same = DMatrix::zeros(2 * d, 2 * d);
    let mut diff = DMatrix::zeros(2 * d, 2 * d);
    let t1 = bb + &a.within;
    let t2 = bb + &b.within;
    same.view_mut((0, 0), (d, d)).copy_from(&t1);
    same.view_mut((d, d), (d, d)).copy_from(&t2);
    same.view_mut((0, d), (d, d)).copy_from(bb);
    same.view_mut((d, 0), (d, d)).copy_from(bb);
    diff.view_mut((0, 0), (d, d)).copy_from(&t1);
    diff.view_mut((d, d), (d, d)).copy_from(&t2);
    Ok(gaussian_log_density(&y, &same)? - gaussian_log_density(&y, &diff)?)
}

/// Exact same-vs-different speaker LLR under one two-covariance model.
pub fn oracle_llr(x1: &[f64], x2: &[f64], model: &TwoCovModel) -> Result<f64> {
    oracle_llr_cross(x1, model, x2, model)
}

/// Evaluation trials over a set with metadata: every cross-session
/// same-speaker pair as a target, and up to `max_impostors` different-speaker
/// pairs drawn uniformly without replacement. Same-session pairs are never
/// emitted.
pub fn build_trials(set: &EmbeddingSet, max_impostors: usize, seed: u64) -> Result<Vec<Trial>> {
    let meta = set.require_meta("trial construction")?;
    let n = set.len();
    let mut targets = Vec::new();
    let mut impostor_pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if meta[i].speaker_id == meta[j].speaker_id {
                if meta[i].session_id != meta[j].session_id {
                    targets.push((i, j));
                }
            } else {
                impostor_pairs.push((i, j));
            }
        }
    }
    let impostors: Vec<(usize, usize)> = if impostor_pairs.len() > max_impostors {
        let mut rng = seeded_rng(seed, 2);
        let mut idx = sample_indices(&mut rng, impostor_pairs.len(), max_impostors).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| impostor_pairs[k]).collect()
    } else {
        impostor_pairs
    };
    let mut out = Vec::with_capacity(targets.len() + impostors.len());
    for (i, j) in targets {
        out.push(Trial::new(set.id(i), set.id(j), Label::Target));
    }
    for (i, j) in impostors {
        out.push(Trial::new(set.id(i), set.id(j), Label::Impostor));
    }
    Ok(out)
}

/// Oracle LLR of every trial, using the condition recorded in the metadata of
/// each side.
pub fn oracle_scores(
    set: &EmbeddingSet,
    trials: &[Trial],
    oracles: &BTreeMap<String, TwoCovModel>,
) -> Result<Vec<f64>> {
    let meta = set.require_meta("oracle scoring")?;
    trials
        .iter()
        .map(|t| {
            let i = set
                .position(&t.enroll_id)
                .ok_or_else(|| Error::InvalidData(format!("unknown sample '{}'", t.enroll_id)))?;
            let j = set
                .position(&t.test_id)
                .ok_or_else(|| Error::InvalidData(format!("unknown sample '{}'", t.test_id)))?;
            let a = oracles.get(&meta[i].condition).ok_or_else(|| {
                Error::InvalidData(format!("no oracle for condition '{}'", meta[i].condition))
            })?;
            let b = oracles.get(&meta[j].condition).ok_or_else(|| {
                Error::InvalidData(format!("no oracle for condition '{}'", meta[j].condition))
            })?;
            oracle_llr_cross(set.vector(i), a, set.vector(j), b)
        })
        .collect()
}
