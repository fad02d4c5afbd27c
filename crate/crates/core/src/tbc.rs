//! Trial-based calibration: for every trial, calibration data similar in
//! condition to each side is selected from a pool and a regularized affine
//! calibration is fitted on it.

use std::collections::HashMap;

use crate::benchmark::raw_scores;
use crate::calibration::{fit_affine, Anchor, EffectivePrior, GlobalCal};
use crate::data::{distinct, EmbeddingSet, ScoreKind, ScoreSet, Trial};
use crate::dplda::{prepare_all, trial_sides};
use crate::error::{Error, Result};
use crate::plda::{fit_two_cov, two_cov_to_scorer, PldaScorer, PreparedSide};
use crate::preprocess::{fit_lda, FrontEnd};

/// PLDA trained with condition labels in place of speaker labels; its score
/// measures how similar two samples are in condition.
#[derive(Debug, Clone, PartialEq)]
pub struct CondPlda {
    pub front: FrontEnd,
    pub scorer: PldaScorer,
}

impl CondPlda {
    pub fn similarity(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        self.scorer.score(self.front.apply(x1)?.as_slice(), self.front.apply(x2)?.as_slice())
    }
}

/// Fits the condition PLDA on a pool with metadata. `lda_dim` defaults to
/// the embedding dimension.
pub fn fit_cond_plda(pool: &EmbeddingSet, lda_dim: Option<usize>) -> Result<CondPlda> {
    let meta = pool.require_meta("condition PLDA")?;
    let labels: Vec<&str> = meta.iter().map(|m| m.condition.as_str()).collect();
    if distinct(labels.iter().copied()).len() < 2 {
        return Err(Error::InsufficientData(
            "condition PLDA needs at least 2 conditions".into(),
        ));
    }
    let x = pool.matrix();
    let (front, _) = fit_lda(&x, &labels, lda_dim.unwrap_or(pool.dim()))?;
    let (xt, _) = front.apply_rows(&x)?;
    let scorer = two_cov_to_scorer(&fit_two_cov(&xt, &labels)?)?;
    Ok(CondPlda { front, scorer })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbcConfig {
    /// Minimum number of target trials in each per-trial calibration set.
    pub target_trial_goal: usize,
    /// Weight of the pull toward the global calibration (objective in nats).
    pub reg_weight: f64,
    pub global_cal: GlobalCal,
    pub pi: EffectivePrior,
    /// Upper bound on impostor pairs per calibration fit; larger selections
    /// are subsampled with a fixed stride.
    pub max_impostors: usize,
}

impl TbcConfig {
    pub fn new(global_cal: GlobalCal) -> Self {
        TbcConfig {
            target_trial_goal: 100,
            reg_weight: 0.02,
            global_cal,
            pi: EffectivePrior::default(),
            max_impostors: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_trial_goal == 0 {
            return Err(Error::Config("target_trial_goal must be at least 1".into()));
        }
        if self.max_impostors == 0 {
            return Err(Error::Config("max_impostors must be at least 1".into()));
        }
        if !(self.reg_weight >= 0.0) || !self.reg_weight.is_finite() {
            return Err(Error::Config("reg_weight must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Calibration pool with everything per-sample precomputed.
#[derive(Debug, Clone)]
pub struct TbcPool {
    set: EmbeddingSet,
    speaker: Vec<u32>,
    session: Vec<u32>,
    by_speaker: Vec<Vec<usize>>,
    /// Position of each sample in lexicographic id order.
    id_rank: Vec<usize>,
    cond: Vec<PreparedSide>,
    spk: Vec<PreparedSide>,
}

impl TbcPool {
    /// `front` and `scorer` are the speaker-verification PLDA whose raw
    /// scores are being calibrated.
    pub fn new(set: EmbeddingSet, cond: &CondPlda, front: &FrontEnd, scorer: &PldaScorer) -> Result<Self> {
        let meta = set.require_meta("TBC pool")?;
        if set.is_empty() {
            return Err(Error::InsufficientData("empty TBC pool".into()));
        }
        let mut spk_ids: HashMap<&str, u32> = HashMap::new();
        let mut sess_ids: HashMap<(&str, &str), u32> = HashMap::new();
        let mut speaker = Vec::with_capacity(set.len());
        let mut session = Vec::with_capacity(set.len());
        let mut by_speaker: Vec<Vec<usize>> = Vec::new();
        for (i, m) in meta.iter().enumerate() {
            let next = spk_ids.len() as u32;
            let s = *spk_ids.entry(m.speaker_id.as_str()).or_insert(next);
            if s as usize == by_speaker.len() {
                by_speaker.push(Vec::new());
            }
            by_speaker[s as usize].push(i);
            let next = sess_ids.len() as u32;
            session.push(*sess_ids.entry((m.speaker_id.as_str(), m.session_id.as_str())).or_insert(next));
            speaker.push(s);
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.sort_by(|&a, &b| set.id(a).cmp(set.id(b)));
        let mut id_rank = vec![0; set.len()];
        for (r, &i) in order.iter().enumerate() {
            id_rank[i] = r;
        }
        let mut cond_prep = Vec::with_capacity(set.len());
        let mut spk_prep = Vec::with_capacity(set.len());
        for i in 0..set.len() {
            cond_prep.push(cond.scorer.prepare(cond.front.apply(set.vector(i))?)?);
            spk_prep.push(scorer.prepare(front.apply(set.vector(i))?)?);
        }
        Ok(TbcPool {
            set,
            speaker,
            session,
            by_speaker,
            id_rank,
            cond: cond_prep,
            spk: spk_prep,
        })
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn set(&self) -> &EmbeddingSet {
        &self.set
    }

    /// Pool indices by descending similarity, ties by sample id.
    pub fn rank(&self, similarities: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            similarities[b]
                .total_cmp(&similarities[a])
                .then(self.id_rank[a].cmp(&self.id_rank[b]))
        });
        order
    }

    /// Condition similarity of a prepared trial side to every pool sample.
    pub fn similarities(&self, cond: &CondPlda, side: &PreparedSide) -> Vec<f64> {
        self.cond.iter().map(|p| cond.scorer.score_prepared(side, p)).collect()
    }

    fn is_target_pair(&self, a: usize, b: usize) -> bool {
        a != b && self.speaker[a] == self.speaker[b] && self.session[a] != self.session[b]
    }
}

/// Selected enrollment-side and test-side calibration samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub enroll: Vec<usize>,
    pub test: Vec<usize>,
    /// Distinct cross-session same-speaker pairs between the two selections.
    pub n_targets: usize,
    /// False when the whole pool was needed and the goal still not reached.
    pub reached_goal: bool,
}

/// Grows equal-length prefixes of both rankings until the selections contain
/// at least `goal` distinct cross-session same-speaker pairs (one sample from
/// each selection).
pub fn select_prefixes(pool: &TbcPool, enroll_rank: &[usize], test_rank: &[usize], goal: usize) -> Selection {
    let n = pool.len();
    let mut in_e = vec![false; n];
    let mut in_t = vec![false; n];
    let mut n_targets = 0;
    let mut k = 0;
    while k < n && n_targets < goal {
        let e = enroll_rank[k];
        let t = test_rank[k];
        // A pair is already counted when it was reachable the other way round.
        for &b in &pool.by_speaker[pool.speaker[e] as usize] {
            if in_t[b] && pool.is_target_pair(e, b) && !(in_t[e] && in_e[b]) {
                n_targets += 1;
            }
        }
        in_e[e] = true;
        for &a in &pool.by_speaker[pool.speaker[t] as usize] {
            if in_e[a] && pool.is_target_pair(a, t) && !(in_e[t] && in_t[a]) {
                n_targets += 1;
            }
        }
        in_t[t] = true;
        k += 1;
    }
    Selection {
        enroll: enroll_rank[..k].to_vec(),
        test: test_rank[..k].to_vec(),
        n_targets,
        reached_goal: n_targets >= goal,
    }
}

/// Selection for a single side: the same ranking serves as enrollment and
/// test ranking. Returns sample ids of the prefix and whether the goal was
/// reached.
pub fn select_subset(side: &[f64], pool: &TbcPool, cond: &CondPlda, cfg: &TbcConfig) -> Result<(Vec<String>, bool)> {
    cfg.validate()?;
    let prepared = cond.scorer.prepare(cond.front.apply(side)?)?;
    let rank = pool.rank(&pool.similarities(cond, &prepared));
    let sel = select_prefixes(pool, &rank, &rank, cfg.target_trial_goal);
    Ok((
        sel.enroll.iter().map(|&i| pool.set.id(i).to_string()).collect(),
        sel.reached_goal,
    ))
}

/// Result of calibrating one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TbcOutcome {
    pub llr: f64,
    pub raw: f64,
    pub cal: GlobalCal,
    pub n_targets: usize,
    pub n_impostors: usize,
    pub reached_goal: bool,
    /// The selected set lacked one class and the global calibration was used.
    pub fallback: bool,
}

/// Speaker PLDA, condition PLDA and calibration pool.
#[derive(Debug, Clone)]
pub struct TbcScorer {
    pub front: FrontEnd,
    pub scorer: PldaScorer,
    pub cond: CondPlda,
    pub pool: TbcPool,
    pub cfg: TbcConfig,
}

/// Per-sample quantities of a trial side.
#[derive(Debug, Clone)]
pub struct TbcSide {
    pub spk: PreparedSide,
    /// Pool indices by descending condition similarity.
    pub rank: Vec<usize>,
}

impl TbcScorer {
    pub fn new(front: FrontEnd, scorer: PldaScorer, cond: CondPlda, pool_set: EmbeddingSet, cfg: TbcConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = TbcPool::new(pool_set, &cond, &front, &scorer)?;
        Ok(TbcScorer {
            front,
            scorer,
            cond,
            pool,
            cfg,
        })
    }

    pub fn prepare(&self, x: &[f64]) -> Result<TbcSide> {
        let c = self.cond.scorer.prepare(self.cond.front.apply(x)?)?;
        Ok(TbcSide {
            spk: self.scorer.prepare(self.front.apply(x)?)?,
            rank: self.pool.rank(&self.pool.similarities(&self.cond, &c)),
        })
    }

    pub fn score_prepared(&self, a: &TbcSide, b: &TbcSide) -> Result<TbcOutcome> {
        let raw = self.scorer.score_prepared(&a.spk, &b.spk);
        let sel = select_prefixes(&self.pool, &a.rank, &b.rank, self.cfg.target_trial_goal);
        let n = self.pool.len();
        let mut in_e = vec![false; n];
        let mut in_t = vec![false; n];
        sel.enroll.iter().for_each(|&i| in_e[i] = true);
        sel.test.iter().for_each(|&i| in_t[i] = true);
        // Pairs inside the intersection appear in both orders; keep one.
        let duplicate = |e: usize, t: usize| in_t[e] && in_e[t] && e > t;
        let score = |e: usize, t: usize| self.scorer.score_prepared(&self.pool.spk[e], &self.pool.spk[t]);
        let mut tgt = Vec::new();
        for &e in &sel.enroll {
            for &t in &self.pool.by_speaker[self.pool.speaker[e] as usize] {
                if in_t[t] && self.pool.is_target_pair(e, t) && !duplicate(e, t) {
                    tgt.push(score(e, t));
                }
            }
        }
        let k = sel.enroll.len();
        let cells = k * k;
        let mut stride = cells.div_ceil(self.cfg.max_impostors).max(1);
        // A stride sharing a factor with k would revisit the same test columns.
        while stride > 1 && gcd(stride, k) != 1 {
            stride += 1;
        }
        let mut imp = Vec::new();
        for idx in (0..cells).step_by(stride) {
            let (e, t) = (sel.enroll[idx / k], sel.test[idx % k]);
            if self.pool.speaker[e] != self.pool.speaker[t] && !duplicate(e, t) {
                imp.push(score(e, t));
            }
        }
        let global = self.cfg.global_cal;
        let (cal, fallback) = if tgt.is_empty() || imp.is_empty() {
            (global, true)
        } else {
            let anchor = Anchor {
                center: global,
                weight: self.cfg.reg_weight,
            };
            (fit_affine(&tgt, &imp, self.cfg.pi, Some(anchor))?.cal, false)
        };
        Ok(TbcOutcome {
            llr: cal.apply(raw),
            raw,
            cal,
            n_targets: tgt.len(),
            n_impostors: imp.len(),
            reached_goal: sel.reached_goal,
            fallback,
        })
    }

    pub fn score(&self, x1: &[f64], x2: &[f64]) -> Result<TbcOutcome> {
        self.score_prepared(&self.prepare(x1)?, &self.prepare(x2)?)
    }

    /// Calibrated scores of trials over `set`; each side is prepared once.
    pub fn score_trials(&self, set: &EmbeddingSet, trials: &[Trial]) -> Result<ScoreSet> {
        let prepared = prepare_all(set, trials, |i| self.prepare(set.vector(i)))?;
        let scores = trials
            .iter()
            .map(|t| {
                let (a, b) = trial_sides(set, t)?;
                Ok(self
                    .score_prepared(
                        prepared[a].as_ref().expect("prepared"),
                        prepared[b].as_ref().expect("prepared"),
                    )?
                    .llr)
            })
            .collect::<Result<Vec<f64>>>()?;
        ScoreSet::new(trials.to_vec(), scores, ScoreKind::Llr)
    }

    /// Raw speaker-PLDA scores of trials over `set`.
    pub fn raw_scores(&self, set: &EmbeddingSet, trials: &[Trial]) -> Result<ScoreSet> {
        raw_scores(&self.front, &self.scorer, set, trials)
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Free function form of [`TbcScorer::score`].
pub fn tbc_score(x1: &[f64], x2: &[f64], tbc: &TbcScorer) -> Result<f64> {
    Ok(tbc.score(x1, x2)?.llr)
}
