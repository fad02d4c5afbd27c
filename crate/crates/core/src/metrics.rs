//! Cllr, min-Cllr via pool-adjacent-violators, and EER.

use std::f64::consts::LN_2;

use crate::calibration::{cross_entropy, EffectivePrior};
use crate::data::{Label, ScoreSet};
use crate::error::{Error, Result};

/// Pseudo-count added to each class of a pooled PAV block before its LLR is
/// taken, so that single-class blocks map to finite LLRs.
pub const PAV_PSEUDO_COUNT: f64 = 1e-6;

/// Actual Cllr in bits: the cross-entropy at a prior of one half.
pub fn cllr(scores: &ScoreSet) -> Result<f64> {
    cross_entropy(scores, EffectivePrior::default())
}

/// Group of tied scores with its class counts.
#[derive(Debug, Clone, Copy)]
struct Block {
    lo: f64,
    hi: f64,
    n_tgt: f64,
    n_imp: f64,
}

impl Block {
    fn posterior(&self) -> f64 {
        self.n_tgt / (self.n_tgt + self.n_imp)
    }
}

/// Score-sorted blocks of tied scores.
fn tied_blocks(scores: &[f64], labels: &[Label]) -> Result<(Vec<Block>, f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let mut pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| (s, l.is_target()))
        .collect();
    if pairs.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::InvalidData("non-finite score".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut blocks: Vec<Block> = Vec::new();
    let (mut t, mut n) = (0.0, 0.0);
    for (s, is_t) in pairs {
        let (dt, dn) = if is_t { (1.0, 0.0) } else { (0.0, 1.0) };
        t += dt;
        n += dn;
        match blocks.last_mut() {
            Some(b) if b.hi == s => {
                b.n_tgt += dt;
                b.n_imp += dn;
            }
            _ => blocks.push(Block {
                lo: s,
                hi: s,
                n_tgt: dt,
                n_imp: dn,
            }),
        }
    }
    if t == 0.0 || n == 0.0 {
        return Err(Error::InsufficientData(
            "metric needs both target and impostor trials".into(),
        ));
    }
    Ok((blocks, t, n))
}

/// Non-decreasing step function from raw scores to LLRs fitted by PAV.
#[derive(Debug, Clone, PartialEq)]
pub struct PavMap {
    /// Upper score bound of each pooled block, ascending.
    pub upper: Vec<f64>,
    /// Lower score bound of each pooled block, ascending.
    pub lower: Vec<f64>,
    /// Pooled target posterior of each block (before smoothing).
    pub posterior: Vec<f64>,
    /// Smoothed LLR of each block.
    pub llr: Vec<f64>,
    n_tgt: Vec<f64>,
    n_imp: Vec<f64>,
}

impl PavMap {
    /// LLR of a score: value of the block whose range covers it, or of the
    /// nearest block above (the last block for scores beyond the top).
    pub fn eval(&self, s: f64) -> f64 {
        let i = self.upper.partition_point(|&u| u < s);
        self.llr[i.min(self.llr.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.llr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.llr.is_empty()
    }
}

/// Pool-adjacent-violators fit of a non-decreasing target posterior, turned
/// into LLRs by removing the empirical prior log-odds.
pub fn pav_calibrate(scores: &[f64], labels: &[Label]) -> Result<PavMap> {
    let (blocks, t, n) = tied_blocks(scores, labels)?;
    let mut stack: Vec<Block> = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut cur = b;
        while let Some(prev) = stack.last() {
            if prev.posterior() >= cur.posterior() {
                cur = Block {
                    lo: prev.lo,
                    hi: cur.hi,
                    n_tgt: prev.n_tgt + cur.n_tgt,
                    n_imp: prev.n_imp + cur.n_imp,
                };
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    let prior_log_odds = (t / n).ln();
    let llr = stack
        .iter()
        .map(|b| ((b.n_tgt + PAV_PSEUDO_COUNT) / (b.n_imp + PAV_PSEUDO_COUNT)).ln() - prior_log_odds)
        .collect();
    Ok(PavMap {
        upper: stack.iter().map(|b| b.hi).collect(),
        lower: stack.iter().map(|b| b.lo).collect(),
        posterior: stack.iter().map(Block::posterior).collect(),
        llr,
        n_tgt: stack.iter().map(|b| b.n_tgt).collect(),
        n_imp: stack.iter().map(|b| b.n_imp).collect(),
    })
}

/// Cllr after the optimal monotone recalibration of the scores, from the
/// exact pooled block counts (blocks holding a single class cost nothing).
pub fn min_cllr(scores: &ScoreSet) -> Result<f64> {
    let map = pav_calibrate(scores.scores(), &scores.labels())?;
    let t: f64 = map.n_tgt.iter().sum();
    let n: f64 = map.n_imp.iter().sum();
    let mut tgt_cost = 0.0;
    let mut imp_cost = 0.0;
    for (&bt, &bn) in map.n_tgt.iter().zip(&map.n_imp) {
        if bt > 0.0 && bn > 0.0 {
            tgt_cost += bt * ((bn * t) / (bt * n)).ln_1p();
            imp_cost += bn * ((bt * n) / (bn * t)).ln_1p();
        }
    }
    Ok(0.5 * (tgt_cost / t + imp_cost / n) / LN_2)
}

/// Equal error rate from the convex hull of the ROC.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let (blocks, t, n) = tied_blocks(scores.scores(), &scores.labels())?;
    // (P_fa, P_miss) for thresholds at and between every block.
    let mut points = Vec::with_capacity(blocks.len() + 1);
    let (mut ct, mut cn) = (0.0, 0.0);
    points.push((1.0, 0.0));
    for b in &blocks {
        ct += b.n_tgt;
        cn += b.n_imp;
        points.push((1.0 - cn / n, ct / t));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    for w in hull.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        let d1 = y1 - x1;
        let d2 = y2 - x2;
        if d1 >= 0.0 && d2 <= 0.0 {
            if d1 == d2 {
                return Ok(x1);
            }
            let f = d1 / (d1 - d2);
            return Ok(x1 + f * (x2 - x1));
        }
    }
    Ok(hull.first().map(|p| p.0.max(p.1)).unwrap_or(0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub actual_cllr: f64,
    pub min_cllr: f64,
    pub eer: f64,
    pub n_target: usize,
    pub n_impostor: usize,
}

impl EvalReport {
    /// Calibration loss: actual minus minimum Cllr.
    pub fn cal_loss(&self) -> f64 {
        self.actual_cllr - self.min_cllr
    }
}

pub fn evaluate(scores: &ScoreSet) -> Result<EvalReport> {
    let (tgt, imp) = scores.split();
    Ok(EvalReport {
        actual_cllr: cllr(scores)?,
        min_cllr: min_cllr(scores)?,
        eer: eer(scores)?,
        n_target: tgt.len(),
        n_impostor: imp.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScoreKind;

    fn set(scores: &[f64], labels: &[Label]) -> ScoreSet {
        ScoreSet::from_labeled(scores, labels, ScoreKind::Llr).unwrap()
    }

    use Label::{Impostor as I, Target as T};

    #[test]
    fn pav_pools_the_violating_pair() {
        let m = pav_calibrate(&[1.0, 2.0, 3.0, 4.0], &[I, T, I, T]).unwrap();
        assert_eq!(m.posterior, vec![0.0, 0.5, 1.0]);
        assert_eq!(m.upper, vec![1.0, 3.0, 4.0]);
        assert_eq!(m.lower, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn pav_keeps_separation() {
        let m = pav_calibrate(&[-2.0, -1.0, 1.0, 2.0], &[I, I, T, T]).unwrap();
        assert_eq!(m.posterior, vec![0.0, 1.0]);
        assert!(m.eval(-1.5) < 0.0 && m.eval(1.5) > 0.0);
    }

    #[test]
    fn eer_hand_values() {
        assert_eq!(eer(&set(&[1.0, 2.0, 3.0, 4.0], &[I, T, I, T])).unwrap(), 0.25);
        assert_eq!(eer(&set(&[1.0, 2.0, 3.0, 4.0], &[I, I, T, T])).unwrap(), 0.0);
        assert_eq!(eer(&set(&[0.7; 6], &[I, T, I, T, T, I])).unwrap(), 0.5);
    }

    #[test]
    fn cllr_directions() {
        let l = [T, T, I, I];
        assert_eq!(cllr(&set(&[0.0; 4], &l)).unwrap(), 1.0);
        assert!(cllr(&set(&[50.0, 50.0, -50.0, -50.0], &l)).unwrap() < 1e-10);
        assert!(cllr(&set(&[-50.0, -50.0, 50.0, 50.0], &l)).unwrap() > 50.0);
    }

    #[test]
    fn one_class_rejected() {
        assert!(min_cllr(&set(&[1.0, 2.0], &[T, T])).is_err());
        assert!(eer(&set(&[1.0, 2.0], &[I, I])).is_err());
    }
}
