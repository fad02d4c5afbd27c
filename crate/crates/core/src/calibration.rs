//! Cross-entropy objective and affine (logistic-regression) calibration.

use std::f64::consts::LN_2;

use crate::data::ScoreSet;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus};

/// L2 ridge on (alpha, beta) that keeps fits on separable data finite.
pub const CAL_RIDGE: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 200;

/// Prior probability of a target trial assumed by the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectivePrior(f64);

impl EffectivePrior {
    pub fn new(pi: f64) -> Result<Self> {
        if pi > 0.0 && pi < 1.0 {
            Ok(EffectivePrior(pi))
        } else {
            Err(Error::InvalidData(format!("prior {pi} outside (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `log(π / (1 − π))`.
    pub fn log_odds(self) -> f64 {
        (self.0 / (1.0 - self.0)).ln()
    }
}

impl Default for EffectivePrior {
    fn default() -> Self {
        EffectivePrior(0.5)
    }
}

/// Prior-weighted binary cross-entropy of LLRs in nats.
pub fn cross_entropy_nats(tgt: &[f64], imp: &[f64], pi: EffectivePrior) -> Result<f64> {
    if tgt.is_empty() || imp.is_empty() {
        return Err(Error::InsufficientData(
            "cross-entropy needs both target and impostor trials".into(),
        ));
    }
    weighted_cross_entropy(tgt, imp, pi, 1.0)
}

/// Cross-entropy with every per-trial term divided by `unit` before averaging.
fn weighted_cross_entropy(tgt: &[f64], imp: &[f64], pi: EffectivePrior, unit: f64) -> Result<f64> {
    let lo = pi.log_odds();
    let p = pi.value();
    let t: f64 = tgt.iter().map(|&l| softplus(-(l + lo)) / unit).sum::<f64>() / tgt.len() as f64;
    let n: f64 = imp.iter().map(|&l| softplus(l + lo) / unit).sum::<f64>() / imp.len() as f64;
    Ok(p * t + (1.0 - p) * n)
}

/// Cross-entropy of an LLR score set, in bits.
pub fn cross_entropy(scores: &ScoreSet, pi: EffectivePrior) -> Result<f64> {
    let (tgt, imp) = scores.split();
    if tgt.is_empty() || imp.is_empty() {
        return Err(Error::InsufficientData(
            "cross-entropy needs both target and impostor trials".into(),
        ));
    }
    weighted_cross_entropy(&tgt, &imp, pi, LN_2)
}

/// Affine score-to-LLR map `l = alpha·s + beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalCal {
    pub alpha: f64,
    pub beta: f64,
}

impl GlobalCal {
    pub const IDENTITY: GlobalCal = GlobalCal {
        alpha: 1.0,
        beta: 0.0,
    };

    pub fn apply(&self, s: f64) -> f64 {
        self.alpha * s + self.beta
    }

    /// Whether larger raw scores map to larger LLRs.
    pub fn is_increasing(&self) -> bool {
        self.alpha > 0.0
    }
}

pub fn apply_cal(score: f64, cal: &GlobalCal) -> f64 {
    cal.apply(score)
}

/// Quadratic pull of the affine parameters toward a reference calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub center: GlobalCal,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub cal: GlobalCal,
    pub objective: f64,
    pub iterations: usize,
    pub grad_inf_norm: f64,
}

/// Objective (nats), gradient and Hessian of the calibration loss at
/// `(alpha, beta)`, including ridge and anchor terms.
fn objective_terms(
    tgt: &[f64],
    imp: &[f64],
    pi: EffectivePrior,
    anchor: Option<Anchor>,
    theta: [f64; 2],
) -> (f64, [f64; 2], [f64; 3]) {
    let lo = pi.log_odds();
    let wt = pi.value() / tgt.len() as f64;
    let wn = (1.0 - pi.value()) / imp.len() as f64;
    let mut f = 0.0;
    let (mut ga, mut gb) = (0.0, 0.0);
    let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
    for &s in tgt {
        let a = theta[0] * s + theta[1] + lo;
        f += wt * softplus(-a);
        let d = -wt * sigmoid(-a);
        let h = wt * sigmoid(a) * sigmoid(-a);
        ga += d * s;
        gb += d;
        haa += h * s * s;
        hab += h * s;
        hbb += h;
    }
    for &s in imp {
        let a = theta[0] * s + theta[1] + lo;
        f += wn * softplus(a);
        let d = wn * sigmoid(a);
        let h = wn * sigmoid(a) * sigmoid(-a);
        ga += d * s;
        gb += d;
        haa += h * s * s;
        hab += h * s;
        hbb += h;
    }
    f += CAL_RIDGE * (theta[0] * theta[0] + theta[1] * theta[1]);
    ga += 2.0 * CAL_RIDGE * theta[0];
    gb += 2.0 * CAL_RIDGE * theta[1];
    haa += 2.0 * CAL_RIDGE;
    hbb += 2.0 * CAL_RIDGE;
    if let Some(an) = anchor {
        let da = theta[0] - an.center.alpha;
        let db = theta[1] - an.center.beta;
        f += an.weight * (da * da + db * db);
        ga += 2.0 * an.weight * da;
        gb += 2.0 * an.weight * db;
        haa += 2.0 * an.weight;
        hbb += 2.0 * an.weight;
    }
    (f, [ga, gb], [haa, hab, hbb])
}

/// Minimizes the prior-weighted cross-entropy of `alpha·s + beta` by damped
/// Newton iterations, optionally anchored toward a reference calibration.
pub fn fit_affine(
    tgt: &[f64],
    imp: &[f64],
    pi: EffectivePrior,
    anchor: Option<Anchor>,
) -> Result<AffineFit> {
    if tgt.is_empty() || imp.is_empty() {
        return Err(Error::InsufficientData(
            "calibration needs both target and impostor trials".into(),
        ));
    }
    if let Some(an) = anchor {
        if !(an.weight >= 0.0) || !an.weight.is_finite() {
            return Err(Error::InvalidData(format!("bad anchor weight {}", an.weight)));
        }
    }
    // Sorting makes the floating-point sums, and so the fit, independent of
    // trial order.
    let mut tgt = tgt.to_vec();
    let mut imp = imp.to_vec();
    tgt.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let (tgt, imp) = (&tgt[..], &imp[..]);
    let mut theta = match anchor {
        Some(an) if an.weight > 0.0 => [an.center.alpha, an.center.beta],
        _ => [1.0, 0.0],
    };
    let (mut f, mut g, mut h) = objective_terms(tgt, imp, pi, anchor, theta);
    let mut iterations = 0;
    while iterations < MAX_NEWTON_ITERS && g[0].abs().max(g[1].abs()) >= GRAD_TOL {
        iterations += 1;
        let [haa, hab, hbb] = h;
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 && det.is_finite() {
            (-(hbb * g[0] - hab * g[1]) / det, -(haa * g[1] - hab * g[0]) / det)
        } else {
            (-g[0], -g[1])
        };
        let slope = da * g[0] + db * g[1];
        if -slope <= 1e-12 * f.abs().max(1.0) {
            // The remaining decrease cannot be resolved in the objective.
            theta = [theta[0] + da, theta[1] + db];
            (f, g, _) = objective_terms(tgt, imp, pi, anchor, theta);
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [theta[0] + step * da, theta[1] + step * db];
            let (fc, gc, hc) = objective_terms(tgt, imp, pi, anchor, cand);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                theta = cand;
                f = fc;
                g = gc;
                h = hc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No decrease representable in floating point: at the optimum.
            break;
        }
    }
    if !theta[0].is_finite() || !theta[1].is_finite() {
        return Err(Error::Diverged("calibration parameters are not finite".into()));
    }
    Ok(AffineFit {
        cal: GlobalCal {
            alpha: theta[0],
            beta: theta[1],
        },
        objective: f,
        iterations,
        grad_inf_norm: g[0].abs().max(g[1].abs()),
    })
}

/// Global linear logistic-regression calibration of raw scores.
pub fn fit_global(scores: &ScoreSet, pi: EffectivePrior) -> Result<GlobalCal> {
    let (tgt, imp) = scores.split();
    Ok(fit_affine(&tgt, &imp, pi, None)?.cal)
}

/// Gradient of the un-anchored objective with respect to (alpha, beta), in
/// nats. Exposed for finite-difference checks.
pub fn objective_gradient(
    tgt: &[f64],
    imp: &[f64],
    pi: EffectivePrior,
    cal: GlobalCal,
) -> (f64, [f64; 2]) {
    let (f, g, _) = objective_terms(tgt, imp, pi, None, [cal.alpha, cal.beta]);
    (f, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, ScoreKind};

    fn set(tgt: &[f64], imp: &[f64]) -> ScoreSet {
        let mut s = tgt.to_vec();
        s.extend_from_slice(imp);
        let mut l = vec![Label::Target; tgt.len()];
        l.extend(vec![Label::Impostor; imp.len()]);
        ScoreSet::from_labeled(&s, &l, ScoreKind::Llr).unwrap()
    }

    #[test]
    fn zero_scores_cost_one_bit() {
        let s = set(&[0.0; 7], &[0.0; 13]);
        assert_eq!(cross_entropy(&s, EffectivePrior::default()).unwrap(), 1.0);
    }

    #[test]
    fn perfect_scores_cost_nothing() {
        let s = set(&[1000.0; 3], &[-1000.0; 3]);
        assert!(cross_entropy(&s, EffectivePrior::default()).unwrap() < 1e-6);
    }

    #[test]
    fn ln3_hand_value() {
        let l3 = 3f64.ln();
        let s = set(&[l3], &[-l3]);
        let expected = -(0.75f64).log2();
        let got = cross_entropy(&s, EffectivePrior::default()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.4150).abs() < 1e-4);
    }

    #[test]
    fn one_class_is_an_error() {
        let s = set(&[1.0, 2.0], &[]);
        assert!(cross_entropy(&s, EffectivePrior::default()).is_err());
        assert!(fit_global(&s, EffectivePrior::default()).is_err());
    }

    #[test]
    fn apply_cal_values() {
        let c = GlobalCal {
            alpha: 1.5,
            beta: -1.0,
        };
        assert_eq!(apply_cal(2.0, &c), 2.0);
        assert_eq!(apply_cal(0.3, &GlobalCal::IDENTITY), 0.3);
        assert!(apply_cal(0.31, &c) > apply_cal(0.3, &c));
    }

    #[test]
    fn separable_data_stays_finite() {
        let s = set(&[2.0, 3.0, 4.0], &[-1.0, -2.0, 0.0]);
        let c = fit_global(&s, EffectivePrior::default()).unwrap();
        assert!(c.alpha.is_finite() && c.beta.is_finite() && c.alpha > 0.0);
    }

    #[test]
    fn prior_bounds() {
        assert!(EffectivePrior::new(0.0).is_err());
        assert!(EffectivePrior::new(1.0).is_err());
        assert!(EffectivePrior::new(0.01).is_ok());
    }
}
