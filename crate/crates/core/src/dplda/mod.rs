//! Jointly trainable PLDA backend whose calibration scale and shift are
//! bilinear functions of per-sample side-information vectors.
//!
//! Forward pass for a trial `(x1, x2)`:
//!
//! ```text
//! x̃ = Norm(P·x + mu)                       speaker branch
//! s  = 2·x̃1ᵀΛx̃2 + x̃1ᵀΓx̃1 + x̃2ᵀΓx̃2 + (x̃1 + x̃2)ᵀc + k
//! m  = Norm(Pm·x + mum)                    side branch (or external m)
//! z  = log softmax(W·m)
//! α, β = same bilinear form over (z1, z2) with their own parameters
//! llr = α·s + β
//! ```

mod grad;
mod init;
mod sampler;
mod train;

pub use grad::{batch_loss, batch_loss_and_grad, BatchInput, Gradients, Group, Tensor};
pub use init::{warm_start, InitMode, ModelDims, WarmStartOptions};
pub use sampler::{sample_minibatch, BatchSpec, Minibatch, TrainingPool};
pub use train::{
    balance_by_domain, sweep_and_select, train, Adam, AdamConfig, DevSet, SweepResult, SweepRow,
    TrainConfig, TrainData,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::calibration::EffectivePrior;
use crate::data::{EmbeddingSet, ScoreKind, ScoreSet, Trial};
use crate::error::{Error, Result};
use crate::plda::{PldaScorer, PreparedSide};
use crate::preprocess::FrontEnd;

/// Map from `a = W·m (+ b)` to the side-information vector `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZTransform {
    #[default]
    LogSoftmax,
    /// Log-softmax with a trainable bias added before it.
    LogSoftmaxBias,
    Softmax,
    Relu,
    Identity,
}

impl ZTransform {
    pub fn uses_bias(self) -> bool {
        self == ZTransform::LogSoftmaxBias
    }

    pub fn apply(self, a: &DVector<f64>) -> DVector<f64> {
        match self {
            ZTransform::LogSoftmax | ZTransform::LogSoftmaxBias => {
                let max = a.max();
                let lse = max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                a.map(|v| v - lse)
            }
            ZTransform::Softmax => {
                let max = a.max();
                let e = a.map(|v| (v - max).exp());
                let s = e.sum();
                e / s
            }
            ZTransform::Relu => a.map(|v| v.max(0.0)),
            ZTransform::Identity => a.clone(),
        }
    }

    /// Gradient with respect to `a` given the gradient with respect to
    /// `z = self.apply(a)`.
    pub fn backward(self, a: &DVector<f64>, z: &DVector<f64>, dz: &DVector<f64>) -> DVector<f64> {
        match self {
            ZTransform::LogSoftmax | ZTransform::LogSoftmaxBias => {
                let total = dz.sum();
                DVector::from_iterator(z.len(), z.iter().zip(dz.iter()).map(|(zi, g)| g - zi.exp() * total))
            }
            ZTransform::Softmax => {
                let inner = z.dot(dz);
                z.component_mul(&dz.map(|g| g - inner))
            }
            ZTransform::Relu => DVector::from_iterator(
                a.len(),
                a.iter().zip(dz.iter()).map(|(ai, g)| if *ai > 0.0 { *g } else { 0.0 }),
            ),
            ZTransform::Identity => dz.clone(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ZTransform::LogSoftmax => "log-softmax",
            ZTransform::LogSoftmaxBias => "log-softmax-bias",
            ZTransform::Softmax => "softmax",
            ZTransform::Relu => "relu",
            ZTransform::Identity => "identity",
        }
    }
}

impl fmt::Display for ZTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "log-softmax" => ZTransform::LogSoftmax,
            "log-softmax-bias" => ZTransform::LogSoftmaxBias,
            "softmax" => ZTransform::Softmax,
            "relu" => ZTransform::Relu,
            "identity" => ZTransform::Identity,
            other => return Err(Error::Config(format!("unknown z transform '{other}'"))),
        })
    }
}

/// Side-information extractor: `z = T(W·m + b)` with `m = Norm(Pm·x + mum)`,
/// or with `m` supplied externally when `proj` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoExtractor {
    pub proj: Option<FrontEnd>,
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub transform: ZTransform,
}

impl SideInfoExtractor {
    pub fn z_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn m_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_external(&self) -> bool {
        self.proj.is_none()
    }

    /// `z` from an already computed `m` vector.
    pub fn z_from_m(&self, m: &[f64]) -> Result<DVector<f64>> {
        if m.len() != self.m_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.m_dim(),
                got: m.len(),
            });
        }
        let mut a = &self.w * DVector::from_column_slice(m);
        if self.transform.uses_bias() {
            a += &self.bias;
        }
        Ok(self.transform.apply(&a))
    }

    /// `m` for an embedding; fails in external mode.
    pub fn m_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        match &self.proj {
            Some(p) => p.apply(x),
            None => Err(Error::InvalidData(
                "side-information extractor expects external m-vectors".into(),
            )),
        }
    }
}

/// Side-information vector of an embedding.
pub fn side_info(x: &[f64], side: &SideInfoExtractor) -> Result<DVector<f64>> {
    side.z_from_m(side.m_vector(x)?.as_slice())
}

/// Parameters of the alpha and beta maps. Each map has the same bilinear
/// form as the PLDA score, applied to side-information vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CalParamMap {
    pub alpha: PldaScorer,
    pub beta: PldaScorer,
    /// When false the Γ terms are held at zero and never trained.
    pub use_gamma: bool,
}

impl CalParamMap {
    /// All zero except the constants, which reproduces a global calibration.
    pub fn constant(z_dim: usize, alpha: f64, beta: f64, use_gamma: bool) -> Self {
        let mut a = PldaScorer::zeros(z_dim);
        let mut b = PldaScorer::zeros(z_dim);
        a.k = alpha;
        b.k = beta;
        CalParamMap {
            alpha: a,
            beta: b,
            use_gamma,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.alpha.dim()
    }
}

/// (alpha, beta) for a pair of side-information vectors.
pub fn calib_params(z1: &[f64], z2: &[f64], cal: &CalParamMap) -> Result<(f64, f64)> {
    Ok((cal.alpha.score(z1, z2)?, cal.beta.score(z1, z2)?))
}

/// Bookkeeping stored with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub lda_dim: usize,
    pub m_dim: usize,
    pub z_dim: usize,
    pub seed: u64,
    pub epoch: usize,
    pub init: InitMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpldaModel {
    pub front: FrontEnd,
    pub scorer: PldaScorer,
    pub side: SideInfoExtractor,
    pub cal: CalParamMap,
    pub pi: EffectivePrior,
    pub info: ModelInfo,
}

/// Everything one sample contributes to its trials.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub score: PreparedSide,
    pub alpha: PreparedSide,
    pub beta: PreparedSide,
}

impl DpldaModel {
    pub fn validate(&self) -> Result<()> {
        if self.front.out_dim() != self.scorer.dim() {
            return Err(Error::Model(format!(
                "front-end dim {} does not match scorer dim {}",
                self.front.out_dim(),
                self.scorer.dim()
            )));
        }
        if let Some(p) = &self.side.proj {
            if p.in_dim() != self.front.in_dim() || p.out_dim() != self.side.m_dim() {
                return Err(Error::Model("side-information projection has wrong shape".into()));
            }
        }
        if self.side.z_dim() < 2 || self.side.z_dim() != self.cal.z_dim() {
            return Err(Error::Model(format!(
                "z dim {} must be >= 2 and match the calibration map ({})",
                self.side.z_dim(),
                self.cal.z_dim()
            )));
        }
        if self.side.bias.len() != self.side.z_dim() {
            return Err(Error::Model("side-information bias has wrong length".into()));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.front.in_dim()
    }

    /// Per-sample quantities; `m` must be given exactly when the side branch
    /// is external.
    pub fn prepare(&self, x: &[f64], m: Option<&[f64]>) -> Result<PreparedSample> {
        let xt = self.front.apply(x)?;
        let z = match (&self.side.proj, m) {
            (Some(_), None) => side_info(x, &self.side)?,
            (None, Some(m)) => self.side.z_from_m(m)?,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidData(
                    "model has an internal side-information extractor; m-vectors not accepted".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidData("model needs external m-vectors".into()))
            }
        };
        Ok(PreparedSample {
            score: self.scorer.prepare(xt)?,
            alpha: self.cal.alpha.prepare(z.clone())?,
            beta: self.cal.beta.prepare(z)?,
        })
    }

    /// Raw PLDA score, alpha and beta of a trial.
    pub fn trial_parts(&self, a: &PreparedSample, b: &PreparedSample) -> (f64, f64, f64) {
        let s = self.scorer.score_prepared(&a.score, &b.score);
        let alpha = self.cal.alpha.score_prepared(&a.alpha, &b.alpha);
        let beta = self.cal.beta.score_prepared(&a.beta, &b.beta);
        (s, alpha, beta)
    }

    pub fn llr_prepared(&self, a: &PreparedSample, b: &PreparedSample) -> f64 {
        let (s, alpha, beta) = self.trial_parts(a, b);
        alpha * s + beta
    }

    /// Calibrated LLR of one trial.
    pub fn forward_trial(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let a = self.prepare(x1, None)?;
        let b = self.prepare(x2, None)?;
        Ok(self.llr_prepared(&a, &b))
    }

    /// Scores trials whose ids refer to `set` (and to `m_vectors` in external
    /// mode). Each sample is prepared once.
    pub fn score_trials(
        &self,
        set: &EmbeddingSet,
        m_vectors: Option<&EmbeddingSet>,
        trials: &[Trial],
    ) -> Result<ScoreSet> {
        let prepared = prepare_all(set, trials, |i| {
            let m = match m_vectors {
                Some(ms) => {
                    let id = set.id(i);
                    let j = ms.position(id).ok_or_else(|| {
                        Error::InvalidData(format!("no m-vector for sample '{id}'"))
                    })?;
                    Some(ms.vector(j))
                }
                None => None,
            };
            self.prepare(set.vector(i), m)
        })?;
        let scores = trials
            .iter()
            .map(|t| {
                let (a, b) = trial_sides(set, t)?;
                Ok(self.llr_prepared(
                    prepared[a].as_ref().expect("prepared"),
                    prepared[b].as_ref().expect("prepared"),
                ))
            })
            .collect::<Result<Vec<f64>>>()?;
        ScoreSet::new(trials.to_vec(), scores, ScoreKind::Llr)
    }

    /// Side-information vectors for every sample of a set.
    pub fn z_vectors(&self, set: &EmbeddingSet, m_vectors: Option<&EmbeddingSet>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(set.len(), self.side.z_dim());
        for i in 0..set.len() {
            let z = match m_vectors {
                Some(ms) => {
                    let j = ms.position(set.id(i)).ok_or_else(|| {
                        Error::InvalidData(format!("no m-vector for sample '{}'", set.id(i)))
                    })?;
                    self.side.z_from_m(ms.vector(j))?
                }
                None => side_info(set.vector(i), &self.side)?,
            };
            out.set_row(i, &z.transpose());
        }
        Ok(out)
    }
}

/// Free function form of [`DpldaModel::forward_trial`].
pub fn forward_trial(x1: &[f64], x2: &[f64], model: &DpldaModel) -> Result<f64> {
    model.forward_trial(x1, x2)
}

/// Row indices of a trial's two sides.
pub fn trial_sides(set: &EmbeddingSet, t: &Trial) -> Result<(usize, usize)> {
    let a = set
        .position(&t.enroll_id)
        .ok_or_else(|| Error::InvalidData(format!("unknown sample '{}'", t.enroll_id)))?;
    let b = set
        .position(&t.test_id)
        .ok_or_else(|| Error::InvalidData(format!("unknown sample '{}'", t.test_id)))?;
    Ok((a, b))
}

/// Runs `prep` once for every sample referenced by `trials`.
pub fn prepare_all<T>(
    set: &EmbeddingSet,
    trials: &[Trial],
    mut prep: impl FnMut(usize) -> Result<T>,
) -> Result<Vec<Option<T>>> {
    let mut out: Vec<Option<T>> = (0..set.len()).map(|_| None).collect();
    for t in trials {
        let (a, b) = trial_sides(set, t)?;
        for i in [a, b] {
            if out[i].is_none() {
                out[i] = Some(prep(i)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor(w: DMatrix<f64>) -> SideInfoExtractor {
        let m_dim = w.ncols();
        let z_dim = w.nrows();
        SideInfoExtractor {
            proj: Some(FrontEnd::new(DMatrix::identity(m_dim, 3), DVector::zeros(m_dim)).unwrap()),
            w,
            bias: DVector::zeros(z_dim),
            transform: ZTransform::LogSoftmax,
        }
    }

    #[test]
    fn side_info_is_log_normalized() {
        let side = extractor(DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.3, -1.0, 4.0]));
        let z = side_info(&[0.2, -1.0, 3.0], &side).unwrap();
        let total: f64 = z.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_w_gives_uniform_z() {
        let side = extractor(DMatrix::zeros(4, 2));
        let z = side_info(&[0.2, -1.0, 3.0], &side).unwrap();
        for v in z.iter() {
            assert!((v + 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_shift_invariance() {
        let a = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let shifted = a.map(|v| v + 7.5);
        let z1 = ZTransform::LogSoftmax.apply(&a);
        let z2 = ZTransform::LogSoftmax.apply(&shifted);
        assert!((z1 - z2).norm() < 1e-12);
    }

    #[test]
    fn calib_params_constants_and_symmetry() {
        let cal = CalParamMap::constant(3, 1.2, -0.3, false);
        let z1 = [-1.0, -2.0, -0.5];
        let z2 = [-0.1, -3.0, -1.5];
        assert_eq!(calib_params(&z1, &z2, &cal).unwrap(), (1.2, -0.3));

        let mut cal = CalParamMap::constant(3, 0.0, 0.0, false);
        cal.alpha.lambda = DMatrix::identity(3, 3);
        cal.beta.c = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        cal.beta.lambda = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, -1.0, 0.3, 0.0, 0.3, 2.0]);
        let ab = calib_params(&z1, &z2, &cal).unwrap();
        let ba = calib_params(&z2, &z1, &cal).unwrap();
        assert_eq!(ab, ba);
        let (alpha, _) = calib_params(&z1, &z1, &cal).unwrap();
        let zz: f64 = z1.iter().map(|v| v * v).sum();
        assert!((alpha - 2.0 * zz).abs() < 1e-12);
    }

    #[test]
    fn transform_names_round_trip() {
        for t in [
            ZTransform::LogSoftmax,
            ZTransform::LogSoftmaxBias,
            ZTransform::Softmax,
            ZTransform::Relu,
            ZTransform::Identity,
        ] {
            assert_eq!(t.name().parse::<ZTransform>().unwrap(), t);
        }
    }
}
