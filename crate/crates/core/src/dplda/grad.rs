//! Batched forward pass, cross-entropy loss and its analytic gradient with
//! respect to every parameter tensor of a [`DpldaModel`].

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

use super::DpldaModel;
use crate::calibration::EffectivePrior;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus, symmetrize};
use crate::plda::PldaScorer;

/// Parameter tensors of the joint model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tensor {
    FrontProj,
    FrontOffset,
    Lambda,
    Gamma,
    C,
    K,
    SideProj,
    SideOffset,
    SideW,
    SideBias,
    AlphaLambda,
    AlphaGamma,
    AlphaC,
    AlphaK,
    BetaLambda,
    BetaGamma,
    BetaC,
    BetaK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    FrontEnd,
    Scorer,
    SideInfo,
    Calibration,
}

impl Tensor {
    pub const ALL: [Tensor; 18] = [
        Tensor::FrontProj,
        Tensor::FrontOffset,
        Tensor::Lambda,
        Tensor::Gamma,
        Tensor::C,
        Tensor::K,
        Tensor::SideProj,
        Tensor::SideOffset,
        Tensor::SideW,
        Tensor::SideBias,
        Tensor::AlphaLambda,
        Tensor::AlphaGamma,
        Tensor::AlphaC,
        Tensor::AlphaK,
        Tensor::BetaLambda,
        Tensor::BetaGamma,
        Tensor::BetaC,
        Tensor::BetaK,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Stable name used in model files.
    pub fn name(self) -> &'static str {
        match self {
            Tensor::FrontProj => "front.proj",
            Tensor::FrontOffset => "front.offset",
            Tensor::Lambda => "scorer.lambda",
            Tensor::Gamma => "scorer.gamma",
            Tensor::C => "scorer.c",
            Tensor::K => "scorer.k",
            Tensor::SideProj => "side.proj",
            Tensor::SideOffset => "side.offset",
            Tensor::SideW => "side.w",
            Tensor::SideBias => "side.bias",
            Tensor::AlphaLambda => "cal.alpha.lambda",
            Tensor::AlphaGamma => "cal.alpha.gamma",
            Tensor::AlphaC => "cal.alpha.c",
            Tensor::AlphaK => "cal.alpha.k",
            Tensor::BetaLambda => "cal.beta.lambda",
            Tensor::BetaGamma => "cal.beta.gamma",
            Tensor::BetaC => "cal.beta.c",
            Tensor::BetaK => "cal.beta.k",
        }
    }

    pub fn group(self) -> Group {
        match self {
            Tensor::FrontProj | Tensor::FrontOffset => Group::FrontEnd,
            Tensor::Lambda | Tensor::Gamma | Tensor::C | Tensor::K => Group::Scorer,
            Tensor::SideProj | Tensor::SideOffset | Tensor::SideW | Tensor::SideBias => {
                Group::SideInfo
            }
            _ => Group::Calibration,
        }
    }
}

impl DpldaModel {
    /// Column-major view of a parameter tensor; `None` for the side-info
    /// projection of a model that takes external m-vectors.
    pub fn tensor(&self, t: Tensor) -> Option<&[f64]> {
        let s = match t {
            Tensor::FrontProj => self.front.proj.as_slice(),
            Tensor::FrontOffset => self.front.offset.as_slice(),
            Tensor::Lambda => self.scorer.lambda.as_slice(),
            Tensor::Gamma => self.scorer.gamma.as_slice(),
            Tensor::C => self.scorer.c.as_slice(),
            Tensor::K => std::slice::from_ref(&self.scorer.k),
            Tensor::SideProj => self.side.proj.as_ref()?.proj.as_slice(),
            Tensor::SideOffset => self.side.proj.as_ref()?.offset.as_slice(),
            Tensor::SideW => self.side.w.as_slice(),
            Tensor::SideBias => self.side.bias.as_slice(),
            Tensor::AlphaLambda => self.cal.alpha.lambda.as_slice(),
            Tensor::AlphaGamma => self.cal.alpha.gamma.as_slice(),
            Tensor::AlphaC => self.cal.alpha.c.as_slice(),
            Tensor::AlphaK => std::slice::from_ref(&self.cal.alpha.k),
            Tensor::BetaLambda => self.cal.beta.lambda.as_slice(),
            Tensor::BetaGamma => self.cal.beta.gamma.as_slice(),
            Tensor::BetaC => self.cal.beta.c.as_slice(),
            Tensor::BetaK => std::slice::from_ref(&self.cal.beta.k),
        };
        Some(s)
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> Option<&mut [f64]> {
        let s = match t {
            Tensor::FrontProj => self.front.proj.as_mut_slice(),
            Tensor::FrontOffset => self.front.offset.as_mut_slice(),
            Tensor::Lambda => self.scorer.lambda.as_mut_slice(),
            Tensor::Gamma => self.scorer.gamma.as_mut_slice(),
            Tensor::C => self.scorer.c.as_mut_slice(),
            Tensor::K => std::slice::from_mut(&mut self.scorer.k),
            Tensor::SideProj => self.side.proj.as_mut()?.proj.as_mut_slice(),
            Tensor::SideOffset => self.side.proj.as_mut()?.offset.as_mut_slice(),
            Tensor::SideW => self.side.w.as_mut_slice(),
            Tensor::SideBias => self.side.bias.as_mut_slice(),
            Tensor::AlphaLambda => self.cal.alpha.lambda.as_mut_slice(),
            Tensor::AlphaGamma => self.cal.alpha.gamma.as_mut_slice(),
            Tensor::AlphaC => self.cal.alpha.c.as_mut_slice(),
            Tensor::AlphaK => std::slice::from_mut(&mut self.cal.alpha.k),
            Tensor::BetaLambda => self.cal.beta.lambda.as_mut_slice(),
            Tensor::BetaGamma => self.cal.beta.gamma.as_mut_slice(),
            Tensor::BetaC => self.cal.beta.c.as_mut_slice(),
            Tensor::BetaK => std::slice::from_mut(&mut self.cal.beta.k),
        };
        Some(s)
    }

    /// Tensors updated in stage 1 (`stage2 == false`) or stage 2.
    pub fn trainable_tensors(&self, stage2: bool) -> Vec<Tensor> {
        Tensor::ALL
            .into_iter()
            .filter(|&t| {
                if self.tensor(t).is_none() {
                    return false;
                }
                if stage2 && matches!(t.group(), Group::FrontEnd | Group::Scorer) {
                    return false;
                }
                match t {
                    Tensor::SideBias => self.side.transform.uses_bias(),
                    Tensor::AlphaGamma | Tensor::BetaGamma => self.cal.use_gamma,
                    _ => true,
                }
            })
            .collect()
    }
}

/// One mini-batch: sample rows and labelled pairs of row indices.
#[derive(Debug, Clone, Copy)]
pub struct BatchInput<'a> {
    /// Raw embeddings, one sample per row.
    pub x: &'a DMatrix<f64>,
    /// External m-vectors, one per row of `x`, for models without an
    /// internal side-information projection.
    pub m: Option<&'a DMatrix<f64>>,
    pub pairs: &'a [(usize, usize, Label)],
}

/// Gradient of the batch loss (bits) for every tensor, same layout as
/// [`DpldaModel::tensor`]; empty for absent tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> &[f64] {
        &self.values[t.index()]
    }

    fn set(&mut self, t: Tensor, v: &[f64]) {
        self.values[t.index()] = v.to_vec();
    }
}

struct Forward {
    xt: DMatrix<f64>,
    xnorm: Vec<f64>,
    m: DMatrix<f64>,
    mnorm: Option<Vec<f64>>,
    a: DMatrix<f64>,
    z: DMatrix<f64>,
    s: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// Scores of index pairs over the rows of `y`.
fn pair_scores(sc: &PldaScorer, y: &DMatrix<f64>, pairs: &[(usize, usize, Label)]) -> Vec<f64> {
    let yl = y * &sc.lambda;
    let yg = y * &sc.gamma;
    let n = y.nrows();
    let quad: Vec<f64> = (0..n).map(|i| yg.row(i).dot(&y.row(i))).collect();
    let lin: Vec<f64> = (0..n).map(|i| y.row(i).transpose().dot(&sc.c)).collect();
    pairs
        .iter()
        .map(|&(i, j, _)| {
            let cross = yl.row(j).dot(&y.row(i)) + yl.row(i).dot(&y.row(j));
            cross + (quad[i] + quad[j]) + (lin[i] + lin[j]) + sc.k
        })
        .collect()
}

fn forward(model: &DpldaModel, input: &BatchInput<'_>) -> Result<Forward> {
    let n = input.x.nrows();
    for &(i, j, _) in input.pairs {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidData(format!("bad batch pair ({i}, {j})")));
        }
    }
    let (xt, xnorm) = model.front.apply_rows(input.x)?;
    let (m, mnorm) = match (&model.side.proj, input.m) {
        (Some(p), None) => {
            let (m, norms) = p.apply_rows(input.x)?;
            (m, Some(norms))
        }
        (None, Some(m)) => {
            if m.nrows() != n || m.ncols() != model.side.m_dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.side.m_dim(),
                    got: m.ncols(),
                });
            }
            (m.clone(), None)
        }
        _ => {
            return Err(Error::InvalidData(
                "m-vectors must be supplied exactly when the model has no side projection".into(),
            ))
        }
    };
    let mut a = &m * model.side.w.transpose();
    if model.side.transform.uses_bias() {
        for mut row in a.row_iter_mut() {
            row += model.side.bias.transpose();
        }
    }
    let mut z = DMatrix::zeros(n, model.side.z_dim());
    for i in 0..n {
        let zi = model.side.transform.apply(&a.row(i).transpose());
        z.set_row(i, &zi.transpose());
    }
    let s = pair_scores(&model.scorer, &xt, input.pairs);
    let alpha = pair_scores(&model.cal.alpha, &z, input.pairs);
    let beta = pair_scores(&model.cal.beta, &z, input.pairs);
    Ok(Forward {
        xt,
        xnorm,
        m,
        mnorm,
        a,
        z,
        s,
        alpha,
        beta,
    })
}

/// Loss in bits and its derivative with respect to every pair LLR.
fn loss_terms(llr: &[f64], pairs: &[(usize, usize, Label)], pi: EffectivePrior) -> Result<(f64, Vec<f64>)> {
    let n_tgt = pairs.iter().filter(|p| p.2.is_target()).count();
    let n_imp = pairs.len() - n_tgt;
    if n_tgt == 0 || n_imp == 0 {
        return Err(Error::InsufficientData(
            "batch needs both target and impostor pairs".into(),
        ));
    }
    let lo = pi.log_odds();
    let wt = pi.value() / n_tgt as f64 / LN_2;
    let wn = (1.0 - pi.value()) / n_imp as f64 / LN_2;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(llr.len());
    for (&l, p) in llr.iter().zip(pairs) {
        let a = l + lo;
        if p.2.is_target() {
            loss += wt * softplus(-a);
            grad.push(-wt * sigmoid(-a));
        } else {
            loss += wn * softplus(a);
            grad.push(wn * sigmoid(a));
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("batch loss is {loss}")));
    }
    Ok((loss, grad))
}

/// Cross-entropy (bits) of a batch.
pub fn batch_loss(model: &DpldaModel, input: &BatchInput<'_>) -> Result<f64> {
    let f = forward(model, input)?;
    let llr: Vec<f64> = (0..f.s.len()).map(|p| f.alpha[p] * f.s[p] + f.beta[p]).collect();
    Ok(loss_terms(&llr, input.pairs, model.pi)?.0)
}

struct BilinearGrad {
    lambda: DMatrix<f64>,
    gamma: DMatrix<f64>,
    c: DVector<f64>,
    k: f64,
    y: DMatrix<f64>,
}

/// Gradient of `Σ_p g_p · score(y_i, y_j)` with respect to the scorer
/// parameters and the rows of `y`.
fn bilinear_backward(
    sc: &PldaScorer,
    y: &DMatrix<f64>,
    pairs: &[(usize, usize, Label)],
    g: &[f64],
) -> BilinearGrad {
    let n = y.nrows();
    let mut gs = DMatrix::zeros(n, n);
    let mut k = 0.0;
    for (&(i, j, _), &gp) in pairs.iter().zip(g) {
        gs[(i, j)] += gp;
        gs[(j, i)] += gp;
        k += gp;
    }
    let r = gs.column_sum();
    let mut ry = y.clone();
    for (i, mut row) in ry.row_iter_mut().enumerate() {
        row *= r[i];
    }
    let gy = &gs * y;
    let lambda = symmetrize(&(y.transpose() * &gy));
    let gamma = symmetrize(&(y.transpose() * &ry));
    let c = y.transpose() * &r;
    let mut dy = gy * (&sc.lambda + sc.lambda.transpose()) + ry * (&sc.gamma + sc.gamma.transpose());
    for (i, mut row) in dy.row_iter_mut().enumerate() {
        row += sc.c.transpose() * r[i];
    }
    BilinearGrad {
        lambda,
        gamma,
        c,
        k,
        y: dy,
    }
}

/// Backward through `y = Norm(v)` row by row.
fn length_norm_backward(y: &DMatrix<f64>, norms: &[f64], dy: &DMatrix<f64>) -> DMatrix<f64> {
    let mut dv = dy.clone();
    for i in 0..y.nrows() {
        let inner = y.row(i).dot(&dy.row(i));
        let row = (dy.row(i) - y.row(i) * inner) / norms[i];
        dv.set_row(i, &row);
    }
    dv
}

/// Loss (bits) and gradients for every tensor.
pub fn batch_loss_and_grad(model: &DpldaModel, input: &BatchInput<'_>) -> Result<(f64, Gradients)> {
    let f = forward(model, input)?;
    let np = input.pairs.len();
    let llr: Vec<f64> = (0..np).map(|p| f.alpha[p] * f.s[p] + f.beta[p]).collect();
    let (loss, dl) = loss_terms(&llr, input.pairs, model.pi)?;

    let ds: Vec<f64> = (0..np).map(|p| dl[p] * f.alpha[p]).collect();
    let dalpha: Vec<f64> = (0..np).map(|p| dl[p] * f.s[p]).collect();

    let gs = bilinear_backward(&model.scorer, &f.xt, input.pairs, &ds);
    let ga = bilinear_backward(&model.cal.alpha, &f.z, input.pairs, &dalpha);
    let gb = bilinear_backward(&model.cal.beta, &f.z, input.pairs, &dl);

    let mut grads = Gradients {
        values: vec![Vec::new(); Tensor::ALL.len()],
    };

    let dv = length_norm_backward(&f.xt, &f.xnorm, &gs.y);
    grads.set(Tensor::FrontProj, (dv.transpose() * input.x).as_slice());
    grads.set(Tensor::FrontOffset, dv.row_sum().transpose().as_slice());
    grads.set(Tensor::Lambda, gs.lambda.as_slice());
    grads.set(Tensor::Gamma, gs.gamma.as_slice());
    grads.set(Tensor::C, gs.c.as_slice());
    grads.set(Tensor::K, &[gs.k]);

    let dz = ga.y + gb.y;
    let mut da = DMatrix::zeros(f.a.nrows(), f.a.ncols());
    for i in 0..f.a.nrows() {
        let row = model.side.transform.backward(
            &f.a.row(i).transpose(),
            &f.z.row(i).transpose(),
            &dz.row(i).transpose(),
        );
        da.set_row(i, &row.transpose());
    }
    grads.set(Tensor::SideW, (da.transpose() * &f.m).as_slice());
    if model.side.transform.uses_bias() {
        grads.set(Tensor::SideBias, da.row_sum().transpose().as_slice());
    } else {
        grads.set(Tensor::SideBias, &vec![0.0; model.side.z_dim()]);
    }
    if let Some(norms) = &f.mnorm {
        let dm = &da * &model.side.w;
        let dvm = length_norm_backward(&f.m, norms, &dm);
        grads.set(Tensor::SideProj, (dvm.transpose() * input.x).as_slice());
        grads.set(Tensor::SideOffset, dvm.row_sum().transpose().as_slice());
    }

    grads.set(Tensor::AlphaLambda, ga.lambda.as_slice());
    grads.set(Tensor::AlphaGamma, ga.gamma.as_slice());
    grads.set(Tensor::AlphaC, ga.c.as_slice());
    grads.set(Tensor::AlphaK, &[ga.k]);
    grads.set(Tensor::BetaLambda, gb.lambda.as_slice());
    grads.set(Tensor::BetaGamma, gb.gamma.as_slice());
    grads.set(Tensor::BetaC, gb.c.as_slice());
    grads.set(Tensor::BetaK, &[gb.k]);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dplda::{CalParamMap, ModelInfo, SideInfoExtractor, ZTransform};
    use crate::preprocess::FrontEnd;
    use crate::synth::seeded_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rng: &mut impl rand::Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            s * v
        })
    }

    fn sym(rng: &mut impl rand::Rng, n: usize) -> DMatrix<f64> {
        symmetrize(&random(rng, n, n, 0.5))
    }

    fn scorer(rng: &mut impl rand::Rng, n: usize) -> PldaScorer {
        PldaScorer {
            lambda: sym(rng, n),
            gamma: sym(rng, n),
            c: random(rng, n, 1, 0.5).column(0).into_owned(),
            k: 0.3,
        }
    }

    fn model(transform: ZTransform) -> DpldaModel {
        let mut rng = seeded_rng(7, 0);
        let (d, l, m, z) = (6, 4, 3, 3);
        DpldaModel {
            front: FrontEnd::new(random(&mut rng, l, d, 1.0), random(&mut rng, l, 1, 0.3).column(0).into_owned()).unwrap(),
            scorer: scorer(&mut rng, l),
            side: SideInfoExtractor {
                proj: Some(
                    FrontEnd::new(random(&mut rng, m, d, 1.0), random(&mut rng, m, 1, 0.3).column(0).into_owned())
                        .unwrap(),
                ),
                w: random(&mut rng, z, m, 1.0),
                bias: random(&mut rng, z, 1, 0.5).column(0).into_owned(),
                transform,
            },
            cal: CalParamMap {
                alpha: scorer(&mut rng, z),
                beta: scorer(&mut rng, z),
                use_gamma: true,
            },
            pi: EffectivePrior::new(0.3).unwrap(),
            info: ModelInfo {
                lda_dim: l,
                m_dim: m,
                z_dim: z,
                seed: 0,
                epoch: 0,
                init: crate::dplda::InitMode::Random,
            },
        }
    }

    fn check(transform: ZTransform) {
        let mut base = model(transform);
        let mut rng = seeded_rng(8, 0);
        let x = random(&mut rng, 8, 6, 1.0);
        let mut pairs = Vec::new();
        for i in 0..8 {
            for j in (i + 1)..8 {
                let l = if (i + j) % 3 == 0 { Label::Target } else { Label::Impostor };
                pairs.push((i, j, l));
            }
        }
        pairs.truncate(20);
        let input = BatchInput { x: &x, m: None, pairs: &pairs };
        let (_, g) = batch_loss_and_grad(&base, &input).unwrap();
        let h = 1e-5;
        for t in Tensor::ALL {
            let n = base.tensor(t).unwrap().len();
            let mut fd = vec![0.0; n];
            for i in 0..n {
                let orig = base.tensor(t).unwrap()[i];
                base.tensor_mut(t).unwrap()[i] = orig + h;
                let up = batch_loss(&base, &input).unwrap();
                base.tensor_mut(t).unwrap()[i] = orig - h;
                let dn = batch_loss(&base, &input).unwrap();
                base.tensor_mut(t).unwrap()[i] = orig;
                fd[i] = (up - dn) / (2.0 * h);
            }
            let a = g.get(t);
            let diff: f64 = a.iter().zip(&fd).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(fd.iter().map(|v| v * v).sum::<f64>().sqrt());
            if t == Tensor::SideBias && !transform.uses_bias() {
                assert!(scale < 1e-9 || diff / scale < 1e-4);
                continue;
            }
            assert!(scale > 0.0, "{transform} {}: zero gradient", t.name());
            assert!(diff / scale < 1e-4, "{transform} {}: rel err {}", t.name(), diff / scale);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for t in [
            ZTransform::LogSoftmax,
            ZTransform::LogSoftmaxBias,
            ZTransform::Softmax,
            ZTransform::Relu,
            ZTransform::Identity,
        ] {
            check(t);
        }
    }
}
