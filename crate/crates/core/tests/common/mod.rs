#![allow(dead_code)]

use asdplda::synth::{normal_vec, seeded_rng};
use asdplda::{EmbeddingSet, SampleMeta};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `A·Aᵀ/d + floor·I` with standard normal `A`.
pub fn random_spd(rng: &mut impl Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal_vec(rng, 1)[0]);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * floor
}

fn log_density(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance must be PD");
    let l = chol.l();
    let u = l.solve_lower_triangular(y).expect("triangular solve");
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (u.norm_squared() + log_det + y.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Same-speaker vs different-speaker log-likelihood ratio of a pair under
/// `x = m + y + e`, evaluated from the two stacked joint Gaussians.
pub fn joint_gaussian_llr(x1: &[f64], x2: &[f64], b: &DMatrix<f64>, w: &DMatrix<f64>, m: &DVector<f64>) -> f64 {
    let d = m.len();
    let y = DVector::from_iterator(2 * d, x1.iter().zip(m.iter()).map(|(x, m)| x - m).chain(x2.iter().zip(m.iter()).map(|(x, m)| x - m)));
    let t = b + w;
    let mut same = DMatrix::zeros(2 * d, 2 * d);
    same.view_mut((0, 0), (d, d)).copy_from(&t);
    same.view_mut((d, d), (d, d)).copy_from(&t);
    let mut diff = same.clone();
    same.view_mut((0, d), (d, d)).copy_from(b);
    same.view_mut((d, 0), (d, d)).copy_from(b);
    diff.view_mut((0, d), (d, d)).fill(0.0);
    log_density(&y, &same) - log_density(&y, &diff)
}

/// Labelled samples from `x = y_s + L_w·e` with `y_s = L_b·u`: `n_spk`
/// speakers, `sessions` sessions of one sample each, single domain.
pub fn two_cov_set(b: &DMatrix<f64>, w: &DMatrix<f64>, n_spk: usize, sessions: usize, seed: u64) -> EmbeddingSet {
    let d = b.nrows();
    let lb = b.clone().cholesky().unwrap().l();
    let lw = w.clone().cholesky().unwrap().l();
    let mut rng = seeded_rng(seed, 99);
    let mut ids = Vec::new();
    let mut vecs = Vec::new();
    let mut meta = Vec::new();
    for s in 0..n_spk {
        let y = &lb * normal_vec(&mut rng, d);
        for k in 0..sessions {
            let x = &y + &lw * normal_vec(&mut rng, d);
            let id = format!("s{s}-{k}");
            meta.push(SampleMeta::new(id.clone(), format!("s{s}"), format!("s{s}-{k}"), "d", "c"));
            ids.push(id);
            vecs.push(x.iter().copied().collect());
        }
    }
    EmbeddingSet::new(d, ids, vecs).unwrap().with_meta(meta).unwrap()
}

pub fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Oracle LLRs of a single-condition synthetic set, roughly `n_spk·24`
/// targets plus `max_impostors` impostors.
pub fn oracle_llr_scores(dim: usize, n_spk: usize, max_impostors: usize, within_scale: f64, seed: u64) -> asdplda::ScoreSet {
    use asdplda::synth::{build_trials, generate, oracle_scores, ConditionSpec, SynthConfig};
    let cond = ConditionSpec {
        name: "c".into(),
        domain: "d".into(),
        mean_shift: vec![0.0; dim],
        within_scale,
        score_shift_bias: 0.0,
    };
    let data = generate(&SynthConfig::new(dim, n_spk, vec![cond], seed)).unwrap();
    let trials = build_trials(&data.set, max_impostors, seed).unwrap();
    let scores = oracle_scores(&data.set, &trials, &data.oracles).unwrap();
    asdplda::ScoreSet::new(trials, scores, asdplda::ScoreKind::Llr).unwrap()
}
