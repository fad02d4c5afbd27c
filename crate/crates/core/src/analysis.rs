//! Side-information analyses: a 2-D PCA view of z-vectors per dataset, and a
//! probe measuring how much speaker information z-vectors carry.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;

use crate::benchmark::{fit_plda, raw_scores};
use crate::data::{EmbeddingSet, ScoreKind, ScoreSet, Trial};
use crate::dplda::{balance_by_domain, DpldaModel};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::metrics::eer;
use crate::synth::seeded_rng;

const SAMPLE_STREAM: u64 = 40;

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// One component per row.
    pub components: DMatrix<f64>,
    pub variances: DVector<f64>,
}

impl Pca {
    /// Leading `k` components of the rows of `x`.
    pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 {
            return Err(Error::InsufficientData("PCA of an empty matrix".into()));
        }
        let k = k.min(d);
        let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / n as f64;
        let (values, vectors) = sym_eigen_desc(&cov);
        Ok(Pca {
            mean,
            components: vectors.columns(0, k).transpose(),
            variances: values.rows(0, k).map(|v| v.max(0.0)),
        })
    }

    pub fn project(&self, v: &[f64]) -> DVector<f64> {
        &self.components * (DVector::from_column_slice(v) - &self.mean)
    }
}

/// A dataset shown in the z-vector projection.
#[derive(Debug, Clone, Copy)]
pub struct ZDataset<'a> {
    pub name: &'a str,
    pub set: &'a EmbeddingSet,
    pub m_vectors: Option<&'a EmbeddingSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Sample,
    Centroid,
}

impl PointKind {
    pub fn name(self) -> &'static str {
        match self {
            PointKind::Sample => "sample",
            PointKind::Centroid => "centroid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZPoint {
    pub dataset: String,
    /// Sample id, or the dataset name for a centroid.
    pub id: String,
    pub kind: PointKind,
    pub pc: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct ZAnalysis {
    pub pca: Pca,
    /// Per dataset: the sampled points followed by their centroid.
    pub points: Vec<ZPoint>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl ZAnalysis {
    pub fn centroid(&self, dataset: &str) -> Option<[f64; 2]> {
        self.points
            .iter()
            .find(|p| p.kind == PointKind::Centroid && p.dataset == dataset)
            .map(|p| p.pc)
    }

    /// Standard deviation of a dataset's points about its centroid, pooled
    /// over the two axes.
    pub fn spread(&self, dataset: &str) -> Option<f64> {
        let c = self.centroid(dataset)?;
        let d: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.kind == PointKind::Sample && p.dataset == dataset)
            .map(|p| dist(p.pc, c).powi(2))
            .collect();
        (!d.is_empty()).then(|| (d.iter().sum::<f64>() / (2 * d.len()) as f64).sqrt())
    }

    /// Centroid distance over the average spread of the two datasets.
    pub fn separation(&self, a: &str, b: &str) -> Option<f64> {
        let d = dist(self.centroid(a)?, self.centroid(b)?);
        Some(d / (0.5 * (self.spread(a)? + self.spread(b)?)))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("dataset\tid\tkind\tpc1\tpc2\n");
        for p in &self.points {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", p.dataset, p.id, p.kind.name(), p.pc[0], p.pc[1]);
        }
        out
    }
}

fn pc2(v: &DVector<f64>) -> [f64; 2] {
    [v.get(0).copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]
}

/// Projects z-vectors onto the first two principal components of the
/// domain-balanced training z-vectors. At most `max_per_dataset` samples of
/// each dataset are kept (a seeded random subset, in input order); each
/// dataset's centroid is the mean of its kept points.
pub fn analyze_z(
    model: &DpldaModel,
    train: &EmbeddingSet,
    train_m: Option<&EmbeddingSet>,
    datasets: &[ZDataset<'_>],
    max_per_dataset: usize,
) -> Result<ZAnalysis> {
    let meta = train.require_meta("z-vector PCA")?;
    let all: Vec<usize> = (0..train.len()).collect();
    let balanced = balance_by_domain(meta, &all, model.info.seed);
    let z_train = model.z_vectors(&train.subset(&balanced)?, train_m)?;
    let pca = Pca::fit(&z_train, 2)?;
    let mut rng = seeded_rng(model.info.seed, SAMPLE_STREAM);
    let mut points = Vec::new();
    for ds in datasets {
        let z = model.z_vectors(ds.set, ds.m_vectors)?;
        let mut rows: Vec<usize> = if ds.set.len() > max_per_dataset {
            sample_indices(&mut rng, ds.set.len(), max_per_dataset).into_vec()
        } else {
            (0..ds.set.len()).collect()
        };
        rows.sort_unstable();
        let mut sum = [0.0; 2];
        for &r in &rows {
            let pc = pc2(&pca.project(z.row(r).transpose().as_slice()));
            sum[0] += pc[0];
            sum[1] += pc[1];
            points.push(ZPoint {
                dataset: ds.name.to_string(),
                id: ds.set.id(r).to_string(),
                kind: PointKind::Sample,
                pc,
            });
        }
        let n = rows.len().max(1) as f64;
        points.push(ZPoint {
            dataset: ds.name.to_string(),
            id: ds.name.to_string(),
            kind: PointKind::Centroid,
            pc: [sum[0] / n, sum[1] / n],
        });
    }
    Ok(ZAnalysis { pca, points })
}

/// An evaluation set of the speaker-information probe.
#[derive(Debug, Clone, Copy)]
pub struct ProbeSet<'a> {
    pub name: &'a str,
    pub set: &'a EmbeddingSet,
    pub m_vectors: Option<&'a EmbeddingSet>,
    pub trials: &'a [Trial],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub system: String,
    pub eval_set: String,
    pub eer: f64,
}

fn z_set(model: &DpldaModel, set: &EmbeddingSet, m: Option<&EmbeddingSet>) -> Result<EmbeddingSet> {
    let z = model.z_vectors(set, m)?;
    let vectors = z.row_iter().map(|r| r.iter().copied().collect()).collect();
    let out = EmbeddingSet::new(z.ncols(), set.ids().to_vec(), vectors)?;
    match set.meta() {
        Some(meta) => out.with_meta(meta.to_vec()),
        None => Ok(out),
    }
}

/// PLDA raw scores of `trials`, or constant scores when the training
/// features are degenerate and no PLDA can be fitted.
fn probe_scores(train: &EmbeddingSet, lda_dim: usize, evals: &[(&str, EmbeddingSet, &[Trial])]) -> Result<Vec<ScoreSet>> {
    let fitted = match fit_plda(train, lda_dim) {
        Ok((front, _, scorer)) => Some((front, scorer)),
        Err(Error::Singular(_) | Error::ZeroNorm(_)) => None,
        Err(e) => return Err(e),
    };
    evals
        .iter()
        .map(|(_, set, trials)| match &fitted {
            Some((front, scorer)) => raw_scores(front, scorer, set, trials),
            None => ScoreSet::new(trials.to_vec(), vec![0.0; trials.len()], ScoreKind::Raw),
        })
        .collect()
}

/// EER of PLDA systems trained on z-vectors (no dimension reduction) and on
/// embeddings at full dimension and at the z dimension. One row per
/// (system, eval set).
pub fn probe_z(
    model: &DpldaModel,
    train: &EmbeddingSet,
    train_m: Option<&EmbeddingSet>,
    evals: &[ProbeSet<'_>],
) -> Result<Vec<ProbeRow>> {
    let z_dim = model.side.z_dim();
    let full = train.dim();
    let z_train = z_set(model, train, train_m)?;
    let z_evals = evals
        .iter()
        .map(|e| Ok((e.name, z_set(model, e.set, e.m_vectors)?, e.trials)))
        .collect::<Result<Vec<_>>>()?;
    let emb_evals: Vec<_> = evals.iter().map(|e| (e.name, e.set.clone(), e.trials)).collect();
    let systems = [
        (format!("z-plda-dim{z_dim}"), probe_scores(&z_train, z_dim, &z_evals)?),
        (format!("embedding-plda-dim{full}"), probe_scores(train, full, &emb_evals)?),
        (format!("embedding-plda-dim{z_dim}"), probe_scores(train, z_dim, &emb_evals)?),
    ];
    let mut rows = Vec::new();
    for (system, scores) in &systems {
        for (e, s) in evals.iter().zip(scores) {
            rows.push(ProbeRow {
                system: system.clone(),
                eval_set: e.name.to_string(),
                eer: eer(s)?,
            });
        }
    }
    Ok(rows)
}

pub fn probe_table_tsv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("system\teval_set\teer\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.6}", r.system, r.eval_set, r.eer);
    }
    out
}
