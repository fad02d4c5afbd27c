//! Versioned JSON model files: named row-major tensors, model settings and
//! a snapshot of the run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmark::PldaBackend;
use crate::calibration::{EffectivePrior, GlobalCal};
use crate::dplda::{CalParamMap, DpldaModel, ModelInfo, SideInfoExtractor, Tensor};
use crate::error::{Error, Result};
use crate::plda::PldaScorer;
use crate::preprocess::FrontEnd;

pub const SCHEMA_VERSION: u32 = 1;

pub const KIND_PLDA: &str = "plda";
pub const KIND_DPLDA: &str = "as-dplda";

/// File name of a training snapshot.
pub fn snapshot_file_name(seed: u64, epoch: usize) -> String {
    format!("model.seed{seed}.epoch{epoch}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    /// `[]` for a scalar, `[n]` for a vector, `[rows, cols]` for a matrix.
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl NamedArray {
    fn scalar(v: f64) -> Self {
        NamedArray { shape: vec![], data: vec![v] }
    }

    fn vector(v: &DVector<f64>) -> Self {
        NamedArray {
            shape: vec![v.len()],
            data: v.iter().copied().collect(),
        }
    }

    fn matrix(m: &DMatrix<f64>) -> Self {
        NamedArray {
            shape: vec![m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kind: String,
    pub config: BTreeMap<String, String>,
    pub settings: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, NamedArray>,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Model(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        for (name, a) in &file.tensors {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::Model(format!("tensor '{name}': shape does not match data length")));
            }
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("tensor '{name}' has non-finite values")));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelFile::from_json(&text).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }

    fn setting(&self, key: &str) -> Result<&str> {
        self.settings
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Model(format!("missing setting '{key}'")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.setting(key)?;
        v.parse()
            .map_err(|_| Error::Model(format!("bad value '{v}' for setting '{key}'")))
    }

    fn array(&self, name: &str, rank: usize) -> Result<&NamedArray> {
        let a = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Model(format!("missing tensor '{name}'")))?;
        if a.shape.len() != rank {
            return Err(Error::Model(format!(
                "tensor '{name}' has rank {}, expected {rank}",
                a.shape.len()
            )));
        }
        Ok(a)
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.array(name, 0)?.data[0])
    }

    fn vector(&self, name: &str) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(&self.array(name, 1)?.data))
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let a = self.array(name, 2)?;
        Ok(DMatrix::from_row_slice(a.shape[0], a.shape[1], &a.data))
    }

    fn front(&self, prefix: &str) -> Result<FrontEnd> {
        FrontEnd::new(self.matrix(&format!("{prefix}.proj"))?, self.vector(&format!("{prefix}.offset"))?)
    }

    fn scorer(&self, prefix: &str) -> Result<PldaScorer> {
        let s = PldaScorer {
            lambda: self.matrix(&format!("{prefix}.lambda"))?,
            gamma: self.matrix(&format!("{prefix}.gamma"))?,
            c: self.vector(&format!("{prefix}.c"))?,
            k: self.scalar(&format!("{prefix}.k"))?,
        };
        let d = s.dim();
        if s.lambda.shape() != (d, d) || s.gamma.shape() != (d, d) {
            return Err(Error::Model(format!("scorer '{prefix}' has inconsistent shapes")));
        }
        Ok(s)
    }

    fn require_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Model(format!("expected a '{kind}' model, found '{}'", self.kind)));
        }
        Ok(())
    }
}

fn put_front(t: &mut BTreeMap<String, NamedArray>, prefix: &str, f: &FrontEnd) {
    t.insert(format!("{prefix}.proj"), NamedArray::matrix(&f.proj));
    t.insert(format!("{prefix}.offset"), NamedArray::vector(&f.offset));
}

fn put_scorer(t: &mut BTreeMap<String, NamedArray>, prefix: &str, s: &PldaScorer) {
    t.insert(format!("{prefix}.lambda"), NamedArray::matrix(&s.lambda));
    t.insert(format!("{prefix}.gamma"), NamedArray::matrix(&s.gamma));
    t.insert(format!("{prefix}.c"), NamedArray::vector(&s.c));
    t.insert(format!("{prefix}.k"), NamedArray::scalar(s.k));
}

pub fn plda_to_file(backend: &PldaBackend, pi: EffectivePrior, config: BTreeMap<String, String>) -> ModelFile {
    let mut tensors = BTreeMap::new();
    put_front(&mut tensors, "front", &backend.front);
    put_scorer(&mut tensors, "scorer", &backend.scorer);
    tensors.insert("cal.alpha".into(), NamedArray::scalar(backend.cal.alpha));
    tensors.insert("cal.beta".into(), NamedArray::scalar(backend.cal.beta));
    let settings = BTreeMap::from([("pi".to_string(), pi.value().to_string())]);
    ModelFile {
        schema_version: SCHEMA_VERSION,
        kind: KIND_PLDA.into(),
        config,
        settings,
        tensors,
    }
}

pub fn plda_from_file(file: &ModelFile) -> Result<(PldaBackend, EffectivePrior)> {
    file.require_kind(KIND_PLDA)?;
    let backend = PldaBackend {
        front: file.front("front")?,
        scorer: file.scorer("scorer")?,
        cal: GlobalCal {
            alpha: file.scalar("cal.alpha")?,
            beta: file.scalar("cal.beta")?,
        },
    };
    if backend.front.out_dim() != backend.scorer.dim() {
        return Err(Error::Model("front-end and scorer dims differ".into()));
    }
    Ok((backend, EffectivePrior::new(file.parsed("pi")?)?))
}

pub fn dplda_to_file(model: &DpldaModel, config: BTreeMap<String, String>) -> ModelFile {
    let mut tensors = BTreeMap::new();
    put_front(&mut tensors, "front", &model.front);
    put_scorer(&mut tensors, "scorer", &model.scorer);
    if let Some(p) = &model.side.proj {
        put_front(&mut tensors, "side", p);
    }
    tensors.insert(Tensor::SideW.name().into(), NamedArray::matrix(&model.side.w));
    tensors.insert(Tensor::SideBias.name().into(), NamedArray::vector(&model.side.bias));
    put_scorer(&mut tensors, "cal.alpha", &model.cal.alpha);
    put_scorer(&mut tensors, "cal.beta", &model.cal.beta);
    let i = &model.info;
    let settings = BTreeMap::from([
        ("transform".to_string(), model.side.transform.to_string()),
        ("use_gamma".to_string(), model.cal.use_gamma.to_string()),
        ("external_m".to_string(), model.side.is_external().to_string()),
        ("pi".to_string(), model.pi.value().to_string()),
        ("lda_dim".to_string(), i.lda_dim.to_string()),
        ("m_dim".to_string(), i.m_dim.to_string()),
        ("z_dim".to_string(), i.z_dim.to_string()),
        ("seed".to_string(), i.seed.to_string()),
        ("epoch".to_string(), i.epoch.to_string()),
        ("init".to_string(), i.init.name().to_string()),
    ]);
    ModelFile {
        schema_version: SCHEMA_VERSION,
        kind: KIND_DPLDA.into(),
        config,
        settings,
        tensors,
    }
}

pub fn dplda_from_file(file: &ModelFile) -> Result<DpldaModel> {
    file.require_kind(KIND_DPLDA)?;
    let external: bool = file.parsed("external_m")?;
    let proj = if external { None } else { Some(file.front("side")?) };
    let model = DpldaModel {
        front: file.front("front")?,
        scorer: file.scorer("scorer")?,
        side: SideInfoExtractor {
            proj,
            w: file.matrix(Tensor::SideW.name())?,
            bias: file.vector(Tensor::SideBias.name())?,
            transform: file.parsed("transform")?,
        },
        cal: CalParamMap {
            alpha: file.scorer("cal.alpha")?,
            beta: file.scorer("cal.beta")?,
            use_gamma: file.parsed("use_gamma")?,
        },
        pi: EffectivePrior::new(file.parsed("pi")?)?,
        info: ModelInfo {
            lda_dim: file.parsed("lda_dim")?,
            m_dim: file.parsed("m_dim")?,
            z_dim: file.parsed("z_dim")?,
            seed: file.parsed("seed")?,
            epoch: file.parsed("epoch")?,
            init: file.parsed("init")?,
        },
    };
    model.validate()?;
    Ok(model)
}

pub fn save_dplda(model: &DpldaModel, config: BTreeMap<String, String>, path: &Path) -> Result<()> {
    dplda_to_file(model, config).save(path)
}

pub fn load_dplda(path: &Path) -> Result<DpldaModel> {
    dplda_from_file(&ModelFile::load(path)?)
}

/// Either kind of scoring model.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Plda { backend: PldaBackend, pi: EffectivePrior },
    Dplda(DpldaModel),
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let file = ModelFile::load(path)?;
    match file.kind.as_str() {
        KIND_PLDA => {
            let (backend, pi) = plda_from_file(&file)?;
            Ok(LoadedModel::Plda { backend, pi })
        }
        KIND_DPLDA => Ok(LoadedModel::Dplda(dplda_from_file(&file)?)),
        other => Err(Error::Model(format!("unknown model kind '{other}'"))),
    }
}
