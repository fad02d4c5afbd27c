//! Dataset containers and their file formats.
//!
//! Embeddings are held as 64-bit floats in memory and stored as 32-bit floats
//! in the binary `EMB1` format. Metadata lives in a separate TSV keyed by
//! sample id so that embedding files produced elsewhere can be used as-is.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Per-sample labels used by the trial sampler, the balancer and the analysis
/// tools.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleMeta {
    pub sample_id: String,
    pub speaker_id: String,
    pub session_id: String,
    pub domain: String,
    pub condition: String,
}

impl SampleMeta {
    pub fn new(
        sample_id: impl Into<String>,
        speaker_id: impl Into<String>,
        session_id: impl Into<String>,
        domain: impl Into<String>,
        condition: impl Into<String>,
    ) -> Self {
        SampleMeta {
            sample_id: sample_id.into(),
            speaker_id: speaker_id.into(),
            session_id: session_id.into(),
            domain: domain.into(),
            condition: condition.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("sample_id", &self.sample_id),
            ("speaker_id", &self.speaker_id),
            ("session_id", &self.session_id),
            ("domain", &self.domain),
            ("condition", &self.condition),
        ];
        for (name, value) in fields {
            if value.is_empty() {
                return Err(Error::InvalidData(format!(
                    "empty {name} in metadata for sample '{}'",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }
}

/// Fixed-dimension embeddings with optional metadata, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    meta: Option<Vec<SampleMeta>>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// Builds a set from ids and row vectors; validates dimensions, finiteness
    /// and id uniqueness.
    pub fn new(dim: usize, ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidData("embedding dimension must be positive".into()));
        }
        if ids.len() != vectors.len() {
            return Err(Error::InvalidData(format!(
                "{} ids but {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::InvalidData(format!(
                    "sample {} ('{}') has {} values, expected {dim}",
                    i + 1,
                    ids[i],
                    v.len()
                )));
            }
            data.extend_from_slice(v);
        }
        Self::from_flat(dim, ids, data)
    }

    /// Builds a set from a row-major `n × dim` buffer.
    pub fn from_flat(dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidData("embedding dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::InvalidData(format!(
                "buffer of {} values does not hold {} samples of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value in sample '{}'",
                ids[pos / dim]
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::InvalidData(format!("sample {} has an empty id", i + 1)));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("duplicate sample_id '{id}'")));
            }
        }
        Ok(EmbeddingSet {
            dim,
            ids,
            data,
            meta: None,
            index,
        })
    }

    /// Attaches metadata given in set order.
    pub fn with_meta(mut self, meta: Vec<SampleMeta>) -> Result<Self> {
        if meta.len() != self.len() {
            return Err(Error::InvalidData(format!(
                "{} metadata rows for {} samples",
                meta.len(),
                self.len()
            )));
        }
        for (m, id) in meta.iter().zip(&self.ids) {
            m.validate()?;
            if &m.sample_id != id {
                return Err(Error::InvalidData(format!(
                    "metadata row '{}' does not match sample '{id}'",
                    m.sample_id
                )));
            }
        }
        self.meta = Some(meta);
        Ok(self)
    }

    /// Attaches metadata looked up by sample id. With `required`, samples
    /// lacking a row are an error; otherwise the set is returned without
    /// metadata when any row is missing.
    pub fn attach_meta(self, rows: &HashMap<String, SampleMeta>, required: bool) -> Result<Self> {
        let mut meta = Vec::with_capacity(self.len());
        for id in &self.ids {
            match rows.get(id) {
                Some(m) => meta.push(m.clone()),
                None if required => {
                    return Err(Error::InvalidData(format!("no metadata for sample '{id}'")))
                }
                None => return Ok(self),
            }
        }
        self.with_meta(meta)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dvector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.vector(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn meta(&self) -> Option<&[SampleMeta]> {
        self.meta.as_deref()
    }

    /// Metadata, or an error naming the operation that needs it.
    pub fn require_meta(&self, what: &str) -> Result<&[SampleMeta]> {
        self.meta
            .as_deref()
            .ok_or_else(|| Error::InvalidData(format!("{what} requires sample metadata")))
    }

    /// Samples as rows of an `n × dim` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// New set holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&i| self.ids[i].clone()).collect();
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            data.extend_from_slice(self.vector(i));
        }
        let set = Self::from_flat(self.dim, ids, data)?;
        match &self.meta {
            Some(meta) => set.with_meta(rows.iter().map(|&i| meta[i].clone()).collect()),
            None => Ok(set),
        }
    }

    /// Concatenates sets of equal dimension.
    pub fn concat(sets: &[&EmbeddingSet]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidData("nothing to concatenate".into()))?;
        let dim = first.dim;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut meta = Some(Vec::new());
        for s in sets {
            if s.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim,
                });
            }
            ids.extend(s.ids.iter().cloned());
            data.extend_from_slice(&s.data);
            meta = match (meta, &s.meta) {
                (Some(mut acc), Some(m)) => {
                    acc.extend(m.iter().cloned());
                    Some(acc)
                }
                _ => None,
            };
        }
        let set = Self::from_flat(dim, ids, data)?;
        match meta {
            Some(m) => set.with_meta(m),
            None => Ok(set),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Impostor,
}

impl Label {
    pub fn is_target(self) -> bool {
        self == Label::Target
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Target => "tgt",
            Label::Impostor => "imp",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tgt" => Ok(Label::Target),
            "imp" => Ok(Label::Impostor),
            other => Err(format!("unknown trial label '{other}' (expected tgt or imp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Label) -> Self {
        Trial {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Raw,
    Llr,
}

/// Trials with a parallel list of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    trials: Vec<Trial>,
    scores: Vec<f64>,
    kind: ScoreKind,
}

impl ScoreSet {
    pub fn new(trials: Vec<Trial>, scores: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if trials.len() != scores.len() {
            return Err(Error::InvalidData(format!(
                "{} trials but {} scores",
                trials.len(),
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite score for trial {} ({} vs {})",
                i + 1,
                trials[i].enroll_id,
                trials[i].test_id
            )));
        }
        Ok(ScoreSet {
            trials,
            scores,
            kind,
        })
    }

    /// Score set from bare (score, label) pairs; trial ids are synthesized.
    pub fn from_labeled(scores: &[f64], labels: &[Label], kind: ScoreKind) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let trials = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Trial::new(format!("e{i}"), format!("t{i}"), l))
            .collect();
        Self::new(trials, scores.to_vec(), kind)
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.trials.iter().map(|t| t.label).collect()
    }

    pub fn target_scores(&self) -> Vec<f64> {
        self.split().0
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.split().1
    }

    /// (target scores, impostor scores), each in trial order.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut tgt = Vec::new();
        let mut imp = Vec::new();
        for (t, &s) in self.trials.iter().zip(&self.scores) {
            match t.label {
                Label::Target => tgt.push(s),
                Label::Impostor => imp.push(s),
            }
        }
        (tgt, imp)
    }

    /// Same trials with every score mapped through `f`.
    pub fn map(&self, kind: ScoreKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.trials.clone(),
            self.scores.iter().map(|&s| f(s)).collect(),
            kind,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Tsv,
}

impl EmbeddingFormat {
    /// `.tsv`/`.txt` files are text, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => EmbeddingFormat::Tsv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

pub fn read_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    match format {
        EmbeddingFormat::Binary => read_embeddings_binary(path),
        EmbeddingFormat::Tsv => read_embeddings_tsv(path),
    }
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path, format: EmbeddingFormat) -> Result<()> {
    match format {
        EmbeddingFormat::Binary => write_embeddings_binary(set, path),
        EmbeddingFormat::Tsv => write_embeddings_tsv(set, path),
    }
}

fn read_embeddings_binary(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset = 0usize;
    let mut read_exact = |buf: &mut [u8], what: &str, offset: &mut usize| -> Result<()> {
        r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::parse(path, format!("byte {offset}"), format!("truncated {what}"))
            } else {
                Error::io(path, e)
            }
        })?;
        *offset += buf.len();
        Ok(())
    };

    let mut magic = [0u8; 4];
    read_exact(&mut magic, "header", &mut offset)?;
    if &magic != EMB_MAGIC {
        return Err(Error::parse(path, "byte 0", "bad magic, expected EMB1"));
    }
    let mut word = [0u8; 4];
    read_exact(&mut word, "header", &mut offset)?;
    let n = u32::from_le_bytes(word) as usize;
    read_exact(&mut word, "header", &mut offset)?;
    let dim = u32::from_le_bytes(word) as usize;
    if n == 0 {
        return Err(Error::parse(path, "byte 4", "no samples"));
    }
    if dim == 0 {
        return Err(Error::parse(path, "byte 8", "dimension is zero"));
    }

    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let mut len = [0u8; 2];
        read_exact(&mut len, "id length", &mut offset)?;
        let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
        let at = offset;
        read_exact(&mut bytes, "id", &mut offset)?;
        let id = String::from_utf8(bytes).map_err(|_| {
            Error::parse(path, format!("byte {at}"), format!("id of sample {} is not UTF-8", i + 1))
        })?;
        ids.push(id);
    }

    let mut raw = vec![0u8; n * dim * 4];
    read_exact(&mut raw, "matrix", &mut offset)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(
            path,
            format!("byte {}", offset - raw.len() + pos * 4),
            format!("non-finite value in sample {}", pos / dim + 1),
        ));
    }
    EmbeddingSet::from_flat(dim, ids, data).map_err(|e| Error::parse(path, "ids", e.to_string()))
}

fn write_embeddings_binary(set: &EmbeddingSet, path: &Path) -> Result<()> {
    if let Some(k) = set.data.iter().position(|v| !(*v as f32).is_finite()) {
        return Err(Error::InvalidData(format!(
            "value {} of sample '{}' does not fit the 32-bit binary format",
            set.data[k],
            set.ids[k / set.dim]
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(12 + set.len() * (set.dim * 4 + 16));
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&(set.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for id in &set.ids {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidData(format!("sample id too long: '{id}'")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for v in &set.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_embeddings_tsv(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, "line 1", "no samples")),
    };
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.first() != Some(&"sample_id") || cols.len() < 2 {
        return Err(Error::parse(path, "line 1", "malformed header, expected sample_id<TAB>v0..."));
    }
    let dim = cols.len() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let row = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 1 {
            return Err(Error::parse(
                path,
                format!("row {row}"),
                format!("row {row} has {} values, expected {dim}", fields.len() - 1),
            ));
        }
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(path, format!("row {row}"), format!("bad number '{f}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, format!("row {row}"), "non-finite value"));
            }
            data.push(v);
        }
        ids.push(fields[0].to_string());
    }
    if ids.is_empty() {
        return Err(Error::parse(path, "line 2", "no samples"));
    }
    EmbeddingSet::from_flat(dim, ids, data).map_err(|e| Error::parse(path, "ids", e.to_string()))
}

fn write_embeddings_tsv(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = String::from("sample_id");
    for j in 0..set.dim {
        out.push_str(&format!("\tv{j}"));
    }
    out.push('\n');
    for i in 0..set.len() {
        out.push_str(&set.ids[i]);
        for v in set.vector(i) {
            // `{:?}` prints the shortest representation that round-trips.
            out.push_str(&format!("\t{v:?}"));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

const META_HEADER: &str = "sample_id\tspeaker_id\tsession_id\tdomain\tcondition";

/// Reads a metadata TSV into a map keyed by sample id.
pub fn read_metadata(path: &Path) -> Result<HashMap<String, SampleMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || (i == 0 && line.starts_with("sample_id")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(
                path,
                format!("line {}", i + 1),
                format!("expected 5 columns, found {}", f.len()),
            ));
        }
        let m = SampleMeta::new(f[0], f[1], f[2], f[3], f[4]);
        m.validate()
            .map_err(|e| Error::parse(path, format!("line {}", i + 1), e.to_string()))?;
        if out.insert(m.sample_id.clone(), m).is_some() {
            return Err(Error::parse(
                path,
                format!("line {}", i + 1),
                format!("duplicate sample_id '{}'", f[0]),
            ));
        }
    }
    Ok(out)
}

pub fn write_metadata(meta: &[SampleMeta], path: &Path) -> Result<()> {
    let mut out = String::from(META_HEADER);
    out.push('\n');
    for m in meta {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            m.sample_id, m.speaker_id, m.session_id, m.domain, m.condition
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an embedding file and, when given, its metadata TSV.
pub fn load_set(
    embeddings: &Path,
    metadata: Option<&Path>,
    require_meta: bool,
) -> Result<EmbeddingSet> {
    let set = read_embeddings(embeddings, EmbeddingFormat::from_path(embeddings))?;
    match metadata {
        Some(p) => set.attach_meta(&read_metadata(p)?, require_meta),
        None if require_meta => Err(Error::InvalidData(format!(
            "{} needs a metadata file",
            embeddings.display()
        ))),
        None => Ok(set),
    }
}

fn parse_trial_line(path: &Path, lineno: usize, line: &str) -> Result<(Trial, Option<f64>)> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 3 && f.len() != 4 {
        return Err(Error::parse(
            path,
            format!("line {lineno}"),
            format!("expected 3 or 4 columns, found {}", f.len()),
        ));
    }
    let label: Label = f[2]
        .parse()
        .map_err(|e: String| Error::parse(path, format!("line {lineno}"), e))?;
    let score = match f.get(3) {
        Some(s) => Some(s.parse::<f64>().map_err(|_| {
            Error::parse(path, format!("line {lineno}"), format!("bad score '{s}'"))
        })?),
        None => None,
    };
    Ok((Trial::new(f[0], f[1], label), score))
}

fn trial_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() || (i == 0 && line.starts_with("enroll_id")) {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    trial_lines(path)?
        .iter()
        .map(|(n, l)| parse_trial_line(path, *n, l).map(|(t, _)| t))
        .collect()
}

pub fn write_trials(trials: &[Trial], path: &Path) -> Result<()> {
    let mut out = String::from("enroll_id\ttest_id\tlabel\n");
    for t in trials {
        out.push_str(&format!("{}\t{}\t{}\n", t.enroll_id, t.test_id, t.label));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path, kind: ScoreKind) -> Result<ScoreSet> {
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    for (n, l) in trial_lines(path)? {
        let (t, s) = parse_trial_line(path, n, &l)?;
        let s = s.ok_or_else(|| Error::parse(path, format!("line {n}"), "missing score column"))?;
        trials.push(t);
        scores.push(s);
    }
    ScoreSet::new(trials, scores, kind).map_err(|e| Error::parse(path, "scores", e.to_string()))
}

pub fn write_scores(scores: &ScoreSet, path: &Path) -> Result<()> {
    let mut out = String::from("enroll_id\ttest_id\tlabel\tllr\n");
    for (t, s) in scores.trials.iter().zip(&scores.scores) {
        out.push_str(&format!("{}\t{}\t{}\t{s:?}\n", t.enroll_id, t.test_id, t.label));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Index of each sample's speaker among the distinct speakers, in first-seen
/// order, plus the number of speakers.
pub fn class_indices<'a>(labels: impl IntoIterator<Item = &'a str>) -> (Vec<usize>, usize) {
    let mut map: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for l in labels {
        let n = map.len();
        out.push(*map.entry(l).or_insert(n));
    }
    let n = map.len();
    (out, n)
}

/// Distinct values in first-seen order.
pub fn distinct<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for v in values {
        if seen.insert(v) {
            out.push(v.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> EmbeddingSet {
        EmbeddingSet::new(
            4,
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                vec![0.5, -1.25, 3.0, 1e-3],
                vec![1.0, 2.0, 3.0, 4.0],
                vec![-0.1, 0.2, -0.3, 0.4],
            ],
        )
        .unwrap()
    }

    #[test]
    fn tsv_round_trip_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        let set = small_set();
        write_embeddings(&set, &p, EmbeddingFormat::Tsv).unwrap();
        let back = read_embeddings(&p, EmbeddingFormat::Tsv).unwrap();
        assert_eq!(back.dim(), 4);
        assert_eq!(back.len(), 3);
        assert_eq!(back.as_flat(), set.as_flat());
    }

    #[test]
    fn tsv_short_row_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        std::fs::write(&p, "sample_id\tv0\tv1\tv2\tv3\na\t1\t2\t3\t4\nb\t1\t2\t3\n").unwrap();
        let err = read_embeddings(&p, EmbeddingFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn empty_file_has_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        std::fs::write(&p, "").unwrap();
        let err = read_embeddings(&p, EmbeddingFormat::Tsv).unwrap_err();
        assert!(err.to_string().contains("no samples"), "{err}");
        let b = dir.path().join("x.emb");
        std::fs::write(&b, "").unwrap();
        assert!(read_embeddings(&b, EmbeddingFormat::Binary).is_err());
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.emb");
        std::fs::write(&p, b"EMB2\x01\0\0\0\x01\0\0\0").unwrap();
        assert!(read_embeddings(&p, EmbeddingFormat::Binary)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        std::fs::write(&p, b"EMB1\x01\0\0\0\x02\0\0\0\x01\0a\0\0\0\0").unwrap();
        assert!(read_embeddings(&p, EmbeddingFormat::Binary)
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn duplicate_ids_and_nan_rejected() {
        assert!(EmbeddingSet::new(1, vec!["a".into(), "a".into()], vec![vec![1.0], vec![2.0]])
            .is_err());
        assert!(EmbeddingSet::new(1, vec!["a".into()], vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let set = small_set();
        let err = write_embeddings(
            &set,
            Path::new("/nonexistent-dir/x.emb"),
            EmbeddingFormat::Binary,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn trial_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        std::fs::write(&p, "a\tb\ttgt\na\tb\timp\n").unwrap();
        let t = read_trials(&p).unwrap();
        assert_eq!(t[0], Trial::new("a", "b", Label::Target));
        assert_eq!(t[1], Trial::new("a", "b", Label::Impostor));
        std::fs::write(&p, "a\tb\tfoo\n").unwrap();
        assert!(matches!(read_trials(&p).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn scores_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tsv");
        let s = ScoreSet::new(
            vec![Trial::new("a", "b", Label::Target), Trial::new("a", "c", Label::Impostor)],
            vec![0.1 + 0.2, -1.0 / 3.0],
            ScoreKind::Llr,
        )
        .unwrap();
        write_scores(&s, &p).unwrap();
        assert_eq!(read_scores(&p, ScoreKind::Llr).unwrap(), s);
    }

    #[test]
    fn metadata_required_vs_optional() {
        let set = small_set();
        let mut rows = HashMap::new();
        rows.insert("a".to_string(), SampleMeta::new("a", "s1", "x", "d", "c"));
        assert!(set.clone().attach_meta(&rows, true).is_err());
        let loose = set.attach_meta(&rows, false).unwrap();
        assert!(loose.meta().is_none());
    }
}
