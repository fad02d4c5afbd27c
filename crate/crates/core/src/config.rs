//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. An empty value selects the built-in default for optional
//! keys. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::benchmark::BenchmarkConfig;
use crate::calibration::{EffectivePrior, GlobalCal};
use crate::dplda::{AdamConfig, InitMode, ModelDims, TrainConfig, WarmStartOptions, ZTransform};
use crate::error::{Error, Result};
use crate::tbc::TbcConfig;

/// Every setting of a command-line run. Defaults describe the desk-scale
/// synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub pi: f64,
    pub baseline_lda_dim: usize,
    pub lda_dim: usize,
    pub m_dim: usize,
    pub z_dim: usize,
    pub use_gamma: bool,
    pub transform: ZTransform,
    pub init: InitMode,
    /// Snapshot epochs; training runs to the largest.
    pub epochs: Vec<usize>,
    pub stage1_epochs: Option<usize>,
    pub lr: f64,
    pub stage2_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_speakers: usize,
    pub balance_stage2: bool,
    pub seeds: Vec<u64>,
    pub tbc_target_goal: usize,
    pub tbc_reg_weight: f64,
    pub tbc_max_impostors: usize,
    pub tbc_cond_lda_dim: Option<usize>,
    pub synth_dim: usize,
    pub synth_train_speakers: usize,
    pub synth_dev_speakers: usize,
    pub synth_eval_speakers: usize,
    pub synth_seed: u64,
    pub synth_max_impostors: usize,
    pub analyze_max_points: usize,
}

impl Default for Config {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Config {
            seed: 1,
            pi: b.pi.value(),
            baseline_lda_dim: b.baseline_lda_dim,
            lda_dim: b.lda_dim,
            m_dim: b.m_dim,
            z_dim: b.z_dim,
            use_gamma: false,
            transform: ZTransform::LogSoftmax,
            init: InitMode::Warm,
            epochs: vec![b.train.epochs],
            stage1_epochs: None,
            lr: b.train.adam.lr,
            stage2_lr: None,
            beta1: b.train.adam.beta1,
            beta2: b.train.adam.beta2,
            adam_eps: b.train.adam.eps,
            batch_speakers: b.train.batch_speakers,
            balance_stage2: true,
            seeds: b.seeds.clone(),
            tbc_target_goal: 100,
            tbc_reg_weight: 0.02,
            tbc_max_impostors: 10_000,
            tbc_cond_lda_dim: None,
            synth_dim: b.dim,
            synth_train_speakers: b.n_train_speakers,
            synth_dev_speakers: b.n_dev_speakers,
            synth_eval_speakers: b.n_eval_speakers,
            synth_seed: b.seed,
            synth_max_impostors: b.max_impostors,
            analyze_max_points: 300,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("key '{key}' needs at least one value")));
    }
    Ok(items)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl Config {
    /// Names of all keys, in snapshot order.
    pub fn keys() -> Vec<&'static str> {
        Config::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse_str(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "pi" => self.pi = EffectivePrior::new(parse(key, value)?)?.value(),
            "baseline_lda_dim" => self.baseline_lda_dim = parse(key, value)?,
            "lda_dim" => self.lda_dim = parse(key, value)?,
            "m_dim" => self.m_dim = parse(key, value)?,
            "z_dim" => self.z_dim = parse(key, value)?,
            "use_gamma" => self.use_gamma = parse(key, value)?,
            "transform" => self.transform = value.parse()?,
            "init" => self.init = value.parse()?,
            "epochs" => self.epochs = parse_list(key, value)?,
            "stage1_epochs" => self.stage1_epochs = parse_opt(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "stage2_lr" => self.stage2_lr = parse_opt(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "batch_speakers" => self.batch_speakers = parse(key, value)?,
            "balance_stage2" => self.balance_stage2 = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "tbc_target_goal" => self.tbc_target_goal = parse(key, value)?,
            "tbc_reg_weight" => self.tbc_reg_weight = parse(key, value)?,
            "tbc_max_impostors" => self.tbc_max_impostors = parse(key, value)?,
            "tbc_cond_lda_dim" => self.tbc_cond_lda_dim = parse_opt(key, value)?,
            "synth_dim" => self.synth_dim = parse(key, value)?,
            "synth_train_speakers" => self.synth_train_speakers = parse(key, value)?,
            "synth_dev_speakers" => self.synth_dev_speakers = parse(key, value)?,
            "synth_eval_speakers" => self.synth_eval_speakers = parse(key, value)?,
            "synth_seed" => self.synth_seed = parse(key, value)?,
            "synth_max_impostors" => self.synth_max_impostors = parse(key, value)?,
            "analyze_max_points" => self.analyze_max_points = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Every key with its value in text form.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("pi", self.pi.to_string()),
            ("baseline_lda_dim", self.baseline_lda_dim.to_string()),
            ("lda_dim", self.lda_dim.to_string()),
            ("m_dim", self.m_dim.to_string()),
            ("z_dim", self.z_dim.to_string()),
            ("use_gamma", self.use_gamma.to_string()),
            ("transform", self.transform.to_string()),
            ("init", self.init.name().to_string()),
            ("epochs", join(&self.epochs)),
            ("stage1_epochs", opt(&self.stage1_epochs)),
            ("lr", self.lr.to_string()),
            ("stage2_lr", opt(&self.stage2_lr)),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("batch_speakers", self.batch_speakers.to_string()),
            ("balance_stage2", self.balance_stage2.to_string()),
            ("seeds", join(&self.seeds)),
            ("tbc_target_goal", self.tbc_target_goal.to_string()),
            ("tbc_reg_weight", self.tbc_reg_weight.to_string()),
            ("tbc_max_impostors", self.tbc_max_impostors.to_string()),
            ("tbc_cond_lda_dim", opt(&self.tbc_cond_lda_dim)),
            ("synth_dim", self.synth_dim.to_string()),
            ("synth_train_speakers", self.synth_train_speakers.to_string()),
            ("synth_dev_speakers", self.synth_dev_speakers.to_string()),
            ("synth_eval_speakers", self.synth_eval_speakers.to_string()),
            ("synth_seed", self.synth_seed.to_string()),
            ("synth_max_impostors", self.synth_max_impostors.to_string()),
            ("analyze_max_points", self.analyze_max_points.to_string()),
        ]
    }

    /// Key-value map stored in model files.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_snapshot(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Config::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn prior(&self) -> Result<EffectivePrior> {
        EffectivePrior::new(self.pi)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            lda_dim: self.lda_dim,
            m_dim: self.m_dim,
            z_dim: self.z_dim,
        }
    }

    pub fn warm_start_options(&self, external_m: bool) -> Result<WarmStartOptions> {
        Ok(WarmStartOptions {
            init: self.init,
            transform: self.transform,
            use_gamma: self.use_gamma,
            pi: self.prior()?,
            external_m,
        })
    }

    /// Training settings; snapshots are taken at every configured epoch.
    pub fn train_config(&self) -> TrainConfig {
        let mut snapshot_epochs = self.epochs.clone();
        snapshot_epochs.sort_unstable();
        snapshot_epochs.dedup();
        TrainConfig {
            epochs: snapshot_epochs.last().copied().unwrap_or(1),
            stage1_epochs: self.stage1_epochs,
            batch_speakers: self.batch_speakers,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            stage2_lr: self.stage2_lr,
            snapshot_epochs,
            balance_stage2: self.balance_stage2,
        }
    }

    pub fn tbc_config(&self, global_cal: GlobalCal) -> Result<TbcConfig> {
        let cfg = TbcConfig {
            target_trial_goal: self.tbc_target_goal,
            reg_weight: self.tbc_reg_weight,
            global_cal,
            pi: self.prior()?,
            max_impostors: self.tbc_max_impostors,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The synthetic benchmark at the configured sizes and seed.
    pub fn benchmark(&self) -> Result<BenchmarkConfig> {
        let mut b = BenchmarkConfig::default();
        if self.synth_dim < 15 {
            return Err(Error::Config(format!(
                "synth_dim must be at least 15 (the benchmark conditions shift dims 0..15), got {}",
                self.synth_dim
            )));
        }
        if self.synth_dim != b.dim {
            for c in &mut b.conditions {
                c.mean_shift.resize(self.synth_dim, 0.0);
            }
        }
        b.dim = self.synth_dim;
        b.n_train_speakers = self.synth_train_speakers;
        b.n_dev_speakers = self.synth_dev_speakers;
        b.n_eval_speakers = self.synth_eval_speakers;
        b.seed = self.synth_seed;
        b.max_impostors = self.synth_max_impostors;
        b.baseline_lda_dim = self.baseline_lda_dim;
        b.lda_dim = self.lda_dim;
        b.m_dim = self.m_dim;
        b.z_dim = self.z_dim;
        b.pi = self.prior()?;
        b.train = self.train_config();
        b.seeds = self.seeds.clone();
        b.epochs = b.train.snapshot_epochs.clone();
        Ok(b)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
