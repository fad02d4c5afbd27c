use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CalParamMap, DpldaModel, ModelInfo, SideInfoExtractor, ZTransform};
use crate::calibration::{EffectivePrior, GlobalCal};
use crate::error::{Error, Result};
use crate::plda::PldaScorer;
use crate::preprocess::{FrontEnd, LdaBasis};
use crate::synth::seeded_rng;

/// Standard deviation of randomly initialized parameters.
const INIT_STD: f64 = 0.5;
const INIT_STREAM: u64 = 20;

/// How parameters are initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Reproduces the PLDA baseline with global calibration exactly.
    #[default]
    Warm,
    /// As `Warm`, but the side-information projection is random.
    WarmPartial,
    /// Every parameter random.
    Random,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Warm => "warm",
            InitMode::WarmPartial => "warm-partial",
            InitMode::Random => "random",
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warm" => Ok(InitMode::Warm),
            "warm-partial" => Ok(InitMode::WarmPartial),
            "random" => Ok(InitMode::Random),
            other => Err(Error::Config(format!("unknown init mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub lda_dim: usize,
    /// Side-information input dimension (external m-vector dimension in
    /// external mode).
    pub m_dim: usize,
    pub z_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStartOptions {
    pub init: InitMode,
    pub transform: ZTransform,
    pub use_gamma: bool,
    pub pi: EffectivePrior,
    /// The side branch reads externally supplied m-vectors.
    pub external_m: bool,
}

impl Default for WarmStartOptions {
    fn default() -> Self {
        WarmStartOptions {
            init: InitMode::Warm,
            transform: ZTransform::LogSoftmax,
            use_gamma: false,
            pi: EffectivePrior::default(),
            external_m: false,
        }
    }
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    random_matrix(rng, n, 1).column(0).into_owned()
}

fn random_symmetric(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let r = random_matrix(rng, n, n);
    DMatrix::from_fn(n, n, |i, j| if i <= j { r[(i, j)] } else { r[(j, i)] })
}

fn random_scorer(rng: &mut impl Rng, n: usize, gamma: bool) -> PldaScorer {
    PldaScorer {
        lambda: random_symmetric(rng, n),
        gamma: if gamma {
            random_symmetric(rng, n)
        } else {
            DMatrix::zeros(n, n)
        },
        c: random_vector(rng, n),
        k: random_vector(rng, 1)[0],
    }
}

/// Builds the initial joint model.
///
/// The speaker branch takes the first `lda_dim` rows of the scaled LDA basis
/// and the given scorer; the side branch takes the last `m_dim` rows of the
/// same basis. The calibration maps are zero except `k_alpha = alpha` and
/// `k_beta = beta` of the global calibration, and `W ~ N(0, 0.5²)`, so the
/// model initially scores exactly like the baseline.
pub fn warm_start(
    basis: &LdaBasis,
    scorer: &PldaScorer,
    global: GlobalCal,
    dims: ModelDims,
    seed: u64,
    opts: &WarmStartOptions,
) -> Result<DpldaModel> {
    if dims.z_dim < 2 {
        return Err(Error::Config(format!("z dim must be at least 2, got {}", dims.z_dim)));
    }
    if dims.m_dim == 0 {
        return Err(Error::Config("m dim must be positive".into()));
    }
    if scorer.dim() != dims.lda_dim {
        return Err(Error::DimensionMismatch {
            expected: dims.lda_dim,
            got: scorer.dim(),
        });
    }
    let in_dim = basis.rows.ncols();
    let mut rng = seeded_rng(seed, INIT_STREAM);
    let w = random_matrix(&mut rng, dims.z_dim, dims.m_dim);

    let side_proj = if opts.external_m {
        None
    } else {
        Some(match opts.init {
            InitMode::Warm => basis.last(dims.m_dim)?,
            InitMode::WarmPartial | InitMode::Random => {
                if dims.m_dim > in_dim {
                    return Err(Error::InsufficientData(format!(
                        "m dim {} exceeds embedding dim {in_dim}",
                        dims.m_dim
                    )));
                }
                FrontEnd::new(
                    random_matrix(&mut rng, dims.m_dim, in_dim),
                    random_vector(&mut rng, dims.m_dim),
                )?
            }
        })
    };

    let (front, scorer, cal) = match opts.init {
        InitMode::Warm | InitMode::WarmPartial => (
            basis.first(dims.lda_dim)?,
            scorer.clone(),
            CalParamMap::constant(dims.z_dim, global.alpha, global.beta, opts.use_gamma),
        ),
        InitMode::Random => {
            if dims.lda_dim > in_dim {
                return Err(Error::InsufficientData(format!(
                    "LDA dim {} exceeds embedding dim {in_dim}",
                    dims.lda_dim
                )));
            }
            let front = FrontEnd::new(
                random_matrix(&mut rng, dims.lda_dim, in_dim),
                random_vector(&mut rng, dims.lda_dim),
            )?;
            let sc = random_scorer(&mut rng, dims.lda_dim, true);
            let cal = CalParamMap {
                alpha: random_scorer(&mut rng, dims.z_dim, opts.use_gamma),
                beta: random_scorer(&mut rng, dims.z_dim, opts.use_gamma),
                use_gamma: opts.use_gamma,
            };
            (front, sc, cal)
        }
    };

    let bias = if opts.init == InitMode::Random && opts.transform.uses_bias() {
        random_vector(&mut rng, dims.z_dim)
    } else {
        DVector::zeros(dims.z_dim)
    };

    let model = DpldaModel {
        front,
        scorer,
        side: SideInfoExtractor {
            proj: side_proj,
            w,
            bias,
            transform: opts.transform,
        },
        cal,
        pi: opts.pi,
        info: ModelInfo {
            lda_dim: dims.lda_dim,
            m_dim: dims.m_dim,
            z_dim: dims.z_dim,
            seed,
            epoch: 0,
            init: opts.init,
        },
    };
    model.validate()?;
    Ok(model)
}
