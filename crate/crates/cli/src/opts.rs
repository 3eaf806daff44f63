//! Run settings shared by every subcommand. The same struct is parsed from
//! flags and from the TOML config file; flags win key by key.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use vacalib::em::EmConfig;
use vacalib::gibbs::ChainConfig;
use vacalib::metrics::CccVariant;
use vacalib::model::Hyperparams;
use vacalib::sim::Band;
use vacalib::{Error, Result};

pub const SEED_ENV: &str = "VACALIB_SEED";
const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Single,
    EnsembleIndependent,
    EnsembleJoint,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opts {
    /// Unlabeled prediction file.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Labeled prediction file.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Directory for output files (created if missing).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Class labels in order; inferred from the data when absent.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Which `pred_<name>` column single-classifier models use; the first
    /// by default.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Random seed; falls back to the config, then $VACALIB_SEED.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub n_chains: Option<usize>,
    #[arg(long)]
    pub n_burnin: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub mh_proposal_sd: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adapt_mh: Option<bool>,
    /// Hold the shrinkage weights fixed (one value, or one per class).
    #[arg(long, value_delimiter = ',')]
    pub fixed_gamma: Option<Vec<f64>>,

    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub alpha_gamma: Option<f64>,
    #[arg(long)]
    pub beta_gamma: Option<f64>,

    /// Also write every retained draw to draws.csv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub write_draws: Option<bool>,
    #[arg(long)]
    pub ccc_variant: Option<CccVariant>,
    /// Prior variance of each regression coefficient (covariate model).
    #[arg(long)]
    pub prior_variance: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,

    /// One matrix (M1, M2 or M3) per simulated classifier.
    #[arg(long, value_delimiter = ',')]
    pub matrices: Option<Vec<String>>,
    #[arg(long)]
    pub band: Option<Band>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n_labeled: Option<usize>,
    #[arg(long)]
    pub n_unlabeled: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Write the first replicate's data as unlabeled.csv, labeled.csv and
    /// truth.csv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub emit_dataset: Option<bool>,
    #[arg(long)]
    pub threads: Option<usize>,

    /// Estimated class probabilities: a posterior summary, a MAP estimate
    /// or a `class,probability` table.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// True class probabilities as `class,probability`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

impl Opts {
    /// Reads `path` as TOML and overlays every flag that was given.
    pub fn merged(flags: Opts, path: Option<&Path>) -> Result<Opts> {
        let Some(path) = path else { return Ok(flags) };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let file: Opts = toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut base = serde_json::to_value(file).expect("options serialise");
        let over = serde_json::to_value(flags).expect("options serialise");
        let (serde_json::Value::Object(b), serde_json::Value::Object(o)) = (&mut base, over) else {
            unreachable!("options serialise to an object")
        };
        for (k, v) in o {
            if !v.is_null() {
                b.insert(k, v);
            }
        }
        Ok(serde_json::from_value(base).expect("merged options deserialise"))
    }

    /// Flag, then config, then the environment, then the built-in default.
    pub fn resolve_seed(&mut self) -> Result<u64> {
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(s) => s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Input(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?,
                Err(_) => DEFAULT_SEED,
            },
        };
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
        Ok(dir)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str, cmd: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Input(format!("`{cmd}` needs --{name} (or `{}` in the config)", name.replace('-', "_"))))
    }

    pub fn hyper(&self) -> Hyperparams<f64> {
        let d = Hyperparams::default();
        Hyperparams {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            delta: self.delta.unwrap_or(d.delta),
            alpha_gamma: self.alpha_gamma.unwrap_or(d.alpha_gamma),
            beta_gamma: self.beta_gamma.unwrap_or(d.beta_gamma),
        }
    }

    /// Overrides `base` with whatever chain settings were given.
    pub fn chain(&self, base: ChainConfig) -> ChainConfig {
        ChainConfig {
            n_burnin: self.n_burnin.unwrap_or(base.n_burnin),
            n_samples: self.n_samples.unwrap_or(base.n_samples),
            thin: self.thin.unwrap_or(base.thin),
            seed: self.seed(),
            n_chains: self.n_chains.unwrap_or(base.n_chains),
            mh_proposal_sd: self.mh_proposal_sd.unwrap_or(base.mh_proposal_sd),
            adapt_mh: self.adapt_mh.unwrap_or(base.adapt_mh),
            fixed_gamma: self.fixed_gamma.clone().or(base.fixed_gamma),
        }
    }

    pub fn em(&self) -> EmConfig {
        let d = EmConfig::default();
        EmConfig { max_iter: self.max_iter.unwrap_or(d.max_iter), tol: self.tol.unwrap_or(d.tol), ..d }
    }
}
