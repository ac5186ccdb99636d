//! Run configuration and its flat `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::diffusion::{make_schedule, NoiseSchedule, SamplerVariance};
use crate::error::{Error, Result};
use crate::evalkit::ToyDataset;
use crate::gradients::EstimatorKind;
use crate::nn::{Activation, MlpSpec};

/// Everything a run needs, in one flat struct.
///
/// Configs round-trip through a plain `key = value` text format: `Display`
/// emits it, [`TrainConfig::from_str`] parses it back (unknown keys are
/// rejected, omitted keys fall back to the defaults). A copy is written into
/// every run directory so results stay reproducible from the artifacts alone.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of diffusion steps. Written as `T` in config files.
    pub t_max: usize,
    pub data_dim: usize,
    pub dataset: ToyDataset,
    /// Std of the Gaussian jitter added to the noiseless dataset curves.
    pub data_noise: f64,
    /// Size of the fixed training pool drawn once per run. Also defines an
    /// epoch: `floor(n_train / batch_m)` steps (pretraining) or outer
    /// iterations (fine-tuning).
    pub n_train: usize,
    /// Critic (and baseline) ascent rounds per outer iteration.
    pub n_critic: usize,
    /// Generator descent rounds per outer iteration. Zero freezes the
    /// generator while the critic keeps training.
    pub n_generator: usize,
    /// Minibatch size, shared by trajectory draws, data draws and buffer draws.
    pub batch_m: usize,
    /// Weight of the baseline regression inside the critic objective.
    pub lambda: f64,
    /// Weight of the gradient penalty when the critic is trained with one.
    pub eta_gp: f64,
    /// Global-norm cap for generator gradients. `None` disables clipping.
    pub gamma: Option<f64>,
    pub lr_generator: f64,
    pub lr_critic: f64,
    /// Pretraining step size. Kept separate from `lr_generator`: the
    /// fine-tuning rate is deliberately tiny and would not fit the
    /// noise-matching loss in any reasonable number of epochs.
    pub lr_pretrain: f64,
    pub estimator: EstimatorKind,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Model samples drawn per Wasserstein-2 evaluation.
    pub eval_samples: usize,
    /// Largest point count handed to the exact matcher; bigger draws are
    /// subsampled down to this before matching.
    pub eval_subsample: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Outer iterations between Wasserstein-2 evaluations while fine-tuning.
    pub eval_interval: usize,
    pub sampler_variance: SamplerVariance,
    /// Width of the sinusoidal timestep embedding fed to time-aware nets.
    /// Zero drops the time input entirely.
    pub time_embed_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub baseline_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    /// Toy-scale defaults: T=10 swiss roll, lambda 0.1, five critic rounds to
    /// one generator round, no clipping, batch 64, generator rate 5e-5 and
    /// critic rate 1e-3, 2000 pretraining and 300 fine-tuning epochs.
    fn default() -> Self {
        TrainConfig {
            t_max: 10,
            data_dim: 2,
            dataset: ToyDataset::SwissRoll,
            data_noise: 0.01,
            n_train: 2048,
            n_critic: 5,
            n_generator: 1,
            batch_m: 64,
            lambda: 0.1,
            eta_gp: 1e-3,
            gamma: None,
            lr_generator: 5e-5,
            lr_critic: 1e-3,
            lr_pretrain: 1e-3,
            estimator: EstimatorKind::PgBaseline,
            pretrain_epochs: 2000,
            finetune_epochs: 300,
            seed: 0,
            eval_samples: 2048,
            eval_subsample: 2048,
            beta_min: 1e-4,
            beta_max: 0.9,
            eval_interval: 250,
            sampler_variance: SamplerVariance::PosteriorBeta,
            time_embed_dim: 16,
            gen_hidden: vec![128, 128, 128, 128],
            critic_hidden: vec![128, 128, 128],
            baseline_hidden: vec![128, 128, 128],
        }
    }
}

impl TrainConfig {
    /// The settings the method runs with at image scale: a heavier baseline
    /// weight, ten generator rounds per critic phase, and gradient clipping
    /// at 0.1. Shipped for reference; the toy pipeline never exercises it.
    pub fn image_scale() -> Self {
        TrainConfig {
            lambda: 1.0,
            n_generator: 10,
            gamma: Some(0.1),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            Ok(())
        }
        positive("T", self.t_max)?;
        positive("data_dim", self.data_dim)?;
        positive("n_train", self.n_train)?;
        positive("n_critic", self.n_critic)?;
        positive("batch_m", self.batch_m)?;
        positive("eval_samples", self.eval_samples)?;
        positive("eval_subsample", self.eval_subsample)?;
        positive("eval_interval", self.eval_interval)?;
        // n_generator, pretrain_epochs and finetune_epochs may be zero: a
        // zero-round or zero-epoch phase is a no-op, not an error.
        if self.data_noise < 0.0 {
            return Err(Error::Config("data_noise must be nonnegative".into()));
        }
        if self.lambda < 0.0 || self.eta_gp < 0.0 {
            return Err(Error::Config(
                "lambda and eta_gp must be nonnegative".into(),
            ));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Config("gamma must be positive when set".into()));
            }
        }
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_critic", self.lr_critic),
            ("lr_pretrain", self.lr_pretrain),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be a positive number")));
            }
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return Err(Error::Config(
                "need 0 < beta_min <= beta_max < 1".into(),
            ));
        }
        for (name, dims) in [
            ("gen_hidden", &self.gen_hidden),
            ("critic_hidden", &self.critic_hidden),
            ("baseline_hidden", &self.baseline_hidden),
        ] {
            if dims.contains(&0) {
                return Err(Error::Config(format!("{name} must not contain zero widths")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(
            self.t_max,
            self.beta_min,
            self.beta_max,
            self.sampler_variance,
        )
    }

    pub fn generator_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.data_dim,
            hidden_dims: self.gen_hidden.clone(),
            output_dim: self.data_dim,
            activation: Activation::Softplus,
            time_embed_dim: self.time_embed_dim,
        }
    }

    pub fn critic_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.data_dim,
            hidden_dims: self.critic_hidden.clone(),
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: 0,
        }
    }

    pub fn baseline_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.data_dim,
            hidden_dims: self.baseline_hidden.clone(),
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: self.time_embed_dim,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn fmt_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: bad layer width {part:?}")))
        })
        .collect()
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let gamma = match self.gamma {
            Some(g) => g.to_string(),
            None => "none".into(),
        };
        write!(
            f,
            "# problem\n\
             T = {}\n\
             data_dim = {}\n\
             dataset = {}\n\
             data_noise = {}\n\
             n_train = {}\n\
             beta_min = {}\n\
             beta_max = {}\n\
             sampler_variance = {}\n\
             \n\
             # optimization\n\
             estimator = {}\n\
             n_critic = {}\n\
             n_generator = {}\n\
             batch_m = {}\n\
             lambda = {}\n\
             eta_gp = {}\n\
             gamma = {}\n\
             lr_generator = {}\n\
             lr_critic = {}\n\
             lr_pretrain = {}\n\
             pretrain_epochs = {}\n\
             finetune_epochs = {}\n\
             \n\
             # architecture\n\
             time_embed_dim = {}\n\
             gen_hidden = {}\n\
             critic_hidden = {}\n\
             baseline_hidden = {}\n\
             \n\
             # evaluation\n\
             seed = {}\n\
             eval_samples = {}\n\
             eval_subsample = {}\n\
             eval_interval = {}\n",
            self.t_max,
            self.data_dim,
            self.dataset,
            self.data_noise,
            self.n_train,
            self.beta_min,
            self.beta_max,
            self.sampler_variance,
            self.estimator,
            self.n_critic,
            self.n_generator,
            self.batch_m,
            self.lambda,
            self.eta_gp,
            gamma,
            self.lr_generator,
            self.lr_critic,
            self.lr_pretrain,
            self.pretrain_epochs,
            self.finetune_epochs,
            self.time_embed_dim,
            fmt_dims(&self.gen_hidden),
            fmt_dims(&self.critic_hidden),
            fmt_dims(&self.baseline_hidden),
            self.seed,
            self.eval_samples,
            self.eval_subsample,
            self.eval_interval,
        )
    }
}

impl FromStr for TrainConfig {
    type Err = Error;

    /// Parses the flat `key = value` format over the defaults. Blank lines
    /// and `#` comments are skipped; unknown and repeated keys are errors.
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainConfig {
    /// Apply `key = value` lines over the current values; the format matches
    /// the config file. Repeats within one call are rejected. Does not
    /// re-validate: call [`TrainConfig::validate`] once all layers are in.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: bad value {value:?}")))
        }

        let cfg = self;
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key {key}", idx + 1)));
            }
            match key {
                "T" => cfg.t_max = parse(key, value)?,
                "data_dim" => cfg.data_dim = parse(key, value)?,
                "dataset" => cfg.dataset = parse(key, value)?,
                "data_noise" => cfg.data_noise = parse(key, value)?,
                "n_train" => cfg.n_train = parse(key, value)?,
                "n_critic" => cfg.n_critic = parse(key, value)?,
                "n_generator" => cfg.n_generator = parse(key, value)?,
                "batch_m" => cfg.batch_m = parse(key, value)?,
                "lambda" => cfg.lambda = parse(key, value)?,
                "eta_gp" => cfg.eta_gp = parse(key, value)?,
                "gamma" => {
                    cfg.gamma = if value == "none" {
                        None
                    } else {
                        Some(parse(key, value)?)
                    }
                }
                "lr_generator" => cfg.lr_generator = parse(key, value)?,
                "lr_critic" => cfg.lr_critic = parse(key, value)?,
                "lr_pretrain" => cfg.lr_pretrain = parse(key, value)?,
                "estimator" => cfg.estimator = parse(key, value)?,
                "pretrain_epochs" => cfg.pretrain_epochs = parse(key, value)?,
                "finetune_epochs" => cfg.finetune_epochs = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                "eval_samples" => cfg.eval_samples = parse(key, value)?,
                "eval_subsample" => cfg.eval_subsample = parse(key, value)?,
                "beta_min" => cfg.beta_min = parse(key, value)?,
                "beta_max" => cfg.beta_max = parse(key, value)?,
                "eval_interval" => cfg.eval_interval = parse(key, value)?,
                "sampler_variance" => cfg.sampler_variance = parse(key, value)?,
                "time_embed_dim" => cfg.time_embed_dim = parse(key, value)?,
                "gen_hidden" => cfg.gen_hidden = parse_dims(key, value)?,
                "critic_hidden" => cfg.critic_hidden = parse_dims(key, value)?,
                "baseline_hidden" => cfg.baseline_hidden = parse_dims(key, value)?,
                other => {
                    return Err(Error::Config(format!("line {}: unknown key {other}", idx + 1)))
                }
            }
        }
        Ok(())
    }
}
