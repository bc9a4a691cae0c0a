//! Run configuration in flat `key = value` form.
//!
//! Keys use dotted sections (`sde.kind = vp`). Unknown keys are rejected.
//! [`RunConfig::render`] writes every key, and parsing the rendered text
//! gives back an identical configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::Phase;
use crate::graphs::{CurriculumParams, TopKScope};
use crate::objectives::LossWeights;
use crate::sgm::{SdeKind, SdeSpec};

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ablations {
    /// Train on the full social graph every epoch.
    pub no_curriculum: bool,
    /// Replace the diffusion model with two edge-dropout views.
    pub no_sgm: bool,
    /// Drop the contrastive loss and fuse both user views with an MLP.
    pub no_ssl: bool,
}

impl Ablations {
    /// Sets one flag by name.
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no_curriculum" | "no_cur" => self.no_curriculum = true,
            "no_sgm" => self.no_sgm = true,
            "no_ssl" => self.no_ssl = true,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(())
    }
}

/// Model and optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Propagation layers for both encoders.
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// LeakyReLU slope of the social encoder.
    pub social_slope: f64,
    pub sde: SdeSpec,
    /// Denoising start time.
    pub t_start: f64,
    pub time_embed_dim: usize,
    pub score_hidden: Vec<usize>,
    pub curriculum: CurriculumParams,
    pub weights: LossWeights,
    pub ablations: Ablations,
    /// Edge-dropout rate of the augmentation views under `no_sgm`.
    pub dropout_rate: f64,
    /// Add the denoised social embedding to the user vector at prediction.
    pub predict_with_social: bool,
    pub eval_every: usize,
    /// Early-stop after this many epochs without a better validation Recall@10.
    pub patience: usize,
    /// Fill the timing and allocation columns of `epochs.csv`.
    pub log_resources: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 3,
            epochs: 500,
            batch_size: 1024,
            learning_rate: 1e-3,
            seed: 0,
            social_slope: 0.01,
            sde: SdeSpec::default(),
            t_start: 1.0,
            time_embed_dim: 16,
            score_hidden: vec![128],
            curriculum: CurriculumParams::default(),
            weights: LossWeights::default(),
            ablations: Ablations::default(),
            dropout_rate: 0.1,
            predict_with_social: false,
            eval_every: 1,
            patience: 50,
            log_resources: false,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.t_start > 0.0 && self.t_start <= 1.0) {
            return bad(format!("t_start {} outside (0, 1]", self.t_start));
        }
        self.sde.validate().map_err(to_config)?;
        if self.sde.step_norm != crate::sgm::StepNorm::Row {
            return bad("training denoises with per-row Langevin step sizes".into());
        }
        self.curriculum.validate().map_err(to_config)?;
        self.weights.validate().map_err(to_config)
    }

    /// Curriculum parameters seeded from the run seed.
    pub fn curriculum_params(&self) -> CurriculumParams {
        CurriculumParams {
            seed: self.seed,
            ..self.curriculum
        }
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

/// Everything a command needs: training settings, data locations and
/// command options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub ratings: Option<PathBuf>,
    pub trust: Option<PathBuf>,
    /// Directory holding the split files.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Ratings strictly above this count as positive.
    pub rating_threshold: u8,
    pub min_interactions: usize,
    pub split: [f64; 3],
    pub eval_phase: Phase,
    pub eval_ks: Vec<usize>,
    pub gradcheck_probes: usize,
    pub gradcheck_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            ratings: None,
            trust: None,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            rating_threshold: 3,
            min_interactions: 3,
            split: [0.8, 0.1, 0.1],
            eval_phase: Phase::Test,
            eval_ks: vec![5, 10],
            gradcheck_probes: 64,
            gradcheck_step: 1e-2,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn scope_str(s: TopKScope) -> &'static str {
    match s {
        TopKScope::PerUser => "per_user",
        TopKScope::Global => "global",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assigns one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse_value(key, v)?,
            "model.dim" => t.dim = parse_value(key, v)?,
            "model.layers" => t.layers = parse_value(key, v)?,
            "model.social_slope" => t.social_slope = parse_value(key, v)?,
            "model.predict_with_social" => t.predict_with_social = parse_value(key, v)?,
            "train.epochs" => t.epochs = parse_value(key, v)?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.learning_rate" => t.learning_rate = parse_value(key, v)?,
            "train.eval_every" => t.eval_every = parse_value(key, v)?,
            "train.patience" => t.patience = parse_value(key, v)?,
            "train.log_resources" => t.log_resources = parse_value(key, v)?,
            "sde.kind" => t.sde.kind = SdeKind::parse(v).map_err(to_config)?,
            "sde.sigma_min" => t.sde.sigma_min = parse_value(key, v)?,
            "sde.sigma_max" => t.sde.sigma_max = parse_value(key, v)?,
            "sde.beta_min" => t.sde.beta_min = parse_value(key, v)?,
            "sde.beta_max" => t.sde.beta_max = parse_value(key, v)?,
            "sde.steps" => t.sde.steps = parse_value(key, v)?,
            "sde.corrector_steps" => t.sde.corrector_steps = parse_value(key, v)?,
            "sde.snr" => t.sde.snr = parse_value(key, v)?,
            "sde.t_start" => t.t_start = parse_value(key, v)?,
            "score.time_embed_dim" => t.time_embed_dim = parse_value(key, v)?,
            "score.hidden" => t.score_hidden = parse_list(key, v)?,
            "curriculum.topk_epochs" => t.curriculum.topk_epochs = parse_value(key, v)?,
            "curriculum.random_epochs" => t.curriculum.random_epochs = parse_value(key, v)?,
            "curriculum.rho" => t.curriculum.rho = parse_value(key, v)?,
            "curriculum.rho_hat" => t.curriculum.rho_hat = parse_value(key, v)?,
            "curriculum.scope" => {
                t.curriculum.scope = match v {
                    "per_user" => TopKScope::PerUser,
                    "global" => TopKScope::Global,
                    _ => return Err(Error::Config(format!("{key} = {v}: expected per_user or global"))),
                }
            }
            "loss.lambda1" => t.weights.lambda1 = parse_value(key, v)?,
            "loss.lambda2" => t.weights.lambda2 = parse_value(key, v)?,
            "loss.tau" => t.weights.tau = parse_value(key, v)?,
            "ablation.no_curriculum" => t.ablations.no_curriculum = parse_value(key, v)?,
            "ablation.no_sgm" => t.ablations.no_sgm = parse_value(key, v)?,
            "ablation.no_ssl" => t.ablations.no_ssl = parse_value(key, v)?,
            "ablation.dropout_rate" => t.dropout_rate = parse_value(key, v)?,
            "data.ratings" => self.ratings = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.trust" => self.trust = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.dir" => self.data_dir = PathBuf::from(v),
            "data.rating_threshold" => self.rating_threshold = parse_value(key, v)?,
            "data.min_interactions" => self.min_interactions = parse_value(key, v)?,
            "data.split" => {
                let r: Vec<f64> = parse_list(key, v)?;
                self.split = r
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key} = {v}: expected three ratios")))?;
            }
            "out.dir" => self.out_dir = PathBuf::from(v),
            "eval.phase" => self.eval_phase = Phase::parse(v).map_err(to_config)?,
            "eval.ks" => self.eval_ks = parse_list(key, v)?,
            "gradcheck.probes" => self.gradcheck_probes = parse_value(key, v)?,
            "gradcheck.step" => self.gradcheck_step = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// All keys in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("seed", t.seed.to_string()),
            ("model.dim", t.dim.to_string()),
            ("model.layers", t.layers.to_string()),
            ("model.social_slope", t.social_slope.to_string()),
            ("model.predict_with_social", t.predict_with_social.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.log_resources", t.log_resources.to_string()),
            ("sde.kind", t.sde.kind.as_str().to_string()),
            ("sde.sigma_min", t.sde.sigma_min.to_string()),
            ("sde.sigma_max", t.sde.sigma_max.to_string()),
            ("sde.beta_min", t.sde.beta_min.to_string()),
            ("sde.beta_max", t.sde.beta_max.to_string()),
            ("sde.steps", t.sde.steps.to_string()),
            ("sde.corrector_steps", t.sde.corrector_steps.to_string()),
            ("sde.snr", t.sde.snr.to_string()),
            ("sde.t_start", t.t_start.to_string()),
            ("score.time_embed_dim", t.time_embed_dim.to_string()),
            ("score.hidden", join(&t.score_hidden)),
            ("curriculum.topk_epochs", t.curriculum.topk_epochs.to_string()),
            ("curriculum.random_epochs", t.curriculum.random_epochs.to_string()),
            ("curriculum.rho", t.curriculum.rho.to_string()),
            ("curriculum.rho_hat", t.curriculum.rho_hat.to_string()),
            ("curriculum.scope", scope_str(t.curriculum.scope).to_string()),
            ("loss.lambda1", t.weights.lambda1.to_string()),
            ("loss.lambda2", t.weights.lambda2.to_string()),
            ("loss.tau", t.weights.tau.to_string()),
            ("ablation.no_curriculum", t.ablations.no_curriculum.to_string()),
            ("ablation.no_sgm", t.ablations.no_sgm.to_string()),
            ("ablation.no_ssl", t.ablations.no_ssl.to_string()),
            ("ablation.dropout_rate", t.dropout_rate.to_string()),
            ("data.ratings", path(&self.ratings)),
            ("data.trust", path(&self.trust)),
            ("data.dir", self.data_dir.display().to_string()),
            ("data.rating_threshold", self.rating_threshold.to_string()),
            ("data.min_interactions", self.min_interactions.to_string()),
            ("data.split", join(&self.split)),
            ("out.dir", self.out_dir.display().to_string()),
            ("eval.phase", self.eval_phase.as_str().to_string()),
            ("eval.ks", join(&self.eval_ks)),
            ("gradcheck.probes", self.gradcheck_probes.to_string()),
            ("gradcheck.step", self.gradcheck_step.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
