//! Run configuration: file (TOML or JSON) < `JKOFLOW_*` environment
//! overrides < command-line flags.

use jkoflow::datasets::{DatasetKind, DatasetSpec, SampleMatrix};
use jkoflow::integrator::IntegratorConfig;
use jkoflow::jko::JkoConfig;
use jkoflow::params::NetConfig;
use jkoflow::trainer::TrainConfig;
use jkoflow::ExecMode;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub dataset: DatasetSection,
    pub alpha: f64,
    pub stages: usize,
    pub warm_start: bool,
    pub net: NetSection,
    pub trainer: TrainerSection,
    pub integrator: IntegratorSection,
    pub evaluate: EvaluateSection,
    /// Filled from the --sequential flag / JKOFLOW_SEQUENTIAL.
    pub sequential: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            dataset: DatasetSection::default(),
            alpha: 1.0,
            stages: 5,
            warm_start: false,
            net: NetSection::default(),
            trainer: TrainerSection::default(),
            integrator: IntegratorSection::default(),
            evaluate: EvaluateSection::default(),
            sequential: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// One of the synthetic kinds, or "tabular" with `path`.
    pub kind: Option<String>,
    pub path: Option<PathBuf>,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// Tabular only: standardize columns with train-split statistics.
    pub standardize: bool,
    /// Tabular only: train/val/test fractions.
    pub split: (f64, f64, f64),
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: None,
            path: None,
            n_train: 4096,
            n_eval: 4096,
            seed: 1,
            standardize: true,
            split: (0.7, 0.1, 0.2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSection {
    pub d: usize,
    pub width: usize,
    pub n_resblocks: usize,
    pub resnet_step: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            d: 2,
            width: 8,
            n_resblocks: 1,
            resnet_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub n_iters: usize,
    pub nt: usize,
    pub seed: u64,
    pub lr_decay: f64,
    pub decay_every: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 512,
            n_iters: 1500,
            nt: 8,
            seed: 7,
            lr_decay: 0.5,
            decay_every: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSection {
    pub t_final: f64,
    pub nt_eval: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            t_final: 1.0,
            nt_eval: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    pub n_generate: usize,
    pub n_perms: usize,
    pub seed: u64,
    /// Optional 2D coordinate slices for MMD.
    pub dims: Option<Vec<(usize, usize)>>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            n_generate: 4096,
            n_perms: 200,
            seed: 123,
            dims: None,
        }
    }
}

/// Flag-level overrides (command line wins over environment wins over file).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub stages: Option<usize>,
    pub width: Option<usize>,
    pub nt: Option<usize>,
    pub sequential: bool,
}

pub fn load_file(path: &Path) -> Result<AppConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        serde_json::from_str(&text).map_err(|e| format!("config parse error: {e}"))
    } else {
        toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))
    }
}

fn env_parse<T: std::str::FromStr>(key: &str) -> Option<T> {
    std::env::var(key).ok().and_then(|v| v.parse::<T>().ok())
}

pub fn apply_env(cfg: &mut AppConfig) {
    if let Some(v) = env_parse::<f64>("JKOFLOW_ALPHA") {
        cfg.alpha = v;
    }
    if let Some(v) = env_parse::<usize>("JKOFLOW_STAGES") {
        cfg.stages = v;
    }
    if let Some(v) = env_parse::<usize>("JKOFLOW_WIDTH") {
        cfg.net.width = v;
    }
    if let Some(v) = env_parse::<usize>("JKOFLOW_NT") {
        cfg.trainer.nt = v;
    }
    if let Some(v) = env_parse::<u64>("JKOFLOW_SEED") {
        cfg.dataset.seed = v;
        cfg.trainer.seed = v;
    }
    if let Ok(v) = std::env::var("JKOFLOW_SEQUENTIAL") {
        cfg.sequential = v == "1" || v.eq_ignore_ascii_case("true");
    }
}

pub fn apply_overrides(cfg: &mut AppConfig, ov: &Overrides) {
    if let Some(v) = ov.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = ov.stages {
        cfg.stages = v;
    }
    if let Some(v) = ov.width {
        cfg.net.width = v;
    }
    if let Some(v) = ov.nt {
        cfg.trainer.nt = v;
    }
    if let Some(v) = ov.seed {
        cfg.dataset.seed = v;
        cfg.trainer.seed = v;
    }
    if ov.sequential {
        cfg.sequential = true;
    }
}

/// Validate and list every violated field.
pub fn validate(cfg: &AppConfig) -> Result<(), Vec<String>> {
    let mut problems = Vec::new();
    match cfg.dataset.kind.as_deref() {
        None => problems.push("dataset.kind: required".to_string()),
        Some(name) => match DatasetKind::parse(name) {
            Err(e) => problems.push(format!("dataset.kind: {e}")),
            Ok(DatasetKind::Tabular) => {
                if cfg.dataset.path.is_none() {
                    problems.push("dataset.path: required for tabular datasets".to_string());
                }
                let (a, b, c) = cfg.dataset.split;
                if !(a > 0.0 && b >= 0.0 && c > 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
                    problems.push("dataset.split: fractions must be positive (val may be 0) and sum to 1".to_string());
                }
            }
            Ok(_) => {
                if cfg.dataset.n_train < 2 {
                    problems.push("dataset.n_train: must be >= 2".to_string());
                }
                if cfg.dataset.n_eval < 2 {
                    problems.push("dataset.n_eval: must be >= 2".to_string());
                }
            }
        },
    }
    if !(cfg.alpha > 0.0) {
        problems.push("alpha: must be > 0".to_string());
    }
    if cfg.stages == 0 {
        problems.push("stages: must be >= 1".to_string());
    }
    if cfg.net.d == 0 {
        problems.push("net.d: must be >= 1".to_string());
    }
    if cfg.net.width == 0 {
        problems.push("net.width: must be >= 1".to_string());
    }
    if cfg.net.n_resblocks == 0 {
        problems.push("net.n_resblocks: must be >= 1".to_string());
    }
    if !(cfg.trainer.lr > 0.0) {
        problems.push("trainer.lr: must be > 0".to_string());
    }
    if cfg.trainer.batch_size == 0 {
        problems.push("trainer.batch_size: must be >= 1".to_string());
    }
    if cfg.trainer.n_iters == 0 {
        problems.push("trainer.n_iters: must be >= 1".to_string());
    }
    if cfg.trainer.nt == 0 {
        problems.push("trainer.nt: must be >= 1".to_string());
    }
    if !(cfg.trainer.lr_decay > 0.0) {
        problems.push("trainer.lr_decay: must be > 0".to_string());
    }
    if cfg.trainer.decay_every == 0 {
        problems.push("trainer.decay_every: must be >= 1".to_string());
    }
    if !(cfg.integrator.t_final > 0.0) {
        problems.push("integrator.t_final: must be > 0".to_string());
    }
    if cfg.integrator.nt_eval == 0 {
        problems.push("integrator.nt_eval: must be >= 1".to_string());
    }
    if cfg.evaluate.n_generate < 2 {
        problems.push("evaluate.n_generate: must be >= 2".to_string());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

impl AppConfig {
    pub fn exec(&self) -> ExecMode {
        if self.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            d: self.net.d,
            m: self.net.width,
            n_resblocks: self.net.n_resblocks,
            resnet_step: self.net.resnet_step,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            net: self.net_config(),
            lr: self.trainer.lr,
            betas: (self.trainer.beta1, self.trainer.beta2),
            eps_adam: self.trainer.eps,
            batch_size: self.trainer.batch_size,
            n_iters: self.trainer.n_iters,
            nt_train: self.trainer.nt,
            seed: self.trainer.seed,
            lr_decay: self.trainer.lr_decay,
            decay_every: self.trainer.decay_every,
            exec: self.exec(),
        }
    }

    pub fn integ_eval(&self) -> IntegratorConfig {
        IntegratorConfig {
            t_final: self.integrator.t_final,
            nt: self.integrator.nt_eval,
            direction: jkoflow::integrator::Direction::Forward,
        }
    }

    pub fn jko_config(&self) -> JkoConfig {
        JkoConfig {
            alpha: self.alpha,
            stages: self.stages,
            train: self.train_config(),
            integ_eval: self.integ_eval(),
            warm_start: self.warm_start,
        }
    }

    pub fn dataset_kind(&self) -> Result<DatasetKind, String> {
        let name = self
            .dataset
            .kind
            .as_deref()
            .ok_or_else(|| "dataset.kind: required".to_string())?;
        DatasetKind::parse(name).map_err(|e| e.to_string())
    }

    /// Materialize (train, eval) sample sets. For synthetic kinds the eval
    /// batch is an independent draw; for tabular data it is the test split.
    pub fn build_datasets(&self) -> Result<(SampleMatrix, SampleMatrix), jkoflow::Error> {
        let kind = self
            .dataset_kind()
            .map_err(jkoflow::Error::InvalidArgument)?;
        if kind == DatasetKind::Tabular {
            let path = self.dataset.path.as_ref().ok_or_else(|| {
                jkoflow::Error::InvalidArgument("dataset.path: required for tabular".into())
            })?;
            let (train, _val, test) = jkoflow::datasets::load_tabular(
                path,
                self.dataset.standardize,
                self.dataset.split,
                self.dataset.seed,
            )?;
            Ok((train, test))
        } else {
            let spec = DatasetSpec::synthetic(kind);
            let train = jkoflow::datasets::sample(&spec, self.dataset.n_train, self.dataset.seed)?;
            let eval_seed = jkoflow::rng::derive(self.dataset.seed, 0x4556_414c);
            let eval = jkoflow::datasets::sample(&spec, self.dataset.n_eval, eval_seed)?;
            Ok((train, eval))
        }
    }
}
