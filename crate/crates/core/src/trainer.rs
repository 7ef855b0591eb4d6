//! Adam minimization of one proximal subproblem.

use crate::datasets::SampleMatrix;
use crate::error::Error;
use crate::integrator::IntegratorConfig;
use crate::objective::{loss_gradient, ot_loss, LossBreakdown};
use crate::params::{init_params, NetConfig, ParamVector};
use crate::rng::{stream, tags};
use crate::{ExecMode, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

// monotonic clock that degrades to "no timing" on wasm targets, where
// std::time::Instant is unavailable at runtime
#[cfg(not(target_arch = "wasm32"))]
fn monotonic_now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}
#[cfg(target_arch = "wasm32")]
fn monotonic_now() -> Option<std::time::Instant> {
    None
}

fn seconds_since(start: &Option<std::time::Instant>) -> f64 {
    start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0)
}

/// Hyperparameters of one subproblem solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub net: NetConfig,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::betas")]
    pub betas: (f64, f64),
    #[serde(default = "defaults::eps_adam")]
    pub eps_adam: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::n_iters")]
    pub n_iters: usize,
    /// RK4 steps per flow evaluation during training.
    #[serde(default = "defaults::nt_train")]
    pub nt_train: usize,
    #[serde(default)]
    pub seed: u64,
    /// Multiplicative learning-rate factor applied every `decay_every` steps.
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "defaults::decay_every")]
    pub decay_every: usize,
    #[serde(default)]
    pub exec: ExecMode,
}

mod defaults {
    pub fn lr() -> f64 {
        0.05
    }
    pub fn betas() -> (f64, f64) {
        (0.9, 0.999)
    }
    pub fn eps_adam() -> f64 {
        1e-8
    }
    pub fn batch_size() -> usize {
        512
    }
    pub fn n_iters() -> usize {
        1500
    }
    pub fn nt_train() -> usize {
        8
    }
    pub fn lr_decay() -> f64 {
        0.5
    }
    pub fn decay_every() -> usize {
        500
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            net: NetConfig::new(2, 8),
            lr: defaults::lr(),
            betas: defaults::betas(),
            eps_adam: defaults::eps_adam(),
            batch_size: defaults::batch_size(),
            n_iters: defaults::n_iters(),
            nt_train: defaults::nt_train(),
            seed: 0,
            lr_decay: defaults::lr_decay(),
            decay_every: defaults::decay_every(),
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let mut problems = Vec::new();
        if !(self.alpha > 0.0) {
            problems.push("alpha must be > 0");
        }
        if !(self.lr > 0.0) {
            problems.push("lr must be > 0");
        }
        if !(self.betas.0 > 0.0 && self.betas.0 < 1.0 && self.betas.1 > 0.0 && self.betas.1 < 1.0) {
            problems.push("betas must lie in (0, 1)");
        }
        if !(self.eps_adam > 0.0) {
            problems.push("eps_adam must be > 0");
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1");
        }
        if self.n_iters == 0 {
            problems.push("n_iters must be >= 1");
        }
        if self.nt_train == 0 {
            problems.push("nt_train must be >= 1");
        }
        if !(self.lr_decay > 0.0) {
            problems.push("lr_decay must be > 0");
        }
        if self.decay_every == 0 {
            problems.push("decay_every must be >= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("trainer: {}", problems.join("; "))))
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig::forward(self.nt_train)
    }
}

/// Adam moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// In-place Adam update with bias correction.
    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, betas: (f64, f64), eps: f64) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        let (b1, b2) = betas;
        self.t += 1;
        let corr1 = 1.0 - b1.powi(self.t as i32);
        let corr2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / corr1;
            let v_hat = self.v[i] / corr2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One standard Adam update as a pure function: `(θ', state')`.
pub fn adam_step(
    theta: &ParamVector,
    grad: &[f64],
    state: &AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> (ParamVector, AdamState) {
    let mut theta2 = theta.clone();
    let mut state2 = state.clone();
    state2.apply(theta2.as_mut_slice(), grad, lr, betas, eps);
    (theta2, state2)
}

/// Outcome of a subproblem solve.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Minibatch loss at each optimizer step, length `n_iters`.
    pub curve: Vec<LossBreakdown>,
    /// Held-out validation loss every 100 steps (reporting only).
    pub val_curve: Vec<(usize, LossBreakdown)>,
    pub theta: ParamVector,
    pub wall_time_s: f64,
    pub config: TrainConfig,
}

impl TrainReport {
    /// JSON summary (the parameter vector itself ships as a binary blob).
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "wall_time_s": self.wall_time_s,
            "final_loss": self.curve.last(),
            "val_curve": self.val_curve,
            "steps": self.curve.len(),
        })
    }
}

/// Incremental subproblem solver; [`train_subproblem`] drives it to
/// completion, interactive frontends can advance it step by step.
pub struct SubproblemTrainer {
    cfg: TrainConfig,
    train_split: SampleMatrix,
    val_split: Option<SampleMatrix>,
    integ: IntegratorConfig,
    theta: ParamVector,
    adam: AdamState,
    batch_rng: ChaCha8Rng,
    val_rng: ChaCha8Rng,
    curve: Vec<LossBreakdown>,
    val_curve: Vec<(usize, LossBreakdown)>,
    started: Option<std::time::Instant>,
}

impl SubproblemTrainer {
    pub fn new(samples: &SampleMatrix, cfg: &TrainConfig) -> Result<Self> {
        let theta = init_params(&cfg.net, cfg.seed)?;
        Self::with_init(samples, cfg, theta)
    }

    /// Start from an explicit parameter vector (warm starts).
    pub fn with_init(samples: &SampleMatrix, cfg: &TrainConfig, theta: ParamVector) -> Result<Self> {
        cfg.validate()?;
        if samples.d() != cfg.net.d {
            return Err(Error::invalid("sample dimension does not match net"));
        }
        if samples.n() < 2 {
            return Err(Error::invalid("need at least 2 samples"));
        }
        if theta.config() != &cfg.net {
            return Err(Error::invalid("initial parameters do not match net config"));
        }
        // hold out 20% for reporting when there is enough data
        let (train_split, val_split) = if samples.n() >= 10 {
            let (t, v) = samples.split_two(0.8, cfg.seed, ("train", "val"));
            (t, Some(v))
        } else {
            (samples.clone(), None)
        };
        let p = theta.len();
        Ok(SubproblemTrainer {
            cfg: cfg.clone(),
            train_split,
            val_split,
            integ: cfg.integrator(),
            theta,
            adam: AdamState::new(p),
            batch_rng: stream(cfg.seed, tags::MINIBATCH),
            val_rng: stream(cfg.seed, tags::VALIDATION_BATCH),
            curve: Vec::with_capacity(cfg.n_iters),
            val_curve: Vec::new(),
            started: monotonic_now(),
        })
    }

    #[inline]
    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    #[inline]
    pub fn steps_done(&self) -> usize {
        self.curve.len()
    }

    #[inline]
    pub fn finished(&self) -> bool {
        self.curve.len() >= self.cfg.n_iters
    }

    pub fn curve(&self) -> &[LossBreakdown] {
        &self.curve
    }

    fn draw_batch(&mut self, from_val: bool) -> SampleMatrix {
        let (source, rng) = if from_val {
            (self.val_split.as_ref().unwrap(), &mut self.val_rng)
        } else {
            (&self.train_split, &mut self.batch_rng)
        };
        let idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| rng.gen_range(0..source.n()))
            .collect();
        source.select(&idx, if from_val { "val_batch" } else { "batch" })
    }

    /// One minibatch gradient step. On a non-finite loss the error carries the
    /// step index and `theta()` still exposes the last good parameters.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let step_idx = self.curve.len();
        if self.val_split.is_some() && step_idx % 100 == 0 {
            let vb = self.draw_batch(true);
            let vl = ot_loss(&self.theta, &vb, self.cfg.alpha, &self.integ, self.cfg.exec)?;
            self.val_curve.push((step_idx, vl));
        }
        let batch = self.draw_batch(false);
        let (loss, grad) = loss_gradient(&self.theta, &batch, self.cfg.alpha, &self.integ, self.cfg.exec)
            .map_err(|_| Error::TrainDiverged { step: step_idx })?;
        if !loss.total.is_finite() {
            return Err(Error::TrainDiverged { step: step_idx });
        }
        let lr = self.cfg.lr * self.cfg.lr_decay.powi((step_idx / self.cfg.decay_every) as i32);
        self.adam
            .apply(self.theta.as_mut_slice(), &grad, lr, self.cfg.betas, self.cfg.eps_adam);
        self.curve.push(loss);
        Ok(loss)
    }

    pub fn run(mut self) -> Result<TrainReport> {
        while !self.finished() {
            self.step()?;
        }
        Ok(self.into_report())
    }

    /// Wrap up whatever has been trained so far (the curve may be shorter
    /// than `n_iters` when stopped early).
    pub fn into_report(self) -> TrainReport {
        TrainReport {
            wall_time_s: seconds_since(&self.started),
            curve: self.curve,
            val_curve: self.val_curve,
            theta: self.theta,
            config: self.cfg,
        }
    }
}

/// Solve one subproblem: `n_iters` Adam steps on minibatches drawn with the
/// config seed. Fully deterministic for fixed inputs.
pub fn train_subproblem(samples: &SampleMatrix, cfg: &TrainConfig) -> Result<TrainReport> {
    SubproblemTrainer::new(samples, cfg)?.run()
}

/// As [`train_subproblem`] but starting from the given parameters.
pub fn train_subproblem_from(
    samples: &SampleMatrix,
    cfg: &TrainConfig,
    theta0: ParamVector,
) -> Result<TrainReport> {
    SubproblemTrainer::with_init(samples, cfg, theta0)?.run()
}
