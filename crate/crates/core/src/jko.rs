//! Proximal outer loop: repeatedly solve the fixed-α subproblem, push the
//! sample set forward through the freshly trained stage, and stack the stage
//! weights. Generation and density estimation compose the stack.
//!
//! Stage order is the normalizing direction (data toward the reference
//! Gaussian). Generation draws reference samples and applies stage inverses
//! in reverse order; log-density runs a point forward through every stage and
//! adds the accumulated log-determinants to the reference log-density.

use crate::datasets::{Provenance, SampleMatrix};
use crate::error::Error;
use crate::integrator::{
    flow_forward_batch, flow_inverse_batch, Direction, IntegratorConfig,
};
use crate::metrics::{mmd2_slice, mmd2_unbiased, Mmd2Result};
use crate::objective::{gaussian_logpdf, LossBreakdown};
use crate::params::{NetConfig, ParamVector};
use crate::rng::{stage_seed, tags};
use crate::trainer::{SubproblemTrainer, TrainConfig, TrainReport};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Outer-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig {
    /// Proximal step size; also the terminal-cost weight of every subproblem.
    pub alpha: f64,
    /// Number of stages K (K = 1 is the conventional single-shot run).
    pub stages: usize,
    pub train: TrainConfig,
    /// Integrator used for evaluation-quality pushforwards, generation and
    /// density estimation.
    #[serde(default = "default_integ_eval")]
    pub integ_eval: IntegratorConfig,
    /// Reuse the previous stage's weights as the next stage's init instead of
    /// a fresh random draw.
    #[serde(default)]
    pub warm_start: bool,
}

fn default_integ_eval() -> IntegratorConfig {
    IntegratorConfig::forward(64)
}

impl JkoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::invalid("jko: stages must be >= 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("jko: alpha must be > 0"));
        }
        self.integ_eval.validate()?;
        let mut t = self.train.clone();
        t.alpha = self.alpha;
        t.validate()
    }

    fn stage_train_config(&self, stage: usize) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.alpha = self.alpha;
        cfg.seed = stage_seed(self.train.seed, stage);
        cfg
    }
}

/// Per-stage record kept in the stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    /// Final minibatch loss of the subproblem.
    pub final_loss: LossBreakdown,
    /// Squared MMD of this stage's outward-facing samples against the metric
    /// reference (see [`run_jko`]).
    pub mmd2: Option<f64>,
    pub train_wall_time_s: f64,
}

/// The trained model: ordered stage weights θ₁…θ_K plus per-stage metrics.
#[derive(Debug, Clone)]
pub struct StageStack {
    pub net: NetConfig,
    pub stages: Vec<ParamVector>,
    pub metrics: Vec<StageMetrics>,
    /// Per-stage minibatch loss curves (not persisted in checkpoints).
    pub stage_curves: Vec<Vec<LossBreakdown>>,
    /// Per-stage held-out validation curves (step, loss).
    pub stage_val_curves: Vec<Vec<(usize, LossBreakdown)>>,
    pub config: JkoConfig,
    /// Set when a subproblem aborted; the stack holds the stages built so far.
    pub incomplete: Option<String>,
}

impl StageStack {
    pub fn k(&self) -> usize {
        self.stages.len()
    }
}

/// Push samples through one trained stage (z-components only; the
/// accumulators are discarded here).
pub fn push_forward_samples(
    theta: &ParamVector,
    x: &SampleMatrix,
    integ: &IntegratorConfig,
    exec: crate::ExecMode,
) -> Result<SampleMatrix> {
    let states = flow_forward_batch(theta, x, integ, exec)?;
    let d = x.d();
    let mut data = Vec::with_capacity(x.n() * d);
    for s in &states {
        data.extend_from_slice(&s.z);
    }
    let mut provenance = x.provenance.clone();
    provenance.split = Some("pushed".to_string());
    SampleMatrix::from_flat(x.n(), d, data, provenance)
}

/// Run the outer loop.
///
/// Per stage: solve the subproblem on the current sample set, then update the
/// set through the trained stage at training resolution (a parallel copy is
/// maintained at evaluation resolution for metrics). When `reference` is
/// given, the per-stage metric is the squared MMD between the
/// evaluation-resolution pushforward and the reference (convergence toward
/// the target). Otherwise a held-out 20% slice of the input is set aside and
/// the metric is the squared MMD between samples generated back through the
/// stages built so far and that slice.
pub fn run_jko(
    samples: &SampleMatrix,
    cfg: &JkoConfig,
    reference: Option<&SampleMatrix>,
) -> Result<StageStack> {
    cfg.validate()?;
    if samples.n() < 2 {
        return Err(Error::invalid("jko: need at least 2 samples"));
    }
    let exec = cfg.train.exec;
    let integ_train = cfg.train.integrator();

    let (mut current, held_out) = match reference {
        Some(_) => (samples.clone(), None),
        None => {
            if samples.n() >= 10 {
                let (train, held) = samples.split_two(0.8, cfg.train.seed, ("jko_train", "jko_held_out"));
                (train, Some(held))
            } else {
                (samples.clone(), None)
            }
        }
    };
    let mut eval_current = current.clone();

    let mut stack = StageStack {
        net: cfg.train.net,
        stages: Vec::with_capacity(cfg.stages),
        metrics: Vec::with_capacity(cfg.stages),
        stage_curves: Vec::with_capacity(cfg.stages),
        stage_val_curves: Vec::with_capacity(cfg.stages),
        config: cfg.clone(),
        incomplete: None,
    };

    for k in 1..=cfg.stages {
        let stage_cfg = cfg.stage_train_config(k);
        let trainer = if cfg.warm_start && !stack.stages.is_empty() {
            SubproblemTrainer::with_init(&current, &stage_cfg, stack.stages.last().unwrap().clone())
        } else {
            SubproblemTrainer::new(&current, &stage_cfg)
        };
        let report: TrainReport = match trainer.and_then(|t| t.run()) {
            Ok(r) => r,
            Err(e) => {
                stack.incomplete = Some(format!("stage {k}: {e}"));
                return Ok(stack);
            }
        };

        let final_loss = *report.curve.last().expect("curve is nonempty");
        current = push_forward_samples(&report.theta, &current, &integ_train, exec)?;
        eval_current = push_forward_samples(&report.theta, &eval_current, &cfg.integ_eval, exec)?;
        stack.stages.push(report.theta);
        stack.stage_curves.push(report.curve);
        stack.stage_val_curves.push(report.val_curve);

        let mmd2 = match (reference, &held_out) {
            (Some(r), _) => Some(mmd2_unbiased(&eval_current, r)?.value),
            (None, Some(held)) => {
                let gen = generate(&stack, held.n(), stream_seed_for_stage(cfg.train.seed, k))?;
                Some(mmd2_unbiased(&gen, held)?.value)
            }
            (None, None) => None,
        };
        stack.metrics.push(StageMetrics {
            stage: k,
            final_loss,
            mmd2,
            train_wall_time_s: report.wall_time_s,
        });
    }
    Ok(stack)
}

fn stream_seed_for_stage(seed: u64, stage: usize) -> u64 {
    crate::rng::derive(seed, tags::GENERATE + 1000 * stage as u64)
}

/// Draw reference-Gaussian samples and pull them back through the stage
/// inverses in reverse order.
pub fn generate(stack: &StageStack, n: usize, seed: u64) -> Result<SampleMatrix> {
    if stack.stages.is_empty() {
        return Err(Error::invalid("generate: empty stage stack"));
    }
    generate_partial(stack, stack.k(), n, seed)
}

/// Generate through the last `k_used` stages only (`k_used = 0` returns the
/// raw Gaussian draws). Used by the per-stage trajectory.
pub fn generate_partial(stack: &StageStack, k_used: usize, n: usize, seed: u64) -> Result<SampleMatrix> {
    if k_used > stack.k() {
        return Err(Error::invalid("generate_partial: not enough stages"));
    }
    let d = stack.net.d;
    let mut out = SampleMatrix::standard_normal(n, d, crate::rng::derive(seed, tags::GENERATE))?;
    let inv = IntegratorConfig {
        t_final: stack.config.integ_eval.t_final,
        nt: stack.config.integ_eval.nt,
        direction: Direction::Inverse,
    };
    let exec = stack.config.train.exec;
    for theta in stack.stages.iter().rev().take(k_used) {
        let rows = flow_inverse_batch(theta, &out, &inv, exec)?;
        let mut data = Vec::with_capacity(n * d);
        for r in &rows {
            data.extend_from_slice(r);
        }
        let mut provenance = Provenance::new("generated", seed);
        provenance.split = out.provenance.split.clone();
        out = SampleMatrix::from_flat(n, d, data, provenance)?;
    }
    let mut provenance = Provenance::new("generated", seed);
    provenance.split = Some(format!("stages_{k_used}"));
    out.provenance = provenance;
    Ok(out)
}

/// Run a point forward through every stage, accumulating log-determinants;
/// the model log-density is the reference log-density at the terminal point
/// plus the accumulated sum.
pub fn log_density(stack: &StageStack, x: &[f64], integ: &IntegratorConfig) -> Result<f64> {
    if stack.stages.is_empty() {
        return Err(Error::invalid("log_density: empty stage stack"));
    }
    let mut z = x.to_vec();
    let mut ell_total = 0.0;
    for theta in &stack.stages {
        let state = crate::integrator::flow_forward(theta, &z, integ)?;
        ell_total += state.ell;
        z = state.z;
    }
    Ok(gaussian_logpdf(&z) + ell_total)
}

/// Batch version of [`log_density`], row order preserved.
pub fn log_density_batch(
    stack: &StageStack,
    x: &SampleMatrix,
    integ: &IntegratorConfig,
    exec: crate::ExecMode,
) -> Result<Vec<f64>> {
    if stack.stages.is_empty() {
        return Err(Error::invalid("log_density: empty stage stack"));
    }
    let mut current = x.clone();
    let mut ell = vec![0.0; x.n()];
    for theta in &stack.stages {
        let states = flow_forward_batch(theta, &current, integ, exec)?;
        let d = current.d();
        let mut data = Vec::with_capacity(current.n() * d);
        for (i, s) in states.iter().enumerate() {
            ell[i] += s.ell;
            data.extend_from_slice(&s.z);
        }
        current = SampleMatrix::from_flat(current.n(), d, data, current.provenance.clone())?;
    }
    Ok(current
        .rows()
        .zip(&ell)
        .map(|(z, e)| gaussian_logpdf(z) + e)
        .collect())
}

/// One point of the per-stage generation-quality trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// How many trailing stages the generator used (0 = raw Gaussian draws).
    pub stages_used: usize,
    pub results: Vec<Mmd2Result>,
}

/// Squared MMD against `x_data` of samples generated through the last `k`
/// stage inverses, for k = 0..=K. With `dims` the estimate is taken on each
/// coordinate slice instead of the full space.
pub fn mmd_trajectory(
    stack: &StageStack,
    x_data: &SampleMatrix,
    dims: Option<&[(usize, usize)]>,
    seed: u64,
) -> Result<Vec<TrajectoryPoint>> {
    if stack.stages.is_empty() {
        return Err(Error::invalid("mmd_trajectory: empty stage stack"));
    }
    let mut out = Vec::with_capacity(stack.k() + 1);
    for k_used in 0..=stack.k() {
        let gen = generate_partial(stack, k_used, x_data.n(), seed)?;
        let results = match dims {
            Some(pairs) => mmd2_slice(x_data, &gen, pairs)?,
            None => vec![mmd2_unbiased(x_data, &gen)?],
        };
        out.push(TrajectoryPoint {
            stages_used: k_used,
            results,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoint format: a directory with manifest.json plus one parameter blob
// per stage.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    layout_version: u32,
    net: NetConfig,
    config: JkoConfig,
    stage_files: Vec<String>,
    metrics: Vec<StageMetrics>,
    incomplete: Option<String>,
}

/// Write a stage stack as a checkpoint directory.
pub fn save_checkpoint(stack: &StageStack, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut stage_files = Vec::with_capacity(stack.k());
    for (i, theta) in stack.stages.iter().enumerate() {
        let name = format!("stage_{:02}.bin", i + 1);
        std::fs::write(dir.join(&name), theta.to_bytes())?;
        stage_files.push(name);
    }
    let manifest = CheckpointManifest {
        layout_version: crate::params::LAYOUT_VERSION,
        net: stack.net,
        config: stack.config.clone(),
        stage_files,
        metrics: stack.metrics.clone(),
        incomplete: stack.incomplete.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Load a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<StageStack> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Serialization(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("bad manifest: {e}")))?;
    let mut stages = Vec::with_capacity(manifest.stage_files.len());
    for name in &manifest.stage_files {
        let bytes = std::fs::read(dir.join(name))
            .map_err(|e| Error::Serialization(format!("cannot read stage blob {name}: {e}")))?;
        let theta = ParamVector::from_bytes(&bytes)?;
        if theta.config() != &manifest.net {
            return Err(Error::Serialization(format!(
                "stage blob {name} does not match the manifest architecture"
            )));
        }
        stages.push(theta);
    }
    Ok(StageStack {
        net: manifest.net,
        stages,
        metrics: manifest.metrics,
        stage_curves: Vec::new(),
        stage_val_curves: Vec::new(),
        config: manifest.config,
        incomplete: manifest.incomplete,
    })
}
