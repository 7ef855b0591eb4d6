//! Browser demo for the proximal-step flow trainer.
//!
//! Exposes three interactive operations to the static page in `www/`:
//!
//! 1. draw a 2D benchmark dataset,
//! 2. advance multi-stage training a few optimizer steps at a time,
//! 3. generate samples / render a log-density heatmap through the stages
//!    trained so far.
//!
//! Build with `wasm-pack build --target web --out-dir www/pkg`.

use jkoflow::datasets::{sample, DatasetKind, DatasetSpec, SampleMatrix};
use jkoflow::integrator::IntegratorConfig;
use jkoflow::jko::{self, JkoConfig, StageStack};
use jkoflow::metrics::mmd2_unbiased;
use jkoflow::params::NetConfig;
use jkoflow::rng::stage_seed;
use jkoflow::trainer::{SubproblemTrainer, TrainConfig};
use jkoflow::ExecMode;
use wasm_bindgen::prelude::*;

fn err_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Interactive multi-stage training session on one dataset.
#[wasm_bindgen]
pub struct FlowDemo {
    data: SampleMatrix,
    current: SampleMatrix,
    cfg: JkoConfig,
    trainer: Option<SubproblemTrainer>,
    stack: StageStack,
    stage_mmd: Vec<f64>,
    eval_nt: usize,
}

#[wasm_bindgen]
impl FlowDemo {
    /// `dataset` is one of: checkerboard, two_spirals, swiss_roll,
    /// eight_gaussians, circles, pinwheel, moons.
    #[wasm_bindgen(constructor)]
    pub fn new(
        dataset: &str,
        n: u32,
        alpha: f64,
        stages: u32,
        width: u32,
        iters_per_stage: u32,
        seed: u32,
    ) -> Result<FlowDemo, JsValue> {
        let kind = DatasetKind::parse(dataset).map_err(err_js)?;
        if kind == DatasetKind::Tabular {
            return Err(JsValue::from_str("the demo runs on the synthetic 2D kinds"));
        }
        let data = sample(&DatasetSpec::synthetic(kind), n.max(64) as usize, seed as u64).map_err(err_js)?;
        let eval_nt = 32;
        let cfg = JkoConfig {
            alpha,
            stages: stages.max(1) as usize,
            train: TrainConfig {
                alpha,
                net: NetConfig::new(2, width.max(2) as usize),
                batch_size: 128,
                n_iters: iters_per_stage.max(1) as usize,
                lr: 0.05,
                decay_every: (iters_per_stage as usize / 3).max(1),
                nt_train: 8,
                seed: seed as u64,
                exec: ExecMode::Sequential,
                ..TrainConfig::default()
            },
            integ_eval: IntegratorConfig::forward(eval_nt),
            warm_start: false,
        };
        let mut stage_cfg = cfg.train.clone();
        stage_cfg.seed = stage_seed(cfg.train.seed, 1);
        let trainer = SubproblemTrainer::new(&data, &stage_cfg).map_err(err_js)?;
        let stack = StageStack {
            net: cfg.train.net,
            stages: Vec::new(),
            metrics: Vec::new(),
            stage_curves: Vec::new(),
            stage_val_curves: Vec::new(),
            config: cfg.clone(),
            incomplete: None,
        };
        Ok(FlowDemo {
            current: data.clone(),
            data,
            cfg,
            trainer: Some(trainer),
            stack,
            stage_mmd: Vec::new(),
            eval_nt,
        })
    }

    /// The dataset as interleaved x,y pairs.
    pub fn data_points(&self) -> Vec<f64> {
        self.data.as_flat().to_vec()
    }

    /// The training sample set pushed through the stages finished so far.
    pub fn pushed_points(&self) -> Vec<f64> {
        self.current.as_flat().to_vec()
    }

    /// Advance up to `n` optimizer steps. Returns
    /// `[stages_done, step_in_stage, kinetic, nll, total, finished]`.
    pub fn step(&mut self, n: u32) -> Result<Vec<f64>, JsValue> {
        let mut last = None;
        for _ in 0..n {
            let Some(trainer) = self.trainer.as_mut() else { break };
            last = Some(trainer.step().map_err(err_js)?);
            if trainer.finished() {
                self.finish_stage()?;
            }
        }
        let (kin, nll, total) = match (last, self.trainer.as_ref()) {
            (Some(l), _) => (l.kinetic, l.nll, l.total),
            (None, Some(t)) => t
                .curve()
                .last()
                .map(|l| (l.kinetic, l.nll, l.total))
                .unwrap_or((0.0, 0.0, 0.0)),
            (None, None) => (0.0, 0.0, 0.0),
        };
        Ok(vec![
            self.stack.stages.len() as f64,
            self.trainer.as_ref().map(|t| t.steps_done()).unwrap_or(0) as f64,
            kin,
            nll,
            total,
            if self.trainer.is_none() { 1.0 } else { 0.0 },
        ])
    }

    fn finish_stage(&mut self) -> Result<(), JsValue> {
        let trainer = self.trainer.take().expect("stage in progress");
        let report = trainer.into_report();
        self.current = jko::push_forward_samples(
            &report.theta,
            &self.current,
            &IntegratorConfig::forward(self.eval_nt),
            ExecMode::Sequential,
        )
        .map_err(err_js)?;
        self.stack.stages.push(report.theta);
        self.stack.stage_curves.push(report.curve);
        // generation quality so far, against the training data
        if let Ok(gen) = jko::generate(&self.stack, self.data.n().min(1024), 1234) {
            if let Ok(r) = mmd2_unbiased(&gen, &self.data) {
                self.stage_mmd.push(r.value);
            }
        }
        let next_stage = self.stack.stages.len() + 1;
        if next_stage <= self.cfg.stages {
            let mut stage_cfg = self.cfg.train.clone();
            stage_cfg.seed = stage_seed(self.cfg.train.seed, next_stage);
            self.trainer = Some(SubproblemTrainer::new(&self.current, &stage_cfg).map_err(err_js)?);
        }
        Ok(())
    }

    pub fn stages_done(&self) -> u32 {
        self.stack.stages.len() as u32
    }

    pub fn total_stages(&self) -> u32 {
        self.cfg.stages as u32
    }

    pub fn iters_per_stage(&self) -> u32 {
        self.cfg.train.n_iters as u32
    }

    /// Squared MMD between generated samples and the data, one entry per
    /// finished stage.
    pub fn stage_mmd(&self) -> Vec<f64> {
        self.stage_mmd.clone()
    }

    /// Generate samples back through the stages trained so far (raw Gaussian
    /// draws before any stage finishes).
    pub fn generate(&self, n: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
        let n = n.max(2) as usize;
        if self.stack.stages.is_empty() {
            let draws = SampleMatrix::standard_normal(n, 2, seed as u64).map_err(err_js)?;
            return Ok(draws.as_flat().to_vec());
        }
        let gen = jko::generate(&self.stack, n, seed as u64).map_err(err_js)?;
        Ok(gen.as_flat().to_vec())
    }

    /// Row-major log-density grid over [−extent, extent]², `resolution²`
    /// entries, first row at the bottom.
    pub fn density_grid(&self, resolution: u32, extent: f64) -> Result<Vec<f64>, JsValue> {
        let res = resolution.max(2) as usize;
        let step = 2.0 * extent / (res - 1) as f64;
        let mut pts = Vec::with_capacity(res * res * 2);
        for iy in 0..res {
            for ix in 0..res {
                pts.push(-extent + ix as f64 * step);
                pts.push(-extent + iy as f64 * step);
            }
        }
        if self.stack.stages.is_empty() {
            return Ok(pts
                .chunks_exact(2)
                .map(jkoflow::objective::gaussian_logpdf)
                .collect());
        }
        let grid = SampleMatrix::from_flat(
            res * res,
            2,
            pts,
            jkoflow::datasets::Provenance::new("demo_grid", 0),
        )
        .map_err(err_js)?;
        jko::log_density_batch(
            &self.stack,
            &grid,
            &IntegratorConfig::forward(self.eval_nt),
            ExecMode::Sequential,
        )
        .map_err(err_js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_session_runs_to_completion() {
        let mut demo = FlowDemo::new("moons", 256, 1.0, 2, 3, 8, 5).unwrap();
        assert_eq!(demo.data_points().len(), 512);
        let mut guard = 0;
        loop {
            let p = demo.step(6).unwrap();
            if p[5] == 1.0 {
                break;
            }
            guard += 1;
            assert!(guard < 100, "demo never finished");
        }
        assert_eq!(demo.stages_done(), 2);
        assert_eq!(demo.stage_mmd().len(), 2);
        let gen = demo.generate(64, 1).unwrap();
        assert_eq!(gen.len(), 128);
        assert!(gen.iter().all(|v| v.is_finite()));
        let grid = demo.density_grid(8, 4.0).unwrap();
        assert_eq!(grid.len(), 64);
        assert!(grid.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn density_before_training_is_the_reference() {
        let demo = FlowDemo::new("circles", 128, 1.0, 1, 3, 4, 9).unwrap();
        let grid = demo.density_grid(3, 1.0).unwrap();
        // center cell of a 3×3 grid over [−1,1]² is the origin
        let expect = jkoflow::objective::gaussian_logpdf(&[0.0, 0.0]);
        assert!((grid[4] - expect).abs() < 1e-12);
    }
}
