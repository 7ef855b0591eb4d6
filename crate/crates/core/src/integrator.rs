//! Fixed-step RK4 integration of the augmented flow ODE.
//!
//! The per-sample state is `(z, ℓ, kin)`: position, accumulated
//! log-determinant, accumulated kinetic cost. Its time derivative is
//! `(v, ∇z·v, ½‖v‖²)` with `v = −∇zΦ`, all evaluated exactly through
//! [`crate::potential`]. Forward integration normalizes data toward the
//! reference Gaussian; inverse integration runs the same field from `t = T`
//! back to `0` and is used for generation.

use crate::datasets::SampleMatrix;
use crate::error::Error;
use crate::params::ParamVector;
use crate::par::map_indexed;
use crate::potential::PotentialWorkspace;
use crate::{ExecMode, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Time horizon and step count for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Final time T.
    pub t_final: f64,
    /// Number of RK4 steps.
    pub nt: usize,
    pub direction: Direction,
}

impl IntegratorConfig {
    pub fn forward(nt: usize) -> Self {
        IntegratorConfig {
            t_final: 1.0,
            nt,
            direction: Direction::Forward,
        }
    }

    pub fn inverse(nt: usize) -> Self {
        IntegratorConfig {
            t_final: 1.0,
            nt,
            direction: Direction::Inverse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(Error::invalid("integrator: T must be > 0"));
        }
        if self.nt < 1 {
            return Err(Error::invalid("integrator: nt must be >= 1"));
        }
        Ok(())
    }
}

/// Augmented per-sample state.
///
/// At `t = 0` both accumulators are zero; `kin` is nondecreasing along the
/// forward flow up to quadrature signs within a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub z: Vec<f64>,
    pub ell: f64,
    pub kin: f64,
}

impl AugmentedState {
    pub fn initial(x: &[f64]) -> Self {
        AugmentedState {
            z: x.to_vec(),
            ell: 0.0,
            kin: 0.0,
        }
    }
}

/// Reusable buffers for the stepping loop.
pub struct Stepper {
    ws: PotentialWorkspace,
    d: usize,
    k: [Vec<f64>; 4],
    ytmp: Vec<f64>,
}

impl Stepper {
    pub fn new(theta: &ParamVector) -> Self {
        let d = theta.config().d;
        let n = d + 2;
        Stepper {
            ws: PotentialWorkspace::new(theta.config()),
            d,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            ytmp: vec![0.0; n],
        }
    }

    /// Time derivative of the augmented state: `(v, ∇z·v, ½‖v‖²)`.
    /// Only the z-part of `y` matters; ℓ and kin never feed back.
    fn rhs(&mut self, theta: &ParamVector, y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.d;
        self.ws.forward(theta, &y[..d], t)?;
        let grad = self.ws.grad_s();
        let mut speed2 = 0.0;
        for j in 0..d {
            let v = -grad[j];
            out[j] = v;
            speed2 += v * v;
        }
        out[d] = -self.ws.lap_z();
        out[d + 1] = 0.5 * speed2;
        Ok(())
    }

    /// One classic RK4 step from `t` with signed step `h`, in place.
    fn rk4_step(&mut self, theta: &ParamVector, y: &mut [f64], t: f64, h: f64) -> Result<()> {
        let n = y.len();
        let mut k = std::mem::take(&mut self.k);
        let mut ytmp = std::mem::take(&mut self.ytmp);
        let r = (|| -> Result<()> {
            self.rhs(theta, y, t, &mut k[0])?;
            for i in 0..n {
                ytmp[i] = y[i] + 0.5 * h * k[0][i];
            }
            self.rhs(theta, &ytmp, t + 0.5 * h, &mut k[1])?;
            for i in 0..n {
                ytmp[i] = y[i] + 0.5 * h * k[1][i];
            }
            self.rhs(theta, &ytmp, t + 0.5 * h, &mut k[2])?;
            for i in 0..n {
                ytmp[i] = y[i] + h * k[2][i];
            }
            self.rhs(theta, &ytmp, t + h, &mut k[3])?;
            for i in 0..n {
                y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            Ok(())
        })();
        self.k = k;
        self.ytmp = ytmp;
        r
    }
}

fn pack(state: &AugmentedState) -> Vec<f64> {
    let mut y = state.z.clone();
    y.push(state.ell);
    y.push(state.kin);
    y
}

fn unpack(y: &[f64], d: usize) -> AugmentedState {
    AugmentedState {
        z: y[..d].to_vec(),
        ell: y[d],
        kin: y[d + 1],
    }
}

/// Integrate one sample forward from `t = 0` to `t = T`.
pub fn flow_forward(theta: &ParamVector, x: &[f64], cfg: &IntegratorConfig) -> Result<AugmentedState> {
    cfg.validate()?;
    if cfg.direction != Direction::Forward {
        return Err(Error::invalid("flow_forward requires direction = forward"));
    }
    let mut stepper = Stepper::new(theta);
    flow_forward_with(&mut stepper, theta, x, cfg)
}

pub(crate) fn flow_forward_with(
    stepper: &mut Stepper,
    theta: &ParamVector,
    x: &[f64],
    cfg: &IntegratorConfig,
) -> Result<AugmentedState> {
    let d = theta.config().d;
    let h = cfg.t_final / cfg.nt as f64;
    let mut y = pack(&AugmentedState::initial(x));
    for step in 0..cfg.nt {
        let t = step as f64 * h;
        stepper
            .rk4_step(theta, &mut y, t, h)
            .map_err(|_| Error::IntegrationOverflow { step })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationOverflow { step });
        }
    }
    Ok(unpack(&y, d))
}

/// Integrate one sample backward from `t = T` to `t = 0` through the same
/// velocity field; approximate inverse of [`flow_forward`].
pub fn flow_inverse(theta: &ParamVector, y_end: &[f64], cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.direction != Direction::Inverse {
        return Err(Error::invalid("flow_inverse requires direction = inverse"));
    }
    let mut stepper = Stepper::new(theta);
    flow_inverse_with(&mut stepper, theta, y_end, cfg)
}

pub(crate) fn flow_inverse_with(
    stepper: &mut Stepper,
    theta: &ParamVector,
    y_end: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let d = theta.config().d;
    let h = cfg.t_final / cfg.nt as f64;
    let mut y = pack(&AugmentedState::initial(y_end));
    for step in 0..cfg.nt {
        let t = cfg.t_final - step as f64 * h;
        stepper
            .rk4_step(theta, &mut y, t, -h)
            .map_err(|_| Error::IntegrationOverflow { step })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationOverflow { step });
        }
    }
    Ok(y[..d].to_vec())
}

/// Row-wise forward integration of a sample batch. Results are indexed by
/// row, so the output is independent of the parallel schedule; failures are
/// reported with the smallest failing row index.
pub fn flow_forward_batch(
    theta: &ParamVector,
    x: &SampleMatrix,
    cfg: &IntegratorConfig,
    exec: ExecMode,
) -> Result<Vec<AugmentedState>> {
    cfg.validate()?;
    if x.d() != theta.config().d {
        return Err(Error::invalid(format!(
            "sample dimension {} does not match flow dimension {}",
            x.d(),
            theta.config().d
        )));
    }
    let results = map_indexed(x.n(), exec, || Stepper::new(theta), |stepper, i| {
        flow_forward_with(stepper, theta, x.row(i), cfg)
    });
    let mut out = Vec::with_capacity(x.n());
    for (row, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| e.at_row(row))?);
    }
    Ok(out)
}

/// Row-wise inverse integration.
pub fn flow_inverse_batch(
    theta: &ParamVector,
    y: &SampleMatrix,
    cfg: &IntegratorConfig,
    exec: ExecMode,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if y.d() != theta.config().d {
        return Err(Error::invalid(format!(
            "sample dimension {} does not match flow dimension {}",
            y.d(),
            theta.config().d
        )));
    }
    let results = map_indexed(y.n(), exec, || Stepper::new(theta), |stepper, i| {
        flow_inverse_with(stepper, theta, y.row(i), cfg)
    });
    let mut out = Vec::with_capacity(y.n());
    for (row, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| e.at_row(row))?);
    }
    Ok(out)
}

/// One recorded RK4 step: the state at step start and the first three stage
/// derivatives (enough to reconstruct every stage input in the reverse pass).
pub(crate) struct TapeStep {
    pub y: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
    pub t: f64,
}

pub(crate) struct FlowTape {
    pub steps: Vec<TapeStep>,
    pub h: f64,
}

/// Forward integration that records the per-step tape used by the exact
/// reverse sweep in [`crate::objective`].
pub(crate) fn flow_forward_taped(
    stepper: &mut Stepper,
    theta: &ParamVector,
    x: &[f64],
    cfg: &IntegratorConfig,
) -> Result<(AugmentedState, FlowTape)> {
    let d = theta.config().d;
    let h = cfg.t_final / cfg.nt as f64;
    let mut y = pack(&AugmentedState::initial(x));
    let mut steps = Vec::with_capacity(cfg.nt);
    for step in 0..cfg.nt {
        let t = step as f64 * h;
        let y0 = y.clone();
        stepper
            .rk4_step(theta, &mut y, t, h)
            .map_err(|_| Error::IntegrationOverflow { step })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationOverflow { step });
        }
        steps.push(TapeStep {
            y: y0,
            k1: stepper.k[0].clone(),
            k2: stepper.k[1].clone(),
            k3: stepper.k[2].clone(),
            t,
        });
    }
    Ok((unpack(&y, d), FlowTape { steps, h }))
}
