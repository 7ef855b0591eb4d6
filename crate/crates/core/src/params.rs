//! Parameter storage for the potential network.
//!
//! All weights of one stage live in a single flat `Vec<f64>` with a fixed,
//! documented layout so packing round-trips bit-exactly and checkpoints are a
//! header plus one contiguous little-endian float64 blob.
//!
//! Layout (`layout_version = 1`), with `D = d + 1` (space + time):
//!
//! | block       | shape      | meaning                                  |
//! |-------------|------------|------------------------------------------|
//! | `K0`        | `m × D`    | opening layer weights (row-major)        |
//! | `b0`        | `m`        | opening layer bias                       |
//! | per block i | `m × m`, `m` | residual weights `K1_i`, bias `b1_i`   |
//! | `w`         | `m`        | readout                                  |
//! | `A`         | `D × D`    | quadratic factor (applied as `AᵀA`)      |
//! | `b`         | `D`        | linear term                              |
//! | `c`         | `1`        | constant                                 |

use crate::error::Error;
use crate::rng::{stream, tags};
use crate::Result;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const LAYOUT_VERSION: u32 = 1;

/// Architecture of the potential network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Spatial dimension.
    pub d: usize,
    /// Hidden width.
    pub m: usize,
    /// Number of residual blocks.
    #[serde(default = "default_resblocks")]
    pub n_resblocks: usize,
    /// Step inside the residual update `u ← u + h·σ(K1 u + b1)`.
    #[serde(default = "default_resnet_step")]
    pub resnet_step: f64,
}

fn default_resblocks() -> usize {
    1
}
fn default_resnet_step() -> f64 {
    1.0
}

impl NetConfig {
    pub fn new(d: usize, m: usize) -> Self {
        NetConfig {
            d,
            m,
            n_resblocks: 1,
            resnet_step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::invalid("net: d must be >= 1"));
        }
        if self.m < 1 {
            return Err(Error::invalid("net: m must be >= 1"));
        }
        if self.n_resblocks < 1 {
            return Err(Error::invalid("net: n_resblocks must be >= 1"));
        }
        if !self.resnet_step.is_finite() {
            return Err(Error::invalid("net: resnet_step must be finite"));
        }
        Ok(())
    }

    /// `d + 1`: the network sees space-time inputs `s = [z; t]`.
    #[inline]
    pub fn in_dim(&self) -> usize {
        self.d + 1
    }
}

/// Exact number of scalars in a [`ParamVector`] for this architecture.
///
/// For `d = 2` with one residual block this reduces to `m² + 6m + 13`.
pub fn param_count(cfg: &NetConfig) -> usize {
    let (d1, m, nb) = (cfg.in_dim(), cfg.m, cfg.n_resblocks);
    m * d1 + m + nb * (m * m + m) + m + d1 * d1 + d1 + 1
}

/// Index ranges of each block inside the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub d1: usize,
    pub m: usize,
    pub n_resblocks: usize,
    pub k0: std::ops::Range<usize>,
    pub b0: std::ops::Range<usize>,
    /// `(k1, b1)` ranges per residual block.
    pub blocks: Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>,
    pub w: std::ops::Range<usize>,
    pub a: std::ops::Range<usize>,
    pub b: std::ops::Range<usize>,
    pub c: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Self {
        let (d1, m) = (cfg.in_dim(), cfg.m);
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let k0 = take(m * d1);
        let b0 = take(m);
        let blocks = (0..cfg.n_resblocks)
            .map(|_| (take(m * m), take(m)))
            .collect();
        let w = take(m);
        let a = take(d1 * d1);
        let b = take(d1);
        let c = take(1).start;
        Layout {
            d1,
            m,
            n_resblocks: cfg.n_resblocks,
            k0,
            b0,
            blocks,
            w,
            a,
            b,
            c,
            len: off,
        }
    }
}

/// Flat parameter vector θ for one stage, carrying its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    cfg: NetConfig,
    data: Vec<f64>,
}

impl ParamVector {
    /// Wrap an existing flat vector; length must match the architecture.
    pub fn from_vec(cfg: NetConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let want = param_count(&cfg);
        if data.len() != want {
            return Err(Error::invalid(format!(
                "parameter vector length {} does not match architecture ({} expected)",
                data.len(),
                want
            )));
        }
        Ok(ParamVector { cfg, data })
    }

    pub fn zeros(cfg: NetConfig) -> Self {
        let n = param_count(&cfg);
        ParamVector {
            cfg,
            data: vec![0.0; n],
        }
    }

    #[inline]
    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.cfg)
    }

    /// Serialize as a one-line JSON header followed by the raw little-endian
    /// float64 array.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "d": self.cfg.d,
            "m": self.cfg.m,
            "n_resblocks": self.cfg.n_resblocks,
            "resnet_step": self.cfg.resnet_step,
            "layout_version": LAYOUT_VERSION,
        });
        let mut out = serde_json::to_string(&header).expect("header is valid json").into_bytes();
        out.push(b'\n');
        out.reserve(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Serialization("missing header line".into()))?;
        let header: serde_json::Value = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Serialization(format!("bad header: {e}")))?;
        let version = header["layout_version"].as_u64().unwrap_or(0);
        if version != LAYOUT_VERSION as u64 {
            return Err(Error::Serialization(format!(
                "unsupported layout_version {version}"
            )));
        }
        let cfg = NetConfig {
            d: header["d"].as_u64().ok_or_else(|| Error::Serialization("header missing d".into()))? as usize,
            m: header["m"].as_u64().ok_or_else(|| Error::Serialization("header missing m".into()))? as usize,
            n_resblocks: header["n_resblocks"].as_u64().unwrap_or(1) as usize,
            resnet_step: header["resnet_step"].as_f64().unwrap_or(1.0),
        };
        let body = &bytes[nl + 1..];
        if body.len() % 8 != 0 {
            return Err(Error::Serialization("truncated float64 payload".into()));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ParamVector::from_vec(cfg, data).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Random initialization: `K0`, `K1` entries iid normal with std `1/√m`;
/// biases, readout and constant zero; `A = 0.1·I` so the initial velocity is
/// small and the initial flow is near the identity.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ParamVector> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut theta = ParamVector::zeros(*cfg);
    let mut rng = stream(seed, tags::INIT);
    let std = 1.0 / (cfg.m as f64).sqrt();
    {
        let data = theta.as_mut_slice();
        for i in layout.k0.clone() {
            let g: f64 = rng.sample(StandardNormal);
            data[i] = std * g;
        }
        for (k1, _b1) in &layout.blocks {
            for i in k1.clone() {
                let g: f64 = rng.sample(StandardNormal);
                data[i] = std * g;
            }
        }
        let d1 = layout.d1;
        for r in 0..d1 {
            data[layout.a.start + r * d1 + r] = 0.1;
        }
    }
    Ok(theta)
}
