//! Potential network Φ(z, t) and its exact derivatives.
//!
//! The network maps space-time `s = [z; t]` to a scalar
//!
//! ```text
//! Φ(s) = wᵀ N(s) + ½ sᵀ(AᵀA)s + bᵀs + c
//! ```
//!
//! where `N` is a residual net: `u₀ = σ(K0 s + b0)`,
//! `uᵢ = uᵢ₋₁ + h·σ(K1ᵢ uᵢ₋₁ + b1ᵢ)`. The activation is
//! `σ(x) = log(2 cosh x)`, chosen so that `σ' = tanh` and all derivatives
//! below stay analytic.
//!
//! The flow velocity is `v = −∇zΦ`, and the divergence needed for the
//! log-determinant is `∇z·v = −tr(∇z²Φ)`. Both the space-time gradient and
//! the z-Laplacian are computed in closed form, not by finite differences or
//! stochastic trace estimation. A hand-written reverse sweep provides exact
//! vector-Jacobian products of `(Φ, ∇ₛΦ, ΔzΦ)` with respect to the
//! parameters and the input, which is what discretize-then-optimize training
//! consumes.

use crate::error::Error;
use crate::params::{Layout, NetConfig, ParamVector};
use crate::Result;

/// One evaluation of the potential: value, space-time gradient, z-Laplacian.
#[derive(Debug, Clone)]
pub struct PotentialEval {
    pub phi: f64,
    /// ∇ₛΦ, length `d + 1` (spatial components first, then time).
    pub grad_s: Vec<f64>,
    /// Trace of the z-block of the Hessian ∇ₛ²Φ.
    pub lap_z: f64,
}

/// σ(x) = log(2·cosh x), evaluated stably as |x| + log1p(exp(−2|x|)).
#[inline]
pub fn activation(x: f64) -> f64 {
    x.abs() + (-2.0 * x.abs()).exp().ln_1p()
}

/// σ'(x) = tanh x.
#[inline]
pub fn activation_deriv(x: f64) -> f64 {
    x.tanh()
}

/// y = M·x for a row-major `rows × cols` matrix.
#[inline]
fn matvec(mat: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &mat[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        out[r] = acc;
    }
}

/// out += Mᵀ·x for a row-major `rows × cols` matrix (x has length `rows`).
#[inline]
fn matvec_t_add(mat: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        let row = &mat[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * xr;
        }
    }
}

/// All intermediates of one forward evaluation, reusable across calls to
/// avoid per-sample allocation in the integration hot loop.
pub struct PotentialWorkspace {
    cfg: NetConfig,
    /// s = [z; t]
    s: Vec<f64>,
    a0: Vec<f64>,
    sp0: Vec<f64>,
    spp0: Vec<f64>,
    /// u[i] for i = 0..=nb
    u: Vec<Vec<f64>>,
    /// a, σ'(a), σ''(a) for blocks 1..=nb (index i-1)
    a: Vec<Vec<f64>>,
    sp: Vec<Vec<f64>>,
    spp: Vec<Vec<f64>>,
    /// backward potentials p[i] for i = 0..=nb (p[nb] = w)
    p: Vec<Vec<f64>>,
    /// q[i] = σ'(aᵢ) ⊙ p[i] for blocks (index i-1)
    q: Vec<Vec<f64>>,
    h0: Vec<f64>,
    a_s: Vec<f64>,
    /// ∇ₛΦ
    grad: Vec<f64>,
    /// r0[k] = ‖K0[k, 0..d]‖²
    r0: Vec<f64>,
    /// J(i) = ∂uᵢ/∂z, m×d row-major, stored for i = 0..nb-1
    jmat: Vec<Vec<f64>>,
    /// B(i) = K1ᵢ·J(i-1), m×d row-major, for blocks 1..=nb (index i-1)
    bmat: Vec<Vec<f64>>,
    phi: f64,
    lap: f64,
}

impl PotentialWorkspace {
    pub fn new(cfg: &NetConfig) -> Self {
        let (d, d1, m, nb) = (cfg.d, cfg.in_dim(), cfg.m, cfg.n_resblocks);
        PotentialWorkspace {
            cfg: *cfg,
            s: vec![0.0; d1],
            a0: vec![0.0; m],
            sp0: vec![0.0; m],
            spp0: vec![0.0; m],
            u: (0..=nb).map(|_| vec![0.0; m]).collect(),
            a: (0..nb).map(|_| vec![0.0; m]).collect(),
            sp: (0..nb).map(|_| vec![0.0; m]).collect(),
            spp: (0..nb).map(|_| vec![0.0; m]).collect(),
            p: (0..=nb).map(|_| vec![0.0; m]).collect(),
            q: (0..nb).map(|_| vec![0.0; m]).collect(),
            h0: vec![0.0; m],
            a_s: vec![0.0; d1],
            grad: vec![0.0; d1],
            r0: vec![0.0; m],
            jmat: (0..nb).map(|_| vec![0.0; m * d]).collect(),
            bmat: (0..nb).map(|_| vec![0.0; m * d]).collect(),
            phi: 0.0,
            lap: 0.0,
        }
    }

    /// Run the forward pass: value, gradient and z-Laplacian.
    pub fn forward(&mut self, theta: &ParamVector, z: &[f64], t: f64) -> Result<()> {
        let cfg = theta.config();
        debug_assert_eq!(self.cfg, *cfg, "workspace built for a different architecture");
        let (d, d1, m, nb) = (cfg.d, cfg.in_dim(), cfg.m, cfg.n_resblocks);
        assert_eq!(z.len(), d, "input dimension mismatch");
        let h = cfg.resnet_step;
        let layout = theta.layout();
        let th = theta.as_slice();
        let k0 = &th[layout.k0.clone()];
        let b0 = &th[layout.b0.clone()];
        let w = &th[layout.w.clone()];
        let amat = &th[layout.a.clone()];
        let bvec = &th[layout.b.clone()];
        let c = th[layout.c];

        self.s[..d].copy_from_slice(z);
        self.s[d] = t;

        // opening layer
        matvec(k0, m, d1, &self.s, &mut self.a0);
        for k in 0..m {
            self.a0[k] += b0[k];
            let sp = activation_deriv(self.a0[k]);
            self.sp0[k] = sp;
            self.spp0[k] = 1.0 - sp * sp;
            self.u[0][k] = activation(self.a0[k]);
        }

        // residual blocks
        for i in 1..=nb {
            let (k1r, b1r) = &layout.blocks[i - 1];
            let k1 = &th[k1r.clone()];
            let b1 = &th[b1r.clone()];
            let (prev, rest) = self.u.split_at_mut(i);
            let u_prev = &prev[i - 1];
            let u_i = &mut rest[0];
            matvec(k1, m, m, u_prev, &mut self.a[i - 1]);
            for k in 0..m {
                self.a[i - 1][k] += b1[k];
                let x = self.a[i - 1][k];
                let sp = activation_deriv(x);
                self.sp[i - 1][k] = sp;
                self.spp[i - 1][k] = 1.0 - sp * sp;
                u_i[k] = u_prev[k] + h * activation(x);
            }
        }

        // value
        matvec(amat, d1, d1, &self.s, &mut self.a_s);
        let mut phi = c;
        for k in 0..m {
            phi += w[k] * self.u[nb][k];
        }
        for j in 0..d1 {
            phi += 0.5 * self.a_s[j] * self.a_s[j] + bvec[j] * self.s[j];
        }
        self.phi = phi;

        // gradient: backward potentials p[i], then ∇ₛΦ = K0ᵀ(σ₀'⊙p₀) + AᵀAs + b
        self.p[nb].copy_from_slice(w);
        for i in (1..=nb).rev() {
            let (k1r, _) = &layout.blocks[i - 1];
            let k1 = &th[k1r.clone()];
            for k in 0..m {
                self.q[i - 1][k] = self.sp[i - 1][k] * self.p[i][k];
            }
            let (lo, hi) = self.p.split_at_mut(i);
            lo[i - 1].copy_from_slice(&hi[0]);
            matvec_t_add_scaled(k1, m, m, &self.q[i - 1], h, &mut lo[i - 1]);
        }
        for k in 0..m {
            self.h0[k] = self.sp0[k] * self.p[0][k];
        }
        for j in 0..d1 {
            self.grad[j] = bvec[j];
        }
        matvec_t_add(k0, m, d1, &self.h0, &mut self.grad);
        matvec_t_add(amat, d1, d1, &self.a_s, &mut self.grad);

        // z-Laplacian: quadratic trace + per-layer curvature terms
        let mut lap = 0.0;
        for j in 0..d {
            for r in 0..d1 {
                let x = amat[r * d1 + j];
                lap += x * x;
            }
        }
        for k in 0..m {
            let mut rs = 0.0;
            for j in 0..d {
                let x = k0[k * d1 + j];
                rs += x * x;
            }
            self.r0[k] = rs;
            lap += self.spp0[k] * self.p[0][k] * rs;
        }
        // J(0) = diag(σ₀')·K0[:, 0..d]
        if nb >= 1 {
            for k in 0..m {
                for j in 0..d {
                    self.jmat[0][k * d + j] = self.sp0[k] * k0[k * d1 + j];
                }
            }
        }
        for i in 1..=nb {
            let (k1r, _) = &layout.blocks[i - 1];
            let k1 = &th[k1r.clone()];
            // B(i) = K1ᵢ·J(i-1)
            let (jprev, jrest) = self.jmat.split_at_mut(i);
            let jin = &jprev[i - 1];
            let b_i = &mut self.bmat[i - 1];
            for k in 0..m {
                for j in 0..d {
                    let mut acc = 0.0;
                    for l in 0..m {
                        acc += k1[k * m + l] * jin[l * d + j];
                    }
                    b_i[k * d + j] = acc;
                }
            }
            let mut term = 0.0;
            for k in 0..m {
                let mut rs = 0.0;
                for j in 0..d {
                    let x = b_i[k * d + j];
                    rs += x * x;
                }
                term += self.spp[i - 1][k] * self.p[i][k] * rs;
            }
            lap += h * term;
            // J(i) = J(i-1) + h·diag(σᵢ')·B(i), needed by the next block
            if i < nb {
                let jout = &mut jrest[0];
                for k in 0..m {
                    for j in 0..d {
                        jout[k * d + j] = jin[k * d + j] + h * self.sp[i - 1][k] * b_i[k * d + j];
                    }
                }
            }
        }
        self.lap = lap;

        if !self.phi.is_finite() || !self.lap.is_finite() || self.grad.iter().any(|g| !g.is_finite())
        {
            return Err(Error::NonFinite {
                context: "potential evaluation",
            });
        }
        Ok(())
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.phi
    }

    #[inline]
    pub fn grad_s(&self) -> &[f64] {
        &self.grad
    }

    #[inline]
    pub fn lap_z(&self) -> f64 {
        self.lap
    }

    /// Velocity of the flow at the evaluated point: v = −∇zΦ.
    pub fn write_velocity(&self, out: &mut [f64]) {
        let d = self.cfg.d;
        for j in 0..d {
            out[j] = -self.grad[j];
        }
    }

    /// ∇z·v = −ΔzΦ.
    #[inline]
    pub fn divergence(&self) -> f64 {
        -self.lap
    }

    pub fn eval(&self) -> PotentialEval {
        PotentialEval {
            phi: self.phi,
            grad_s: self.grad.clone(),
            lap_z: self.lap,
        }
    }
}

/// out += h·Mᵀ·x
#[inline]
fn matvec_t_add_scaled(mat: &[f64], rows: usize, cols: usize, x: &[f64], scale: f64, out: &mut [f64]) {
    for r in 0..rows {
        let xr = scale * x[r];
        if xr == 0.0 {
            continue;
        }
        let row = &mat[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * xr;
        }
    }
}

/// Adjoint buffers for the reverse sweep, reusable across calls.
pub struct VjpScratch {
    ubar: Vec<Vec<f64>>,
    pbar: Vec<Vec<f64>>,
    sp_adj: Vec<Vec<f64>>,
    spp_adj: Vec<Vec<f64>>,
    sp0_adj: Vec<f64>,
    spp0_adj: Vec<f64>,
    h0bar: Vec<f64>,
    asbar: Vec<f64>,
    jbar: Vec<f64>,
    bbar: Vec<f64>,
    abar: Vec<f64>,
    qbar: Vec<f64>,
}

impl VjpScratch {
    pub fn new(cfg: &NetConfig) -> Self {
        let (d, d1, m, nb) = (cfg.d, cfg.in_dim(), cfg.m, cfg.n_resblocks);
        VjpScratch {
            ubar: (0..=nb).map(|_| vec![0.0; m]).collect(),
            pbar: (0..=nb).map(|_| vec![0.0; m]).collect(),
            sp_adj: (0..nb).map(|_| vec![0.0; m]).collect(),
            spp_adj: (0..nb).map(|_| vec![0.0; m]).collect(),
            sp0_adj: vec![0.0; m],
            spp0_adj: vec![0.0; m],
            h0bar: vec![0.0; m],
            asbar: vec![0.0; d1],
            jbar: vec![0.0; m * d],
            bbar: vec![0.0; m * d],
            abar: vec![0.0; m],
            qbar: vec![0.0; m],
        }
    }

    fn reset(&mut self) {
        for v in self
            .ubar
            .iter_mut()
            .chain(self.pbar.iter_mut())
            .chain(self.sp_adj.iter_mut())
            .chain(self.spp_adj.iter_mut())
        {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        for v in [
            &mut self.sp0_adj,
            &mut self.spp0_adj,
            &mut self.h0bar,
            &mut self.asbar,
            &mut self.jbar,
            &mut self.bbar,
            &mut self.abar,
            &mut self.qbar,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Cotangents for the three outputs of a potential evaluation.
#[derive(Debug, Clone)]
pub struct Cotangents<'a> {
    pub phi: f64,
    pub grad_s: &'a [f64],
    pub lap_z: f64,
}

/// Exact vector-Jacobian product of `(Φ, ∇ₛΦ, ΔzΦ)` against `cot`.
///
/// Accumulates the parameter gradient into `theta_bar` (layout order, length
/// `param_count`) and the input gradient ∂⟨cot, outputs⟩/∂s into `s_bar`
/// (length `d + 1`). Both are `+=` accumulations; the caller zeroes them when
/// a fresh product is wanted. `ws` must hold a completed [`PotentialWorkspace::forward`]
/// for the same `(theta, z, t)`.
pub fn vjp_accumulate(
    ws: &PotentialWorkspace,
    theta: &ParamVector,
    cot: &Cotangents,
    scratch: &mut VjpScratch,
    theta_bar: &mut [f64],
    s_bar: &mut [f64],
) {
    let cfg = theta.config();
    let (d, d1, m, nb) = (cfg.d, cfg.in_dim(), cfg.m, cfg.n_resblocks);
    let h = cfg.resnet_step;
    let layout: Layout = theta.layout();
    let th = theta.as_slice();
    let k0 = &th[layout.k0.clone()];
    let w = &th[layout.w.clone()];
    let amat = &th[layout.a.clone()];
    let (cphi, cgrad, clap) = (cot.phi, cot.grad_s, cot.lap_z);
    debug_assert_eq!(cgrad.len(), d1);
    debug_assert_eq!(theta_bar.len(), layout.len);
    debug_assert_eq!(s_bar.len(), d1);

    scratch.reset();
    let sc = scratch;

    let (gk0, rest) = theta_bar.split_at_mut(layout.b0.start);
    let (gb0, rest) = rest.split_at_mut(layout.b0.len());
    let mut gblocks: Vec<(&mut [f64], &mut [f64])> = Vec::with_capacity(nb);
    let mut tail = rest;
    for _ in 0..nb {
        let (gk1, r) = tail.split_at_mut(m * m);
        let (gb1, r) = r.split_at_mut(m);
        gblocks.push((gk1, gb1));
        tail = r;
    }
    let (gw, tail) = tail.split_at_mut(m);
    let (ga, tail) = tail.split_at_mut(d1 * d1);
    let (gb, tail) = tail.split_at_mut(d1);
    let gc = &mut tail[0];

    // ---- output: Φ = wᵀu_nb + ½‖As‖² + bᵀs + c
    if cphi != 0.0 {
        for k in 0..m {
            gw[k] += cphi * ws.u[nb][k];
            sc.ubar[nb][k] += cphi * w[k];
        }
        for j in 0..d1 {
            sc.asbar[j] += cphi * ws.a_s[j];
            gb[j] += cphi * ws.s[j];
            s_bar[j] += cphi * th[layout.b.start + j];
        }
        *gc += cphi;
    }

    // ---- output: g = K0ᵀh0 + Aᵀ(As) + b
    // h0bar = K0·ĝ ; K̄0 += h0 ĝᵀ ; Ās̄ += A·ĝ ; Ā += As·ĝᵀ ; b̄ += ĝ
    matvec(k0, m, d1, cgrad, &mut sc.h0bar);
    for k in 0..m {
        let h0k = ws.h0[k];
        for j in 0..d1 {
            gk0[k * d1 + j] += h0k * cgrad[j];
        }
    }
    for r in 0..d1 {
        let mut acc = 0.0;
        for j in 0..d1 {
            acc += amat[r * d1 + j] * cgrad[j];
            ga[r * d1 + j] += ws.a_s[r] * cgrad[j];
        }
        sc.asbar[r] += acc;
        gb[r] += cgrad[r];
    }
    // h0 = σ₀'⊙p₀
    for k in 0..m {
        sc.sp0_adj[k] += sc.h0bar[k] * ws.p[0][k];
        sc.pbar[0][k] += sc.h0bar[k] * ws.sp0[k];
    }

    // ---- output: Δz = Σ_{j<d}(AᵀA)_jj + term₀ + h·Σ termᵢ
    if clap != 0.0 {
        for r in 0..d1 {
            for j in 0..d {
                ga[r * d1 + j] += 2.0 * clap * amat[r * d1 + j];
            }
        }
        for k in 0..m {
            sc.spp0_adj[k] += clap * ws.p[0][k] * ws.r0[k];
            sc.pbar[0][k] += clap * ws.spp0[k] * ws.r0[k];
            let r0bar = clap * ws.spp0[k] * ws.p[0][k];
            for j in 0..d {
                gk0[k * d1 + j] += 2.0 * r0bar * k0[k * d1 + j];
            }
        }
        for i in 1..=nb {
            let b_i = &ws.bmat[i - 1];
            for k in 0..m {
                let mut rs = 0.0;
                for j in 0..d {
                    let x = b_i[k * d + j];
                    rs += x * x;
                }
                sc.spp_adj[i - 1][k] += clap * h * ws.p[i][k] * rs;
                sc.pbar[i][k] += clap * h * ws.spp[i - 1][k] * rs;
            }
        }
    }

    // ---- reverse of the J / B recursion (blocks nb..1)
    // Forward was: B(i) = K1ᵢ·J(i-1); J(i) = J(i-1) + h·diag(σᵢ')·B(i).
    // `jbar` rolls J̄(i) downward into J̄(i-1).
    for i in (1..=nb).rev() {
        let (k1r, _) = &layout.blocks[i - 1];
        let k1 = &th[k1r.clone()];
        let b_i = &ws.bmat[i - 1];
        // direct term from Δz
        if clap != 0.0 {
            for k in 0..m {
                let coef = 2.0 * clap * h * ws.spp[i - 1][k] * ws.p[i][k];
                for j in 0..d {
                    sc.bbar[k * d + j] = coef * b_i[k * d + j];
                }
            }
        } else {
            sc.bbar.iter_mut().for_each(|x| *x = 0.0);
        }
        // from J(i) = J(i-1) + h·diag(σᵢ')·B(i)
        for k in 0..m {
            let mut dot = 0.0;
            for j in 0..d {
                let jb = sc.jbar[k * d + j];
                sc.bbar[k * d + j] += h * ws.sp[i - 1][k] * jb;
                dot += jb * b_i[k * d + j];
            }
            sc.sp_adj[i - 1][k] += h * dot;
        }
        // B(i) = K1ᵢ·J(i-1): K̄1ᵢ += B̄·J(i-1)ᵀ, J̄(i-1) += K1ᵢᵀ·B̄ (on top of identity carry)
        let jin = &ws.jmat[i - 1];
        let gk1 = &mut gblocks[i - 1].0;
        for k in 0..m {
            for l in 0..m {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += sc.bbar[k * d + j] * jin[l * d + j];
                }
                gk1[k * m + l] += acc;
            }
        }
        for l in 0..m {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += k1[k * m + l] * sc.bbar[k * d + j];
                }
                sc.jbar[l * d + j] += acc;
            }
        }
    }
    // J(0) = diag(σ₀')·K0[:, 0..d]
    for k in 0..m {
        let mut dot = 0.0;
        for j in 0..d {
            let jb = sc.jbar[k * d + j];
            dot += jb * k0[k * d1 + j];
            gk0[k * d1 + j] += jb * ws.sp0[k];
        }
        sc.sp0_adj[k] += dot;
    }

    // ---- reverse of the backward-potential recursion (forward order 1..nb)
    // p(i-1) = p(i) + h·K1ᵢᵀ(σᵢ'⊙p(i)), p(nb) = w.
    for i in 1..=nb {
        let (k1r, _) = &layout.blocks[i - 1];
        let k1 = &th[k1r.clone()];
        // q̄ᵢ = h·K1ᵢ·p̄(i-1)
        matvec(k1, m, m, &sc.pbar[i - 1], &mut sc.qbar);
        let gk1 = &mut gblocks[i - 1].0;
        for k in 0..m {
            sc.qbar[k] *= h;
            let qk = ws.q[i - 1][k];
            if qk != 0.0 {
                for j in 0..m {
                    gk1[k * m + j] += h * qk * sc.pbar[i - 1][j];
                }
            }
        }
        let (lo, hi) = sc.pbar.split_at_mut(i);
        let pbar_prev = &lo[i - 1];
        let pbar_i = &mut hi[0];
        for k in 0..m {
            pbar_i[k] += pbar_prev[k] + sc.qbar[k] * ws.sp[i - 1][k];
            sc.sp_adj[i - 1][k] += sc.qbar[k] * ws.p[i][k];
        }
    }
    for k in 0..m {
        gw[k] += sc.pbar[nb][k];
    }

    // ---- reverse of the residual stack (blocks nb..1)
    for i in (1..=nb).rev() {
        let (k1r, _) = &layout.blocks[i - 1];
        let k1 = &th[k1r.clone()];
        let spv = &ws.sp[i - 1];
        let sppv = &ws.spp[i - 1];
        for k in 0..m {
            sc.abar[k] = h * spv[k] * sc.ubar[i][k]
                + sc.sp_adj[i - 1][k] * sppv[k]
                + sc.spp_adj[i - 1][k] * (-2.0 * spv[k] * sppv[k]);
        }
        let (gk1, gb1) = &mut gblocks[i - 1];
        let u_prev = &ws.u[i - 1];
        for k in 0..m {
            let ab = sc.abar[k];
            gb1[k] += ab;
            if ab != 0.0 {
                for j in 0..m {
                    gk1[k * m + j] += ab * u_prev[j];
                }
            }
        }
        let (lo, hi) = sc.ubar.split_at_mut(i);
        let ubar_prev = &mut lo[i - 1];
        for k in 0..m {
            ubar_prev[k] += hi[0][k];
        }
        matvec_t_add(k1, m, m, &sc.abar, ubar_prev);
    }

    // ---- opening layer
    for k in 0..m {
        sc.abar[k] = ws.sp0[k] * sc.ubar[0][k]
            + sc.sp0_adj[k] * ws.spp0[k]
            + sc.spp0_adj[k] * (-2.0 * ws.sp0[k] * ws.spp0[k]);
    }
    for k in 0..m {
        let ab = sc.abar[k];
        gb0[k] += ab;
        if ab != 0.0 {
            for j in 0..d1 {
                gk0[k * d1 + j] += ab * ws.s[j];
            }
        }
    }
    matvec_t_add(k0, m, d1, &sc.abar, s_bar);

    // ---- quadratic input path: As = A·s
    for r in 0..d1 {
        let ab = sc.asbar[r];
        if ab != 0.0 {
            for j in 0..d1 {
                ga[r * d1 + j] += ab * ws.s[j];
            }
        }
    }
    matvec_t_add(amat, d1, d1, &sc.asbar, s_bar);
}

/// Evaluate Φ with its exact space-time gradient and z-Laplacian.
pub fn potential(theta: &ParamVector, z: &[f64], t: f64) -> Result<PotentialEval> {
    let mut ws = PotentialWorkspace::new(theta.config());
    ws.forward(theta, z, t)?;
    Ok(ws.eval())
}

/// Flow velocity v = −∇zΦ.
pub fn velocity(theta: &ParamVector, z: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut ws = PotentialWorkspace::new(theta.config());
    ws.forward(theta, z, t)?;
    let mut v = vec![0.0; theta.config().d];
    ws.write_velocity(&mut v);
    Ok(v)
}

/// Exact VJP of `(Φ, ∇ₛΦ, ΔzΦ)` with respect to the parameters.
pub fn vjp_params(theta: &ParamVector, z: &[f64], t: f64, cot: &Cotangents) -> Result<Vec<f64>> {
    for c in cot.grad_s.iter().chain([&cot.phi, &cot.lap_z]) {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                context: "vjp cotangents",
            });
        }
    }
    let mut ws = PotentialWorkspace::new(theta.config());
    ws.forward(theta, z, t)?;
    let mut scratch = VjpScratch::new(theta.config());
    let mut theta_bar = vec![0.0; theta.len()];
    let mut s_bar = vec![0.0; theta.config().in_dim()];
    vjp_accumulate(&ws, theta, cot, &mut scratch, &mut theta_bar, &mut s_bar);
    Ok(theta_bar)
}

/// A parameter vector whose potential is the pure quadratic ½‖s‖², so the
/// velocity is exactly −z. Used by analytic oracles.
pub fn quadratic_theta(d: usize) -> ParamVector {
    let cfg = NetConfig::new(d, 3);
    let layout = Layout::new(&cfg);
    let mut theta = ParamVector::zeros(cfg);
    let d1 = cfg.in_dim();
    for r in 0..d1 {
        theta.as_mut_slice()[layout.a.start + r * d1 + r] = 1.0;
    }
    theta
}
