//! Comparison optimizers: SGD with momentum, Adam, L-BFGS and Hessian-free.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, axpy, dot, norm};
use crate::loss::LossKind;
use crate::net::{self, Batch, Network};

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {a} vs {b}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        unit_interval("momentum", self.momentum)?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// `v ← momentum·v + (g + wd·θ)`, then `θ ← θ − lr·v`.
pub fn sgd_step(theta: &mut [f64], g: &[f64], velocity: &mut [f64], cfg: &SgdConfig) -> Result<()> {
    check_len("sgd gradient", g.len(), theta.len())?;
    check_len("sgd velocity", velocity.len(), theta.len())?;
    for ((t, v), gi) in theta.iter_mut().zip(velocity.iter_mut()).zip(g) {
        *v = cfg.momentum * *v + (gi + cfg.weight_decay * *t);
        *t -= cfg.lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        positive("eps", self.eps)?;
        unit_interval("beta1", self.beta1)?;
        unit_interval("beta2", self.beta2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken; the first step uses `t = 1`.
    pub t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

pub fn adam_step(theta: &mut [f64], g: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    check_len("adam gradient", g.len(), theta.len())?;
    check_len("adam moments", state.m.len(), theta.len())?;
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        let gi = g[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Curvature pairs with `sᵀy` at or below this are dropped.
pub const LBFGS_MIN_CURVATURE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsState {
    pub memory: usize,
    pub lr: f64,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    prev: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for LbfgsState {
    fn default() -> Self {
        Self::new(10, 0.005)
    }
}

impl LbfgsState {
    pub fn new(memory: usize, lr: f64) -> Self {
        Self {
            memory,
            lr,
            s: VecDeque::new(),
            y: VecDeque::new(),
            prev: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        if self.memory == 0 {
            return Err(Error::InvalidConfig("lbfgs memory must be at least 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Stores a curvature pair, evicting the oldest beyond `memory`. Returns
    /// false when the pair was skipped for insufficient curvature.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> Result<bool> {
        check_len("lbfgs pair", s.len(), y.len())?;
        if !(dot(&s, &y) > LBFGS_MIN_CURVATURE) {
            return Ok(false);
        }
        self.s.push_back(s);
        self.y.push_back(y);
        while self.s.len() > self.memory {
            self.s.pop_front();
            self.y.pop_front();
        }
        Ok(true)
    }

    /// `−H⁻¹g` by the two-loop recursion with `H₀⁻¹ = γI`.
    pub fn direction(&self, g: &[f64]) -> Result<Vec<f64>> {
        lbfgs_direction(g, self.s.iter().zip(self.y.iter()))
    }

    /// Records the pair from the previous call, then moves `θ` along the
    /// L-BFGS direction with the constant learning rate.
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        check_len("lbfgs gradient", g.len(), theta.len())?;
        if let Some((t0, g0)) = self.prev.take() {
            let s: Vec<f64> = theta.iter().zip(&t0).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(&g0).map(|(a, b)| a - b).collect();
            self.push(s, y)?;
        }
        let d = self.direction(g)?;
        self.prev = Some((theta.to_vec(), g.to_vec()));
        axpy(self.lr, &d, theta);
        Ok(())
    }
}

/// Two-loop recursion over `(s_j, y_j)` pairs, oldest first.
pub fn lbfgs_direction<'a, I>(g: &[f64], pairs: I) -> Result<Vec<f64>>
where
    I: DoubleEndedIterator<Item = (&'a Vec<f64>, &'a Vec<f64>)> + Clone,
{
    let mut q = g.to_vec();
    let mut alphas = Vec::new();
    for (s, y) in pairs.clone().rev() {
        check_len("lbfgs pair", s.len(), g.len())?;
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push((a, rho));
    }
    let gamma = match pairs.clone().next_back() {
        Some((s, y)) => dot(s, y) / dot(y, y),
        None => 1.0,
    };
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), (a, rho)) in pairs.zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iters: usize,
    /// `‖r_k‖` for k = 0..=iters.
    pub residuals: Vec<f64>,
}

/// Unpreconditioned conjugate gradients for `A x = b` from `x = 0`, stopping
/// once `‖r‖ ≤ tol·‖b‖` or after `max_iters` iterations.
pub fn cg_solve<F>(mut apply: F, b: &[f64], max_iters: usize, tol: f64) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let b_norm = rr.sqrt();
    let mut residuals = vec![b_norm];
    let mut iters = 0;
    while iters < max_iters && rr.sqrt() > tol * b_norm {
        let ap = apply(&p)?;
        check_len("cg operator output", ap.len(), n)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgBreakdown(pap));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
        iters += 1;
        residuals.push(rr.sqrt());
    }
    Ok(CgResult { x, iters, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfConfig {
    pub lr: f64,
    pub cg_max_iters: usize,
    pub cg_tol: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for HfConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            cg_max_iters: 50,
            cg_tol: 1e-6,
            lambda0: 1.0,
            lambda_up: 10.0,
            lambda_down: 10.0,
        }
    }
}

impl HfConfig {
    pub fn validate(&self) -> Result<()> {
        positive("lr", self.lr)?;
        positive("cg_tol", self.cg_tol)?;
        positive("hf_damping", self.lambda0)?;
        positive("lambda_up", self.lambda_up)?;
        positive("lambda_down", self.lambda_down)?;
        if self.cg_max_iters == 0 {
            return Err(Error::InvalidConfig("cg_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solves `(G + λI) d = −g` with the Gauss-Newton product held at `θ`.
#[allow(clippy::too_many_arguments)]
pub fn hf_direction(
    net: &Network,
    theta: &[f64],
    batch: &Batch,
    loss: LossKind,
    g: &[f64],
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<CgResult> {
    let b: Vec<f64> = g.iter().map(|v| -v).collect();
    cg_solve(
        |v| {
            let mut out = net::gn_vector_product(net, theta, batch, loss, v)?;
            axpy(lambda, v, &mut out);
            Ok(out)
        },
        &b,
        max_iters,
        tol,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfReport {
    pub loss: f64,
    pub new_loss: f64,
    /// Damping after the schedule update.
    pub lambda: f64,
    pub cg_iters: usize,
    pub step_norm: f64,
}

/// One Hessian-free step; `lambda` follows the ×up / ÷down schedule on the
/// batch loss.
pub fn hf_step(
    theta: &mut [f64],
    lambda: &mut f64,
    net: &Network,
    batch: &Batch,
    loss: LossKind,
    cfg: &HfConfig,
) -> Result<HfReport> {
    let (f, g) = net::grad(net, theta, batch, loss)?;
    let cg = hf_direction(net, theta, batch, loss, &g, *lambda, cfg.cg_max_iters, cfg.cg_tol)?;
    if !all_finite(&cg.x) {
        return Err(Error::NonFinite("hf direction"));
    }
    axpy(cfg.lr, &cg.x, theta);
    let new_loss = net::loss_value(net, theta, batch, loss)?;
    if new_loss > f {
        *lambda *= cfg.lambda_up;
    } else if new_loss < f {
        *lambda /= cfg.lambda_down;
    }
    Ok(HfReport {
        loss: f,
        new_loss,
        lambda: *lambda,
        cg_iters: cg.iters,
        step_norm: cfg.lr * norm(&cg.x),
    })
}
