//! Levenberg-Marquardt for neural networks.
//!
//! One iteration of [`lm_step`]:
//!
//! 1. evaluate the loss, gradient and Gauss-Newton curvature `H` on the batch;
//! 2. raise the damping diagonal `d` to the elementwise max of `d` and `diag(H)`;
//! 3. pick a direction from the damped system `H + λ diag(d)`: the plain LM
//!    direction, or the adaptive-momentum direction that blends it with the
//!    previous accepted step;
//! 4. try `θ + lr0 · dθ`; accept it if the loss did not rise, or if the
//!    uphill rule allows the rise;
//! 5. if rejected, search a learning-rate grid along `dθ` and re-test;
//! 6. shrink `λ` when the full step lowered the loss, grow it otherwise.
//!
//! The line search only runs forward passes, so it does not count as an
//! iteration.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot, norm, Cholesky, Matrix};
use crate::loss::{ggn_assemble, ggn_softmax_exact, softmax, CeCurvature, CurvatureSource, LossKind};
use crate::net::{self, Batch, Network, DEFAULT_JACOBIAN_CAP};

/// Initial value of every damping-diagonal entry.
pub const INITIAL_DAMPING: f64 = 0.01;

/// Reference loss used by the uphill acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UphillMode {
    /// Loss at the current parameters.
    #[default]
    Last,
    /// Minimum over all accepted losses.
    MinHistory,
}

impl FromStr for UphillMode {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "last" => Ok(Self::Last),
            "min_history" => Ok(Self::MinHistory),
            _ => Err(()),
        }
    }
}

impl fmt::Display for UphillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Last => "last",
            Self::MinHistory => "min_history",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lr0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub momentum: bool,
    /// Step length in the damped-curvature norm used by adaptive momentum.
    pub delta_p: f64,
    /// Fraction of the maximum achievable first-order decrease requested by
    /// adaptive momentum, in `(0, 1)`.
    pub xi: f64,
    /// Uphill exponent; 0 accepts only non-increasing steps. Large values
    /// let a step that keeps the previous heading accept almost any rise, so
    /// the default is small.
    pub uphill_b: f64,
    pub uphill_mode: UphillMode,
    pub line_search: bool,
    pub max_iters: usize,
    pub ce_curvature: CeCurvature,
    /// Memory cap for dense output Jacobians, in bytes.
    pub jacobian_cap: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lr0: 1.0,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_min: 1e-12,
            lambda_max: 1e12,
            momentum: true,
            delta_p: 0.1,
            xi: 0.9,
            uphill_b: 0.05,
            uphill_mode: UphillMode::Last,
            line_search: true,
            max_iters: 100,
            ce_curvature: CeCurvature::OuterProduct,
            jacobian_cap: DEFAULT_JACOBIAN_CAP,
        }
    }
}

impl LmConfig {
    /// Plain LM: no momentum, no line search, decrease-only acceptance.
    pub fn vanilla() -> Self {
        Self {
            momentum: false,
            line_search: false,
            uphill_b: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda0", self.lambda0),
            ("lr0", self.lr0),
            ("lambda_up", self.lambda_up),
            ("lambda_down", self.lambda_down),
            ("lambda_min", self.lambda_min),
            ("lambda_max", self.lambda_max),
            ("delta_p", self.delta_p),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lambda_min > self.lambda_max {
            return Err(Error::InvalidConfig("lambda_min exceeds lambda_max".into()));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::InvalidConfig(format!("xi must be in (0, 1), got {}", self.xi)));
        }
        if !(self.uphill_b >= 0.0 && self.uphill_b.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "uphill_b must be non-negative, got {}",
                self.uphill_b
            )));
        }
        Ok(())
    }
}

/// Running damping diagonal `DᵀD`.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingState {
    pub d: Vec<f64>,
}

impl DampingState {
    pub fn new(n: usize) -> Self {
        Self {
            d: vec![INITIAL_DAMPING; n],
        }
    }
}

/// `d_i ← max(d_i, diag_i)`
pub fn update_damping(damping: &mut DampingState, diag: &[f64]) -> Result<()> {
    if diag.len() != damping.d.len() {
        return Err(Error::DimensionMismatch(format!(
            "curvature diagonal of length {} for damping of length {}",
            diag.len(),
            damping.d.len()
        )));
    }
    for (d, &h) in damping.d.iter_mut().zip(diag) {
        if h > *d {
            *d = h;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LmState {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub damping: DampingState,
    /// Last accepted step, including its learning rate. Zero before the first
    /// acceptance.
    pub prev_step: Vec<f64>,
    /// Losses of accepted iterates, starting with the initial loss.
    pub loss_history: Vec<f64>,
    pub iter: usize,
}

impl LmState {
    pub fn new(theta: Vec<f64>, config: &LmConfig) -> Self {
        let n = theta.len();
        Self {
            theta,
            lambda: config.lambda0,
            damping: DampingState::new(n),
            prev_step: vec![0.0; n],
            loss_history: Vec::new(),
            iter: 0,
        }
    }
}

fn negated(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| -v).collect()
}

/// Damped LM direction `−(H + λ diag(d))⁻¹ g`, after raising `d` to `diag(H)`.
pub fn lm_direction(h: &Matrix, g: &[f64], lambda: f64, damping: &mut DampingState) -> Result<Vec<f64>> {
    if h.rows() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} curvature with gradient of length {}",
            h.rows(),
            h.cols(),
            g.len()
        )));
    }
    update_damping(damping, &h.diag())?;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; g.len()]);
    }
    let damped = h.add_diag(&damping.d, lambda)?;
    Cholesky::factor(&damped)?.solve(&negated(g))
}

/// Adaptive-momentum direction for the damped curvature `h`.
///
/// Maximises the conjugacy `dθᵀ H dθ_prev` subject to `dθᵀ H dθ = δP²` and
/// `gᵀ dθ = δQ` with `δQ = −xi · δP · √(gᵀH⁻¹g)`.
pub fn adaptive_momentum(
    h: &Matrix,
    g: &[f64],
    prev: &[f64],
    delta_p: f64,
    xi: f64,
) -> Result<Vec<f64>> {
    let chol = Cholesky::factor(h)?;
    momentum_with_factor(h, &chol, g, prev, delta_p, xi)
}

fn momentum_with_factor(
    h: &Matrix,
    chol: &Cholesky,
    g: &[f64],
    prev: &[f64],
    delta_p: f64,
    xi: f64,
) -> Result<Vec<f64>> {
    if g.len() != prev.len() || h.rows() != g.len() {
        return Err(Error::DimensionMismatch("momentum inputs differ in length".into()));
    }
    let hinv_g = chol.solve(g)?;
    let i_gg = dot(g, &hinv_g);
    let i_gf = dot(g, prev);
    let h_prev = crate::linalg::matvec(h, prev)?;
    let i_ff = dot(prev, &h_prev);
    let det = i_ff * i_gg - i_gf * i_gf;
    if !(i_gg > 0.0 && i_ff > 0.0) || !(det > 1e-14 * i_ff * i_gg) {
        return Err(Error::DegenerateDirections);
    }
    let delta_q = -xi * delta_p * i_gg.sqrt();
    let z2 = 0.5 / ((i_gg * delta_p * delta_p - delta_q * delta_q) / det).sqrt();
    let z1 = (-2.0 * z2 * delta_q + i_gf) / i_gg;
    let a = -z1 / (2.0 * z2);
    let c = 1.0 / (2.0 * z2);
    let step: Vec<f64> = hinv_g
        .iter()
        .zip(prev)
        .map(|(u, p)| a * u + c * p)
        .collect();
    if !all_finite(&step) {
        return Err(Error::NonFinite("momentum step"));
    }
    Ok(step)
}

/// Learning rates probed by the line search: `1e-6`, then `0.125, 0.25, …, 9.0`.
pub fn lr_grid() -> Vec<f64> {
    std::iter::once(1e-6)
        .chain((1..=72).map(|k| 0.125 * k as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub lr: f64,
    pub loss: f64,
}

/// Evaluates `objective(θ + lr·step)` over [`lr_grid`] and returns the first
/// minimiser. Probes with a non-finite loss are skipped.
pub fn line_search_grid<F>(mut objective: F, theta: &[f64], step: &[f64]) -> Result<LineSearch>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut best: Option<LineSearch> = None;
    let mut probe = vec![0.0; theta.len()];
    for lr in lr_grid() {
        for ((p, t), s) in probe.iter_mut().zip(theta).zip(step) {
            *p = t + lr * s;
        }
        let loss = match objective(&probe) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFiniteLoss) | Err(Error::NonFinite(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|b| loss < b.loss) {
            best = Some(LineSearch { lr, loss });
        }
    }
    best.ok_or(Error::AllNonFinite)
}

/// Learning-rate line search along `step` using forward passes only.
pub fn lr_line_search(
    net: &Network,
    theta: &[f64],
    step: &[f64],
    batch: &Batch,
    loss: LossKind,
) -> Result<LineSearch> {
    if !all_finite(step) {
        return Err(Error::NonFinite("line-search direction"));
    }
    line_search_grid(|p| net::loss_value(net, p, batch, loss), theta, step)
}

/// Cosine between two steps; 0 when either is zero.
pub fn step_cosine(new_step: &[f64], old_step: &[f64]) -> f64 {
    let (a, b) = (norm(new_step), norm(old_step));
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        dot(new_step, old_step) / (a * b)
    }
}

/// Accepts when `(1 − β)^b · f_new ≤ f_ref`, `β` being the cosine between the
/// proposed and the last accepted step.
pub fn uphill_accept(new_step: &[f64], old_step: &[f64], b: f64, f_new: f64, f_ref: f64) -> bool {
    let beta = step_cosine(new_step, old_step);
    (1.0 - beta).powf(b) * f_new <= f_ref
}

/// Loss, gradient and Gauss-Newton curvature on a batch.
#[derive(Debug, Clone)]
pub struct GaussNewtonSystem {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub curvature: Matrix,
}

pub fn gauss_newton_system(
    net: &Network,
    theta: &[f64],
    batch: &Batch,
    loss: LossKind,
    ce_curvature: CeCurvature,
    jacobian_cap: usize,
) -> Result<GaussNewtonSystem> {
    match (loss, ce_curvature) {
        (LossKind::SoftmaxCrossEntropy, CeCurvature::OuterProduct) => {
            let s = net::per_sample_grads(net, theta, batch, loss)?;
            let h = ggn_assemble(loss, CurvatureSource::PerSampleGrads(&s.per_sample), batch.len())?;
            Ok(GaussNewtonSystem {
                loss: s.loss,
                grad: s.grad,
                curvature: h,
            })
        }
        (LossKind::SoftmaxCrossEntropy, CeCurvature::Exact) => {
            let s = net::jacobian_system(net, theta, batch, loss, jacobian_cap)?;
            let mut probs = s.outputs.clone();
            for i in 0..probs.rows() {
                let p = softmax(s.outputs.row(i));
                probs.row_mut(i).copy_from_slice(&p);
            }
            let h = ggn_softmax_exact(&s.jacobian, &probs)?;
            Ok(GaussNewtonSystem {
                loss: s.loss,
                grad: s.grad,
                curvature: h,
            })
        }
        (LossKind::Mse, _) => {
            let s = net::jacobian_system(net, theta, batch, loss, jacobian_cap)?;
            let h = ggn_assemble(loss, CurvatureSource::Jacobian(&s.jacobian), batch.len())?;
            Ok(GaussNewtonSystem {
                loss: s.loss,
                grad: s.grad,
                curvature: h,
            })
        }
    }
}

/// Outcome of one [`lm_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Loss at the parameters the step started from.
    pub loss: f64,
    /// Loss at the parameters after the step (unchanged when rejected).
    pub new_loss: f64,
    pub accepted: bool,
    /// Damping after the schedule update.
    pub lambda: f64,
    /// Learning rate of the last candidate tried.
    pub lr: f64,
    /// Norm of the applied step; 0 when rejected.
    pub step_norm: f64,
    pub used_momentum: bool,
    pub used_line_search: bool,
}

/// One LM iteration on `batch`. Rejected iterations leave `θ`, the previous
/// step and the loss history untouched.
pub fn lm_step(
    state: &mut LmState,
    net: &Network,
    batch: &Batch,
    loss: LossKind,
    config: &LmConfig,
) -> Result<StepReport> {
    let sys = gauss_newton_system(
        net,
        &state.theta,
        batch,
        loss,
        config.ce_curvature,
        config.jacobian_cap,
    )?;
    let f = sys.loss;
    if state.loss_history.is_empty() {
        state.loss_history.push(f);
    }
    update_damping(&mut state.damping, &sys.curvature.diag())?;

    let zero_grad = sys.grad.iter().all(|&v| v == 0.0);
    let have_prev = state.prev_step.iter().any(|&v| v != 0.0);
    let mut used_momentum = false;
    let direction = if zero_grad {
        vec![0.0; sys.grad.len()]
    } else {
        let damped = sys.curvature.add_diag(&state.damping.d, state.lambda)?;
        let chol = Cholesky::factor(&damped)?;
        let momentum = if config.momentum && have_prev {
            match momentum_with_factor(
                &damped,
                &chol,
                &sys.grad,
                &state.prev_step,
                config.delta_p,
                config.xi,
            ) {
                Ok(step) => Some(step),
                Err(Error::DegenerateDirections) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        match momentum {
            Some(step) => {
                used_momentum = true;
                step
            }
            None => chol.solve(&negated(&sys.grad))?,
        }
    };

    let f_ref = match config.uphill_mode {
        UphillMode::Last => f,
        UphillMode::MinHistory => state.loss_history.iter().copied().fold(f64::INFINITY, f64::min),
    };
    // A non-increase is always taken; the uphill rule only widens acceptance.
    let accepts = |f_new: f64| {
        f_new.is_finite()
            && (f_new <= f_ref || uphill_accept(&direction, &state.prev_step, config.uphill_b, f_new, f_ref))
    };

    let mut lr = config.lr0;
    let candidate: Vec<f64> = state
        .theta
        .iter()
        .zip(&direction)
        .map(|(t, d)| t + lr * d)
        .collect();
    let mut f_new = match net::loss_value(net, &candidate, batch, loss) {
        Ok(v) => v,
        Err(Error::NonFiniteLoss) | Err(Error::NonFinite(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let mut accepted = accepts(f_new);
    let mut used_line_search = false;
    if !accepted && config.line_search && !zero_grad {
        used_line_search = true;
        match lr_line_search(net, &state.theta, &direction, batch, loss) {
            Ok(ls) => {
                lr = ls.lr;
                f_new = ls.loss;
                accepted = accepts(f_new);
            }
            Err(Error::AllNonFinite) => {}
            Err(e) => return Err(e),
        }
    }

    let mut step_norm = 0.0;
    if accepted {
        let step: Vec<f64> = direction.iter().map(|d| lr * d).collect();
        for (t, s) in state.theta.iter_mut().zip(&step) {
            *t += s;
        }
        step_norm = norm(&step);
        state.prev_step = step;
        state.loss_history.push(f_new);
    }
    // Only a full-length step that lowered the loss counts as a success.
    // Steps rescued by the line search or taken uphill still move θ but
    // tighten the trust region like a failure.
    let success = accepted && !used_line_search && f_new < f;
    state.lambda = if success {
        (state.lambda / config.lambda_down).max(config.lambda_min)
    } else {
        (state.lambda * config.lambda_up).min(config.lambda_max)
    };
    state.iter += 1;

    Ok(StepReport {
        loss: f,
        new_loss: if accepted { f_new } else { f },
        accepted,
        lambda: state.lambda,
        lr,
        step_norm,
        used_momentum,
        used_line_search,
    })
}
