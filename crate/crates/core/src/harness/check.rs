//! Oracle suites behind `lmnet check`: each compares a production code path
//! against an independent computation and reports the worst error.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{dot, gram, matvec, norm, spd_solve, Cholesky, Matrix};
use crate::loss::{ggn_assemble, ggn_softmax_exact, softmax, CurvatureSource, LossKind};
use crate::net::{self, Activation, Batch, LayerSpec, Network, Shape};
use crate::optim_baselines::hf_direction;
use crate::optim_lm::adaptive_momentum;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Grad,
    Ggn,
    Hvp,
    Momentum,
}

impl CheckKind {
    pub const ALL: [CheckKind; 4] = [Self::Grad, Self::Ggn, Self::Hvp, Self::Momentum];
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub probes: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<40} probes={:<5} max_error={:.3e} tol={:.0e}",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.probes,
            self.max_error,
            self.tolerance
        )
    }
}

pub fn run_checks(kinds: &[CheckKind]) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for kind in kinds {
        out.extend(match kind {
            CheckKind::Grad => check_gradients(7)?,
            CheckKind::Ggn => check_ggn(7)?,
            CheckKind::Hvp => vec![check_hvp(7)?],
            CheckKind::Momentum => check_momentum(7, 1000)?,
        });
    }
    Ok(out)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn random_batch(rng: &mut Rng, net: &Network, n: usize, one_hot: bool) -> Result<Batch> {
    let d = net.input_len();
    let c = net.output_len();
    let inputs = Matrix::new(n, d, (0..n * d).map(|_| rng.uniform(0.0, 1.0)).collect())?;
    let mut targets = Matrix::zeros(n, c);
    for i in 0..n {
        if one_hot {
            targets[(i, rng.below(c))] = 1.0;
        } else {
            for j in 0..c {
                targets[(i, j)] = rng.normal();
            }
        }
    }
    Batch::new(inputs, targets)
}

fn small_mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Result<Network> {
    let mut layers = Vec::new();
    let mut prev = inputs;
    for &h in hidden {
        layers.push(LayerSpec::Dense {
            inputs: prev,
            outputs: h,
            activation: Activation::ELU,
        });
        prev = h;
    }
    layers.push(LayerSpec::Dense {
        inputs: prev,
        outputs,
        activation: Activation::Identity,
    });
    Network::new(Shape::flat(inputs), layers)
}

/// Central differences (`h = 1e-5`) along random unit directions against the
/// analytic gradient.
pub fn check_gradients(seed: u64) -> Result<Vec<CheckReport>> {
    const H: f64 = 1e-5;
    const PROBES: usize = 30;
    let mut rng = Rng::new(seed);
    let cases: Vec<(&str, Network, LossKind, usize)> = vec![
        ("grad: sine MLP, MSE", Network::sine_mlp(32)?, LossKind::Mse, 16),
        ("grad: ELU MLP, cross-entropy", small_mlp(4, &[32], 3)?, LossKind::SoftmaxCrossEntropy, 16),
        ("grad: CNN, cross-entropy", Network::mnist_cnn(), LossKind::SoftmaxCrossEntropy, 3),
        ("grad: CNN, MSE", Network::mnist_cnn(), LossKind::Mse, 3),
    ];
    let mut out = Vec::new();
    for (name, net, loss, n) in cases {
        let batch = random_batch(&mut rng, &net, n, loss == LossKind::SoftmaxCrossEntropy)?;
        let theta = net::init_params(&net, rng.next_u64());
        let (_, g) = net::grad(&net, &theta, &batch, loss)?;
        let mut worst: f64 = 0.0;
        for _ in 0..PROBES {
            let mut v = random_vec(&mut rng, theta.len());
            let len = norm(&v);
            v.iter_mut().for_each(|x| *x /= len);
            let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(&v).map(|(t, d)| t + s * d).collect() };
            let fp = net::loss_value(&net, &shifted(H), &batch, loss)?;
            let fm = net::loss_value(&net, &shifted(-H), &batch, loss)?;
            let fd = (fp - fm) / (2.0 * H);
            worst = worst.max(rel_err(fd, dot(&g, &v)));
        }
        out.push(CheckReport {
            name: name.into(),
            probes: PROBES,
            max_error: worst,
            tolerance: 1e-4,
        });
    }
    Ok(out)
}

/// Dense Gauss-Newton matrix times `v` against the matrix-free product, and a
/// positive-semidefiniteness probe.
pub fn check_ggn(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::new(seed);
    let net = small_mlp(3, &[16, 8], 2)?;
    let mut product_err: f64 = 0.0;
    let mut psd_err: f64 = 0.0;
    let trials = 5;
    for trial in 0..trials {
        let loss = if trial % 2 == 0 { LossKind::Mse } else { LossKind::SoftmaxCrossEntropy };
        let batch = random_batch(&mut rng, &net, 12, loss == LossKind::SoftmaxCrossEntropy)?;
        let theta = net::init_params(&net, rng.next_u64());
        let sys = net::jacobian_system(&net, &theta, &batch, loss, net::DEFAULT_JACOBIAN_CAP)?;
        let h = match loss {
            LossKind::Mse => ggn_assemble(loss, CurvatureSource::Jacobian(&sys.jacobian), batch.len())?,
            LossKind::SoftmaxCrossEntropy => {
                let mut probs = sys.outputs.clone();
                for i in 0..probs.rows() {
                    let p = softmax(sys.outputs.row(i));
                    probs.row_mut(i).copy_from_slice(&p);
                }
                ggn_softmax_exact(&sys.jacobian, &probs)?
            }
        };
        for _ in 0..4 {
            let v = random_vec(&mut rng, theta.len());
            let dense = matvec(&h, &v)?;
            let free = net::gn_vector_product(&net, &theta, &batch, loss, &v)?;
            product_err = product_err.max(vec_rel_err(&dense, &free));
        }
        // λ_min ≥ −1e-10·tr(H) iff H + 1e-10·tr(H)·I factors without help.
        let shifted = h.add_diag(&vec![1.0; h.rows()], 1e-10 * h.trace())?;
        match Cholesky::factor(&shifted) {
            Ok(c) if c.jitter() == 0.0 => {}
            _ => psd_err = 1.0,
        }
    }
    Ok(vec![
        CheckReport {
            name: format!("ggn: dense product vs matrix-free ({} params)", net.param_count()),
            probes: trials * 4,
            max_error: product_err,
            tolerance: 1e-8,
        },
        CheckReport {
            name: "ggn: positive semidefinite".into(),
            probes: trials,
            max_error: psd_err,
            tolerance: 0.0,
        },
    ])
}

/// Hessian-free CG inner solve against a dense Cholesky solve of the same
/// damped system.
pub fn check_hvp(seed: u64) -> Result<CheckReport> {
    let mut rng = Rng::new(seed);
    let net = small_mlp(3, &[16, 8], 2)?;
    let batch = random_batch(&mut rng, &net, 12, false)?;
    let theta = net::init_params(&net, rng.next_u64());
    let n = theta.len();
    let lambda = 1.0;
    let sys = net::jacobian_system(&net, &theta, &batch, LossKind::Mse, net::DEFAULT_JACOBIAN_CAP)?;
    let h = ggn_assemble(LossKind::Mse, CurvatureSource::Jacobian(&sys.jacobian), batch.len())?;
    let damped = h.add_diag(&vec![1.0; n], lambda)?;
    let minus_g: Vec<f64> = sys.grad.iter().map(|v| -v).collect();
    let dense = spd_solve(&damped, &minus_g)?;
    let cg = hf_direction(&net, &theta, &batch, LossKind::Mse, &sys.grad, lambda, n, 1e-12)?;
    Ok(CheckReport {
        name: format!("hvp: CG solve vs dense solve ({n} params)"),
        probes: 1,
        max_error: vec_rel_err(&dense, &cg.x),
        tolerance: 1e-6,
    })
}

/// Adaptive-momentum constraints on random instances plus the hand-evaluated
/// 2-d example.
pub fn check_momentum(seed: u64, instances: usize) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for _ in 0..instances {
        let n = 2 + rng.below(11);
        let a = Matrix::new(n, n, random_vec(&mut rng, n * n))?;
        let h = gram(&a).add_diag(&vec![1.0; n], 0.1)?;
        let g = random_vec(&mut rng, n);
        let prev = random_vec(&mut rng, n);
        let dp = rng.uniform(0.01, 2.0);
        let xi = rng.uniform(0.05, 0.95);
        let d = match adaptive_momentum(&h, &g, &prev, dp, xi) {
            Ok(d) => d,
            Err(Error::DegenerateDirections) => continue,
            Err(e) => return Err(e),
        };
        solved += 1;
        let i_gg = dot(&g, &spd_solve(&h, &g)?);
        let dq = -xi * dp * i_gg.sqrt();
        let hd = matvec(&h, &d)?;
        worst = worst.max(rel_err(dot(&d, &hd), dp * dp));
        worst = worst.max(rel_err(dot(&g, &d), dq));
    }
    let ex = adaptive_momentum(&Matrix::identity(2), &[1.0, 0.0], &[0.0, 1.0], 1.0, 0.5)?;
    let ex_err = (ex[0] + 0.5).abs().max((ex[1] - 0.866025).abs());
    Ok(vec![
        CheckReport {
            name: "momentum: step-size and descent constraints".into(),
            probes: solved,
            max_error: worst,
            tolerance: 1e-8,
        },
        CheckReport {
            name: "momentum: 2-d worked example".into(),
            probes: 1,
            max_error: ex_err,
            tolerance: 1e-6,
        },
    ])
}
