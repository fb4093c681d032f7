//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or cannot run.
//!
//! Run a subset with `cargo test -p lmnet-core --test acceptance -- A3 A8`.
//! The MNIST criterion reads IDX files from `$LMNET_MNIST_DIR`, defaulting to
//! `data/mnist` at the workspace root.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lmnet::harness::{self, ExperimentConfig, RunRecord};
use lmnet::linalg::{dot, norm, spd_solve};
use lmnet::net::{self, Activation, Batch, LayerSpec, Network, Shape};
use lmnet::optim_baselines::{hf_direction, LbfgsState};
use lmnet::optim_lm::{
    adaptive_momentum, gauss_newton_system, line_search_grid, lm_step, uphill_accept, LmConfig, LmState,
};
use lmnet::rng::Rng;
use lmnet::{CeCurvature, Error, LossKind, Matrix};
use nalgebra::{DMatrix, DVector};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_config(name: &str) -> Res<ExperimentConfig> {
    let path = workspace_root().join("configs").join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = harness::parse_config(&text)?;
    cfg.out = None;
    Ok(cfg)
}

fn final_loss(records: &[RunRecord]) -> f64 {
    match records.last() {
        Some(r) if r.train_loss.is_finite() => r.train_loss,
        _ => f64::INFINITY,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(1e-300)
}

fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Res<Network> {
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
    Ok(Network::new(Shape::flat(inputs), layers)?)
}

fn random_batch(rng: &mut Rng, n: usize, d: usize, c: usize, loss: LossKind) -> Res<Batch> {
    let inputs = Matrix::new(n, d, (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let mut targets = Matrix::zeros(n, c);
    for i in 0..n {
        match loss {
            LossKind::SoftmaxCrossEntropy => targets[(i, rng.below(c))] = 1.0,
            LossKind::Mse => (0..c).for_each(|j| targets[(i, j)] = rng.normal()),
        }
    }
    Ok(Batch::new(inputs, targets)?)
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

// A1: central differences along random unit directions.
fn gradient_oracle() -> Res<Verdict> {
    const H: f64 = 1e-5;
    const PROBES: usize = 100;
    let mut rng = Rng::new(101);
    let cases = [
        ("ELU MLP/MSE", Network::sine_mlp(32)?, LossKind::Mse, 16),
        ("ELU MLP/CE", mlp(4, &[32], 3)?, LossKind::SoftmaxCrossEntropy, 16),
        ("CNN/CE", Network::mnist_cnn(), LossKind::SoftmaxCrossEntropy, 3),
        ("CNN/MSE", Network::mnist_cnn(), LossKind::Mse, 3),
    ];
    let mut worst: f64 = 0.0;
    let mut where_ = "";
    for (name, net, loss, n) in &cases {
        let batch = random_batch(&mut rng, *n, net.input_len(), net.output_len(), *loss)?;
        let theta = net::init_params(net, rng.next_u64());
        let (_, g) = net::grad(net, &theta, &batch, *loss)?;
        for _ in 0..PROBES {
            let mut v = normals(&mut rng, theta.len());
            let len = norm(&v);
            v.iter_mut().for_each(|x| *x /= len);
            let at = |s: f64| -> Vec<f64> { theta.iter().zip(&v).map(|(t, d)| t + s * d).collect() };
            let fd = (net::loss_value(net, &at(H), &batch, *loss)? - net::loss_value(net, &at(-H), &batch, *loss)?)
                / (2.0 * H);
            let e = (fd - dot(&g, &v)).abs() / fd.abs().max(dot(&g, &v).abs()).max(1e-8);
            if e > worst {
                worst = e;
                where_ = name;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-4,
        format!(
            "max relative error {worst:.2e} ({where_}) over {} probes, tol 1e-4",
            cases.len() * PROBES
        ),
    ))
}

// A2: dense curvature against matrix-free products, eigenvalues and CG.
fn curvature_oracles() -> Res<Verdict> {
    let mut rng = Rng::new(202);
    let net = mlp(3, &[16, 8], 2)?;
    let n = net.param_count();
    let batch = random_batch(&mut rng, 12, 3, 2, LossKind::Mse)?;
    let theta = net::init_params(&net, 5);

    // (a) (1/N) JᵀJ v from an explicit Jacobian
    let j = to_dmatrix(&net::output_jacobian(&net, &theta, &batch)?);
    let dense = j.transpose() * &j / batch.len() as f64;
    let mut prod_err: f64 = 0.0;
    for _ in 0..10 {
        let v = normals(&mut rng, n);
        let want = &dense * DVector::from_column_slice(&v);
        let got = net::gn_vector_product(&net, &theta, &batch, LossKind::Mse, &v)?;
        prod_err = prod_err.max(vec_rel(want.as_slice(), &got));
    }

    // (b) smallest eigenvalue of every production curvature matrix
    let mut eig_ratio = f64::INFINITY;
    let ce_batch = random_batch(&mut rng, 12, 3, 2, LossKind::SoftmaxCrossEntropy)?;
    for (b, loss, curv) in [
        (&batch, LossKind::Mse, CeCurvature::OuterProduct),
        (&ce_batch, LossKind::SoftmaxCrossEntropy, CeCurvature::OuterProduct),
        (&ce_batch, LossKind::SoftmaxCrossEntropy, CeCurvature::Exact),
    ] {
        let sys = gauss_newton_system(&net, &theta, b, loss, curv, net::DEFAULT_JACOBIAN_CAP)?;
        let h = to_dmatrix(&sys.curvature);
        let trace = h.trace();
        let min = h.symmetric_eigen().eigenvalues.min();
        eig_ratio = eig_ratio.min(min / trace);
    }

    // (c) CG inner solve against the dense damped system
    let lambda = 1.0;
    let sys = gauss_newton_system(&net, &theta, &batch, LossKind::Mse, CeCurvature::OuterProduct, net::DEFAULT_JACOBIAN_CAP)?;
    let damped = sys.curvature.add_diag(&vec![1.0; n], lambda)?;
    let minus_g: Vec<f64> = sys.grad.iter().map(|v| -v).collect();
    let direct = spd_solve(&damped, &minus_g)?;
    let cg = hf_direction(&net, &theta, &batch, LossKind::Mse, &sys.grad, lambda, n, 1e-12)?;
    let cg_err = vec_rel(&direct, &cg.x);

    Ok(verdict(
        prod_err <= 1e-8 && eig_ratio >= -1e-10 && cg_err <= 1e-6,
        format!(
            "{n} params: product rel err {prod_err:.2e} (tol 1e-8); min eig/trace {eig_ratio:.2e} (tol -1e-10); \
             CG vs dense rel err {cg_err:.2e} (tol 1e-6)"
        ),
    ))
}

// A3: both momentum constraints, with I_GG from an independent Cholesky.
fn momentum_constraints() -> Res<Verdict> {
    let mut rng = Rng::new(303);
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for _ in 0..1000 {
        let n = 2 + rng.below(11);
        let a = DMatrix::from_iterator(n, n, normals(&mut rng, n * n));
        let h = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let g = normals(&mut rng, n);
        let prev = normals(&mut rng, n);
        let dp = rng.uniform(0.01, 2.0);
        let xi = rng.uniform(0.05, 0.95);
        let hm = Matrix::new(n, n, h.transpose().as_slice().to_vec())?;
        let d = match adaptive_momentum(&hm, &g, &prev, dp, xi) {
            Ok(d) => d,
            Err(Error::DegenerateDirections) => continue,
            Err(e) => return Err(e.into()),
        };
        solved += 1;
        let gv = DVector::from_column_slice(&g);
        let hinv_g = h.clone().cholesky().ok_or("oracle Cholesky failed")?.solve(&gv);
        let dq = -xi * dp * gv.dot(&hinv_g).sqrt();
        let dv = DVector::from_column_slice(&d);
        worst = worst.max(rel(dv.dot(&(&h * &dv)), dp * dp));
        worst = worst.max(rel(gv.dot(&dv), dq));
    }
    let ex = adaptive_momentum(&Matrix::identity(2), &[1.0, 0.0], &[0.0, 1.0], 1.0, 0.5)?;
    let ex_err = (ex[0] + 0.5).abs().max((ex[1] - 0.866025).abs());
    Ok(verdict(
        solved == 1000 && worst <= 1e-8 && ex_err <= 1e-6,
        format!(
            "{solved}/1000 instances solved, max constraint rel err {worst:.2e} (tol 1e-8); \
             worked example ({:.6}, {:.6}) err {ex_err:.1e}",
            ex[0], ex[1]
        ),
    ))
}

// A4: one undamped Gauss-Newton step on a linear least-squares problem.
fn gauss_newton_exactness() -> Res<Verdict> {
    let mut rng = Rng::new(404);
    let (n, d, c) = (30, 3, 2);
    let net = Network::new(
        Shape::flat(d),
        vec![LayerSpec::Dense {
            inputs: d,
            outputs: c,
            activation: Activation::Identity,
        }],
    )?;
    let batch = random_batch(&mut rng, n, d, c, LossKind::Mse)?;
    let cfg = LmConfig {
        lambda0: 1e-12,
        momentum: false,
        ..LmConfig::default()
    };
    let mut state = LmState::new(net::init_params(&net, 9), &cfg);
    let report = lm_step(&mut state, &net, &batch, LossKind::Mse, &cfg)?;

    // Least squares on [X 1] by QR.
    let mut xa = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        for k in 0..d {
            xa[(i, k)] = batch.inputs()[(i, k)];
        }
        xa[(i, d)] = 1.0;
    }
    let y = to_dmatrix(batch.targets());
    let qr = xa.clone().qr();
    let w = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).ok_or("singular design")?;
    let fitted = &xa * w;
    let got = to_dmatrix(&net::forward(&net, &state.theta, &batch)?);
    let err = (&got - &fitted).norm() / fitted.norm();
    Ok(verdict(
        report.accepted && err <= 1e-6,
        format!("accepted={}, fitted values rel err {err:.2e} vs QR solution (tol 1e-6)", report.accepted),
    ))
}

// A5: modified LM against Adam and SGD on the sine task.
fn sine_separation() -> Res<Verdict> {
    let start = Instant::now();
    let lm = final_loss(&harness::run_experiment(&load_config("sine_lm.cfg")?)?);
    let adam = final_loss(&harness::run_experiment(&load_config("sine_adam.cfg")?)?);
    let sgd_records = harness::run_experiment(&load_config("sine_sgd.cfg")?)?;
    let sgd = final_loss(&sgd_records);
    let sgd_note = if harness::diverged(&sgd_records) {
        format!("diverged at iter {}", sgd_records.last().map_or(0, |r| r.iter))
    } else {
        format!("{sgd:.3e}")
    };
    let elapsed = start.elapsed();
    Ok(verdict(
        lm <= 0.01 && adam >= 5.0 * lm && sgd >= 5.0 * lm && elapsed < Duration::from_secs(120),
        format!(
            "LM {lm:.3e} (≤ 1e-2), Adam {adam:.3e}, SGD {sgd_note} (both ≥ {:.3e}); {:.1}s",
            5.0 * lm,
            elapsed.as_secs_f64()
        ),
    ))
}

// A6: epochs to 90% test accuracy on the MNIST subset.
fn mnist_epochs() -> Res<Verdict> {
    let dir = std::env::var_os("LMNET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"));
    if !lmnet::data::MNIST_FILES.iter().all(|f| dir.join(f).is_file()) {
        return Ok(Verdict::NotRun(format!("no MNIST IDX files in {}", dir.display())));
    }
    let start = Instant::now();
    let mut epochs = Vec::new();
    for name in ["mnist_lm.cfg", "mnist_adam.cfg"] {
        let mut cfg = load_config(name)?;
        cfg.mnist_dir = dir.clone();
        cfg.stop_at_test_acc = Some(0.9);
        let records = harness::run_experiment(&cfg)?;
        let best = records.iter().filter_map(|r| r.test_acc).fold(0.0, f64::max);
        epochs.push((harness::epochs_to_accuracy(&records, 0.9), cfg.epochs, best));
    }
    let elapsed = start.elapsed();
    let show = |(e, cap, best): (Option<usize>, usize, f64)| match e {
        Some(e) => format!("{e} epochs"),
        None => format!("not within {cap} epochs (best {best:.3})"),
    };
    let (lm, adam) = (epochs[0].0, epochs[1].0);
    let ok = match (lm, adam) {
        (Some(l), Some(a)) => l <= 8 && a > l,
        (Some(l), None) => l <= 8 && epochs[1].1 > l,
        _ => false,
    };
    Ok(verdict(
        ok && elapsed < Duration::from_secs(900),
        format!(
            "LM {}, Adam {}; {:.0}s",
            show(epochs[0]),
            show(epochs[1]),
            elapsed.as_secs_f64()
        ),
    ))
}

// A7: full modified LM against plain LM over five seeds.
fn ablation_direction() -> Res<Verdict> {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in [42, 1, 2, 3, 4] {
        let mut full = load_config("sine_lm.cfg")?;
        let mut plain = load_config("sine_lm_vanilla.cfg")?;
        full.seed = seed;
        plain.seed = seed;
        let f = final_loss(&harness::run_experiment(&full)?);
        let p = final_loss(&harness::run_experiment(&plain)?);
        if f <= p {
            wins += 1;
        }
        pairs.push(format!("{seed}: {f:.3e}/{p:.3e}"));
    }
    Ok(verdict(
        wins >= 4,
        format!("full ≤ plain on {wins}/5 seeds (need 4); full/plain {}", pairs.join(", ")),
    ))
}

// A8: two-loop recursion against the dense inverse-Hessian recursion.
fn lbfgs_recursion() -> Res<Verdict> {
    let mut rng = Rng::new(808);
    let n = 10;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..5 {
        let m = DMatrix::from_iterator(n, n, normals(&mut rng, n * n));
        let a = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * 0.5;
        let b = DVector::from_column_slice(&normals(&mut rng, n));
        let grad = |x: &DVector<f64>| &a * x - &b;
        let mut x = DVector::from_column_slice(&normals(&mut rng, n));
        let mut state = LbfgsState::new(usize::MAX, 0.3);
        let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        for _ in 0..20 {
            let g = grad(&x);
            let d = state.direction(g.as_slice())?;

            let mut hinv = match pairs.last() {
                Some((s, y)) => DMatrix::identity(n, n) * (s.dot(y) / y.dot(y)),
                None => DMatrix::identity(n, n),
            };
            for (s, y) in &pairs {
                let rho = 1.0 / y.dot(s);
                let left = DMatrix::identity(n, n) - s * y.transpose() * rho;
                let right = DMatrix::identity(n, n) - y * s.transpose() * rho;
                hinv = &left * hinv * &right + s * s.transpose() * rho;
            }
            let want = -(&hinv * &g);
            worst = worst.max(vec_rel(want.as_slice(), &d));
            compared += 1;

            let x_new = &x + DVector::from_column_slice(&d) * 0.3;
            let s = &x_new - &x;
            let y = grad(&x_new) - &g;
            if state.push(s.as_slice().to_vec(), y.as_slice().to_vec())? {
                pairs.push((s, y));
            }
            x = x_new;
        }
    }
    Ok(verdict(
        worst <= 1e-10,
        format!("{compared} directions, max rel err {worst:.2e} (tol 1e-10)"),
    ))
}

fn sine_batch(seed: u64) -> Res<Batch> {
    let ds = lmnet::data::gen_sine(200, -2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI, 0.1, seed)?;
    Ok(ds.samples().clone())
}

// A9: damping monotonicity, rejected steps, uphill table, line search.
fn mechanism_units() -> Res<Verdict> {
    let mut problems = Vec::new();
    let sine = Network::sine_mlp(32)?;
    for (seed, cfg) in [(1, LmConfig::default()), (2, LmConfig::vanilla())] {
        problems.push((sine.clone(), sine_batch(seed)?, LossKind::Mse, cfg, seed));
    }
    let mut rng = Rng::new(909);
    let clf = mlp(4, &[12], 3)?;
    let ce_batch = random_batch(&mut rng, 60, 4, 3, LossKind::SoftmaxCrossEntropy)?;
    problems.push((clf, ce_batch, LossKind::SoftmaxCrossEntropy, LmConfig::default(), 3));

    let mut steps = 0;
    let mut rejected = 0;
    let mut damping_ok = true;
    let mut rejected_ok = true;
    for (net, batch, loss, cfg, seed) in &problems {
        let mut state = LmState::new(net::init_params(net, *seed), cfg);
        for _ in 0..100 {
            let d_before = state.damping.d.clone();
            let theta_before: Vec<u64> = state.theta.iter().map(|v| v.to_bits()).collect();
            let r = lm_step(&mut state, net, batch, *loss, cfg)?;
            steps += 1;
            damping_ok &= state.damping.d.iter().zip(&d_before).all(|(a, b)| a >= b);
            if !r.accepted {
                rejected += 1;
                rejected_ok &= state.theta.iter().map(|v| v.to_bits()).eq(theta_before.iter().copied());
            }
        }
    }

    let x = [1.0, 0.0];
    let same = [2.0, 0.0];
    let opposite = [-1.0, 0.0];
    let cos_half = [0.5, 0.75f64.sqrt()];
    let mut table_ok = true;
    for (new, f_new) in [(&same, 0.9), (&same, 1.0), (&same, 1.1), (&opposite, 0.5), (&opposite, 1.5)] {
        table_ok &= uphill_accept(new, &x, 0.0, f_new, 1.0) == (f_new <= 1.0);
    }
    table_ok &= uphill_accept(&cos_half, &x, 1.0, 1.999, 1.0);
    table_ok &= !uphill_accept(&cos_half, &x, 1.0, 2.001, 1.0);

    let ls = line_search_grid(|t: &[f64]| Ok(t[0] * t[0]), &[1.0], &[-1.0])?;
    let ls_ok = ls.lr == 1.0 && ls.loss == 0.0;

    Ok(verdict(
        damping_ok && rejected_ok && rejected > 0 && table_ok && ls_ok,
        format!(
            "damping monotone over {steps} steps: {damping_ok}; {rejected} rejected steps bit-identical: {rejected_ok}; \
             uphill table: {table_ok}; line search lr {} (want 1)",
            ls.lr
        ),
    ))
}

fn strip_wall_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            if cols.len() > 2 {
                cols.remove(2);
            }
            cols.join(",")
        })
        .collect()
}

// A10: every reference config twice, comparing the CSVs.
fn determinism() -> Res<Verdict> {
    let dir = tempfile::tempdir()?;
    let mnist_dir = std::env::var_os("LMNET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"));
    let mut names: Vec<String> = std::fs::read_dir(workspace_root().join("configs"))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".cfg"))
        .collect();
    names.sort();
    let mut checked = Vec::new();
    let mut differing = Vec::new();
    for name in &names {
        let mut cfg = load_config(name)?;
        if cfg.task == harness::Task::Mnist {
            if !mnist_dir.join(lmnet::data::MNIST_FILES[0]).is_file() {
                continue;
            }
            cfg.mnist_dir = mnist_dir.clone();
            cfg.max_iters = 2;
        }
        let mut runs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{name}.{k}.csv"));
            cfg.out = Some(out.clone());
            harness::run_experiment(&cfg)?;
            runs.push(strip_wall_time(&std::fs::read_to_string(out)?));
        }
        if runs[0] != runs[1] {
            differing.push(name.clone());
        }
        checked.push(name.clone());
    }
    Ok(verdict(
        differing.is_empty() && !checked.is_empty(),
        format!(
            "{} configs run twice ({}); differing: {}",
            checked.len(),
            checked.join(" "),
            if differing.is_empty() { "none".into() } else { differing.join(" ") }
        ),
    ))
}

type Criterion = (&'static str, &'static str, fn() -> Res<Verdict>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("A1", "gradient oracle", gradient_oracle),
        ("A2", "curvature oracles", curvature_oracles),
        ("A3", "momentum constraints", momentum_constraints),
        ("A4", "Gauss-Newton exactness", gauss_newton_exactness),
        ("A5", "sine convergence separation", sine_separation),
        ("A6", "MNIST epochs to 90%", mnist_epochs),
        ("A7", "ablation direction", ablation_direction),
        ("A8", "L-BFGS recursion oracle", lbfgs_recursion),
        ("A9", "mechanism unit properties", mechanism_units),
        ("A10", "determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, title, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match run() {
            Ok(Verdict::Pass(d)) => ("PASS", d),
            Ok(Verdict::Fail(d)) => ("FAIL", d),
            Ok(Verdict::NotRun(d)) => ("NOT RUN", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if tag != "PASS" {
            failed += 1;
        }
        println!(
            "{id:<4} {tag:<7} {title}: {detail} [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria not met");
        std::process::exit(1);
    }
}
