//! Numerical oracles used to check the analytic derivatives.
//!
//! Nothing here shares code with the derivative formulas in
//! [`crate::activations`]; the finite-difference routines only ever call the
//! forward functions, and the model checks only ever call the forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::{
    aulu_eval, aulu_grad_beta, ActivationKind, ActivationSpec, AdaptiveParams,
};
use crate::autodiff::ParamStore;
use crate::models::{Arch, Model, ModelConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("finite-difference step must lie in (0, 1e-2), got {0}")]
    BadStep(f64),
    #[error("need lo < hi and at least 2 points, got [{lo}, {hi}] with {n}")]
    BadGrid { lo: f64, hi: f64, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdScheme {
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    step: f64,
    pub scheme: FdScheme,
}

impl FdConfig {
    pub fn new(step: f64) -> Result<Self, VerifyError> {
        if !(step > 0.0 && step < 1e-2) {
            return Err(VerifyError::BadStep(step));
        }
        Ok(FdConfig {
            step,
            scheme: FdScheme::Central,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-5,
            scheme: FdScheme::Central,
        }
    }
}

/// `(f(x + h) - f(x - h)) / 2h`
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, cfg: &FdConfig) -> f64 {
    let h = cfg.step;
    match cfg.scheme {
        FdScheme::Central => (f(x + h) - f(x - h)) / (2.0 * h),
    }
}

/// One-sided derivatives of the two-branch function split at `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub a: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub left_limit: f64,
    pub right_limit: f64,
    pub gap: f64,
}

/// Jump in the first derivative of
/// `h(x) = 0.5x(tanh(alpha1 x) + 1)` for `x < a`, `0.5x(tanh(alpha2 x) + 1)` for `x >= a`
/// at the split point `a`. The limits come from the closed-form branch
/// derivative, so `a = 0` gives an exact zero.
pub fn derivative_gap(a: f64, alpha1: f64, alpha2: f64) -> GapReport {
    let one_sided = |alpha: f64| {
        let z = alpha * a;
        let t = z.tanh();
        0.5 * (t + z * (1.0 - t * t) + 1.0)
    };
    let left_limit = one_sided(alpha1);
    let right_limit = one_sided(alpha2);
    GapReport {
        a,
        alpha1,
        alpha2,
        left_limit,
        right_limit,
        gap: right_limit - left_limit,
    }
}

/// `max |f - g|` over `n` equispaced points on `[lo, hi]` (endpoints included).
pub fn sup_norm_distance(
    f: impl Fn(f64) -> f64,
    g: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<f64, VerifyError> {
    let grid = grid(lo, hi, n)?;
    Ok(grid
        .map(|x| (f(x) - g(x)).abs())
        .fold(0.0, |acc: f64, d| if d > acc || d.is_nan() { d } else { acc }))
}

/// `n` equispaced points `lo + (hi - lo) * i / (n - 1)`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Result<impl Iterator<Item = f64>, VerifyError> {
    if !(lo < hi) || n < 2 {
        return Err(VerifyError::BadGrid { lo, hi, n });
    }
    let span = hi - lo;
    let last = (n - 1) as f64;
    Ok((0..n).map(move |i| lo + span * (i as f64) / last))
}

/// Mixed relative/absolute closeness used by every gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

/// Central-difference roundoff is about `eps * |f| / h`, roughly 2e-10 for
/// `|f| <= 10` at the default step, so near-zero derivatives are compared
/// against this absolute floor instead of relatively.
pub const FD_ABS_FLOOR: f64 = 1e-9;

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Tolerance { rel, abs: FD_ABS_FLOOR }
    }

    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= self.abs || diff <= self.rel * analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckRow {
    pub name: String,
    pub points: usize,
    pub skipped: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    pub worst_x: f64,
}

impl GradientCheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// The activations exercised by [`check_activation_gradients`].
pub fn checked_activations() -> Vec<ActivationSpec> {
    let mut specs = vec![
        ActivationSpec::ulu(0.3, 0.8).unwrap(),
        ActivationSpec::ulu(0.5, 0.5).unwrap(),
        ActivationSpec::ulu(0.55, 0.8).unwrap(),
        ActivationSpec::ulu(10.0, 10.0).unwrap(),
        ActivationSpec::ulu(2.0, 0.1).unwrap(),
        ActivationSpec::leaky_relu(0.01).unwrap(),
        ActivationSpec::swish(1.5).unwrap(),
    ];
    specs.extend(
        ActivationKind::ALL
            .into_iter()
            .filter(|k| k.arity() == 0)
            .map(ActivationSpec::plain),
    );
    specs
}

fn check_one(
    name: String,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    split: Option<f64>,
    grid_points: usize,
    tol: Tolerance,
    fd: &FdConfig,
) -> GradientCheckRow {
    let mut row = GradientCheckRow {
        name,
        points: 0,
        skipped: 0,
        failures: 0,
        max_abs_err: 0.0,
        worst_x: f64::NAN,
    };
    for x in grid(-10.0, 10.0, grid_points).expect("grid over [-10, 10]") {
        // A stencil straddling the formula switch measures the jump in f'', not f'.
        if split.is_some_and(|s| (x - s).abs() < fd.step) {
            row.skipped += 1;
            continue;
        }
        row.points += 1;
        let analytic = df(x);
        let numeric = fd_derivative(&f, x, fd);
        let err = (analytic - numeric).abs();
        if !tol.accepts(analytic, numeric) {
            row.failures += 1;
        }
        if err > row.max_abs_err || row.worst_x.is_nan() {
            row.max_abs_err = err;
            row.worst_x = x;
        }
    }
    row
}

/// x-derivatives of every library activation plus both AULU beta-gradients,
/// compared against central differences on `grid_points` points over [-10, 10].
pub fn check_activation_gradients(grid_points: usize, tol: Tolerance) -> Vec<GradientCheckRow> {
    let fd = FdConfig::default();
    let mut rows: Vec<GradientCheckRow> = checked_activations()
        .into_iter()
        .map(|spec| {
            check_one(
                format!("{spec} d/dx"),
                |x| spec.eval(x),
                |x| spec.dx(x),
                spec.kind().split_point(),
                grid_points,
                tol,
                &fd,
            )
        })
        .collect();

    for p in [
        AdaptiveParams::new(1.0, 1.0),
        AdaptiveParams::new(0.6, -1.3),
        AdaptiveParams::default(),
    ] {
        let name = format!("aulu[{},{}]", p.beta1, p.beta2);
        rows.push(check_one(
            format!("{name} d/dx"),
            |x| aulu_eval(x, &p),
            |x| crate::activations::aulu_dx(x, &p),
            Some(0.0),
            grid_points,
            tol,
            &fd,
        ));
        // For the beta sweeps x is fixed and the perturbation is in beta, so no
        // split exclusion is needed. The grid variable is reused as x.
        rows.push(check_beta(format!("{name} d/dbeta1"), p, 0, grid_points, tol, &fd));
        rows.push(check_beta(format!("{name} d/dbeta2"), p, 1, grid_points, tol, &fd));
    }
    rows
}

fn check_beta(
    name: String,
    p: AdaptiveParams,
    which: usize,
    grid_points: usize,
    tol: Tolerance,
    fd: &FdConfig,
) -> GradientCheckRow {
    let mut row = GradientCheckRow {
        name,
        points: 0,
        skipped: 0,
        failures: 0,
        max_abs_err: 0.0,
        worst_x: f64::NAN,
    };
    for x in grid(-10.0, 10.0, grid_points).expect("grid over [-10, 10]") {
        row.points += 1;
        let (g1, g2) = aulu_grad_beta(x, &p);
        let analytic = if which == 0 { g1 } else { g2 };
        let numeric = fd_derivative(
            |b| {
                let mut q = p;
                if which == 0 {
                    q.beta1 = b;
                } else {
                    q.beta2 = b;
                }
                aulu_eval(x, &q)
            },
            if which == 0 { p.beta1 } else { p.beta2 },
            fd,
        );
        let err = (analytic - numeric).abs();
        if !tol.accepts(analytic, numeric) {
            row.failures += 1;
        }
        if err > row.max_abs_err || row.worst_x.is_nan() {
            row.max_abs_err = err;
            row.worst_x = x;
        }
    }
    row
}

/// Small instances (each at most 10^3 weights) used by [`check_model_gradients`].
pub fn checked_models() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for act in [
        ActivationSpec::ulu(0.3, 0.8).unwrap(),
        ActivationSpec::plain(ActivationKind::Aulu),
        ActivationSpec::plain(ActivationKind::Gelu),
    ] {
        let mut mlp = ModelConfig::new(Arch::Mlp, act.clone()).with_input(4, 4, 3);
        mlp.hidden_sizes = vec![5, 4];
        let mut cnn = ModelConfig::new(Arch::SmallCnn, act.clone()).with_input(4, 4, 3);
        cnn.channel_widths = vec![2, 3];
        cnn.pool_window = 2;
        let mut attn = ModelConfig::new(Arch::MiniAttention, act).with_input(4, 4, 3);
        attn.patch_size = 2;
        attn.embed_dim = 4;
        out.extend([mlp, cnn, attn]);
    }
    out
}

/// Backprop gradients of every weight and beta against central differences of
/// the loss on a random 8-sample batch. `worst_x` holds the flat index of the
/// worst parameter, betas numbered after the weights.
pub fn check_model_gradients(tol: Tolerance, seed: u64) -> Vec<GradientCheckRow> {
    let fd = FdConfig::default();
    checked_models()
        .into_iter()
        .map(|cfg| {
            let (model, mut store) = Model::build(&cfg, seed).expect("fixture model builds");
            let mut rng = crate::rng::seeded(seed, crate::rng::STREAM_DATA);
            let (h, w) = cfg.input_shape;
            let images: Vec<f64> = (0..8 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
            let images = Tensor::from_vec(vec![8, h, w], images).expect("batch shape");
            let labels: Vec<usize> = (0..8).map(|i| i % cfg.num_classes).collect();
            // Move betas away from the symmetric default so both branches matter.
            for (i, p) in store.adaptive.iter_mut().enumerate() {
                p.beta1 = 0.6 + 0.1 * i as f64;
                p.beta2 = -0.9;
            }

            let mut pass = model.forward_loss(&store, &images, &labels).expect("forward");
            store.zero_grad();
            pass.graph.backward(pass.loss, &mut store).expect("backward");
            let analytic = store.clone();
            let loss_at = |s: &ParamStore| {
                let p = model.forward_loss(s, &images, &labels).expect("forward");
                p.graph.value(p.loss).item()
            };

            let mut row = GradientCheckRow {
                name: format!("{} {}", cfg.arch, cfg.activation),
                points: 0,
                skipped: 0,
                failures: 0,
                max_abs_err: 0.0,
                worst_x: f64::NAN,
            };
            let record = |row: &mut GradientCheckRow, a: f64, n: f64| {
                let err = (a - n).abs();
                if !tol.accepts(a, n) {
                    row.failures += 1;
                }
                if err > row.max_abs_err || row.worst_x.is_nan() {
                    row.max_abs_err = err;
                    row.worst_x = row.points as f64;
                }
                row.points += 1;
            };
            for id in 0..store.len() {
                for k in 0..store.value(id).len() {
                    let x0 = store.value(id).data()[k];
                    let numeric = fd_derivative(
                        |x| {
                            let mut s = store.clone();
                            s.value_mut(id).data_mut()[k] = x;
                            loss_at(&s)
                        },
                        x0,
                        &fd,
                    );
                    record(&mut row, analytic.grad(id).data()[k], numeric);
                }
            }
            for site in 0..store.adaptive.len() {
                for which in 0..2 {
                    let p = store.adaptive[site];
                    let (x0, a) = if which == 0 {
                        (p.beta1, analytic.adaptive[site].grad_beta1)
                    } else {
                        (p.beta2, analytic.adaptive[site].grad_beta2)
                    };
                    let numeric = fd_derivative(
                        |b| {
                            let mut s = store.clone();
                            if which == 0 {
                                s.adaptive[site].beta1 = b;
                            } else {
                                s.adaptive[site].beta2 = b;
                            }
                            loss_at(&s)
                        },
                        x0,
                        &fd,
                    );
                    record(&mut row, a, numeric);
                }
            }
            row
        })
        .collect()
}
