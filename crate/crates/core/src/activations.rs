//! Scalar activation functions with closed-form derivatives.
//!
//! The ULU family is stored in its tanh form, `0.5 * x * (tanh(alpha * x) + 1)`,
//! with a separate coefficient on each side of zero. The sigmoid form
//! `x * sigmoid(alpha' * x)` is the same curve with `alpha' = 2 * alpha`; see
//! [`convert_parameterization`].
//!
//! Every reference activation exposes its value and its x-derivative. At the
//! kink of ReLU, LeakyReLU and SELU the derivative is the right-hand one.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const ELU_ALPHA: f64 = 1.0;
/// 1 / sqrt(2 * pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActivationError {
    #[error("ULU coefficients must be positive and finite, got ({0}, {1})")]
    NonPositiveAlpha(f64, f64),
    #[error("parameter must be positive and finite, got {0}")]
    NonPositiveParameter(f64),
    #[error("parameter must be finite, got {0}")]
    NonFiniteParameter(f64),
    #[error("{kind} takes {expected} parameter(s), got {got}")]
    Arity {
        kind: ActivationKind,
        expected: usize,
        got: usize,
    },
    #[error("unknown activation `{0}`")]
    UnknownKind(String),
    #[error("malformed activation `{0}`")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationKind {
    Ulu,
    Aulu,
    Relu,
    LeakyRelu,
    Silu,
    Swish,
    Gelu,
    Mish,
    Elu,
    Selu,
    Tanh,
    Sigmoid,
    Identity,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 13] = [
        ActivationKind::Ulu,
        ActivationKind::Aulu,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Silu,
        ActivationKind::Swish,
        ActivationKind::Gelu,
        ActivationKind::Mish,
        ActivationKind::Elu,
        ActivationKind::Selu,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Identity,
    ];

    pub fn arity(self) -> usize {
        match self {
            ActivationKind::Ulu => 2,
            ActivationKind::LeakyRelu | ActivationKind::Swish => 1,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Ulu => "ulu",
            ActivationKind::Aulu => "aulu",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Silu => "silu",
            ActivationKind::Swish => "swish",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Mish => "mish",
            ActivationKind::Elu => "elu",
            ActivationKind::Selu => "selu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Identity => "identity",
        }
    }

    /// Point where the function switches formula, if it has one.
    ///
    /// For ULU and AULU the switch is C1 but the second derivative jumps, so
    /// central differences straddling it carry an O(step) error.
    pub fn split_point(self) -> Option<f64> {
        match self {
            ActivationKind::Ulu
            | ActivationKind::Aulu
            | ActivationKind::Relu
            | ActivationKind::LeakyRelu
            | ActivationKind::Elu
            | ActivationKind::Selu => Some(0.0),
            _ => None,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = ActivationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or(ActivationError::UnknownKind(s.trim().to_string()))
    }
}

/// A validated description of an activation: kind plus its fixed parameters.
///
/// ULU carries `(alpha1, alpha2)` in tanh form, LeakyReLU its negative slope,
/// Swish its gamma. Everything else (including AULU, whose coefficients are
/// learned) carries no parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActivationSpec {
    kind: ActivationKind,
    params: Vec<f64>,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind, params: &[f64]) -> Result<Self, ActivationError> {
        if params.len() != kind.arity() {
            return Err(ActivationError::Arity {
                kind,
                expected: kind.arity(),
                got: params.len(),
            });
        }
        match kind {
            ActivationKind::Ulu => {
                let (a1, a2) = (params[0], params[1]);
                if !(a1.is_finite() && a2.is_finite() && a1 > 0.0 && a2 > 0.0) {
                    return Err(ActivationError::NonPositiveAlpha(a1, a2));
                }
            }
            ActivationKind::LeakyRelu | ActivationKind::Swish => {
                if !params[0].is_finite() {
                    return Err(ActivationError::NonFiniteParameter(params[0]));
                }
            }
            _ => {}
        }
        Ok(ActivationSpec {
            kind,
            params: params.to_vec(),
        })
    }

    pub fn ulu(alpha1: f64, alpha2: f64) -> Result<Self, ActivationError> {
        Self::new(ActivationKind::Ulu, &[alpha1, alpha2])
    }

    pub fn leaky_relu(slope: f64) -> Result<Self, ActivationError> {
        Self::new(ActivationKind::LeakyRelu, &[slope])
    }

    pub fn swish(gamma: f64) -> Result<Self, ActivationError> {
        Self::new(ActivationKind::Swish, &[gamma])
    }

    /// Parameterless kinds. Panics if `kind` needs parameters.
    pub fn plain(kind: ActivationKind) -> Self {
        Self::new(kind, &[]).expect("activation kind takes parameters")
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn is_adaptive(&self) -> bool {
        self.kind == ActivationKind::Aulu
    }

    /// Value at `x`. AULU is evaluated at its default initial betas.
    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            ActivationKind::Ulu => ulu_eval(x, p[0], p[1]),
            ActivationKind::Aulu => aulu_eval(x, &AdaptiveParams::default()),
            ActivationKind::Relu => {
                if x >= 0.0 {
                    x
                } else if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            ActivationKind::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    p[0] * x
                }
            }
            ActivationKind::Silu => x * sigmoid(x),
            ActivationKind::Swish => x * sigmoid(p[0] * x),
            ActivationKind::Gelu => x * normal_cdf(x),
            ActivationKind::Mish => x * softplus(x).tanh(),
            ActivationKind::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
            ActivationKind::Selu => {
                if x >= 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Identity => x,
        }
    }

    /// Derivative with respect to `x` (right-hand at kinks).
    pub fn dx(&self, x: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            ActivationKind::Ulu => ulu_dx(x, p[0], p[1]),
            ActivationKind::Aulu => aulu_dx(x, &AdaptiveParams::default()),
            ActivationKind::Relu => {
                if x >= 0.0 {
                    1.0
                } else if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            ActivationKind::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else if x < 0.0 {
                    p[0]
                } else {
                    x
                }
            }
            ActivationKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActivationKind::Swish => {
                let g = p[0];
                let s = sigmoid(g * x);
                s + g * x * s * (1.0 - s)
            }
            ActivationKind::Gelu => normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp(),
            ActivationKind::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
            ActivationKind::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * x.exp()
                }
            }
            ActivationKind::Selu => {
                if x >= 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn batch_eval(&self, xs: &Tensor) -> Tensor {
        batch_eval(self, xs)
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if !self.params.is_empty() {
            let parts: Vec<String> = self.params.iter().map(|p| format!("{p}")).collect();
            write!(f, "({})", parts.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for ActivationSpec {
    type Err = ActivationError;

    /// Parses the canonical text form, e.g. `ulu(0.3, 0.8)`, `AULU`, `swish(1.0)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let malformed = || ActivationError::Malformed(s.to_string());
        let (name, params) = match s.find('(') {
            None => (s, Vec::new()),
            Some(open) => {
                let inner = s[open + 1..].strip_suffix(')').ok_or_else(malformed)?;
                let params = if inner.trim().is_empty() {
                    Vec::new()
                } else {
                    inner
                        .split(',')
                        .map(|t| t.trim().parse::<f64>().map_err(|_| malformed()))
                        .collect::<Result<Vec<_>, _>>()?
                };
                (&s[..open], params)
            }
        };
        let kind: ActivationKind = name.parse()?;
        ActivationSpec::new(kind, &params)
    }
}

impl TryFrom<String> for ActivationSpec {
    type Error = ActivationError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ActivationSpec> for String {
    fn from(value: ActivationSpec) -> Self {
        value.to_string()
    }
}

/// Learnable AULU coefficients. The effective branch coefficients are
/// `beta1^2` (x < 0) and `beta2^2` (x >= 0), so the sign of a beta is irrelevant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub beta1: f64,
    pub beta2: f64,
    pub grad_beta1: f64,
    pub grad_beta2: f64,
}

impl AdaptiveParams {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        AdaptiveParams {
            beta1,
            beta2,
            grad_beta1: 0.0,
            grad_beta2: 0.0,
        }
    }

    /// `(beta1^2, beta2^2)`
    pub fn coefficients(&self) -> (f64, f64) {
        (self.beta1 * self.beta1, self.beta2 * self.beta2)
    }

    /// `|beta1^2 - beta2^2|`
    pub fn lib(&self) -> f64 {
        let (c1, c2) = self.coefficients();
        (c1 - c2).abs()
    }

    pub fn zero_grad(&mut self) {
        self.grad_beta1 = 0.0;
        self.grad_beta2 = 0.0;
    }
}

impl Default for AdaptiveParams {
    /// beta1 = beta2 = sqrt(0.5): starts out as SiLU.
    fn default() -> Self {
        AdaptiveParams::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)
    }
}

/// Which of the two equivalent ULU parameterizations a coefficient is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    /// `0.5 * x * (tanh(alpha * x) + 1)`
    TanhForm,
    /// `x * sigmoid(alpha * x)`
    SigmoidForm,
}

pub fn convert_parameterization(
    alpha: f64,
    from: Parameterization,
    to: Parameterization,
) -> Result<f64, ActivationError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(ActivationError::NonPositiveParameter(alpha));
    }
    Ok(match (from, to) {
        (Parameterization::TanhForm, Parameterization::SigmoidForm) => alpha * 2.0,
        (Parameterization::SigmoidForm, Parameterization::TanhForm) => alpha / 2.0,
        _ => alpha,
    })
}

#[inline]
fn branch_eval(x: f64, alpha: f64) -> f64 {
    0.5 * x * ((alpha * x).tanh() + 1.0)
}

#[inline]
fn branch_dx(x: f64, alpha: f64) -> f64 {
    let z = alpha * x;
    let t = z.tanh();
    0.5 * (t + 1.0 + z * (1.0 - t * t))
}

/// ULU in tanh form. Coefficients are not validated here; see [`ActivationSpec::ulu`].
#[inline]
pub fn ulu_eval(x: f64, alpha1: f64, alpha2: f64) -> f64 {
    if x < 0.0 {
        branch_eval(x, alpha1)
    } else {
        branch_eval(x, alpha2)
    }
}

#[inline]
pub fn ulu_dx(x: f64, alpha1: f64, alpha2: f64) -> f64 {
    if x < 0.0 {
        branch_dx(x, alpha1)
    } else {
        branch_dx(x, alpha2)
    }
}

/// Left-branch formula evaluated at any `x`, ignoring the split.
pub fn ulu_left_branch(x: f64, alpha1: f64) -> (f64, f64) {
    (branch_eval(x, alpha1), branch_dx(x, alpha1))
}

/// Right-branch formula evaluated at any `x`, ignoring the split.
pub fn ulu_right_branch(x: f64, alpha2: f64) -> (f64, f64) {
    (branch_eval(x, alpha2), branch_dx(x, alpha2))
}

#[inline]
pub fn aulu_eval(x: f64, p: &AdaptiveParams) -> f64 {
    let (c1, c2) = p.coefficients();
    ulu_eval(x, c1, c2)
}

#[inline]
pub fn aulu_dx(x: f64, p: &AdaptiveParams) -> f64 {
    let (c1, c2) = p.coefficients();
    ulu_dx(x, c1, c2)
}

/// `(d/d beta1, d/d beta2)` of [`aulu_eval`]. Only the branch taken by `x`
/// has a nonzero entry: `beta * x^2 * sech^2(beta^2 * x)`.
#[inline]
pub fn aulu_grad_beta(x: f64, p: &AdaptiveParams) -> (f64, f64) {
    let sens = |beta: f64| {
        let t = (beta * beta * x).tanh();
        beta * x * x * (1.0 - t * t)
    };
    if x < 0.0 {
        (sens(p.beta1), 0.0)
    } else {
        (0.0, sens(p.beta2))
    }
}

/// A scalar nonlinearity with a known derivative.
pub trait ScalarActivation {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

impl ScalarActivation for ActivationSpec {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.dx(x)
    }
}

impl ScalarActivation for AdaptiveParams {
    fn value(&self, x: f64) -> f64 {
        aulu_eval(x, self)
    }

    fn derivative(&self, x: f64) -> f64 {
        aulu_dx(x, self)
    }
}

/// Elementwise application, same shape as `xs`.
pub fn batch_eval<A: ScalarActivation + ?Sized>(act: &A, xs: &Tensor) -> Tensor {
    xs.map(|x| act.value(x))
}

pub fn reference_eval(spec: &ActivationSpec, x: f64) -> f64 {
    spec.eval(x)
}

pub fn reference_dx(spec: &ActivationSpec, x: f64) -> f64 {
    spec.dx(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Standard normal CDF via erf.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}
