//! Forward and backward kernels for the focal loss family.
//!
//! Every kernel works on a raw logit `x` and a [`BinaryTarget`]. Internally
//! everything is expressed through the signed logit `x_t = (2y - 1) x`, so that
//! `p_t = sigmoid(x_t)`, `log(p_t) = log_sigmoid(x_t)` and
//! `(1 - p_t)^gamma = exp(gamma * log_sigmoid(-x_t))`. No probability is ever
//! rounded to zero before a logarithm is taken.
//!
//! The kernels are pure. Category statistics (`gamma_v`, EQLv2 weights) enter
//! as plain numbers and are never differentiated through.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::CategoryState;

/// Loss selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain sigmoid focal loss with `gamma = gamma_b` for every category.
    Fl,
    /// Equalized focal loss: per-category focusing and weighting factors.
    Efl,
    /// Focal loss scaled by the EQLv2 gradient-guided weights.
    Eqlv2Focal,
    /// Equalized quality focal loss (soft quality targets for positives).
    Eqfl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Fl, Variant::Efl, Variant::Eqlv2Focal, Variant::Eqfl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fl => "fl",
            Variant::Efl => "efl",
            Variant::Eqlv2Focal => "eqlv2_focal",
            Variant::Eqfl => "eqfl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fl" | "focal" => Ok(Variant::Fl),
            "efl" => Ok(Variant::Efl),
            "eqlv2_focal" | "eqlv2&focal" => Ok(Variant::Eqlv2Focal),
            "eqfl" => Ok(Variant::Eqfl),
            other => Err(Error::param(
                "variant",
                format!("unknown loss variant `{other}` (expected fl, efl, eqlv2_focal or eqfl)"),
            )),
        }
    }
}

/// Hyper-parameters shared by every kernel.
///
/// `alpha_t = None` disables the positive/negative balance weight entirely
/// (`alpha_eff = 1`), which is the convention used when plotting loss curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossHyperParams {
    #[serde(default = "default_alpha")]
    pub alpha_t: Option<f64>,
    #[serde(default = "default_gamma_b")]
    pub gamma_b: f64,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_alpha() -> Option<f64> {
    Some(0.25)
}
fn default_gamma_b() -> f64 {
    2.0
}
fn default_s() -> f64 {
    8.0
}
fn default_variant() -> Variant {
    Variant::Efl
}

impl Default for LossHyperParams {
    fn default() -> Self {
        Self {
            alpha_t: default_alpha(),
            gamma_b: default_gamma_b(),
            s: default_s(),
            variant: default_variant(),
        }
    }
}

impl LossHyperParams {
    pub fn new(alpha_t: f64, gamma_b: f64, s: f64, variant: Variant) -> Result<Self> {
        let hp = Self {
            alpha_t: Some(alpha_t),
            gamma_b,
            s,
            variant,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_s(mut self, s: f64) -> Self {
        self.s = s;
        self
    }

    /// Drops the balance weight, so `alpha_eff = 1` for both classes.
    pub fn without_alpha(mut self) -> Self {
        self.alpha_t = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha_t {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::param("alpha_t", format!("{a} is not in (0, 1)")));
            }
        }
        if !(self.gamma_b > 0.0 && self.gamma_b.is_finite()) {
            return Err(Error::param("gamma_b", format!("{} must be > 0", self.gamma_b)));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::param("s", format!("{} must be >= 0", self.s)));
        }
        Ok(())
    }

    /// `alpha_t` for positives, `1 - alpha_t` for negatives, `1` when disabled.
    pub fn alpha_eff(&self, target: BinaryTarget) -> f64 {
        match self.alpha_t {
            None => 1.0,
            Some(a) if target.is_positive() => a,
            Some(a) => 1.0 - a,
        }
    }
}

/// Ground truth of one category's binary classifier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinaryTarget {
    positive: bool,
    quality: f64,
}

impl BinaryTarget {
    pub const NEGATIVE: BinaryTarget = BinaryTarget {
        positive: false,
        quality: 0.0,
    };
    /// Positive with quality 1 (a hard classification label).
    pub const POSITIVE: BinaryTarget = BinaryTarget {
        positive: true,
        quality: 1.0,
    };

    pub fn from_label(y: u8) -> Result<Self> {
        match y {
            0 => Ok(Self::NEGATIVE),
            1 => Ok(Self::POSITIVE),
            _ => Err(Error::param("y", format!("{y} is not in {{0, 1}}"))),
        }
    }

    /// Positive sample with a soft quality target in `[0, 1]`.
    pub fn positive_with_quality(quality: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&quality) {
            return Err(Error::param("quality", format!("{quality} is not in [0, 1]")));
        }
        Ok(Self {
            positive: true,
            quality,
        })
    }

    pub fn is_positive(self) -> bool {
        self.positive
    }

    pub fn y(self) -> u8 {
        self.positive as u8
    }

    pub fn quality(self) -> f64 {
        self.quality
    }

    /// `2y - 1`.
    pub fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// The soft target `y'` used by EQFL: the quality for positives, 0 otherwise.
    pub fn soft_label(self) -> f64 {
        if self.positive {
            self.quality
        } else {
            0.0
        }
    }

    /// Signed logit `x_t = (2y - 1) x`.
    pub fn signed_logit(self, x: f64) -> f64 {
        self.sign() * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without forming `sigmoid(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn check_logit(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("logit {x} is not finite")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::param("gamma", format!("{gamma} must be >= 0")))
    }
}

fn check_gamma_v(hp: &LossHyperParams, gamma_v: f64) -> Result<()> {
    if (0.0..=hp.s).contains(&gamma_v) {
        Ok(())
    } else {
        Err(Error::param(
            "gamma_v",
            format!("{gamma_v} is outside [0, s = {}]", hp.s),
        ))
    }
}

/// `(1 - p_t)^gamma * (-log p_t)` as a function of the signed logit.
pub fn modulated_term(x_t: f64, gamma: f64) -> f64 {
    let modulator = (gamma * log_sigmoid(-x_t)).exp();
    -modulator * log_sigmoid(x_t)
}

/// Derivative of [`modulated_term`] with respect to `x_t`:
/// `(1 - p_t)^gamma * (gamma * p_t * log p_t + p_t - 1)`.
pub fn modulated_term_grad(x_t: f64, gamma: f64) -> f64 {
    let p_t = sigmoid(x_t);
    let one_minus_p_t = sigmoid(-x_t);
    let modulator = (gamma * log_sigmoid(-x_t)).exp();
    modulator * (gamma * p_t * log_sigmoid(x_t) - one_minus_p_t)
}

/// Sigmoid focal loss `-alpha_eff (1 - p_t)^gamma log(p_t)`.
pub fn focal_loss(x: f64, target: BinaryTarget, hp: &LossHyperParams, gamma: f64) -> Result<f64> {
    check_logit(x)?;
    check_gamma(gamma)?;
    Ok(hp.alpha_eff(target) * modulated_term(target.signed_logit(x), gamma))
}

/// `d focal_loss / dx`.
pub fn focal_grad(x: f64, target: BinaryTarget, hp: &LossHyperParams, gamma: f64) -> Result<f64> {
    check_logit(x)?;
    check_gamma(gamma)?;
    Ok(hp.alpha_eff(target) * target.sign() * modulated_term_grad(target.signed_logit(x), gamma))
}

/// Focusing factor `gamma_b + gamma_v` and weighting factor `(gamma_b + gamma_v) / gamma_b`.
pub fn efl_factors(hp: &LossHyperParams, gamma_v: f64) -> (f64, f64) {
    let gamma = hp.gamma_b + gamma_v;
    (gamma, gamma / hp.gamma_b)
}

/// Equalized focal loss of one category term.
///
/// With `gamma_v = 0` this is bit-for-bit [`focal_loss`] at `gamma = gamma_b`.
pub fn efl(x: f64, target: BinaryTarget, hp: &LossHyperParams, gamma_v: f64) -> Result<f64> {
    check_gamma_v(hp, gamma_v)?;
    let (gamma, weight) = efl_factors(hp, gamma_v);
    Ok(weight * focal_loss(x, target, hp, gamma)?)
}

pub fn efl_grad(x: f64, target: BinaryTarget, hp: &LossHyperParams, gamma_v: f64) -> Result<f64> {
    check_gamma_v(hp, gamma_v)?;
    let (gamma, weight) = efl_factors(hp, gamma_v);
    Ok(weight * focal_grad(x, target, hp, gamma)?)
}

fn check_w_t(w_t: f64) -> Result<()> {
    if w_t > 0.0 && w_t.is_finite() {
        Ok(())
    } else {
        Err(Error::param("w_t", format!("{w_t} must be > 0")))
    }
}

/// Focal loss scaled by a gradient-guided weight `w_t`.
pub fn eqlv2_focal(
    x: f64,
    target: BinaryTarget,
    hp: &LossHyperParams,
    gamma: f64,
    w_t: f64,
) -> Result<f64> {
    check_w_t(w_t)?;
    Ok(w_t * focal_loss(x, target, hp, gamma)?)
}

pub fn eqlv2_focal_grad(
    x: f64,
    target: BinaryTarget,
    hp: &LossHyperParams,
    gamma: f64,
    w_t: f64,
) -> Result<f64> {
    check_w_t(w_t)?;
    Ok(w_t * focal_grad(x, target, hp, gamma)?)
}

/// `|y' - p|` evaluated so that the `y' = 0` and `y' = 1` cases keep full
/// relative precision.
fn quality_distance(x: f64, soft: f64) -> f64 {
    if soft == 0.0 {
        sigmoid(x)
    } else if soft == 1.0 {
        sigmoid(-x)
    } else {
        (soft - sigmoid(x)).abs()
    }
}

fn soft_cross_entropy(x: f64, soft: f64) -> f64 {
    let mut ce = 0.0;
    if soft != 0.0 {
        ce -= soft * log_sigmoid(x);
    }
    if soft != 1.0 {
        ce -= (1.0 - soft) * log_sigmoid(-x);
    }
    ce
}

/// Equalized quality focal loss on logit `x`.
///
/// `-w (|y' - p|)^f (y' log p + (1 - y') log(1 - p))` with `p = sigmoid(x)`,
/// `f = gamma_b + gamma_v`, `w = f / gamma_b`. The balance weight `alpha_t` does
/// not enter this loss.
pub fn eqfl(x: f64, target: BinaryTarget, hp: &LossHyperParams, gamma_v: f64) -> Result<f64> {
    check_logit(x)?;
    check_gamma_v(hp, gamma_v)?;
    let soft = target.soft_label();
    if !(0.0..=1.0).contains(&soft) {
        return Err(Error::param("quality", format!("{soft} is not in [0, 1]")));
    }
    let (focus, weight) = efl_factors(hp, gamma_v);
    let distance = quality_distance(x, soft);
    Ok(weight * distance.powf(focus) * soft_cross_entropy(x, soft))
}

/// Analytical `d eqfl / dx`.
///
/// Writing `d = |y' - p|` and `CE` for the soft cross entropy,
/// `dL/dx = w sgn(p - y') d^(f-1) (f p (1 - p) CE + d^2)`.
pub fn eqfl_grad(x: f64, target: BinaryTarget, hp: &LossHyperParams, gamma_v: f64) -> Result<f64> {
    check_logit(x)?;
    check_gamma_v(hp, gamma_v)?;
    let soft = target.soft_label();
    if !(0.0..=1.0).contains(&soft) {
        return Err(Error::param("quality", format!("{soft} is not in [0, 1]")));
    }
    let (focus, weight) = efl_factors(hp, gamma_v);
    let distance = quality_distance(x, soft);
    if distance == 0.0 {
        return Ok(0.0);
    }
    let p = sigmoid(x);
    let direction = if soft == 0.0 {
        1.0
    } else if soft == 1.0 {
        -1.0
    } else {
        (p - soft).signum()
    };
    let slope = p * sigmoid(-x);
    let inner = focus * slope * soft_cross_entropy(x, soft) + distance * distance;
    Ok(weight * direction * distance.powf(focus - 1.0) * inner)
}

/// Loss value and gradient for one element of a batch, dispatched by variant.
pub fn element_loss_grad(
    x: f64,
    target: BinaryTarget,
    hp: &LossHyperParams,
    state: &CategoryState,
    category: usize,
) -> Result<(f64, f64)> {
    match hp.variant {
        Variant::Fl => Ok((
            focal_loss(x, target, hp, hp.gamma_b)?,
            focal_grad(x, target, hp, hp.gamma_b)?,
        )),
        Variant::Efl => {
            let gamma_v = state.gamma_v()[category];
            Ok((efl(x, target, hp, gamma_v)?, efl_grad(x, target, hp, gamma_v)?))
        }
        Variant::Eqlv2Focal => {
            let w_t = state.eqlv2_weight(category, target.is_positive());
            Ok((
                eqlv2_focal(x, target, hp, hp.gamma_b, w_t)?,
                eqlv2_focal_grad(x, target, hp, hp.gamma_b, w_t)?,
            ))
        }
        Variant::Eqfl => {
            let gamma_v = state.gamma_v()[category];
            Ok((eqfl(x, target, hp, gamma_v)?, eqfl_grad(x, target, hp, gamma_v)?))
        }
    }
}

/// Reduced batch loss and its gradient with respect to every logit.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub grads: Array2<f64>,
    pub num_positives: usize,
}

/// Sums the per-element loss over an `N x C` batch and divides by
/// `max(1, #positives)`. Rows may be evaluated on several threads, but row
/// sums are always reduced in row order so the result does not depend on the
/// thread count.
pub fn batch_loss(
    scores: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, BinaryTarget>,
    hp: &LossHyperParams,
    state: &CategoryState,
) -> Result<BatchLoss> {
    hp.validate()?;
    if scores.dim() != targets.dim() {
        return Err(Error::Contract(format!(
            "scores are {:?} but targets are {:?}",
            scores.dim(),
            targets.dim()
        )));
    }
    let (rows, cols) = scores.dim();
    if cols != state.num_categories() {
        return Err(Error::Contract(format!(
            "batch has {cols} categories but state tracks {}",
            state.num_categories()
        )));
    }
    state.check_compatible(hp)?;

    let num_positives = targets.iter().filter(|t| t.is_positive()).count();
    let norm = num_positives.max(1) as f64;

    let per_row: Vec<(f64, Vec<f64>)> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0;
            let mut grads = Vec::with_capacity(cols);
            for j in 0..cols {
                let (l, g) = element_loss_grad(scores[[i, j]], targets[[i, j]], hp, state, j)?;
                sum += l;
                grads.push(g / norm);
            }
            Ok((sum, grads))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut grads = Array2::zeros((rows, cols));
    for (i, (sum, row)) in per_row.into_iter().enumerate() {
        total += sum;
        for (j, g) in row.into_iter().enumerate() {
            grads[[i, j]] = g;
        }
    }
    Ok(BatchLoss {
        total: total / norm,
        grads,
        num_positives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const POS: BinaryTarget = BinaryTarget::POSITIVE;
    const NEG: BinaryTarget = BinaryTarget::NEGATIVE;

    fn unit() -> LossHyperParams {
        LossHyperParams::default().without_alpha()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn focal_loss_at_zero_logit() {
        let hp = unit();
        let ln2 = std::f64::consts::LN_2;
        let l = focal_loss(0.0, POS, &hp, 2.0).unwrap();
        assert!(close(l, 0.25 * ln2, 1e-15));
        assert!(close(l, 0.173286, 1e-6));
        assert_eq!(focal_loss(0.0, NEG, &hp, 2.0).unwrap(), l);
    }

    #[test]
    fn focal_loss_saturates() {
        let hp = unit();
        assert_eq!(focal_loss(800.0, POS, &hp, 2.0).unwrap(), 0.0);
        assert_eq!(focal_grad(800.0, POS, &hp, 2.0).unwrap(), 0.0);
        // Hard side stays finite and roughly linear in |x|.
        let l = focal_loss(-800.0, POS, &hp, 2.0).unwrap();
        assert!(close(l, 800.0, 1e-9));
    }

    #[test]
    fn focal_grad_at_zero_logit() {
        let hp = unit();
        let expected = 0.25 * ((0.5f64).ln() + 0.5 - 1.0);
        let g = focal_grad(0.0, POS, &hp, 2.0).unwrap();
        assert!(close(g, expected, 1e-15));
        assert!(close(g, -0.298287, 1e-6));
        assert!(close(focal_grad(0.0, NEG, &hp, 2.0).unwrap(), 0.298287, 1e-6));
    }

    #[test]
    fn errors_on_bad_inputs() {
        let hp = unit();
        assert!(matches!(focal_loss(f64::NAN, POS, &hp, 2.0), Err(Error::Domain(_))));
        assert!(matches!(focal_loss(f64::INFINITY, POS, &hp, 2.0), Err(Error::Domain(_))));
        assert!(matches!(focal_loss(0.0, POS, &hp, -1.0), Err(Error::Parameter { .. })));
        assert!(efl(0.0, POS, &hp, 8.5).is_err());
        assert!(efl(0.0, POS, &hp, -0.1).is_err());
        assert!(eqlv2_focal(0.0, POS, &hp, 2.0, 0.0).is_err());
        assert!(BinaryTarget::positive_with_quality(1.2).is_err());
        assert!(BinaryTarget::from_label(2).is_err());
        assert!(LossHyperParams::new(1.0, 2.0, 8.0, Variant::Efl).is_err());
        assert!(LossHyperParams::new(0.25, 0.0, 8.0, Variant::Efl).is_err());
        assert!(LossHyperParams::new(0.25, 2.0, -1.0, Variant::Efl).is_err());
    }

    #[test]
    fn efl_reduces_to_focal() {
        let hp = LossHyperParams::default();
        for &x in &[-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0] {
            for t in [POS, NEG] {
                assert_eq!(efl(x, t, &hp, 0.0).unwrap(), focal_loss(x, t, &hp, 2.0).unwrap());
                assert_eq!(efl_grad(x, t, &hp, 0.0).unwrap(), focal_grad(x, t, &hp, 2.0).unwrap());
            }
        }
    }

    #[test]
    fn efl_rare_category_values() {
        let hp = unit();
        let l = efl(0.0, POS, &hp, 8.0).unwrap();
        assert!(close(l, 5.0 * 0.5f64.powi(10) * std::f64::consts::LN_2, 1e-15));
        assert!(close(l, 0.003385, 1e-6));
        assert!(efl(-5.0, POS, &hp, 8.0).unwrap() > efl(-5.0, POS, &hp, 0.0).unwrap());

        let g = efl_grad(0.0, POS, &hp, 6.4).unwrap();
        let closed = 4.2 * 0.5f64.powf(8.4) * (8.4 * 0.5 * 0.5f64.ln() + 0.5 - 1.0);
        assert!(close(g, closed, 1e-14));
        assert!(close(g, -0.042438, 5e-5));
    }

    #[test]
    fn eqlv2_focal_is_scaled_focal() {
        let hp = unit();
        assert_eq!(eqlv2_focal(0.3, POS, &hp, 2.0, 1.0).unwrap(), focal_loss(0.3, POS, &hp, 2.0).unwrap());
        assert!(close(eqlv2_focal(0.0, POS, &hp, 2.0, 2.0).unwrap(), 0.346574, 1e-6));
        assert!(close(eqlv2_focal_grad(0.0, POS, &hp, 2.0, 2.0).unwrap(), -0.596574, 1e-6));
        assert_eq!(eqlv2_focal(900.0, POS, &hp, 2.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn eqfl_values() {
        let hp = unit();
        let ln2 = std::f64::consts::LN_2;
        assert!(close(eqfl(0.0, NEG, &hp, 0.0).unwrap(), 0.25 * ln2, 1e-15));
        let q = BinaryTarget::positive_with_quality(0.8).unwrap();
        assert!(close(eqfl(0.0, q, &hp, 0.0).unwrap(), 0.09 * ln2, 1e-15));
        assert!(close(eqfl(0.0, q, &hp, 0.0).unwrap(), 0.062383, 1e-6));
        // calibrated positive sits at the minimum
        let logit = (0.8f64 / 0.2).ln();
        assert!(eqfl(logit, q, &hp, 0.0).unwrap() < 1e-30);
        assert!(eqfl_grad(logit, q, &hp, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn signed_logit_identity() {
        for &x in &[-30.0, -3.0, -0.1, 0.0, 0.7, 12.0] {
            let p = sigmoid(x);
            assert!(close(sigmoid(POS.signed_logit(x)), p, 1e-15));
            assert!(close(sigmoid(NEG.signed_logit(x)), 1.0 - p, 1e-15));
        }
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!(close(log_sigmoid(0.0), -std::f64::consts::LN_2, 1e-16));
        assert!(close(log_sigmoid(-1000.0), -1000.0, 1e-12));
        assert!(log_sigmoid(1000.0) == 0.0);
        assert!(close(log_sigmoid(40.0), -(-40.0f64).exp(), 1e-30));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("seesaw".parse::<Variant>().is_err());
    }
}
