//! Finite-difference verification of the analytical loss gradients.
//!
//! The numerical side only ever evaluates forward kernels; the analytical
//! side is passed in separately so a deliberately broken gradient can be
//! checked as a negative control.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{self, BinaryTarget, LossHyperParams, Variant};

/// `(f(x + h) - f(x - h)) / (2h)`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    pub variant: Variant,
    pub hp: LossHyperParams,
    pub xs: Vec<f64>,
    /// `gamma_v` values (EFL, EQFL) or focusing exponents minus `gamma_b`
    /// (FL ignores them, EQLv2&Focal uses `gamma_b + value`).
    pub gamma_vs: Vec<f64>,
    pub ys: Vec<u8>,
    /// Quality targets for positive EQFL samples.
    pub qualities: Vec<f64>,
    /// Weights for EQLv2&Focal.
    pub w_ts: Vec<f64>,
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Points whose analytical gradient is below this are judged by `atol` alone.
    pub plateau: f64,
}

impl CheckSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            hp: LossHyperParams::default().with_variant(variant),
            xs: vec![-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0],
            gamma_vs: vec![0.0, 2.0, 6.4, 8.0],
            ys: vec![0, 1],
            qualities: vec![0.0, 0.3, 0.8, 1.0],
            w_ts: vec![0.5, 1.0, 2.0],
            h: 1e-4,
            rtol: 1e-5,
            atol: 1e-9,
            plateau: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.h > 0.0) {
            return Err(Error::param("h", "must be > 0"));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::param("tolerance", "must be > 0"));
        }
        Ok(())
    }

    /// Every `(x, target, gamma_v, w_t)` tuple the grid expands to.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let mut targets = Vec::new();
        for &y in &self.ys {
            let t = BinaryTarget::from_label(y)?;
            if self.variant == Variant::Eqfl && t.is_positive() {
                for &q in &self.qualities {
                    targets.push(BinaryTarget::positive_with_quality(q)?);
                }
            } else {
                targets.push(t);
            }
        }
        let w_ts: &[f64] = if self.variant == Variant::Eqlv2Focal { &self.w_ts } else { &[1.0] };
        let gamma_vs: &[f64] = if self.variant == Variant::Fl { &[0.0] } else { &self.gamma_vs };
        let mut out = Vec::new();
        for &x in &self.xs {
            for &target in &targets {
                for &gamma_v in gamma_vs {
                    for &w_t in w_ts {
                        out.push(GridPoint { x, target, gamma_v, w_t });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub x: f64,
    pub target: BinaryTarget,
    pub gamma_v: f64,
    pub w_t: f64,
}

/// Forward loss of `variant` at a grid point.
pub fn forward(variant: Variant, hp: &LossHyperParams, p: &GridPoint, x: f64) -> Result<f64> {
    match variant {
        Variant::Fl => loss::focal_loss(x, p.target, hp, hp.gamma_b),
        Variant::Efl => loss::efl(x, p.target, hp, p.gamma_v),
        Variant::Eqlv2Focal => loss::eqlv2_focal(x, p.target, hp, hp.gamma_b + p.gamma_v, p.w_t),
        Variant::Eqfl => loss::eqfl(x, p.target, hp, p.gamma_v),
    }
}

/// Analytical gradient of `variant` at a grid point.
pub fn analytical(variant: Variant, hp: &LossHyperParams, p: &GridPoint) -> Result<f64> {
    match variant {
        Variant::Fl => loss::focal_grad(p.x, p.target, hp, hp.gamma_b),
        Variant::Efl => loss::efl_grad(p.x, p.target, hp, p.gamma_v),
        Variant::Eqlv2Focal => loss::eqlv2_focal_grad(p.x, p.target, hp, hp.gamma_b + p.gamma_v, p.w_t),
        Variant::Eqfl => loss::eqfl_grad(p.x, p.target, hp, p.gamma_v),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub point: GridPoint,
    pub analytical: f64,
    pub numerical: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub passed: bool,
    /// Set when either side could not be evaluated.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub variant: Variant,
    pub results: Vec<PointResult>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PointResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    /// `variant,x,y,quality,gamma_v,w_t,analytical,numerical,abs_err,rel_err,passed`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,x,y,quality,gamma_v,w_t,analytical,numerical,abs_err,rel_err,passed\n");
        for r in &self.results {
            let p = &r.point;
            writeln!(
                out,
                "{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                self.variant,
                p.x,
                p.target.y(),
                p.target.soft_label(),
                p.gamma_v,
                p.w_t,
                r.analytical,
                r.numerical,
                r.abs_err,
                r.rel_err,
                r.passed
            )
            .unwrap();
        }
        out
    }
}

/// Runs the grid against the library's analytical gradients.
pub fn run_checks(spec: &CheckSpec) -> Result<CheckReport> {
    run_checks_with(spec, |p| analytical(spec.variant, &spec.hp, p))
}

/// Runs the grid against an arbitrary gradient implementation.
pub fn run_checks_with<G>(spec: &CheckSpec, grad: G) -> Result<CheckReport>
where
    G: Fn(&GridPoint) -> Result<f64> + Sync,
{
    spec.validate()?;
    let points = spec.points()?;
    let results: Vec<PointResult> = points
        .par_iter()
        .map(|p| {
            let f = |x: f64| forward(spec.variant, &spec.hp, p, x).unwrap_or(f64::NAN);
            let numerical = central_diff(f, p.x, spec.h);
            let analytical = grad(p);
            let (analytical, error) = match analytical {
                Ok(a) => (a, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            let error = error.or_else(|| (!numerical.is_finite()).then(|| "non-finite finite difference".to_string()));
            let abs_err = (analytical - numerical).abs();
            let scale = analytical.abs().max(numerical.abs());
            let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
            let passed = error.is_none()
                && abs_err.is_finite()
                && if analytical.abs() < spec.plateau {
                    abs_err <= spec.atol
                } else {
                    rel_err <= spec.rtol
                };
            PointResult {
                point: *p,
                analytical,
                numerical,
                abs_err,
                rel_err,
                passed,
                error,
            }
        })
        .collect();
    let max_abs_err = results.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    let max_rel_err = results.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    Ok(CheckReport {
        variant: spec.variant,
        results,
        max_abs_err,
        max_rel_err,
    })
}
