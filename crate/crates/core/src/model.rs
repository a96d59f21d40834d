//! Model ingredients: drift class, diffusion coefficient assumptions, and the
//! scalar parameters of every experiment.
//!
//! Constants (Lipschitz bounds, diffusion envelope) are declared by the caller
//! and *checked on finite probe grids*; the validator certifies nothing beyond
//! the probed points.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift function together with its declared class constants.
#[derive(Clone)]
pub struct DriftSpec {
    eval: ScalarFn,
    pub lipschitz_m: f64,
    pub origin_bound: f64,
}

impl DriftSpec {
    pub fn new(eval: impl Fn(f64) -> f64 + Send + Sync + 'static, lipschitz_m: f64, origin_bound: f64) -> Self {
        assert!(lipschitz_m >= 0.0 && origin_bound >= 0.0);
        DriftSpec { eval: Arc::new(eval), lipschitz_m, origin_bound }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("lipschitz_m", &self.lipschitz_m)
            .field("origin_bound", &self.origin_bound)
            .finish()
    }
}

/// Diffusion coefficient with its envelope and Lipschitz constants.
///
/// `eval_deriv` is only required when the smoothness assumption on the
/// derivative is claimed (discrete-observation chain).
#[derive(Clone)]
pub struct DiffusionSpec {
    eval: ScalarFn,
    eval_deriv: Option<ScalarFn>,
    pub sigma0: f64,
    pub sigma1: f64,
    pub lipschitz_k: f64,
}

impl DiffusionSpec {
    pub fn new(
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        eval_deriv: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        sigma0: f64,
        sigma1: f64,
        lipschitz_k: f64,
    ) -> Self {
        assert!(sigma0 > 0.0 && sigma1 >= sigma0 && lipschitz_k >= 0.0);
        DiffusionSpec { eval: Arc::new(eval), eval_deriv, sigma0, sigma1, lipschitz_k }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    #[inline]
    pub fn eval_sq(&self, x: f64) -> f64 {
        let s = self.eval(x);
        s * s
    }

    pub fn eval_deriv(&self, x: f64) -> Option<f64> {
        self.eval_deriv.as_ref().map(|d| d(x))
    }

    pub fn has_deriv(&self) -> bool {
        self.eval_deriv.is_some()
    }
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("sigma0", &self.sigma0)
            .field("sigma1", &self.sigma1)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("has_deriv", &self.has_deriv())
            .finish()
    }
}

/// One fully parameterized experiment.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub epsilon: f64,
    pub horizon_t: f64,
    pub n_obs: usize,
    pub w: f64,
    /// Lipschitz constant of f/sigma, required by the unit-diffusion chain.
    pub fg_lipschitz_l: Option<f64>,
}

impl ModelSpec {
    pub fn new(
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        epsilon: f64,
        horizon_t: f64,
        n_obs: usize,
        w: f64,
        fg_lipschitz_l: Option<f64>,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        if !(horizon_t > 0.0 && horizon_t.is_finite()) {
            return Err(Error::Config(format!("horizon_t must be positive, got {horizon_t}")));
        }
        if n_obs < 1 {
            return Err(Error::Config("n_obs must be >= 1".into()));
        }
        if !w.is_finite() {
            return Err(Error::Config("initial condition w must be finite".into()));
        }
        Ok(ModelSpec { drift, diffusion, epsilon, horizon_t, n_obs, w, fg_lipschitz_l })
    }

    /// Observation interval length.
    pub fn obs_dt(&self) -> f64 {
        self.horizon_t / self.n_obs as f64
    }

    /// i-th observation time, i = 0..=n_obs.
    pub fn obs_time(&self, i: usize) -> f64 {
        self.horizon_t * i as f64 / self.n_obs as f64
    }

    /// Drift of the constant-diffusion companion process, f/sigma^2.
    #[inline]
    pub fn f_over_sigma2(&self, x: f64) -> f64 {
        self.drift.eval(x) / self.diffusion.eval_sq(x)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        ModelSpec::new(
            self.drift.clone(),
            self.diffusion.clone(),
            epsilon,
            self.horizon_t,
            self.n_obs,
            self.w,
            self.fg_lipschitz_l,
        )
    }

    pub fn with_n_obs(&self, n_obs: usize) -> Result<Self> {
        ModelSpec::new(
            self.drift.clone(),
            self.diffusion.clone(),
            self.epsilon,
            self.horizon_t,
            n_obs,
            self.w,
            self.fg_lipschitz_l,
        )
    }
}

/// Where the frozen-coefficient intervals start.
///
/// `FromZero` covers [0, T) with intervals [t_i, t_{i+1}), i = 0..n-1, and is
/// the convention used everywhere by default. `FromOne` reads the summation
/// limits literally and leaves the first interval without a coefficient; it
/// exists so the effect of the choice can be measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IndexConvention {
    #[default]
    FromZero,
    FromOne,
}

/// Identifiers for the auxiliary processes that appear across the toolkit.
///
/// `ZetaBar` is the re-clocked companion of the discretized clock; it is not
/// one of the numbered models but the moment estimator needs to address it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentId {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    N1,
    N2,
    N3,
    N4,
    N5,
    N6,
    ZetaBar,
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use ExperimentId::*;
        Ok(match s.to_ascii_uppercase().as_str() {
            "M1" => M1,
            "M2" => M2,
            "M3" => M3,
            "M4" => M4,
            "M5" => M5,
            "M6" => M6,
            "M7" => M7,
            "N1" => N1,
            "N2" => N2,
            "N3" => N3,
            "N4" => N4,
            "N5" => N5,
            "N6" => N6,
            "ZETABAR" | "ZETA_BAR" => ZetaBar,
            other => return Err(Error::Config(format!("unknown experiment id '{other}'"))),
        })
    }
}

/// One violated constraint, with the probe location that witnessed it.
#[derive(Clone, Debug)]
pub struct Violation {
    pub constraint: String,
    pub location: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

const REL_TOL: f64 = 1e-9;

/// Check the declared class constants on a uniform probe grid.
///
/// Lipschitz inequalities are checked on consecutive probe pairs; by the
/// triangle inequality this implies the bound for every pair on the grid.
pub fn validate_model(spec: &ModelSpec, probe_count: usize, probe_range: (f64, f64)) -> Result<ValidationReport> {
    let (lo, hi) = probe_range;
    if probe_count < 2 {
        return Err(Error::Config("probe_count must be >= 2".into()));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("probe range [{lo}, {hi}] is degenerate")));
    }

    let mut report = ValidationReport::default();
    let m = spec.drift.lipschitz_m;
    let k = spec.diffusion.lipschitz_k;
    let s0sq = spec.diffusion.sigma0 * spec.diffusion.sigma0;
    let s1sq = spec.diffusion.sigma1 * spec.diffusion.sigma1;

    let probe = |i: usize| lo + (hi - lo) * i as f64 / (probe_count - 1) as f64;

    let f0 = spec.drift.eval(0.0);
    if !f0.is_finite() {
        return Err(Error::ModelEval { x: 0.0, what: "drift returned non-finite value".into() });
    }
    if f0.abs() > m * (1.0 + REL_TOL) {
        report.violations.push(Violation {
            constraint: format!("|f(0)| = {} exceeds M = {m}", f0.abs()),
            location: "x = 0".into(),
        });
    }

    let mut prev_f: Option<(f64, f64)> = None;
    let mut prev_s: Option<(f64, f64)> = None;
    let mut prev_d: Option<(f64, f64)> = None;
    for i in 0..probe_count {
        let x = probe(i);
        let fx = spec.drift.eval(x);
        let sx = spec.diffusion.eval(x);
        if !fx.is_finite() {
            return Err(Error::ModelEval { x, what: "drift returned non-finite value".into() });
        }
        if !sx.is_finite() {
            return Err(Error::ModelEval { x, what: "diffusion returned non-finite value".into() });
        }
        let sxsq = sx * sx;
        if sxsq < s0sq * (1.0 - REL_TOL) {
            report.violations.push(Violation {
                constraint: format!("sigma^2(x) = {sxsq} below sigma0^2 = {s0sq}"),
                location: format!("x = {x}"),
            });
        }
        if sxsq > s1sq * (1.0 + REL_TOL) {
            report.violations.push(Violation {
                constraint: format!("sigma^2(x) = {sxsq} above sigma1^2 = {s1sq}"),
                location: format!("x = {x}"),
            });
        }
        if let Some((px, pf)) = prev_f {
            let gap = (fx - pf).abs();
            let allowed = m * (x - px) * (1.0 + REL_TOL) + REL_TOL;
            if gap > allowed {
                report.violations.push(Violation {
                    constraint: format!("|f({x}) - f({px})| = {gap} exceeds M*|dx| = {allowed}"),
                    location: format!("pair ({px}, {x})"),
                });
            }
        }
        if let Some((px, ps)) = prev_s {
            let gap = (sx - ps).abs();
            let allowed = k * (x - px) * (1.0 + REL_TOL) + REL_TOL;
            if gap > allowed {
                report.violations.push(Violation {
                    constraint: format!("|sigma({x}) - sigma({px})| = {gap} exceeds K*|dx| = {allowed}"),
                    location: format!("pair ({px}, {x})"),
                });
            }
        }
        if let Some(dx) = spec.diffusion.eval_deriv(x) {
            if !dx.is_finite() {
                return Err(Error::ModelEval { x, what: "diffusion derivative returned non-finite value".into() });
            }
            if let Some((px, pd)) = prev_d {
                let gap = (dx - pd).abs();
                let allowed = k * (x - px) * (1.0 + REL_TOL) + REL_TOL;
                if gap > allowed {
                    report.violations.push(Violation {
                        constraint: format!("|sigma'({x}) - sigma'({px})| = {gap} exceeds K*|dx| = {allowed}"),
                        location: format!("pair ({px}, {x})"),
                    });
                }
            }
            prev_d = Some((x, dx));
        }
        prev_f = Some((x, fx));
        prev_s = Some((x, sx));
    }

    Ok(report)
}

/// A named (drift, diffusion) pair with its recommended constants.
#[derive(Clone, Debug)]
pub struct BuiltinModel {
    pub name: &'static str,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    /// Lipschitz constant of f/sigma where known.
    pub fg_lipschitz_l: Option<f64>,
}

fn unit_sigma() -> DiffusionSpec {
    DiffusionSpec::new(|_| 1.0, Some(Arc::new(|_| 0.0)), 1.0, 1.0, 0.0)
}

fn one_plus_half_sin_sigma() -> DiffusionSpec {
    DiffusionSpec::new(
        |x| 1.0 + 0.5 * x.sin(),
        Some(Arc::new(|x: f64| 0.5 * x.cos())),
        0.5,
        1.5,
        0.5,
    )
}

fn tanh_sigma() -> DiffusionSpec {
    // sigma = (sigma0 + sigma1)/2 + slope * tanh(x), envelope [1, 2]
    DiffusionSpec::new(
        |x| 1.5 + 0.4 * x.tanh(),
        Some(Arc::new(|x: f64| {
            let c = x.cosh();
            0.4 / (c * c)
        })),
        1.0,
        2.0,
        0.4,
    )
}

/// Named model pairs available to the harness.
pub fn builtin_library() -> Vec<BuiltinModel> {
    vec![
        BuiltinModel {
            name: "zero-drift",
            drift: DriftSpec::new(|_| 0.0, 0.0, 0.0),
            diffusion: unit_sigma(),
            fg_lipschitz_l: Some(0.0),
        },
        BuiltinModel {
            name: "const-drift",
            drift: DriftSpec::new(|_| 1.0, 1.0, 1.0),
            diffusion: unit_sigma(),
            fg_lipschitz_l: Some(0.0),
        },
        BuiltinModel {
            name: "linear-drift",
            // clipped linear keeps the declared envelope checkable far out
            drift: DriftSpec::new(|x| (0.5 * x + 0.25).clamp(-4.0, 4.0), 0.5, 0.25),
            diffusion: unit_sigma(),
            fg_lipschitz_l: Some(0.5),
        },
        BuiltinModel {
            name: "unit-sigma",
            drift: DriftSpec::new(f64::sin, 1.0, 0.0),
            diffusion: unit_sigma(),
            fg_lipschitz_l: Some(1.0),
        },
        BuiltinModel {
            name: "sin-drift",
            drift: DriftSpec::new(f64::sin, 1.0, 0.0),
            diffusion: one_plus_half_sin_sigma(),
            // sup |d/dx sin(x)/(1 + sin(x)/2)| = sup |cos(x)| / (1 + sin(x)/2)^2 ~ 1.6963
            fg_lipschitz_l: Some(1.70),
        },
        BuiltinModel {
            name: "small-sin-drift",
            drift: DriftSpec::new(|x| 0.1 * x.sin(), 0.1, 0.0),
            diffusion: one_plus_half_sin_sigma(),
            fg_lipschitz_l: Some(0.17),
        },
        BuiltinModel {
            name: "tanh-drift",
            drift: DriftSpec::new(f64::tanh, 1.0, 0.0),
            diffusion: tanh_sigma(),
            fg_lipschitz_l: Some(1.0),
        },
    ]
}

pub fn builtin(name: &str) -> Result<BuiltinModel> {
    builtin_library()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::Config(format!("unknown builtin model '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_of(b: BuiltinModel) -> ModelSpec {
        ModelSpec::new(b.drift, b.diffusion, 0.1, 1.0, 8, 0.0, b.fg_lipschitz_l).unwrap()
    }

    #[test]
    fn sin_drift_validates() {
        let spec = spec_of(builtin("sin-drift").unwrap());
        let rep = validate_model(&spec, 10_000, (-10.0, 10.0)).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations);
    }

    #[test]
    fn quadratic_drift_violates_lipschitz() {
        let spec = ModelSpec::new(
            DriftSpec::new(|x| x * x, 1.0, 0.0),
            unit_sigma(),
            0.1,
            1.0,
            8,
            0.0,
            None,
        )
        .unwrap();
        let rep = validate_model(&spec, 10_000, (-10.0, 10.0)).unwrap();
        assert!(rep.violations.iter().any(|v| v.constraint.contains("exceeds M")));
    }

    #[test]
    fn sigma_envelope_violation_is_located() {
        // sigma(pi/2) = 3 > sigma1 = 2
        let spec = ModelSpec::new(
            DriftSpec::new(|_| 0.0, 0.0, 0.0),
            DiffusionSpec::new(|x| 2.0 + x.sin(), None, 1.0, 2.0, 1.0),
            0.1,
            1.0,
            8,
            0.0,
            None,
        )
        .unwrap();
        let rep = validate_model(&spec, 10_000, (-10.0, 10.0)).unwrap();
        assert!(rep.violations.iter().any(|v| v.constraint.contains("above sigma1^2")));
    }

    #[test]
    fn non_finite_drift_is_an_evaluation_failure() {
        let spec = ModelSpec::new(
            DriftSpec::new(|x| 1.0 / x, 1.0, 0.0),
            unit_sigma(),
            0.1,
            1.0,
            8,
            0.0,
            None,
        )
        .unwrap();
        // grid with an odd count hits x = 0 exactly
        let err = validate_model(&spec, 10_001, (-10.0, 10.0)).unwrap_err();
        assert!(matches!(err, Error::ModelEval { .. }));
    }

    #[test]
    fn all_builtins_validate_with_declared_constants() {
        for b in builtin_library() {
            let name = b.name;
            let spec = spec_of(b);
            let rep = validate_model(&spec, 10_000, (-20.0, 20.0)).unwrap();
            assert!(rep.is_clean(), "{name}: {:?}", rep.violations);
        }
    }

    #[test]
    fn declared_derivatives_match_finite_differences() {
        for b in builtin_library() {
            if !b.diffusion.has_deriv() {
                continue;
            }
            let h = 1e-5;
            for i in 0..1000 {
                let x = -10.0 + 20.0 * i as f64 / 999.0;
                let fd = (b.diffusion.eval(x + h) - b.diffusion.eval(x - h)) / (2.0 * h);
                let d = b.diffusion.eval_deriv(x).unwrap();
                assert!((fd - d).abs() < 1e-6, "{}: x={x} fd={fd} d={d}", b.name);
            }
        }
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        let b = builtin("zero-drift").unwrap();
        assert!(ModelSpec::new(b.drift, b.diffusion, 1.0, 1.0, 8, 0.0, None).is_err());
    }
}
