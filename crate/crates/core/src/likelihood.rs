//! Girsanov log-likelihood ratios between drift hypotheses sharing one
//! constant diffusion coefficient, the sufficient-statistic log-density of
//! the discrete autoregression, and the Hellinger process of the frozen
//! drift approximation.

use std::sync::Arc;

use crate::clock::{piecewise_coeffs, CoeffKind};
use crate::error::{Error, Result};
use crate::lamperti::TransformTable;
use crate::model::ModelSpec;
use crate::path::{PathView, SamplePath};

type DriftFn = Arc<dyn Fn(f64, PathView<'_>) -> f64 + Send + Sync>;

/// A drift hypothesis g(t, x) at a fixed constant diffusion coefficient.
///
/// The drift may depend on the whole past of the path but never on its
/// future (adaptedness; the Girsanov integrals feed it prefix views only).
#[derive(Clone)]
pub struct DriftHypothesis {
    pub label: String,
    pub diffusion_eps: f64,
    drift: DriftFn,
}

impl std::fmt::Debug for DriftHypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftHypothesis")
            .field("label", &self.label)
            .field("diffusion_eps", &self.diffusion_eps)
            .finish()
    }
}

impl DriftHypothesis {
    pub fn new(
        label: impl Into<String>,
        diffusion_eps: f64,
        drift: impl Fn(f64, PathView<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert!(diffusion_eps > 0.0);
        DriftHypothesis { label: label.into(), diffusion_eps, drift: Arc::new(drift) }
    }

    #[inline]
    pub fn drift_at(&self, t: f64, prefix: PathView<'_>) -> f64 {
        (self.drift)(t, prefix)
    }

    pub fn zero(diffusion_eps: f64) -> Self {
        Self::new("zero", diffusion_eps, |_, _| 0.0)
    }

    pub fn constant(c: f64, diffusion_eps: f64) -> Self {
        Self::new(format!("const({c})"), diffusion_eps, move |_, _| c)
    }

    /// State drift f/sigma^2 of the constant-diffusion companion process.
    pub fn f_over_sigma2(spec: &ModelSpec) -> Self {
        let s = spec.clone();
        Self::new("f/sigma^2", spec.epsilon, move |t, view| {
            let x = view.value_at(t);
            s.f_over_sigma2(x)
        })
    }

    /// Frozen drift on the discretized-clock intervals. The knots are
    /// rebuilt from the prefix on every call; each knot lies strictly in the
    /// past of the interval it opens, so the hypothesis is adapted.
    pub fn g_bar_n(spec: &ModelSpec) -> Self {
        let s = spec.clone();
        Self::new("g_bar_n", spec.epsilon, move |t, view| {
            let h = s.obs_dt();
            let mut a = 0.0;
            for _ in 0..s.n_obs {
                let x = view.value_at(a);
                let a_next = a + s.diffusion.eval_sq(x) * h;
                // t = 0 belongs to the first interval (a.e. convention)
                if t <= a_next {
                    return s.f_over_sigma2(x);
                }
                a = a_next;
            }
            0.0
        })
    }

    /// Unit-diffusion drift b evaluated at the current state.
    pub fn lamperti_b(spec: &ModelSpec, table: Arc<TransformTable>) -> Self {
        let s = spec.clone();
        Self::new("b", 1.0, move |t, view| {
            let v = view.value_at(t);
            crate::lamperti::drift_b(&table, &s, v).expect("diffusion derivative required")
        })
    }

    /// Unit-diffusion drift frozen at the observation times.
    pub fn b_bar_n(spec: &ModelSpec, table: Arc<TransformTable>) -> Self {
        let s = spec.clone();
        Self::new("b_bar_n", 1.0, move |t, view| {
            let h = s.obs_dt();
            let i = ((t / h).ceil() as usize).max(1).min(s.n_obs) - 1;
            let v = view.value_at(i as f64 * h);
            crate::lamperti::drift_b(&table, &s, v).expect("diffusion derivative required")
        })
    }
}

/// Log Radon-Nikodym derivative split into its Ito-integral and
/// bounded-variation parts.
#[derive(Clone, Copy, Debug)]
pub struct LogLikelihoodRatio {
    pub value: f64,
    pub stoch_integral_part: f64,
    pub bounded_variation_part: f64,
}

/// Pathwise Girsanov log-likelihood ratio of h1 against h0 on [0, upto]:
/// (1/eps^2) int (g1 - g0) dx - (1/(2 eps^2)) int (g1^2 - g0^2) ds,
/// both integrals discretized with left endpoints.
pub fn girsanov_log_lr(
    path: &SamplePath,
    h1: &DriftHypothesis,
    h0: &DriftHypothesis,
    upto: f64,
) -> Result<LogLikelihoodRatio> {
    if (h1.diffusion_eps - h0.diffusion_eps).abs() > 1e-15 {
        return Err(Error::Config(format!(
            "hypotheses carry different diffusion coefficients: {} vs {}",
            h1.diffusion_eps, h0.diffusion_eps
        )));
    }
    if upto < 0.0 || upto > path.span_end() + 1e-9 * path.dt() {
        return Err(Error::OutOfSpan { t: upto, lo: 0.0, hi: path.span_end() });
    }
    let eps2 = h1.diffusion_eps * h1.diffusion_eps;
    let dt = path.dt();
    let values = path.values();
    let k_end = ((upto / dt) + 1e-9).floor() as usize;
    let mut stoch = 0.0;
    let mut bv = 0.0;
    let mut eval_step = |k: usize, t: f64, step_dt: f64, dx: f64| -> Result<()> {
        let prefix = PathView { t0: path.t0(), dt, values: &values[..=k] };
        let g1 = h1.drift_at(t, prefix);
        let g0 = h0.drift_at(t, prefix);
        if !g1.is_finite() || !g0.is_finite() {
            return Err(Error::ModelEval { x: t, what: format!("non-finite drift pair ({g1}, {g0})") });
        }
        stoch += (g1 - g0) * dx;
        bv += (g1 * g1 - g0 * g0) * step_dt;
        Ok(())
    };
    for k in 0..k_end.min(values.len() - 1) {
        eval_step(k, k as f64 * dt, dt, values[k + 1] - values[k])?;
    }
    let t_done = k_end as f64 * dt;
    if upto > t_done + 1e-12 && k_end < values.len() {
        let x_end = path.view().value_at(upto);
        eval_step(k_end.min(values.len() - 1), t_done, upto - t_done, x_end - values[k_end])?;
    }
    let stoch_integral_part = stoch / eps2;
    let bounded_variation_part = -bv / (2.0 * eps2);
    Ok(LogLikelihoodRatio {
        value: stoch_integral_part + bounded_variation_part,
        stoch_integral_part,
        bounded_variation_part,
    })
}

/// Log-density of the observed grid values for the drift-f autoregression
/// against the drift-free one:
/// sum_i f(w_i)/(eps^2 sigma^2(w_i)) (w_{i+1} - w_i)
///       - (T/n) f^2(w_i)/(2 eps^2 sigma^2(w_i)).
pub fn euler_sufficient_logdensity(obs: &[f64], spec: &ModelSpec) -> Result<f64> {
    if obs.len() != spec.n_obs + 1 {
        return Err(Error::Config(format!(
            "observation count {} does not match n + 1 = {}",
            obs.len(),
            spec.n_obs + 1
        )));
    }
    if (obs[0] - spec.w).abs() > 1e-12 {
        return Err(Error::Config(format!("obs[0] = {} differs from w = {}", obs[0], spec.w)));
    }
    let eps2 = spec.epsilon * spec.epsilon;
    let h = spec.obs_dt();
    let mut acc = 0.0;
    for i in 0..spec.n_obs {
        let f = spec.drift.eval(obs[i]);
        let s2 = spec.diffusion.eval_sq(obs[i]);
        acc += f / (eps2 * s2) * (obs[i + 1] - obs[i]) - h * f * f / (2.0 * eps2 * s2);
    }
    if !acc.is_finite() {
        return Err(Error::ModelEval { x: obs[0], what: "non-finite log-density".into() });
    }
    Ok(acc)
}

/// Hellinger process of order 1/2 between the companion drift and its frozen
/// approximation:
/// h_f(t) = 1/(8 eps^2) int_0^t (f/sigma^2(x_s) - g_bar_n(s, x))^2 ds.
///
/// Trapezoid panels on the fine grid; the node at s = 0 uses the first
/// interval's level (a.e. convention shared with the metrics drift-gap
/// estimator so the two agree to rounding).
pub fn hellinger_process(path: &SamplePath, spec: &ModelSpec, upto: f64) -> Result<f64> {
    let integral = drift_gap_sq_integral(path, spec, upto)?;
    Ok(integral / (8.0 * spec.epsilon * spec.epsilon))
}

/// int_0^upto (f/sigma^2(x_s) - g_bar_n(s, x))^2 ds by trapezoid rule.
pub fn drift_gap_sq_integral(path: &SamplePath, spec: &ModelSpec, upto: f64) -> Result<f64> {
    if upto < 0.0 || upto > path.span_end() + 1e-9 * path.dt() {
        return Err(Error::OutOfSpan { t: upto, lo: 0.0, hi: path.span_end() });
    }
    let g_bar = piecewise_coeffs(path, spec, CoeffKind::GBarN)?;
    let gap_sq = |s: f64| -> f64 {
        let x = path.view().value_at(s);
        // a.e. convention at the left edge of the first interval
        let g = if s <= g_bar.knots[0] { g_bar.levels[0] } else { g_bar.eval(s) };
        let d = spec.f_over_sigma2(x) - g;
        d * d
    };
    let dt = path.dt();
    let k_end = ((upto / dt) + 1e-9).floor() as usize;
    let mut acc = 0.0;
    let mut prev = gap_sq(0.0);
    for k in 1..=k_end.min(path.len() - 1) {
        let cur = gap_sq(k as f64 * dt);
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    let t_done = (k_end.min(path.len() - 1)) as f64 * dt;
    if upto > t_done + 1e-12 {
        let cur = gap_sq(upto);
        acc += 0.5 * (upto - t_done) * (prev + cur);
    }
    Ok(acc)
}
