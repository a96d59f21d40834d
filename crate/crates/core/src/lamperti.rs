//! Variance-stabilizing transform F(x) = int_0^x 1/(eps*sigma(u)) du, its
//! numerical inverse, and the unit-diffusion drift it induces.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

const PANEL_TOL: f64 = 1e-10;
const INVERT_TOL: f64 = 1e-10;

/// Tabulated transform with exact partial-panel quadrature between knots.
///
/// Immutable after build; evaluations are pure and shareable across threads.
pub struct TransformTable {
    x_knots: Vec<f64>,
    f_values: Vec<f64>,
    epsilon: f64,
    slope_lo: f64,
    slope_hi: f64,
    integrand: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    warned: AtomicBool,
}

impl std::fmt::Debug for TransformTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformTable")
            .field("range", &(self.x_knots[0], *self.x_knots.last().unwrap()))
            .field("knots", &self.x_knots.len())
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

/// Adaptive Simpson with an absolute tolerance.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 40)
}

/// Build the transform over `range` on `knot_count` uniform knots.
///
/// The range is widened to contain 0 so F(0) = 0 holds exactly; 0 is
/// inserted as a knot and cumulative sums are anchored there.
pub fn build_transform(spec: &ModelSpec, range: (f64, f64), knot_count: usize) -> Result<TransformTable> {
    let (mut lo, mut hi) = range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("transform range [{lo}, {hi}] is degenerate")));
    }
    if knot_count < 2 {
        return Err(Error::Config("knot_count must be >= 2".into()));
    }
    lo = lo.min(0.0);
    hi = hi.max(0.0);

    let eps = spec.epsilon;
    let sigma = spec.diffusion.clone();
    let integrand: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |u: f64| 1.0 / (eps * sigma.eval(u)));

    let mut x_knots: Vec<f64> = (0..knot_count)
        .map(|i| lo + (hi - lo) * i as f64 / (knot_count - 1) as f64)
        .collect();
    let zero_pos = match x_knots.binary_search_by(|x| x.partial_cmp(&0.0).unwrap()) {
        Ok(p) => p,
        Err(p) => {
            x_knots.insert(p, 0.0);
            p
        }
    };

    // validate the integrand on the knots before integrating
    for &x in &x_knots {
        let v = integrand(x);
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::ModelEval { x, what: format!("1/(eps*sigma) = {v} at a transform knot") });
        }
    }

    let mut f_values = vec![0.0; x_knots.len()];
    for k in zero_pos..x_knots.len() - 1 {
        let panel = adaptive_simpson(integrand.as_ref(), x_knots[k], x_knots[k + 1], PANEL_TOL);
        f_values[k + 1] = f_values[k] + panel;
    }
    for k in (0..zero_pos).rev() {
        let panel = adaptive_simpson(integrand.as_ref(), x_knots[k], x_knots[k + 1], PANEL_TOL);
        f_values[k] = f_values[k + 1] - panel;
    }
    for k in 1..f_values.len() {
        assert!(f_values[k] > f_values[k - 1], "F must be strictly increasing");
    }

    let slope_lo = integrand(x_knots[0]);
    let slope_hi = integrand(*x_knots.last().unwrap());
    Ok(TransformTable {
        x_knots,
        f_values,
        epsilon: eps,
        slope_lo,
        slope_hi,
        integrand,
        warned: AtomicBool::new(false),
    })
}

impl TransformTable {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x_knots[0], *self.x_knots.last().unwrap())
    }

    fn warn_extrapolation(&self, x: f64) {
        if !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!("transform evaluated outside table range at x = {x}; extrapolating linearly");
        }
    }

    /// F(x): exact partial-panel quadrature from the nearest left knot;
    /// linear extrapolation beyond the range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.x_knots.len();
        if x < self.x_knots[0] {
            self.warn_extrapolation(x);
            return self.f_values[0] + self.slope_lo * (x - self.x_knots[0]);
        }
        if x > self.x_knots[n - 1] {
            self.warn_extrapolation(x);
            return self.f_values[n - 1] + self.slope_hi * (x - self.x_knots[n - 1]);
        }
        let k = match self.x_knots.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(p) => return self.f_values[p],
            Err(p) => p - 1,
        };
        self.f_values[k] + adaptive_simpson(self.integrand.as_ref(), self.x_knots[k], x, PANEL_TOL)
    }

    /// F^{-1}(v): bisection-bracketed Newton inside the located panel;
    /// round-trip residual |F(F^{-1}(v)) - v| <= 1e-10.
    pub fn invert(&self, v: f64) -> f64 {
        let n = self.f_values.len();
        if v <= self.f_values[0] {
            if v < self.f_values[0] {
                self.warn_extrapolation(self.x_knots[0]);
            }
            return self.x_knots[0] + (v - self.f_values[0]) / self.slope_lo;
        }
        if v >= self.f_values[n - 1] {
            if v > self.f_values[n - 1] {
                self.warn_extrapolation(self.x_knots[n - 1]);
            }
            return self.x_knots[n - 1] + (v - self.f_values[n - 1]) / self.slope_hi;
        }
        let k = match self.f_values.binary_search_by(|f| f.partial_cmp(&v).unwrap()) {
            Ok(p) => return self.x_knots[p],
            Err(p) => p - 1,
        };
        let (mut a, mut b) = (self.x_knots[k], self.x_knots[k + 1]);
        // secant start, then Newton with F' = integrand; bisect when Newton
        // leaves the bracket
        let mut x = a + (v - self.f_values[k]) / (self.f_values[k + 1] - self.f_values[k]) * (b - a);
        for _ in 0..64 {
            let fx = self.eval(x);
            let r = fx - v;
            if r.abs() <= INVERT_TOL {
                return x;
            }
            if r > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let step = r / (self.integrand)(x);
            let candidate = x - step;
            x = if candidate > a && candidate < b { candidate } else { 0.5 * (a + b) };
        }
        x
    }
}

/// Drift of the unit-diffusion process:
/// b(v) = f(F^{-1}(v))/(eps*sigma(F^{-1}(v))) - eps*sigma'(F^{-1}(v))/2.
pub fn drift_b(table: &TransformTable, spec: &ModelSpec, v: f64) -> Result<f64> {
    let x = table.invert(v);
    let deriv = spec
        .diffusion
        .eval_deriv(x)
        .ok_or_else(|| Error::Config("unit-diffusion drift needs the diffusion derivative".into()))?;
    let eps = spec.epsilon;
    Ok(spec.drift.eval(x) / (eps * spec.diffusion.eval(x)) - eps * deriv / 2.0)
}

/// A-priori excursion radius used to size transform tables:
/// R = (1 + |w| + M*T) * e^{M*T} + 10*eps*sigma1*sqrt(T).
pub fn table_range(spec: &ModelSpec) -> (f64, f64) {
    let mt = spec.drift.lipschitz_m * spec.horizon_t;
    let r = (1.0 + spec.w.abs() + mt) * mt.exp()
        + 10.0 * spec.epsilon * spec.diffusion.sigma1 * spec.horizon_t.sqrt();
    (spec.w - r, spec.w + r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, DiffusionSpec, DriftSpec, ModelSpec};
    use crate::rng::CounterStream;
    use std::sync::Arc;

    fn spec_with(diffusion: DiffusionSpec, eps: f64) -> ModelSpec {
        ModelSpec::new(DriftSpec::new(f64::sin, 1.0, 0.0), diffusion, eps, 1.0, 8, 0.0, None).unwrap()
    }

    fn unit_sigma() -> DiffusionSpec {
        DiffusionSpec::new(|_| 1.0, Some(Arc::new(|_| 0.0)), 1.0, 1.0, 0.0)
    }

    #[test]
    fn identity_sigma_gives_linear_transform() {
        let spec = spec_with(unit_sigma(), 0.1);
        let t = build_transform(&spec, (-5.0, 5.0), 101).unwrap();
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            assert!((t.eval(x) - x / 0.1).abs() < 1e-12 * (1.0 + (x / 0.1).abs()));
        }
    }

    #[test]
    fn constant_sigma_two_eps_half_is_identity() {
        let spec = spec_with(DiffusionSpec::new(|_| 2.0, Some(Arc::new(|_| 0.0)), 2.0, 2.0, 0.0), 0.5);
        let t = build_transform(&spec, (-3.0, 3.0), 61).unwrap();
        for i in 0..=60 {
            let x = -3.0 + 0.1 * i as f64;
            assert!((t.eval(x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_high_resolution_quadrature() {
        // 1e6-panel trapezoid oracle for F(pi) with sigma = 1 + sin(x)/2
        let b = builtin("sin-drift").unwrap();
        let spec = spec_with(b.diffusion, 0.1);
        let t = build_transform(&spec, (-4.0, 4.0), 257).unwrap();
        let n = 1_000_000usize;
        let h = std::f64::consts::PI / n as f64;
        let g = |u: f64| 1.0 / (0.1 * (1.0 + 0.5 * u.sin()));
        let mut acc = 0.5 * (g(0.0) + g(std::f64::consts::PI));
        for i in 1..n {
            acc += g(i as f64 * h);
        }
        let oracle = acc * h;
        let got = t.eval(std::f64::consts::PI);
        assert!(((got - oracle) / oracle).abs() < 1e-8, "got {got}, oracle {oracle}");
    }

    #[test]
    fn inverse_is_linear_for_unit_sigma() {
        let spec = spec_with(unit_sigma(), 0.1);
        let t = build_transform(&spec, (-2.0, 2.0), 41).unwrap();
        for i in 0..=40 {
            let v = -20.0 + i as f64;
            assert!((t.invert(v) - 0.1 * v).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_maps_to_zero_both_ways() {
        let b = builtin("sin-drift").unwrap();
        let spec = spec_with(b.diffusion, 0.2);
        let t = build_transform(&spec, (-4.0, 4.0), 129).unwrap();
        assert_eq!(t.eval(0.0), 0.0);
        assert_eq!(t.invert(0.0), 0.0);
    }

    #[test]
    fn random_round_trips() {
        let b = builtin("tanh-drift").unwrap();
        let spec = spec_with(b.diffusion, 0.15);
        let t = build_transform(&spec, (-6.0, 6.0), 193).unwrap();
        let (flo, fhi) = (t.eval(-6.0), t.eval(6.0));
        let u = CounterStream::new(2024, 0, 0);
        for i in 0..2000u64 {
            let v = flo + (fhi - flo) * u.uniform(i);
            let x = t.invert(v);
            assert!((t.eval(x) - v).abs() <= 1e-10, "v = {v}");
            // table-range round trip in x as well
            assert!((t.invert(t.eval(x)) - x).abs() <= 1e-8);
        }
    }

    #[test]
    fn drift_composition_unit_sigma() {
        // sigma = 1: b(v) = f(eps*v)/eps
        let spec = spec_with(unit_sigma(), 0.1);
        let t = build_transform(&spec, (-5.0, 5.0), 101).unwrap();
        for i in 0..50 {
            let v = -20.0 + 0.8 * i as f64;
            let b = drift_b(&t, &spec, v).unwrap();
            assert!((b - (0.1 * v).sin() / 0.1).abs() < 1e-9, "v = {v}");
        }
    }

    #[test]
    fn drift_zero_f_reduces_to_derivative_term() {
        let b = builtin("sin-drift").unwrap();
        let spec = ModelSpec::new(DriftSpec::new(|_| 0.0, 0.0, 0.0), b.diffusion, 0.2, 1.0, 8, 0.0, None).unwrap();
        let t = build_transform(&spec, (-4.0, 4.0), 129).unwrap();
        for i in 0..40 {
            let v = -8.0 + 0.4 * i as f64;
            let x = t.invert(v);
            let expected = -0.2 * 0.5 * x.cos() / 2.0;
            assert!((drift_b(&t, &spec, v).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_matches_independent_composition() {
        // invert F(x) = 3 with standalone quadrature + bisection, then compose
        let b = builtin("sin-drift").unwrap();
        let spec = spec_with(b.diffusion, 0.1);
        let t = build_transform(&spec, (-4.0, 4.0), 257).unwrap();
        let g = |u: f64| 1.0 / (0.1 * (1.0 + 0.5 * u.sin()));
        let trapz = |x: f64| {
            let n = 200_000usize;
            let h = x / n as f64;
            let mut acc = 0.5 * (g(0.0) + g(x));
            for i in 1..n {
                acc += g(i as f64 * h);
            }
            acc * h
        };
        let (mut a, mut bb) = (0.0f64, 2.0f64);
        for _ in 0..60 {
            let m = 0.5 * (a + bb);
            if trapz(m) < 3.0 {
                a = m;
            } else {
                bb = m;
            }
        }
        let x = 0.5 * (a + bb);
        let expected = x.sin() / (0.1 * (1.0 + 0.5 * x.sin())) - 0.1 * (0.5 * x.cos()) / 2.0;
        let got = drift_b(&t, &spec, 3.0).unwrap();
        assert!((got - expected).abs() < 1e-7, "got {got}, expected {expected}");
    }

    #[test]
    fn drift_origin_bound_for_builtins() {
        for name in ["sin-drift", "small-sin-drift", "tanh-drift", "unit-sigma"] {
            let b = builtin(name).unwrap();
            for &eps in &[0.05, 0.1, 0.3] {
                let spec = ModelSpec::new(b.drift.clone(), b.diffusion.clone(), eps, 1.0, 8, 0.0, b.fg_lipschitz_l).unwrap();
                let t = build_transform(&spec, table_range(&spec), 257).unwrap();
                let bound = spec.drift.lipschitz_m / (eps * spec.diffusion.sigma0) + eps * spec.drift.lipschitz_m / 2.0;
                let b0 = drift_b(&t, &spec, 0.0).unwrap();
                assert!(b0.abs() <= bound + 1e-12, "{name} eps={eps}: |b(0)| = {} > {bound}", b0.abs());
            }
        }
    }

    #[test]
    fn drift_lipschitz_within_declared_bound() {
        // empirical Lipschitz over 1e4 probe pairs <= (L/eps + M*eps/2)*sigma1*eps * 1.01
        let b = builtin("sin-drift").unwrap();
        let eps = 0.2;
        let spec = ModelSpec::new(b.drift, b.diffusion, eps, 1.0, 8, 0.0, b.fg_lipschitz_l).unwrap();
        let t = build_transform(&spec, (-6.0, 6.0), 513).unwrap();
        let l = spec.fg_lipschitz_l.unwrap();
        let m = spec.drift.lipschitz_m;
        let s1 = spec.diffusion.sigma1;
        let bound = (l / eps + m * eps / 2.0) * s1 * eps;
        let (flo, fhi) = (t.eval(-6.0), t.eval(6.0));
        let u = CounterStream::new(77, 0, 0);
        for i in 0..10_000u64 {
            let v1 = flo + (fhi - flo) * u.uniform(2 * i);
            let v2 = flo + (fhi - flo) * u.uniform(2 * i + 1);
            if (v1 - v2).abs() < 1e-6 {
                continue;
            }
            let slope = (drift_b(&t, &spec, v1).unwrap() - drift_b(&t, &spec, v2).unwrap()) / (v1 - v2);
            assert!(slope.abs() <= bound * 1.01, "pair ({v1}, {v2}): slope {slope} vs bound {bound}");
        }
    }

    #[test]
    fn missing_derivative_is_config_error() {
        let spec = spec_with(DiffusionSpec::new(|_| 1.0, None, 1.0, 1.0, 0.0), 0.1);
        let t = build_transform(&spec, (-1.0, 1.0), 11).unwrap();
        assert!(matches!(drift_b(&t, &spec, 0.5), Err(Error::Config(_))));
    }
}
