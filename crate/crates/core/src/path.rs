//! Path generation: Brownian-driven simulation of every continuous-time
//! process on a fine uniform grid, the discrete autoregression, and the
//! deterministic small-noise limit ODEs.

use crate::error::{Error, Result};
use crate::lamperti::TransformTable;
use crate::model::{IndexConvention, ModelSpec};
use crate::rng::BrownianDriver;

const BLOWUP_LIMIT: f64 = 1e9;
// slack for floating point noise at span endpoints
const SPAN_SLACK: f64 = 1e-9;

/// A continuous-time path on a fine uniform grid with linear interpolation
/// between knots.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("a path needs at least two knots".into()));
        }
        if !(dt > 0.0 && dt.is_finite() && t0.is_finite()) {
            return Err(Error::Config(format!("bad path grid: t0 = {t0}, dt = {dt}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: i });
        }
        Ok(SamplePath { t0, dt, values })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // len >= 2 by construction
    }

    /// Last grid time covered by the path.
    pub fn span_end(&self) -> f64 {
        self.t0 + (self.values.len() - 1) as f64 * self.dt
    }

    /// Linear interpolant; queries outside the span are errors.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.view().value_at_checked(t)
    }

    pub fn view(&self) -> PathView<'_> {
        PathView { t0: self.t0, dt: self.dt, values: &self.values }
    }

    /// Keep every `factor`-th knot (grid coarsening; values are untouched).
    pub fn downsample(&self, factor: usize) -> Result<SamplePath> {
        assert!(factor >= 1 && (self.values.len() - 1) % factor == 0);
        let values: Vec<f64> = self.values.iter().step_by(factor).copied().collect();
        SamplePath::new(self.t0, self.dt * factor as f64, values)
    }
}

/// Borrowed view of a path prefix; cheap to pass into drift closures.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    pub t0: f64,
    pub dt: f64,
    pub values: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn span_end(&self) -> f64 {
        self.t0 + (self.values.len() - 1) as f64 * self.dt
    }

    pub fn value_at_checked(&self, t: f64) -> Result<f64> {
        let end = self.span_end();
        if t < self.t0 - SPAN_SLACK * self.dt || t > end + SPAN_SLACK * self.dt {
            return Err(Error::OutOfSpan { t, lo: self.t0, hi: end });
        }
        Ok(self.value_at(t))
    }

    /// Linear interpolant, clamped to the span ends.
    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        if self.values.len() == 1 {
            return self.values[0];
        }
        let u = ((t - self.t0) / self.dt).clamp(0.0, (self.values.len() - 1) as f64);
        let k = (u.floor() as usize).min(self.values.len() - 2);
        let frac = u - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }
}

/// Fine-grid layout shared by all simulators.
#[derive(Clone, Copy, Debug)]
pub struct FineGridConfig {
    /// Fine steps per observation interval; a power of two so refinement
    /// oracles can reuse increments by summation.
    pub steps_per_interval: usize,
    /// Simulation span as a multiple of T for constant-diffusion processes
    /// that get stopped by a clock.
    pub horizon_multiplier: f64,
}

impl FineGridConfig {
    pub fn new(steps_per_interval: usize, horizon_multiplier: f64) -> Self {
        assert!(steps_per_interval.is_power_of_two());
        assert!(horizon_multiplier >= 1.0);
        FineGridConfig { steps_per_interval, horizon_multiplier }
    }

    /// Default span sized so the sigma^2-clock stays inside the simulation.
    pub fn for_spec(spec: &ModelSpec, steps_per_interval: usize) -> Self {
        let s1sq = spec.diffusion.sigma1 * spec.diffusion.sigma1;
        FineGridConfig::new(steps_per_interval, (s1sq * 1.05).max(1.0))
    }

    pub fn dt(&self, spec: &ModelSpec) -> f64 {
        spec.horizon_t / (spec.n_obs * self.steps_per_interval) as f64
    }

    pub fn refine(&self, factor: usize) -> Self {
        assert!(factor.is_power_of_two());
        FineGridConfig::new(self.steps_per_interval * factor, self.horizon_multiplier)
    }
}

#[inline]
fn check_state(x: f64, step: usize) -> Result<f64> {
    if x.is_finite() && x.abs() < BLOWUP_LIMIT {
        Ok(x)
    } else {
        Err(Error::BlowUp { step })
    }
}

/// Euler-Maruyama for dy = f(y)dt + eps*sigma(y)dW on [0, T].
pub fn simulate_y(spec: &ModelSpec, grid: &FineGridConfig, driver: &BrownianDriver) -> Result<SamplePath> {
    let dt = grid.dt(spec);
    let steps = spec.n_obs * grid.steps_per_interval;
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = spec.w;
    values.push(x);
    for k in 0..steps {
        let dw = driver.with_dt(dt).increment(k as u64);
        x += spec.drift.eval(x) * dt + spec.epsilon * spec.diffusion.eval(x) * dw;
        values.push(check_state(x, k)?);
    }
    SamplePath::new(0.0, dt, values)
}

/// Same recursion on explicit increments (refinement oracles).
pub fn simulate_y_with_increments(spec: &ModelSpec, dt: f64, increments: &[f64]) -> Result<SamplePath> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut x = spec.w;
    values.push(x);
    for (k, dw) in increments.iter().enumerate() {
        x += spec.drift.eval(x) * dt + spec.epsilon * spec.diffusion.eval(x) * dw;
        values.push(check_state(x, k)?);
    }
    SamplePath::new(0.0, dt, values)
}

/// The piecewise-coefficient diffusion: drift and diffusion frozen at the
/// path's own grid-time values.
pub fn simulate_ybar(
    spec: &ModelSpec,
    grid: &FineGridConfig,
    driver: &BrownianDriver,
    convention: IndexConvention,
) -> Result<SamplePath> {
    let dt = grid.dt(spec);
    let spi = grid.steps_per_interval;
    let steps = spec.n_obs * spi;
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = spec.w;
    values.push(x);
    let (mut f_frozen, mut s_frozen) = frozen_levels(spec, x, 0, convention);
    for k in 0..steps {
        if k % spi == 0 && k > 0 {
            let (f, s) = frozen_levels(spec, x, k / spi, convention);
            f_frozen = f;
            s_frozen = s;
        }
        let dw = driver.with_dt(dt).increment(k as u64);
        x += f_frozen * dt + spec.epsilon * s_frozen * dw;
        values.push(check_state(x, k)?);
    }
    SamplePath::new(0.0, dt, values)
}

fn frozen_levels(spec: &ModelSpec, x: f64, interval: usize, convention: IndexConvention) -> (f64, f64) {
    match (convention, interval) {
        // literal summation-from-one convention leaves the first interval empty
        (IndexConvention::FromOne, 0) => (0.0, 0.0),
        _ => (spec.drift.eval(x), spec.diffusion.eval(x)),
    }
}

/// Which constant-diffusion process to generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantEpsForm {
    /// d xi = (f/sigma^2)(xi) dt + eps dW
    FOverSigma2,
    /// drift frozen along the discretized-clock knots of the path itself
    GBar,
    /// d zeta = (f/sigma^2)(zeta) * sigma_bar_n^2(t, zeta) dt + eps dW on [0, T]
    ZetaBar,
}

/// Simulate a constant-diffusion companion process.
///
/// `FOverSigma2` and `GBar` run on the extended span `horizon_multiplier * T`
/// so the clocks stay inside the simulation; `ZetaBar` lives on [0, T].
pub fn simulate_constant_eps(
    form: ConstantEpsForm,
    spec: &ModelSpec,
    grid: &FineGridConfig,
    driver: &BrownianDriver,
) -> Result<SamplePath> {
    let dt = grid.dt(spec);
    let drv = driver.with_dt(dt);
    let s1sq = spec.diffusion.sigma1 * spec.diffusion.sigma1;
    match form {
        ConstantEpsForm::FOverSigma2 | ConstantEpsForm::GBar => {
            if grid.horizon_multiplier + 1e-12 < s1sq {
                return Err(Error::Config(format!(
                    "horizon_multiplier {} below sigma1^2 = {s1sq}; clocks would overrun",
                    grid.horizon_multiplier
                )));
            }
        }
        ConstantEpsForm::ZetaBar => {}
    }
    match form {
        ConstantEpsForm::FOverSigma2 => {
            let steps = (spec.n_obs * grid.steps_per_interval) as f64 * grid.horizon_multiplier;
            let steps = steps.ceil() as usize;
            let mut values = Vec::with_capacity(steps + 1);
            let mut x = spec.w;
            values.push(x);
            for k in 0..steps {
                x += spec.f_over_sigma2(x) * dt + spec.epsilon * drv.increment(k as u64);
                values.push(check_state(x, k)?);
            }
            SamplePath::new(0.0, dt, values)
        }
        ConstantEpsForm::GBar => {
            let steps = (spec.n_obs * grid.steps_per_interval) as f64 * grid.horizon_multiplier;
            let steps = steps.ceil() as usize;
            let obs_dt = spec.obs_dt();
            let mut values = Vec::with_capacity(steps + 1);
            let mut x = spec.w;
            values.push(x);
            // self-referential knots of the discretized clock
            let mut i = 0usize; // current interval index
            let mut level = spec.f_over_sigma2(x);
            let mut next_knot = spec.diffusion.eval_sq(x) * obs_dt;
            for k in 0..steps {
                let t = k as f64 * dt;
                while i < spec.n_obs && t > next_knot {
                    i += 1;
                    if i < spec.n_obs {
                        let view = PathView { t0: 0.0, dt, values: &values };
                        let xk = view.value_at(next_knot);
                        level = spec.f_over_sigma2(xk);
                        next_knot += spec.diffusion.eval_sq(xk) * obs_dt;
                    }
                }
                let drift = if i < spec.n_obs { level } else { 0.0 };
                x += drift * dt + spec.epsilon * drv.increment(k as u64);
                values.push(check_state(x, k)?);
            }
            SamplePath::new(0.0, dt, values)
        }
        ConstantEpsForm::ZetaBar => {
            let spi = grid.steps_per_interval;
            let steps = spec.n_obs * spi;
            let mut values = Vec::with_capacity(steps + 1);
            let mut x = spec.w;
            values.push(x);
            let mut frozen_sq = spec.diffusion.eval_sq(x);
            for k in 0..steps {
                if k % spi == 0 && k > 0 {
                    frozen_sq = spec.diffusion.eval_sq(x);
                }
                x += spec.f_over_sigma2(x) * frozen_sq * dt + spec.epsilon * drv.increment(k as u64);
                values.push(check_state(x, k)?);
            }
            SamplePath::new(0.0, dt, values)
        }
    }
}

/// The discrete autoregression Z on the observation grid (n + 1 values).
pub fn simulate_euler(spec: &ModelSpec, driver: &BrownianDriver) -> Result<Vec<f64>> {
    let h = spec.obs_dt();
    let mut z = Vec::with_capacity(spec.n_obs + 1);
    let mut x = spec.w;
    z.push(x);
    for i in 1..=spec.n_obs {
        let xi = driver.aux_normal(i as u64);
        x += h * spec.drift.eval(x) + spec.epsilon * h.sqrt() * spec.diffusion.eval(x) * xi;
        z.push(check_state(x, i)?);
    }
    Ok(z)
}

/// Unit-diffusion processes obtained through the variance-stabilizing
/// transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MuForm {
    Mu,
    MuBar,
}

/// Simulate the unit-diffusion process (or its drift-frozen companion) on
/// [0, T], starting from F(w).
pub fn simulate_mu_family(
    form: MuForm,
    spec: &ModelSpec,
    grid: &FineGridConfig,
    driver: &BrownianDriver,
    table: &TransformTable,
) -> Result<SamplePath> {
    if !spec.diffusion.has_deriv() {
        return Err(Error::Config("unit-diffusion drift needs the diffusion derivative".into()));
    }
    if spec.fg_lipschitz_l.is_none() {
        return Err(Error::Config("fg_lipschitz_l must be declared for the unit-diffusion chain".into()));
    }
    let dt = grid.dt(spec);
    let drv = driver.with_dt(dt);
    let spi = grid.steps_per_interval;
    let steps = spec.n_obs * spi;
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = table.eval(spec.w);
    values.push(x);
    let mut frozen = crate::lamperti::drift_b(table, spec, x)?;
    for k in 0..steps {
        let drift = match form {
            MuForm::Mu => crate::lamperti::drift_b(table, spec, x)?,
            MuForm::MuBar => {
                if k % spi == 0 && k > 0 {
                    frozen = crate::lamperti::drift_b(table, spec, x)?;
                }
                frozen
            }
        };
        x += drift * dt + drv.increment(k as u64);
        values.push(check_state(x, k)?);
    }
    SamplePath::new(0.0, dt, values)
}

/// General Euler-Maruyama with a path-dependent drift field and constant
/// diffusion; used to draw from likelihood-ratio hypotheses.
pub fn simulate_under<F>(drift: F, eps: f64, x0: f64, dt: f64, steps: usize, driver: &BrownianDriver) -> Result<SamplePath>
where
    F: Fn(f64, PathView<'_>) -> f64,
{
    let drv = driver.with_dt(dt);
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = x0;
    values.push(x);
    for k in 0..steps {
        let t = k as f64 * dt;
        let g = drift(t, PathView { t0: 0.0, dt, values: &values });
        x += g * dt + eps * drv.increment(k as u64);
        values.push(check_state(x, k)?);
    }
    SamplePath::new(0.0, dt, values)
}

/// Deterministic limit ODEs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdeForm {
    /// dz/dt = f(z)
    Z,
    /// dz/dt = (f/sigma^2)(z) * sigma_bar_n^2(t, z), coefficients frozen at
    /// the solution's own grid-time values
    ZBar,
}

/// Fixed-step fourth-order Runge-Kutta on the fine grid.
///
/// The frozen coefficient of `ZBar` is constant inside each observation
/// interval and fine steps never straddle a knot, so the classical order is
/// retained per interval.
pub fn solve_ode(form: OdeForm, spec: &ModelSpec, grid: &FineGridConfig) -> Result<SamplePath> {
    let dt = grid.dt(spec);
    let spi = grid.steps_per_interval;
    let steps = spec.n_obs * spi;
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = spec.w;
    values.push(x);
    let mut frozen_sq = spec.diffusion.eval_sq(x);
    for k in 0..steps {
        if k % spi == 0 && k > 0 {
            frozen_sq = spec.diffusion.eval_sq(x);
        }
        let rhs = |z: f64| match form {
            OdeForm::Z => spec.drift.eval(z),
            OdeForm::ZBar => spec.f_over_sigma2(z) * frozen_sq,
        };
        let k1 = rhs(x);
        let k2 = rhs(x + 0.5 * dt * k1);
        let k3 = rhs(x + 0.5 * dt * k2);
        let k4 = rhs(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        values.push(check_state(x, k)?);
    }
    SamplePath::new(0.0, dt, values)
}
