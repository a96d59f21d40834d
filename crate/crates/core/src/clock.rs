//! Random time changes driven by the squared diffusion coefficient: the
//! integral clocks and their inverses, the discretized clock, frozen
//! piecewise coefficients, the re-clocking maps, and the path-extension
//! kernel.

use crate::error::{Error, Result};
use crate::lamperti::TransformTable;
use crate::model::{IndexConvention, ModelSpec};
use crate::path::SamplePath;
use crate::rng::BrownianDriver;

/// Which clock functional to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClockKind {
    /// rho_s = int_0^s sigma^2(x_r) dr
    Rho,
    /// theta_s = int_0^s sigma^{-2}(x_r) dr
    Theta,
    /// eta_t = inf { s : rho_s >= t }
    Eta,
    /// A_t = inf { s : theta_s >= t }
    A,
    /// the discretized clock
    ABarN,
}

#[derive(Clone, Copy, Debug)]
pub struct ClockResult {
    pub kind: ClockKind,
    pub query_time: f64,
    pub value: f64,
    pub path_span_ok: bool,
}

/// Cumulative trapezoid of `integrand(path value)` at the grid knots.
fn cum_trapezoid(path: &SamplePath, integrand: impl Fn(f64) -> f64) -> Vec<f64> {
    let v = path.values();
    let dt = path.dt();
    let mut acc = Vec::with_capacity(v.len());
    let mut s = 0.0;
    acc.push(0.0);
    let mut prev = integrand(v[0]);
    for x in &v[1..] {
        let cur = integrand(*x);
        s += 0.5 * dt * (prev + cur);
        acc.push(s);
        prev = cur;
    }
    acc
}

/// Accumulator value at an off-grid time (partial trapezoid on the last step).
fn acc_at(path: &SamplePath, acc: &[f64], integrand: impl Fn(f64) -> f64, s: f64) -> f64 {
    let dt = path.dt();
    let u = (s - path.t0()) / dt;
    let k = (u.floor() as usize).min(acc.len() - 2);
    let frac = (s - (path.t0() + k as f64 * dt)).max(0.0);
    if frac == 0.0 {
        return acc[k];
    }
    let xa = path.values()[k];
    let xb = path.view().value_at(s);
    acc[k] + 0.5 * frac * (integrand(xa) + integrand(xb))
}

/// First time the accumulator reaches `level`; linear interpolation inside
/// the bracketing fine step. sigma^2 >= sigma0^2 > 0 keeps the accumulator
/// strictly increasing, so the bracket is unique.
fn invert_acc(path: &SamplePath, acc: &[f64], level: f64) -> Result<f64> {
    if level <= 0.0 {
        return Ok(path.t0());
    }
    let end = *acc.last().unwrap();
    if level > end {
        return Err(Error::ClockOverrun { needed: level, span: end });
    }
    let k = match acc.binary_search_by(|v| v.partial_cmp(&level).unwrap()) {
        Ok(p) => return Ok(path.t0() + p as f64 * path.dt()),
        Err(p) => p - 1,
    };
    let frac = (level - acc[k]) / (acc[k + 1] - acc[k]);
    Ok(path.t0() + (k as f64 + frac) * path.dt())
}

/// Evaluate a clock functional of the path at `query_time`.
pub fn clock(path: &SamplePath, spec: &ModelSpec, kind: ClockKind, query_time: f64) -> Result<ClockResult> {
    if query_time < 0.0 {
        return Err(Error::Config(format!("clock query time {query_time} is negative")));
    }
    let s0sq = spec.diffusion.sigma0 * spec.diffusion.sigma0;
    let s1sq = spec.diffusion.sigma1 * spec.diffusion.sigma1;
    let value = match kind {
        ClockKind::Rho | ClockKind::Eta => {
            let acc = cum_trapezoid(path, |x| spec.diffusion.eval_sq(x));
            match kind {
                ClockKind::Rho => {
                    path.value_at(query_time)?; // span check
                    let v = acc_at(path, &acc, |x| spec.diffusion.eval_sq(x), query_time);
                    debug_assert!(v >= query_time * s0sq - 1e-9 && v <= query_time * s1sq + 1e-9);
                    v
                }
                _ => {
                    let v = invert_acc(path, &acc, query_time)?;
                    debug_assert!(v >= query_time / s1sq - 1e-9 && v <= query_time / s0sq + 1e-9);
                    v
                }
            }
        }
        ClockKind::Theta | ClockKind::A => {
            let acc = cum_trapezoid(path, |x| 1.0 / spec.diffusion.eval_sq(x));
            match kind {
                ClockKind::Theta => {
                    path.value_at(query_time)?;
                    let v = acc_at(path, &acc, |x| 1.0 / spec.diffusion.eval_sq(x), query_time);
                    debug_assert!(v >= query_time / s1sq - 1e-9 && v <= query_time / s0sq + 1e-9);
                    v
                }
                _ => {
                    let v = invert_acc(path, &acc, query_time)?;
                    debug_assert!(v <= query_time * s1sq + 1e-9);
                    v
                }
            }
        }
        ClockKind::ABarN => return a_bar_n(path, spec, query_time),
    };
    Ok(ClockResult { kind, query_time, value, path_span_ok: true })
}

/// Knots of the discretized clock at the observation times, n + 1 values
/// starting at 0.
pub fn a_bar_knots(path: &SamplePath, spec: &ModelSpec) -> Result<Vec<f64>> {
    let h = spec.obs_dt();
    let mut knots = Vec::with_capacity(spec.n_obs + 1);
    let mut a = 0.0;
    knots.push(a);
    for _ in 0..spec.n_obs {
        let x = path
            .value_at(a)
            .map_err(|_| Error::ClockOverrun { needed: a, span: path.span_end() })?;
        a += spec.diffusion.eval_sq(x) * h;
        knots.push(a);
    }
    Ok(knots)
}

/// The discretized clock: piecewise-linear recursion seeded at 0, slope
/// frozen from the path value at the previous knot.
pub fn a_bar_n(path: &SamplePath, spec: &ModelSpec, t: f64) -> Result<ClockResult> {
    if !(0.0..=spec.horizon_t + 1e-12).contains(&t) {
        return Err(Error::Config(format!("discretized clock query {t} outside [0, T]")));
    }
    let h = spec.obs_dt();
    let i = ((t / h).floor() as usize).min(spec.n_obs - 1);
    let knots = a_bar_knots(path, spec)?;
    let x = path
        .value_at(knots[i])
        .map_err(|_| Error::ClockOverrun { needed: knots[i], span: path.span_end() })?;
    let value = knots[i] + spec.diffusion.eval_sq(x) * (t - i as f64 * h);
    Ok(ClockResult { kind: ClockKind::ABarN, query_time: t, value, path_span_ok: true })
}

/// Which frozen coefficient family a `PiecewiseCoeff` carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoeffKind {
    FBarN,
    SigmaBarN,
    GBarN,
    BBarN,
}

/// Piecewise-constant coefficient: one level per interval between knots.
///
/// FBarN and SigmaBarN intervals are right-open; GBarN and BBarN intervals
/// are left-open/right-closed. Evaluation outside the knot span is 0.
#[derive(Clone, Debug)]
pub struct PiecewiseCoeff {
    pub kind: CoeffKind,
    pub knots: Vec<f64>,
    pub levels: Vec<f64>,
}

impl PiecewiseCoeff {
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.levels.len();
        let right_closed = matches!(self.kind, CoeffKind::GBarN | CoeffKind::BBarN);
        if right_closed {
            if t <= self.knots[0] || t > self.knots[n] {
                return 0.0;
            }
            // first knot with knots[k] >= t; interval is (knots[k-1], knots[k]]
            let k = self.knots.partition_point(|&k| k < t);
            self.levels[k - 1]
        } else {
            if t < self.knots[0] || t >= self.knots[n] {
                return 0.0;
            }
            let k = self.knots.partition_point(|&k| k <= t);
            self.levels[k - 1]
        }
    }
}

/// Frozen coefficients of the path on the observation grid (FBarN,
/// SigmaBarN) or on the discretized-clock grid (GBarN).
pub fn piecewise_coeffs(path: &SamplePath, spec: &ModelSpec, kind: CoeffKind) -> Result<PiecewiseCoeff> {
    piecewise_coeffs_with(path, spec, kind, IndexConvention::FromZero)
}

pub fn piecewise_coeffs_with(
    path: &SamplePath,
    spec: &ModelSpec,
    kind: CoeffKind,
    convention: IndexConvention,
) -> Result<PiecewiseCoeff> {
    let n = spec.n_obs;
    let (knots, mut levels) = match kind {
        CoeffKind::FBarN | CoeffKind::SigmaBarN => {
            let knots: Vec<f64> = (0..=n).map(|i| spec.obs_time(i)).collect();
            let levels: Result<Vec<f64>> = (0..n)
                .map(|i| {
                    let x = path.value_at(knots[i])?;
                    Ok(match kind {
                        CoeffKind::FBarN => spec.drift.eval(x),
                        _ => spec.diffusion.eval(x),
                    })
                })
                .collect();
            (knots, levels?)
        }
        CoeffKind::GBarN => {
            let knots = a_bar_knots(path, spec)?;
            let levels: Result<Vec<f64>> = (0..n)
                .map(|i| {
                    let x = path
                        .value_at(knots[i])
                        .map_err(|_| Error::ClockOverrun { needed: knots[i], span: path.span_end() })?;
                    Ok(spec.f_over_sigma2(x))
                })
                .collect();
            (knots, levels?)
        }
        CoeffKind::BBarN => {
            return Err(Error::Config("use piecewise_b_bar for the unit-diffusion frozen drift".into()))
        }
    };
    if convention == IndexConvention::FromOne {
        levels[0] = 0.0;
    }
    Ok(PiecewiseCoeff { kind, knots, levels })
}

/// Frozen unit-diffusion drift on the observation grid.
pub fn piecewise_b_bar(path: &SamplePath, spec: &ModelSpec, table: &TransformTable) -> Result<PiecewiseCoeff> {
    let n = spec.n_obs;
    let knots: Vec<f64> = (0..=n).map(|i| spec.obs_time(i)).collect();
    let levels: Result<Vec<f64>> = (0..n)
        .map(|i| crate::lamperti::drift_b(table, spec, path.value_at(knots[i])?))
        .collect();
    Ok(PiecewiseCoeff { kind: CoeffKind::BBarN, knots, levels: levels? })
}

/// What stopped a `StoppedPath`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopKind {
    AT,
    ABarTN,
    STN,
    FixedT,
}

/// A path observed only on [0, stop_time].
#[derive(Clone, Debug)]
pub struct StoppedPath {
    pub path: SamplePath,
    pub stop_time: f64,
    pub stop_kind: StopKind,
}

/// Re-clock a [0, T] path by the inverse of its sigma^2 integral: output
/// value_at(t) = input value_at(eta_t), resampled on the input's fine grid
/// over [0, rho_T].
pub fn phi_map(path_on_0t: &SamplePath, spec: &ModelSpec) -> Result<StoppedPath> {
    phi_map_fine(path_on_0t, spec, 1)
}

/// `phi_map` with the output resampled on a grid `refine` times finer than
/// the input. The input path is piecewise linear with slope breaks of size
/// ~eps/sqrt(dt) at its knots; resampling at the input resolution loses
/// ~eps*sqrt(dt) across each break, so pathwise round-trip checks need a
/// finer output grid (refine ~ sqrt(step count) keeps the loss at O(dt)).
pub fn phi_map_fine(path_on_0t: &SamplePath, spec: &ModelSpec, refine: usize) -> Result<StoppedPath> {
    assert!(refine >= 1);
    let dt_in = path_on_0t.dt();
    let dt_out = dt_in / refine as f64;
    let acc = cum_trapezoid(path_on_0t, |x| spec.diffusion.eval_sq(x));
    let rho_t = *acc.last().unwrap();
    let steps = (rho_t / dt_out).ceil() as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut j = 0usize;
    for k in 0..=steps {
        let level = k as f64 * dt_out;
        let eta = if level >= rho_t {
            path_on_0t.span_end()
        } else {
            while acc[j + 1] < level {
                j += 1;
            }
            let frac = (level - acc[j]) / (acc[j + 1] - acc[j]);
            path_on_0t.t0() + (j as f64 + frac) * dt_in
        };
        values.push(path_on_0t.view().value_at(eta));
    }
    Ok(StoppedPath { path: SamplePath::new(0.0, dt_out, values)?, stop_time: rho_t, stop_kind: StopKind::AT })
}

// Inverse-clock levels may undershoot their target by the trapezoid error;
// clamp within this fraction of the target before declaring an overrun.
const RECLOCK_SLACK: f64 = 0.02;

/// Inverse re-clocking of an A_T-stopped path back onto [0, T].
pub fn psi_map(stopped: &StoppedPath, spec: &ModelSpec) -> Result<SamplePath> {
    assert!(stopped.stop_kind == StopKind::AT, "psi_map needs an A_T-stopped path");
    let path = &stopped.path;
    let dt = path.dt();
    let acc = cum_trapezoid(path, |x| 1.0 / spec.diffusion.eval_sq(x));
    let theta_stop = acc_at(path, &acc, |x| 1.0 / spec.diffusion.eval_sq(x), stopped.stop_time.min(path.span_end()));
    if theta_stop < spec.horizon_t * (1.0 - RECLOCK_SLACK) {
        return Err(Error::ClockOverrun { needed: spec.horizon_t, span: theta_stop });
    }
    let steps = (spec.horizon_t / dt).round() as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut j = 0usize;
    for k in 0..=steps {
        let level = (k as f64 * dt).min(spec.horizon_t);
        let a = if level >= theta_stop {
            stopped.stop_time.min(path.span_end())
        } else {
            while acc[j + 1] < level {
                j += 1;
            }
            let frac = (level - acc[j]) / (acc[j + 1] - acc[j]);
            path.t0() + (j as f64 + frac) * dt
        };
        values.push(path.view().value_at(a.min(stopped.stop_time)));
    }
    SamplePath::new(0.0, dt, values)
}

/// Stop a path at S = A_T and the discretized clock's endpoint, whichever
/// is smaller; ties within 1e-12 resolve to A_T.
pub fn stop_s_t_n(path: &SamplePath, spec: &ModelSpec) -> Result<StoppedPath> {
    let a_t = clock(path, spec, ClockKind::A, spec.horizon_t)?.value;
    let a_bar_t = a_bar_n(path, spec, spec.horizon_t)?.value;
    let stop_time = if (a_t - a_bar_t).abs() <= 1e-12 || a_t <= a_bar_t { a_t } else { a_bar_t };
    Ok(StoppedPath { path: path.clone(), stop_time, stop_kind: StopKind::STN })
}

// Extension budget beyond sigma1^2 * T.
const EXTEND_MARGIN: f64 = 0.1;

/// Extend an S-stopped path with drift-free increments eps*dW until its
/// theta clock reaches T, then stop at the extended path's A_T.
///
/// The appended randomness must come from a driver stream disjoint from the
/// one that generated the observed segment.
pub fn kernel_extend(stopped: &StoppedPath, spec: &ModelSpec, driver: &BrownianDriver) -> Result<StoppedPath> {
    assert!(stopped.stop_kind == StopKind::STN, "kernel_extend needs an S-stopped path");
    let dt = stopped.path.dt();
    let drv = driver.with_dt(dt);
    let k_stop = ((stopped.stop_time / dt).floor() as usize).min(stopped.path.len() - 1);
    let mut values = stopped.path.values()[..=k_stop].to_vec();
    if values.len() < 2 {
        values.push(stopped.path.values()[1]);
    }

    let inv_sq = |x: f64| 1.0 / spec.diffusion.eval_sq(x);
    let mut theta = {
        let partial = SamplePath::new(stopped.path.t0(), dt, values.clone())?;
        *cum_trapezoid(&partial, inv_sq).last().unwrap()
    };
    let budget = spec.diffusion.sigma1 * spec.diffusion.sigma1 * spec.horizon_t * (1.0 + EXTEND_MARGIN);
    let max_len = (budget / dt).ceil() as usize + 2;
    let mut k = values.len() - 1;
    while theta < spec.horizon_t {
        if values.len() > max_len {
            return Err(Error::ClockOverrun { needed: spec.horizon_t, span: theta });
        }
        let x = *values.last().unwrap();
        let next = x + spec.epsilon * drv.increment(k as u64);
        if !next.is_finite() {
            return Err(Error::BlowUp { step: k });
        }
        theta += 0.5 * dt * (inv_sq(x) + inv_sq(next));
        values.push(next);
        k += 1;
    }
    let extended = SamplePath::new(stopped.path.t0(), dt, values)?;
    let a_t = clock(&extended, spec, ClockKind::A, spec.horizon_t)?.value;
    Ok(StoppedPath { path: extended, stop_time: a_t, stop_kind: StopKind::AT })
}
