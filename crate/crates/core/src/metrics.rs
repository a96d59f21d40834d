//! Monte Carlo estimators for the expectations in the convergence-rate
//! bounds, total-variation estimates from likelihood-ratio samples, and
//! log-log rate fits.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::clock::{a_bar_n, clock, ClockKind};
use crate::error::{Error, Result};
use crate::likelihood::{drift_gap_sq_integral, girsanov_log_lr, DriftHypothesis};
use crate::model::{ExperimentId, ModelSpec};
use crate::path::{
    simulate_constant_eps, simulate_euler, simulate_mu_family, simulate_under, simulate_y, simulate_ybar,
    ConstantEpsForm, FineGridConfig, MuForm,
};
use crate::rng::BrownianDriver;
use crate::stats::{mean, pairwise_sum, std_error};

/// One Monte Carlo estimate; bit-reproducible from (seed, replicates)
/// regardless of worker count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub seed: u64,
}

// Fraction of replicates allowed to drop on clock overruns.
const MAX_DROP_FRACTION: f64 = 0.001;

/// Replicate-parallel sample collection in stream order. Clock overruns drop
/// the replicate (logged); other errors abort; too many drops abort too.
fn mc_collect(replicates: usize, seed: u64, f: impl Fn(u64) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    if replicates < 100 {
        return Err(Error::Config(format!("replicates must be >= 100, got {replicates}")));
    }
    let raw: Vec<Result<Option<f64>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| match f(r) {
            Ok(v) => Ok(Some(v)),
            Err(Error::ClockOverrun { needed, span }) => {
                log::warn!("replicate (seed {seed}, stream {r}) dropped: clock level {needed} beyond span {span}");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect();
    let mut values = Vec::with_capacity(replicates);
    let mut dropped = 0usize;
    for r in raw {
        match r? {
            Some(v) => values.push(v),
            None => dropped += 1,
        }
    }
    if (dropped as f64) > MAX_DROP_FRACTION * replicates as f64 {
        return Err(Error::ExcessiveDrops { dropped, total: replicates });
    }
    Ok(values)
}

/// Deterministic pairwise reduce of collected samples into an estimate.
fn mc_map(replicates: usize, seed: u64, f: impl Fn(u64) -> Result<f64> + Sync) -> Result<MCEstimate> {
    let values = mc_collect(replicates, seed, f)?;
    Ok(MCEstimate { mean: mean(&values), std_error: std_error(&values), replicates: values.len(), seed })
}

/// Generic replicate-parallel expectation with the same drop and reduction
/// policy as the built-in estimators; `f` maps a replicate stream id to one
/// sample.
pub fn estimate_expectation(
    replicates: usize,
    seed: u64,
    f: impl Fn(u64) -> Result<f64> + Sync,
) -> Result<MCEstimate> {
    mc_map(replicates, seed, f)
}

/// E |A_T - A_bar_T^n| under the constant-diffusion companion law.
pub fn estimate_clock_gap(spec: &ModelSpec, grid: &FineGridConfig, replicates: usize, seed: u64) -> Result<MCEstimate> {
    mc_map(replicates, seed, |r| {
        let d = BrownianDriver::new(seed, r, grid.dt(spec));
        let p = simulate_constant_eps(ConstantEpsForm::FOverSigma2, spec, grid, &d)?;
        let a_t = clock(&p, spec, ClockKind::A, spec.horizon_t)?.value;
        let a_bar = a_bar_n(&p, spec, spec.horizon_t)?.value;
        Ok((a_t - a_bar).abs())
    })
}

/// E int_0^{A_bar_T^n} (f/sigma^2(x_s) - g_bar_n(s, x))^2 ds under the same law.
pub fn estimate_drift_gap_l2(spec: &ModelSpec, grid: &FineGridConfig, replicates: usize, seed: u64) -> Result<MCEstimate> {
    mc_map(replicates, seed, |r| {
        let d = BrownianDriver::new(seed, r, grid.dt(spec));
        let p = simulate_constant_eps(ConstantEpsForm::FOverSigma2, spec, grid, &d)?;
        let a_bar = a_bar_n(&p, spec, spec.horizon_t)?.value;
        drift_gap_sq_integral(&p, spec, a_bar)
    })
}

/// Where the likelihood-ratio observation window ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    FixedT,
    ABarTN,
}

/// Total variation between the path laws of h1 and h0, estimated as
/// (1/2) E_{h0} |1 - exp(log LR)| from paths simulated under h0 started at
/// `x0`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_tv_from_lr(
    spec: &ModelSpec,
    grid: &FineGridConfig,
    h1: &DriftHypothesis,
    h0: &DriftHypothesis,
    stop_rule: StopRule,
    x0: f64,
    replicates: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let dt = grid.dt(spec);
    let span_mult = match stop_rule {
        StopRule::FixedT => 1.0,
        StopRule::ABarTN => grid.horizon_multiplier,
    };
    let steps = ((spec.horizon_t * span_mult / dt).round() as usize).max(1);
    let sample_lr = |r: u64| -> Result<f64> {
        let d = BrownianDriver::new(seed, r, dt);
        let p = simulate_under(|t, v| h0.drift_at(t, v), h0.diffusion_eps, x0, dt, steps, &d)?;
        let upto = match stop_rule {
            StopRule::FixedT => spec.horizon_t,
            StopRule::ABarTN => a_bar_n(&p, spec, spec.horizon_t)?.value,
        };
        Ok(girsanov_log_lr(&p, h1, h0, upto)?.value)
    };
    let ls = mc_collect(replicates, seed, sample_lr)?;
    let samples: Vec<f64> = ls.iter().map(|l| 0.5 * l.exp_m1().abs()).collect();
    let est = MCEstimate {
        mean: mean(&samples),
        std_error: std_error(&samples),
        replicates: samples.len(),
        seed,
    };
    debug_assert!(est.mean >= -3.0 * est.std_error && est.mean <= 1.0 + 3.0 * est.std_error);

    // effective sample size of the importance weights exp(LR); heavy tails
    // make the TV estimate unreliable
    let lmax = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ls.iter().map(|l| (l - lmax).exp()).collect();
    let w2: Vec<f64> = w.iter().map(|x| x * x).collect();
    let ess = pairwise_sum(&w).powi(2) / pairwise_sum(&w2);
    if ess < 0.1 * ls.len() as f64 {
        log::warn!(
            "TV estimate ({} vs {}): effective sample size {:.1} of {} indicates heavy likelihood tails",
            h1.label,
            h0.label,
            ess,
            ls.len()
        );
    }
    Ok(est)
}

/// E |X_t|^p for one of the named processes.
pub fn estimate_moment(
    spec: &ModelSpec,
    grid: &FineGridConfig,
    process: ExperimentId,
    p: u32,
    at_time: f64,
    replicates: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if !matches!(p, 2 | 4 | 8) {
        return Err(Error::Config(format!("moment order must be 2, 4, or 8, got {p}")));
    }
    if !(0.0..=spec.horizon_t).contains(&at_time) {
        return Err(Error::Config(format!("moment time {at_time} outside [0, T]")));
    }
    use ExperimentId::*;
    let table = match process {
        N3 | N4 | N5 | N6 => Some(std::sync::Arc::new(crate::lamperti::build_transform(
            spec,
            crate::lamperti::table_range(spec),
            513,
        )?)),
        _ => None,
    };
    mc_map(replicates, seed, |r| {
        let d = BrownianDriver::new(seed, r, grid.dt(spec));
        let x = match process {
            M1 | N1 | N2 => simulate_y(spec, grid, &d)?.value_at(at_time)?,
            M2 => simulate_ybar(spec, grid, &d, Default::default())?.value_at(at_time)?,
            M3 | M5 | M6 => {
                // the re-clocked companion, read at its stopping time when
                // the query lies beyond it
                let path = simulate_constant_eps(ConstantEpsForm::FOverSigma2, spec, grid, &d)?;
                let stop = match process {
                    M3 => clock(&path, spec, ClockKind::A, spec.horizon_t)?.value,
                    M5 => {
                        let a = clock(&path, spec, ClockKind::A, spec.horizon_t)?.value;
                        a.min(a_bar_n(&path, spec, spec.horizon_t)?.value)
                    }
                    _ => a_bar_n(&path, spec, spec.horizon_t)?.value,
                };
                path.value_at(at_time.min(stop))?
            }
            M4 => {
                let path = simulate_constant_eps(ConstantEpsForm::GBar, spec, grid, &d)?;
                let stop = a_bar_n(&path, spec, spec.horizon_t)?.value;
                path.value_at(at_time.min(stop))?
            }
            M7 => {
                let z = simulate_euler(spec, &d)?;
                let i = (at_time / spec.obs_dt()).round() as usize;
                z[i.min(spec.n_obs)]
            }
            N3 | N4 => simulate_mu_family(MuForm::Mu, spec, grid, &d, table.as_ref().unwrap())?.value_at(at_time)?,
            N5 | N6 => simulate_mu_family(MuForm::MuBar, spec, grid, &d, table.as_ref().unwrap())?.value_at(at_time)?,
            ZetaBar => simulate_constant_eps(ConstantEpsForm::ZetaBar, spec, grid, &d)?.value_at(at_time)?,
        };
        Ok(x.abs().powi(p as i32))
    })
}

/// Sweep axis of a rate table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateAxis {
    N,
    Epsilon,
}

impl RateAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateAxis::N => "n",
            RateAxis::Epsilon => "epsilon",
        }
    }
}

/// Weighted log-log fit across sweep points.
#[derive(Clone, Debug)]
pub struct RateTable {
    pub axis: RateAxis,
    pub points: Vec<(f64, MCEstimate)>,
    pub fitted_slope: f64,
    pub slope_ci_halfwidth: f64,
}

/// Least squares on (log axis_value, log mean) with weights 1/(relative
/// standard error)^2; the CI half-width uses a t quantile on the weighted
/// slope variance.
pub fn fit_rate(axis: RateAxis, points: &[(f64, MCEstimate)]) -> Result<RateTable> {
    if points.len() < 4 {
        return Err(Error::Config(format!("rate fit needs >= 4 points, got {}", points.len())));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    let mut ws = Vec::with_capacity(points.len());
    for (v, est) in points {
        if !(est.mean > 0.0) {
            return Err(Error::DegenerateRatePoint(format!(
                "mean {} at axis value {v} (use absolute tolerances when the true quantity vanishes)",
                est.mean
            )));
        }
        let rel_se = (est.std_error / est.mean).max(1e-6);
        xs.push(v.ln());
        ys.push(est.mean.ln());
        ws.push(1.0 / (rel_se * rel_se));
    }
    let wsum = pairwise_sum(&ws);
    let xbar = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let ybar = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        sxx += ws[i] * (xs[i] - xbar) * (xs[i] - xbar);
        sxy += ws[i] * (xs[i] - xbar) * (ys[i] - ybar);
    }
    let slope = sxy / sxx;
    // slope variance with weights as inverse variances of log means
    let se_slope = (1.0 / sxx).sqrt();
    let dof = (points.len() - 2) as f64;
    let t = StudentsT::new(0.0, 1.0, dof).unwrap().inverse_cdf(0.975);
    Ok(RateTable { axis, points: points.to_vec(), fitted_slope: slope, slope_ci_halfwidth: t * se_slope })
}
