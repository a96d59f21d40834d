//! End-to-end acceptance checks. Each test prints one pass/fail line; the
//! settings (models, replicate counts, tolerance brackets) are pinned and
//! are not meant to be tuned casually.

use std::sync::Arc;

use rayon::prelude::*;

use sde_equiv::clock::{a_bar_n, clock, ClockKind};
use sde_equiv::harness::{emit, run_config, HarnessConfig, ModelConfig, RunConfig, Status};
use sde_equiv::likelihood::{euler_sufficient_logdensity, girsanov_log_lr, DriftHypothesis};
use sde_equiv::metrics::{
    estimate_clock_gap, estimate_drift_gap_l2, estimate_tv_from_lr, fit_rate, RateAxis, StopRule,
};
use sde_equiv::model::{builtin, ModelSpec};
use sde_equiv::path::{simulate_constant_eps, simulate_under, simulate_y, ConstantEpsForm, FineGridConfig};
use sde_equiv::rng::{BrownianDriver, CounterStream};
use sde_equiv::stats::{ks_two_sample, mean, normal_cdf, std_error};

fn model(name: &str, eps: f64, n: usize, w: f64) -> ModelSpec {
    let b = builtin(name).unwrap();
    ModelSpec::new(b.drift, b.diffusion, eps, 1.0, n, w, b.fg_lipschitz_l).unwrap()
}

fn model_cfg(name: &str, eps: f64, n: usize, w: f64) -> ModelConfig {
    ModelConfig {
        name: name.into(),
        epsilon: eps,
        t: 1.0,
        w,
        n,
        sigma0: None,
        sigma1: None,
        lipschitz_m: None,
        lipschitz_k: None,
        fg_lipschitz_l: None,
    }
}

fn run_cfg(suites: &[&str], replicates: usize, seed: u64, spi: usize) -> RunConfig {
    RunConfig {
        sweep_n: vec![8, 16, 32, 64],
        sweep_eps: vec![0.02, 0.04, 0.08, 0.16],
        replicates,
        seed,
        steps_per_interval: spi,
        suites: suites.iter().map(|s| s.to_string()).collect(),
        output_dir: "out".into(),
    }
}

fn verdict(idx: u32, what: &str, ok: bool) {
    println!("criterion {idx:02} ({what}): {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {idx:02} ({what}) failed");
}

#[test]
fn criterion_01_time_change_identities() {
    // 200 companion-process paths; clock identity and round trip within
    // 5*dt*sigma1^2 and 5*dt*(M(1+max|x|)*sigma1^2 + 1); halving dt halves
    // both maxima within factor [1.5, 2.5]
    let cfg = HarnessConfig {
        model: model_cfg("sin-drift", 0.1, 32, 0.0),
        run: run_cfg(&["identities"], 200, 101, 256),
    };
    let out = run_config(&cfg).unwrap();
    assert_eq!(out.results.len(), 4);
    let ok = out.results.iter().all(|r| r.status == Status::Pass);
    for r in &out.results {
        println!("  [{}] measured {:.3e} vs {:.3e}: {}", r.status.as_str(), r.measured, r.threshold, r.detail);
    }
    verdict(1, "time-change identities", ok);
}

#[test]
fn criterion_02_reclocked_law_preservation() {
    // marginals of x at the inverse clock match the original diffusion at
    // t in {T/4, T/2, T}; KS level 0.01 with Bonferroni over the 3 times
    let spec = model("sin-drift", 0.12, 8, 0.3);
    let grid = FineGridConfig::for_spec(&spec, 32);
    let reps = 10_000u64;
    let times = [0.25, 0.5, 1.0];
    let samples: Vec<([f64; 3], [f64; 3])> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let d = BrownianDriver::new(102, r, grid.dt(&spec));
            let xi = simulate_constant_eps(ConstantEpsForm::FOverSigma2, &spec, &grid, &d).unwrap();
            let mut rec = [0.0; 3];
            for (j, &t) in times.iter().enumerate() {
                let a = clock(&xi, &spec, ClockKind::A, t).unwrap().value;
                rec[j] = xi.value_at(a).unwrap();
            }
            let d2 = BrownianDriver::new(103, r, grid.dt(&spec));
            let y = simulate_y(&spec, &grid, &d2).unwrap();
            let mut dir = [0.0; 3];
            for (j, &t) in times.iter().enumerate() {
                dir[j] = y.value_at(t).unwrap();
            }
            (rec, dir)
        })
        .collect();
    let mut ok = true;
    for j in 0..3 {
        let rec: Vec<f64> = samples.iter().map(|s| s.0[j]).collect();
        let dir: Vec<f64> = samples.iter().map(|s| s.1[j]).collect();
        let ks = ks_two_sample(&rec, &dir);
        println!("  t = {}: KS D = {:.4}, p = {:.4}", times[j], ks.statistic, ks.p_value);
        ok &= ks.p_value > 0.01 / 3.0;
    }
    verdict(2, "re-clocked law preservation", ok);
}

#[test]
fn criterion_03_clock_gap_rates() {
    // n axis at saturated epsilon, epsilon axis at saturated n
    let mut points = Vec::new();
    for &n in &[8usize, 16, 32, 64] {
        let spec = model("sin-drift", 1e-6, n, 1.0);
        let grid = FineGridConfig::for_spec(&spec, 32);
        points.push((n as f64, estimate_clock_gap(&spec, &grid, 2000, 104).unwrap()));
    }
    let fit_n = fit_rate(RateAxis::N, &points).unwrap();
    let mut points = Vec::new();
    for &eps in &[0.02, 0.04, 0.08, 0.16] {
        // start at the drift's zero so the epsilon-independent freezing
        // bias cannot mask the epsilon term
        let spec = model("sin-drift", eps, 512, 0.0);
        let grid = FineGridConfig::for_spec(&spec, 4);
        points.push((eps, estimate_clock_gap(&spec, &grid, 2000, 105).unwrap()));
    }
    let fit_e = fit_rate(RateAxis::Epsilon, &points).unwrap();
    println!("  n-axis slope {:.3} (bracket [-1.3, -0.7]), eps-axis slope {:.3} (bracket [0.7, 1.3])", fit_n.fitted_slope, fit_e.fitted_slope);
    let ok = (-1.3..=-0.7).contains(&fit_n.fitted_slope) && (0.7..=1.3).contains(&fit_e.fitted_slope);
    verdict(3, "clock-gap decay rates", ok);
}

#[test]
fn criterion_04_drift_gap_rates() {
    let mut points = Vec::new();
    for &n in &[8usize, 16, 32, 64] {
        let spec = model("sin-drift", 1e-6, n, 1.0);
        let grid = FineGridConfig::for_spec(&spec, 32);
        points.push((n as f64, estimate_drift_gap_l2(&spec, &grid, 2000, 106).unwrap()));
    }
    let fit_n = fit_rate(RateAxis::N, &points).unwrap();
    let mut points = Vec::new();
    for &eps in &[0.05, 0.1, 0.2, 0.4] {
        let spec = model("small-sin-drift", eps, 8, 0.0);
        let grid = FineGridConfig::for_spec(&spec, 4);
        points.push((eps, estimate_drift_gap_l2(&spec, &grid, 2000, 107).unwrap()));
    }
    let fit_e = fit_rate(RateAxis::Epsilon, &points).unwrap();
    // the epsilon exponent is contested between a first-order and a
    // second-order decay; the measured slope picks the supported one
    let supported = if (fit_e.fitted_slope - 1.0).abs() <= (fit_e.fitted_slope - 2.0).abs() {
        "first-order (slope 1)"
    } else {
        "second-order (slope 2)"
    };
    println!(
        "  n-axis slope {:.3} (bracket [-2.4, -1.6]); eps-axis slope {:.3} +- {:.3}, supports the {supported} hypothesis",
        fit_n.fitted_slope, fit_e.fitted_slope, fit_e.slope_ci_halfwidth
    );
    let ok = (-2.4..=-1.6).contains(&fit_n.fitted_slope) && fit_e.slope_ci_halfwidth.is_finite();
    verdict(4, "drift-gap decay rates", ok);
}

#[test]
fn criterion_05_tv_bounded_by_hellinger() {
    // every cell of a 4x3 sweep obeys TV <= 4 sqrt(E h) + 3 SE
    let cfg = HarnessConfig {
        model: model_cfg("sin-drift", 0.1, 16, 0.0),
        run: RunConfig {
            sweep_eps: vec![0.05, 0.1, 0.2],
            ..run_cfg(&["tv_bounds"], 10_000, 108, 16)
        },
    };
    let out = run_config(&cfg).unwrap();
    assert_eq!(out.results.len(), 12);
    let ok = out.results.iter().all(|r| r.status == Status::Pass);
    for r in &out.results {
        println!(
            "  [{}] n = {}, eps = {}: TV {:.4e} vs bound {:.4e}",
            r.status.as_str(),
            r.cell_n.unwrap(),
            r.cell_eps.unwrap(),
            r.measured,
            r.threshold
        );
    }
    verdict(5, "total variation within Hellinger bound", ok);
}

#[test]
fn criterion_06_girsanov_calibration() {
    let reps = 100_000u64;
    let martingale = |lrs: &[f64]| {
        let exps: Vec<f64> = lrs.iter().map(|l| l.exp()).collect();
        (mean(&exps), std_error(&exps))
    };
    let mut ok = true;

    // pair 1: state drift vs zero drift under the zero-drift law
    {
        let spec = model("small-sin-drift", 0.3, 8, 0.2);
        let grid = FineGridConfig::new(16, 1.0);
        let dt = grid.dt(&spec);
        let h1 = DriftHypothesis::f_over_sigma2(&spec);
        let h0 = DriftHypothesis::zero(spec.epsilon);
        let lrs: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let d = BrownianDriver::new(109, r, dt);
                let p = simulate_under(|_, _| 0.0, spec.epsilon, spec.w, dt, 128, &d).unwrap();
                girsanov_log_lr(&p, &h1, &h0, 1.0).unwrap().value
            })
            .collect();
        let (m, se) = martingale(&lrs);
        println!("  f/sigma^2 vs 0: E exp(LR) = {m:.5} +- {se:.5}");
        ok &= (m - 1.0).abs() < 3.0 * se;
    }
    // pair 2: state drift vs its grid freeze, stopped at the discrete clock
    {
        let spec = model("sin-drift", 0.1, 16, 0.2);
        let grid = FineGridConfig::for_spec(&spec, 16);
        let dt = grid.dt(&spec);
        let h1 = DriftHypothesis::f_over_sigma2(&spec);
        let h0 = DriftHypothesis::g_bar_n(&spec);
        let steps = (grid.horizon_multiplier * spec.horizon_t / dt).ceil() as usize;
        let lrs: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let d = BrownianDriver::new(110, r, dt);
                let p = simulate_under(|t, v| h0.drift_at(t, v), spec.epsilon, spec.w, dt, steps, &d).unwrap();
                let upto = a_bar_n(&p, &spec, 1.0).unwrap().value;
                girsanov_log_lr(&p, &h1, &h0, upto).unwrap().value
            })
            .collect();
        let (m, se) = martingale(&lrs);
        println!("  f/sigma^2 vs frozen: E exp(LR) = {m:.5} +- {se:.5}");
        ok &= (m - 1.0).abs() < 3.0 * se;
    }
    // pair 3: unit-diffusion drift vs its grid freeze
    {
        let spec = model("sin-drift", 0.25, 8, 0.2);
        let table = Arc::new(
            sde_equiv::lamperti::build_transform(&spec, sde_equiv::lamperti::table_range(&spec), 257).unwrap(),
        );
        let grid = FineGridConfig::new(16, 1.0);
        let dt = grid.dt(&spec);
        let h1 = DriftHypothesis::lamperti_b(&spec, table.clone());
        let h0 = DriftHypothesis::b_bar_n(&spec, table.clone());
        let mu0 = table.eval(spec.w);
        let lrs: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let d = BrownianDriver::new(111, r, dt);
                let p = simulate_under(|t, v| h0.drift_at(t, v), 1.0, mu0, dt, 128, &d).unwrap();
                girsanov_log_lr(&p, &h1, &h0, 1.0).unwrap().value
            })
            .collect();
        let (m, se) = martingale(&lrs);
        println!("  b vs frozen b: E exp(LR) = {m:.5} +- {se:.5}");
        ok &= (m - 1.0).abs() < 3.0 * se;
    }
    // constant drifts: TV has the Gaussian closed form
    {
        let spec = model("sin-drift", 0.2, 8, 0.0);
        let grid = FineGridConfig::new(64, 1.0);
        let (c1, c0) = (0.3, -0.1);
        let h1 = DriftHypothesis::constant(c1, spec.epsilon);
        let h0 = DriftHypothesis::constant(c0, spec.epsilon);
        let est =
            estimate_tv_from_lr(&spec, &grid, &h1, &h0, StopRule::FixedT, 0.0, reps as usize, 112).unwrap();
        let exact = 2.0 * normal_cdf((c1 - c0).abs() * spec.horizon_t.sqrt() / (2.0 * spec.epsilon)) - 1.0;
        println!("  constant-drift TV = {:.5} +- {:.5}, closed form {exact:.5}", est.mean, est.std_error);
        ok &= (est.mean - exact).abs() < 3.0 * est.std_error;
    }
    verdict(6, "likelihood-ratio calibration", ok);
}

#[test]
fn criterion_07_sufficient_statistic_density() {
    use statrs::distribution::{Continuous, Normal};
    let spec = model("sin-drift", 0.15, 12, 0.3);
    let u = CounterStream::new(113, 0, 0);
    let h = spec.obs_dt();
    let mut ok = true;
    let mut max_gap: f64 = 0.0;
    for v in 0..1000usize {
        let mut obs = vec![spec.w];
        for i in 0..spec.n_obs {
            let x = *obs.last().unwrap();
            let z = u.normal((v * spec.n_obs + i) as u64);
            obs.push(x + h * spec.drift.eval(x) + spec.epsilon * h.sqrt() * spec.diffusion.eval(x) * z);
        }
        let got = euler_sufficient_logdensity(&obs, &spec).unwrap();
        let mut oracle = 0.0;
        for i in 0..spec.n_obs {
            let sd = spec.epsilon * spec.diffusion.eval(obs[i]) * h.sqrt();
            oracle += Normal::new(obs[i] + h * spec.drift.eval(obs[i]), sd).unwrap().ln_pdf(obs[i + 1])
                - Normal::new(obs[i], sd).unwrap().ln_pdf(obs[i + 1]);
        }
        max_gap = max_gap.max((got - oracle).abs());
    }
    ok &= max_gap <= 1e-10;
    println!("  max |log-density - Gaussian-product oracle| = {max_gap:.2e} over 1000 vectors");

    // two distinct fine paths sharing grid values give bit-equal outputs
    let spi = 32usize;
    let grid = FineGridConfig::new(spi, 1.0);
    let d = BrownianDriver::new(114, 0, grid.dt(&spec));
    let fine = simulate_y(&spec, &grid, &d).unwrap();
    let mut other = fine.values().to_vec();
    let u2 = CounterStream::new(115, 0, 0);
    for (k, v) in other.iter_mut().enumerate() {
        if k % spi != 0 {
            *v += 0.1 * u2.normal(k as u64);
        }
    }
    let obs_a: Vec<f64> = (0..=spec.n_obs).map(|i| fine.values()[i * spi]).collect();
    let obs_b: Vec<f64> = (0..=spec.n_obs).map(|i| other[i * spi]).collect();
    let la = euler_sufficient_logdensity(&obs_a, &spec).unwrap();
    let lb = euler_sufficient_logdensity(&obs_b, &spec).unwrap();
    ok &= la.to_bits() == lb.to_bits();
    println!("  bit-equality across paths sharing grid values: {}", la.to_bits() == lb.to_bits());
    verdict(7, "sufficiency of the grid values", ok);
}

#[test]
fn criterion_08_euler_marginal_law() {
    // started where the drift moves; at the drift's zero the discretization
    // bias is below the sampling noise and no trend is detectable
    let cfg = HarnessConfig {
        model: model_cfg("sin-drift", 0.05, 128, 1.0),
        run: RunConfig {
            sweep_n: vec![8, 32, 128],
            ..run_cfg(&["euler_marginal"], 10_000, 116, 16)
        },
    };
    let out = run_config(&cfg).unwrap();
    assert_eq!(out.results.len(), 2);
    for r in &out.results {
        println!("  [{}] measured {:.4e} vs {:.4e}: {}", r.status.as_str(), r.measured, r.threshold, r.detail);
    }
    let ok = out.results.iter().all(|r| r.status == Status::Pass);
    verdict(8, "discrete autoregression marginal law", ok);
}

#[test]
fn criterion_09_unit_diffusion_chain() {
    // drift-dominated regime: the frozen-drift surrogate decays like 1/n
    // only while the unit-diffusion drift (of size ~1/eps) outweighs the
    // Brownian wander, which needs eps^2 << 1/n and a start where f != 0
    let cfg = HarnessConfig {
        model: model_cfg("sin-drift", 0.02, 16, 1.0),
        run: run_cfg(&["lamperti"], 10_000, 117, 16),
    };
    let out = run_config(&cfg).unwrap();
    assert_eq!(out.results.len(), 3);
    for r in &out.results {
        println!("  [{}] measured {:.4e} vs {:.4e}: {}", r.status.as_str(), r.measured, r.threshold, r.detail);
    }
    let ok = out.results.iter().all(|r| r.status == Status::Pass);
    verdict(9, "variance-stabilized chain", ok);
}

#[test]
fn criterion_10_reproducibility_across_threads() {
    let cfg = HarnessConfig {
        model: model_cfg("sin-drift", 0.1, 16, 0.0),
        run: run_cfg(&["lemma2", "tv_bounds", "sufficiency"], 300, 118, 8),
    };
    let run_in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| run_config(&cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let (rates, suites, _) = emit(&out, dir.path()).unwrap();
        (std::fs::read(rates).unwrap(), std::fs::read(suites).unwrap())
    };
    let (r1, s1) = run_in_pool(1);
    let (r4, s4) = run_in_pool(4);
    let (r13, s13) = run_in_pool(13);
    let ok = r1 == r4 && r1 == r13 && s1 == s4 && s1 == s13;
    println!("  rates.csv and suites.csv byte-identical across 1/4/13 worker threads: {ok}");
    verdict(10, "byte-identical CSV across thread counts", ok);
}
