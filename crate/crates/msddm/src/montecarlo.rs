//! Euler-Maruyama path simulation: the independent oracle every analytic
//! result is validated against.
//!
//! Paths are advanced with forward-Euler increments
//! `x <- x + (a - lambda x) dt + sigma sqrt(dt) N(0,1)`; crossings are
//! detected from the post-step position only, so decision times carry the
//! usual O(sqrt(dt)) late-detection bias. Parameters switch at the first
//! grid time at or after each stage start, and a path lying outside the new
//! thresholds at a switch is absorbed instantaneously.
//!
//! Reproducibility: every path draws from its own counter-based stream of a
//! seeded ChaCha generator, so results are bit-identical for a given
//! `(spec, config)` regardless of how paths are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::aggregate::{CdfSamples, ModelSpec};
use crate::ddm::Boundary;
use crate::error::{domain, Result};
use crate::ou::OuModelSpec;
use crate::real::{c, Real};

/// Simulation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig<F> {
    pub n_paths: usize,
    pub dt: F,
    pub seed: u64,
    pub max_time: F,
}

impl<F: Real> SimConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return domain("simulation needs at least one path");
        }
        if !(self.dt > F::zero()) {
            return domain("simulation time step must be positive");
        }
        if !(self.max_time > F::zero()) || !self.max_time.is_finite() {
            return domain("simulation horizon must be positive and finite");
        }
        Ok(())
    }
}

/// Outcome of one simulated path. `boundary` is `None` for paths still alive
/// at the horizon (censored); their `decision_time` equals the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome<F> {
    pub decision_time: F,
    pub boundary: Option<Boundary>,
}

impl<F> SimOutcome<F> {
    pub fn censored(&self) -> bool {
        self.boundary.is_none()
    }
}

/// Internal per-stage stepping parameters shared by the DDM and O-U runners.
#[derive(Debug, Clone, Copy)]
struct SimStage<F> {
    start: F,
    drift: F,
    leak: F,
    diffusion: F,
    lower: F,
    upper: F,
}

/// Simulate a multistage DDM.
pub fn simulate<F: Real>(spec: &ModelSpec<F>, cfg: &SimConfig<F>) -> Result<Vec<SimOutcome<F>>>
where
    StandardNormal: Distribution<F>,
{
    spec.validate()?;
    cfg.validate()?;
    if cfg.max_time <= spec.stages.last().unwrap().start_time {
        return domain("simulation horizon must exceed the last stage start");
    }
    let stages: Vec<SimStage<F>> = spec
        .stages
        .iter()
        .map(|th| SimStage {
            start: th.start_time,
            drift: th.drift,
            leak: F::zero(),
            diffusion: th.diffusion,
            lower: th.lower_threshold,
            upper: th.upper_threshold,
        })
        .collect();
    Ok(run_paths(spec.x0, spec.t_start(), &stages, cfg))
}

/// Simulate a multistage O-U process.
pub fn simulate_ou<F: Real>(
    spec: &OuModelSpec<F>,
    cfg: &SimConfig<F>,
) -> Result<Vec<SimOutcome<F>>>
where
    StandardNormal: Distribution<F>,
{
    spec.validate()?;
    cfg.validate()?;
    if cfg.max_time <= spec.stages.last().unwrap().start_time {
        return domain("simulation horizon must exceed the last stage start");
    }
    let stages: Vec<SimStage<F>> = spec
        .stages
        .iter()
        .map(|st| SimStage {
            start: st.start_time,
            drift: st.drift,
            leak: st.leak,
            diffusion: st.diffusion,
            lower: -st.threshold,
            upper: st.threshold,
        })
        .collect();
    Ok(run_paths(spec.x0, spec.stages[0].start_time, &stages, cfg))
}

fn run_paths<F: Real>(
    x0: F,
    t0: F,
    stages: &[SimStage<F>],
    cfg: &SimConfig<F>,
) -> Vec<SimOutcome<F>>
where
    StandardNormal: Distribution<F>,
{
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path as u64);
            run_one_path(x0, t0, stages, cfg, &mut rng)
        })
        .collect()
}

fn run_one_path<F: Real>(
    x0: F,
    t0: F,
    stages: &[SimStage<F>],
    cfg: &SimConfig<F>,
    rng: &mut ChaCha8Rng,
) -> SimOutcome<F>
where
    StandardNormal: Distribution<F>,
{
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let mut x = x0;
    let mut stage = 0usize;
    let mut step: u64 = 0;
    // grid times are multiples of dt measured from the process start
    loop {
        let t = t0 + dt * c::<F>(step as f64);
        // parameter switch at the first grid time >= the stage start;
        // instantaneous absorption if outside the new thresholds
        while stage + 1 < stages.len() && stages[stage + 1].start <= t {
            stage += 1;
            if x >= stages[stage].upper {
                return SimOutcome {
                    decision_time: t,
                    boundary: Some(Boundary::Upper),
                };
            }
            if x <= stages[stage].lower {
                return SimOutcome {
                    decision_time: t,
                    boundary: Some(Boundary::Lower),
                };
            }
        }
        if t >= cfg.max_time {
            return SimOutcome {
                decision_time: cfg.max_time,
                boundary: None,
            };
        }
        let s = &stages[stage];
        let noise: F = StandardNormal.sample(rng);
        x = x + (s.drift - s.leak * x) * dt + s.diffusion * sqrt_dt * noise;
        step += 1;
        let t_next = t0 + dt * c::<F>(step as f64);
        if x >= s.upper {
            return SimOutcome {
                decision_time: t_next,
                boundary: Some(Boundary::Upper),
            };
        }
        if x <= s.lower {
            return SimOutcome {
                decision_time: t_next,
                boundary: Some(Boundary::Lower),
            };
        }
    }
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<F> {
    pub value: F,
    pub std_error: F,
}

/// Plug-in estimators over a set of simulated outcomes. `None` fields mean
/// the corresponding subsample is empty (all censored, or no hits at that
/// boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMetrics<F> {
    pub n_paths: usize,
    pub n_decided: usize,
    pub censored_fraction: F,
    /// Fraction of decided paths absorbed at the lower boundary.
    pub er: Option<Estimate<F>>,
    pub mdt: Option<Estimate<F>>,
    pub cond_mdt_upper: Option<Estimate<F>>,
    pub cond_mdt_lower: Option<Estimate<F>>,
}

fn mean_with_se<F: Real>(xs: &[F]) -> Option<Estimate<F>> {
    if xs.is_empty() {
        return None;
    }
    let n = c::<F>(xs.len() as f64);
    let mean = xs.iter().fold(F::zero(), |a, &b| a + b) / n;
    if xs.len() == 1 {
        return Some(Estimate {
            value: mean,
            std_error: F::zero(),
        });
    }
    let ss = xs
        .iter()
        .fold(F::zero(), |a, &b| a + (b - mean) * (b - mean));
    let var = ss / (n - F::one());
    Some(Estimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}

/// Summarize outcomes into error rate, decision-time means and their
/// standard errors. Censored paths are excluded from the estimators and
/// reported as a separate fraction.
pub fn empirical_metrics<F: Real>(outcomes: &[SimOutcome<F>]) -> EmpiricalMetrics<F> {
    let n_paths = outcomes.len();
    let decided: Vec<&SimOutcome<F>> = outcomes.iter().filter(|o| !o.censored()).collect();
    let n_decided = decided.len();
    let censored_fraction = if n_paths == 0 {
        F::zero()
    } else {
        c::<F>((n_paths - n_decided) as f64) / c::<F>(n_paths as f64)
    };
    if n_decided == 0 {
        return EmpiricalMetrics {
            n_paths,
            n_decided,
            censored_fraction,
            er: None,
            mdt: None,
            cond_mdt_upper: None,
            cond_mdt_lower: None,
        };
    }
    let lower: Vec<F> = decided
        .iter()
        .filter(|o| o.boundary == Some(Boundary::Lower))
        .map(|o| o.decision_time)
        .collect();
    let upper: Vec<F> = decided
        .iter()
        .filter(|o| o.boundary == Some(Boundary::Upper))
        .map(|o| o.decision_time)
        .collect();
    let all: Vec<F> = decided.iter().map(|o| o.decision_time).collect();

    let n = c::<F>(n_decided as f64);
    let er_val = c::<F>(lower.len() as f64) / n;
    let er = Estimate {
        value: er_val,
        std_error: (er_val * (F::one() - er_val) / n).sqrt(),
    };
    EmpiricalMetrics {
        n_paths,
        n_decided,
        censored_fraction,
        er: Some(er),
        mdt: mean_with_se(&all),
        cond_mdt_upper: mean_with_se(&upper),
        cond_mdt_lower: mean_with_se(&lower),
    }
}

/// Empirical CDF: jumps of `1/total` at each stored time. For censored runs
/// `total` exceeds the number of jump times, so the ECDF tops out below one.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf<F> {
    times: Vec<F>,
    total: usize,
}

impl<F: Real> Ecdf<F> {
    pub fn new(mut times: Vec<F>, total: usize) -> Self {
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(total >= times.len());
        Ecdf { times, total }
    }

    pub fn jump_times(&self) -> &[F] {
        &self.times
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn evaluate(&self, t: F) -> F {
        let idx = self.times.partition_point(|&x| x <= t);
        c::<F>(idx as f64) / c::<F>(self.total as f64)
    }
}

/// Overall ECDF of the decision times (censored paths count in the
/// denominator but contribute no jump).
pub fn ecdf<F: Real>(outcomes: &[SimOutcome<F>]) -> Ecdf<F> {
    let times: Vec<F> = outcomes
        .iter()
        .filter(|o| !o.censored())
        .map(|o| o.decision_time)
        .collect();
    Ecdf::new(times, outcomes.len())
}

/// ECDF of decision times conditioned on absorbing at `b`: jumps of
/// `1/n_b` over that boundary's subsample.
pub fn conditional_ecdf<F: Real>(outcomes: &[SimOutcome<F>], b: Boundary) -> Ecdf<F> {
    let times: Vec<F> = outcomes
        .iter()
        .filter(|o| o.boundary == Some(b))
        .map(|o| o.decision_time)
        .collect();
    let total = times.len();
    Ecdf::new(times, total)
}

/// Kolmogorov-Smirnov statistic between an empirical CDF and a sampled
/// reference CDF: the sup-norm over the ECDF jump points, taking both
/// one-sided limits at each jump.
pub fn ks_distance<F: Real>(ecdf: &Ecdf<F>, times: &[F], values: &[F]) -> F {
    let n = c::<F>(ecdf.total as f64);
    let mut d = F::zero();
    for (i, &t) in ecdf.times.iter().enumerate() {
        let f = eval_cdf_samples(times, values, t);
        let hi = c::<F>((i + 1) as f64) / n;
        let lo = c::<F>(i as f64) / n;
        d = d.max((f - hi).abs()).max((f - lo).abs());
    }
    d
}

/// KS statistic against a full sampled distribution (overall curve).
pub fn ks_distance_cdf<F: Real>(e: &Ecdf<F>, cdf: &CdfSamples<F>) -> F {
    ks_distance(e, &cdf.times, &cdf.cdf)
}

fn eval_cdf_samples<F: Real>(times: &[F], values: &[F], t: F) -> F {
    if times.is_empty() || t < times[0] {
        return F::zero();
    }
    let n = times.len();
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let mut a = 0usize;
    let mut b = n - 1;
    while b - a > 1 {
        let m = (a + b) / 2;
        if times[m] <= t {
            a = m;
        } else {
            b = m;
        }
    }
    if times[b] == times[a] {
        return values[a];
    }
    let w = (t - times[a]) / (times[b] - times[a]);
    values[a] + (values[b] - values[a]) * w
}

/// Asymptotic one-sample KS critical value `coeff / sqrt(n)`; the
/// conventional `coeff = 1.63` corresponds to a test level of about 0.01.
pub fn ks_critical<F: Real>(n: usize, coeff: F) -> F {
    coeff / c::<F>(n as f64).sqrt()
}
