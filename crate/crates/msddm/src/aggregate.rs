//! Whole-process first-passage statistics for the multistage model.
//!
//! The multistage process is a cascade of stages, each a DDM whose initial
//! condition is the evidence conditioned on surviving every earlier stage.
//! The chain runner propagates the conditioned density stage by stage,
//! collects per-stage metrics, and the aggregation step combines them by
//! total probability. Survival products across stages are accumulated in
//! log space so long cascades cannot underflow.

use crate::ddm::{Boundary, StageTheta};
use crate::density::EvidenceDist;
use crate::error::{domain, Error, Result};
use crate::real::{c, Real};
use crate::stage::{
    apply_bounds_change, boundary_decided_prob, propagate_stage, stage_conditional_mean_dt,
    stage_error_rate, stage_mean_dt, StageMetrics,
};

/// Default number of interior grid nodes for density propagation.
pub const DEFAULT_GRID_SIZE: usize = 512;

/// Default number of CDF sample times.
pub const DEFAULT_TIME_POINTS: usize = 512;

/// A multistage model: initial evidence plus an ordered stage sequence.
/// The final stage has no deadline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<F> {
    pub x0: F,
    pub stages: Vec<StageTheta<F>>,
}

impl<F: Real> ModelSpec<F> {
    pub fn new(x0: F, stages: Vec<StageTheta<F>>) -> Result<Self> {
        let spec = ModelSpec { x0, stages };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-stage model starting at time zero.
    pub fn single(x0: F, theta: StageTheta<F>) -> Result<Self> {
        Self::new(x0, vec![theta.starting_at(F::zero())])
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return domain("model needs at least one stage");
        }
        for (i, th) in self.stages.iter().enumerate() {
            th.validate()
                .map_err(|e| Error::Domain(format!("stage {}: {}", i, e)))?;
        }
        if self.stages[0].start_time < F::zero() {
            return domain("first stage must start at a nonnegative time");
        }
        for w in self.stages.windows(2) {
            if !(w[0].start_time < w[1].start_time) {
                return domain(format!(
                    "stage start times must be strictly increasing, got {} then {}",
                    w[0].start_time, w[1].start_time
                ));
            }
        }
        let first = &self.stages[0];
        if !(first.lower_threshold < self.x0 && self.x0 < first.upper_threshold) {
            return domain(format!(
                "x0 = {} must lie strictly inside the first stage thresholds ({}, {})",
                self.x0, first.lower_threshold, first.upper_threshold
            ));
        }
        Ok(())
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn t_start(&self) -> F {
        self.stages[0].start_time
    }

    /// Copy of the model with every stage's thresholds replaced by `±z`.
    pub fn with_symmetric_threshold(&self, z: F) -> Result<Self> {
        let mut stages = Vec::with_capacity(self.stages.len());
        for th in &self.stages {
            let mut t = *th;
            t.upper_threshold = z;
            t.lower_threshold = -z;
            stages.push(t);
        }
        Self::new(self.x0, stages)
    }
}

/// Probability atom in the decision-time distribution: mass absorbed exactly
/// at `time` into `boundary` by a threshold collapse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<F> {
    pub time: F,
    pub mass: F,
    pub boundary: Boundary,
}

/// Sampled decision-time distribution with explicit atoms.
///
/// `cdf` is the overall right-continuous CDF at `times`; `cond_upper` and
/// `cond_lower` are the CDFs conditioned on the absorbing boundary. Atom
/// masses are already included in the sampled values at times at or after
/// the atom.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSamples<F> {
    pub times: Vec<F>,
    pub cdf: Vec<F>,
    pub cond_upper: Vec<F>,
    pub cond_lower: Vec<F>,
    pub atoms: Vec<Atom<F>>,
}

impl<F: Real> CdfSamples<F> {
    /// Right-continuous evaluation by linear interpolation between samples.
    /// Zero before the first sample, clamped to the last value after the
    /// final one.
    pub fn evaluate(&self, t: F) -> F {
        eval_sampled(&self.times, &self.cdf, t)
    }

    pub fn evaluate_cond(&self, t: F, b: Boundary) -> F {
        match b {
            Boundary::Upper => eval_sampled(&self.times, &self.cond_upper, t),
            Boundary::Lower => eval_sampled(&self.times, &self.cond_lower, t),
        }
    }
}

fn eval_sampled<F: Real>(times: &[F], values: &[F], t: F) -> F {
    if times.is_empty() || t < times[0] {
        return F::zero();
    }
    let n = times.len();
    if t >= times[n - 1] {
        return values[n - 1];
    }
    // last index with times[i] <= t
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

/// Scalar first-passage metrics of a multistage model. The conditional
/// decision times are `None` when the corresponding boundary carries no
/// probability mass at all.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMetrics<F> {
    pub overall_er: F,
    pub overall_mdt: F,
    pub cond_mdt_upper: Option<F>,
    pub cond_mdt_lower: Option<F>,
    pub prob_upper: F,
    pub prob_lower: F,
    pub per_stage: Vec<StageMetrics<F>>,
}

/// Full first-passage analysis: scalars plus the sampled (conditional)
/// decision-time distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FptResult<F> {
    pub overall_er: F,
    pub overall_mdt: F,
    pub cond_mdt_upper: F,
    pub cond_mdt_lower: F,
    pub cdf: CdfSamples<F>,
    pub per_stage: Vec<StageMetrics<F>>,
}

// ---------------------------------------------------------------------------
// stage chain
// ---------------------------------------------------------------------------

pub(crate) struct StageRecord<F> {
    pub theta: StageTheta<F>,
    pub t_start: F,
    /// Infinite for the final stage.
    pub t_end: F,
    pub d_in: EvidenceDist<F>,
    /// Interior stage survival; zero for the final stage.
    pub q: F,
    /// ln P(tau > t_start), absolute, including earlier atoms.
    pub log_s_start: F,
    pub metrics: StageMetrics<F>,
}

pub(crate) struct Chain<F> {
    pub records: Vec<StageRecord<F>>,
}

const P_DECIDE_FLOOR: f64 = 1e-14;

pub(crate) fn run_chain<F: Real>(spec: &ModelSpec<F>, grid_size: usize) -> Result<Chain<F>> {
    spec.validate()?;
    if grid_size < 2 {
        return domain("grid_size must be at least 2");
    }
    let n = spec.stages.len();
    let mut records = Vec::with_capacity(n);
    let mut d_in = EvidenceDist::point(spec.x0);
    let mut log_s = F::zero();

    for i in 0..n {
        let theta = spec.stages[i];
        let t_start = theta.start_time;
        if i + 1 < n {
            let next = spec.stages[i + 1];
            let t_end = next.start_time;
            let duration = t_end - t_start;
            let (d_raw, q) = propagate_stage(&d_in, &theta, duration, grid_size)?;
            let d_out = EvidenceDist::Grid(d_raw.clone());
            let p = F::one() - q;

            let metrics = if p > c::<F>(P_DECIDE_FLOOR) {
                let er = stage_error_rate(&d_in, &d_out, q, &theta)?;
                let mdt = stage_mean_dt(&d_in, &d_out, q, &theta, t_start, t_end)?;
                let (hat_u, cond_u) = stage_conditional_mean_dt(
                    &d_in, &d_out, q, &theta, t_start, t_end, Boundary::Upper,
                )?;
                let (hat_l, cond_l) = stage_conditional_mean_dt(
                    &d_in, &d_out, q, &theta, t_start, t_end, Boundary::Lower,
                )?;
                StageMetrics {
                    stage_index: i,
                    t_start,
                    t_end,
                    er,
                    p_decide: p,
                    mdt,
                    hat_mdt_upper: hat_u,
                    hat_mdt_lower: hat_l,
                    cond_mdt_upper: cond_u,
                    cond_mdt_lower: cond_l,
                    atom_upper: F::zero(),
                    atom_lower: F::zero(),
                }
            } else {
                // stage decides (numerically) nothing: placeholder values
                // with zero weight in every aggregate
                StageMetrics {
                    stage_index: i,
                    t_start,
                    t_end,
                    er: c::<F>(0.5),
                    p_decide: p.max(F::zero()),
                    mdt: (t_start + t_end) / c::<F>(2.0),
                    hat_mdt_upper: F::zero(),
                    hat_mdt_lower: F::zero(),
                    cond_mdt_upper: None,
                    cond_mdt_lower: None,
                    atom_upper: F::zero(),
                    atom_lower: F::zero(),
                }
            };

            // threshold transition into the next stage
            let (d_next, atom_up, atom_lo) =
                apply_bounds_change(&d_raw, next.lower_threshold, next.upper_threshold)?;
            let mut metrics = metrics;
            metrics.atom_upper = atom_up;
            metrics.atom_lower = atom_lo;

            records.push(StageRecord {
                theta,
                t_start,
                t_end,
                d_in: d_in.clone(),
                q,
                log_s_start: log_s,
                metrics,
            });
            log_s = log_s + q.ln() + (-(atom_up + atom_lo)).ln_1p();
            d_in = EvidenceDist::Grid(d_next);
        } else {
            // final stage: no deadline, everything alive decides here
            let q = F::zero();
            let er = stage_error_rate(&d_in, &d_in, q, &theta)?;
            let mdt = stage_mean_dt(&d_in, &d_in, q, &theta, t_start, F::infinity())?;
            let (hat_u, cond_u) = stage_conditional_mean_dt(
                &d_in,
                &d_in,
                q,
                &theta,
                t_start,
                F::infinity(),
                Boundary::Upper,
            )?;
            let (hat_l, cond_l) = stage_conditional_mean_dt(
                &d_in,
                &d_in,
                q,
                &theta,
                t_start,
                F::infinity(),
                Boundary::Lower,
            )?;
            records.push(StageRecord {
                theta,
                t_start,
                t_end: F::infinity(),
                d_in: d_in.clone(),
                q,
                log_s_start: log_s,
                metrics: StageMetrics {
                    stage_index: i,
                    t_start,
                    t_end: F::infinity(),
                    er,
                    p_decide: F::one(),
                    mdt,
                    hat_mdt_upper: hat_u,
                    hat_mdt_lower: hat_l,
                    cond_mdt_upper: cond_u,
                    cond_mdt_lower: cond_l,
                    atom_upper: F::zero(),
                    atom_lower: F::zero(),
                },
            });
        }
    }
    Ok(Chain { records })
}

fn scalars_from_chain<F: Real>(chain: &Chain<F>) -> Result<ScalarMetrics<F>> {
    let mut mdt = F::zero();
    let mut hat_up = F::zero();
    let mut hat_lo = F::zero();
    let mut p_up = F::zero();
    let mut p_lo = F::zero();

    for rec in &chain.records {
        let s = rec.log_s_start.exp();
        let m = &rec.metrics;
        let w = s * m.p_decide;
        p_lo = p_lo + w * m.er;
        p_up = p_up + w * (F::one() - m.er);
        mdt = mdt + w * m.mdt;
        hat_up = hat_up + s * m.hat_mdt_upper;
        hat_lo = hat_lo + s * m.hat_mdt_lower;
        // atoms decide exactly at the stage end
        let atom_w = s * rec.q;
        if m.atom_upper > F::zero() || m.atom_lower > F::zero() {
            p_up = p_up + atom_w * m.atom_upper;
            p_lo = p_lo + atom_w * m.atom_lower;
            mdt = mdt + atom_w * (m.atom_upper + m.atom_lower) * rec.t_end;
            hat_up = hat_up + atom_w * m.atom_upper * rec.t_end;
            hat_lo = hat_lo + atom_w * m.atom_lower * rec.t_end;
        }
    }

    Ok(ScalarMetrics {
        overall_er: p_lo,
        overall_mdt: mdt,
        cond_mdt_upper: (p_up > F::zero()).then(|| hat_up / p_up),
        cond_mdt_lower: (p_lo > F::zero()).then(|| hat_lo / p_lo),
        prob_upper: p_up,
        prob_lower: p_lo,
        per_stage: chain.records.iter().map(|r| r.metrics.clone()).collect(),
    })
}

/// Scalar metrics only; skips the CDF sampling pass. This is the fast path
/// for optimization loops.
pub fn analyze_scalars<F: Real>(spec: &ModelSpec<F>, grid_size: usize) -> Result<ScalarMetrics<F>> {
    let chain = run_chain(spec, grid_size)?;
    scalars_from_chain(&chain)
}

/// Absolute survival probability `P(tau > t)`.
fn survival_at<F: Real>(chain: &Chain<F>, grid_size: usize, t: F) -> Result<F> {
    let records = &chain.records;
    // last stage with t_start < t
    let mut k = None;
    for (i, r) in records.iter().enumerate() {
        if r.t_start < t {
            k = Some(i);
        } else {
            break;
        }
    }
    let Some(k) = k else {
        return Ok(F::one());
    };
    let rec = &records[k];
    let dur = t - rec.t_start;
    let q_t = match propagate_stage(&rec.d_in, &rec.theta, dur, grid_size) {
        Ok((_, q)) => q,
        Err(Error::DegenerateModel(_)) => F::zero(),
        Err(e) => return Err(e),
    };
    Ok(rec.log_s_start.exp() * q_t)
}

/// Log-spaced default time grid: `count` points from just after the process
/// start to the horizon where the overall CDF reaches `1 - 1e-4`, found by a
/// doubling search.
pub fn default_time_grid<F: Real>(
    spec: &ModelSpec<F>,
    grid_size: usize,
    count: usize,
) -> Result<Vec<F>> {
    let chain = run_chain(spec, grid_size)?;
    default_time_grid_from_chain(spec, &chain, grid_size, count)
}

fn default_time_grid_from_chain<F: Real>(
    spec: &ModelSpec<F>,
    chain: &Chain<F>,
    grid_size: usize,
    count: usize,
) -> Result<Vec<F>> {
    let t0 = spec.t_start();
    let t_lo = t0 + c::<F>(1e-3);
    let last_start = spec.stages.last().unwrap().start_time;
    let mut horizon = (last_start + F::one()).max(t_lo * c::<F>(2.0));
    let target = c::<F>(1e-4);
    let mut doublings = 0usize;
    while survival_at(chain, grid_size, horizon)? > target {
        horizon = horizon * c::<F>(2.0);
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Inconsistent(
                "doubling search for the CDF horizon did not terminate".into(),
            ));
        }
    }
    let ln_lo = t_lo.ln();
    let ln_hi = horizon.ln();
    let n = count.max(2);
    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        let w = c::<F>(i as f64) / c::<F>((n - 1) as f64);
        grid.push((ln_lo + (ln_hi - ln_lo) * w).exp());
    }
    grid.dedup();
    Ok(grid)
}

/// Full analysis: per-stage metrics, whole-process scalars, and the sampled
/// conditional decision-time distribution.
///
/// `time_grid` defaults to [`default_time_grid`]. Stage boundary times (and
/// points just before them) are always spliced into the sampling grid so
/// threshold-collapse atoms appear as sharp jumps.
pub fn analyze<F: Real>(
    spec: &ModelSpec<F>,
    grid_size: usize,
    time_grid: Option<&[F]>,
) -> Result<FptResult<F>> {
    let chain = run_chain(spec, grid_size)?;
    let scalars = scalars_from_chain(&chain)?;
    let (Some(cond_mdt_upper), Some(cond_mdt_lower)) =
        (scalars.cond_mdt_upper, scalars.cond_mdt_lower)
    else {
        return Err(Error::Undefined(
            "a boundary carries no probability mass; conditional distributions undefined"
                .into(),
        ));
    };

    let mut times: Vec<F> = match time_grid {
        Some(ts) => {
            if ts.is_empty() {
                return domain("time grid must be nonempty");
            }
            if ts.windows(2).any(|w| !(w[0] < w[1])) {
                return domain("time grid must be strictly increasing");
            }
            if !(ts[0] > F::zero()) {
                return domain("time grid must be positive");
            }
            ts.to_vec()
        }
        None => default_time_grid_from_chain(spec, &chain, grid_size, DEFAULT_TIME_POINTS)?,
    };

    // splice in stage boundaries and pre-boundary points so atoms are sharp
    let four_eps = c::<F>(4.0) * F::epsilon();
    for rec in &chain.records {
        if rec.t_end.is_finite() {
            times.push(rec.t_end * (F::one() - four_eps));
            times.push(rec.t_end);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    let records = &chain.records;
    let mut atoms = Vec::new();
    for rec in records {
        let s = rec.log_s_start.exp();
        let m = &rec.metrics;
        if m.atom_upper > F::zero() {
            atoms.push(Atom {
                time: rec.t_end,
                mass: s * rec.q * m.atom_upper,
                boundary: Boundary::Upper,
            });
        }
        if m.atom_lower > F::zero() {
            atoms.push(Atom {
                time: rec.t_end,
                mass: s * rec.q * m.atom_lower,
                boundary: Boundary::Lower,
            });
        }
    }

    // joint decided mass (interior + atoms) accumulated before each stage
    let n = records.len();
    let mut j_up_before = vec![F::zero(); n];
    let mut j_lo_before = vec![F::zero(); n];
    for i in 1..n {
        let rec = &records[i - 1];
        let s = rec.log_s_start.exp();
        let m = &rec.metrics;
        let w = s * m.p_decide;
        let atom_w = s * rec.q;
        j_up_before[i] =
            j_up_before[i - 1] + w * (F::one() - m.er) + atom_w * m.atom_upper;
        j_lo_before[i] = j_lo_before[i - 1] + w * m.er + atom_w * m.atom_lower;
    }

    let mut cdf = Vec::with_capacity(times.len());
    let mut j_up = Vec::with_capacity(times.len());
    let mut j_lo = Vec::with_capacity(times.len());
    for &t in &times {
        // stage containing t: last record with t_start < t
        let mut k = None;
        for (i, r) in records.iter().enumerate() {
            if r.t_start < t {
                k = Some(i);
            } else {
                break;
            }
        }
        let Some(k) = k else {
            cdf.push(F::zero());
            j_up.push(F::zero());
            j_lo.push(F::zero());
            continue;
        };
        let rec = &records[k];
        let s_k = rec.log_s_start.exp();
        let dur = t - rec.t_start;
        let (up_in_stage, lo_in_stage, q_t) =
            match propagate_stage(&rec.d_in, &rec.theta, dur, grid_size) {
                Ok((d_t, q_t)) => {
                    let d_t = EvidenceDist::Grid(d_t);
                    let up =
                        boundary_decided_prob(&rec.d_in, &d_t, q_t, &rec.theta, Boundary::Upper)?;
                    let lo =
                        boundary_decided_prob(&rec.d_in, &d_t, q_t, &rec.theta, Boundary::Lower)?;
                    (up, lo, q_t)
                }
                Err(Error::DegenerateModel(_)) => {
                    // everything decided by t within this stage
                    let up = boundary_decided_prob(
                        &rec.d_in,
                        &rec.d_in,
                        F::zero(),
                        &rec.theta,
                        Boundary::Upper,
                    )?;
                    let lo = boundary_decided_prob(
                        &rec.d_in,
                        &rec.d_in,
                        F::zero(),
                        &rec.theta,
                        Boundary::Lower,
                    )?;
                    (up, lo, F::zero())
                }
                Err(e) => return Err(e),
            };
        let mut c_t = F::one() - s_k * q_t;
        let mut u_t = j_up_before[k] + s_k * up_in_stage;
        let mut l_t = j_lo_before[k] + s_k * lo_in_stage;
        // atoms at the stage end are part of the CDF when t reaches it
        if rec.t_end.is_finite() && t >= rec.t_end {
            let m = &rec.metrics;
            let atom_w = s_k * rec.q;
            u_t = u_t + atom_w * m.atom_upper;
            l_t = l_t + atom_w * m.atom_lower;
            c_t = (F::one() - s_k * q_t * (F::one() - m.atom_upper - m.atom_lower))
                .max(c_t);
        }
        cdf.push(c_t);
        j_up.push(u_t);
        j_lo.push(l_t);
    }

    // enforce monotonicity against quadrature-level wiggles and convert the
    // joint curves to boundary-conditional CDFs
    let mut run = F::zero();
    for v in cdf.iter_mut() {
        run = run.max(*v).min(F::one());
        *v = run;
    }
    let mut run_u = F::zero();
    for v in j_up.iter_mut() {
        run_u = run_u.max(*v).min(scalars.prob_upper);
        *v = run_u;
    }
    let mut run_l = F::zero();
    for v in j_lo.iter_mut() {
        run_l = run_l.max(*v).min(scalars.prob_lower);
        *v = run_l;
    }
    let cond_upper: Vec<F> = j_up.iter().map(|&v| v / scalars.prob_upper).collect();
    let cond_lower: Vec<F> = j_lo.iter().map(|&v| v / scalars.prob_lower).collect();

    Ok(FptResult {
        overall_er: scalars.overall_er,
        overall_mdt: scalars.overall_mdt,
        cond_mdt_upper,
        cond_mdt_lower,
        cdf: CdfSamples {
            times,
            cdf,
            cond_upper,
            cond_lower,
            atoms,
        },
        per_stage: scalars.per_stage,
    })
}

/// Direct evaluation of the two-stage error rate and mean decision time.
///
/// This is an independent aggregation route used as an oracle for
/// [`analyze`] with two stages: the survival-product bookkeeping is replaced
/// by the explicit two-stage total-probability expressions. Both stages must
/// share the same thresholds; the first stage starts at time zero and hands
/// over at `t1`.
pub fn two_stage_closed_form<F: Real>(
    x0: F,
    theta1: &StageTheta<F>,
    theta2: &StageTheta<F>,
    t1: F,
    grid_size: usize,
) -> Result<(F, F)> {
    if !(t1 > F::zero()) {
        return domain("two-stage switch time must be positive");
    }
    theta1.validate()?;
    theta2.validate()?;
    if theta1.lower_threshold != theta2.lower_threshold
        || theta1.upper_threshold != theta2.upper_threshold
    {
        return domain("the two-stage closed form assumes shared thresholds");
    }
    let (d1, q1) = propagate_stage(&EvidenceDist::point(x0), theta1, t1, grid_size)?;
    let p1 = F::one() - q1;
    if !(p1 > F::zero()) {
        return Err(Error::Undefined("no decisions in the first stage".into()));
    }

    let z = theta1.half_width();
    let mid = theta1.midpoint();
    let two = c::<F>(2.0);

    // frame-local helpers; `flip` mirrors evidence for negative drift
    let moments = |flip: bool| {
        let m1 = d1.quadrature(|x| {
            let xs = x - mid;
            if flip {
                -xs
            } else {
                xs
            }
        });
        let m2 = d1.quadrature(|x| {
            let xs = x - mid;
            xs * xs
        });
        (m1, m2)
    };
    let scaled_exp = |s: F, flip: bool| {
        d1.quadrature(|x| {
            let xs = x - mid;
            let xs = if flip { -xs } else { xs };
            (-two * s * (xs + z)).exp()
        })
    };
    let x0s = x0 - mid;

    // stage 1: deadline-limited error rate and decision-time mass
    let a1 = theta1.drift;
    let flip1 = a1 < F::zero();
    let x0f = if flip1 { -x0s } else { x0s };
    let (er1, mdt1_mass) = if theta1.is_degenerate_drift() {
        let (m1, m2) = moments(flip1);
        let sig2 = theta1.diffusion * theta1.diffusion;
        let er = c::<F>(0.5) - (x0f - m1 * q1) / (two * z * p1);
        let mass = (z * z * p1 - x0f * x0f + m2 * q1 - sig2 * t1 * q1) / sig2;
        (er, mass)
    } else {
        let a = a1.abs();
        let s = a / (theta1.diffusion * theta1.diffusion);
        let e_in = (-two * s * (x0f + z)).exp();
        let e_out = scaled_exp(s, flip1);
        let e4 = (-c::<F>(4.0) * s * z).exp();
        let one_m_e4 = -(-c::<F>(4.0) * s * z).exp_m1();
        let er = (e_in - e_out * q1 - e4 * p1) / (one_m_e4 * p1);
        let (m1, _) = moments(flip1);
        let mass = ((F::one() - two * er) * z * p1 - x0f + m1 * q1 - a * t1 * q1) / a;
        (er, mass)
    };
    let er1 = if flip1 { F::one() - er1 } else { er1 };

    // stage 2: deadline-free, averaged over the handed-over density
    let a2 = theta2.drift;
    let flip2 = a2 < F::zero();
    let (er2, mdt2_local) = if theta2.is_degenerate_drift() {
        let (m1, m2) = moments(flip2);
        let sig2 = theta2.diffusion * theta2.diffusion;
        let er = c::<F>(0.5) - m1 / (two * z);
        (er, (z * z - m2) / sig2)
    } else {
        let a = a2.abs();
        let s = a / (theta2.diffusion * theta2.diffusion);
        let e_x1 = scaled_exp(s, flip2);
        let e4 = (-c::<F>(4.0) * s * z).exp();
        let one_m_e4 = -(-c::<F>(4.0) * s * z).exp_m1();
        let er = (e_x1 - e4) / one_m_e4;
        let (m1, _) = moments(flip2);
        (er, ((F::one() - two * er) * z - m1) / a)
    };
    let er2 = if flip2 { F::one() - er2 } else { er2 };

    let er = er1 * p1 + er2 * q1;
    let mdt = mdt1_mass + q1 * (t1 + mdt2_local);
    Ok((er, mdt))
}
