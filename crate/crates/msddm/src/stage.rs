//! Propagation of the conditioned evidence density through one stage and the
//! per-stage first-passage metrics of a deadline-limited diffusion.
//!
//! A stage is a DDM whose initial condition is a random variable (the
//! evidence conditioned on survival so far) and whose decisions only count
//! until the stage deadline. The metrics follow from optional-stopping
//! identities applied to the stage's exponential, linear and quadratic
//! martingales; each formula needs only expectations over the incoming and
//! outgoing conditioned densities, never a time integral.

use rayon::prelude::*;

use crate::ddm::{self, Boundary, StageTheta};
use crate::density::{ConditionedDensity, EvidenceDist};
use crate::error::{domain, Error, Result};
use crate::real::{c, Real};

/// First-passage summary of one stage.
///
/// `er`, `p_decide`, `mdt` and the conditional decision times describe
/// decisions made strictly inside the stage window and are conditional on
/// being undecided when the stage starts. `atom_upper` / `atom_lower` are the
/// probability atoms absorbed exactly at the stage end when the next stage's
/// thresholds collapse inward, expressed as fractions of the density that
/// survived the stage interior.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics<F> {
    pub stage_index: usize,
    pub t_start: F,
    /// Stage deadline; infinite for the final stage.
    pub t_end: F,
    /// P(hit lower | decided during this stage).
    pub er: F,
    /// P(decided during this stage | undecided at stage start).
    pub p_decide: F,
    /// E[tau | decided during this stage], absolute time.
    pub mdt: F,
    /// E[tau 1(hit upper, decided in stage) | undecided at start].
    pub hat_mdt_upper: F,
    pub hat_mdt_lower: F,
    /// E[tau | hit upper, decided in stage]; `None` when the boundary
    /// carries no mass in this stage.
    pub cond_mdt_upper: Option<F>,
    pub cond_mdt_lower: Option<F>,
    pub atom_upper: F,
    pub atom_lower: F,
}

// ---------------------------------------------------------------------------
// symmetric nonnegative-drift frame for the optional-stopping formulas
// ---------------------------------------------------------------------------

struct SFrame<F> {
    /// Frame stage: symmetric thresholds, drift >= 0, start time zero.
    theta: StageTheta<F>,
    mid: F,
    flipped: bool,
}

impl<F: Real> SFrame<F> {
    fn new(theta: &StageTheta<F>) -> Result<Self> {
        theta.validate()?;
        let z = theta.half_width();
        let flipped = theta.drift < F::zero();
        Ok(SFrame {
            theta: StageTheta::symmetric(theta.drift.abs(), theta.diffusion, z)?,
            mid: theta.midpoint(),
            flipped,
        })
    }

    fn z(&self) -> F {
        self.theta.upper_threshold
    }

    fn degenerate(&self) -> bool {
        self.theta.is_degenerate_drift()
    }

    fn local(&self, b: Boundary) -> Boundary {
        if self.flipped {
            b.opposite()
        } else {
            b
        }
    }

    /// Map an evidence distribution into frame coordinates.
    fn dist(&self, d: &EvidenceDist<F>) -> EvidenceDist<F> {
        match d {
            EvidenceDist::Point { at, survival_prob } => {
                let x = *at - self.mid;
                EvidenceDist::Point {
                    at: if self.flipped { -x } else { x },
                    survival_prob: *survival_prob,
                }
            }
            EvidenceDist::Grid(g) => {
                let shifted = g.affine(F::one(), -self.mid);
                EvidenceDist::Grid(if self.flipped { shifted.reflected() } else { shifted })
            }
        }
    }
}

/// `E[e^{-2 s (X + z)}]`, bounded in (0, 1] for s >= 0; the scaled form of
/// the exponential-martingale moment that cannot overflow at high SNR.
fn scaled_exp_moment<F: Real>(d: &EvidenceDist<F>, s: F, z: F) -> F {
    let two = c::<F>(2.0);
    d.expectation(|x| (-two * s * (x + z)).exp())
}

/// Stage error rate in frame coordinates (drift >= 0).
fn er_frame<F: Real>(
    fr: &SFrame<F>,
    d_in: &EvidenceDist<F>,
    d_out: &EvidenceDist<F>,
    q: F,
    p: F,
) -> F {
    let z = fr.z();
    if fr.degenerate() {
        let half = c::<F>(0.5);
        let m_in = d_in.expectation(|x| x);
        let m_out = d_out.expectation(|x| x);
        half - (m_in - m_out * q) / (c::<F>(2.0) * z * p)
    } else {
        let s = fr.theta.snr();
        let e_in = scaled_exp_moment(d_in, s, z);
        let e_out = if q > F::zero() {
            scaled_exp_moment(d_out, s, z)
        } else {
            F::zero()
        };
        let e4 = (-c::<F>(4.0) * s * z).exp();
        let one_minus_e4 = -(-c::<F>(4.0) * s * z).exp_m1();
        (e_in - e_out * q - e4 * p) / (one_minus_e4 * p)
    }
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// Push the conditioned evidence density through one stage of length
/// `duration`.
///
/// Returns the conditioned density at the stage end (normalized, on a fresh
/// uniform interior grid of `grid_size` nodes spanning the stage thresholds)
/// together with the stage survival probability `P(tau_i > duration)`. The
/// output density's absolute survival probability is the input's multiplied
/// by the stage survival.
pub fn propagate_stage<F: Real>(
    density_in: &EvidenceDist<F>,
    theta: &StageTheta<F>,
    duration: F,
    grid_size: usize,
) -> Result<(ConditionedDensity<F>, F)> {
    theta.validate()?;
    if !(duration > F::zero()) {
        return domain(format!("stage duration must be positive, got {}", duration));
    }
    if grid_size < 2 {
        return domain("propagation grid needs at least 2 nodes");
    }
    let support = (theta.lower_threshold, theta.upper_threshold);
    if let Some((lo, hi)) = density_in.support() {
        let slack = (hi - lo) * c::<F>(1e-12);
        if lo < support.0 - slack || hi > support.1 + slack {
            return domain("input density support exceeds the stage thresholds");
        }
    }

    let grid = ConditionedDensity::uniform_grid(support, grid_size);
    let values: Vec<F> = grid
        .par_iter()
        .map(|&x| {
            density_in.expectation(|x0| {
                ddm::survival_joint_density(x, duration, x0, theta)
                    .expect("survival density evaluation inside validated support")
            })
        })
        .collect();

    let (mut out, mass) =
        ConditionedDensity::from_unnormalized(grid, values, support, F::one())?;
    if mass > F::one() + c::<F>(1e-6) {
        return Err(Error::Inconsistent(format!(
            "stage survival quadrature exceeded 1: {}",
            mass
        )));
    }
    let q = mass.min(F::one());
    out.set_survival_prob(density_in.survival_prob() * q);
    Ok((out, q))
}

/// `E[e^{-2 s X}]` against a conditioned density.
pub fn exp_moment<F: Real>(density: &ConditionedDensity<F>, s: F) -> F {
    density.exp_moment(s)
}

/// Error rate of the stage: probability the decision hit the lower
/// threshold given that a decision happened before the stage deadline.
pub fn stage_error_rate<F: Real>(
    density_in: &EvidenceDist<F>,
    density_out: &EvidenceDist<F>,
    stage_survival: F,
    theta: &StageTheta<F>,
) -> Result<F> {
    let p = F::one() - stage_survival;
    if !(p > F::zero()) {
        return Err(Error::Undefined(
            "stage error rate: no decisions during this stage".into(),
        ));
    }
    let fr = SFrame::new(theta)?;
    let d_in = fr.dist(density_in);
    let d_out = fr.dist(density_out);
    let er = er_frame(&fr, &d_in, &d_out, stage_survival, p);
    let er = if fr.flipped { F::one() - er } else { er };
    Ok(er.max(F::zero()).min(F::one()))
}

/// FPT density of the stage at absolute time `t`, i.e. the expectation of
/// the single-stage density over the incoming evidence distribution. Does
/// not depend on the stage deadline.
pub fn stage_fpt_density<F: Real>(
    t: F,
    density_in: &EvidenceDist<F>,
    theta: &StageTheta<F>,
) -> Result<F> {
    let t_local = t - theta.start_time;
    if !(t_local > F::zero()) {
        return domain(format!("time {} is not after the stage start", t));
    }
    Ok(density_in.expectation(|x0| {
        ddm::fpt_density(t_local, x0, theta, ddm::Repr::Auto)
            .expect("density evaluation inside validated support")
    }))
}

/// Joint FPT density of deciding at absolute time `t` at boundary `b`.
pub fn stage_joint_fpt_density<F: Real>(
    t: F,
    density_in: &EvidenceDist<F>,
    theta: &StageTheta<F>,
    b: Boundary,
) -> Result<F> {
    let t_local = t - theta.start_time;
    if !(t_local > F::zero()) {
        return domain(format!("time {} is not after the stage start", t));
    }
    Ok(density_in.expectation(|x0| {
        ddm::boundary_fpt_density(t_local, x0, theta, b, ddm::Repr::Auto)
            .expect("density evaluation inside validated support")
    }))
}

/// Mean decision time `E[tau | decided before the deadline]`, absolute.
///
/// `t_end` may be infinite only when `stage_survival` is zero (final stage).
pub fn stage_mean_dt<F: Real>(
    density_in: &EvidenceDist<F>,
    density_out: &EvidenceDist<F>,
    stage_survival: F,
    theta: &StageTheta<F>,
    t_start: F,
    t_end: F,
) -> Result<F> {
    let q = stage_survival;
    let p = F::one() - q;
    if !(p > F::zero()) {
        return Err(Error::Undefined(
            "stage mean decision time: no decisions during this stage".into(),
        ));
    }
    if q > F::zero() && !t_end.is_finite() {
        return domain("finite deadline required when the stage has survivors");
    }
    let fr = SFrame::new(theta)?;
    let d_in = fr.dist(density_in);
    let d_out = fr.dist(density_out);
    let z = fr.z();
    let sig2 = theta.diffusion * theta.diffusion;

    let local = if fr.degenerate() {
        let m2_in = d_in.expectation(|x| x * x);
        let deadline_terms = if q > F::zero() {
            let m2_out = d_out.expectation(|x| x * x);
            m2_out * q - sig2 * (t_end - t_start) * q
        } else {
            F::zero()
        };
        (z * z * p - m2_in + deadline_terms) / (sig2 * p)
    } else {
        let a = theta.drift.abs();
        let er = er_frame(&fr, &d_in, &d_out, q, p);
        let m_in = d_in.expectation(|x| x);
        let deadline_terms = if q > F::zero() {
            let m_out = d_out.expectation(|x| x);
            m_out * q - a * (t_end - t_start) * q
        } else {
            F::zero()
        };
        ((F::one() - c::<F>(2.0) * er) * z * p - m_in + deadline_terms) / (a * p)
    };
    Ok(t_start + local)
}

/// Probability, given survival to the stage start, of deciding at boundary
/// `b` before the stage deadline: the Markov closure
/// `P_b(in) - q * P_b(out)` built from deadline-free boundary probabilities.
pub fn boundary_decided_prob<F: Real>(
    density_in: &EvidenceDist<F>,
    density_out: &EvidenceDist<F>,
    stage_survival: F,
    theta: &StageTheta<F>,
    b: Boundary,
) -> Result<F> {
    let fr = SFrame::new(theta)?;
    let lb = fr.local(b);
    let d_in = fr.dist(density_in);
    let p_in = d_in.expectation(|x| {
        ddm::boundary_prob(x, &fr.theta, lb).expect("boundary prob inside support")
    });
    let p_after = if stage_survival > F::zero() {
        let d_out = fr.dist(density_out);
        stage_survival
            * d_out.expectation(|x| {
                ddm::boundary_prob(x, &fr.theta, lb).expect("boundary prob inside support")
            })
    } else {
        F::zero()
    };
    Ok((p_in - p_after).max(F::zero()))
}

/// Expected decision time conditioned on a particular boundary and on
/// deciding before the deadline.
///
/// Returns `(hat, cond)` where `hat = E[tau 1(hit b, tau <= t_end)]` in
/// absolute time (conditional on survival to the stage start) and
/// `cond = hat / P(hit b, tau <= t_end)`, `None` when that probability
/// vanishes.
pub fn stage_conditional_mean_dt<F: Real>(
    density_in: &EvidenceDist<F>,
    density_out: &EvidenceDist<F>,
    stage_survival: F,
    theta: &StageTheta<F>,
    t_start: F,
    t_end: F,
    b: Boundary,
) -> Result<(F, Option<F>)> {
    let q = stage_survival;
    if q > F::zero() && !t_end.is_finite() {
        return domain("finite deadline required when the stage has survivors");
    }
    let fr = SFrame::new(theta)?;
    let lb = fr.local(b);
    let d_in = fr.dist(density_in);

    let p_b = |x: F| {
        ddm::boundary_prob(x, &fr.theta, lb).expect("boundary prob inside support")
    };
    let hat_b = |x: F| {
        let (hat, _) =
            ddm::conditional_mean_dt(x, &fr.theta, lb).expect("cond mean dt inside support");
        hat
    };

    let p_in = d_in.expectation(p_b);
    let hat_in = d_in.expectation(hat_b);
    let (p_after, hat_out_q) = if q > F::zero() {
        let d_out = fr.dist(density_out);
        (q * d_out.expectation(p_b), q * d_out.expectation(hat_b))
    } else {
        (F::zero(), F::zero())
    };

    // optional stopping on the boundary-restricted time mass: the
    // deadline-free mass splits into the part decided before the deadline
    // and the survivors' future, time-shifted by the deadline
    let hat = if q > F::zero() {
        (t_start * p_in + hat_in - hat_out_q - t_end * p_after).max(F::zero())
    } else {
        t_start * p_in + hat_in
    };
    let decided = (p_in - p_after).max(F::zero());
    let cond = if decided > c::<F>(1e-300) {
        Some(hat / decided)
    } else {
        None
    };
    Ok((hat, cond))
}

/// Replace symmetric thresholds `±z_old` by `±z_new` between stages.
///
/// A collapse (`z_new < z_old`) instantaneously absorbs the density outside
/// the new thresholds; the returned atoms are those masses as fractions of
/// the incoming conditional density. An expansion extends the support with
/// zero density and produces no atoms. The output density is renormalized
/// and its absolute survival probability reduced by the absorbed fraction.
pub fn apply_threshold_change<F: Real>(
    density_in: &ConditionedDensity<F>,
    z_old: F,
    z_new: F,
) -> Result<(ConditionedDensity<F>, F, F)> {
    if !(z_old > F::zero() && z_new > F::zero()) {
        return domain("thresholds must be positive");
    }
    let (lo, hi) = density_in.support();
    let slack = (hi - lo) * c::<F>(1e-9);
    if (lo + z_old).abs() > slack || (hi - z_old).abs() > slack {
        return domain(format!(
            "z_old = {} does not match the density support ({}, {})",
            z_old, lo, hi
        ));
    }
    apply_bounds_change(density_in, -z_new, z_new)
}

/// General threshold change to `(new_lower, new_upper)`; each side may
/// independently collapse (producing an absorption atom) or expand.
pub fn apply_bounds_change<F: Real>(
    density_in: &ConditionedDensity<F>,
    new_lower: F,
    new_upper: F,
) -> Result<(ConditionedDensity<F>, F, F)> {
    if !(new_lower < new_upper) {
        return domain("new thresholds must satisfy lower < upper");
    }
    let (old_lo, old_hi) = density_in.support();
    let mass = density_in.mass();

    let atom_upper = if new_upper < old_hi {
        density_in.integrate_interval(new_upper, old_hi) / mass
    } else {
        F::zero()
    };
    let atom_lower = if new_lower > old_lo {
        density_in.integrate_interval(old_lo, new_lower) / mass
    } else {
        F::zero()
    };
    let keep = F::one() - atom_upper - atom_lower;
    if !(keep > c::<F>(1e-12)) {
        return Err(Error::DegenerateModel(
            "threshold change absorbs the entire surviving density".into(),
        ));
    }
    if atom_upper == F::zero() && atom_lower == F::zero() && new_lower == old_lo && new_upper == old_hi
    {
        return Ok((density_in.clone(), F::zero(), F::zero()));
    }

    let n = density_in.grid().len();
    let support = (new_lower, new_upper);
    let grid = ConditionedDensity::uniform_grid(support, n);
    let values: Vec<F> = grid.iter().map(|&x| density_in.interpolate(x)).collect();
    let (mut out, _) = ConditionedDensity::from_unnormalized(grid, values, support, F::one())?;
    out.set_survival_prob(density_in.survival_prob() * keep);
    Ok((out, atom_upper, atom_lower))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theta(a: f64, sigma: f64, z: f64) -> StageTheta<f64> {
        StageTheta::symmetric(a, sigma, z).unwrap()
    }

    fn propagate_point(
        x0: f64,
        th: &StageTheta<f64>,
        duration: f64,
        n: usize,
    ) -> (ConditionedDensity<f64>, f64) {
        propagate_stage(&EvidenceDist::point(x0), th, duration, n).unwrap()
    }

    #[test]
    fn point_mass_propagation_matches_joint_density() {
        let th = theta(0.4, 1.0, 1.0);
        let (d, q) = propagate_point(0.2, &th, 0.8, 512);
        for (j, &x) in d.grid().iter().enumerate().step_by(37) {
            let expect = ddm::survival_joint_density(x, 0.8, 0.2, &th).unwrap() / q;
            assert_abs_diff_eq!(d.values()[j], expect, epsilon = 1e-8);
        }
        assert!(q > 0.0 && q < 1.0);
    }

    #[test]
    fn zero_drift_symmetric_propagation_is_symmetric() {
        let th = theta(0.0, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 256);
        let v = d.values();
        for j in 0..v.len() / 2 {
            assert_abs_diff_eq!(v[j], v[v.len() - 1 - j], epsilon = 1e-10);
        }
    }

    #[test]
    fn survival_probabilities_chain() {
        let th = theta(0.1, 1.0, 2.0);
        let (d1, q1) = propagate_point(-0.2, &th, 1.0, 256);
        assert_abs_diff_eq!(d1.survival_prob(), q1, epsilon = 1e-15);
        let (d2, q2) = propagate_stage(&EvidenceDist::Grid(d1.clone()), &th, 1.0, 256).unwrap();
        assert_abs_diff_eq!(d2.survival_prob(), q1 * q2, epsilon = 1e-15);
    }

    #[test]
    fn final_stage_error_rate_reduces_to_expectation_of_closed_form() {
        let th = theta(0.7, 1.2, 1.5);
        let (d, _q) = propagate_point(0.3, &th, 0.6, 512);
        let din = EvidenceDist::Grid(d.clone());
        // final stage: survival 0, the deadline terms vanish
        let er = stage_error_rate(&din, &din, 0.0, &th).unwrap();
        let expect = d.quadrature(|x| ddm::error_rate(x, &th).unwrap());
        assert_abs_diff_eq!(er, expect, epsilon = 1e-8);
    }

    #[test]
    fn zero_drift_symmetric_stage_error_rate_is_half() {
        let th = theta(0.0, 1.0, 1.0);
        let (d_out, q) = propagate_point(0.0, &th, 0.7, 512);
        let er = stage_error_rate(
            &EvidenceDist::point(0.0),
            &EvidenceDist::Grid(d_out),
            q,
            &th,
        )
        .unwrap();
        assert_abs_diff_eq!(er, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn stage_fpt_density_from_point_mass_is_core_density() {
        let th = theta(0.5, 1.0, 1.0).starting_at(2.0);
        let din = EvidenceDist::point(0.1);
        for t in [2.1, 2.5, 3.0, 4.0] {
            let stage = stage_fpt_density(t, &din, &th).unwrap();
            let core = ddm::fpt_density(t - 2.0, 0.1, &th, ddm::Repr::Auto).unwrap();
            assert_abs_diff_eq!(stage, core, epsilon = 1e-10);
        }
    }

    #[test]
    fn joint_stage_densities_sum_to_unconditional() {
        let th = theta(0.3, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 256);
        let din = EvidenceDist::Grid(d);
        for t in [0.1, 0.4, 1.0, 2.0] {
            let f = stage_fpt_density(t, &din, &th).unwrap();
            let fu = stage_joint_fpt_density(t, &din, &th, Boundary::Upper).unwrap();
            let fl = stage_joint_fpt_density(t, &din, &th, Boundary::Lower).unwrap();
            assert_abs_diff_eq!(f, fu + fl, epsilon = 1e-12);
        }
    }

    #[test]
    fn stage_density_time_integral_matches_survival() {
        // independent routes: time quadrature of the stage FPT density vs the
        // spatial survival quadrature of the propagated density
        let th = theta(0.3, 1.0, 1.0);
        let (d1, _) = propagate_point(0.0, &th, 0.5, 1024);
        let din = EvidenceDist::Grid(d1);
        let duration = 1.0;
        let (_, q) = propagate_stage(&din, &th, duration, 1024).unwrap();

        // log-dense near zero to resolve the initial flux, linear after
        let mut ts: Vec<f64> = Vec::new();
        let mut t = 1e-6;
        while t < 0.01 {
            ts.push(t);
            t *= 1.3;
        }
        let n_lin = 4000;
        for i in 0..=n_lin {
            ts.push(0.01 + (duration - 0.01) * i as f64 / n_lin as f64);
        }
        let mut integral = 0.0;
        let mut prev_t = 0.0;
        let mut prev_f = 0.0;
        for &t in &ts {
            let f = stage_fpt_density(t, &din, &th).unwrap();
            integral += 0.5 * (prev_f + f) * (t - prev_t);
            prev_t = t;
            prev_f = f;
        }
        assert_abs_diff_eq!(integral, 1.0 - q, epsilon = 1e-6);
    }

    #[test]
    fn stage_fpt_density_ignores_deadline() {
        // the density is a property of the stage dynamics alone
        let th = theta(0.3, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 128);
        let din = EvidenceDist::Grid(d);
        let a = stage_fpt_density(0.7, &din, &th).unwrap();
        let b = stage_fpt_density(0.7, &din, &th).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn final_stage_mean_dt_reduces_to_expectation() {
        let th = theta(0.6, 1.0, 1.0).starting_at(1.5);
        let (d, _) = propagate_point(0.0, &th, 0.5, 512);
        let din = EvidenceDist::Grid(d.clone());
        let mdt = stage_mean_dt(&din, &din, 0.0, &th, 1.5, f64::INFINITY).unwrap();
        let expect = 1.5 + d.quadrature(|x| ddm::mean_decision_time(x, &th).unwrap());
        assert_abs_diff_eq!(mdt, expect, epsilon = 1e-8);
    }

    #[test]
    fn stage_mean_dt_lies_in_stage_window() {
        let th = theta(0.2, 1.0, 1.0).starting_at(1.0);
        let (d_out, q) = propagate_point(0.0, &th, 0.8, 512);
        let din = EvidenceDist::point(0.0);
        let dout = EvidenceDist::Grid(d_out);
        let mdt = stage_mean_dt(&din, &dout, q, &th, 1.0, 1.8).unwrap();
        assert!(mdt > 1.0 && mdt <= 1.8, "mdt = {}", mdt);
    }

    #[test]
    fn conditional_mean_dts_average_to_mean_dt() {
        let th = theta(0.4, 1.0, 1.0);
        let (d_out, q) = propagate_point(0.1, &th, 0.9, 512);
        let din = EvidenceDist::point(0.1);
        let dout = EvidenceDist::Grid(d_out);
        let er = stage_error_rate(&din, &dout, q, &th).unwrap();
        let mdt = stage_mean_dt(&din, &dout, q, &th, 0.0, 0.9).unwrap();
        let (_, up) =
            stage_conditional_mean_dt(&din, &dout, q, &th, 0.0, 0.9, Boundary::Upper).unwrap();
        let (_, lo) =
            stage_conditional_mean_dt(&din, &dout, q, &th, 0.0, 0.9, Boundary::Lower).unwrap();
        let avg = (1.0 - er) * up.unwrap() + er * lo.unwrap();
        assert_abs_diff_eq!(avg, mdt, epsilon = 1e-8);
    }

    #[test]
    fn zero_drift_conditional_dts_are_equal() {
        let th = theta(0.0, 1.0, 1.0);
        let (d_out, q) = propagate_point(0.0, &th, 0.8, 512);
        let din = EvidenceDist::point(0.0);
        let dout = EvidenceDist::Grid(d_out);
        let (_, up) =
            stage_conditional_mean_dt(&din, &dout, q, &th, 0.0, 0.8, Boundary::Upper).unwrap();
        let (_, lo) =
            stage_conditional_mean_dt(&din, &dout, q, &th, 0.0, 0.8, Boundary::Lower).unwrap();
        assert_abs_diff_eq!(up.unwrap(), lo.unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn boundary_decided_probs_match_error_rate_split() {
        let th = theta(0.5, 1.1, 1.3);
        let (d_out, q) = propagate_point(-0.2, &th, 0.7, 512);
        let din = EvidenceDist::point(-0.2);
        let dout = EvidenceDist::Grid(d_out);
        let p = 1.0 - q;
        let er = stage_error_rate(&din, &dout, q, &th).unwrap();
        let up = boundary_decided_prob(&din, &dout, q, &th, Boundary::Upper).unwrap();
        let lo = boundary_decided_prob(&din, &dout, q, &th, Boundary::Lower).unwrap();
        assert_abs_diff_eq!(up + lo, p, epsilon = 1e-10);
        assert_abs_diff_eq!(lo, er * p, epsilon = 1e-10);
    }

    #[test]
    fn threshold_identity_change_is_noop() {
        let th = theta(0.2, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 128);
        let (out, au, al) = apply_threshold_change(&d, 1.0, 1.0).unwrap();
        assert_eq!(au, 0.0);
        assert_eq!(al, 0.0);
        assert_eq!(out, d);
    }

    #[test]
    fn threshold_expansion_conserves_mass() {
        let th = theta(0.2, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 256);
        let (out, au, al) = apply_threshold_change(&d, 1.0, 1.5).unwrap();
        assert_eq!((au, al), (0.0, 0.0));
        assert_abs_diff_eq!(out.mass(), 1.0, epsilon = 1e-12);
        assert_eq!(out.support(), (-1.5, 1.5));
        assert_abs_diff_eq!(out.survival_prob(), d.survival_prob(), epsilon = 1e-15);
    }

    #[test]
    fn threshold_collapse_produces_atoms_and_renormalizes() {
        let th = theta(0.3, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 512);
        let (out, au, al) = apply_threshold_change(&d, 1.0, 0.6).unwrap();
        let expect_up = d.integrate_interval(0.6, 1.0) / d.mass();
        let expect_lo = d.integrate_interval(-1.0, -0.6) / d.mass();
        assert_abs_diff_eq!(au, expect_up, epsilon = 1e-12);
        assert_abs_diff_eq!(al, expect_lo, epsilon = 1e-12);
        assert!(au > 0.0 && al > 0.0);
        assert!(au > al, "positive drift pushes mass upward");
        assert_abs_diff_eq!(out.mass(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            out.survival_prob(),
            d.survival_prob() * (1.0 - au - al),
            epsilon = 1e-15
        );
    }

    #[test]
    fn full_collapse_is_degenerate() {
        let th = theta(0.0, 1.0, 1.0);
        let (d, _) = propagate_point(0.0, &th, 0.5, 64);
        let r = apply_threshold_change(&d, 1.0, 1e-13);
        assert!(matches!(r, Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn negative_drift_stage_metrics_reflect() {
        let thp = theta(0.4, 1.0, 1.0);
        let thm = theta(-0.4, 1.0, 1.0);
        let (dp, qp) = propagate_point(0.2, &thp, 0.6, 512);
        let (dm, qm) = propagate_point(-0.2, &thm, 0.6, 512);
        assert_abs_diff_eq!(qp, qm, epsilon = 1e-12);
        let erp = stage_error_rate(
            &EvidenceDist::point(0.2),
            &EvidenceDist::Grid(dp),
            qp,
            &thp,
        )
        .unwrap();
        let erm = stage_error_rate(
            &EvidenceDist::point(-0.2),
            &EvidenceDist::Grid(dm),
            qm,
            &thm,
        )
        .unwrap();
        assert_abs_diff_eq!(erp, 1.0 - erm, epsilon = 1e-10);
    }
}
