//! Closed-form first-passage-time metrics for a single-stage drift diffusion
//! process between two absorbing thresholds.
//!
//! The evidence follows `dx = a dt + sigma dW` started at `x0` strictly
//! between the thresholds. Every quantity here is exact (up to series
//! truncation) and measured in stage-local time, i.e. from the moment the
//! stage starts. Asymmetric thresholds are reduced to the symmetric case by
//! translation, negative drift by reflection; both reductions are invisible
//! to callers, which only see boundary-labelled (`Upper`/`Lower`) outputs.
//!
//! Conventions:
//! * `error_rate` is the probability of absorbing at the **lower** threshold,
//!   whatever the drift sign.
//! * Densities are clamped at zero; truncated image sums can undershoot by
//!   roughly the truncation tolerance.

use crate::error::{domain, Error, Result};
use crate::real::{c, Real};

/// Per-stage parameters of the diffusion: drift `a`, diffusion `sigma`,
/// absorbing thresholds, and the absolute time at which the stage begins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTheta<F> {
    pub drift: F,
    pub diffusion: F,
    pub upper_threshold: F,
    pub lower_threshold: F,
    pub start_time: F,
}

impl<F: Real> StageTheta<F> {
    /// Stage with symmetric thresholds `±z`, starting at time zero.
    pub fn symmetric(drift: F, diffusion: F, z: F) -> Result<Self> {
        Self::with_bounds(drift, diffusion, -z, z)
    }

    /// Stage with explicit thresholds, starting at time zero.
    pub fn with_bounds(drift: F, diffusion: F, lower: F, upper: F) -> Result<Self> {
        let theta = StageTheta {
            drift,
            diffusion,
            upper_threshold: upper,
            lower_threshold: lower,
            start_time: F::zero(),
        };
        theta.validate()?;
        Ok(theta)
    }

    /// Same parameters, stage beginning at absolute time `t`.
    pub fn starting_at(mut self, t: F) -> Self {
        self.start_time = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > F::zero()) {
            return domain(format!("diffusion must be positive, got {}", self.diffusion));
        }
        if !(self.lower_threshold < self.upper_threshold) {
            return domain(format!(
                "thresholds must satisfy lower < upper, got [{}, {}]",
                self.lower_threshold, self.upper_threshold
            ));
        }
        if !self.drift.is_finite() || !self.start_time.is_finite() {
            return domain("drift and start_time must be finite");
        }
        Ok(())
    }

    /// Signal-to-noise ratio `a / sigma^2`; computed, never stored, so it is
    /// exact by construction.
    #[inline]
    pub fn snr(&self) -> F {
        self.drift / (self.diffusion * self.diffusion)
    }

    /// Half-width of the threshold interval.
    #[inline]
    pub fn half_width(&self) -> F {
        (self.upper_threshold - self.lower_threshold) / c::<F>(2.0)
    }

    /// Midpoint of the threshold interval.
    #[inline]
    pub fn midpoint(&self) -> F {
        (self.upper_threshold + self.lower_threshold) / c::<F>(2.0)
    }

    #[inline]
    pub fn is_symmetric(&self) -> bool {
        self.midpoint() == F::zero()
    }

    /// True when the drift is numerically indistinguishable from zero at the
    /// scale of the threshold interval.
    pub fn is_degenerate_drift(&self) -> bool {
        (self.snr() * self.half_width()).abs() < F::degenerate_drift_tol()
    }
}

/// Which absorbing boundary a trajectory hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    Upper,
    Lower,
}

impl Boundary {
    #[inline]
    pub fn opposite(self) -> Self {
        match self {
            Boundary::Upper => Boundary::Lower,
            Boundary::Lower => Boundary::Upper,
        }
    }

    /// `+1` for the upper boundary, `-1` for the lower one.
    #[inline]
    pub fn sign<F: Real>(self) -> F {
        match self {
            Boundary::Upper => F::one(),
            Boundary::Lower => -F::one(),
        }
    }
}

/// Which series representation of the FPT density to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Repr {
    /// Small-time representation for `sigma^2 t / z^2 < 1`, large-time
    /// otherwise; each series converges fastest in its own regime.
    #[default]
    Auto,
    SmallTime,
    LargeTime,
}

/// Problem translated to symmetric thresholds `±z` and reflected so the
/// effective drift is nonnegative. `flipped` records whether boundary labels
/// must be swapped when mapping results back.
#[derive(Debug, Clone, Copy)]
struct Frame<F> {
    z: F,
    x0: F,
    drift: F,
    diffusion: F,
    flipped: bool,
}

impl<F: Real> Frame<F> {
    fn new(x0: F, theta: &StageTheta<F>) -> Result<Self> {
        theta.validate()?;
        if !(theta.lower_threshold < x0 && x0 < theta.upper_threshold) {
            return domain(format!(
                "x0 = {} must lie strictly inside ({}, {})",
                x0, theta.lower_threshold, theta.upper_threshold
            ));
        }
        let (z, x0) = shift_to_symmetric(theta.lower_threshold, theta.upper_threshold, x0)?;
        let flipped = theta.drift < F::zero();
        Ok(Frame {
            z,
            x0: if flipped { -x0 } else { x0 },
            drift: theta.drift.abs(),
            diffusion: theta.diffusion,
            flipped,
        })
    }

    #[inline]
    fn snr(&self) -> F {
        self.drift / (self.diffusion * self.diffusion)
    }

    #[inline]
    fn degenerate(&self) -> bool {
        self.snr() * self.z < F::degenerate_drift_tol()
    }

    /// Boundary in frame coordinates for a requested boundary in caller
    /// coordinates.
    #[inline]
    fn local(&self, b: Boundary) -> Boundary {
        if self.flipped {
            b.opposite()
        } else {
            b
        }
    }
}

/// Translate thresholds `(lower, upper)` and start point `x0` so the
/// thresholds become `±z`. First-passage statistics are invariant under the
/// translation; drift and diffusion are unchanged.
pub fn shift_to_symmetric<F: Real>(lower: F, upper: F, x0: F) -> Result<(F, F)> {
    if !(lower < upper) {
        return domain(format!("need lower < upper, got [{}, {}]", lower, upper));
    }
    let z = (upper - lower) / c::<F>(2.0);
    let mid = (upper + lower) / c::<F>(2.0);
    Ok((z, x0 - mid))
}

// ---------------------------------------------------------------------------
// numerics helpers
// ---------------------------------------------------------------------------

/// `x coth(x) - 1`, accurate for all `x >= 0`.
///
/// Near zero the direct form loses all relative accuracy (it is `O(x^2)`
/// sitting on top of 1), so the numerator `x cosh x - sinh x` is summed as a
/// positive series instead.
pub(crate) fn xcothx_m1<F: Real>(x: F) -> F {
    let x = x.abs();
    if x == F::zero() {
        return F::zero();
    }
    if x < F::one() {
        // x cosh x - sinh x = sum_{n>=1} 2n x^{2n+1} / (2n+1)!
        let x2 = x * x;
        let mut term = x * x2 / c::<F>(3.0);
        let mut sum = term;
        let mut n = 2usize;
        while term > F::epsilon() * sum {
            term = term * x2 / c::<F>(((2 * n - 2) * (2 * n + 1)) as f64);
            sum = sum + term;
            n += 1;
        }
        sum / x.sinh()
    } else {
        // tanh is exact-safe up to huge arguments, unlike sinh/cosh.
        x / x.tanh() - F::one()
    }
}

/// `ln(sinh(x))` for `x > 0` without overflow: `x + ln(1 - e^{-2x}) - ln 2`.
fn ln_sinh<F: Real>(x: F) -> F {
    debug_assert!(x > F::zero());
    let two = c::<F>(2.0);
    if x < c::<F>(1e-6) {
        // sinh x = x (1 + x^2/6 + ...)
        x.ln() + x * x / c::<F>(6.0)
    } else {
        x + (-(-(two * x)).exp()).ln_1p() - two.ln()
    }
}

/// Probability of absorbing at `b` in frame coordinates (drift >= 0).
fn boundary_prob_sym<F: Real>(f: &Frame<F>, b: Boundary) -> F {
    let z = f.z;
    let x0 = f.x0;
    if f.degenerate() {
        return match b {
            Boundary::Upper => (z + x0) / (c::<F>(2.0) * z),
            Boundary::Lower => (z - x0) / (c::<F>(2.0) * z),
        };
    }
    let s = f.snr();
    let two = c::<F>(2.0);
    let b_exp = two * two * s * z; // 4 s z
    match b {
        // (1 - e^{-2s(z+x0)}) / (1 - e^{-4sz})
        Boundary::Upper => (-(two * s * (z + x0))).exp_m1() / (-b_exp).exp_m1(),
        // e^{-4sz} (e^{2s(z-x0)} - 1) / (1 - e^{-4sz})
        Boundary::Lower => {
            (-b_exp).exp() * (two * s * (z - x0)).exp_m1() / (-(-b_exp).exp_m1())
        }
    }
}

/// Unconditional mean decision time in frame coordinates.
fn mean_dt_sym<F: Real>(f: &Frame<F>) -> F {
    let z = f.z;
    let x0 = f.x0;
    if f.degenerate() {
        (z * z - x0 * x0) / (f.diffusion * f.diffusion)
    } else {
        let er = boundary_prob_sym(f, Boundary::Lower);
        ((F::one() - c::<F>(2.0) * er) * z - x0) / f.drift
    }
}

/// Mean decision time conditioned on absorbing at `b`, frame coordinates.
///
/// Evaluated as `(psi(2sz) - psi(s(z ± x0))) / (s a)` with
/// `psi(x) = x coth x - 1`; the `1/s` poles of the two coth terms cancel
/// analytically, and `psi` is computed to full relative accuracy, so the
/// expression stays accurate arbitrarily close to zero drift.
fn cond_mean_dt_sym<F: Real>(f: &Frame<F>, b: Boundary) -> F {
    let z = f.z;
    let x0 = f.x0;
    let y = match b {
        Boundary::Upper => z + x0,
        Boundary::Lower => z - x0,
    };
    if f.degenerate() {
        let sig2 = f.diffusion * f.diffusion;
        (c::<F>(4.0) * z * z - y * y) / (c::<F>(3.0) * sig2)
    } else {
        let s = f.snr();
        (xcothx_m1(c::<F>(2.0) * s * z) - xcothx_m1(s * y)) / (s * f.drift)
    }
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

/// Probability of absorbing at the lower threshold.
pub fn error_rate<F: Real>(x0: F, theta: &StageTheta<F>) -> Result<F> {
    boundary_prob(x0, theta, Boundary::Lower)
}

/// Probability of absorbing at the given boundary.
pub fn boundary_prob<F: Real>(x0: F, theta: &StageTheta<F>, b: Boundary) -> Result<F> {
    let f = Frame::new(x0, theta)?;
    Ok(boundary_prob_sym(&f, f.local(b)))
}

/// Unconditional mean decision time, measured from the stage start.
pub fn mean_decision_time<F: Real>(x0: F, theta: &StageTheta<F>) -> Result<F> {
    let f = Frame::new(x0, theta)?;
    Ok(mean_dt_sym(&f))
}

/// Mean decision time conditioned on absorbing at `b`.
///
/// Returns `(hat_mdt, mdt)` where `mdt = E[tau | hit b]` and
/// `hat_mdt = E[tau 1(hit b)] = mdt * P(hit b)` normalises by all decisions
/// rather than by decisions at `b`.
pub fn conditional_mean_dt<F: Real>(
    x0: F,
    theta: &StageTheta<F>,
    b: Boundary,
) -> Result<(F, F)> {
    let f = Frame::new(x0, theta)?;
    let lb = f.local(b);
    let mdt = cond_mean_dt_sym(&f, lb);
    Ok((mdt * boundary_prob_sym(&f, lb), mdt))
}

/// The two-sided image sum
/// `ss(t; u, v) = sum_k (v - u + 2 k v) / (sqrt(2 pi) t^{3/2}) e^{-(v-u+2kv)^2 / 2t}`.
///
/// Terms are accumulated in symmetric shells `k = 0, ±1, ±2, ...`; the sum
/// stops once two consecutive shells each contribute less than `tol`
/// relative to the running total. Image terms alternate in sign and decay
/// like a Gaussian, so the two-shell check guards against stopping inside a
/// near-cancellation.
pub fn ss_kernel<F: Real>(t: F, u: F, v: F, tol: F) -> Result<F> {
    if !(t > F::zero()) {
        return domain(format!("ss kernel needs t > 0, got {}", t));
    }
    if !(u < v) {
        return domain(format!("ss kernel needs u < v, got u = {}, v = {}", u, v));
    }
    if !(tol > F::zero()) {
        return domain("ss kernel tolerance must be positive");
    }
    let two_t = c::<F>(2.0) * t;
    let term = |w: F| w * (-(w * w) / two_t).exp();

    let mut sum = term(v - u);
    let mut small_shells = 0usize;
    let mut k = 1usize;
    const MAX_SHELLS: usize = 100_000;
    while small_shells < 2 {
        if k > MAX_SHELLS {
            return Err(Error::Inconsistent(
                "ss kernel image sum failed to converge".into(),
            ));
        }
        let kf = c::<F>(k as f64);
        let shell = term(v - u + c::<F>(2.0) * kf * v) + term(v - u - c::<F>(2.0) * kf * v);
        sum = sum + shell;
        if shell.abs() < tol * F::one().max(sum.abs()) {
            small_shells += 1;
        } else {
            small_shells = 0;
        }
        k += 1;
    }
    Ok(sum / ((c::<F>(2.0) * F::PI()).sqrt() * t * t.sqrt()))
}

/// Joint FPT density `f^b(t) dt = P(tau in [t, t+dt), hit b)` in frame
/// coordinates, small-time representation.
fn boundary_density_small<F: Real>(f: &Frame<F>, t: F, b: Boundary) -> Result<F> {
    let s = f.snr();
    let sig = f.diffusion;
    let (exponent, u) = match b {
        Boundary::Upper => (s * (f.z - f.x0), (f.z + f.x0) / sig),
        Boundary::Lower => (-s * (f.z + f.x0), (f.z - f.x0) / sig),
    };
    let log_pref = -f.drift * f.drift * t / (c::<F>(2.0) * sig * sig) + exponent;
    let ss = ss_kernel(t, u, c::<F>(2.0) * f.z / sig, F::series_tol())?;
    Ok(log_pref.exp() * ss)
}

/// Joint FPT density, large-time representation (eigenfunction expansion of
/// the Fokker-Planck operator).
fn boundary_density_large<F: Real>(f: &Frame<F>, t: F, b: Boundary) -> Result<F> {
    let z = f.z;
    let x0 = f.x0;
    let sig2 = f.diffusion * f.diffusion;
    let (drift_exp, offset) = match b {
        Boundary::Upper => (f.drift * (z - x0) / sig2, z + x0),
        Boundary::Lower => (-f.drift * (z + x0) / sig2, z - x0),
    };
    let pref = c::<F>(0.25) * F::PI() * sig2 / (z * z)
        * (-f.drift * f.drift * t / (c::<F>(2.0) * sig2) + drift_exp).exp();
    let decay = F::PI() * F::PI() * sig2 * t / (c::<F>(8.0) * z * z);
    let phase = F::PI() * offset / (c::<F>(2.0) * z);

    let tol = F::series_tol();
    let mut sum = F::zero();
    let mut small = 0usize;
    let mut n = 1usize;
    const MAX_TERMS: usize = 100_000;
    while small < 2 {
        if n > MAX_TERMS {
            return Err(Error::Inconsistent(
                "large-time series failed to converge".into(),
            ));
        }
        let nf = c::<F>(n as f64);
        let sign = if n % 2 == 1 { F::one() } else { -F::one() };
        let term = sign * nf * (-nf * nf * decay).exp() * (nf * phase).sin();
        sum = sum + term;
        if term.abs() < tol * F::one().max(sum.abs()) {
            small += 1;
        } else {
            small = 0;
        }
        n += 1;
    }
    Ok(pref * sum)
}

fn pick_repr<F: Real>(f: &Frame<F>, t: F, repr: Repr) -> Repr {
    match repr {
        Repr::Auto => {
            if f.diffusion * f.diffusion * t / (f.z * f.z) < F::one() {
                Repr::SmallTime
            } else {
                Repr::LargeTime
            }
        }
        other => other,
    }
}

/// Joint density of deciding at time `t` (stage-local) at boundary `b`.
pub fn boundary_fpt_density<F: Real>(
    t: F,
    x0: F,
    theta: &StageTheta<F>,
    b: Boundary,
    repr: Repr,
) -> Result<F> {
    if !(t > F::zero()) {
        return domain(format!("fpt density needs t > 0, got {}", t));
    }
    let f = Frame::new(x0, theta)?;
    let lb = f.local(b);
    let val = match pick_repr(&f, t, repr) {
        Repr::SmallTime => boundary_density_small(&f, t, lb)?,
        Repr::LargeTime => boundary_density_large(&f, t, lb)?,
        Repr::Auto => unreachable!(),
    };
    Ok(val.max(F::zero()))
}

/// Unconditional first-passage-time density at stage-local time `t`.
pub fn fpt_density<F: Real>(t: F, x0: F, theta: &StageTheta<F>, repr: Repr) -> Result<F> {
    Ok(boundary_fpt_density(t, x0, theta, Boundary::Upper, repr)?
        + boundary_fpt_density(t, x0, theta, Boundary::Lower, repr)?)
}

/// Joint and conditional FPT density for boundary `b`.
///
/// The conditional form divides by `P(hit b)` and is `None` when that
/// probability underflows to zero; the joint form is always defined.
pub fn conditional_fpt_density<F: Real>(
    t: F,
    x0: F,
    theta: &StageTheta<F>,
    b: Boundary,
) -> Result<(F, Option<F>)> {
    let joint = boundary_fpt_density(t, x0, theta, b, Repr::Auto)?;
    let p = boundary_prob(x0, theta, b)?;
    if p > F::zero() {
        Ok((joint, Some(joint / p)))
    } else {
        Ok((joint, None))
    }
}

/// Joint density `g(x, t) = d/dx P(x(t) <= x, tau >= t)` of the surviving
/// evidence: the process sits at `x` at stage-local time `t` and has not yet
/// been absorbed. Supported on the open threshold interval and vanishing at
/// both thresholds.
pub fn survival_joint_density<F: Real>(
    x: F,
    t: F,
    x0: F,
    theta: &StageTheta<F>,
) -> Result<F> {
    if !(t > F::zero()) {
        return domain(format!("survival density needs t > 0, got {}", t));
    }
    let f = Frame::new(x0, theta)?;
    // translate and possibly reflect the evaluation point as well
    let mut xs = x - theta.midpoint();
    if f.flipped {
        xs = -xs;
    }
    if xs <= -f.z || xs >= f.z {
        return Ok(F::zero());
    }
    let z = f.z;
    let x0 = f.x0;
    let sig2 = f.diffusion * f.diffusion;
    let a = f.drift;
    let two = c::<F>(2.0);

    let log_pref = (-a * a * t + two * a * (xs - x0)) / (two * sig2);
    let pref = log_pref.exp() / (two * F::PI() * t * sig2).sqrt();
    let denom = two * sig2 * t;
    let image = |w: F| (-(w * w) / denom).exp();
    let shell = |n: F| {
        let four_nz = c::<F>(4.0) * n * z;
        image(xs - x0 + four_nz) - image(two * z - xs - x0 + four_nz)
    };

    let tol = F::series_tol();
    let mut sum = shell(F::zero());
    let mut small = 0usize;
    let mut n = 1usize;
    const MAX_SHELLS: usize = 100_000;
    while small < 2 {
        if n > MAX_SHELLS {
            return Err(Error::Inconsistent(
                "survival density image sum failed to converge".into(),
            ));
        }
        let nf = c::<F>(n as f64);
        let term = shell(nf) + shell(-nf);
        sum = sum + term;
        if term.abs() < tol * F::one().max(sum.abs()) {
            small += 1;
        } else {
            small = 0;
        }
        n += 1;
    }
    Ok((pref * sum).max(F::zero()))
}

/// CDF of the decision time at stage-local `t`, via `1 - ∫ g(x, t) dx` on a
/// uniform interior grid with trapezoidal quadrature (the density vanishes
/// at both thresholds, so the implicit zero endpoints are exact).
pub fn fpt_cdf<F: Real>(t: F, x0: F, theta: &StageTheta<F>, grid_size: usize) -> Result<F> {
    if !(t > F::zero()) {
        return domain(format!("fpt cdf needs t > 0, got {}", t));
    }
    if grid_size < 2 {
        return domain("fpt cdf needs grid_size >= 2");
    }
    let lo = theta.lower_threshold;
    let hi = theta.upper_threshold;
    let n = grid_size;
    let h = (hi - lo) / c::<F>((n + 1) as f64);
    let mut mass = F::zero();
    for j in 0..n {
        let x = lo + h * c::<F>((j + 1) as f64);
        mass = mass + survival_joint_density(x, t, x0, theta)?;
    }
    mass = mass * h;
    Ok((F::one() - mass).max(F::zero()).min(F::one()))
}

/// Laplace transform `E[e^{-alpha tau} | x(tau) = b]` of the decision time
/// conditioned on the absorbing boundary. Hyperbolic ratios are evaluated in
/// log space so large `alpha` or high signal-to-noise cannot overflow.
pub fn fpt_laplace_conditional<F: Real>(
    alpha: F,
    x0: F,
    theta: &StageTheta<F>,
    b: Boundary,
) -> Result<F> {
    let f = Frame::new(x0, theta)?;
    let lb = f.local(b);
    let sig2 = f.diffusion * f.diffusion;
    let disc = c::<F>(2.0) * alpha * sig2 + f.drift * f.drift;
    if disc < F::zero() {
        return domain(format!(
            "alpha = {} below the convergence abscissa of the transform",
            alpha
        ));
    }
    let beta = disc.sqrt();
    let p = boundary_prob_sym(&f, lb);
    if !(p > F::zero()) {
        return Err(Error::Undefined(
            "conditional Laplace transform: boundary carries no mass".into(),
        ));
    }
    let (pref_exp, y) = match lb {
        Boundary::Upper => (f.drift * (f.z - f.x0) / sig2, f.z + f.x0),
        Boundary::Lower => (-f.drift * (f.z + f.x0) / sig2, f.z - f.x0),
    };
    let arg_num = y * beta / sig2;
    let arg_den = c::<F>(2.0) * f.z * beta / sig2;
    if arg_den < c::<F>(1e-12) {
        // alpha = 0 with (numerically) zero drift: sinh ratio -> y / 2z = P(b)
        return Ok(y / (c::<F>(2.0) * f.z) / p);
    }
    let log_val = pref_exp + ln_sinh(arg_num) - ln_sinh(arg_den) - p.ln();
    Ok(log_val.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn theta(a: f64, sigma: f64, z: f64) -> StageTheta<f64> {
        StageTheta::symmetric(a, sigma, z).unwrap()
    }

    #[test]
    fn error_rate_zero_drift_symmetric() {
        assert_abs_diff_eq!(error_rate(0.0, &theta(0.0, 1.0, 1.0)).unwrap(), 0.5);
    }

    #[test]
    fn error_rate_unit_drift() {
        // 1 / (1 + e^2)
        let expect = 1.0 / (1.0 + (2.0f64).exp());
        assert_relative_eq!(
            error_rate(0.0, &theta(1.0, 1.0, 1.0)).unwrap(),
            expect,
            max_relative = 1e-14
        );
        assert_relative_eq!(expect, 0.119203, max_relative = 1e-5);
    }

    #[test]
    fn error_rate_at_upper_threshold_limit() {
        let er = error_rate(1.0 - 1e-12, &theta(0.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(er, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn error_rate_outside_interval_is_domain_error() {
        assert!(error_rate(1.5, &theta(1.0, 1.0, 1.0)).is_err());
        assert!(error_rate(-1.0, &theta(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn mean_dt_matches_closed_forms() {
        assert_abs_diff_eq!(mean_decision_time(0.0, &theta(0.0, 1.0, 1.0)).unwrap(), 1.0);
        assert_relative_eq!(
            mean_decision_time(0.0, &theta(1.0, 1.0, 1.0)).unwrap(),
            1.0f64.tanh(),
            max_relative = 1e-14
        );
        assert_abs_diff_eq!(
            mean_decision_time(0.5, &theta(0.0, 2.0, 1.0)).unwrap(),
            0.1875
        );
    }

    #[test]
    fn ss_kernel_matches_brute_force() {
        // independent oracle: naive partial sum with 10^6 terms each side
        let (t, u, v) = (1.0f64, 1.0, 2.0);
        let mut brute = 0.0f64;
        for k in -1_000_000i64..=1_000_000 {
            let w = v - u + 2.0 * (k as f64) * v;
            brute += w * (-(w * w) / (2.0 * t)).exp();
        }
        brute /= (2.0 * std::f64::consts::PI).sqrt() * t.powf(1.5);
        let fast = ss_kernel(t, u, v, 1e-14).unwrap();
        assert_abs_diff_eq!(fast, brute, epsilon = 1e-12);
    }

    #[test]
    fn ss_kernel_truncation_is_stable() {
        // tightening the tolerance by 100x moves the value by less than the
        // looser tolerance, i.e. the stopping rule is honest
        for &(t, u, v) in &[(0.3, 0.5, 1.0), (2.0, 1.0, 2.0), (10.0, 0.2, 1.5)] {
            let loose = ss_kernel(t, u, v, 1e-10).unwrap();
            let tight = ss_kernel(t, u, v, 1e-14).unwrap();
            assert_abs_diff_eq!(loose, tight, epsilon = 1e-10);
        }
    }

    #[test]
    fn ss_kernel_domain_errors() {
        assert!(ss_kernel(1.0, 2.0, 1.0, 1e-12).is_err());
        assert!(ss_kernel(0.0, 0.5, 1.0, 1e-12).is_err());
        assert!(ss_kernel(-1.0, 0.5, 1.0, 1e-12).is_err());
    }

    #[test]
    fn density_representations_agree_at_switch_point() {
        // sigma^2 t / z^2 = 1 at t = 1
        let th = theta(0.5, 1.0, 1.0);
        let small = fpt_density(1.0, 0.0, &th, Repr::SmallTime).unwrap();
        let large = fpt_density(1.0, 0.0, &th, Repr::LargeTime).unwrap();
        assert_abs_diff_eq!(small, large, epsilon = 1e-8);
    }

    #[test]
    fn density_nonnegative_on_random_draws() {
        // deterministic pseudo-random sweep over the parameter box
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut unit = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let a = 4.0 * unit() - 2.0;
            let sigma = 0.3 + 2.0 * unit();
            let z = 0.3 + 2.0 * unit();
            let x0 = z * (2.0 * unit() - 1.0) * 0.95;
            let t = 0.01 + 3.0 * unit();
            let th = theta(a, sigma, z);
            let f = fpt_density(t, x0, &th, Repr::Auto).unwrap();
            assert!(f >= 0.0, "f = {} at a={a} sigma={sigma} z={z} x0={x0} t={t}", f);
        }
    }

    #[test]
    fn density_splits_into_boundary_parts() {
        let th = theta(0.7, 1.2, 1.5);
        for i in 1..100 {
            let t = 0.05 * i as f64;
            let f = fpt_density(t, 0.3, &th, Repr::Auto).unwrap();
            let (fp, _) = conditional_fpt_density(t, 0.3, &th, Boundary::Upper).unwrap();
            let (fm, _) = conditional_fpt_density(t, 0.3, &th, Boundary::Lower).unwrap();
            assert_abs_diff_eq!(f, fp + fm, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_density_symmetric_for_zero_drift() {
        let th = theta(0.0, 1.0, 1.0);
        for i in 1..20 {
            let t = 0.1 * i as f64;
            let (fp, _) = conditional_fpt_density(t, 0.0, &th, Boundary::Upper).unwrap();
            let (fm, _) = conditional_fpt_density(t, 0.0, &th, Boundary::Lower).unwrap();
            assert_abs_diff_eq!(fp, fm, epsilon = 1e-14);
        }
    }

    #[test]
    fn joint_boundary_density_integrates_to_boundary_prob() {
        // quadrature of f^+ over (0, inf) vs 1 - ER; trapezoid on a dense
        // grid, tail controlled by the exponential decay
        let th = theta(1.0, 1.0, 1.0);
        let mut integral = 0.0;
        let n = 200_000;
        let t_max = 30.0;
        let dt = t_max / n as f64;
        let mut prev = 0.0;
        for i in 1..=n {
            let t = dt * i as f64;
            let f = boundary_fpt_density(t, 0.0, &th, Boundary::Upper, Repr::Auto).unwrap();
            integral += 0.5 * (prev + f) * dt;
            prev = f;
        }
        let expect = 1.0 - error_rate(0.0, &th).unwrap();
        assert_abs_diff_eq!(integral, expect, epsilon = 1e-8);
    }

    #[test]
    fn conditional_mean_dt_symmetric_case() {
        let th = theta(0.0, 1.0, 1.0);
        let (hat_p, mdt_p) = conditional_mean_dt(0.0, &th, Boundary::Upper).unwrap();
        let (hat_m, mdt_m) = conditional_mean_dt(0.0, &th, Boundary::Lower).unwrap();
        assert_abs_diff_eq!(mdt_p, 1.0);
        assert_abs_diff_eq!(mdt_m, 1.0);
        assert_abs_diff_eq!(hat_p, 0.5);
        assert_abs_diff_eq!(hat_m, 0.5);
    }

    #[test]
    fn law_of_total_expectation() {
        let th = theta(1.0, 1.0, 1.0);
        let x0 = 0.3;
        let er = error_rate(x0, &th).unwrap();
        let (_, mdt_p) = conditional_mean_dt(x0, &th, Boundary::Upper).unwrap();
        let (_, mdt_m) = conditional_mean_dt(x0, &th, Boundary::Lower).unwrap();
        let mdt = mean_decision_time(x0, &th).unwrap();
        assert_abs_diff_eq!((1.0 - er) * mdt_p + er * mdt_m, mdt, epsilon = 1e-10);
    }

    #[test]
    fn survival_density_vanishes_at_thresholds() {
        let th = theta(1.0, 1.0, 1.0);
        assert_eq!(survival_joint_density(1.0, 0.5, 0.0, &th).unwrap(), 0.0);
        assert_eq!(survival_joint_density(-1.0, 0.5, 0.0, &th).unwrap(), 0.0);
        // and is continuous: tiny just inside
        let eps_in = survival_joint_density(1.0 - 1e-9, 0.5, 0.0, &th).unwrap();
        assert!(eps_in < 1e-6);
    }

    #[test]
    fn survival_density_short_time_mass_is_one() {
        let th = theta(1.0, 1.0, 1.0);
        // at t = 1e-6 the density is a sharp Gaussian around x0; integrate on
        // a grid fine enough to resolve it
        let n = 20_001;
        let h = 2.0 / (n + 1) as f64;
        let mut mass = 0.0;
        for j in 0..n {
            let x = -1.0 + h * (j + 1) as f64;
            mass += survival_joint_density(x, 1e-6, 0.0, &th).unwrap();
        }
        mass *= h;
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn survival_density_conserves_mass_with_cdf() {
        let th = theta(1.0, 1.0, 1.0);
        let cdf = fpt_cdf(1.0, 0.0, &th, 4096).unwrap();
        // independent route: integrate the FPT density in time
        let n = 100_000;
        let dt = 1.0 / n as f64;
        let mut integral = 0.0;
        let mut prev = 0.0;
        for i in 1..=n {
            let f = fpt_density(dt * i as f64, 0.0, &th, Repr::Auto).unwrap();
            integral += 0.5 * (prev + f) * dt;
            prev = f;
        }
        assert_abs_diff_eq!(integral, cdf, epsilon = 1e-6);
    }

    #[test]
    fn laplace_at_zero_is_one() {
        for &(a, x0) in &[(1.0, 0.0), (0.5, 0.3), (0.0, -0.2), (2.0, 0.7)] {
            let th = theta(a, 1.0, 1.0);
            for b in [Boundary::Upper, Boundary::Lower] {
                let v = fpt_laplace_conditional(0.0, x0, &th, b).unwrap();
                assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn laplace_monotone_nonincreasing() {
        let th = theta(1.0, 1.0, 1.0);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let alpha = 0.2 * i as f64;
            let v = fpt_laplace_conditional(alpha, 0.2, &th, Boundary::Upper).unwrap();
            assert!(v <= prev + 1e-14);
            prev = v;
        }
    }

    #[test]
    fn laplace_slope_at_zero_is_conditional_mean_dt() {
        let th = theta(1.0, 1.0, 1.0);
        let x0 = 0.0;
        let h = 1e-5;
        for b in [Boundary::Upper, Boundary::Lower] {
            let up = fpt_laplace_conditional(h, x0, &th, b).unwrap();
            let dn = fpt_laplace_conditional(-h, x0, &th, b).unwrap();
            let slope = (up - dn) / (2.0 * h);
            let (_, mdt) = conditional_mean_dt(x0, &th, b).unwrap();
            assert_abs_diff_eq!(-slope, mdt, epsilon = 1e-5);
        }
    }

    #[test]
    fn laplace_overflow_guarded() {
        // high SNR and a huge frequency: the naive sinh ratio overflows, the
        // log-space form must not
        let th = theta(3.0, 0.5, 4.0);
        let v = fpt_laplace_conditional(500.0, 0.0, &th, Boundary::Upper).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift_to_symmetric(-1.0, 1.0, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(shift_to_symmetric(0.0, 2.0, 0.5).unwrap(), (1.0, -0.5));
        assert!(shift_to_symmetric(1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn reflection_identity() {
        let mut state = 0x51ab3fu64;
        let mut unit = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let a = 3.0 * (2.0 * unit() - 1.0);
            let sigma = 0.4 + unit();
            let z = 0.5 + unit();
            let x0 = 0.9 * z * (2.0 * unit() - 1.0);
            let th = theta(a, sigma, z);
            let th_r = theta(-a, sigma, z);
            let e1 = error_rate(x0, &th).unwrap();
            let e2 = error_rate(-x0, &th_r).unwrap();
            assert_abs_diff_eq!(e1, 1.0 - e2, epsilon = 1e-12);
        }
    }

    #[test]
    fn continuity_at_zero_drift() {
        let z = 1.0;
        let x0 = 0.3;
        let th0 = theta(0.0, 1.0, z);
        let th1 = theta(1e-7, 1.0, z);
        assert_abs_diff_eq!(
            error_rate(x0, &th1).unwrap(),
            error_rate(x0, &th0).unwrap(),
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(
            mean_decision_time(x0, &th1).unwrap(),
            mean_decision_time(x0, &th0).unwrap(),
            epsilon = 1e-5
        );
        for b in [Boundary::Upper, Boundary::Lower] {
            let (_, m1) = conditional_mean_dt(x0, &th1, b).unwrap();
            let (_, m0) = conditional_mean_dt(x0, &th0, b).unwrap();
            assert_abs_diff_eq!(m1, m0, epsilon = 1e-5);
        }
    }

    #[test]
    fn asymmetric_thresholds_reduce_by_translation() {
        // identical physics, translated coordinates
        let sym = theta(0.4, 1.0, 1.0);
        let asym = StageTheta::with_bounds(0.4, 1.0, 1.0, 3.0).unwrap();
        assert_abs_diff_eq!(
            error_rate(0.2, &sym).unwrap(),
            error_rate(2.2, &asym).unwrap(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            fpt_density(0.7, 0.2, &sym, Repr::Auto).unwrap(),
            fpt_density(0.7, 2.2, &asym, Repr::Auto).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn xcothx_m1_series_and_direct_agree() {
        // crossover at x = 1; both branches evaluated just around it
        for &x in &[0.9995, 0.9999, 1.0, 1.0001, 1.01] {
            let direct = x / f64::tanh(x) - 1.0;
            assert_relative_eq!(xcothx_m1(x), direct, max_relative = 1e-12);
        }
        // tiny argument: psi(x) ~ x^2/3
        assert_relative_eq!(xcothx_m1(1e-8), 1e-16 / 3.0, max_relative = 1e-10);
    }
}
