//! Multistage Ornstein-Uhlenbeck first-passage problems, reduced to Wiener
//! problems with time-varying thresholds and approximated by the multistage
//! machinery over piecewise-constant thresholds.
//!
//! A leaky stage `dx = (a - lambda x) dt + sigma dW` between `±z` is, after
//! the monotone time change `u(t) = sigma^2 (e^{2 lambda (t - t0)} - 1) /
//! (2 lambda)`, a unit Wiener process started at the stage entry state with
//! curved absorbing boundaries
//! `z^±(u) = (±z - a/lambda) sqrt(1 + 2 lambda u / sigma^2) + a/lambda`.
//! Each stage is partitioned into sub-intervals equal in original time; on
//! each, the curves are frozen at their midpoint value and the resulting
//! constant-threshold sub-stage is solved exactly. Boundary identity and
//! therefore the error rate are invariant under the time change; decision
//! times are mapped back through the inverse transform.
//!
//! Unlike the drift-diffusion chain, decision-time moments here are
//! recovered by integrating the survival function over original time, since
//! the transform is nonlinear in time.

use crate::aggregate::{Atom, CdfSamples, FptResult};
use crate::ddm::{Boundary, StageTheta};
use crate::density::EvidenceDist;
use crate::error::{domain, Error, Result};
use crate::real::{c, Real};
use crate::stage::{
    apply_bounds_change, boundary_decided_prob, propagate_stage, StageMetrics,
};

/// One stage of a multistage O-U process. The threshold is shared by every
/// stage of the process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuStage<F> {
    pub drift: F,
    /// Leak rate `lambda >= 0`; zero recovers a perfect integrator.
    pub leak: F,
    pub diffusion: F,
    pub start_time: F,
    pub threshold: F,
}

impl<F: Real> OuStage<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > F::zero()) {
            return domain("O-U diffusion must be positive");
        }
        if self.leak < F::zero() {
            return domain("negative leak (unstable O-U) is not supported");
        }
        if !(self.threshold > F::zero()) {
            return domain("O-U threshold must be positive");
        }
        if !self.drift.is_finite() || !self.start_time.is_finite() {
            return domain("O-U drift and start time must be finite");
        }
        Ok(())
    }
}

/// Multistage O-U model: initial evidence plus ordered stages sharing a
/// common symmetric threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OuModelSpec<F> {
    pub x0: F,
    pub stages: Vec<OuStage<F>>,
}

impl<F: Real> OuModelSpec<F> {
    pub fn new(x0: F, stages: Vec<OuStage<F>>) -> Result<Self> {
        let spec = OuModelSpec { x0, stages };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return domain("O-U model needs at least one stage");
        }
        for (i, st) in self.stages.iter().enumerate() {
            st.validate()
                .map_err(|e| Error::Domain(format!("O-U stage {}: {}", i, e)))?;
        }
        let z = self.stages[0].threshold;
        if self.stages.iter().any(|s| s.threshold != z) {
            return domain("all O-U stages must share the same threshold");
        }
        if self.stages[0].start_time < F::zero() {
            return domain("first O-U stage must start at a nonnegative time");
        }
        for w in self.stages.windows(2) {
            if !(w[0].start_time < w[1].start_time) {
                return domain("O-U stage start times must be strictly increasing");
            }
        }
        if !(self.x0.abs() < z) {
            return domain("x0 must lie strictly inside the thresholds");
        }
        Ok(())
    }

    pub fn threshold(&self) -> F {
        self.stages[0].threshold
    }
}

/// Transformed time `u(t) = sigma^2 (e^{2 lambda (t - t0)} - 1) / (2 lambda)`
/// for `t >= t0`; reduces to `sigma^2 (t - t0)` for a leak of zero.
pub fn ou_time_transform<F: Real>(t: F, stage: &OuStage<F>) -> Result<F> {
    stage.validate()?;
    let dt = t - stage.start_time;
    if dt < F::zero() {
        return domain(format!("time {} precedes the stage start", t));
    }
    let sig2 = stage.diffusion * stage.diffusion;
    if stage.leak == F::zero() {
        return Ok(sig2 * dt);
    }
    let two_lambda = c::<F>(2.0) * stage.leak;
    Ok(sig2 * (two_lambda * dt).exp_m1() / two_lambda)
}

/// Inverse of [`ou_time_transform`]: the original time at transformed time
/// `u >= 0`.
pub fn ou_time_inverse<F: Real>(u: F, stage: &OuStage<F>) -> Result<F> {
    stage.validate()?;
    if u < F::zero() {
        return domain("transformed time must be nonnegative");
    }
    let sig2 = stage.diffusion * stage.diffusion;
    if stage.leak == F::zero() {
        return Ok(stage.start_time + u / sig2);
    }
    let two_lambda = c::<F>(2.0) * stage.leak;
    Ok(stage.start_time + (two_lambda * u / sig2).ln_1p() / two_lambda)
}

/// Threshold curve of the transformed Wiener problem at transformed time
/// `u`. Evaluated in the cancellation-free form
/// `±z sqrt(1+w) - a (2u/sigma^2) / (sqrt(1+w) + 1)` with
/// `w = 2 lambda u / sigma^2`, which remains exact in the `lambda -> 0`
/// limit (a straight drift-removal line `±z - a u / sigma^2`).
pub fn ou_threshold_curve<F: Real>(u: F, stage: &OuStage<F>, b: Boundary) -> F {
    let base: F = b.sign::<F>() * curve_half_width(u, stage);
    base + curve_midline(u, stage)
}

/// Midline `(z^+ + z^-) / 2` of the two threshold curves.
fn curve_midline<F: Real>(u: F, stage: &OuStage<F>) -> F {
    let sig2 = stage.diffusion * stage.diffusion;
    let w = c::<F>(2.0) * stage.leak * u / sig2;
    let sq = (F::one() + w).sqrt();
    -stage.drift * (c::<F>(2.0) * u / sig2) / (sq + F::one())
}

/// Half-width `(z^+ - z^-) / 2` of the threshold corridor.
fn curve_half_width<F: Real>(u: F, stage: &OuStage<F>) -> F {
    let sig2 = stage.diffusion * stage.diffusion;
    let w = c::<F>(2.0) * stage.leak * u / sig2;
    stage.threshold * (F::one() + w).sqrt()
}

/// One frozen-threshold piece of a stage, in both time coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPiece<F> {
    /// Stage-local original time interval covered by the piece.
    pub t_start: F,
    pub t_end: F,
    /// Transformed-time interval.
    pub u_start: F,
    pub u_end: F,
    /// Frozen thresholds: the curve values at the piece midpoint (in
    /// original time).
    pub lower: F,
    pub upper: F,
}

/// Partition `[0, u_end]` into `pieces` sub-intervals equal in original
/// time, freezing the threshold curves at each sub-interval's midpoint.
pub fn discretize_thresholds<F: Real>(
    stage: &OuStage<F>,
    u_end: F,
    pieces: usize,
) -> Result<Vec<ThresholdPiece<F>>> {
    if pieces == 0 {
        return domain("need at least one threshold piece");
    }
    if !(u_end > F::zero()) {
        return domain("u_end must be positive");
    }
    let t_total = ou_time_inverse(u_end, stage)? - stage.start_time;
    let mut out = Vec::with_capacity(pieces);
    let np = c::<F>(pieces as f64);
    for k in 0..pieces {
        let t_a = t_total * c::<F>(k as f64) / np;
        let t_b = if k + 1 == pieces {
            t_total
        } else {
            t_total * c::<F>((k + 1) as f64) / np
        };
        let t_mid = (t_a + t_b) / c::<F>(2.0);
        let u_a = ou_time_transform(stage.start_time + t_a, stage)?;
        let u_b = ou_time_transform(stage.start_time + t_b, stage)?;
        let u_mid = ou_time_transform(stage.start_time + t_mid, stage)?;
        out.push(ThresholdPiece {
            t_start: t_a,
            t_end: t_b,
            u_start: u_a,
            u_end: u_b,
            lower: ou_threshold_curve(u_mid, stage, Boundary::Lower),
            upper: ou_threshold_curve(u_mid, stage, Boundary::Upper),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// the recursive sweep
// ---------------------------------------------------------------------------

/// Breakpoint series of absolute survival and joint decided masses.
/// Consecutive entries may share a time; such zero-width segments encode
/// jumps (instantaneous absorption) and keep the trapezoidal moment
/// integrals exact.
struct Series<F> {
    t: Vec<F>,
    s: Vec<F>,
    ju: Vec<F>,
    jl: Vec<F>,
}

impl<F: Real> Series<F> {
    fn new() -> Self {
        Series {
            t: Vec::new(),
            s: Vec::new(),
            ju: Vec::new(),
            jl: Vec::new(),
        }
    }

    fn push(&mut self, t: F, s: F, ju: F, jl: F) {
        self.t.push(t);
        self.s.push(s);
        self.ju.push(ju);
        self.jl.push(jl);
    }

    fn len(&self) -> usize {
        self.t.len()
    }

    /// Trapezoid of `values` over `t` between entry indices `[i0, i1]`.
    fn integrate(&self, values: &[F], i0: usize, i1: usize) -> F {
        let half = c::<F>(0.5);
        let mut acc = F::zero();
        for j in i0..i1 {
            acc = acc + (self.t[j + 1] - self.t[j]) * (values[j] + values[j + 1]) * half;
        }
        acc
    }

    /// Right-continuous evaluation (last entry at or before `t`).
    fn eval(&self, values: &[F], t: F) -> F {
        if self.t.is_empty() || t < self.t[0] {
            return F::zero();
        }
        let idx = self.t.partition_point(|&x| x <= t);
        values[idx - 1]
    }
}

struct SweepState<F> {
    dist: EvidenceDist<F>,
    log_s: F,
    ju: F,
    jl: F,
    series: Series<F>,
    atoms: Vec<Atom<F>>,
    metrics: Vec<StageMetrics<F>>,
}

/// Absorb the mass of `dist` outside `(lower, upper)` at absolute time `t`,
/// recording the jump. No-op for point masses inside the bounds.
fn snap_bounds<F: Real>(
    state: &mut SweepState<F>,
    lower: F,
    upper: F,
    t: F,
    record_atoms: bool,
) -> Result<(F, F)> {
    match &state.dist {
        EvidenceDist::Point { at, .. } => {
            if *at <= lower || *at >= upper {
                return Err(Error::DegenerateModel(format!(
                    "point mass at {} absorbed entirely by thresholds ({}, {})",
                    at, lower, upper
                )));
            }
            Ok((F::zero(), F::zero()))
        }
        EvidenceDist::Grid(d) => {
            let (snapped, au, al) = apply_bounds_change(d, lower, upper)?;
            if au > F::zero() || al > F::zero() {
                let s_pre = state.log_s.exp();
                state.series.push(t, s_pre, state.ju, state.jl);
                state.ju = state.ju + s_pre * au;
                state.jl = state.jl + s_pre * al;
                state.log_s = state.log_s + (-(au + al)).ln_1p();
                state.series.push(t, state.log_s.exp(), state.ju, state.jl);
                if record_atoms {
                    if au > F::zero() {
                        state.atoms.push(Atom {
                            time: t,
                            mass: s_pre * au,
                            boundary: Boundary::Upper,
                        });
                    }
                    if al > F::zero() {
                        state.atoms.push(Atom {
                            time: t,
                            mass: s_pre * al,
                            boundary: Boundary::Lower,
                        });
                    }
                }
            }
            state.dist = EvidenceDist::Grid(snapped);
            Ok((au, al))
        }
    }
}

/// Solve one O-U stage over local duration `duration`, sampling the series
/// at the `eval_times` that fall inside the stage window.
#[allow(clippy::too_many_arguments)]
fn sweep_stage<F: Real>(
    state: &mut SweepState<F>,
    stage: &OuStage<F>,
    stage_index: usize,
    duration: F,
    is_final: bool,
    pieces: usize,
    grid_size: usize,
    eval_times: &[F],
) -> Result<()> {
    let t0 = stage.start_time;
    let t_end_abs = t0 + duration;
    let u_end = ou_time_transform(t_end_abs, stage)?;
    let plan = discretize_thresholds(stage, u_end, pieces)?;

    let entry_idx = state.series.len().saturating_sub(1);
    let s_entry = state.log_s.exp();
    let ju_entry = state.ju;
    let jl_entry = state.jl;

    // Each piece is solved in the frame centred on the secant of the curve
    // midline: the midline slope becomes a constant sub-stage drift (exact
    // for a leak of zero) and only the corridor half-width is frozen at the
    // piece midpoint. The frames of adjacent pieces agree at the junction
    // because the secants interpolate the midline there.
    for piece in &plan {
        let t_a = t0 + piece.t_start;
        let t_b = t0 + piece.t_end;
        let h = (piece.upper - piece.lower) / c::<F>(2.0);
        let du = piece.u_end - piece.u_start;
        let m_a = curve_midline(piece.u_start, stage);
        let m_b = curve_midline(piece.u_end, stage);
        let drift = -(m_b - m_a) / du;
        snap_bounds(state, -h, h, t_a, true)?;
        let theta = StageTheta::with_bounds(drift, F::one(), -h, h)?;
        let s_piece = state.log_s.exp();

        // interior samples requested inside this piece
        let from = eval_times.partition_point(|&t| t <= t_a);
        let to = eval_times.partition_point(|&t| t < t_b);
        for &t in &eval_times[from..to] {
            let u_local = ou_time_transform(t, stage)? - piece.u_start;
            if !(u_local > F::zero()) {
                continue;
            }
            let (up_dec, lo_dec, q_t) =
                match propagate_stage(&state.dist, &theta, u_local, grid_size) {
                    Ok((d_t, q_t)) => {
                        let d_t = EvidenceDist::Grid(d_t);
                        let up = boundary_decided_prob(
                            &state.dist,
                            &d_t,
                            q_t,
                            &theta,
                            Boundary::Upper,
                        )?;
                        let lo = boundary_decided_prob(
                            &state.dist,
                            &d_t,
                            q_t,
                            &theta,
                            Boundary::Lower,
                        )?;
                        (up, lo, q_t)
                    }
                    Err(Error::DegenerateModel(_)) => {
                        let up = boundary_decided_prob(
                            &state.dist,
                            &state.dist,
                            F::zero(),
                            &theta,
                            Boundary::Upper,
                        )?;
                        let lo = boundary_decided_prob(
                            &state.dist,
                            &state.dist,
                            F::zero(),
                            &theta,
                            Boundary::Lower,
                        )?;
                        (up, lo, F::zero())
                    }
                    Err(e) => return Err(e),
                };
            state.series.push(
                t,
                s_piece * q_t,
                state.ju + s_piece * up_dec,
                state.jl + s_piece * lo_dec,
            );
        }

        // full piece step
        let (d_end, q_p) = propagate_stage(&state.dist, &theta, du, grid_size)?;
        let d_end_dist = EvidenceDist::Grid(d_end);
        let up_p = boundary_decided_prob(&state.dist, &d_end_dist, q_p, &theta, Boundary::Upper)?;
        let lo_p = boundary_decided_prob(&state.dist, &d_end_dist, q_p, &theta, Boundary::Lower)?;
        state.ju = state.ju + s_piece * up_p;
        state.jl = state.jl + s_piece * lo_p;
        state.log_s = state.log_s + q_p.ln();
        state.dist = d_end_dist;
        state.series.push(t_b, state.log_s.exp(), state.ju, state.jl);
    }

    // interior bookkeeping before the stage-end mapping
    let s_pre_snap = state.log_s.exp();
    let ju_pre = state.ju;
    let jl_pre = state.jl;
    let pre_idx = state.series.len() - 1;

    let mut atom_up = F::zero();
    let mut atom_lo = F::zero();
    if !is_final {
        // map the surviving midline-frame density back to evidence
        // coordinates at the stage end, then snap to the exact thresholds
        let EvidenceDist::Grid(d) = &state.dist else {
            return Err(Error::Inconsistent(
                "stage with pieces must end with a gridded density".into(),
            ));
        };
        let m_aff = (-stage.leak * duration).exp();
        let shift = if stage.leak == F::zero() {
            stage.drift * duration
        } else {
            stage.drift / stage.leak * (F::one() - m_aff)
        };
        let offset = shift + m_aff * curve_midline(u_end, stage);
        let mapped = d.affine(m_aff, offset);
        state.dist = EvidenceDist::Grid(mapped);
        let z = stage.threshold;
        let (au, al) = snap_bounds(state, -z, z, t_end_abs, true)?;
        atom_up = au;
        atom_lo = al;
    }

    // per-stage metrics from the series window
    let dec = s_entry - s_pre_snap;
    let p_decide = if s_entry > F::zero() {
        (dec / s_entry).max(F::zero()).min(F::one())
    } else {
        F::zero()
    };
    let (er, mdt, hat_up, hat_lo, cond_up, cond_lo) = if dec > c::<F>(1e-14) {
        // integration by parts over the window: E[tau 1(decided)] =
        // t_end F(t_end) - integral of F, with F the decided mass since the
        // stage entry; jumps sit on zero-width segments of the polyline
        let t_w_end = state.series.t[pre_idx];
        let er = ((jl_pre - jl_entry) / dec).max(F::zero()).min(F::one());
        let f_vals: Vec<F> = state.series.s[entry_idx..=pre_idx]
            .iter()
            .map(|&s| s_entry - s)
            .collect();
        let int_f = integrate_window(&state.series.t[entry_idx..=pre_idx], &f_vals);
        let mdt = (t_w_end * dec - int_f) / dec;
        let ju_vals: Vec<F> = state.series.ju[entry_idx..=pre_idx]
            .iter()
            .map(|&v| v - ju_entry)
            .collect();
        let ju_end = ju_pre - ju_entry;
        let int_ju = integrate_window(&state.series.t[entry_idx..=pre_idx], &ju_vals);
        let hat_up = t_w_end * ju_end - int_ju;
        let jl_vals: Vec<F> = state.series.jl[entry_idx..=pre_idx]
            .iter()
            .map(|&v| v - jl_entry)
            .collect();
        let jl_end = jl_pre - jl_entry;
        let int_jl = integrate_window(&state.series.t[entry_idx..=pre_idx], &jl_vals);
        let hat_lo = t_w_end * jl_end - int_jl;
        let cond_up = if ju_end > c::<F>(1e-300) {
            Some(hat_up / ju_end)
        } else {
            None
        };
        let cond_lo = if jl_end > c::<F>(1e-300) {
            Some(hat_lo / jl_end)
        } else {
            None
        };
        (
            er,
            mdt,
            hat_up / s_entry,
            hat_lo / s_entry,
            cond_up,
            cond_lo,
        )
    } else {
        (
            c::<F>(0.5),
            (t0 + t_end_abs) / c::<F>(2.0),
            F::zero(),
            F::zero(),
            None,
            None,
        )
    };

    state.metrics.push(StageMetrics {
        stage_index,
        t_start: t0,
        t_end: if is_final { F::infinity() } else { t_end_abs },
        er,
        p_decide,
        mdt,
        hat_mdt_upper: hat_up,
        hat_mdt_lower: hat_lo,
        cond_mdt_upper: cond_up,
        cond_mdt_lower: cond_lo,
        atom_upper: atom_up,
        atom_lower: atom_lo,
    });
    Ok(())
}

fn integrate_window<F: Real>(ts: &[F], vs: &[F]) -> F {
    let half = c::<F>(0.5);
    let mut acc = F::zero();
    for j in 0..ts.len() - 1 {
        acc = acc + (ts[j + 1] - ts[j]) * (vs[j] + vs[j + 1]) * half;
    }
    acc
}

/// Relative survival of the final stage over local duration `duration`,
/// solved coarsely; used by the horizon search.
fn final_stage_survival<F: Real>(
    entry: &EvidenceDist<F>,
    stage: &OuStage<F>,
    duration: F,
    pieces: usize,
    grid_size: usize,
) -> Result<F> {
    let u_end = ou_time_transform(stage.start_time + duration, stage)?;
    let plan = discretize_thresholds(stage, u_end, pieces)?;
    let mut dist = entry.clone();
    let mut log_q = F::zero();
    for piece in &plan {
        let (h, drift, du) = piece_frame(piece, stage);
        let keep = match &dist {
            EvidenceDist::Point { at, .. } => {
                if at.abs() >= h {
                    return Ok(F::zero());
                }
                F::one()
            }
            EvidenceDist::Grid(d) => match apply_bounds_change(d, -h, h) {
                Ok((snapped, au, al)) => {
                    dist = EvidenceDist::Grid(snapped);
                    F::one() - au - al
                }
                Err(Error::DegenerateModel(_)) => return Ok(F::zero()),
                Err(e) => return Err(e),
            },
        };
        let theta = StageTheta::with_bounds(drift, F::one(), -h, h)?;
        match propagate_stage(&dist, &theta, du, grid_size) {
            Ok((d, q)) => {
                dist = EvidenceDist::Grid(d);
                log_q = log_q + keep.ln() + q.ln();
            }
            Err(Error::DegenerateModel(_)) => return Ok(F::zero()),
            Err(e) => return Err(e),
        }
    }
    Ok(log_q.exp())
}

/// Midline-frame parameters of one piece: frozen half-width, secant drift,
/// and transformed-time length.
fn piece_frame<F: Real>(piece: &ThresholdPiece<F>, stage: &OuStage<F>) -> (F, F, F) {
    let h = (piece.upper - piece.lower) / c::<F>(2.0);
    let du = piece.u_end - piece.u_start;
    let drift =
        -(curve_midline(piece.u_end, stage) - curve_midline(piece.u_start, stage)) / du;
    (h, drift, du)
}

/// Approximate first-passage analysis of a multistage O-U process.
///
/// Every stage is solved as a transformed Wiener problem over
/// `pieces_per_stage` frozen-threshold pieces; the conditioned terminal
/// distribution is mapped back through the stage solution and chained into
/// the next stage. The returned [`FptResult`] has the same shape as the
/// drift-diffusion analysis; `per_stage` entries describe whole O-U stages.
pub fn ou_fpt_distribution<F: Real>(
    spec: &OuModelSpec<F>,
    pieces_per_stage: usize,
    grid_size: usize,
    time_grid: Option<&[F]>,
) -> Result<FptResult<F>> {
    spec.validate()?;
    if pieces_per_stage == 0 {
        return domain("pieces_per_stage must be positive");
    }
    if grid_size < 2 {
        return domain("grid_size must be at least 2");
    }
    let n = spec.stages.len();
    let t0 = spec.stages[0].start_time;

    // coarse pre-sweep: entry distribution and survival of the final stage
    let coarse_pieces = pieces_per_stage.min(8).max(1);
    let coarse_grid = grid_size.min(128).max(16);
    let mut entry = EvidenceDist::point(spec.x0);
    let mut log_s_entry = F::zero();
    for i in 0..n - 1 {
        let st = &spec.stages[i];
        let duration = spec.stages[i + 1].start_time - st.start_time;
        let (d, s_rel) = coarse_stage(&entry, st, duration, coarse_pieces, coarse_grid)?;
        entry = d;
        log_s_entry = log_s_entry + s_rel.ln();
    }
    let last = &spec.stages[n - 1];
    let sig2 = last.diffusion * last.diffusion;
    let mut horizon = (last.threshold * last.threshold / sig2).max(F::one());
    let target = c::<F>(1e-8);
    let mut doublings = 0;
    while log_s_entry.exp()
        * final_stage_survival(&entry, last, horizon, coarse_pieces, coarse_grid)?
        > target
    {
        horizon = horizon * c::<F>(2.0);
        doublings += 1;
        if doublings > 80 {
            return Err(Error::Inconsistent(
                "O-U horizon search did not terminate".into(),
            ));
        }
    }

    // evaluation grid
    let t_max = last.start_time + horizon;
    let mut eval_times: Vec<F> = match time_grid {
        Some(ts) => {
            if ts.is_empty() || ts.windows(2).any(|w| !(w[0] < w[1])) || !(ts[0] > F::zero()) {
                return domain("time grid must be nonempty, positive, strictly increasing");
            }
            ts.to_vec()
        }
        None => {
            let lo = (t0 + c::<F>(1e-3)).ln();
            let hi = t_max.ln();
            let count = crate::aggregate::DEFAULT_TIME_POINTS;
            (0..count)
                .map(|i| {
                    let w = c::<F>(i as f64) / c::<F>((count - 1) as f64);
                    (lo + (hi - lo) * w).exp()
                })
                .collect()
        }
    };
    eval_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eval_times.dedup();

    // full sweep
    let mut state = SweepState {
        dist: EvidenceDist::point(spec.x0),
        log_s: F::zero(),
        ju: F::zero(),
        jl: F::zero(),
        series: Series::new(),
        atoms: Vec::new(),
        metrics: Vec::new(),
    };
    state.series.push(t0, F::one(), F::zero(), F::zero());
    for i in 0..n {
        let st = &spec.stages[i];
        let is_final = i + 1 == n;
        let duration = if is_final {
            horizon
        } else {
            spec.stages[i + 1].start_time - st.start_time
        };
        sweep_stage(
            &mut state,
            st,
            i,
            duration,
            is_final,
            pieces_per_stage,
            grid_size,
            &eval_times,
        )?;
    }

    // scalars from the series
    let p_up = state.ju;
    let p_lo = state.jl;
    if !(p_up > F::zero()) || !(p_lo > F::zero()) {
        return Err(Error::Undefined(
            "a boundary carries no probability mass in the O-U model".into(),
        ));
    }
    let series = &state.series;
    let last_idx = series.len() - 1;
    let mdt = t0 + series.integrate(&series.s, 0, last_idx);
    let hat_up_vals: Vec<F> = series.ju.iter().map(|&v| p_up - v).collect();
    let hat_lo_vals: Vec<F> = series.jl.iter().map(|&v| p_lo - v).collect();
    let e_tau_up = t0 * p_up + series.integrate(&hat_up_vals, 0, last_idx);
    let e_tau_lo = t0 * p_lo + series.integrate(&hat_lo_vals, 0, last_idx);

    // sampled CDF vectors at the evaluation times
    let mut times: Vec<F> = eval_times;
    for rec in &state.metrics {
        if rec.t_end.is_finite() {
            times.push(rec.t_end * (F::one() - c::<F>(4.0) * F::epsilon()));
            times.push(rec.t_end);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let mut cdf = Vec::with_capacity(times.len());
    let mut cond_up = Vec::with_capacity(times.len());
    let mut cond_lo = Vec::with_capacity(times.len());
    for &t in &times {
        let s = series.eval(&series.s, t);
        let ju = series.eval(&series.ju, t);
        let jl = series.eval(&series.jl, t);
        cdf.push((F::one() - s).max(F::zero()).min(F::one()));
        cond_up.push((ju / p_up).min(F::one()));
        cond_lo.push((jl / p_lo).min(F::one()));
    }
    let mut run = F::zero();
    for v in cdf.iter_mut() {
        run = run.max(*v);
        *v = run;
    }

    Ok(FptResult {
        overall_er: p_lo,
        overall_mdt: mdt,
        cond_mdt_upper: e_tau_up / p_up,
        cond_mdt_lower: e_tau_lo / p_lo,
        cdf: CdfSamples {
            times,
            cdf,
            cond_upper: cond_up,
            cond_lower: cond_lo,
            atoms: state.atoms,
        },
        per_stage: state.metrics,
    })
}

/// Coarse single-stage solve returning the mapped terminal distribution and
/// the relative stage survival.
fn coarse_stage<F: Real>(
    entry: &EvidenceDist<F>,
    stage: &OuStage<F>,
    duration: F,
    pieces: usize,
    grid_size: usize,
) -> Result<(EvidenceDist<F>, F)> {
    let u_end = ou_time_transform(stage.start_time + duration, stage)?;
    let plan = discretize_thresholds(stage, u_end, pieces)?;
    let mut dist = entry.clone();
    let mut log_q = F::zero();
    for piece in &plan {
        let (h, drift, du) = piece_frame(piece, stage);
        match &dist {
            EvidenceDist::Point { at, .. } => {
                if at.abs() >= h {
                    return Err(Error::DegenerateModel(
                        "entry point outside the first threshold piece".into(),
                    ));
                }
            }
            EvidenceDist::Grid(d) => {
                let (snapped, au, al) = apply_bounds_change(d, -h, h)?;
                log_q = log_q + (-(au + al)).ln_1p();
                dist = EvidenceDist::Grid(snapped);
            }
        }
        let theta = StageTheta::with_bounds(drift, F::one(), -h, h)?;
        let (d, q) = propagate_stage(&dist, &theta, du, grid_size)?;
        log_q = log_q + q.ln();
        dist = EvidenceDist::Grid(d);
    }
    let EvidenceDist::Grid(d) = &dist else {
        unreachable!("pieces >= 1 grids the distribution");
    };
    let m_aff = (-stage.leak * duration).exp();
    let shift = if stage.leak == F::zero() {
        stage.drift * duration
    } else {
        stage.drift / stage.leak * (F::one() - m_aff)
    };
    let offset = shift + m_aff * curve_midline(u_end, stage);
    let mapped = d.affine(m_aff, offset);
    let z = stage.threshold;
    let (snapped, au, al) = apply_bounds_change(&mapped, -z, z)?;
    log_q = log_q + (-(au + al)).ln_1p();
    Ok((EvidenceDist::Grid(snapped), log_q.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stage(a: f64, leak: f64, sigma: f64, z: f64) -> OuStage<f64> {
        OuStage {
            drift: a,
            leak,
            diffusion: sigma,
            start_time: 0.0,
            threshold: z,
        }
    }

    #[test]
    fn time_transform_example() {
        let st = stage(0.0, 1.0, 1.0, 2.0);
        let u = ou_time_transform(1.0, &st).unwrap();
        assert_abs_diff_eq!(u, (2.0f64.exp() - 1.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u, 3.194528, epsilon = 1e-6);
    }

    #[test]
    fn time_transform_small_leak_limit() {
        let st = stage(0.0, 1e-9, 1.3, 2.0);
        let u = ou_time_transform(2.0, &st).unwrap();
        assert_abs_diff_eq!(u, 1.3 * 1.3 * 2.0, epsilon = 1e-8);
    }

    #[test]
    fn time_transform_round_trip() {
        let st = stage(0.5, 0.7, 1.1, 2.0);
        for t in [0.0, 0.3, 1.0, 4.0] {
            let u = ou_time_transform(t, &st).unwrap();
            let back = ou_time_inverse(u, &st).unwrap();
            assert_abs_diff_eq!(back, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn threshold_curve_at_zero_is_threshold() {
        let st = stage(0.7, 0.5, 1.0, 2.0);
        assert_abs_diff_eq!(
            ou_threshold_curve(0.0, &st, Boundary::Upper),
            2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            ou_threshold_curve(0.0, &st, Boundary::Lower),
            -2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn threshold_curve_symmetric_without_drift() {
        let st = stage(0.0, 0.5, 1.0, 2.0);
        for u in [0.5, 1.0, 3.0] {
            let up = ou_threshold_curve(u, &st, Boundary::Upper);
            let lo = ou_threshold_curve(u, &st, Boundary::Lower);
            assert_abs_diff_eq!(up, -lo, epsilon = 1e-12);
            assert_abs_diff_eq!(up, 2.0 * (1.0 + 2.0 * 0.5 * u).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn threshold_curve_worked_example() {
        // at u = u(1) for lambda = 1, sigma = 1: sqrt(1 + 2u) = e
        let st = stage(1.0, 1.0, 1.0, 2.0);
        let u = ou_time_transform(1.0, &st).unwrap();
        let up = ou_threshold_curve(u, &st, Boundary::Upper);
        assert_abs_diff_eq!(up, 1.0f64.exp() + 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_leak_curve_is_drift_removal_line() {
        let st = stage(0.4, 0.0, 1.0, 1.5);
        for u in [0.0, 0.5, 2.0] {
            assert_abs_diff_eq!(
                ou_threshold_curve(u, &st, Boundary::Upper),
                1.5 - 0.4 * u,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn discretization_equal_in_original_time() {
        let st = stage(0.2, 0.8, 1.0, 2.0);
        let u_end = ou_time_transform(2.0, &st).unwrap();
        let plan = discretize_thresholds(&st, u_end, 8).unwrap();
        assert_eq!(plan.len(), 8);
        for (k, p) in plan.iter().enumerate() {
            assert_abs_diff_eq!(p.t_start, 0.25 * k as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(p.t_end, 0.25 * (k + 1) as f64, epsilon = 1e-12);
        }
        // transformed intervals chain
        for w in plan.windows(2) {
            assert_abs_diff_eq!(w[0].u_end, w[1].u_start, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(plan.last().unwrap().u_end, u_end, epsilon = 1e-9);
    }

    #[test]
    fn flat_curve_pieces_are_identical() {
        let st = stage(0.0, 0.0, 1.0, 2.0);
        let plan = discretize_thresholds(&st, 4.0, 5).unwrap();
        for p in &plan {
            assert_abs_diff_eq!(p.upper, 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.lower, -2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn vanishing_leak_matches_pure_diffusion() {
        // lambda = 1e-6 O-U against the exact leak-free analysis
        let spec = OuModelSpec::new(0.0, vec![stage(0.3, 1e-6, 1.0, 1.0)]).unwrap();
        let r = ou_fpt_distribution(&spec, 32, 256, None).unwrap();
        let th = crate::ddm::StageTheta::symmetric(0.3, 1.0, 1.0).unwrap();
        let er = crate::ddm::error_rate(0.0, &th).unwrap();
        let mdt = crate::ddm::mean_decision_time(0.0, &th).unwrap();
        assert_abs_diff_eq!(r.overall_er, er, epsilon = 1e-4);
        assert_abs_diff_eq!(r.overall_mdt, mdt, epsilon = 1e-4);
    }

    #[test]
    fn rejects_negative_leak_and_mismatched_thresholds() {
        assert!(OuModelSpec::new(0.0, vec![stage(0.1, -0.5, 1.0, 1.0)]).is_err());
        let mut s2 = stage(0.1, 0.5, 1.0, 1.0);
        s2.start_time = 1.0;
        s2.threshold = 2.0;
        assert!(OuModelSpec::new(0.0, vec![stage(0.1, 0.5, 1.0, 1.0), s2]).is_err());
    }
}
