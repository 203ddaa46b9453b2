//! Reward-rate evaluation and decision-threshold optimization.
//!
//! The reward rate of a threshold `z` is `(1 - ER) / (E[tau] + T_nd)` with
//! the error rate and mean decision time of the model using `±z` at every
//! stage. For multistage models the curve can be multimodal, so the
//! optimizer is a dense grid scan with golden-section refinement of every
//! interior local maximum rather than a unimodal method.

use rayon::prelude::*;

use crate::aggregate::{analyze_scalars, ModelSpec};
use crate::error::{domain, Result};
use crate::real::{c, Real};

/// Threshold-search configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig<F> {
    /// Non-decision time added to the mean decision time.
    pub t_nd: F,
    pub z_min: F,
    pub z_max: F,
    /// Number of scan points across `[z_min, z_max]`.
    pub resolution: usize,
}

impl<F: Real> Default for RewardConfig<F> {
    fn default() -> Self {
        RewardConfig {
            t_nd: c(0.3),
            z_min: c(0.01),
            z_max: c(0.4),
            resolution: 2000,
        }
    }
}

impl<F: Real> RewardConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if !(F::zero() < self.z_min && self.z_min < self.z_max) {
            return domain("need 0 < z_min < z_max");
        }
        if self.t_nd < F::zero() {
            return domain("non-decision time must be nonnegative");
        }
        if self.resolution < 3 {
            return domain("threshold scan needs at least 3 points");
        }
        Ok(())
    }
}

/// Reward rate of the model with every stage's thresholds replaced by `±z`.
pub fn reward_rate<F: Real>(
    z: F,
    template: &ModelSpec<F>,
    cfg: &RewardConfig<F>,
    grid_size: usize,
) -> Result<F> {
    if !(z > F::zero()) {
        return domain("threshold must be positive");
    }
    let spec = template.with_symmetric_threshold(z)?;
    let s = analyze_scalars(&spec, grid_size)?;
    Ok((F::one() - s.overall_er) / (s.overall_mdt + cfg.t_nd))
}

/// A refined interior local maximum of the reward-rate curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMaximum<F> {
    pub z: F,
    pub reward_rate: F,
}

/// Result of the threshold optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOptimum<F> {
    pub z_star: F,
    pub rr_star: F,
    /// All interior local maxima, in increasing `z` order.
    pub local_maxima: Vec<LocalMaximum<F>>,
    /// True when no interior maximum exists and the argmax sits on a scan
    /// boundary.
    pub boundary_argmax: bool,
}

/// Dense scan plus golden-section refinement of every interior local
/// maximum; the global maximum is returned along with the full list.
pub fn optimize_threshold<F: Real>(
    template: &ModelSpec<F>,
    cfg: &RewardConfig<F>,
    grid_size: usize,
) -> Result<ThresholdOptimum<F>> {
    cfg.validate()?;
    let n = cfg.resolution;
    let zs: Vec<F> = (0..n)
        .map(|i| {
            cfg.z_min + (cfg.z_max - cfg.z_min) * c::<F>(i as f64) / c::<F>((n - 1) as f64)
        })
        .collect();
    let rr: Vec<F> = zs
        .par_iter()
        .map(|&z| reward_rate(z, template, cfg, grid_size))
        .collect::<Result<Vec<F>>>()?;

    // interior local maxima by discrete slope sign change
    let mut candidates = Vec::new();
    for k in 1..n - 1 {
        let at_least = rr[k] >= rr[k - 1] && rr[k] >= rr[k + 1];
        let strictly = rr[k] > rr[k - 1] || rr[k] > rr[k + 1];
        if at_least && strictly {
            candidates.push(k);
        }
    }

    let f = |z: F| reward_rate(z, template, cfg, grid_size);
    let xtol = c::<F>(1e-6);
    let mut maxima: Vec<LocalMaximum<F>> = Vec::new();
    for k in candidates {
        let (z, v) = golden_max(&f, zs[k - 1], zs[k + 1], xtol)?;
        maxima.push(LocalMaximum { z, reward_rate: v });
    }
    maxima.sort_by(|a, b| a.z.partial_cmp(&b.z).unwrap());
    // merge refinements that converged to the same peak
    let cell = (cfg.z_max - cfg.z_min) / c::<F>((n - 1) as f64);
    let mut merged: Vec<LocalMaximum<F>> = Vec::new();
    for m in maxima {
        match merged.last_mut() {
            Some(last) if (m.z - last.z).abs() <= cell => {
                if m.reward_rate > last.reward_rate {
                    *last = m;
                }
            }
            _ => merged.push(m),
        }
    }

    if merged.is_empty() {
        // monotone curve: argmax on a boundary
        let (k, _) = rr
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        return Ok(ThresholdOptimum {
            z_star: zs[k],
            rr_star: rr[k],
            local_maxima: Vec::new(),
            boundary_argmax: true,
        });
    }
    let best = merged
        .iter()
        .copied()
        .max_by(|a, b| a.reward_rate.partial_cmp(&b.reward_rate).unwrap())
        .unwrap();
    Ok(ThresholdOptimum {
        z_star: best.z,
        rr_star: best.reward_rate,
        local_maxima: merged,
        boundary_argmax: false,
    })
}

fn golden_max<F: Real>(
    f: &impl Fn(F) -> Result<F>,
    mut a: F,
    mut b: F,
    xtol: F,
) -> Result<(F, F)> {
    let inv_phi = (c::<F>(5.0).sqrt() - F::one()) / c::<F>(2.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > xtol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        }
    }
    let x = (a + b) / c::<F>(2.0);
    Ok((x, f(x)?))
}

/// Fixed second-stage parameters for the threshold surface study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceBase<F> {
    pub a2: F,
    pub sigma: F,
    pub x0: F,
}

impl<F: Real> Default for SurfaceBase<F> {
    fn default() -> Self {
        SurfaceBase {
            a2: c(0.5),
            sigma: c(0.1),
            x0: F::zero(),
        }
    }
}

/// One cell of the optimal-threshold surface. `error` records a cell-level
/// failure without aborting the rest of the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCell<F> {
    pub a1: F,
    pub t1: F,
    pub z_star: F,
    pub rr_star: F,
    pub n_local_maxima: usize,
    pub boundary_argmax: bool,
    pub error: Option<String>,
}

/// Optimal threshold over a grid of first-stage drifts and switch times for
/// the two-stage model `(a1 until t1, then a2)`. Cells with `t1 = 0` are the
/// pure single-stage model with drift `a2`.
pub fn threshold_surface<F: Real>(
    a1_grid: &[F],
    t1_grid: &[F],
    base: &SurfaceBase<F>,
    cfg: &RewardConfig<F>,
    grid_size: usize,
) -> Result<Vec<SurfaceCell<F>>> {
    cfg.validate()?;
    if a1_grid.is_empty() || t1_grid.is_empty() {
        return domain("surface grids must be nonempty");
    }
    let cells: Vec<(F, F)> = a1_grid
        .iter()
        .flat_map(|&a1| t1_grid.iter().map(move |&t1| (a1, t1)))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(a1, t1)| {
            let result = surface_cell(a1, t1, base, cfg, grid_size);
            match result {
                Ok(opt) => SurfaceCell {
                    a1,
                    t1,
                    z_star: opt.z_star,
                    rr_star: opt.rr_star,
                    n_local_maxima: opt.local_maxima.len(),
                    boundary_argmax: opt.boundary_argmax,
                    error: None,
                },
                Err(e) => SurfaceCell {
                    a1,
                    t1,
                    z_star: F::nan(),
                    rr_star: F::nan(),
                    n_local_maxima: 0,
                    boundary_argmax: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

fn surface_cell<F: Real>(
    a1: F,
    t1: F,
    base: &SurfaceBase<F>,
    cfg: &RewardConfig<F>,
    grid_size: usize,
) -> Result<ThresholdOptimum<F>> {
    use crate::ddm::StageTheta;
    // placeholder thresholds; the scan replaces them per z
    let z0 = cfg.z_max;
    let template = if t1 > F::zero() {
        ModelSpec::new(
            base.x0,
            vec![
                StageTheta::symmetric(a1, base.sigma, z0)?,
                StageTheta::symmetric(base.a2, base.sigma, z0)?.starting_at(t1),
            ],
        )?
    } else {
        ModelSpec::single(base.x0, StageTheta::symmetric(base.a2, base.sigma, z0)?)?
    };
    optimize_threshold(&template, cfg, grid_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddm::StageTheta;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn pure_template(a: f64, sigma: f64) -> ModelSpec<f64> {
        ModelSpec::single(0.0, StageTheta::symmetric(a, sigma, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn small_threshold_limit() {
        // z -> 0+: ER -> 1/2, E[tau] -> 0, so RR -> 0.5 / t_nd
        let cfg = RewardConfig {
            t_nd: 0.3,
            ..RewardConfig::default()
        };
        let rr = reward_rate(1e-4, &pure_template(0.5, 0.1), &cfg, 64).unwrap();
        assert_abs_diff_eq!(rr, 0.5 / 0.3, epsilon = 1e-2);
    }

    #[test]
    fn large_threshold_kills_reward() {
        let cfg = RewardConfig::<f64>::default();
        let t = pure_template(0.5, 0.1);
        let rr_small = reward_rate(0.05, &t, &cfg, 64).unwrap();
        let rr_large = reward_rate(10.0, &t, &cfg, 64).unwrap();
        assert!(rr_large < 0.05 * rr_small);
    }

    #[test]
    fn pure_ddm_is_unimodal() {
        let cfg = RewardConfig {
            resolution: 400,
            ..RewardConfig::default()
        };
        let opt = optimize_threshold(&pure_template(0.5, 0.1), &cfg, 128).unwrap();
        assert_eq!(opt.local_maxima.len(), 1);
        assert!(!opt.boundary_argmax);
        assert!(opt.z_star > cfg.z_min && opt.z_star < cfg.z_max);
    }

    #[test]
    fn refined_maximum_dominates_neighbors() {
        let cfg = RewardConfig {
            resolution: 300,
            ..RewardConfig::default()
        };
        let t = pure_template(0.5, 0.1);
        let opt = optimize_threshold(&t, &cfg, 128).unwrap();
        let h = (cfg.z_max - cfg.z_min) / 299.0;
        let rr_at = |z: f64| reward_rate(z, &t, &cfg, 128).unwrap();
        assert!(opt.rr_star >= rr_at(opt.z_star - h) - 1e-12);
        assert!(opt.rr_star >= rr_at(opt.z_star + h) - 1e-12);
    }

    #[test]
    fn zero_drift_curve_is_monotone_boundary_case() {
        // RR = 0.5 / (E[tau] + t_nd) strictly decreasing in z
        let cfg = RewardConfig {
            resolution: 200,
            ..RewardConfig::default()
        };
        let opt = optimize_threshold(&pure_template(0.0, 0.1), &cfg, 64).unwrap();
        assert!(opt.boundary_argmax);
        assert!(opt.local_maxima.is_empty());
        assert_abs_diff_eq!(opt.z_star, cfg.z_min, epsilon = 1e-12);
    }

    #[test]
    fn time_rescaling_leaves_optimal_threshold_fixed() {
        // a -> a/c, sigma -> sigma/sqrt(c), t -> c t, t_nd -> c t_nd scales
        // RR by 1/c and moves no maxima
        let c_scale = 2.0f64;
        let cfg = RewardConfig {
            resolution: 500,
            ..RewardConfig::default()
        };
        let cfg_scaled = RewardConfig {
            t_nd: cfg.t_nd * c_scale,
            ..cfg
        };
        let t1 = 0.15;
        let base = ModelSpec::new(
            0.0,
            vec![
                StageTheta::symmetric(0.5, 0.1, 1.0).unwrap(),
                StageTheta::symmetric(0.1, 0.1, 1.0).unwrap().starting_at(t1),
            ],
        )
        .unwrap();
        let scaled = ModelSpec::new(
            0.0,
            vec![
                StageTheta::symmetric(0.5 / c_scale, 0.1 / c_scale.sqrt(), 1.0).unwrap(),
                StageTheta::symmetric(0.1 / c_scale, 0.1 / c_scale.sqrt(), 1.0)
                    .unwrap()
                    .starting_at(t1 * c_scale),
            ],
        )
        .unwrap();
        let a = optimize_threshold(&base, &cfg, 192).unwrap();
        let b = optimize_threshold(&scaled, &cfg_scaled, 192).unwrap();
        assert_abs_diff_eq!(a.z_star, b.z_star, epsilon = 1e-5);
        assert_relative_eq!(a.rr_star, b.rr_star * c_scale, max_relative = 1e-5);
    }

    #[test]
    fn surface_t1_zero_column_is_pure_ddm() {
        let cfg = RewardConfig {
            resolution: 300,
            ..RewardConfig::default()
        };
        let base = SurfaceBase::<f64>::default();
        let cells = threshold_surface(&[0.1, 0.3], &[0.0], &base, &cfg, 128).unwrap();
        let pure = optimize_threshold(&pure_template(base.a2, base.sigma), &cfg, 128).unwrap();
        for cell in &cells {
            assert!(cell.error.is_none());
            assert_abs_diff_eq!(cell.z_star, pure.z_star, epsilon = 1e-6);
        }
    }

    #[test]
    fn surface_equal_drifts_row_constant_in_t1() {
        let cfg = RewardConfig {
            resolution: 300,
            ..RewardConfig::default()
        };
        let base = SurfaceBase::<f64>::default();
        let cells =
            threshold_surface(&[base.a2], &[0.05, 0.1, 0.2], &base, &cfg, 128).unwrap();
        for w in cells.windows(2) {
            assert_abs_diff_eq!(w[0].z_star, w[1].z_star, epsilon = 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = RewardConfig::<f64>::default();
        cfg.z_min = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RewardConfig::<f64>::default();
        cfg.resolution = 2;
        assert!(cfg.validate().is_err());
    }
}
