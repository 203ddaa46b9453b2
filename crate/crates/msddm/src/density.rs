//! Discretized evidence distributions conditioned on survival.
//!
//! At every stage boundary the evidence of the still-undecided trajectories
//! follows a density supported strictly inside the thresholds, vanishing at
//! both of them. [`ConditionedDensity`] stores that density (normalized, on
//! an interior grid) together with the absolute survival probability;
//! [`EvidenceDist`] additionally admits the exact point mass that seeds the
//! first stage.

use crate::error::{domain, Error, Result};
use crate::real::{c, Real};

/// Normalized density of the surviving evidence on a strictly increasing
/// interior grid. The density is linearly interpolated between nodes and
/// extrapolates to zero at the support endpoints (the thresholds), so the
/// trapezoidal quadrature implicitly includes two zero-valued endpoint
/// nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedDensity<F> {
    grid: Vec<F>,
    values: Vec<F>,
    support: (F, F),
    survival_prob: F,
}

impl<F: Real> ConditionedDensity<F> {
    /// Build from raw (possibly unnormalized) samples; the values are
    /// rescaled so the density integrates to one. Returns the constructed
    /// density together with the raw mass that was divided out.
    pub fn from_unnormalized(
        grid: Vec<F>,
        values: Vec<F>,
        support: (F, F),
        survival_prob: F,
    ) -> Result<(Self, F)> {
        if grid.len() < 2 || grid.len() != values.len() {
            return domain("density grid needs >= 2 nodes and matching values");
        }
        let (lo, hi) = support;
        if !(lo < hi) {
            return domain("density support must be a nonempty interval");
        }
        if grid[0] <= lo || *grid.last().unwrap() >= hi {
            return domain("grid nodes must lie strictly inside the support");
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("grid must be strictly increasing");
        }
        if values.iter().any(|v| !v.is_finite() || *v < F::zero()) {
            return domain("density values must be finite and nonnegative");
        }
        if !(survival_prob >= F::zero() && survival_prob <= F::one() + c::<F>(1e-9)) {
            return domain("survival probability must lie in [0, 1]");
        }
        let mut d = ConditionedDensity {
            grid,
            values,
            support,
            survival_prob: survival_prob.min(F::one()),
        };
        let mass = d.quadrature(|_| F::one());
        if !(mass > F::zero()) {
            return Err(Error::DegenerateModel(
                "conditioned density carries no mass".into(),
            ));
        }
        for v in &mut d.values {
            *v = *v / mass;
        }
        Ok((d, mass))
    }

    /// Uniform interior grid of `n` nodes on the open interval `(lo, hi)`.
    pub fn uniform_grid(support: (F, F), n: usize) -> Vec<F> {
        let (lo, hi) = support;
        let h = (hi - lo) / c::<F>((n + 1) as f64);
        (1..=n).map(|j| lo + h * c::<F>(j as f64)).collect()
    }

    pub fn grid(&self) -> &[F] {
        &self.grid
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn support(&self) -> (F, F) {
        self.support
    }

    pub fn survival_prob(&self) -> F {
        self.survival_prob
    }

    pub(crate) fn set_survival_prob(&mut self, p: F) {
        self.survival_prob = p;
    }

    /// Trapezoidal quadrature of `f` against the density, including the
    /// implicit zero-valued endpoints at the support boundary.
    pub fn quadrature(&self, f: impl Fn(F) -> F) -> F {
        let g = &self.grid;
        let v = &self.values;
        let n = g.len();
        let half = c::<F>(0.5);
        let mut acc = (g[0] - self.support.0) * f(g[0]) * v[0] * half;
        for j in 0..n - 1 {
            let fa = f(g[j]) * v[j];
            let fb = f(g[j + 1]) * v[j + 1];
            acc = acc + (g[j + 1] - g[j]) * (fa + fb) * half;
        }
        acc + (self.support.1 - g[n - 1]) * f(g[n - 1]) * v[n - 1] * half
    }

    /// Total mass under the stored (normalized) density; 1 up to rounding.
    pub fn mass(&self) -> F {
        self.quadrature(|_| F::one())
    }

    pub fn mean(&self) -> F {
        self.quadrature(|x| x)
    }

    pub fn second_moment(&self) -> F {
        self.quadrature(|x| x * x)
    }

    /// `E[e^{-2 s X}]` against the density.
    pub fn exp_moment(&self, s: F) -> F {
        let two = c::<F>(2.0);
        self.quadrature(|x| (-two * s * x).exp())
    }

    /// Linear interpolation of the density at `x`; zero outside the support
    /// and linearly decaying to zero between the outermost nodes and the
    /// support endpoints.
    pub fn interpolate(&self, x: F) -> F {
        let (lo, hi) = self.support;
        if x <= lo || x >= hi {
            return F::zero();
        }
        let g = &self.grid;
        let v = &self.values;
        let n = g.len();
        if x <= g[0] {
            return v[0] * (x - lo) / (g[0] - lo);
        }
        if x >= g[n - 1] {
            return v[n - 1] * (hi - x) / (hi - g[n - 1]);
        }
        // binary search for the segment containing x
        let mut a = 0usize;
        let mut b = n - 1;
        while b - a > 1 {
            let m = (a + b) / 2;
            if g[m] <= x {
                a = m;
            } else {
                b = m;
            }
        }
        let w = (x - g[a]) / (g[b] - g[a]);
        v[a] + (v[b] - v[a]) * w
    }

    /// Exact integral of the piecewise-linear density over `[from, to]`
    /// (clipped to the support).
    pub fn integrate_interval(&self, from: F, to: F) -> F {
        let (lo, hi) = self.support;
        let a = from.max(lo);
        let b = to.min(hi);
        if !(a < b) {
            return F::zero();
        }
        // integrate segment by segment over the node sequence lo, g..., hi
        let half = c::<F>(0.5);
        let mut acc = F::zero();
        let mut seg_start = lo;
        let mut val_start = F::zero();
        let n = self.grid.len();
        for j in 0..=n {
            let (seg_end, val_end) = if j < n {
                (self.grid[j], self.values[j])
            } else {
                (hi, F::zero())
            };
            let s = a.max(seg_start);
            let e = b.min(seg_end);
            if s < e {
                let fs = self.interp_on_segment(seg_start, val_start, seg_end, val_end, s);
                let fe = self.interp_on_segment(seg_start, val_start, seg_end, val_end, e);
                acc = acc + (e - s) * (fs + fe) * half;
            }
            seg_start = seg_end;
            val_start = val_end;
            if seg_start >= b {
                break;
            }
        }
        acc
    }

    fn interp_on_segment(&self, x0: F, v0: F, x1: F, v1: F, x: F) -> F {
        let w = (x - x0) / (x1 - x0);
        v0 + (v1 - v0) * w
    }

    /// Density of `-X`: grid mirrored and reversed, support swapped.
    pub fn reflected(&self) -> Self {
        let grid = self.grid.iter().rev().map(|&x| -x).collect();
        let values = self.values.iter().rev().copied().collect();
        ConditionedDensity {
            grid,
            values,
            support: (-self.support.1, -self.support.0),
            survival_prob: self.survival_prob,
        }
    }

    /// Density of `offset + scale * X` for `scale > 0`.
    pub fn affine(&self, scale: F, offset: F) -> Self {
        debug_assert!(scale > F::zero());
        let grid = self.grid.iter().map(|&x| offset + scale * x).collect();
        let values = self.values.iter().map(|&v| v / scale).collect();
        ConditionedDensity {
            grid,
            values,
            support: (
                offset + scale * self.support.0,
                offset + scale * self.support.1,
            ),
            survival_prob: self.survival_prob,
        }
    }
}

/// Evidence distribution at a stage boundary: either the exact point mass
/// that seeds the first stage or a gridded conditioned density.
#[derive(Debug, Clone)]
pub enum EvidenceDist<F> {
    Point { at: F, survival_prob: F },
    Grid(ConditionedDensity<F>),
}

impl<F: Real> EvidenceDist<F> {
    pub fn point(at: F) -> Self {
        EvidenceDist::Point {
            at,
            survival_prob: F::one(),
        }
    }

    pub fn survival_prob(&self) -> F {
        match self {
            EvidenceDist::Point { survival_prob, .. } => *survival_prob,
            EvidenceDist::Grid(d) => d.survival_prob(),
        }
    }

    /// `E[f(X)]` under the distribution.
    pub fn expectation(&self, f: impl Fn(F) -> F) -> F {
        match self {
            EvidenceDist::Point { at, .. } => f(*at),
            EvidenceDist::Grid(d) => d.quadrature(f),
        }
    }

    /// Support interval the evidence is confined to.
    pub fn support(&self) -> Option<(F, F)> {
        match self {
            EvidenceDist::Point { .. } => None,
            EvidenceDist::Grid(d) => Some(d.support()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_density(n: usize) -> ConditionedDensity<f64> {
        let grid = ConditionedDensity::<f64>::uniform_grid((-1.0, 1.0), n);
        let values = vec![1.0; n];
        ConditionedDensity::from_unnormalized(grid, values, (-1.0, 1.0), 1.0)
            .unwrap()
            .0
    }

    #[test]
    fn normalization_and_mass() {
        let d = uniform_density(501);
        assert_abs_diff_eq!(d.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_moment_at_zero_is_one() {
        let d = uniform_density(501);
        assert_abs_diff_eq!(d.exp_moment(0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_density_has_zero_mean() {
        let d = uniform_density(501);
        assert_abs_diff_eq!(d.mean(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_second_moment_near_third() {
        // the implicit zero endpoints make the interpolated shape a
        // trapezoid, so agreement is at grid tolerance, not exact
        let d = uniform_density(2001);
        assert_abs_diff_eq!(d.second_moment(), 1.0 / 3.0, epsilon = 1e-3);
    }

    #[test]
    fn interval_integral_matches_quadrature() {
        let d = uniform_density(500);
        let whole = d.integrate_interval(-2.0, 2.0);
        assert_abs_diff_eq!(whole, 1.0, epsilon = 1e-12);
        let half = d.integrate_interval(0.0, 1.0);
        assert_abs_diff_eq!(half, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn reflection_preserves_mass_and_flips_mean() {
        let grid = ConditionedDensity::<f64>::uniform_grid((-1.0, 1.0), 301);
        let values: Vec<f64> = grid.iter().map(|x| (1.0 - x) * (x + 1.0) * (1.2 + x)).collect();
        let (d, _) =
            ConditionedDensity::from_unnormalized(grid, values, (-1.0, 1.0), 0.7).unwrap();
        let r = d.reflected();
        assert_abs_diff_eq!(r.mass(), d.mass(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean(), -d.mean(), epsilon = 1e-12);
        assert_eq!(r.survival_prob(), 0.7);
    }

    #[test]
    fn affine_map_preserves_mass() {
        let d = uniform_density(301);
        let m = d.affine(0.5, 2.0);
        assert_abs_diff_eq!(m.mass(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean(), 2.0 + 0.5 * d.mean(), epsilon = 1e-12);
        assert_eq!(m.support(), (1.5, 2.5));
    }

    #[test]
    fn point_mass_expectation_is_exact() {
        let p = EvidenceDist::point(0.3);
        assert_eq!(p.expectation(|x| x * x), 0.09);
        assert_eq!(p.survival_prob(), 1.0);
    }

    #[test]
    fn rejects_bad_grids() {
        let bad = ConditionedDensity::from_unnormalized(
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
            (-1.0, 1.0),
            1.0,
        );
        assert!(bad.is_err());
        let unsorted = ConditionedDensity::from_unnormalized(
            vec![0.5, 0.0],
            vec![1.0, 1.0],
            (-1.0, 1.0),
            1.0,
        );
        assert!(unsorted.is_err());
    }
}
