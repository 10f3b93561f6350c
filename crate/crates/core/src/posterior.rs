//! Grid-quadrature posterior inference over a bounded ability interval.
//!
//! A [`Posterior`] stores the log-density at the nodes of a uniform
//! [`AbilityGrid`] and integrates with the end-corrected trapezoid rule. Every
//! constructor and update leaves the density normalized, so all estimators are
//! simple weighted sums over the nodes.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::irt::{log_logistic, Response, ResponseRecord, ThetaBounds};

pub const DEFAULT_GRID_SIZE: usize = 1001;

/// Absolute slack on the log-density when deciding that neighbouring nodes
/// share the maximum.
const PLATEAU_TOLERANCE: f64 = 1e-12;

/// Uniformly spaced quadrature nodes spanning a [`ThetaBounds`] interval.
#[derive(Debug, Clone)]
pub struct AbilityGrid {
    bounds: ThetaBounds,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `exp(-theta_i)`, used to evaluate logistic columns with one division.
    exp_neg_nodes: Vec<f64>,
    spacing: f64,
}

impl AbilityGrid {
    /// Requires an odd node count of at least 3 so that the interval midpoint
    /// is a node.
    pub fn new(bounds: ThetaBounds, size: usize) -> Result<Self> {
        bounds.validate()?;
        if size < 3 || size.is_multiple_of(2) {
            return Err(CatError::InvalidGrid(format!(
                "grid size must be odd and at least 3, got {size}"
            )));
        }
        let last = (size - 1) as f64;
        // Weighted endpoint form keeps the grid exactly symmetric when the
        // bounds are.
        let nodes: Vec<f64> = (0..size)
            .map(|i| {
                if i == 0 {
                    bounds.lower
                } else if i == size - 1 {
                    bounds.upper
                } else {
                    (bounds.lower * (last - i as f64) + bounds.upper * i as f64) / last
                }
            })
            .collect();
        let spacing = bounds.width() / last;
        let mut weights = vec![spacing; size];
        if size >= 7 {
            // Gregory end corrections: exact for quadratics, so moments of
            // densities that do not vanish at the bounds keep O(h^3) error.
            for (k, f) in [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0].into_iter().enumerate() {
                weights[k] = f * spacing;
                weights[size - 1 - k] = f * spacing;
            }
        } else {
            weights[0] = 0.5 * spacing;
            weights[size - 1] = 0.5 * spacing;
        }
        let exp_neg_nodes = nodes.iter().map(|t| (-t).exp()).collect();
        Ok(Self {
            bounds,
            nodes,
            weights,
            exp_neg_nodes,
            spacing,
        })
    }

    pub fn bounds(&self) -> ThetaBounds {
        self.bounds
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weights: the trapezoid rule with end corrections.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of the piecewise-linear interpolant of `density`.
    pub(crate) fn linear_total(&self, density: &[f64]) -> f64 {
        let inner: f64 = density[1..density.len() - 1].iter().sum();
        self.spacing * (inner + 0.5 * (density[0] + density[density.len() - 1]))
    }

    /// Fills `correct[k] = G(theta_i - b)` and `incorrect[k] = 1 - G(theta_i - b)`
    /// for the nodes `i = range.start + k`, each computed without cancellation.
    pub(crate) fn logistic_columns(
        &self,
        b: f64,
        range: Range<usize>,
        correct: &mut [f64],
        incorrect: &mut [f64],
    ) {
        let eb = b.exp();
        if eb.is_finite() && eb > 0.0 {
            for ((en, c), w) in self.exp_neg_nodes[range]
                .iter()
                .zip(correct.iter_mut())
                .zip(incorrect.iter_mut())
            {
                // z = exp(b - theta)
                let z = en * eb;
                if z.is_finite() {
                    *c = 1.0 / (1.0 + z);
                    *w = z * *c;
                } else {
                    *c = 0.0;
                    *w = 1.0;
                }
            }
        } else {
            for ((t, c), w) in self.nodes[range]
                .iter()
                .zip(correct.iter_mut())
                .zip(incorrect.iter_mut())
            {
                *c = crate::irt::logistic(t - b);
                *w = crate::irt::logistic(b - t);
            }
        }
    }
}

/// Prior family. Serialized with a `kind` tag: `truncated-normal`, `uniform`
/// or `table`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    TruncatedNormal {
        mean: f64,
        sd: f64,
    },
    Uniform,
    /// Unnormalized density values, one per grid node.
    Table {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub kind: PriorKind,
    #[serde(default)]
    pub bounds: ThetaBounds,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::standard_normal()
    }
}

impl PriorSpec {
    /// Standard normal truncated to the default `[-6, 6]` interval.
    pub fn standard_normal() -> Self {
        Self {
            kind: PriorKind::TruncatedNormal { mean: 0.0, sd: 1.0 },
            bounds: ThetaBounds::default(),
        }
    }

    pub fn uniform(bounds: ThetaBounds) -> Self {
        Self {
            kind: PriorKind::Uniform,
            bounds,
        }
    }

    pub fn truncated_normal(mean: f64, sd: f64, bounds: ThetaBounds) -> Self {
        Self {
            kind: PriorKind::TruncatedNormal { mean, sd },
            bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        match &self.kind {
            PriorKind::TruncatedNormal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || *sd <= 0.0 {
                    return Err(CatError::InvalidPrior(format!(
                        "truncated normal needs finite mean and positive sd, got ({mean}, {sd})"
                    )));
                }
            }
            PriorKind::Uniform => {}
            PriorKind::Table { values } => {
                if let Some(v) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
                    return Err(CatError::InvalidPrior(format!(
                        "table prior density must be positive and finite everywhere, found {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the density is log-concave on the interval, which the mode
    /// estimator requires.
    pub fn is_log_concave(&self) -> bool {
        match &self.kind {
            PriorKind::TruncatedNormal { .. } | PriorKind::Uniform => true,
            PriorKind::Table { values } => {
                let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
                logs.windows(3)
                    .all(|w| w[0] - 2.0 * w[1] + w[2] <= 1e-12 * (1.0 + w[1].abs()))
            }
        }
    }

    fn log_density(&self, grid: &AbilityGrid) -> Result<Vec<f64>> {
        match &self.kind {
            PriorKind::TruncatedNormal { mean, sd } => Ok(grid
                .nodes()
                .iter()
                .map(|t| {
                    let z = (t - mean) / sd;
                    -0.5 * z * z
                })
                .collect()),
            PriorKind::Uniform => Ok(vec![0.0; grid.len()]),
            PriorKind::Table { values } => {
                if values.len() != grid.len() {
                    return Err(CatError::InvalidPrior(format!(
                        "table prior has {} values for a grid of {} nodes",
                        values.len(),
                        grid.len()
                    )));
                }
                Ok(values.iter().map(|v| v.ln()).collect())
            }
        }
    }
}

/// Loss used to score an ability estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSpec {
    Squared,
    Absolute,
}

impl LossSpec {
    #[inline]
    pub fn eval(self, estimate: f64, theta: f64) -> f64 {
        match self {
            LossSpec::Squared => (estimate - theta) * (estimate - theta),
            LossSpec::Absolute => (estimate - theta).abs(),
        }
    }
}

/// Read-only view of a (possibly unnormalized) density on a run of
/// consecutive grid nodes. `mass` is its quadrature integral; all moments are
/// divided by it.
#[derive(Clone, Copy)]
pub(crate) struct DensityView<'a> {
    nodes: &'a [f64],
    weights: &'a [f64],
    density: &'a [f64],
    spacing: f64,
    bounds: ThetaBounds,
    mass: f64,
}

impl<'a> DensityView<'a> {
    pub(crate) fn new(grid: &'a AbilityGrid, density: &'a [f64], mass: f64) -> Self {
        Self::window(grid, 0..grid.len(), density, mass)
    }

    /// `density[k]` belongs to node `range.start + k`.
    pub(crate) fn window(
        grid: &'a AbilityGrid,
        range: Range<usize>,
        density: &'a [f64],
        mass: f64,
    ) -> Self {
        debug_assert_eq!(range.len(), density.len());
        Self {
            nodes: &grid.nodes[range.clone()],
            weights: &grid.weights[range],
            density,
            spacing: grid.spacing,
            bounds: grid.bounds,
            mass,
        }
    }

    pub(crate) fn mean(&self) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(self.density)
            .zip(self.nodes)
            .map(|((w, d), t)| w * d * t)
            .sum();
        self.bounds.clamp(s / self.mass)
    }

    /// Squared loss uses the quadrature weights. Absolute loss is integrated
    /// exactly against the piecewise-linear interpolant (the one the median
    /// is defined on), so the kink at the estimate costs no accuracy.
    pub(crate) fn expected_loss(&self, estimate: f64, loss: LossSpec) -> f64 {
        match loss {
            LossSpec::Squared => {
                let s: f64 = self
                    .weights
                    .iter()
                    .zip(self.density)
                    .zip(self.nodes)
                    .map(|((w, d), t)| w * d * loss.eval(estimate, *t))
                    .sum();
                s / self.mass
            }
            LossSpec::Absolute => self.linear_abs_loss(estimate),
        }
    }

    fn linear_total(&self) -> f64 {
        let d = self.density;
        let last = d.len() - 1;
        if last == 0 {
            return 0.0;
        }
        let inner: f64 = d[1..last].iter().sum();
        self.spacing * (inner + 0.5 * (d[0] + d[last]))
    }

    fn linear_abs_loss(&self, m: f64) -> f64 {
        let (d, x) = (self.density, self.nodes);
        let total = self.linear_total();
        if !(total > 0.0) {
            return (x[0] - m).abs();
        }
        // Simpson's rule is exact for |t - m| times a linear density on each
        // piece that does not straddle m.
        let piece = |a: f64, fa: f64, b: f64, fb: f64| {
            let mid = 0.5 * (a + b);
            (b - a) / 6.0
                * ((a - m).abs() * fa + 2.0 * (mid - m).abs() * (fa + fb) + (b - m).abs() * fb)
        };
        let mut s = 0.0;
        for k in 0..d.len() - 1 {
            let (x0, x1, f0, f1) = (x[k], x[k + 1], d[k], d[k + 1]);
            if m > x0 && m < x1 {
                let fm = f0 + (f1 - f0) * (m - x0) / (x1 - x0);
                s += piece(x0, f0, m, fm) + piece(m, fm, x1, f1);
            } else {
                s += piece(x0, f0, x1, f1);
            }
        }
        s / total
    }

    pub(crate) fn variance(&self) -> f64 {
        self.expected_loss(self.mean(), LossSpec::Squared)
    }

    /// Point where the integral of the piecewise-linear interpolant reaches half,
    /// linearly interpolated inside the bracketing cell.
    pub(crate) fn median(&self) -> f64 {
        let d = self.density;
        let last = d.len() - 1;
        if last == 0 {
            return self.nodes[0];
        }
        let target = 0.5 * self.linear_total();
        let half_h = 0.5 * self.spacing;
        let mut cum = 0.0;
        for k in 0..last {
            let area = half_h * (d[k] + d[k + 1]);
            if cum + area >= target && area > 0.0 {
                let frac = ((target - cum) / area).clamp(0.0, 1.0);
                return self.nodes[k] + frac * (self.nodes[k + 1] - self.nodes[k]);
            }
            cum += area;
        }
        self.nodes[last]
    }

    pub(crate) fn bayes_estimate(&self, loss: LossSpec) -> f64 {
        match loss {
            LossSpec::Squared => self.mean(),
            LossSpec::Absolute => self.median(),
        }
    }

    /// Posterior expected loss of the Bayes estimate under `loss`.
    pub(crate) fn min_expected_loss(&self, loss: LossSpec) -> f64 {
        self.expected_loss(self.bayes_estimate(loss), loss)
    }
}

/// Log of the peak-to-node density ratio beyond which nodes are left out of
/// the selection sums (a ratio of 1e20).
pub(crate) const SUPPORT_LOG_RATIO: f64 = 46.051_701_859_880_914;

/// Normalized posterior density on an [`AbilityGrid`].
#[derive(Debug, Clone)]
pub struct Posterior {
    grid: Arc<AbilityGrid>,
    log_density: Vec<f64>,
    density: Vec<f64>,
    log_concave: bool,
    support: Range<usize>,
}

impl PartialEq for Posterior {
    fn eq(&self, other: &Self) -> bool {
        self.grid.nodes == other.grid.nodes
            && self.log_density == other.log_density
            && self.log_concave == other.log_concave
    }
}

/// `{nodes[], density[]}` as exchanged with clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub nodes: Vec<f64>,
    pub density: Vec<f64>,
}

impl Posterior {
    /// Prior density evaluated on a fresh grid of `grid_size` nodes.
    pub fn from_prior(prior: &PriorSpec, grid_size: usize) -> Result<Self> {
        prior.validate()?;
        let grid = Arc::new(AbilityGrid::new(prior.bounds, grid_size)?);
        Self::from_prior_on(prior, grid)
    }

    /// Like [`Posterior::from_prior`] but reuses an existing grid.
    pub fn from_prior_on(prior: &PriorSpec, grid: Arc<AbilityGrid>) -> Result<Self> {
        prior.validate()?;
        if grid.bounds() != prior.bounds {
            return Err(CatError::InvalidPrior(
                "prior bounds differ from the grid bounds".into(),
            ));
        }
        let log_density = prior.log_density(&grid)?;
        let mut post = Self {
            density: vec![0.0; grid.len()],
            grid,
            log_density,
            log_concave: prior.is_log_concave(),
            support: 0..0,
        };
        post.normalize();
        Ok(post)
    }

    /// Log-density shifted by its maximum, then by the log of the quadrature
    /// integral.
    fn normalize(&mut self) {
        let max = self
            .log_density
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for (d, ld) in self.density.iter_mut().zip(&self.log_density) {
            *d = (ld - max).exp();
        }
        let total: f64 = self
            .grid
            .weights
            .iter()
            .zip(&self.density)
            .map(|(w, d)| w * d)
            .sum();
        let shift = max + total.ln();
        for (d, ld) in self.density.iter_mut().zip(self.log_density.iter_mut()) {
            *d /= total;
            *ld -= shift;
        }
        let floor = max - SUPPORT_LOG_RATIO;
        let lo = self.log_density.iter().position(|&ld| ld + shift >= floor);
        let hi = self.log_density.iter().rposition(|&ld| ld + shift >= floor);
        self.support = match (lo, hi) {
            (Some(lo), Some(hi)) => lo..hi + 1,
            _ => 0..self.density.len(),
        };
    }

    /// Bayes update with one scored response, in place.
    pub fn observe(&mut self, b: f64, x: Response) -> Result<()> {
        if !b.is_finite() {
            return Err(CatError::domain(format!(
                "difficulty must be finite, got {b}"
            )));
        }
        match x {
            Response::Correct => {
                for (ld, t) in self.log_density.iter_mut().zip(&self.grid.nodes) {
                    *ld += log_logistic(t - b);
                }
            }
            Response::Incorrect => {
                for (ld, t) in self.log_density.iter_mut().zip(&self.grid.nodes) {
                    *ld += log_logistic(b - t);
                }
            }
        }
        self.normalize();
        Ok(())
    }

    /// Bayes update with one scored response, returning the new posterior.
    pub fn update(&self, b: f64, x: Response) -> Result<Self> {
        let mut next = self.clone();
        next.observe(b, x)?;
        Ok(next)
    }

    /// Folds [`Posterior::observe`] over a history.
    pub fn observe_all(&mut self, history: &[ResponseRecord]) -> Result<()> {
        for rec in history {
            self.observe(rec.difficulty, rec.response)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<AbilityGrid> {
        &self.grid
    }

    pub fn bounds(&self) -> ThetaBounds {
        self.grid.bounds
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Whether the prior this posterior descends from is log-concave.
    pub fn is_log_concave(&self) -> bool {
        self.log_concave
    }

    /// Smallest run of nodes holding every node whose density is at least
    /// `exp(-SUPPORT_LOG_RATIO)` times the peak. Selection criteria are
    /// evaluated on this run only.
    pub(crate) fn support(&self) -> Range<usize> {
        self.support.clone()
    }

    pub(crate) fn view(&self) -> DensityView<'_> {
        DensityView::new(&self.grid, &self.density, 1.0)
    }

    /// Quadrature integral of the density; 1 up to rounding.
    pub fn integral(&self) -> f64 {
        self.grid
            .weights
            .iter()
            .zip(&self.density)
            .map(|(w, d)| w * d)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.view().mean()
    }

    pub fn variance(&self) -> f64 {
        self.view().variance()
    }

    pub fn median(&self) -> f64 {
        self.view().median()
    }

    /// Maximizer of the density, refined by a parabola through the three
    /// log-density values around the best node. A run of tied nodes returns
    /// its midpoint; a maximum on an end node returns that bound.
    pub fn mode(&self) -> Result<f64> {
        if !self.log_concave {
            return Err(CatError::UnsupportedEstimator(
                "posterior mode requires a log-concave prior".into(),
            ));
        }
        let ld = &self.log_density;
        let nodes = &self.grid.nodes;
        let n = ld.len();
        let (best, max) =
            ld.iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
                );

        let tied = |i: usize| max - ld[i] <= PLATEAU_TOLERANCE;
        let mut first = best;
        while first > 0 && tied(first - 1) {
            first -= 1;
        }
        let mut last = best;
        while last + 1 < n && tied(last + 1) {
            last += 1;
        }
        if first != last {
            return Ok(0.5 * (nodes[first] + nodes[last]));
        }
        if best == 0 || best == n - 1 {
            return Ok(nodes[best]);
        }
        let (left, mid, right) = (ld[best - 1], ld[best], ld[best + 1]);
        let curvature = left - 2.0 * mid + right;
        if curvature >= 0.0 {
            return Ok(nodes[best]);
        }
        let h = self.grid.spacing;
        let offset = (0.5 * h * (left - right) / curvature).clamp(-0.5 * h, 0.5 * h);
        Ok(self.grid.bounds.clamp(nodes[best] + offset))
    }

    /// Posterior mass of `[center - radius, center + radius]`, integrating the
    /// piecewise-linear interpolant of the density.
    pub fn prob_in_interval(&self, center: f64, radius: f64) -> Result<f64> {
        if !(radius > 0.0) || !center.is_finite() {
            return Err(CatError::domain(format!(
                "interval needs a finite center and positive radius, got ({center}, {radius})"
            )));
        }
        let bounds = self.grid.bounds;
        let a = (center - radius).max(bounds.lower);
        let b = (center + radius).min(bounds.upper);
        if a >= b {
            return Ok(0.0);
        }
        let nodes = &self.grid.nodes;
        let d = &self.density;
        let mut total = 0.0;
        for k in 0..nodes.len() - 1 {
            let (x0, x1) = (nodes[k], nodes[k + 1]);
            if x1 <= a {
                continue;
            }
            if x0 >= b {
                break;
            }
            let s = a.max(x0);
            let t = b.min(x1);
            if t <= s {
                continue;
            }
            let interp = |x: f64| d[k] + (d[k + 1] - d[k]) * (x - x0) / (x1 - x0);
            total += 0.5 * (t - s) * (interp(s) + interp(t));
        }
        Ok((total / self.grid.linear_total(d)).clamp(0.0, 1.0))
    }

    /// Posterior expected loss of reporting `estimate`.
    pub fn expected_loss(&self, estimate: f64, loss: LossSpec) -> f64 {
        self.view().expected_loss(estimate, loss)
    }

    /// Largest discrete second difference of the log-density. Non-positive
    /// (up to rounding) exactly when the log-density sequence is concave.
    pub fn max_second_difference(&self) -> f64 {
        self.log_density
            .windows(3)
            .map(|w| w[0] - 2.0 * w[1] + w[2])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn snapshot(&self) -> PosteriorSnapshot {
        PosteriorSnapshot {
            nodes: self.grid.nodes.clone(),
            density: self.density.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> Posterior {
        Posterior::from_prior(&PriorSpec::uniform(ThetaBounds::default()), 1001).unwrap()
    }

    fn normal() -> Posterior {
        Posterior::from_prior(&PriorSpec::standard_normal(), 1001).unwrap()
    }

    #[test]
    fn grid_shape() {
        let g = AbilityGrid::new(ThetaBounds::default(), 1001).unwrap();
        assert_eq!(g.nodes()[0], -6.0);
        assert_eq!(g.nodes()[1000], 6.0);
        assert_eq!(g.nodes()[500], 0.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        for i in 0..1001 {
            assert_eq!(g.nodes()[i], -g.nodes()[1000 - i]);
        }
        assert!(AbilityGrid::new(ThetaBounds::default(), 1000).is_err());
        assert!(AbilityGrid::new(ThetaBounds::default(), 1).is_err());
    }

    #[test]
    fn logistic_columns_match_direct_evaluation() {
        let g = AbilityGrid::new(ThetaBounds::default(), 101).unwrap();
        let mut c = vec![0.0; 101];
        let mut w = vec![0.0; 101];
        for b in [-16.0, -3.3, 0.0, 2.5, 900.0] {
            g.logistic_columns(b, 0..101, &mut c, &mut w);
            for (i, t) in g.nodes().iter().enumerate() {
                let p = crate::irt::logistic(t - b);
                let q = crate::irt::logistic(b - t);
                assert!((c[i] - p).abs() <= 1e-13 * p);
                assert!((w[i] - q).abs() <= 1e-13 * q);
            }
        }
    }

    #[test]
    fn uniform_prior_is_flat() {
        let p = uniform();
        for d in p.density() {
            assert!((d - 1.0 / 12.0).abs() < 1e-15);
        }
        assert!((p.variance() - 12.0).abs() < 1e-6);
        assert!(p.median().abs() < 1e-12);
        assert!((p.prob_in_interval(0.0, 3.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((p.prob_in_interval(0.0, 100.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(p.mode().unwrap(), 0.0);
    }

    #[test]
    fn truncated_normal_moments() {
        let p = normal();
        assert!(p.mean().abs() < 1e-9);
        // 1 - 12 phi(6) / (2 Phi(6) - 1), from a 40-digit evaluation.
        assert!((p.variance() - 0.999_999_927_089_405_7).abs() < 1e-6);
        assert!((p.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_priors() {
        let bad_sd = PriorSpec::truncated_normal(0.0, 0.0, ThetaBounds::default());
        assert!(matches!(
            Posterior::from_prior(&bad_sd, 101),
            Err(CatError::InvalidPrior(_))
        ));
        let mut values = vec![1.0; 101];
        values[7] = 0.0;
        let zero = PriorSpec {
            kind: PriorKind::Table { values },
            bounds: ThetaBounds::default(),
        };
        assert!(matches!(
            Posterior::from_prior(&zero, 101),
            Err(CatError::InvalidPrior(_))
        ));
        let short = PriorSpec {
            kind: PriorKind::Table {
                values: vec![1.0; 5],
            },
            bounds: ThetaBounds::default(),
        };
        assert!(Posterior::from_prior(&short, 101).is_err());
    }

    #[test]
    fn correct_answer_moves_mass_up() {
        let p = uniform().update(0.0, Response::Correct).unwrap();
        assert!(p.mean() > 0.0);
        // int theta G / int G over [-6, 6], 40-digit quadrature.
        assert!((p.mean() - 2.731_621_431_738_570_6).abs() < 1e-4);
        assert!((p.median() - 2.951_536_050_615_981).abs() < 1e-4);
    }

    #[test]
    fn updates_commute() {
        let a = normal()
            .update(0.7, Response::Correct)
            .unwrap()
            .update(0.7, Response::Incorrect)
            .unwrap();
        let b = normal()
            .update(0.7, Response::Incorrect)
            .unwrap()
            .update(0.7, Response::Correct)
            .unwrap();
        for (x, y) in a.density().iter().zip(b.density()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_examples() {
        let p = uniform()
            .update(0.0, Response::Correct)
            .unwrap()
            .update(0.0, Response::Incorrect)
            .unwrap();
        assert!(p.mode().unwrap().abs() < 1e-12);
        let mut all = uniform();
        for b in [-1.0, 0.0, 1.0] {
            all.observe(b, Response::Correct).unwrap();
        }
        assert_eq!(all.mode().unwrap(), 6.0);
        let sym = normal()
            .update(-1.0, Response::Correct)
            .unwrap()
            .update(1.0, Response::Incorrect)
            .unwrap();
        assert!(sym.mode().unwrap().abs() < 1e-4);
    }

    #[test]
    fn mode_rejected_for_non_log_concave_prior() {
        let values: Vec<f64> = (0..101)
            .map(|i| if (i / 10) % 2 == 0 { 1.0 } else { 3.0 })
            .collect();
        let prior = PriorSpec {
            kind: PriorKind::Table { values },
            bounds: ThetaBounds::default(),
        };
        assert!(!prior.is_log_concave());
        let p = Posterior::from_prior(&prior, 101).unwrap();
        assert!(matches!(p.mode(), Err(CatError::UnsupportedEstimator(_))));
    }

    #[test]
    fn expected_loss_identities() {
        let p = normal().update(0.4, Response::Correct).unwrap();
        let m = p.mean();
        let v = p.variance();
        assert!((p.expected_loss(m, LossSpec::Squared) - v).abs() < 1e-10);
        assert!((p.expected_loss(m + 0.3, LossSpec::Squared) - (v + 0.09)).abs() < 1e-10);
        let med = p.median();
        let at = p.expected_loss(med, LossSpec::Absolute);
        assert!(at < p.expected_loss(med + 0.5, LossSpec::Absolute));
        assert!(at < p.expected_loss(med - 0.5, LossSpec::Absolute));
    }

    #[test]
    fn interval_mass_edge_cases() {
        let p = normal();
        assert!(p.prob_in_interval(0.0, 0.0).is_err());
        let far = p.prob_in_interval(100.0, 1.0).unwrap();
        assert_eq!(far, 0.0);
        let mut peaked = normal();
        for _ in 0..200 {
            peaked.observe(5.9, Response::Correct).unwrap();
            peaked.observe(5.9, Response::Correct).unwrap();
        }
        // Essentially no mass near the lower bound.
        let tiny = peaked.prob_in_interval(-6.0, 0.001).unwrap();
        assert!(tiny < 1e-100);
    }

    #[test]
    fn snapshot_round_trips_json() {
        let snap = normal().snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        let back: PosteriorSnapshot = serde_json::from_str(&text).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn prior_spec_json_shape() {
        let spec: PriorSpec =
            serde_json::from_str(r#"{"kind":"truncated-normal","mean":0.5,"sd":2.0}"#).unwrap();
        assert_eq!(spec.bounds, ThetaBounds::default());
        assert_eq!(spec.kind, PriorKind::TruncatedNormal { mean: 0.5, sd: 2.0 });
        let u: PriorSpec =
            serde_json::from_str(r#"{"kind":"uniform","bounds":{"lower":-3,"upper":3}}"#).unwrap();
        assert_eq!(u.kind, PriorKind::Uniform);
    }
}
