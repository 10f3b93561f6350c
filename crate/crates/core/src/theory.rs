//! Numerical checks of the Kullback-Leibler and Hellinger rate conditions,
//! plus empirical concentration and consistency experiments.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::irt::{log_logistic, logistic, ResponseRecord};
use crate::posterior::{AbilityGrid, Posterior, PriorSpec, DEFAULT_GRID_SIZE};
use crate::selection::SelectionRule;
use crate::session::{EstimatorKind, SessionConfig, SessionState};
use crate::simulate::{BankSpec, SimulatedRespondent};
use crate::stats;

/// Expected log-likelihood ratio of one Rasch response under `theta1`
/// against `theta2`.
pub fn v1(theta1: f64, theta2: f64, b: f64) -> f64 {
    let (t1, t2) = (theta1 - b, theta2 - b);
    let d1 = log_logistic(t1) - log_logistic(t2);
    let d0 = log_logistic(-t1) - log_logistic(-t2);
    logistic(t1) * d1 + logistic(-t1) * d0
}

/// Second moment of the log-likelihood ratio under `theta1`.
pub fn v2(theta1: f64, theta2: f64, b: f64) -> f64 {
    let (t1, t2) = (theta1 - b, theta2 - b);
    let d1 = log_logistic(t1) - log_logistic(t2);
    let d0 = log_logistic(-t1) - log_logistic(-t2);
    logistic(t1) * d1 * d1 + logistic(-t1) * d0 * d0
}

/// Squared Hellinger distance between the two response distributions.
///
/// Evaluated through `G(t1) - G(t2) = sinh(d/2) / (2 cosh(t1/2) cosh(t2/2))`
/// so that nearby abilities do not lose every significant digit.
pub fn hellinger_sq(theta1: f64, theta2: f64, b: f64) -> f64 {
    let (t1, t2) = (theta1 - b, theta2 - b);
    let (g1, g2) = (logistic(t1), logistic(t2));
    let (q1, q2) = (logistic(-t1), logistic(-t2));
    hellinger_from_parts(t1, t2, g1.sqrt(), g2.sqrt(), q1.sqrt(), q2.sqrt())
}

#[inline]
fn hellinger_from_parts(t1: f64, t2: f64, sg1: f64, sg2: f64, sq1: f64, sq2: f64) -> f64 {
    let (c1, c2) = ((0.5 * t1).cosh(), (0.5 * t2).cosh());
    let diff = if c1.is_finite() && c2.is_finite() {
        (0.5 * (t1 - t2)).sinh() / (2.0 * c1 * c2)
    } else {
        logistic(t1) - logistic(t2)
    };
    let a = sg1 + sg2;
    let z = sq1 + sq2;
    diff * diff * (1.0 / (a * a) + 1.0 / (z * z))
}

/// Closed interval sampled at a fixed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    /// `lower, lower + step, ...` up to `upper`. Endpoints are hit exactly
    /// when the width is a multiple of the step.
    fn points(&self, step: f64) -> Vec<f64> {
        let span = self.upper - self.lower;
        let steps = (span / step + 1e-9).floor() as usize;
        if steps == 0 {
            return vec![self.lower];
        }
        let exact = ((steps as f64) * step - span).abs() <= 1e-9 * step.max(span);
        (0..=steps)
            .map(|i| {
                if exact {
                    (self.lower * (steps - i) as f64 + self.upper * i as f64) / steps as f64
                } else {
                    self.lower + i as f64 * step
                }
            })
            .collect()
    }
}

fn default_box() -> Interval {
    Interval::new(-6.0, 6.0)
}

fn default_step() -> f64 {
    0.05
}

fn default_slack() -> f64 {
    1e-12
}

fn default_upper_constants() -> [f64; 3] {
    [0.25, 4.0, 1.0]
}

fn default_scale() -> f64 {
    1.0
}

fn default_diagonal_delta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheckConfig {
    #[serde(default = "default_box")]
    pub theta_box: Interval,
    #[serde(default = "default_box")]
    pub b_box: Interval,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Constants in `V1 <= k0 D^2`, `V2 <= k1 D^2`, `h^2 <= k2 D^2`.
    #[serde(default = "default_upper_constants")]
    pub upper_constants: [f64; 3],
    /// Multiplier on the lower-bound constant `c`; values above 1 make a
    /// negative control.
    #[serde(default = "default_scale")]
    pub lower_scale: f64,
    /// Separation used to approximate the near-diagonal limit.
    #[serde(default = "default_diagonal_delta")]
    pub diagonal_delta: f64,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl BoundCheckConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [("theta_box", self.theta_box), ("b_box", self.b_box)] {
            if !(iv.lower.is_finite() && iv.upper.is_finite() && iv.lower <= iv.upper) {
                return Err(CatError::Config(format!(
                    "{name} must be a finite interval"
                )));
            }
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(CatError::Config("step must be positive".into()));
        }
        if !(self.slack >= 0.0) || !(self.diagonal_delta > 0.0) {
            return Err(CatError::Config(
                "slack and diagonal_delta must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub quantity: String,
    pub theta1: f64,
    pub theta2: f64,
    pub b: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityReport {
    pub quantity: String,
    pub constant: f64,
    /// Largest `value / D^2` over off-diagonal grid points (0 when the grid
    /// has none).
    pub worst_ratio: f64,
    pub violations: usize,
    /// Up to [`MAX_EXAMPLES`] offending points, in grid order.
    pub examples: Vec<Violation>,
    /// Smallest value seen anywhere on the grid; must not be negative.
    pub min_value: f64,
}

pub const MAX_EXAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub points: usize,
    pub quantities: Vec<QuantityReport>,
}

impl UpperBoundReport {
    pub fn passed(&self) -> bool {
        self.quantities
            .iter()
            .all(|q| q.violations == 0 && q.min_value >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub points: usize,
    pub m0: f64,
    pub m1: f64,
    /// `lower_scale * m0 m1 (m0 + m1) / 4`.
    pub c: f64,
    /// Smallest `h^2 / D^2` over off-diagonal grid points.
    pub min_ratio: f64,
    pub violations: usize,
    pub examples: Vec<Violation>,
    /// Largest `D^2 / h^2` at separation `diagonal_delta`.
    pub diagonal_ratio: f64,
    /// `4 / [m0 m1 (m0 + m1)]`.
    pub diagonal_limit: f64,
    pub diagonal_ok: bool,
}

impl LowerBoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.diagonal_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub upper: UpperBoundReport,
    pub lower: LowerBoundReport,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.upper.passed() && self.lower.passed()
    }
}

/// Per-(theta, b) values reused across the whole grid.
struct Table {
    thetas: Vec<f64>,
    bs: Vec<f64>,
    // Indexed [theta * bs.len() + b].
    t: Vec<f64>,
    g: Vec<f64>,
    q: Vec<f64>,
    lg: Vec<f64>,
    lq: Vec<f64>,
    sg: Vec<f64>,
    sq: Vec<f64>,
}

impl Table {
    fn new(cfg: &BoundCheckConfig) -> Self {
        let thetas = cfg.theta_box.points(cfg.step);
        let bs = cfg.b_box.points(cfg.step);
        let n = thetas.len() * bs.len();
        let mut table = Table {
            t: Vec::with_capacity(n),
            g: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            lg: Vec::with_capacity(n),
            lq: Vec::with_capacity(n),
            sg: Vec::with_capacity(n),
            sq: Vec::with_capacity(n),
            thetas,
            bs,
        };
        for &theta in &table.thetas {
            for &b in &table.bs {
                let t = theta - b;
                let (g, q) = (logistic(t), logistic(-t));
                table.t.push(t);
                table.g.push(g);
                table.q.push(q);
                table.lg.push(log_logistic(t));
                table.lq.push(log_logistic(-t));
                table.sg.push(g.sqrt());
                table.sq.push(q.sqrt());
            }
        }
        table
    }

    fn points(&self) -> usize {
        self.thetas.len() * self.thetas.len() * self.bs.len()
    }
}

/// Scans `theta1` rows in parallel and merges the per-row results in row
/// order, so the report does not depend on the thread count.
fn scan_rows<R: Send>(table: &Table, row: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..table.thetas.len()).into_par_iter().map(row).collect()
}

struct Acc {
    worst: f64,
    min_value: f64,
    violations: usize,
    examples: Vec<Violation>,
}

impl Acc {
    fn new() -> Self {
        Acc {
            worst: 0.0,
            min_value: f64::INFINITY,
            violations: 0,
            examples: Vec::new(),
        }
    }

    fn merge(&mut self, other: Acc) {
        self.worst = self.worst.max(other.worst);
        self.min_value = self.min_value.min(other.min_value);
        self.violations += other.violations;
        for e in other.examples {
            if self.examples.len() < MAX_EXAMPLES {
                self.examples.push(e);
            }
        }
    }

    fn record(&mut self, name: &str, p: (f64, f64, f64), value: f64, bound: f64) {
        self.violations += 1;
        if self.examples.len() < MAX_EXAMPLES {
            self.examples.push(Violation {
                quantity: name.to_string(),
                theta1: p.0,
                theta2: p.1,
                b: p.2,
                value,
                bound,
            });
        }
    }
}

const QUANTITIES: [&str; 3] = ["v1", "v2", "hellinger_sq"];

pub fn verify_upper_bounds(cfg: &BoundCheckConfig) -> Result<UpperBoundReport> {
    cfg.validate()?;
    let table = Table::new(cfg);
    Ok(upper_with_table(cfg, &table))
}

fn upper_with_table(cfg: &BoundCheckConfig, table: &Table) -> UpperBoundReport {
    let nb = table.bs.len();
    let k = cfg.upper_constants;
    let rows = scan_rows(table, |i| {
        let mut acc = [Acc::new(), Acc::new(), Acc::new()];
        for (j, &theta2) in table.thetas.iter().enumerate() {
            let delta = table.thetas[i] - theta2;
            let d2 = delta * delta;
            for (l, &b) in table.bs.iter().enumerate() {
                let (a, c) = (i * nb + l, j * nb + l);
                let d1 = table.lg[a] - table.lg[c];
                let d0 = table.lq[a] - table.lq[c];
                let values = [
                    table.g[a] * d1 + table.q[a] * d0,
                    table.g[a] * d1 * d1 + table.q[a] * d0 * d0,
                    hellinger_from_parts(
                        table.t[a],
                        table.t[c],
                        table.sg[a],
                        table.sg[c],
                        table.sq[a],
                        table.sq[c],
                    ),
                ];
                for q in 0..3 {
                    let v = values[q];
                    let acc = &mut acc[q];
                    acc.min_value = acc.min_value.min(v);
                    if d2 > 0.0 {
                        acc.worst = acc.worst.max(v / d2);
                    }
                    let bound = k[q] * d2 + cfg.slack;
                    if !(v <= bound) {
                        acc.record(QUANTITIES[q], (table.thetas[i], theta2, b), v, bound);
                    }
                }
            }
        }
        acc
    });
    let mut total = [Acc::new(), Acc::new(), Acc::new()];
    for row in rows {
        for (t, r) in total.iter_mut().zip(row) {
            t.merge(r);
        }
    }
    UpperBoundReport {
        points: table.points(),
        quantities: total
            .into_iter()
            .enumerate()
            .map(|(q, acc)| QuantityReport {
                quantity: QUANTITIES[q].to_string(),
                constant: k[q],
                worst_ratio: acc.worst,
                violations: acc.violations,
                examples: acc.examples,
                min_value: if acc.min_value.is_finite() {
                    acc.min_value
                } else {
                    0.0
                },
            })
            .collect(),
    }
}

/// `(m0, m1)`: the smallest incorrect and correct probabilities over the
/// boxes.
pub fn extreme_probabilities(theta_box: Interval, b_box: Interval) -> (f64, f64) {
    let m1 = logistic(theta_box.lower - b_box.upper);
    let m0 = logistic(b_box.lower - theta_box.upper);
    (m0, m1)
}

pub fn verify_lower_bound(cfg: &BoundCheckConfig) -> Result<LowerBoundReport> {
    cfg.validate()?;
    let table = Table::new(cfg);
    Ok(lower_with_table(cfg, &table))
}

fn lower_with_table(cfg: &BoundCheckConfig, table: &Table) -> LowerBoundReport {
    let nb = table.bs.len();
    let (m0, m1) = extreme_probabilities(cfg.theta_box, cfg.b_box);
    let c = cfg.lower_scale * m0 * m1 * (m0 + m1) / 4.0;
    let rows = scan_rows(table, |i| {
        let mut acc = Acc::new();
        acc.worst = f64::INFINITY;
        for (j, &theta2) in table.thetas.iter().enumerate() {
            let delta = table.thetas[i] - theta2;
            let d2 = delta * delta;
            if d2 == 0.0 {
                continue;
            }
            for (l, &b) in table.bs.iter().enumerate() {
                let (a, k) = (i * nb + l, j * nb + l);
                let h = hellinger_from_parts(
                    table.t[a],
                    table.t[k],
                    table.sg[a],
                    table.sg[k],
                    table.sq[a],
                    table.sq[k],
                );
                acc.worst = acc.worst.min(h / d2);
                let lhs = c * d2;
                if !(lhs <= h + cfg.slack) {
                    acc.record("hellinger_sq_lower", (table.thetas[i], theta2, b), h, lhs);
                }
            }
        }
        acc
    });
    let mut total = Acc::new();
    total.worst = f64::INFINITY;
    for row in rows {
        total.worst = total.worst.min(row.worst);
        total.merge(Acc { worst: 0.0, ..row });
    }

    // Near-diagonal ratio D^2 / h^2 at a tiny separation, for every theta1
    // and b on the grid.
    let delta = cfg.diagonal_delta;
    let mut diagonal_ratio: f64 = 0.0;
    for &theta1 in &table.thetas {
        for &b in &table.bs {
            let h = hellinger_sq(theta1, theta1 + delta, b);
            diagonal_ratio = diagonal_ratio.max(delta * delta / h);
        }
    }
    let diagonal_limit = 4.0 / (m0 * m1 * (m0 + m1));
    LowerBoundReport {
        points: table.points(),
        m0,
        m1,
        c,
        min_ratio: total.worst,
        violations: total.violations,
        examples: total.examples,
        diagonal_ratio,
        diagonal_limit,
        diagonal_ok: diagonal_ratio <= 1.01 * diagonal_limit,
    }
}

/// Runs both verifiers over one shared table.
pub fn verify_bounds(cfg: &BoundCheckConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let table = Table::new(cfg);
    Ok(BoundReport {
        upper: upper_with_table(cfg, &table),
        lower: lower_with_table(cfg, &table),
    })
}

/// Fixed, non-adaptive difficulty schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DifficultySequence {
    Cycle { values: Vec<f64> },
}

impl Default for DifficultySequence {
    fn default() -> Self {
        DifficultySequence::Cycle {
            values: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        }
    }
}

impl DifficultySequence {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            DifficultySequence::Cycle { values } => values[j % values.len()],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DifficultySequence::Cycle { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(CatError::Config(
                        "difficulty cycle must be a nonempty list of finite numbers".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `n` roughly log-spaced distinct integers from 1 to `j_max` inclusive.
pub fn log_schedule(j_max: usize, n: usize) -> Vec<usize> {
    if j_max == 0 {
        return Vec::new();
    }
    let n = n.max(2);
    let mut out: Vec<usize> = (0..n)
        .map(|k| {
            let frac = k as f64 / (n - 1) as f64;
            ((j_max as f64).ln() * frac).exp().round() as usize
        })
        .map(|j| j.clamp(1, j_max))
        .collect();
    out.dedup();
    if out.last() != Some(&j_max) {
        out.push(j_max);
    }
    out
}

fn default_theta0() -> f64 {
    0.5
}

fn default_j_max() -> usize {
    400
}

fn default_radius_constant() -> f64 {
    3.0
}

fn default_reps() -> usize {
    200
}

fn default_threshold() -> f64 {
    0.9
}

fn default_schedule_points() -> usize {
    16
}

fn default_min_spearman() -> f64 {
    0.9
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    #[serde(default = "default_theta0")]
    pub theta0: f64,
    #[serde(default)]
    pub difficulties: DifficultySequence,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    /// Radius at trial `J` is `radius_constant / sqrt(J)`.
    #[serde(default = "default_radius_constant")]
    pub radius_constant: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Required mean mass at `j_max`.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_schedule_points")]
    pub schedule_points: usize,
    /// Required Spearman correlation between J and the mass curve.
    #[serde(default = "default_min_spearman")]
    pub min_spearman: f64,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub j: usize,
    pub radius: f64,
    pub mean_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub config: ConcentrationConfig,
    /// Prior mass of `[theta0 - c, theta0 + c]`, the J = 0 point (radius
    /// taken as `c / sqrt(max(J, 1))`).
    pub prior_mass: f64,
    pub curve: Vec<CurvePoint>,
    pub terminal_mass: f64,
    pub spearman: f64,
    pub terminal_ok: bool,
    pub increasing_ok: bool,
}

impl ConcentrationReport {
    pub fn passed(&self) -> bool {
        self.terminal_ok && self.increasing_ok
    }
}

pub fn radius_at(radius_constant: f64, j: usize) -> f64 {
    radius_constant / (j.max(1) as f64).sqrt()
}

pub fn concentration_experiment(cfg: &ConcentrationConfig) -> Result<ConcentrationReport> {
    if cfg.j_max == 0 || cfg.reps == 0 {
        return Err(CatError::Config("j_max and reps must be at least 1".into()));
    }
    if !(cfg.radius_constant > 0.0) || !cfg.theta0.is_finite() {
        return Err(CatError::Config("radius_constant must be positive".into()));
    }
    cfg.difficulties.validate()?;
    cfg.prior.validate()?;
    let grid = Arc::new(AbilityGrid::new(cfg.prior.bounds, cfg.grid_size)?);
    let prior = Posterior::from_prior_on(&cfg.prior, grid)?;
    let schedule = log_schedule(cfg.j_max, cfg.schedule_points);
    let prior_mass = prior.prob_in_interval(cfg.theta0, radius_at(cfg.radius_constant, 0))?;

    let per_rep: Vec<Vec<f64>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let mut respondent = SimulatedRespondent::new(cfg.theta0, cfg.seed, rep as u64);
            let mut post = prior.clone();
            let mut masses = Vec::with_capacity(schedule.len());
            let mut next = 0;
            for j in 1..=cfg.j_max {
                let b = cfg.difficulties.get(j - 1);
                post.observe(b, respondent.respond(b))?;
                if schedule.get(next) == Some(&j) {
                    masses.push(
                        post.prob_in_interval(cfg.theta0, radius_at(cfg.radius_constant, j))?,
                    );
                    next += 1;
                }
            }
            Ok(masses)
        })
        .collect::<Result<_>>()?;

    let curve: Vec<CurvePoint> = schedule
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let masses: Vec<f64> = per_rep.iter().map(|m| m[k]).collect();
            CurvePoint {
                j,
                radius: radius_at(cfg.radius_constant, j),
                mean_mass: stats::mean(&masses),
            }
        })
        .collect();
    let js: Vec<f64> = curve.iter().map(|p| p.j as f64).collect();
    let masses: Vec<f64> = curve.iter().map(|p| p.mean_mass).collect();
    let spearman = if curve.len() >= 2 {
        stats::spearman(&js, &masses)
    } else {
        f64::NAN
    };
    let terminal_mass = *masses.last().expect("schedule is nonempty");
    // A curve pinned at one value (e.g. a radius covering all of the ability
    // interval) has no rank order; it does not decrease either.
    let spread = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - masses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConcentrationReport {
        config: cfg.clone(),
        prior_mass,
        terminal_ok: terminal_mass >= cfg.threshold,
        increasing_ok: spearman > cfg.min_spearman || spread <= 1e-12,
        curve,
        terminal_mass,
        spearman,
    })
}

fn default_rules() -> Vec<SelectionRule> {
    vec![
        SelectionRule::MaxInfo,
        SelectionRule::PosteriorWeightedInfo,
        SelectionRule::MinExpectedPosteriorVariance,
        SelectionRule::BayesRisk(crate::posterior::LossSpec::Squared),
    ]
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Mean,
        EstimatorKind::Median,
        EstimatorKind::Mode,
    ]
}

fn default_thetas() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

fn default_checkpoints() -> Vec<usize> {
    vec![10, 30, 50, 100, 200]
}

fn default_early() -> usize {
    30
}

fn default_max_error() -> f64 {
    0.25
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    #[serde(default = "default_rules")]
    pub rules: Vec<SelectionRule>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    /// Trial counts at which the error is recorded; the largest is the run
    /// length.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    /// The error at the last checkpoint must be below the error here.
    #[serde(default = "default_early")]
    pub early_checkpoint: usize,
    #[serde(default = "default_max_error")]
    pub max_error: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub bank: BankSpec,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub rule: SelectionRule,
    pub estimator: EstimatorKind,
    pub theta0: f64,
    /// `(J, median |estimate - theta0|)` per checkpoint.
    pub median_error: Vec<(usize, f64)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub cells: Vec<ConsistencyCell>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| c.passed)
    }
}

pub fn consistency_experiment(cfg: &ConsistencyConfig) -> Result<ConsistencyReport> {
    let mut checkpoints = cfg.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let j_max = *checkpoints
        .last()
        .ok_or_else(|| CatError::Config("at least one checkpoint is required".into()))?;
    if checkpoints[0] == 0 || cfg.reps == 0 || cfg.rules.is_empty() || cfg.estimators.is_empty() {
        return Err(CatError::Config(
            "checkpoints, reps, rules and estimators must be nonempty and positive".into(),
        ));
    }
    if !checkpoints.contains(&cfg.early_checkpoint) {
        return Err(CatError::Config(
            "early_checkpoint must be one of the checkpoints".into(),
        ));
    }
    if cfg.estimators.contains(&EstimatorKind::Mode) && !cfg.prior.is_log_concave() {
        return Err(CatError::Config(
            "the mode estimator needs a log-concave prior".into(),
        ));
    }
    let bank = cfg.bank.build()?;
    if bank.consume_on_use && bank.items.len() < j_max {
        return Err(CatError::Config(
            "consuming bank is smaller than the run length".into(),
        ));
    }

    let tasks: Vec<(usize, usize, usize)> = (0..cfg.rules.len())
        .flat_map(|r| {
            (0..cfg.thetas.len()).flat_map(move |t| (0..cfg.reps).map(move |k| (r, t, k)))
        })
        .collect();

    // errors[task][estimator][checkpoint]
    let run_one = |&(r, t, rep): &(usize, usize, usize)| -> Result<Vec<Vec<f64>>> {
        let theta0 = cfg.thetas[t];
        let session_cfg = SessionConfig {
            prior: cfg.prior.clone(),
            rule: cfg.rules[r],
            bank: Some(crate::session::BankSource::Inline(bank.clone())),
            max_trials: j_max,
            estimator: EstimatorKind::Mean,
            grid_size: cfg.grid_size,
            seed: Some(cfg.seed),
        };
        let stream = (t * cfg.reps + rep) as u64;
        let mut respondent = SimulatedRespondent::new(theta0, cfg.seed, stream);
        let mut state = SessionState::start(session_cfg)?;
        let mut errors = vec![Vec::with_capacity(checkpoints.len()); cfg.estimators.len()];
        let mut next = 0;
        while let Some(item) = state.current_item().cloned() {
            state.submit(&item.id, respondent.respond(item.difficulty))?;
            if checkpoints.get(next) == Some(&state.trials_used()) {
                for (e, est) in cfg.estimators.iter().enumerate() {
                    let value = est.estimate(state.posterior(), state.history())?;
                    errors[e].push((value - theta0).abs());
                }
                next += 1;
            }
            if !state.is_finished() {
                state.next_item()?;
            }
        }
        Ok(errors)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| CatError::Config(format!("thread pool: {e}")))?;
    let runs: Vec<Vec<Vec<f64>>> =
        pool.install(|| tasks.par_iter().map(run_one).collect::<Result<_>>())?;

    let mut cells = Vec::new();
    for (r, rule) in cfg.rules.iter().enumerate() {
        for (e, est) in cfg.estimators.iter().enumerate() {
            for (t, &theta0) in cfg.thetas.iter().enumerate() {
                let median_error: Vec<(usize, f64)> = checkpoints
                    .iter()
                    .enumerate()
                    .map(|(c, &j)| {
                        let errs: Vec<f64> = tasks
                            .iter()
                            .zip(&runs)
                            .filter(|((rr, tt, _), _)| *rr == r && *tt == t)
                            .map(|(_, run)| run[e][c])
                            .collect();
                        (j, stats::median(&errs))
                    })
                    .collect();
                let early = median_error
                    .iter()
                    .find(|(j, _)| *j == cfg.early_checkpoint)
                    .map(|p| p.1)
                    .expect("validated above");
                let last = median_error.last().expect("nonempty").1;
                cells.push(ConsistencyCell {
                    rule: *rule,
                    estimator: *est,
                    theta0,
                    passed: last < early && last < cfg.max_error,
                    median_error,
                });
            }
        }
    }
    Ok(ConsistencyReport { cells })
}

/// Posterior after a fixed sequence of answers, for oracle comparisons.
pub fn posterior_after(
    prior: &PriorSpec,
    grid_size: usize,
    history: &[ResponseRecord],
) -> Result<Posterior> {
    let mut post = Posterior::from_prior(prior, grid_size)?;
    post.observe_all(history)?;
    Ok(post)
}

/// Draws a response sequence at fixed difficulties for a respondent of
/// ability `theta0`.
pub fn simulate_fixed(
    theta0: f64,
    difficulties: &[f64],
    seed: u64,
    stream: u64,
) -> Vec<ResponseRecord> {
    let mut respondent = SimulatedRespondent::new(theta0, seed, stream);
    difficulties
        .iter()
        .enumerate()
        .map(|(j, &b)| ResponseRecord {
            item_id: format!("fixed-{j}"),
            difficulty: b,
            response: respondent.respond(b),
        })
        .collect()
}
