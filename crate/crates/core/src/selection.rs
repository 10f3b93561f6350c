//! Item banks and next-item selection rules.
//!
//! Every rule scores the available items and returns the best one. Scores that
//! agree to a relative [`TIE_RTOL`] count as ties and are broken by the
//! smaller difficulty, then the lexicographically smaller id; candidates are
//! always visited in that canonical order, so the result does not depend on
//! the order of the bank.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::irt::{self, ResponseRecord, ThetaBounds};
use crate::posterior::{AbilityGrid, DensityView, LossSpec, Posterior};

/// Relative tolerance under which two criterion values are treated as equal.
pub const TIE_RTOL: f64 = 1e-9;

fn default_available() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub difficulty: f64,
    #[serde(default = "default_available")]
    pub available: bool,
}

impl Item {
    pub fn new(id: impl Into<String>, difficulty: f64) -> Self {
        Self {
            id: id.into(),
            difficulty,
            available: true,
        }
    }
}

/// One problem found while validating a bank.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BankIssue {
    Empty,
    DuplicateId { id: String },
    NonFiniteDifficulty { id: String },
    OutOfBounds { id: String, difficulty: f64 },
}

impl fmt::Display for BankIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankIssue::Empty => write!(f, "bank has no items"),
            BankIssue::DuplicateId { id } => write!(f, "duplicate item id {id:?}"),
            BankIssue::NonFiniteDifficulty { id } => {
                write!(f, "item {id:?} has a non-finite difficulty")
            }
            BankIssue::OutOfBounds { id, difficulty } => {
                write!(
                    f,
                    "item {id:?} difficulty {difficulty} is outside the allowed range"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBank {
    pub items: Vec<Item>,
    /// Administered items become unavailable.
    #[serde(default)]
    pub consume_on_use: bool,
    /// Admissible difficulty range.
    #[serde(default)]
    pub difficulty_bounds: ThetaBounds,
}

#[derive(Deserialize)]
struct BankRow {
    id: String,
    difficulty: f64,
}

impl ItemBank {
    pub fn new(items: Vec<Item>, consume_on_use: bool, difficulty_bounds: ThetaBounds) -> Self {
        Self {
            items,
            consume_on_use,
            difficulty_bounds,
        }
    }

    /// Reusable bank with difficulties `lower, lower + step, ..., upper`.
    pub fn dense(lower: f64, upper: f64, step: f64) -> Result<Self> {
        let bounds = ThetaBounds::new(lower, upper)?;
        if !(step > 0.0) {
            return Err(CatError::InvalidBank(format!(
                "step must be positive, got {step}"
            )));
        }
        let intervals = ((upper - lower) / step).round() as usize;
        if intervals == 0 {
            return Err(CatError::InvalidBank("step wider than the range".into()));
        }
        let last = intervals as f64;
        let items = (0..=intervals)
            .map(|i| {
                let b = if i == intervals {
                    upper
                } else {
                    (lower * (last - i as f64) + upper * i as f64) / last
                };
                Item::new(format!("b{:+.3}", b), b)
            })
            .collect();
        Ok(Self::new(items, false, bounds))
    }

    /// Reads a bank file: a JSON array of `{id, difficulty}` objects, or CSV
    /// with an `id,difficulty` header when the extension is `.csv`.
    pub fn load(path: &Path, difficulty_bounds: ThetaBounds, consume_on_use: bool) -> Result<Self> {
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let rows: Vec<BankRow> = if is_csv {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)?;
            let headers = reader.headers()?.clone();
            if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "difficulty" {
                return Err(CatError::InvalidBank(format!(
                    "CSV header must be `id,difficulty`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
            reader
                .deserialize()
                .collect::<std::result::Result<_, _>>()?
        } else {
            serde_json::from_slice(&std::fs::read(path)?)?
        };
        Ok(Self::new(
            rows.into_iter()
                .map(|r| Item::new(r.id, r.difficulty))
                .collect(),
            consume_on_use,
            difficulty_bounds,
        ))
    }

    /// Every problem with the bank, in item order.
    pub fn issues(&self) -> Vec<BankIssue> {
        let mut issues = Vec::new();
        if self.items.is_empty() {
            issues.push(BankIssue::Empty);
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                issues.push(BankIssue::DuplicateId {
                    id: item.id.clone(),
                });
            }
            if !item.difficulty.is_finite() {
                issues.push(BankIssue::NonFiniteDifficulty {
                    id: item.id.clone(),
                });
            } else if !self.difficulty_bounds.contains(item.difficulty) {
                issues.push(BankIssue::OutOfBounds {
                    id: item.id.clone(),
                    difficulty: item.difficulty,
                });
            }
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        self.difficulty_bounds.validate()?;
        match self.issues().first() {
            None => Ok(()),
            Some(issue) => Err(CatError::InvalidBank(issue.to_string())),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn available(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(|i| i.available)
    }

    pub fn has_available(&self) -> bool {
        self.items.iter().any(|i| i.available)
    }

    /// Records an administration; only has an effect on consuming banks.
    pub fn mark_used(&mut self, id: &str) {
        if self.consume_on_use {
            if let Some(item) = self.items.iter_mut().find(|i| i.id == id) {
                item.available = false;
            }
        }
    }

    /// Available items sorted by difficulty, then id.
    fn candidates(&self) -> Result<Vec<&Item>> {
        let mut cands: Vec<&Item> = self.available().collect();
        if cands.is_empty() {
            return Err(CatError::Exhausted);
        }
        cands.sort_by(|a, b| {
            a.difficulty
                .total_cmp(&b.difficulty)
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(cands)
    }
}

/// Next-item criterion. Uses the names `max-info`, `pw-info`, `min-epv`,
/// `bayes-risk-sq` and `bayes-risk-abs` in every external format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionRule {
    MaxInfo,
    PosteriorWeightedInfo,
    MinExpectedPosteriorVariance,
    BayesRisk(LossSpec),
}

impl SelectionRule {
    pub const ALL: [SelectionRule; 5] = [
        SelectionRule::MaxInfo,
        SelectionRule::PosteriorWeightedInfo,
        SelectionRule::MinExpectedPosteriorVariance,
        SelectionRule::BayesRisk(LossSpec::Squared),
        SelectionRule::BayesRisk(LossSpec::Absolute),
    ];

    pub const NAMES: [&'static str; 5] = [
        "max-info",
        "pw-info",
        "min-epv",
        "bayes-risk-sq",
        "bayes-risk-abs",
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionRule::MaxInfo => "max-info",
            SelectionRule::PosteriorWeightedInfo => "pw-info",
            SelectionRule::MinExpectedPosteriorVariance => "min-epv",
            SelectionRule::BayesRisk(LossSpec::Squared) => "bayes-risk-sq",
            SelectionRule::BayesRisk(LossSpec::Absolute) => "bayes-risk-abs",
        }
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionRule {
    type Err = CatError;

    fn from_str(s: &str) -> Result<Self> {
        SelectionRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                CatError::Config(format!(
                    "unknown selection rule {s:?}; expected one of {}",
                    SelectionRule::NAMES.join(", ")
                ))
            })
    }
}

impl TryFrom<String> for SelectionRule {
    type Error = CatError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SelectionRule> for String {
    fn from(r: SelectionRule) -> String {
        r.name().to_string()
    }
}

/// The selected item together with its criterion value (information,
/// posterior-weighted information, expected posterior variance or
/// preposterior risk, depending on the rule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub item: Item,
    pub criterion: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Goal {
    Maximize,
    Minimize,
}

/// First canonical candidate whose value is within tolerance of the optimum.
fn pick(cands: &[&Item], values: &[f64], goal: Goal) -> Result<Choice> {
    let best = match goal {
        Goal::Maximize => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Goal::Minimize => values.iter().copied().fold(f64::INFINITY, f64::min),
    };
    if !best.is_finite() {
        return Err(CatError::domain("selection criterion is not finite"));
    }
    let tol = TIE_RTOL * best.abs().max(f64::MIN_POSITIVE);
    let idx = values
        .iter()
        .position(|v| (v - best).abs() <= tol)
        .expect("optimum is attained");
    Ok(Choice {
        item: cands[idx].clone(),
        criterion: values[idx],
    })
}

/// The posterior on its support run, with the quadrature masses `w_i d_i`
/// and the posterior mean precomputed once per selection.
struct Support<'a> {
    grid: &'a AbilityGrid,
    range: Range<usize>,
    density: &'a [f64],
    mass: Vec<f64>,
    center: f64,
}

impl<'a> Support<'a> {
    fn new(post: &'a Posterior) -> Self {
        let grid: &AbilityGrid = post.grid();
        let range = post.support();
        let density = &post.density()[range.clone()];
        let mass: Vec<f64> = grid.weights()[range.clone()]
            .iter()
            .zip(density)
            .map(|(w, d)| w * d)
            .collect();
        let total: f64 = mass.iter().sum();
        let moment: f64 = mass
            .iter()
            .zip(&grid.nodes()[range.clone()])
            .map(|(m, t)| m * t)
            .sum();
        Self {
            grid,
            range,
            density,
            mass,
            center: moment / total,
        }
    }

    fn nodes(&self) -> &'a [f64] {
        &self.grid.nodes()[self.range.clone()]
    }
}

/// Reusable per-selection buffers, one entry per support node.
struct Scratch {
    correct: Vec<f64>,
    incorrect: Vec<f64>,
    reweighted: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            correct: vec![0.0; n],
            incorrect: vec![0.0; n],
            reweighted: vec![0.0; n],
        }
    }

    fn fill(&mut self, sup: &Support<'_>, b: f64) {
        sup.grid
            .logistic_columns(b, sup.range.clone(), &mut self.correct, &mut self.incorrect);
    }
}

fn one_item<T>(post: &Posterior, b: f64, f: impl FnOnce(&Support<'_>, &mut Scratch) -> T) -> T {
    let sup = Support::new(post);
    let mut s = Scratch::new(sup.range.len());
    s.fill(&sup, b);
    f(&sup, &mut s)
}

/// Posterior predictive probability of a correct answer to an item of
/// difficulty `b`.
pub fn predictive_prob_correct(post: &Posterior, b: f64) -> f64 {
    one_item(post, b, |sup, s| {
        sup.mass.iter().zip(&s.correct).map(|(m, c)| m * c).sum()
    })
}

/// Fisher information of a single item averaged over the posterior.
pub fn posterior_weighted_information(post: &Posterior, b: f64) -> f64 {
    one_item(post, b, pw_info_from_columns)
}

fn pw_info_from_columns(sup: &Support<'_>, s: &mut Scratch) -> f64 {
    sup.mass
        .iter()
        .zip(s.correct.iter().zip(&s.incorrect))
        .map(|(m, (c, i))| m * c * i)
        .sum()
}

/// `q Var(theta | x = 1) + (1 - q) Var(theta | x = 0)` for an item of
/// difficulty `b`, from the posterior moments of each branch.
pub fn expected_posterior_variance(post: &Posterior, b: f64) -> f64 {
    one_item(post, b, epv_from_columns)
}

fn epv_from_columns(sup: &Support<'_>, s: &mut Scratch) -> f64 {
    let (mut c0, mut c1, mut c2) = (0.0, 0.0, 0.0);
    let (mut i0, mut i1, mut i2) = (0.0, 0.0, 0.0);
    for ((m, t), (c, i)) in sup
        .mass
        .iter()
        .zip(sup.nodes())
        .zip(s.correct.iter().zip(&s.incorrect))
    {
        let dt = t - sup.center;
        let mc = m * c;
        let mi = m * i;
        c0 += mc;
        c1 += mc * dt;
        c2 += mc * dt * dt;
        i0 += mi;
        i1 += mi * dt;
        i2 += mi * dt * dt;
    }
    // q Var_1 = c2 - c1^2 / c0, and likewise for the incorrect branch.
    let branch = |m0: f64, m1: f64, m2: f64| if m0 > 0.0 { m2 - m1 * m1 / m0 } else { 0.0 };
    branch(c0, c1, c2) + branch(i0, i1, i2)
}

/// One-step preposterior risk of administering an item of difficulty `b`:
/// the predictive average, over both answers, of the smallest posterior
/// expected loss attainable after the update.
pub fn preposterior_risk(post: &Posterior, b: f64, loss: LossSpec) -> f64 {
    one_item(post, b, |sup, s| risk_from_columns(sup, s, loss))
}

fn risk_from_columns(sup: &Support<'_>, s: &mut Scratch, loss: LossSpec) -> f64 {
    let mut risk = 0.0;
    for likelihood in [&s.correct, &s.incorrect] {
        let mut prob = 0.0;
        for (((u, d), m), l) in s
            .reweighted
            .iter_mut()
            .zip(sup.density)
            .zip(&sup.mass)
            .zip(likelihood)
        {
            *u = d * l;
            // Predictive probability of this answer = mass of the reweighted density.
            prob += m * l;
        }
        if prob > 0.0 {
            let updated = DensityView::window(sup.grid, sup.range.clone(), &s.reweighted, prob);
            risk += prob * updated.min_expected_loss(loss);
        }
    }
    risk
}

/// Maximum Fisher information at the point estimate `theta_hat`.
pub fn select_max_info(theta_hat: f64, bank: &ItemBank) -> Result<Choice> {
    if !theta_hat.is_finite() {
        return Err(CatError::domain("ability estimate must be finite"));
    }
    let cands = bank.candidates()?;
    let values: Vec<f64> = cands
        .iter()
        .map(|item| irt::item_information(theta_hat, item.difficulty))
        .collect();
    pick(&cands, &values, Goal::Maximize)
}

fn select_with<F>(post: &Posterior, bank: &ItemBank, goal: Goal, mut score: F) -> Result<Choice>
where
    F: FnMut(&Support<'_>, &mut Scratch) -> f64,
{
    let cands = bank.candidates()?;
    let sup = Support::new(post);
    let mut s = Scratch::new(sup.range.len());
    let values: Vec<f64> = cands
        .iter()
        .map(|item| {
            s.fill(&sup, item.difficulty);
            score(&sup, &mut s)
        })
        .collect();
    pick(&cands, &values, goal)
}

pub fn select_posterior_weighted_info(post: &Posterior, bank: &ItemBank) -> Result<Choice> {
    select_with(post, bank, Goal::Maximize, pw_info_from_columns)
}

pub fn select_min_expected_posterior_variance(post: &Posterior, bank: &ItemBank) -> Result<Choice> {
    select_with(post, bank, Goal::Minimize, epv_from_columns)
}

pub fn select_bayes_risk(post: &Posterior, bank: &ItemBank, loss: LossSpec) -> Result<Choice> {
    select_with(post, bank, Goal::Minimize, |p, s| {
        risk_from_columns(p, s, loss)
    })
}

/// Point estimate plugged into the maximum-information rule: the MLE once
/// the history holds both a correct and an incorrect answer, the posterior
/// mean before that.
pub fn plug_in_estimate(post: &Posterior, history: &[ResponseRecord]) -> Result<f64> {
    if irt::has_mixed_responses(history) {
        irt::mle(history, post.bounds())
    } else {
        Ok(post.mean())
    }
}

/// Applies `rule` to the current posterior. `history` only matters for
/// `max-info`, through [`plug_in_estimate`].
pub fn select(
    rule: SelectionRule,
    post: &Posterior,
    history: &[ResponseRecord],
    bank: &ItemBank,
) -> Result<Choice> {
    match rule {
        SelectionRule::MaxInfo => select_max_info(plug_in_estimate(post, history)?, bank),
        SelectionRule::PosteriorWeightedInfo => select_posterior_weighted_info(post, bank),
        SelectionRule::MinExpectedPosteriorVariance => {
            select_min_expected_posterior_variance(post, bank)
        }
        SelectionRule::BayesRisk(loss) => select_bayes_risk(post, bank, loss),
    }
}

/// First item of a test, chosen from the prior alone.
pub fn first_item(prior: &Posterior, rule: SelectionRule, bank: &ItemBank) -> Result<Choice> {
    select(rule, prior, &[], bank)
}

/// What each rule would administer next, without touching the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfEntry {
    pub rule: SelectionRule,
    pub item_id: String,
    pub difficulty: f64,
    pub criterion: f64,
}

pub fn what_if(
    rules: &[SelectionRule],
    post: &Posterior,
    history: &[ResponseRecord],
    bank: &ItemBank,
) -> Result<Vec<WhatIfEntry>> {
    rules
        .iter()
        .map(|&rule| {
            let choice = select(rule, post, history, bank)?;
            Ok(WhatIfEntry {
                rule,
                item_id: choice.item.id,
                difficulty: choice.item.difficulty,
                criterion: choice.criterion,
            })
        })
        .collect()
}
