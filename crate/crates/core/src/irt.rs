//! Rasch model primitives.
//!
//! Abilities and difficulties live on the same logit scale and are carried as
//! plain `f64`. The probability of a correct answer is the logistic function of
//! `theta - b`; every public entry point rejects non-finite arguments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};

/// Width below which the MLE bisection stops.
pub const MLE_TOLERANCE: f64 = 1e-10;

/// Closed ability interval. Also used for the admissible difficulty range of
/// an item bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ThetaBounds {
    fn default() -> Self {
        Self {
            lower: -6.0,
            upper: 6.0,
        }
    }
}

impl ThetaBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let bounds = Self { lower, upper };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(CatError::domain("bounds must be finite"));
        }
        if self.lower >= self.upper {
            return Err(CatError::domain(format!(
                "lower bound {} is not below upper bound {}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }
}

/// A scored answer: 1 for correct, 0 otherwise. Serialized as the integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Response {
    Incorrect,
    Correct,
}

impl Response {
    pub fn is_correct(self) -> bool {
        matches!(self, Response::Correct)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Response::Correct => 1.0,
            Response::Incorrect => 0.0,
        }
    }
}

impl From<bool> for Response {
    fn from(correct: bool) -> Self {
        if correct {
            Response::Correct
        } else {
            Response::Incorrect
        }
    }
}

impl TryFrom<u8> for Response {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            0 => Ok(Response::Incorrect),
            1 => Ok(Response::Correct),
            other => Err(format!("response must be 0 or 1, got {other}")),
        }
    }
}

impl From<Response> for u8 {
    fn from(r: Response) -> u8 {
        match r {
            Response::Correct => 1,
            Response::Incorrect => 0,
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// One administered item and the answer it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub item_id: String,
    pub difficulty: f64,
    pub response: Response,
}

impl ResponseRecord {
    pub fn new(item_id: impl Into<String>, difficulty: f64, response: Response) -> Self {
        Self {
            item_id: item_id.into(),
            difficulty,
            response,
        }
    }
}

/// Logistic function, evaluated so that `exp` only ever sees a non-positive
/// argument.
#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(logistic(t))` without forming the probability first.
#[inline]
pub fn log_logistic(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

fn check_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(CatError::domain(format!("{name} must be finite, got {x}")))
    }
}

/// P(correct | theta, b) under the Rasch model.
pub fn prob_correct(theta: f64, b: f64) -> Result<f64> {
    check_finite("theta", theta)?;
    check_finite("difficulty", b)?;
    Ok(logistic(theta - b))
}

fn check_history(history: &[ResponseRecord]) -> Result<()> {
    if history.is_empty() {
        return Err(CatError::domain("response history is empty"));
    }
    for rec in history {
        check_finite("difficulty", rec.difficulty)?;
    }
    Ok(())
}

/// Log-likelihood of a response history at `theta`. Always `<= 0`.
pub fn log_likelihood(theta: f64, history: &[ResponseRecord]) -> Result<f64> {
    check_finite("theta", theta)?;
    check_history(history)?;
    Ok(history
        .iter()
        .map(|rec| match rec.response {
            Response::Correct => log_logistic(theta - rec.difficulty),
            Response::Incorrect => log_logistic(rec.difficulty - theta),
        })
        .sum())
}

/// Derivative of the log-likelihood: `sum(x_j - G(theta - b_j))`.
///
/// Strictly decreasing in `theta`.
pub fn score(theta: f64, history: &[ResponseRecord]) -> f64 {
    history
        .iter()
        .map(|rec| rec.response.as_f64() - logistic(theta - rec.difficulty))
        .sum()
}

/// Test information `sum p_j (1 - p_j)` at `theta`.
pub fn fisher_information(theta: f64, difficulties: &[f64]) -> Result<f64> {
    check_finite("theta", theta)?;
    if difficulties.is_empty() {
        return Err(CatError::domain("difficulty list is empty"));
    }
    let mut total = 0.0;
    for &b in difficulties {
        check_finite("difficulty", b)?;
        total += item_information(theta, b);
    }
    Ok(total)
}

/// Single-item information `p (1 - p)`, in `(0, 1/4]`.
#[inline]
pub fn item_information(theta: f64, b: f64) -> f64 {
    let t = theta - b;
    logistic(t) * logistic(-t)
}

/// Maximum-likelihood ability restricted to `bounds`.
///
/// The log-likelihood is strictly concave, so the score changes sign at most
/// once; bisection on it converges to the unique constrained maximizer. A
/// score that keeps its sign over the whole interval (all-correct or
/// all-incorrect histories) puts the maximizer on the corresponding bound.
pub fn mle(history: &[ResponseRecord], bounds: ThetaBounds) -> Result<f64> {
    check_history(history)?;
    bounds.validate()?;

    if score(bounds.upper, history) >= 0.0 {
        return Ok(bounds.upper);
    }
    if score(bounds.lower, history) <= 0.0 {
        return Ok(bounds.lower);
    }

    let (mut lo, mut hi) = (bounds.lower, bounds.upper);
    while hi - lo > MLE_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let s = score(mid, history);
        if s > 0.0 {
            lo = mid;
        } else if s < 0.0 {
            hi = mid;
        } else {
            return Ok(mid);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// True when the history holds at least one correct and one incorrect answer,
/// i.e. the unconstrained MLE exists.
pub fn has_mixed_responses(history: &[ResponseRecord]) -> bool {
    let correct = history.iter().any(|r| r.response.is_correct());
    let incorrect = history.iter().any(|r| !r.response.is_correct());
    correct && incorrect
}
