//! Wire types shared by the HTTP service and its client.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::irt::{Response, ResponseRecord};
use crate::selection::{self, SelectionRule, WhatIfEntry};
use crate::session::{Estimate, EstimatorKind, Phase, SessionState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub difficulty: f64,
}

/// Public view of a session. Live sessions have no true ability, so none is
/// ever exposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    /// `ready-for-item`, `awaiting-response` or `finished`.
    pub phase: String,
    pub rule: SelectionRule,
    pub estimator: EstimatorKind,
    pub trials_used: usize,
    pub max_trials: usize,
    pub current_item: Option<ItemView>,
    pub history: Vec<ResponseRecord>,
    /// Present once the session has finished.
    pub estimate: Option<Estimate>,
    pub exhausted: bool,
}

impl ApiSession {
    pub fn from_state(state: &SessionState) -> Self {
        let (phase, current_item, estimate, exhausted) = match state.phase() {
            Phase::ReadyForItem => ("ready-for-item", None, None, false),
            Phase::AwaitingResponse { item } => (
                "awaiting-response",
                Some(ItemView {
                    id: item.id.clone(),
                    difficulty: item.difficulty,
                }),
                None,
                false,
            ),
            Phase::Finished {
                estimate,
                exhausted,
            } => ("finished", None, Some(estimate.clone()), *exhausted),
        };
        Self {
            session_id: state.id().to_string(),
            phase: phase.to_string(),
            rule: state.config().rule,
            estimator: state.config().estimator,
            trials_used: state.trials_used(),
            max_trials: state.config().max_trials,
            current_item,
            history: state.history().to_vec(),
            estimate,
            exhausted,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.phase == "finished"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub item_id: String,
    pub response: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub nodes: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// Absent when the prior is not log-concave.
    pub mode: Option<f64>,
    pub variance: f64,
}

impl PosteriorView {
    pub fn from_state(state: &SessionState) -> Self {
        let post = state.posterior();
        let snap = post.snapshot();
        Self {
            nodes: snap.nodes,
            density: snap.density,
            mean: post.mean(),
            median: post.median(),
            mode: post.mode().ok(),
            variance: post.variance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub session_id: String,
    pub entries: Vec<WhatIfEntry>,
}

impl WhatIf {
    /// Next item under every rule, from the session's current posterior and
    /// bank. Read-only.
    pub fn from_state(state: &SessionState) -> Result<Self> {
        let entries = selection::what_if(
            &SelectionRule::ALL,
            state.posterior(),
            state.history(),
            state.bank(),
        )?;
        Ok(Self {
            session_id: state.id().to_string(),
            entries,
        })
    }
}

/// Error body returned with every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}
