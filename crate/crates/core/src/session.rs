//! Adaptive test sessions.
//!
//! A session alternates between serving an item and receiving its answer:
//!
//! ```text
//! ready-for-item --next_item--> awaiting-response --submit--> ready-for-item ...
//!                                                      \--> finished
//! ```
//!
//! Sessions persist as event logs (configuration plus the sequence of
//! administrations and answers). Loading a log replays it, so the posterior
//! is always recomputed rather than stored.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{CatError, Result};
use crate::irt::{self, Response, ResponseRecord};
use crate::posterior::{Posterior, PriorSpec, DEFAULT_GRID_SIZE};
use crate::selection::{self, Item, ItemBank, SelectionRule};

pub const DEFAULT_MAX_TRIALS: usize = 30;

/// Where a session gets its items. A string is read as a bank file path, an
/// array as inline items (consumed on use), an object as a full [`ItemBank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BankSource {
    Inline(ItemBank),
    Items(Vec<Item>),
    Path(PathBuf),
}

impl BankSource {
    pub fn resolve(&self) -> Result<ItemBank> {
        match self {
            BankSource::Inline(bank) => Ok(bank.clone()),
            BankSource::Items(items) => Ok(ItemBank::new(items.clone(), true, Default::default())),
            BankSource::Path(path) => ItemBank::load(path, Default::default(), true),
        }
    }
}

/// Point estimator reported by a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    #[default]
    Mean,
    Median,
    Mode,
    /// Bounded maximum likelihood; used for the classical reference method.
    Mle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Mean,
        EstimatorKind::Median,
        EstimatorKind::Mode,
        EstimatorKind::Mle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Mean => "mean",
            EstimatorKind::Median => "median",
            EstimatorKind::Mode => "mode",
            EstimatorKind::Mle => "mle",
        }
    }

    /// Evaluates the estimator on a posterior and the history behind it.
    pub fn estimate(self, post: &Posterior, history: &[ResponseRecord]) -> Result<f64> {
        match self {
            EstimatorKind::Mean => Ok(post.mean()),
            EstimatorKind::Median => Ok(post.median()),
            EstimatorKind::Mode => post.mode(),
            EstimatorKind::Mle if history.is_empty() => Ok(post.mean()),
            EstimatorKind::Mle => irt::mle(history, post.bounds()),
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = CatError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CatError::Config(format!("unknown estimator {s:?}")))
    }
}

fn default_rule() -> SelectionRule {
    SelectionRule::BayesRisk(crate::posterior::LossSpec::Squared)
}

fn default_max_trials() -> usize {
    DEFAULT_MAX_TRIALS
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_rule")]
    pub rule: SelectionRule,
    /// Required by [`SessionState::start`]; the service substitutes its
    /// default bank when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank: Option<BankSource>,
    #[serde(default = "default_max_trials")]
    pub max_trials: usize,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Only meaningful for simulated respondents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SessionConfig {
    pub fn new(bank: ItemBank) -> Self {
        Self {
            prior: PriorSpec::default(),
            rule: default_rule(),
            bank: Some(BankSource::Inline(bank)),
            max_trials: DEFAULT_MAX_TRIALS,
            estimator: EstimatorKind::Mean,
            grid_size: DEFAULT_GRID_SIZE,
            seed: None,
        }
    }

    /// Validates the configuration and loads its bank.
    fn resolve_bank(&self) -> Result<ItemBank> {
        if self.max_trials == 0 {
            return Err(CatError::Config("max_trials must be at least 1".into()));
        }
        self.prior.validate()?;
        if self.estimator == EstimatorKind::Mode && !self.prior.is_log_concave() {
            return Err(CatError::Config(
                "the mode estimator needs a log-concave prior".into(),
            ));
        }
        let bank = self
            .bank
            .as_ref()
            .ok_or_else(|| CatError::Config("no item bank configured".into()))?
            .resolve()?;
        bank.validate()?;
        if !bank.has_available() {
            return Err(CatError::Config("item bank has no available items".into()));
        }
        Ok(bank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub estimator: EstimatorKind,
    pub trials_used: usize,
    pub posterior_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum Phase {
    ReadyForItem,
    AwaitingResponse {
        item: Item,
    },
    Finished {
        estimate: Estimate,
        /// True when the bank ran out before `max_trials`.
        exhausted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SessionEvent {
    Administered { item_id: String },
    Responded { item_id: String, response: Response },
    Exhausted,
}

/// Persisted form of a session: `{id, config, events[]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub id: String,
    pub config: SessionConfig,
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    id: String,
    config: SessionConfig,
    bank: ItemBank,
    history: Vec<ResponseRecord>,
    posterior: Posterior,
    phase: Phase,
    events: Vec<SessionEvent>,
}

impl SessionState {
    /// Session in `ready-for-item`, nothing administered yet.
    fn fresh(id: String, mut config: SessionConfig) -> Result<Self> {
        let bank = config.resolve_bank()?;
        // Pin the resolved bank so logs replay without the original file.
        config.bank = Some(BankSource::Inline(bank.clone()));
        let posterior = Posterior::from_prior(&config.prior, config.grid_size)?;
        Ok(Self {
            id,
            config,
            bank,
            history: Vec::new(),
            posterior,
            phase: Phase::ReadyForItem,
            events: Vec::new(),
        })
    }

    /// Starts a session with a random id and serves its first item.
    pub fn start(config: SessionConfig) -> Result<Self> {
        Self::start_with_id(format!("{:032x}", rand::random::<u128>()), config)
    }

    pub fn start_with_id(id: impl Into<String>, config: SessionConfig) -> Result<Self> {
        let mut state = Self::fresh(id.into(), config)?;
        state.next_item()?;
        Ok(state)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn bank(&self) -> &ItemBank {
        &self.bank
    }

    pub fn history(&self) -> &[ResponseRecord] {
        &self.history
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn trials_used(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Finished { .. })
    }

    pub fn current_item(&self) -> Option<&Item> {
        match &self.phase {
            Phase::AwaitingResponse { item } => Some(item),
            _ => None,
        }
    }

    /// Estimate from the current posterior with the configured estimator.
    pub fn estimate(&self) -> Result<Estimate> {
        self.estimate_with(self.config.estimator)
    }

    pub fn estimate_with(&self, kind: EstimatorKind) -> Result<Estimate> {
        Ok(Estimate {
            value: kind.estimate(&self.posterior, &self.history)?,
            estimator: kind,
            trials_used: self.history.len(),
            posterior_variance: self.posterior.variance(),
        })
    }

    /// Records the answer to the item currently awaiting a response. On a
    /// protocol error the state is left untouched.
    pub fn submit(&mut self, item_id: &str, response: Response) -> Result<()> {
        let item = match &self.phase {
            Phase::AwaitingResponse { item } if item.id == item_id => item.clone(),
            Phase::AwaitingResponse { item } => {
                return Err(CatError::Protocol(format!(
                    "item {item_id:?} is not the one awaiting a response ({:?})",
                    item.id
                )))
            }
            Phase::ReadyForItem => {
                return Err(CatError::Protocol("no item is awaiting a response".into()))
            }
            Phase::Finished { .. } => return Err(CatError::Protocol("session is finished".into())),
        };
        let mut posterior = self.posterior.clone();
        posterior.observe(item.difficulty, response)?;
        self.posterior = posterior;
        self.history.push(ResponseRecord::new(
            item.id.clone(),
            item.difficulty,
            response,
        ));
        self.events.push(SessionEvent::Responded {
            item_id: item.id,
            response,
        });
        if self.history.len() >= self.config.max_trials {
            self.finish(false)?;
        } else {
            self.phase = Phase::ReadyForItem;
        }
        Ok(())
    }

    /// Selects and administers the next item. When the bank has run dry the
    /// session is finished with the current estimate and
    /// [`CatError::Exhausted`] is returned.
    pub fn next_item(&mut self) -> Result<Item> {
        if self.phase != Phase::ReadyForItem {
            return Err(CatError::Protocol(
                "next item requested while not ready for one".into(),
            ));
        }
        match selection::select(self.config.rule, &self.posterior, &self.history, &self.bank) {
            Ok(choice) => {
                let item = choice.item;
                self.bank.mark_used(&item.id);
                self.events.push(SessionEvent::Administered {
                    item_id: item.id.clone(),
                });
                self.phase = Phase::AwaitingResponse { item: item.clone() };
                Ok(item)
            }
            Err(CatError::Exhausted) => {
                self.finish(true)?;
                self.events.push(SessionEvent::Exhausted);
                Err(CatError::Exhausted)
            }
            Err(e) => Err(e),
        }
    }

    fn finish(&mut self, exhausted: bool) -> Result<()> {
        let estimate = self.estimate()?;
        self.phase = Phase::Finished {
            estimate,
            exhausted,
        };
        Ok(())
    }

    /// Rebuilds a session from its configuration and answer history, as a
    /// live client would drive it (submit, then request the next item).
    pub fn replay(
        id: impl Into<String>,
        config: SessionConfig,
        history: &[ResponseRecord],
    ) -> Result<Self> {
        let mut state = Self::start_with_id(id, config)?;
        for rec in history {
            match state.current_item() {
                Some(item) if item.id == rec.item_id => {}
                _ => {
                    return Err(CatError::Protocol(format!(
                        "history does not match the selections: item {:?} was not served",
                        rec.item_id
                    )))
                }
            }
            state.submit(&rec.item_id, rec.response)?;
            if state.phase == Phase::ReadyForItem {
                match state.next_item() {
                    Ok(_) | Err(CatError::Exhausted) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(state)
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            id: self.id.clone(),
            config: self.config.clone(),
            events: self.events.clone(),
        }
    }

    pub fn from_log(log: &SessionLog) -> Result<Self> {
        let mut state = Self::fresh(log.id.clone(), log.config.clone())?;
        for event in &log.events {
            match event {
                SessionEvent::Administered { item_id } => {
                    let item = state.next_item()?;
                    if &item.id != item_id {
                        return Err(CatError::Protocol(format!(
                            "log says {item_id:?} was administered but replay selects {:?}",
                            item.id
                        )));
                    }
                }
                SessionEvent::Responded { item_id, response } => {
                    state.submit(item_id, *response)?;
                }
                SessionEvent::Exhausted => match state.next_item() {
                    Err(CatError::Exhausted) => {}
                    _ => {
                        return Err(CatError::Protocol(
                            "log records exhaustion but the bank still has items".into(),
                        ))
                    }
                },
            }
        }
        Ok(state)
    }

    pub fn save(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.log()).expect("session log serializes")
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let log: SessionLog = serde_json::from_slice(bytes)?;
        Self::from_log(&log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::ThetaBounds;
    use crate::posterior::LossSpec;

    fn config(difficulties: &[f64], rule: SelectionRule) -> SessionConfig {
        let items = difficulties
            .iter()
            .enumerate()
            .map(|(i, b)| Item::new(format!("it{i}"), *b))
            .collect();
        let mut cfg = SessionConfig::new(ItemBank::new(items, true, ThetaBounds::default()));
        cfg.rule = rule;
        cfg
    }

    #[test]
    fn start_serves_prior_mean_item() {
        let mut cfg = SessionConfig::new(ItemBank::dense(-6.0, 6.0, 0.05).unwrap());
        cfg.rule = SelectionRule::MaxInfo;
        let s = SessionState::start(cfg).unwrap();
        assert_eq!(s.current_item().unwrap().difficulty, 0.0);
    }

    #[test]
    fn symmetric_tie_picks_lower_difficulty() {
        for rule in SelectionRule::ALL {
            let mut cfg = config(&[1.0, -1.0], rule);
            cfg.prior = PriorSpec::uniform(ThetaBounds::default());
            let s = SessionState::start(cfg).unwrap();
            assert_eq!(s.current_item().unwrap().difficulty, -1.0, "{rule}");
        }
    }

    #[test]
    fn bayes_risk_first_item() {
        let mut cfg = config(
            &[-4.0, 0.0, 4.0],
            SelectionRule::BayesRisk(LossSpec::Squared),
        );
        cfg.prior = PriorSpec::uniform(ThetaBounds::default());
        let s = SessionState::start(cfg).unwrap();
        assert_eq!(s.current_item().unwrap().difficulty, 0.0);
    }

    #[test]
    fn submit_updates_and_stale_id_is_rejected() {
        let cfg = config(&[-1.0, 0.0, 1.0, 2.0], SelectionRule::MaxInfo);
        let mut s = SessionState::start(cfg).unwrap();
        let item = s.current_item().unwrap().clone();
        assert_eq!(item.difficulty, 0.0);
        let before = s.clone();
        let err = s.submit("nope", Response::Correct).unwrap_err();
        assert!(matches!(err, CatError::Protocol(_)));
        assert_eq!(s, before);

        let old_mean = s.posterior().mean();
        s.submit(&item.id, Response::Correct).unwrap();
        assert!(s.posterior().mean() > old_mean);
        assert_eq!(s.phase(), &Phase::ReadyForItem);
        // Double submission is a protocol error.
        let snapshot = s.clone();
        assert!(s.submit(&item.id, Response::Correct).is_err());
        assert_eq!(s, snapshot);
        let next = s.next_item().unwrap();
        assert_ne!(next.id, item.id);
        assert!(s.next_item().is_err());
    }

    #[test]
    fn thirty_trials_finish() {
        let mut cfg = SessionConfig::new(ItemBank::dense(-6.0, 6.0, 0.05).unwrap());
        cfg.rule = SelectionRule::PosteriorWeightedInfo;
        let mut s = SessionState::start(cfg).unwrap();
        for k in 0..30 {
            let item = s.current_item().unwrap().clone();
            s.submit(&item.id, Response::from(k % 3 != 0)).unwrap();
            if !s.is_finished() {
                s.next_item().unwrap();
            }
        }
        match s.phase() {
            Phase::Finished {
                estimate,
                exhausted,
            } => {
                assert_eq!(estimate.trials_used, 30);
                assert!(!exhausted);
                assert!(ThetaBounds::default().contains(estimate.value));
            }
            other => panic!("unexpected phase {other:?}"),
        }
    }

    #[test]
    fn exhaustion_forces_finish() {
        let mut cfg = config(&[0.0, 1.0], SelectionRule::MinExpectedPosteriorVariance);
        cfg.max_trials = 5;
        let mut s = SessionState::start(cfg).unwrap();
        for _ in 0..2 {
            let id = s.current_item().unwrap().id.clone();
            s.submit(&id, Response::Correct).unwrap();
            if s.phase() == &Phase::ReadyForItem {
                let _ = s.next_item();
            }
        }
        assert!(matches!(
            s.phase(),
            Phase::Finished {
                exhausted: true,
                ..
            }
        ));
        let reloaded = SessionState::load(&s.save()).unwrap();
        assert_eq!(reloaded, s);
    }

    #[test]
    fn mode_requires_log_concave_prior() {
        let mut cfg = config(&[0.0], SelectionRule::MaxInfo);
        cfg.estimator = EstimatorKind::Mode;
        cfg.grid_size = 5;
        cfg.prior = PriorSpec {
            kind: crate::posterior::PriorKind::Table {
                values: vec![1.0, 3.0, 1.0, 3.0, 1.0],
            },
            bounds: ThetaBounds::default(),
        };
        assert!(matches!(SessionState::start(cfg), Err(CatError::Config(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = config(&[0.0], SelectionRule::MaxInfo);
        cfg.max_trials = 0;
        assert!(SessionState::start(cfg).is_err());
        let mut cfg = config(&[0.0, 0.5], SelectionRule::MaxInfo);
        cfg.bank = None;
        assert!(SessionState::start(cfg).is_err());
        let cfg = config(&[0.0, 9.0], SelectionRule::MaxInfo);
        assert!(matches!(
            SessionState::start(cfg),
            Err(CatError::InvalidBank(_))
        ));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SessionConfig = serde_json::from_str(
            r#"{"rule":"min-epv","bank":[{"id":"a","difficulty":0.5},{"id":"b","difficulty":-0.5}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.max_trials, 30);
        assert_eq!(cfg.grid_size, 1001);
        assert_eq!(cfg.estimator, EstimatorKind::Mean);
        assert_eq!(cfg.rule, SelectionRule::MinExpectedPosteriorVariance);
        let bank = cfg.bank.unwrap().resolve().unwrap();
        assert!(bank.consume_on_use);
        assert_eq!(bank.items.len(), 2);
    }
}
