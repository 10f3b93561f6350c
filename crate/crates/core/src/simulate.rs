//! Seeded Monte Carlo comparison of selection rules.
//!
//! Each run drives a real [`SessionState`] against a simulated respondent of
//! known ability and records the estimate after every trial. Runs are keyed
//! by `(rule, ability level, replication)`; the respondent's random stream is
//! derived from the seed and `(level, replication)` only, so every rule faces
//! the same response draws and results do not depend on the thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CatError, Result};
use crate::irt::{logistic, Response, ThetaBounds};
use crate::posterior::{LossSpec, PriorSpec, DEFAULT_GRID_SIZE};
use crate::selection::{Item, ItemBank, SelectionRule};
use crate::session::{BankSource, EstimatorKind, SessionConfig, SessionState};
use crate::stats;

/// One competing method: a selection rule and the estimator it reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule: SelectionRule,
    #[serde(default)]
    pub estimator: EstimatorKind,
    /// Name used in the output tables; defaults to the rule name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl RuleSpec {
    pub fn new(rule: SelectionRule, estimator: EstimatorKind) -> Self {
        Self {
            rule,
            estimator,
            label: None,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.rule.name().to_string())
    }
}

fn default_levels() -> usize {
    21
}

fn default_sd() -> f64 {
    1.0
}

/// True abilities to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThetaSource {
    /// Normal quantiles at levels `k / (levels + 1)`, `k = 1..=levels`.
    QuantileGrid {
        #[serde(default = "default_levels")]
        levels: usize,
        #[serde(default)]
        mean: f64,
        #[serde(default = "default_sd")]
        sd: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl Default for ThetaSource {
    fn default() -> Self {
        ThetaSource::QuantileGrid {
            levels: default_levels(),
            mean: 0.0,
            sd: 1.0,
        }
    }
}

impl ThetaSource {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            ThetaSource::QuantileGrid { levels, mean, sd } => {
                if *levels == 0 {
                    return Err(CatError::Config(
                        "quantile grid needs at least one level".into(),
                    ));
                }
                let normal = Normal::new(*mean, *sd)
                    .map_err(|e| CatError::Config(format!("ability distribution: {e}")))?;
                Ok((1..=*levels)
                    .map(|k| normal.inverse_cdf(k as f64 / (*levels + 1) as f64))
                    .collect())
            }
            ThetaSource::Explicit { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(CatError::Config(
                        "explicit abilities must be a nonempty list of finite numbers".into(),
                    ));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Item bank used by every simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BankSpec {
    /// Reusable bank `lower, lower + step, ..., upper`.
    Dense { lower: f64, upper: f64, step: f64 },
    File {
        path: PathBuf,
        #[serde(default)]
        consume_on_use: bool,
    },
    Inline {
        items: Vec<Item>,
        #[serde(default)]
        consume_on_use: bool,
    },
}

impl Default for BankSpec {
    fn default() -> Self {
        BankSpec::Dense {
            lower: -6.0,
            upper: 6.0,
            step: 0.05,
        }
    }
}

impl BankSpec {
    pub fn build(&self) -> Result<ItemBank> {
        let bank = match self {
            BankSpec::Dense { lower, upper, step } => ItemBank::dense(*lower, *upper, *step)?,
            BankSpec::File {
                path,
                consume_on_use,
            } => ItemBank::load(path, ThetaBounds::default(), *consume_on_use)?,
            BankSpec::Inline {
                items,
                consume_on_use,
            } => ItemBank::new(items.clone(), *consume_on_use, ThetaBounds::default()),
        };
        bank.validate()?;
        Ok(bank)
    }
}

fn default_rules() -> Vec<RuleSpec> {
    vec![
        RuleSpec::new(
            SelectionRule::BayesRisk(LossSpec::Squared),
            EstimatorKind::Mean,
        ),
        RuleSpec::new(SelectionRule::MaxInfo, EstimatorKind::Mle),
    ]
}

fn default_reps() -> usize {
    100
}

fn default_trials() -> usize {
    30
}

fn default_parallelism() -> usize {
    1
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

/// Experiment description. Every field has a default, so `{}` is the full
/// 30-trial, 100-replication, 21-level comparison of `bayes-risk-sq`
/// (posterior mean) against `max-info` (bounded MLE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_rules")]
    pub rules: Vec<RuleSpec>,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub theta_source: ThetaSource,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub bank: BankSpec,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core. Does not affect the results.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl SimConfig {
    /// Reads a `.toml` or JSON configuration file.
    pub fn from_path(path: &Path) -> Result<Self> {
        crate::config::read_config(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(CatError::Config("at least one rule is required".into()));
        }
        if self.n_reps == 0 || self.n_trials == 0 {
            return Err(CatError::Config(
                "n_reps and n_trials must be at least 1".into(),
            ));
        }
        let mut labels: Vec<String> = self.rules.iter().map(RuleSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.rules.len() {
            return Err(CatError::Config("rule labels must be unique".into()));
        }
        if let ThetaSource::QuantileGrid { sd, .. } = &self.theta_source {
            if !(*sd > 0.0) {
                return Err(CatError::Config("quantile grid sd must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Answers items as a Rasch examinee with a fixed ability.
pub struct SimulatedRespondent {
    true_theta: f64,
    rng: ChaCha8Rng,
}

impl SimulatedRespondent {
    pub fn new(true_theta: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { true_theta, rng }
    }

    pub fn true_theta(&self) -> f64 {
        self.true_theta
    }

    pub fn respond(&mut self, difficulty: f64) -> Response {
        let u: f64 = self.rng.random();
        Response::from(u < logistic(self.true_theta - difficulty))
    }
}

/// Drives a session to completion against `respondent`, returning the
/// estimate (with `estimator`) after every answered item. Ends early only if
/// a consuming bank runs dry.
pub fn run_session(
    config: SessionConfig,
    estimator: EstimatorKind,
    respondent: &mut SimulatedRespondent,
) -> Result<(SessionState, Vec<f64>)> {
    let mut state = SessionState::start(config)?;
    let mut estimates = Vec::with_capacity(state.config().max_trials);
    while let Some(item) = state.current_item().cloned() {
        let answer = respondent.respond(item.difficulty);
        state.submit(&item.id, answer)?;
        estimates.push(estimator.estimate(state.posterior(), state.history())?);
        if !state.is_finished() {
            match state.next_item() {
                Ok(_) | Err(CatError::Exhausted) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok((state, estimates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rule: String,
    pub theta: f64,
    pub level: usize,
    pub rep: usize,
    pub estimates: Vec<f64>,
    pub difficulties: Vec<f64>,
    pub responses: Vec<Response>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMse {
    pub rule: String,
    pub trial: usize,
    pub mse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaMse {
    pub rule: String,
    pub theta: f64,
    pub mse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub seed: u64,
    pub rules: Vec<String>,
    pub thetas: Vec<f64>,
    pub n_trials: usize,
    /// Sorted by rule label, then trial (1-based).
    pub mse_by_trial: Vec<TrialMse>,
    /// Sorted by rule label, then theta; evaluated at the final trial.
    pub mse_by_theta: Vec<ThetaMse>,
    pub runs: Vec<RunRecord>,
}

pub fn run(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let thetas = config.theta_source.values()?;
    let bank = config.bank.build()?;
    if bank.consume_on_use && bank.items.len() < config.n_trials {
        return Err(CatError::Config(format!(
            "a consuming bank of {} items cannot serve {} trials",
            bank.items.len(),
            config.n_trials
        )));
    }

    let tasks: Vec<(usize, usize, usize)> = (0..config.rules.len())
        .flat_map(|r| {
            (0..thetas.len()).flat_map(move |l| (0..config.n_reps).map(move |k| (r, l, k)))
        })
        .collect();

    let run_one = |&(r, level, rep): &(usize, usize, usize)| -> Result<RunRecord> {
        let spec = &config.rules[r];
        let session_cfg = SessionConfig {
            prior: config.prior.clone(),
            rule: spec.rule,
            bank: Some(BankSource::Inline(bank.clone())),
            max_trials: config.n_trials,
            estimator: spec.estimator,
            grid_size: config.grid_size,
            seed: Some(config.seed),
        };
        let stream = (level * config.n_reps + rep) as u64;
        let mut respondent = SimulatedRespondent::new(thetas[level], config.seed, stream);
        let (state, mut estimates) = run_session(session_cfg, spec.estimator, &mut respondent)?;
        // A consuming bank may end the session early; carry the last estimate.
        let last = estimates
            .last()
            .copied()
            .unwrap_or(state.posterior().mean());
        estimates.resize(config.n_trials, last);
        Ok(RunRecord {
            rule: spec.label(),
            theta: thetas[level],
            level,
            rep,
            estimates,
            difficulties: state.history().iter().map(|h| h.difficulty).collect(),
            responses: state.history().iter().map(|h| h.response).collect(),
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CatError::Config(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> =
        pool.install(|| tasks.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

    let mut labels: Vec<String> = config.rules.iter().map(RuleSpec::label).collect();
    labels.sort();

    let mut mse_by_trial = Vec::new();
    let mut mse_by_theta = Vec::new();
    for label in &labels {
        let rule_runs: Vec<&RunRecord> = runs.iter().filter(|r| &r.rule == label).collect();
        for t in 0..config.n_trials {
            let sq: Vec<f64> = rule_runs
                .iter()
                .map(|r| (r.estimates[t] - r.theta).powi(2))
                .collect();
            mse_by_trial.push(TrialMse {
                rule: label.clone(),
                trial: t + 1,
                mse: stats::mean(&sq),
                n: sq.len(),
            });
        }
        let mut levels: Vec<usize> = (0..thetas.len()).collect();
        levels.sort_by(|&a, &b| thetas[a].total_cmp(&thetas[b]));
        for level in levels {
            let sq: Vec<f64> = rule_runs
                .iter()
                .filter(|r| r.level == level)
                .map(|r| (r.estimates[config.n_trials - 1] - r.theta).powi(2))
                .collect();
            mse_by_theta.push(ThetaMse {
                rule: label.clone(),
                theta: thetas[level],
                mse: stats::mean(&sq),
                n: sq.len(),
            });
        }
    }

    Ok(SimResult {
        seed: config.seed,
        rules: labels,
        thetas,
        n_trials: config.n_trials,
        mse_by_trial,
        mse_by_theta,
        runs,
    })
}

/// 17 significant digits.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn mse_by_trial_csv(result: &SimResult) -> String {
    let mut out = String::from("rule,trial,mse,n\n");
    for row in &result.mse_by_trial {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.rule,
            row.trial,
            fmt_float(row.mse),
            row.n
        );
    }
    out
}

pub fn mse_by_theta_csv(result: &SimResult) -> String {
    let mut out = String::from("rule,theta,mse,n\n");
    for row in &result.mse_by_theta {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.rule,
            fmt_float(row.theta),
            fmt_float(row.mse),
            row.n
        );
    }
    out
}

pub fn runs_jsonl(result: &SimResult) -> String {
    let mut out = String::new();
    for run in &result.runs {
        out.push_str(&serde_json::to_string(run).expect("run record serializes"));
        out.push('\n');
    }
    out
}

/// Writes `mse_by_trial.csv`, `mse_by_theta.csv` and `runs.jsonl` into `dir`.
pub fn write_outputs(result: &SimResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("mse_by_trial.csv"), mse_by_trial_csv(result))?;
    std::fs::write(dir.join("mse_by_theta.csv"), mse_by_theta_csv(result))?;
    std::fs::write(dir.join("runs.jsonl"), runs_jsonl(result))?;
    Ok(())
}

impl SimResult {
    /// MSE curve of one rule, indexed by trial - 1.
    pub fn curve(&self, rule: &str) -> Option<Vec<f64>> {
        let curve: Vec<f64> = self
            .mse_by_trial
            .iter()
            .filter(|r| r.rule == rule)
            .map(|r| r.mse)
            .collect();
        (!curve.is_empty()).then_some(curve)
    }

    /// Final-trial MSE by ability, ascending in theta.
    pub fn by_theta(&self, rule: &str) -> Option<Vec<(f64, f64)>> {
        let rows: Vec<(f64, f64)> = self
            .mse_by_theta
            .iter()
            .filter(|r| r.rule == rule)
            .map(|r| (r.theta, r.mse))
            .collect();
        (!rows.is_empty()).then_some(rows)
    }
}

/// Side-by-side view of two rules' MSE curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rule_a: String,
    pub rule_b: String,
    pub mse_a: Vec<f64>,
    pub mse_b: Vec<f64>,
    /// Least-squares slope of MSE against trial number.
    pub slope_a: f64,
    pub slope_b: f64,
    /// For each trial `t` of rule a, the first trial at which rule b's MSE is
    /// no larger than `mse_a[t]`, if any.
    pub matching_trial_b: Vec<Option<usize>>,
    /// `(theta, mse_a, mse_b)` at the final trial, ascending in theta.
    pub final_by_theta: Vec<(f64, f64, f64)>,
}

impl Comparison {
    /// `MSE_a(trial_a) / MSE_b(trial_b)`, trials 1-based.
    pub fn ratio(&self, trial_a: usize, trial_b: usize) -> f64 {
        self.mse_a[trial_a - 1] / self.mse_b[trial_b - 1]
    }

    /// Mean final-trial MSE of each rule over the `keep` ability levels
    /// closest to the middle of the sorted list.
    pub fn middle_levels_mean(&self, keep: usize) -> (f64, f64) {
        let n = self.final_by_theta.len();
        let keep = keep.min(n);
        let start = (n - keep) / 2;
        let mid = &self.final_by_theta[start..start + keep];
        let a: Vec<f64> = mid.iter().map(|r| r.1).collect();
        let b: Vec<f64> = mid.iter().map(|r| r.2).collect();
        (stats::mean(&a), stats::mean(&b))
    }
}

pub fn compare(result: &SimResult, rule_a: &str, rule_b: &str) -> Result<Comparison> {
    let missing = |r: &str| CatError::Config(format!("rule {r:?} not in the result"));
    let mse_a = result.curve(rule_a).ok_or_else(|| missing(rule_a))?;
    let mse_b = result.curve(rule_b).ok_or_else(|| missing(rule_b))?;
    let trials: Vec<f64> = (1..=mse_a.len()).map(|t| t as f64).collect();
    let matching_trial_b = mse_a
        .iter()
        .map(|a| mse_b.iter().position(|b| b <= a).map(|i| i + 1))
        .collect();
    let theta_a = result.by_theta(rule_a).ok_or_else(|| missing(rule_a))?;
    let theta_b = result.by_theta(rule_b).ok_or_else(|| missing(rule_b))?;
    let final_by_theta = theta_a
        .iter()
        .zip(&theta_b)
        .map(|(a, b)| (a.0, a.1, b.1))
        .collect();
    Ok(Comparison {
        rule_a: rule_a.to_string(),
        rule_b: rule_b.to_string(),
        slope_a: stats::ols_slope(&trials, &mse_a),
        slope_b: stats::ols_slope(&trials, &mse_b),
        mse_a,
        mse_b,
        matching_trial_b,
        final_by_theta,
    })
}
