//! Counterfactual growth simulation: per-newcomer engagement probabilities
//! from a fitted model, turned into cumulative engaged-user curves under the
//! status quo and under "nicer" first replies, with common random numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FirstPostEvent, PostKind};
use crate::scoring::logistic;
use crate::seeding::keyed_uniform;
use crate::stats::{AttributeMode, EngagementModel};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("community `{0}` has no fitted random intercept")]
    UnknownCommunity(String),
    #[error("no {0} model was supplied")]
    MissingModel(PostKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Replies as observed.
    Default,
    /// Toxicity and attack zeroed, negative sentiment clamped to zero.
    Nicer,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Default, Scenario::Nicer];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Default => "default",
            Scenario::Nicer => "nicer",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Scenario::Default => "identity",
            Scenario::Nicer => "toxicity = 0, attack = 0, sentiment = max(sentiment, 0)",
        }
    }

    /// Applies the scenario to reply features `(sentiment, toxicity, attack)`.
    pub fn apply(self, reply: (f64, f64, f64)) -> (f64, f64, f64) {
        match self {
            Scenario::Default => reply,
            Scenario::Nicer => counterfactual_transform(reply),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn counterfactual_transform((s, _t, _a): (f64, f64, f64)) -> (f64, f64, f64) {
    (s.max(0.0), 0.0, 0.0)
}

/// Probability that `event`'s newcomer keeps engaging under `scenario`.
pub fn engagement_probability(
    model: &EngagementModel,
    event: &FirstPostEvent,
    scenario: Scenario,
) -> Result<f64, SimulateError> {
    let u = *model
        .u
        .get(&event.community)
        .ok_or_else(|| SimulateError::UnknownCommunity(event.community.clone()))?;
    if !event.treated {
        return Ok(logistic(model.linear_predictor(u, false, 0.0, 0.0, 0.0)));
    }
    let raw = event
        .first_reply
        .as_ref()
        .filter(|r| r.scored)
        .map_or((0.0, 0.0, 0.0), |r| (r.sentiment, r.toxicity, r.attack));
    let (s, t, a) = scenario.apply(raw);
    let (t, a) = match model.mode {
        AttributeMode::Continuous => (t, a),
        AttributeMode::Threshold(c) => ((t >= c) as u8 as f64, (a >= c) as u8 as f64),
    };
    Ok(logistic(model.linear_predictor(u, true, s, t, a)))
}

/// Common random number for one newcomer; identical across scenarios.
pub fn common_uniform(seed: u64, community: &str, user: &str) -> f64 {
    keyed_uniform(seed, &["engagement", community, user])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub community: String,
    pub scenario: Scenario,
    pub seed: u64,
    /// `(first_post_time, cumulative engaged newcomers)`, one point per event.
    pub points: Vec<(i64, u64)>,
}

impl GrowthCurve {
    pub fn final_count(&self) -> u64 {
        self.points.last().map_or(0, |p| p.1)
    }
}

fn model_for<'a>(models: &'a [EngagementModel], kind: PostKind) -> Result<&'a EngagementModel, SimulateError> {
    models.iter().find(|m| m.kind == kind).ok_or(SimulateError::MissingModel(kind))
}

/// Simulates one community's engaged-user curve. Each newcomer engages iff
/// their keyed uniform falls below their scenario probability; newcomers are
/// scored by the model matching their first post's kind.
pub fn simulate_growth(
    models: &[EngagementModel],
    events: &[FirstPostEvent],
    scenario: Scenario,
    seed: u64,
) -> Result<GrowthCurve, SimulateError> {
    let mut sorted: Vec<&FirstPostEvent> = events.iter().collect();
    sorted.sort_by(|a, b| (a.first_post_time, &a.user).cmp(&(b.first_post_time, &b.user)));
    let community = sorted.first().map(|e| e.community.clone()).unwrap_or_default();
    let mut count = 0u64;
    let mut points = Vec::with_capacity(sorted.len());
    for e in sorted {
        let p = engagement_probability(model_for(models, e.kind)?, e, scenario)?;
        if common_uniform(seed, &e.community, &e.user) < p {
            count += 1;
        }
        points.push((e.first_post_time, count));
    }
    Ok(GrowthCurve { community, scenario, seed, points })
}

/// `100 · (nicer − default) / default`; `None` when the default is zero.
pub fn percent_increase(default: &GrowthCurve, nicer: &GrowthCurve) -> Option<f64> {
    let d = default.final_count();
    (d > 0).then(|| 100.0 * (nicer.final_count() as f64 - d as f64) / d as f64)
}

/// Final counts of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub community: String,
    pub seed: u64,
    pub default_final: u64,
    pub nicer_final: u64,
    pub percent_increase: Option<f64>,
}

/// Runs both scenarios for each seed.
pub fn replicate(
    models: &[EngagementModel],
    events: &[FirstPostEvent],
    seeds: &[u64],
) -> Result<Vec<Replication>, SimulateError> {
    seeds
        .iter()
        .map(|&seed| {
            let d = simulate_growth(models, events, Scenario::Default, seed)?;
            let n = simulate_growth(models, events, Scenario::Nicer, seed)?;
            Ok(Replication {
                community: d.community.clone(),
                seed,
                default_final: d.final_count(),
                nicer_final: n.final_count(),
                percent_increase: percent_increase(&d, &n),
            })
        })
        .collect()
}
