//! Horizontal autoscaling of the web tier.

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMetric {
    #[default]
    AvgOutstandingPerUpNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscalePolicy {
    #[serde(default)]
    pub metric: ScaleMetric,
    pub high_threshold: f64,
    pub low_threshold: f64,
    pub evaluation_interval_ms: u64,
    pub sustain_windows: u32,
    pub cooldown_ms: u64,
    pub min_nodes: u32,
    pub max_nodes: u32,
    pub step: u32,
}

impl AutoscalePolicy {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.low_threshold < self.high_threshold) {
            out.push("autoscale.low_threshold must be below high_threshold".to_string());
        }
        if self.min_nodes < 1 {
            out.push("autoscale.min_nodes must be >= 1".to_string());
        }
        if self.min_nodes > self.max_nodes {
            out.push("autoscale.min_nodes must not exceed max_nodes".to_string());
        }
        if self.step < 1 {
            out.push("autoscale.step must be >= 1".to_string());
        }
        if self.evaluation_interval_ms == 0 {
            out.push("autoscale.evaluation_interval_ms must be > 0".to_string());
        }
        if self.sustain_windows < 1 {
            out.push("autoscale.sustain_windows must be >= 1".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleDecision {
    ScaleOut(u32),
    ScaleIn(u32),
    Hold,
}

#[derive(Debug, Clone)]
pub struct Autoscaler {
    pub policy: AutoscalePolicy,
    high_streak: u32,
    low_streak: u32,
    last_action: Option<SimTime>,
}

impl Autoscaler {
    pub fn new(policy: AutoscalePolicy) -> Self {
        Self {
            policy,
            high_streak: 0,
            low_streak: 0,
            last_action: None,
        }
    }

    pub fn last_action(&self) -> Option<SimTime> {
        self.last_action
    }

    fn cooling(&self, now: SimTime) -> bool {
        self.last_action
            .is_some_and(|t| now.since(t) < self.policy.cooldown_ms)
    }

    /// One evaluation. `nodes` counts provisioned plus starting nodes.
    pub fn evaluate(&mut self, now: SimTime, metric: f64, nodes: u32) -> ScaleDecision {
        let p = &self.policy;
        if metric > p.high_threshold {
            self.high_streak += 1;
            self.low_streak = 0;
        } else if metric < p.low_threshold {
            self.low_streak += 1;
            self.high_streak = 0;
        } else {
            self.high_streak = 0;
            self.low_streak = 0;
        }
        if self.cooling(now) {
            return ScaleDecision::Hold;
        }
        let decision = if self.high_streak >= p.sustain_windows && nodes < p.max_nodes {
            ScaleDecision::ScaleOut(p.step.min(p.max_nodes - nodes))
        } else if self.low_streak >= p.sustain_windows && nodes > p.min_nodes {
            ScaleDecision::ScaleIn(p.step.min(nodes - p.min_nodes))
        } else {
            ScaleDecision::Hold
        };
        if decision != ScaleDecision::Hold {
            self.last_action = Some(now);
            self.high_streak = 0;
            self.low_streak = 0;
        }
        decision
    }

    /// Undo the cooldown of a decision that could not be applied.
    pub fn forget_last_action(&mut self, previous: Option<SimTime>) {
        self.last_action = previous;
    }
}
