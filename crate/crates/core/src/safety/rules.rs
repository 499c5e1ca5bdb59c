use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize, Serializer};

use super::dsl::{parse_rule, RuleError, RuleExpr};
use super::window::WindowFeatures;
use crate::model::{Config, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u64);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A decision-maker authored rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub rule_id: RuleId,
    pub name: String,
    /// Source text as submitted.
    pub text: String,
    pub parsed: RuleExpr,
    pub enabled: bool,
}

impl Rule {
    pub fn new(rule_id: RuleId, name: impl Into<String>, text: impl Into<String>, enabled: bool) -> Result<Rule, RuleError> {
        let text = text.into();
        let parsed = parse_rule(&text)?;
        Ok(Rule { rule_id, name: name.into(), text, parsed, enabled })
    }

    pub fn severity(&self) -> Severity {
        self.parsed.severity
    }

    /// Canonical printed form of the rule.
    pub fn pretty(&self) -> String {
        self.parsed.to_string()
    }

    pub fn fires(&self, features: &WindowFeatures) -> bool {
        self.parsed.expr.eval(features)
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Rule", 6)?;
        st.serialize_field("rule_id", &self.rule_id)?;
        st.serialize_field("name", &self.name)?;
        st.serialize_field("text", &self.text)?;
        st.serialize_field("pretty", &self.pretty())?;
        st.serialize_field("severity", &self.severity())?;
        st.serialize_field("enabled", &self.enabled)?;
        st.end()
    }
}

/// One rule firing on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: RuleId,
    pub post_id: String,
    pub window_start: DateTime<Utc>,
    pub severity: Severity,
    pub feature_snapshot: WindowFeatures,
}

/// Evaluate every enabled rule on every window. One violation per firing
/// (rule, window) pair, ordered by window start, rule id, then post id.
pub fn evaluate_windows<'a>(rules: impl IntoIterator<Item = &'a Rule>, features: &[WindowFeatures]) -> Vec<Violation> {
    let rules: Vec<&Rule> = rules.into_iter().filter(|r| r.enabled).collect();
    let mut out = Vec::new();
    for f in features {
        for rule in &rules {
            if rule.fires(f) {
                out.push(Violation {
                    rule_id: rule.rule_id,
                    post_id: f.post_id.clone(),
                    window_start: f.window_start,
                    severity: rule.severity(),
                    feature_snapshot: f.clone(),
                });
            }
        }
    }
    out.sort_by(|a, b| {
        (a.window_start, a.rule_id, &a.post_id).cmp(&(b.window_start, b.rule_id, &b.post_id))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyBand {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyLevel {
    pub post_id: String,
    pub rule_id: RuleId,
    pub count: u64,
    pub band: FrequencyBand,
}

pub fn frequency_band(count: u64, bands: [u32; 2]) -> FrequencyBand {
    if count < bands[0] as u64 {
        FrequencyBand::Low
    } else if count < bands[1] as u64 {
        FrequencyBand::Medium
    } else {
        FrequencyBand::High
    }
}

/// How often `rule_id` fired at `post_id` in the trailing horizon
/// `(now - horizon, now]`.
pub fn frequency_level(
    violations: &[Violation],
    post_id: &str,
    rule_id: RuleId,
    now: DateTime<Utc>,
    config: &Config,
) -> FrequencyLevel {
    let since = now - Duration::days(config.frequency_horizon_days as i64);
    let count = violations
        .iter()
        .filter(|v| v.post_id == post_id && v.rule_id == rule_id && v.window_start > since && v.window_start <= now)
        .count() as u64;
    FrequencyLevel {
        post_id: post_id.to_string(),
        rule_id,
        count,
        band: frequency_band(count, config.frequency_bands),
    }
}
