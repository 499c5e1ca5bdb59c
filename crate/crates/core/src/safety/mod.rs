//! Citizen safety: per-window features, the rule language, violations and
//! the hourly speeding ratio.

pub mod analytics;
pub mod dsl;
pub mod rules;
pub mod window;

pub use analytics::{hourly_speeding_ratio, HourRatio, HourlyRatio, RatioError};
pub use dsl::{eval_rule, parse_rule, CmpOp, Expr, Feature, RuleError, RuleErrorKind, RuleExpr};
pub use rules::{evaluate_windows, frequency_level, FrequencyBand, FrequencyLevel, Rule, RuleId, Violation};
pub use window::{build_window_features, compute_window_features, window_index, WindowError, WindowFeatures};
