use serde::{Deserialize, Serialize};

use super::blocks::ActivityBlock;
use crate::model::SmartPost;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LightingAction {
    /// Run every lamp at `level` of full power.
    DimTo { level: f64 },
    /// Switch off every other lamp post.
    HalfOff,
}

impl LightingAction {
    /// Fraction of full power saved while the action is in effect.
    pub fn saving_fraction(self) -> f64 {
        match self {
            LightingAction::DimTo { level } => 1.0 - level,
            LightingAction::HalfOff => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimmingRecommendation {
    pub street_id: String,
    pub block: ActivityBlock,
    pub action: LightingAction,
    pub estimated_savings_kwh: f64,
}

/// kWh saved by applying `action` for `hours` to lamps totalling `watts`.
pub fn savings_kwh(hours: u32, watts: f64, action: LightingAction) -> f64 {
    hours as f64 * watts * action.saving_fraction() / 1000.0
}

/// One recommendation per non-empty block. Streets whose posts are all
/// dimmable are dimmed to `dim_level`; otherwise half the posts go dark.
pub fn recommend(blocks: &[ActivityBlock], posts: &[&SmartPost], dim_level: f64) -> Vec<DimmingRecommendation> {
    if posts.is_empty() {
        return Vec::new();
    }
    let action = if posts.iter().all(|p| p.dimmable) {
        LightingAction::DimTo { level: dim_level }
    } else {
        LightingAction::HalfOff
    };
    let watts: f64 = posts.iter().map(|p| p.lamp_count as f64 * p.lamp_wattage).sum();
    blocks
        .iter()
        .filter(|b| b.hours > 0)
        .map(|b| DimmingRecommendation {
            street_id: b.street_id.clone(),
            block: b.clone(),
            action,
            estimated_savings_kwh: savings_kwh(b.hours, watts, action),
        })
        .collect()
}
