//! QoS algebra: marking, aggregation, the min rule and service proximity.
//!
//! Every characteristic is either intrinsic (independent of the execution
//! context) or contextual. An entity's criterion marks are weighted means of
//! its characteristic marks split by kind; the QoS of the entity is the worse
//! of its two criteria. Sub-Group marks are averaged per kind up to Groups
//! and then to the application, and the min rule is applied at each level
//! only for reporting.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::Application;
use crate::ids::{CharId, ConductId, GroupId, SubGroupId};

/// Default closeness bound used by [`service_proximity`].
pub const DEFAULT_PROXIMITY_EPS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QosError {
    #[error("all weights are zero while aggregating {0}")]
    AllWeightsZero(String),
    #[error("unknown characteristic `{0}`")]
    UnknownCharacteristic(CharId),
    #[error("no mark available for characteristic `{0}`")]
    MissingMark(CharId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Intrinsic,
    Contextual,
}

/// Which direction of a measured value is better for the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

/// How a network route acts on a flow characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkEffect {
    #[default]
    None,
    /// Delivered value is capped by the narrowest link of the route.
    Bandwidth,
    /// Route latency is added to the value.
    Delay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Characteristic {
    pub id: CharId,
    pub kind: CriterionKind,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub better: Polarity,
    #[serde(default)]
    pub network: NetworkEffect,
    /// Conduct whose delivered value is marked for this characteristic.
    /// Contextual flow characteristics have one; spy-driven ones do not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ConductId>,
}

/// Piecewise-linear mapping from a characteristic value to a mark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WishFunction {
    pub characteristic: CharId,
    /// `(value, mark)` pairs, strictly ascending by value.
    pub breakpoints: Vec<(f64, f64)>,
    pub weight: f64,
}

impl WishFunction {
    pub fn new(characteristic: impl Into<CharId>, breakpoints: Vec<(f64, f64)>, weight: f64) -> Self {
        Self { characteristic: characteristic.into(), breakpoints, weight }
    }

    /// Returns a description of the first broken invariant, if any.
    pub fn check(&self) -> Result<(), String> {
        if self.breakpoints.len() < 2 {
            return Err(alloc::format!("wish for `{}` needs at least 2 breakpoints", self.characteristic));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(alloc::format!("wish for `{}` has a negative or non-finite weight", self.characteristic));
        }
        for (i, &(v, m)) in self.breakpoints.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&m) {
                return Err(alloc::format!("wish for `{}` has an invalid breakpoint #{i}", self.characteristic));
            }
            if i > 0 && v <= self.breakpoints[i - 1].0 {
                return Err(alloc::format!(
                    "wish for `{}` breakpoints are not strictly ascending",
                    self.characteristic
                ));
            }
        }
        Ok(())
    }

    pub fn mark(&self, value: f64) -> f64 {
        mark_characteristic(value, self)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub wishes: Vec<WishFunction>,
    /// Missing Sub-Groups weigh 1.
    #[serde(default)]
    pub subgroup_weights: BTreeMap<SubGroupId, f64>,
    /// Missing Groups weigh 1.
    #[serde(default)]
    pub group_weights: BTreeMap<GroupId, f64>,
}

impl UserProfile {
    pub fn wish(&self, id: &CharId) -> Option<&WishFunction> {
        self.wishes.iter().find(|w| &w.characteristic == id)
    }

    /// Weight of a characteristic; characteristics without a wish weigh 0.
    pub fn weight(&self, id: &CharId) -> f64 {
        self.wish(id).map_or(0.0, |w| w.weight)
    }

    pub fn subgroup_weight(&self, id: &SubGroupId) -> f64 {
        self.subgroup_weights.get(id).copied().unwrap_or(1.0)
    }

    pub fn group_weight(&self, id: &GroupId) -> f64 {
        self.group_weights.get(id).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionMarks {
    pub intrinsic: f64,
    pub contextual: f64,
}

impl CriterionMarks {
    pub const PERFECT: Self = Self { intrinsic: 1.0, contextual: 1.0 };

    pub fn new(intrinsic: f64, contextual: f64) -> Self {
        Self { intrinsic, contextual }
    }

    pub fn qos(&self) -> f64 {
        entity_qos(*self)
    }
}

/// Marks of every level of the application at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoSReport {
    pub at: u64,
    pub application: CriterionMarks,
    pub groups: BTreeMap<GroupId, CriterionMarks>,
    pub subgroups: BTreeMap<SubGroupId, CriterionMarks>,
    /// Marks used for aggregation, one per characteristic the user cares about.
    pub characteristics: BTreeMap<CharId, f64>,
    /// Marks of delivered flow values at each conduct.
    #[serde(default)]
    pub points: BTreeMap<ConductId, BTreeMap<CharId, f64>>,
    pub overall: f64,
}

/// Piecewise-linear interpolation over the wish breakpoints, clamped at both
/// ends.
pub fn mark_characteristic(value: f64, wish: &WishFunction) -> f64 {
    let bp = &wish.breakpoints;
    let Some(&(first_v, first_m)) = bp.first() else {
        return 0.0;
    };
    let (last_v, last_m) = bp[bp.len() - 1];
    let mark = if value.is_nan() || value <= first_v {
        first_m
    } else if value >= last_v {
        last_m
    } else {
        let i = bp.partition_point(|&(v, _)| v <= value);
        let (v0, m0) = bp[i - 1];
        let (v1, m1) = bp[i];
        m0 + (m1 - m0) * (value - v0) / (v1 - v0)
    };
    mark.clamp(0.0, 1.0)
}

/// Weighted arithmetic mean of `(mark, weight)` pairs. An empty list is the
/// vacuous case and yields 1.
pub fn aggregate_criterion(marks: &[(f64, f64)]) -> Result<f64, QosError> {
    aggregate_labeled(marks, "criterion")
}

fn aggregate_labeled(marks: &[(f64, f64)], label: &str) -> Result<f64, QosError> {
    if marks.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = marks.iter().map(|&(_, w)| w).sum();
    if total <= 0.0 {
        return Err(QosError::AllWeightsZero(String::from(label)));
    }
    let sum: f64 = marks.iter().map(|&(m, w)| m * w).sum();
    // Keep the mean inside the hull of its inputs despite rounding.
    let lo = marks.iter().map(|&(m, _)| m).fold(f64::INFINITY, f64::min);
    let hi = marks.iter().map(|&(m, _)| m).fold(f64::NEG_INFINITY, f64::max);
    Ok((sum / total).clamp(lo, hi))
}

/// The QoS of an entity is its worst criterion.
pub fn entity_qos(cm: CriterionMarks) -> f64 {
    cm.intrinsic.min(cm.contextual)
}

pub fn service_proximity(a: CriterionMarks, b: CriterionMarks, eps_intrinsic: f64, eps_contextual: f64) -> bool {
    (a.intrinsic - b.intrinsic).abs() <= eps_intrinsic && (a.contextual - b.contextual).abs() <= eps_contextual
}

/// Aggregates characteristic marks up the Sub-Group/Group/application tree.
///
/// Characteristics the user has no wish for are ignored. The returned report
/// carries `at = 0` and no measurement points; the context engine fills
/// those in.
pub fn evaluate_hierarchy(
    app: &Application,
    marks: &BTreeMap<CharId, f64>,
    user: &UserProfile,
) -> Result<QoSReport, QosError> {
    for id in marks.keys() {
        if app.characteristic(id).is_none() {
            return Err(QosError::UnknownCharacteristic(id.clone()));
        }
    }

    let mut used = BTreeMap::new();
    let mut subgroups = BTreeMap::new();
    let mut groups = BTreeMap::new();
    let mut app_i = Vec::with_capacity(app.groups.len());
    let mut app_c = Vec::with_capacity(app.groups.len());

    for group in &app.groups {
        let mut grp_i = Vec::with_capacity(group.subgroups.len());
        let mut grp_c = Vec::with_capacity(group.subgroups.len());
        for sg in &group.subgroups {
            let mut intr = Vec::new();
            let mut ctx = Vec::new();
            for cid in &sg.characteristics {
                let ch = app.characteristic(cid).ok_or_else(|| QosError::UnknownCharacteristic(cid.clone()))?;
                let Some(wish) = user.wish(cid) else { continue };
                let m = *marks.get(cid).ok_or_else(|| QosError::MissingMark(cid.clone()))?;
                used.insert(cid.clone(), m);
                match ch.kind {
                    CriterionKind::Intrinsic => intr.push((m, wish.weight)),
                    CriterionKind::Contextual => ctx.push((m, wish.weight)),
                }
            }
            let label = alloc::format!("sub-group `{}`", sg.id);
            let cm = CriterionMarks::new(aggregate_labeled(&intr, &label)?, aggregate_labeled(&ctx, &label)?);
            let w = user.subgroup_weight(&sg.id);
            grp_i.push((cm.intrinsic, w));
            grp_c.push((cm.contextual, w));
            subgroups.insert(sg.id.clone(), cm);
        }
        let label = alloc::format!("group `{}`", group.id);
        let cm = CriterionMarks::new(aggregate_labeled(&grp_i, &label)?, aggregate_labeled(&grp_c, &label)?);
        let w = user.group_weight(&group.id);
        app_i.push((cm.intrinsic, w));
        app_c.push((cm.contextual, w));
        groups.insert(group.id.clone(), cm);
    }

    let application =
        CriterionMarks::new(aggregate_labeled(&app_i, "application")?, aggregate_labeled(&app_c, "application")?);
    Ok(QoSReport {
        at: 0,
        application,
        groups,
        subgroups,
        characteristics: used,
        points: BTreeMap::new(),
        overall: entity_qos(application),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    fn wish(bp: &[(f64, f64)]) -> WishFunction {
        WishFunction::new("c", bp.to_vec(), 1.0)
    }

    #[test]
    fn marking_interpolates_and_clamps() {
        let w = wish(&[(0.0, 0.0), (100.0, 1.0)]);
        assert_eq!(mark_characteristic(100.0, &w), 1.0);
        assert!(close(mark_characteristic(50.0, &w), 0.5));
        let w = wish(&[(10.0, 0.2), (20.0, 0.9)]);
        assert!(close(mark_characteristic(5.0, &w), 0.2));
        assert!(close(mark_characteristic(25.0, &w), 0.9));
    }

    #[test]
    fn marking_handles_descending_marks() {
        // latency-like: lower is better
        let w = wish(&[(100.0, 1.0), (400.0, 0.0)]);
        assert_eq!(mark_characteristic(50.0, &w), 1.0);
        assert!(close(mark_characteristic(250.0, &w), 0.5));
        assert_eq!(mark_characteristic(900.0, &w), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        assert!(close(aggregate_criterion(&[(0.6, 1.0), (0.8, 1.0)]).unwrap(), 0.7));
        assert!(close(aggregate_criterion(&[(0.4, 3.0)]).unwrap(), 0.4));
        assert_eq!(aggregate_criterion(&[]).unwrap(), 1.0);
        assert!(matches!(aggregate_criterion(&[(0.4, 0.0)]), Err(QosError::AllWeightsZero(_))));
    }

    #[test]
    fn min_rule() {
        assert_eq!(entity_qos(CriterionMarks::new(0.9, 0.4)), 0.4);
        assert_eq!(entity_qos(CriterionMarks::new(1.0, 1.0)), 1.0);
        assert_eq!(entity_qos(CriterionMarks::new(0.0, 1.0)), 0.0);
    }

    #[test]
    fn proximity_examples() {
        let a = CriterionMarks::new(0.5, 0.5);
        assert!(service_proximity(a, a, 0.0, 0.0));
        assert!(!service_proximity(a, CriterionMarks::new(0.9, 0.5), 0.05, 0.05));
        assert!(service_proximity(CriterionMarks::new(0.50, 0.60), CriterionMarks::new(0.54, 0.62), 0.05, 0.05));
    }

    #[test]
    fn wish_check_rejects_bad_breakpoints() {
        assert!(wish(&[(0.0, 0.0)]).check().is_err());
        assert!(wish(&[(1.0, 0.0), (1.0, 1.0)]).check().is_err());
        assert!(wish(&[(0.0, 0.0), (1.0, 1.5)]).check().is_err());
        assert!(WishFunction::new("c", vec![(0.0, 0.0), (1.0, 1.0)], -1.0).check().is_err());
        assert!(wish(&[(0.0, 0.3), (1.0, 0.1)]).check().is_ok());
    }
}
