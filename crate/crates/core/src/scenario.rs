//! Scenario description: application, user, default configuration, spies,
//! timed context events and run parameters.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{validate_configuration, Application, CompiledApp, Configuration, ModelError, Violation};
use crate::context::{ContextError, ContextEvent, SpyAgent, Thresholds};
use crate::ids::ConductId;
use crate::qos::{CriterionKind, UserProfile};
use crate::search::SearchParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("unknown {kind} `{id}` referenced by {by}")]
    Reference { kind: String, id: String, by: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
}

impl ScenarioError {
    fn reference(kind: &str, id: impl Into<String>, by: impl Into<String>) -> Self {
        Self::Reference { kind: String::from(kind), id: id.into(), by: by.into() }
    }
}

impl From<ModelError> for ScenarioError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownReference { kind, id, by } => Self::reference(kind, id, by),
            ModelError::UnknownCulprit(id) => Self::reference("culprit", id, "search"),
            other => Self::Constraint(format!("{other}")),
        }
    }
}

impl From<ContextError> for ScenarioError {
    fn from(e: ContextError) -> Self {
        match e {
            ContextError::UnknownEntity { kind, id } => Self::reference(kind, id, "scenario"),
            ContextError::Model(m) => m.into(),
            other => Self::Constraint(format!("{other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Parameters {
    pub eps_intrinsic: f64,
    pub eps_contextual: f64,
    pub hysteresis: f64,
    pub event_threshold: f64,
    pub app_output_threshold: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub point_thresholds: BTreeMap<ConductId, f64>,
    pub dt_ms: u64,
    pub action_latency_ms: u64,
    pub horizon_ms: u64,
    pub adjacent_k: usize,
    pub exhaustive_limit: u64,
    pub brute_force_cap: u64,
    /// Recorded in outputs; the engine itself draws no random numbers.
    pub seed: u64,
}

impl Default for Parameters {
    fn default() -> Self {
        let s = SearchParams::default();
        let t = Thresholds::default();
        Self {
            eps_intrinsic: s.eps_intrinsic,
            eps_contextual: s.eps_contextual,
            hysteresis: s.hysteresis,
            event_threshold: t.default,
            app_output_threshold: t.application,
            point_thresholds: BTreeMap::new(),
            dt_ms: 100,
            action_latency_ms: 200,
            horizon_ms: 10_000,
            adjacent_k: s.adjacent_k,
            exhaustive_limit: s.exhaustive_limit,
            brute_force_cap: s.brute_force_cap,
            seed: 0,
        }
    }
}

impl Parameters {
    pub fn search(&self) -> SearchParams {
        SearchParams {
            eps_intrinsic: self.eps_intrinsic,
            eps_contextual: self.eps_contextual,
            hysteresis: self.hysteresis,
            adjacent_k: self.adjacent_k,
            exhaustive_limit: self.exhaustive_limit,
            brute_force_cap: self.brute_force_cap,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            default: self.event_threshold,
            points: self.point_thresholds.clone(),
            application: self.app_output_threshold,
        }
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let reals = [
            ("eps_intrinsic", self.eps_intrinsic),
            ("eps_contextual", self.eps_contextual),
            ("hysteresis", self.hysteresis),
            ("event_threshold", self.event_threshold),
            ("app_output_threshold", self.app_output_threshold),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::Constraint(format!("parameter {name} must be a non-negative number")));
            }
        }
        for (c, v) in &self.point_thresholds {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(ScenarioError::Constraint(format!("threshold for conduct `{c}` must be non-negative")));
            }
        }
        if self.dt_ms == 0 {
            return Err(ScenarioError::Constraint(String::from("dt_ms must be positive")));
        }
        if self.horizon_ms == 0 {
            return Err(ScenarioError::Constraint(String::from("horizon_ms must be positive")));
        }
        if self.adjacent_k == 0 {
            return Err(ScenarioError::Constraint(String::from("adjacent_k must be at least 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub application: Application,
    pub user: UserProfile,
    pub default_configuration: Configuration,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spies: Vec<SpyAgent>,
    #[serde(default)]
    pub events: Vec<ContextEvent>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial_environment: BTreeMap<String, String>,
    #[serde(default)]
    pub parameters: Parameters,
}

impl Scenario {
    /// Fills omitted routes of the default configuration with default routes.
    pub fn fill_default_routes(&mut self, app: &CompiledApp) {
        for c in app.conduct_list().filter(|c| !c.loopback) {
            if self.default_configuration.routes.contains_key(&c.id) {
                continue;
            }
            let cfg = &self.default_configuration;
            if let (Some(a), Some(b)) = (cfg.host(&c.source.slot), cfg.host(&c.sink.slot)) {
                let r = app.default_route(a, b);
                self.default_configuration.routes.insert(c.id.clone(), r);
            }
        }
    }

    /// Full structural and referential validation. Returns the compiled
    /// application and the default configuration with routes filled in.
    pub fn compile(&self) -> Result<(CompiledApp, Configuration), ScenarioError> {
        self.parameters.check()?;
        let app = CompiledApp::new(self.application.clone())?;

        let mut listed: BTreeMap<&str, &str> = BTreeMap::new();
        for (_, sg) in self.application.subgroups() {
            for c in &sg.characteristics {
                if let Some(other) = listed.insert(c.as_str(), sg.id.as_str()) {
                    return Err(ScenarioError::Constraint(format!(
                        "characteristic `{c}` is listed by sub-groups `{other}` and `{}`",
                        sg.id
                    )));
                }
            }
        }

        let mut wished = BTreeSet::new();
        for w in &self.user.wishes {
            if app.characteristic(&w.characteristic).is_none() {
                return Err(ScenarioError::reference("characteristic", w.characteristic.0.clone(), "user wishes"));
            }
            if !wished.insert(&w.characteristic) {
                return Err(ScenarioError::Constraint(format!("two wishes for `{}`", w.characteristic)));
            }
            w.check().map_err(ScenarioError::Constraint)?;
        }
        for (sg, w) in &self.user.subgroup_weights {
            if !self.application.subgroups().any(|(_, s)| &s.id == sg) {
                return Err(ScenarioError::reference("sub-group", sg.0.clone(), "user weights"));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(ScenarioError::Constraint(format!("weight of sub-group `{sg}` must be non-negative")));
            }
        }
        for (g, w) in &self.user.group_weights {
            if !self.application.groups.iter().any(|x| &x.id == g) {
                return Err(ScenarioError::reference("group", g.0.clone(), "user weights"));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(ScenarioError::Constraint(format!("weight of group `{g}` must be non-negative")));
            }
        }
        for ch in &self.application.characteristics {
            if ch.kind == CriterionKind::Contextual
                && ch.probe.is_none()
                && wished.contains(&ch.id)
                && !self.spies.iter().any(|s| s.characteristic == ch.id)
            {
                return Err(ScenarioError::Constraint(format!(
                    "contextual characteristic `{}` has neither a probe conduct nor a spy",
                    ch.id
                )));
            }
        }
        for c in self.parameters.point_thresholds.keys() {
            if app.conduct(c).is_none() {
                return Err(ScenarioError::reference("conduct", c.0.clone(), "point_thresholds"));
            }
        }

        let mut spy_ids = BTreeSet::new();
        for s in &self.spies {
            if !spy_ids.insert(&s.id) {
                return Err(ScenarioError::Constraint(format!("duplicate spy id `{}`", s.id)));
            }
            s.check(&app)?;
        }
        for e in &self.events {
            e.check(&app)?;
        }

        let mut filled = self.clone();
        filled.fill_default_routes(&app);
        let cfg = filled.default_configuration;
        if let Err(violations) = validate_configuration(&cfg, &app) {
            let v = &violations[0];
            let by = String::from("default configuration");
            return Err(match v {
                Violation::UnknownSlot { slot } => ScenarioError::reference("slot", slot.0.clone(), by),
                Violation::UnknownStation { station, .. } => ScenarioError::reference("station", station.0.clone(), by),
                Violation::InadmissibleVariant { slot, variant } => {
                    ScenarioError::reference("variant", variant.0.clone(), format!("{by} slot `{slot}`"))
                }
                Violation::UnknownConduct { conduct } => ScenarioError::reference("conduct", conduct.0.clone(), by),
                Violation::UnknownLink { link, .. } => ScenarioError::reference("link", link.0.clone(), by),
                other => ScenarioError::Constraint(format!("{by}: {other}")),
            });
        }
        Ok((app, cfg))
    }
}
