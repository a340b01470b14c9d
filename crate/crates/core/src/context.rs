//! Simulated execution context and flow propagation.
//!
//! Components are stand-ins: each variant maps the characteristic values of
//! its input flows to output values through affine rules, modulated by the
//! CPU share its host station grants it. Links cap bandwidth-like values and
//! add latency to delay-like ones.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{intrinsic_values, validate_configuration, CompiledApp, Configuration, Culprit, ModelError};
use crate::events::{EventKind, ReconfigurationEvent};
use crate::ids::{CharId, ConductId, LinkId, SlotId, SpyId, StationId, VariantId};
use crate::qos::{
    evaluate_hierarchy, CriterionKind, CriterionMarks, NetworkEffect, Polarity, QoSReport, QosError, UserProfile,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("unknown {kind} `{id}`")]
    UnknownEntity { kind: &'static str, id: String },
    #[error("context event at {at} ms precedes current time {time} ms")]
    OutOfOrder { at: u64, time: u64 },
    #[error("invalid value for {0}")]
    InvalidValue(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qos(#[from] QosError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub bandwidth: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextState {
    pub time: u64,
    /// Background load per station, excluding the application's own demand.
    pub station_loads: BTreeMap<StationId, f64>,
    pub links: BTreeMap<LinkId, LinkState>,
    pub environment: BTreeMap<String, String>,
}

impl ContextState {
    pub fn initial(app: &CompiledApp, environment: BTreeMap<String, String>) -> Self {
        let a = app.app();
        Self {
            time: 0,
            station_loads: a.stations.iter().map(|s| (s.id.clone(), s.base_load)).collect(),
            links: a
                .links
                .iter()
                .map(|l| (l.id.clone(), LinkState { bandwidth: l.bandwidth, latency: l.latency }))
                .collect(),
            environment,
        }
    }

    pub fn load(&self, station: &StationId) -> f64 {
        self.station_loads.get(station).copied().unwrap_or(0.0)
    }

    pub fn is_saturated(&self, station: &StationId, app: &CompiledApp) -> bool {
        app.app().station(station).is_some_and(|s| self.load(station) >= s.capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContextAction {
    SetBandwidth { link: LinkId, value: f64 },
    SetLatency { link: LinkId, value: f64 },
    SetStationLoad { station: StationId, value: f64 },
    SetEnvironment { name: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEvent {
    pub at: u64,
    #[serde(flatten)]
    pub action: ContextAction,
}

impl ContextEvent {
    pub fn new(at: u64, action: ContextAction) -> Self {
        Self { at, action }
    }

    /// Checks the referenced entity exists and the value is admissible.
    pub fn check(&self, app: &CompiledApp) -> Result<(), ContextError> {
        let a = app.app();
        match &self.action {
            ContextAction::SetBandwidth { link, value } | ContextAction::SetLatency { link, value } => {
                if a.link(link).is_none() {
                    return Err(ContextError::UnknownEntity { kind: "link", id: link.0.clone() });
                }
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(ContextError::InvalidValue(format!("link `{link}`")));
                }
            }
            ContextAction::SetStationLoad { station, value } => {
                if a.station(station).is_none() {
                    return Err(ContextError::UnknownEntity { kind: "station", id: station.0.clone() });
                }
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(ContextError::InvalidValue(format!("station `{station}` load")));
                }
            }
            ContextAction::SetEnvironment { .. } => {}
        }
        Ok(())
    }
}

pub fn apply_context_event(
    state: &ContextState,
    ev: &ContextEvent,
    app: &CompiledApp,
) -> Result<ContextState, ContextError> {
    if ev.at < state.time {
        return Err(ContextError::OutOfOrder { at: ev.at, time: state.time });
    }
    ev.check(app)?;
    let mut next = state.clone();
    next.time = ev.at;
    match &ev.action {
        ContextAction::SetBandwidth { link, value } => {
            if let Some(l) = next.links.get_mut(link) {
                l.bandwidth = *value;
            }
        }
        ContextAction::SetLatency { link, value } => {
            if let Some(l) = next.links.get_mut(link) {
                l.latency = *value;
            }
        }
        ContextAction::SetStationLoad { station, value } => {
            next.station_loads.insert(station.clone(), *value);
        }
        ContextAction::SetEnvironment { name, value } => {
            next.environment.insert(name.clone(), value.clone());
        }
    }
    Ok(next)
}

/// Runtime state of one placed slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRun {
    pub variant: VariantId,
    pub station: StationId,
    pub resource_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductFlow {
    /// Values leaving the source port.
    pub emitted: BTreeMap<CharId, f64>,
    /// Values reaching the sink after the route.
    pub delivered: BTreeMap<CharId, f64>,
    pub route: Vec<LinkId>,
    /// Narrowest link bandwidth; absent for co-located ends.
    pub route_bandwidth: Option<f64>,
    pub route_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowState {
    pub slots: BTreeMap<SlotId, SlotRun>,
    pub conducts: BTreeMap<ConductId, ConductFlow>,
}

impl FlowState {
    pub fn delivered(&self, conduct: &ConductId, ch: &CharId) -> Option<f64> {
        self.conducts.get(conduct).and_then(|f| f.delivered.get(ch)).copied()
    }
}

/// Proportional CPU share: `min(1, capacity / (total demand + background))`.
pub fn resource_factor(capacity: f64, total_demand: f64, background: f64, demand: f64) -> f64 {
    if demand <= 0.0 {
        return 1.0;
    }
    let denom = total_demand + background;
    if denom <= 0.0 {
        return 1.0;
    }
    (capacity / denom).min(1.0)
}

fn worse(polarity: Polarity, a: f64, b: f64) -> f64 {
    match polarity {
        Polarity::HigherIsBetter => a.min(b),
        Polarity::LowerIsBetter => a.max(b),
    }
}

/// Sweeps the conduct graph in topological order.
pub fn propagate_flows(
    cfg: &Configuration,
    app: &CompiledApp,
    state: &ContextState,
) -> Result<FlowState, ContextError> {
    if let Err(v) = validate_configuration(cfg, app) {
        return Err(ContextError::InvalidConfiguration(format!("{}", v[0])));
    }
    let mut demand: BTreeMap<&StationId, f64> = BTreeMap::new();
    for (slot, p) in &cfg.placement {
        let v = app.slot(slot).and_then(|i| i.variant(&p.variant)).expect("validated");
        *demand.entry(&p.station).or_default() += v.cpu_demand;
    }

    let mut flows = FlowState::default();
    for slot in app.topological_order() {
        let info = app.slot(slot).expect("ordered slots exist");
        let p = &cfg.placement[slot];
        let variant = info.variant(&p.variant).expect("validated");
        let station = app.app().station(&p.station).expect("validated");
        let rf = resource_factor(station.capacity, demand[&p.station], state.load(&p.station), variant.cpu_demand);
        flows.slots.insert(
            slot.clone(),
            SlotRun { variant: p.variant.clone(), station: p.station.clone(), resource_factor: rf },
        );

        for cid in &info.outgoing {
            let conduct = app.conduct(cid).expect("adjacency is consistent");
            let mut emitted = BTreeMap::new();
            for ch in &conduct.carries {
                let polarity = app.characteristic(ch).map(|c| c.better).unwrap_or_default();
                let mut input: Option<f64> = None;
                for inc in &info.incoming {
                    if let Some(v) = flows.delivered(inc, ch) {
                        input = Some(input.map_or(v, |cur| worse(polarity, cur, v)));
                    }
                }
                let rule = variant.transfer.rule(&conduct.source.port, ch).expect("checked at compile time");
                emitted.insert(ch.clone(), rule.apply(input.unwrap_or(0.0), rf));
            }

            let route = cfg.route(cid).to_vec();
            let mut bandwidth: Option<f64> = None;
            let mut latency = 0.0;
            for l in &route {
                let ls =
                    state.links.get(l).ok_or_else(|| ContextError::UnknownEntity { kind: "link", id: l.0.clone() })?;
                bandwidth = Some(bandwidth.map_or(ls.bandwidth, |b: f64| b.min(ls.bandwidth)));
                latency += ls.latency;
            }
            let mut delivered = emitted.clone();
            for (ch, value) in delivered.iter_mut() {
                match app.characteristic(ch).map(|c| c.network).unwrap_or_default() {
                    NetworkEffect::None => {}
                    NetworkEffect::Bandwidth => {
                        if let Some(b) = bandwidth {
                            *value = value.min(b);
                        }
                    }
                    NetworkEffect::Delay => *value += latency,
                }
            }
            flows.conducts.insert(
                cid.clone(),
                ConductFlow { emitted, delivered, route, route_bandwidth: bandwidth, route_latency: latency },
            );
        }
    }
    Ok(flows)
}

/// Observer of a non-measurable context variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpyAgent {
    pub id: SpyId,
    /// Watched environment variable.
    pub environment: String,
    pub characteristic: CharId,
    /// Slot whose component can adapt to the watched value.
    pub slot: SlotId,
    pub marks: BTreeMap<String, f64>,
    pub default_mark: f64,
    /// Variants of `slot` that fully serve the listed values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub remedies: BTreeMap<VariantId, Vec<String>>,
}

impl SpyAgent {
    pub fn check(&self, app: &CompiledApp) -> Result<(), ContextError> {
        let ch = app
            .characteristic(&self.characteristic)
            .ok_or_else(|| ContextError::UnknownEntity { kind: "characteristic", id: self.characteristic.0.clone() })?;
        if ch.kind != CriterionKind::Contextual {
            return Err(ContextError::InvalidValue(format!(
                "spy `{}` must observe a contextual characteristic",
                self.id
            )));
        }
        let slot = app
            .slot(&self.slot)
            .ok_or_else(|| ContextError::UnknownEntity { kind: "slot", id: self.slot.0.clone() })?;
        for v in self.remedies.keys() {
            if slot.variant(v).is_none() {
                return Err(ContextError::UnknownEntity { kind: "variant", id: v.0.clone() });
            }
        }
        for m in self.marks.values().chain(core::iter::once(&self.default_mark)) {
            if !(0.0..=1.0).contains(m) {
                return Err(ContextError::InvalidValue(format!("spy `{}` mark", self.id)));
            }
        }
        Ok(())
    }

    pub fn observed(&self, state: &ContextState) -> Option<String> {
        state.environment.get(&self.environment).cloned()
    }

    pub fn mark(&self, state: &ContextState, cfg: &Configuration) -> f64 {
        let Some(value) = state.environment.get(&self.environment) else {
            return self.default_mark;
        };
        let remedied = cfg
            .placement
            .get(&self.slot)
            .and_then(|p| self.remedies.get(&p.variant))
            .is_some_and(|handled| handled.iter().any(|h| h == value));
        if remedied {
            1.0
        } else {
            self.marks.get(value).copied().unwrap_or(self.default_mark)
        }
    }
}

/// Everything one evaluation produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub report: QoSReport,
    pub flows: FlowState,
    pub config: Configuration,
    /// Marks per spy plus the environment values they saw.
    pub spies: BTreeMap<SpyId, (Option<String>, f64)>,
}

/// Flows, characteristic marks and the full report for `cfg` in `state`.
pub fn evaluate(
    cfg: &Configuration,
    app: &CompiledApp,
    state: &ContextState,
    user: &UserProfile,
    spies: &[SpyAgent],
) -> Result<Snapshot, ContextError> {
    let flows = propagate_flows(cfg, app, state)?;
    let intrinsic = intrinsic_values(cfg, app);
    let spy_marks: BTreeMap<SpyId, (Option<String>, f64)> =
        spies.iter().map(|s| (s.id.clone(), (s.observed(state), s.mark(state, cfg)))).collect();

    let mut marks = BTreeMap::new();
    for ch in &app.app().characteristics {
        let Some(wish) = user.wish(&ch.id) else { continue };
        let m = match (ch.kind, &ch.probe) {
            (CriterionKind::Intrinsic, _) => wish.mark(intrinsic[&ch.id]),
            (CriterionKind::Contextual, Some(probe)) => {
                let v = flows.delivered(probe, &ch.id).ok_or_else(|| QosError::MissingMark(ch.id.clone()))?;
                wish.mark(v)
            }
            (CriterionKind::Contextual, None) => {
                spies.iter().filter(|s| s.characteristic == ch.id).map(|s| spy_marks[&s.id].1).fold(1.0, f64::min)
            }
        };
        marks.insert(ch.id.clone(), m);
    }
    let mut report = evaluate_hierarchy(app.app(), &marks, user)?;
    report.at = state.time;
    for (cid, flow) in &flows.conducts {
        let mut point = BTreeMap::new();
        for (ch, v) in &flow.delivered {
            if let Some(wish) = user.wish(ch) {
                point.insert(ch.clone(), wish.mark(*v));
            }
        }
        if !point.is_empty() {
            report.points.insert(cid.clone(), point);
        }
    }
    Ok(Snapshot { report, flows, config: cfg.clone(), spies: spy_marks })
}

/// Application-level criterion marks a configuration would have now.
pub fn predict_qos(
    cfg: &Configuration,
    app: &CompiledApp,
    state: &ContextState,
    user: &UserProfile,
    spies: &[SpyAgent],
) -> Result<CriterionMarks, ContextError> {
    Ok(evaluate(cfg, app, state, user, spies)?.report.application)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub default: f64,
    /// Per-conduct overrides.
    #[serde(default)]
    pub points: BTreeMap<ConductId, f64>,
    /// Applied to the overall application mark.
    pub application: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { default: 0.1, points: BTreeMap::new(), application: 0.01 }
    }
}

impl Thresholds {
    pub fn at(&self, conduct: &ConductId) -> f64 {
        self.points.get(conduct).copied().unwrap_or(self.default)
    }
}

fn run_changed(prev: &FlowState, cur: &FlowState, slot: &SlotId) -> bool {
    match (prev.slots.get(slot), cur.slots.get(slot)) {
        (Some(a), Some(b)) => {
            a.variant != b.variant
                || a.station != b.station
                || (a.resource_factor - b.resource_factor).abs() > crate::MARK_EPS
        }
        (a, b) => a.is_some() != b.is_some(),
    }
}

fn network_changed(prev: &FlowState, cur: &FlowState, conduct: &ConductId) -> bool {
    match (prev.conducts.get(conduct), cur.conducts.get(conduct)) {
        (Some(a), Some(b)) => {
            a.route != b.route
                || a.route_bandwidth != b.route_bandwidth
                || (a.route_latency - b.route_latency).abs() > crate::MARK_EPS
        }
        _ => false,
    }
}

fn value_change(prev: &FlowState, cur: &FlowState, conduct: &ConductId, ch: &CharId) -> f64 {
    match (prev.delivered(conduct, ch), cur.delivered(conduct, ch)) {
        (Some(a), Some(b)) => (b - a).abs() / a.abs().max(b.abs()).max(1e-12),
        _ => 0.0,
    }
}

/// Walks upstream from a changed flow to the slot or conduct whose own state
/// changed.
fn locate_culprit(app: &CompiledApp, prev: &FlowState, cur: &FlowState, conduct: &ConductId, ch: &CharId) -> Culprit {
    let mut at = conduct.clone();
    let mut visited = BTreeSet::new();
    loop {
        let c = app.conduct(&at).expect("flows match the application");
        let source = &c.source.slot;
        if run_changed(prev, cur, source) {
            return Culprit::Slot(source.clone());
        }
        let networked = app.characteristic(ch).is_some_and(|x| x.network != NetworkEffect::None);
        if networked && network_changed(prev, cur, &at) {
            return Culprit::Conduct(at);
        }
        visited.insert(at.clone());
        let info = app.slot(source).expect("conduct endpoints exist");
        let upstream = info
            .incoming
            .iter()
            .filter(|i| !visited.contains(*i))
            .map(|i| (value_change(prev, cur, i, ch), i))
            .filter(|(d, _)| *d > crate::MARK_EPS)
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)));
        match upstream {
            Some((_, next)) => at = next.clone(),
            None => return Culprit::Slot(source.clone()),
        }
    }
}

/// Compares two successive evaluations of the running application and names
/// the culprit of each significant change.
///
/// Events of one culprit are merged: affected characteristics are united and
/// the largest change kept. With no previous snapshot nothing is reported.
pub fn detect_reconfiguration_events(
    prev: Option<&Snapshot>,
    cur: &Snapshot,
    spies: &[SpyAgent],
    app: &CompiledApp,
    user: &UserProfile,
    thresholds: &Thresholds,
) -> Vec<ReconfigurationEvent> {
    let Some(prev) = prev else { return Vec::new() };
    let at = cur.report.at;
    let mut by_culprit: BTreeMap<Culprit, (BTreeSet<CharId>, f64)> = BTreeMap::new();
    for (cid, point) in &cur.report.points {
        let Some(before) = prev.report.points.get(cid) else { continue };
        for (ch, m) in point {
            let Some(b) = before.get(ch) else { continue };
            let delta = m - b;
            if delta.abs() <= thresholds.at(cid) {
                continue;
            }
            let culprit = locate_culprit(app, &prev.flows, &cur.flows, cid, ch);
            let entry = by_culprit.entry(culprit).or_insert_with(|| (BTreeSet::new(), 0.0));
            entry.0.insert(ch.clone());
            if delta.abs() > entry.1.abs() {
                entry.1 = delta;
            }
        }
    }

    let mut events: Vec<ReconfigurationEvent> = by_culprit
        .into_iter()
        .map(|(culprit, (affected, delta))| {
            let kind = if delta < 0.0 { EventKind::Degradation } else { EventKind::Improvement };
            ReconfigurationEvent::new(at, kind, culprit, affected.into_iter().collect(), delta, user)
        })
        .collect();

    for spy in spies {
        let before = prev.spies.get(&spy.id);
        let now = cur.spies.get(&spy.id);
        if let (Some((v0, m0)), Some((v1, m1))) = (before, now) {
            if v0 != v1 {
                events.push(ReconfigurationEvent::new(
                    at,
                    EventKind::Spy,
                    Culprit::Slot(spy.slot.clone()),
                    alloc::vec![spy.characteristic.clone()],
                    m1 - m0,
                    user,
                ));
            }
        }
    }

    if events.is_empty() {
        let delta = cur.report.overall - prev.report.overall;
        if delta.abs() > thresholds.application {
            if let Some(culprit) = output_culprit(app, prev, cur) {
                let kind = if delta < 0.0 { EventKind::Degradation } else { EventKind::Improvement };
                let affected: Vec<CharId> = cur
                    .report
                    .characteristics
                    .iter()
                    .filter(|(c, m)| {
                        prev.report.characteristics.get(*c).is_some_and(|p| (*m - p).abs() > crate::MARK_EPS)
                    })
                    .map(|(c, _)| c.clone())
                    .collect();
                events.push(ReconfigurationEvent::new(at, kind, culprit, affected, delta, user));
            }
        }
    }
    events
}

/// Culprit for a change seen only at the application output.
fn output_culprit(app: &CompiledApp, prev: &Snapshot, cur: &Snapshot) -> Option<Culprit> {
    for (slot, p) in &cur.config.placement {
        if prev.config.placement.get(slot) != Some(p) {
            return Some(Culprit::Slot(slot.clone()));
        }
    }
    for slot in app.topological_order() {
        if run_changed(&prev.flows, &cur.flows, slot) {
            return Some(Culprit::Slot(slot.clone()));
        }
    }
    cur.flows.conducts.keys().find(|c| network_changed(&prev.flows, &cur.flows, c)).map(|c| Culprit::Conduct(c.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::app::{
        Application, ComponentVariant, Conduct, Endpoint, Group, Link, ProcessorSlot, ResourceScaling, Station,
        SubGroup, TransferRule,
    };
    use crate::qos::{Characteristic, WishFunction};
    use alloc::vec;

    fn ch(
        id: &str,
        kind: CriterionKind,
        network: NetworkEffect,
        better: Polarity,
        probe: Option<&str>,
    ) -> Characteristic {
        Characteristic {
            id: id.into(),
            kind,
            unit: String::new(),
            description: String::new(),
            better,
            network,
            probe: probe.map(Into::into),
        }
    }

    fn variant(id: &str, rank: i64, cpu: f64, rules: &[(&str, TransferRule)]) -> ComponentVariant {
        let mut v = ComponentVariant {
            id: id.into(),
            power_rank: rank,
            cpu_demand: cpu,
            intrinsic: BTreeMap::new(),
            transfer: Default::default(),
        };
        for (c, r) in rules {
            v.transfer.set("out", *c, *r);
        }
        v
    }

    /// src -> mid -> dst on two stations joined by one link.
    fn pipeline() -> CompiledApp {
        let src = ProcessorSlot {
            id: "src".into(),
            inputs: vec![],
            outputs: vec!["out".into()],
            stations: Some(vec!["s1".into()]),
            variants: vec![variant(
                "cam",
                1,
                0.0,
                &[("bitrate", TransferRule::constant(4000.0)), ("delay", TransferRule::constant(10.0))],
            )],
        };
        let mid = ProcessorSlot {
            id: "mid".into(),
            inputs: vec!["in".into()],
            outputs: vec!["out".into()],
            stations: None,
            variants: vec![
                variant(
                    "half",
                    1,
                    50.0,
                    &[
                        (
                            "bitrate",
                            TransferRule { a: 0.5, ..TransferRule::identity() }.with_resource(ResourceScaling::Scale),
                        ),
                        (
                            "delay",
                            TransferRule { b: 20.0, ..TransferRule::identity() }
                                .with_resource(ResourceScaling::Stretch),
                        ),
                    ],
                ),
                variant("copy", 2, 0.0, &[("bitrate", TransferRule::identity()), ("delay", TransferRule::identity())]),
            ],
        };
        let dst = ProcessorSlot {
            id: "dst".into(),
            inputs: vec!["in".into()],
            outputs: vec![],
            stations: Some(vec!["s2".into()]),
            variants: vec![variant("view", 1, 0.0, &[])],
        };
        let carries = vec![CharId::from("bitrate"), CharId::from("delay")];
        let app = Application {
            characteristics: vec![
                ch(
                    "bitrate",
                    CriterionKind::Contextual,
                    NetworkEffect::Bandwidth,
                    Polarity::HigherIsBetter,
                    Some("md"),
                ),
                ch("delay", CriterionKind::Contextual, NetworkEffect::Delay, Polarity::LowerIsBetter, Some("md")),
            ],
            groups: vec![Group {
                id: "g".into(),
                subgroups: vec![SubGroup {
                    id: "sg".into(),
                    characteristics: vec!["bitrate".into(), "delay".into()],
                    slots: vec![src, mid, dst],
                    conducts: vec![
                        Conduct {
                            id: "sm".into(),
                            source: Endpoint::new("src", "out"),
                            sink: Endpoint::new("mid", "in"),
                            carries: carries.clone(),
                            loopback: false,
                        },
                        Conduct {
                            id: "md".into(),
                            source: Endpoint::new("mid", "out"),
                            sink: Endpoint::new("dst", "in"),
                            carries,
                            loopback: false,
                        },
                    ],
                }],
            }],
            stations: vec![
                Station { id: "s1".into(), capacity: 100.0, base_load: 0.0 },
                Station { id: "s2".into(), capacity: 100.0, base_load: 0.0 },
            ],
            links: vec![Link {
                id: "l".into(),
                endpoints: ("s1".into(), "s2".into()),
                bandwidth: 10_000.0,
                latency: 5.0,
            }],
            routes: vec![],
        };
        CompiledApp::new(app).unwrap()
    }

    fn cfg(app: &CompiledApp, mid: &str, at: &str) -> Configuration {
        app.with_default_routes(
            [
                ("src".into(), crate::app::Placement::new("cam", "s1")),
                ("mid".into(), crate::app::Placement::new(mid, at)),
                ("dst".into(), crate::app::Placement::new("view", "s2")),
            ]
            .into(),
        )
    }

    fn user() -> UserProfile {
        UserProfile {
            wishes: vec![
                WishFunction::new("bitrate", vec![(0.0, 0.0), (2000.0, 1.0)], 1.0),
                WishFunction::new("delay", vec![(0.0, 1.0), (200.0, 0.0)], 1.0),
            ],
            ..Default::default()
        }
    }

    #[test]
    fn context_event_updates() {
        let app = pipeline();
        let s = ContextState::initial(&app, BTreeMap::new());
        let s = apply_context_event(
            &s,
            &ContextEvent::new(10, ContextAction::SetBandwidth { link: "l".into(), value: 2000.0 }),
            &app,
        )
        .unwrap();
        assert_eq!(s.links[&LinkId::from("l")].bandwidth, 2000.0);
        assert_eq!(s.time, 10);
        let s = apply_context_event(
            &s,
            &ContextEvent::new(20, ContextAction::SetStationLoad { station: "s1".into(), value: 100.0 }),
            &app,
        )
        .unwrap();
        assert!(s.is_saturated(&"s1".into(), &app));
        let s = apply_context_event(
            &s,
            &ContextEvent::new(30, ContextAction::SetEnvironment { name: "language".into(), value: "fr".into() }),
            &app,
        )
        .unwrap();
        assert_eq!(s.environment["language"], "fr");
        assert!(matches!(
            apply_context_event(
                &s,
                &ContextEvent::new(40, ContextAction::SetLatency { link: "zz".into(), value: 1.0 }),
                &app
            ),
            Err(ContextError::UnknownEntity { .. })
        ));
        assert!(matches!(
            apply_context_event(
                &s,
                &ContextEvent::new(5, ContextAction::SetLatency { link: "l".into(), value: 1.0 }),
                &app
            ),
            Err(ContextError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn flows_follow_rules_and_routes() {
        let app = pipeline();
        let s = ContextState::initial(&app, BTreeMap::new());
        let f = propagate_flows(&cfg(&app, "copy", "s1"), &app, &s).unwrap();
        assert_eq!(f.delivered(&"sm".into(), &"bitrate".into()), Some(4000.0));
        assert_eq!(f.delivered(&"md".into(), &"bitrate".into()), Some(4000.0));
        assert_eq!(f.delivered(&"md".into(), &"delay".into()), Some(15.0));

        let f = propagate_flows(&cfg(&app, "half", "s1"), &app, &s).unwrap();
        assert_eq!(f.delivered(&"md".into(), &"bitrate".into()), Some(2000.0));
        assert_eq!(f.delivered(&"md".into(), &"delay".into()), Some(10.0 + 20.0 + 5.0));

        let narrow = apply_context_event(
            &s,
            &ContextEvent::new(0, ContextAction::SetBandwidth { link: "l".into(), value: 1500.0 }),
            &app,
        )
        .unwrap();
        let f = propagate_flows(&cfg(&app, "copy", "s1"), &app, &narrow).unwrap();
        assert_eq!(f.delivered(&"md".into(), &"bitrate".into()), Some(1500.0));
        assert_eq!(f.conducts[&ConductId::from("md")].emitted[&CharId::from("bitrate")], 4000.0);
    }

    #[test]
    fn saturation_slows_hosted_components() {
        let app = pipeline();
        let s = ContextState::initial(&app, BTreeMap::new());
        let sat = apply_context_event(
            &s,
            &ContextEvent::new(0, ContextAction::SetStationLoad { station: "s1".into(), value: 100.0 }),
            &app,
        )
        .unwrap();
        let c = cfg(&app, "half", "s1");
        let f = propagate_flows(&c, &app, &sat).unwrap();
        let rf = f.slots[&SlotId::from("mid")].resource_factor;
        assert!((rf - 100.0 / 150.0).abs() < 1e-12);
        let u = user();
        let free = predict_qos(&c, &app, &s, &u, &[]).unwrap();
        let busy = predict_qos(&c, &app, &sat, &u, &[]).unwrap();
        assert!(busy.contextual < free.contextual);
        assert_eq!(busy.intrinsic, free.intrinsic);
    }

    #[test]
    fn degradation_names_the_slot_then_conduct() {
        let app = pipeline();
        let u = user();
        let s = ContextState::initial(&app, BTreeMap::new());
        let c = cfg(&app, "half", "s1");
        let before = evaluate(&c, &app, &s, &u, &[]).unwrap();
        assert!(detect_reconfiguration_events(None, &before, &[], &app, &u, &Thresholds::default()).is_empty());
        assert!(detect_reconfiguration_events(Some(&before), &before, &[], &app, &u, &Thresholds::default()).is_empty());

        let sat = apply_context_event(
            &s,
            &ContextEvent::new(100, ContextAction::SetStationLoad { station: "s1".into(), value: 250.0 }),
            &app,
        )
        .unwrap();
        let after = evaluate(&c, &app, &sat, &u, &[]).unwrap();
        let ev = detect_reconfiguration_events(Some(&before), &after, &[], &app, &u, &Thresholds::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].culprit, Culprit::Slot("mid".into()));
        assert_eq!(ev[0].kind, EventKind::Degradation);

        let narrow = apply_context_event(
            &s,
            &ContextEvent::new(100, ContextAction::SetBandwidth { link: "l".into(), value: 500.0 }),
            &app,
        )
        .unwrap();
        let after = evaluate(&c, &app, &narrow, &u, &[]).unwrap();
        let ev = detect_reconfiguration_events(Some(&before), &after, &[], &app, &u, &Thresholds::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].culprit, Culprit::Conduct("md".into()));
        let back = detect_reconfiguration_events(Some(&after), &before, &[], &app, &u, &Thresholds::default());
        assert_eq!(back[0].kind, EventKind::Improvement);
    }

    #[test]
    fn spies_mark_and_report_changes() {
        let app = pipeline();
        let mut u = user();
        let mut a = app.app().clone();
        a.characteristics.push(ch(
            "language",
            CriterionKind::Contextual,
            NetworkEffect::None,
            Polarity::HigherIsBetter,
            None,
        ));
        a.groups[0].subgroups[0].characteristics.push("language".into());
        let app = CompiledApp::new(a).unwrap();
        u.wishes.push(WishFunction::new("language", vec![(0.0, 0.0), (1.0, 1.0)], 1.0));
        let spy = SpyAgent {
            id: "lang".into(),
            environment: "language".into(),
            characteristic: "language".into(),
            slot: "mid".into(),
            marks: [("en".into(), 1.0), ("fr".into(), 0.3)].into(),
            default_mark: 0.0,
            remedies: [("copy".into(), vec!["fr".into()])].into(),
        };
        let spies = [spy];
        let s = ContextState::initial(&app, [("language".into(), "en".into())].into());
        let c = cfg(&app, "half", "s1");
        let before = evaluate(&c, &app, &s, &u, &spies).unwrap();
        let fr = apply_context_event(
            &s,
            &ContextEvent::new(0, ContextAction::SetEnvironment { name: "language".into(), value: "fr".into() }),
            &app,
        )
        .unwrap();
        let after = evaluate(&c, &app, &fr, &u, &spies).unwrap();
        assert_eq!(after.report.characteristics[&CharId::from("language")], 0.3);
        let ev = detect_reconfiguration_events(Some(&before), &after, &spies, &app, &u, &Thresholds::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Spy);
        assert_eq!(ev[0].culprit, Culprit::Slot("mid".into()));
        let remedied = evaluate(&cfg(&app, "copy", "s1"), &app, &fr, &u, &spies).unwrap();
        assert_eq!(remedied.report.characteristics[&CharId::from("language")], 1.0);
    }
}
