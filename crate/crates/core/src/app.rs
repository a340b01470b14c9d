//! Application structure and the configuration space.
//!
//! An [`Application`] is the plain description (as found in scenario files).
//! [`CompiledApp`] checks it and precomputes the lookups every other module
//! needs: slot ownership, conduct adjacency, a topological slot order and the
//! candidate routes between every pair of stations.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CharId, ConductId, GroupId, LinkId, PortId, SlotId, StationId, SubGroupId, VariantId};
use crate::qos::{evaluate_hierarchy, Characteristic, CriterionKind, QosError, UserProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unknown {kind} `{id}` referenced by {by}")]
    UnknownReference { kind: &'static str, id: String, by: String },
    #[error("{0}")]
    Constraint(String),
    #[error("conduct graph contains a cycle through slot `{0}`")]
    CyclicTopology(SlotId),
    #[error("configuration space is empty: {0}")]
    EmptySpace(String),
    #[error("unknown culprit `{0}`")]
    UnknownCulprit(String),
    #[error(transparent)]
    Qos(#[from] QosError),
}

/// How a variant's CPU share scales an output value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceScaling {
    #[default]
    None,
    /// `clamp(rf * (a*in + b), lo, hi)`
    Scale,
    /// `clamp(a*in + b/rf, lo, hi)`; the offset is a processing time.
    Stretch,
}

/// Affine-with-clamp rule `clamp(a*in + b, lo, hi)`, optionally modulated by
/// the variant's resource factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRule {
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "max_f64")]
    pub hi: f64,
    #[serde(default)]
    pub resource: ResourceScaling,
}

fn one() -> f64 {
    1.0
}

fn max_f64() -> f64 {
    f64::MAX
}

impl TransferRule {
    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0, lo: 0.0, hi: f64::MAX, resource: ResourceScaling::None }
    }

    pub fn constant(value: f64) -> Self {
        Self { a: 0.0, b: value, lo: 0.0, hi: f64::MAX, resource: ResourceScaling::None }
    }

    pub fn with_resource(mut self, resource: ResourceScaling) -> Self {
        self.resource = resource;
        self
    }

    pub fn apply(&self, input: f64, resource_factor: f64) -> f64 {
        let raw = match self.resource {
            ResourceScaling::None => self.a * input + self.b,
            ResourceScaling::Scale => resource_factor * (self.a * input + self.b),
            ResourceScaling::Stretch => {
                if resource_factor <= 0.0 {
                    return self.hi;
                }
                self.a * input + self.b / resource_factor
            }
        };
        raw.clamp(self.lo, self.hi)
    }
}

/// Rules per output port and characteristic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransferFunction(pub BTreeMap<PortId, BTreeMap<CharId, TransferRule>>);

impl TransferFunction {
    pub fn rule(&self, port: &PortId, ch: &CharId) -> Option<&TransferRule> {
        self.0.get(port).and_then(|rules| rules.get(ch))
    }

    pub fn set(&mut self, port: impl Into<PortId>, ch: impl Into<CharId>, rule: TransferRule) {
        self.0.entry(port.into()).or_default().insert(ch.into(), rule);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentVariant {
    pub id: VariantId,
    /// Larger is more powerful; unique within a slot.
    pub power_rank: i64,
    #[serde(default)]
    pub cpu_demand: f64,
    /// Context-free marks this variant yields for intrinsic characteristics.
    #[serde(default)]
    pub intrinsic: BTreeMap<CharId, f64>,
    #[serde(default)]
    pub transfer: TransferFunction,
}

/// An Elementary Processor: a place for one component variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorSlot {
    pub id: SlotId,
    #[serde(default)]
    pub inputs: Vec<PortId>,
    #[serde(default)]
    pub outputs: Vec<PortId>,
    /// Stations allowed to host this slot; all stations when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<StationId>>,
    pub variants: Vec<ComponentVariant>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub slot: SlotId,
    pub port: PortId,
}

impl Endpoint {
    pub fn new(slot: impl Into<SlotId>, port: impl Into<PortId>) -> Self {
        Self { slot: slot.into(), port: port.into() }
    }
}

/// Carrier of a data flow between two slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conduct {
    pub id: ConductId,
    pub source: Endpoint,
    pub sink: Endpoint,
    /// Characteristics carried by the flow.
    #[serde(default)]
    pub carries: Vec<CharId>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub loopback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubGroup {
    pub id: SubGroupId,
    /// Characteristics evaluated for this Sub-Group.
    #[serde(default)]
    pub characteristics: Vec<CharId>,
    pub slots: Vec<ProcessorSlot>,
    #[serde(default)]
    pub conducts: Vec<Conduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    pub id: GroupId,
    pub subgroups: Vec<SubGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Station {
    pub id: StationId,
    pub capacity: f64,
    #[serde(default)]
    pub base_load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub id: LinkId,
    pub endpoints: (StationId, StationId),
    /// kbit/s
    pub bandwidth: f64,
    /// ms
    pub latency: f64,
}

impl Link {
    pub fn touches(&self, s: &StationId) -> bool {
        &self.endpoints.0 == s || &self.endpoints.1 == s
    }

    pub fn other(&self, s: &StationId) -> Option<&StationId> {
        if &self.endpoints.0 == s {
            Some(&self.endpoints.1)
        } else if &self.endpoints.1 == s {
            Some(&self.endpoints.0)
        } else {
            None
        }
    }
}

/// A designated multi-hop route between two stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteDecl {
    pub between: (StationId, StationId),
    pub links: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Application {
    pub characteristics: Vec<Characteristic>,
    pub groups: Vec<Group>,
    pub stations: Vec<Station>,
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub routes: Vec<RouteDecl>,
}

impl Application {
    pub fn characteristic(&self, id: &CharId) -> Option<&Characteristic> {
        self.characteristics.iter().find(|c| &c.id == id)
    }

    pub fn subgroups(&self) -> impl Iterator<Item = (&Group, &SubGroup)> {
        self.groups.iter().flat_map(|g| g.subgroups.iter().map(move |sg| (g, sg)))
    }

    pub fn slots(&self) -> impl Iterator<Item = &ProcessorSlot> {
        self.subgroups().flat_map(|(_, sg)| sg.slots.iter())
    }

    pub fn conducts(&self) -> impl Iterator<Item = &Conduct> {
        self.subgroups().flat_map(|(_, sg)| sg.conducts.iter())
    }

    pub fn station(&self, id: &StationId) -> Option<&Station> {
        self.stations.iter().find(|s| &s.id == id)
    }

    pub fn link(&self, id: &LinkId) -> Option<&Link> {
        self.links.iter().find(|l| &l.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub variant: VariantId,
    pub station: StationId,
}

impl Placement {
    pub fn new(variant: impl Into<VariantId>, station: impl Into<StationId>) -> Self {
        Self { variant: variant.into(), station: station.into() }
    }
}

/// A complete binding of slots to (variant, station) and conducts to routes.
///
/// The derived order is the enumeration order: slot by slot, variant id then
/// station id, then routes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Configuration {
    pub placement: BTreeMap<SlotId, Placement>,
    /// Ordered links per conduct; empty when both ends are co-located.
    #[serde(default)]
    pub routes: BTreeMap<ConductId, Vec<LinkId>>,
}

impl Configuration {
    pub fn place(
        mut self,
        slot: impl Into<SlotId>,
        variant: impl Into<VariantId>,
        station: impl Into<StationId>,
    ) -> Self {
        self.placement.insert(slot.into(), Placement::new(variant, station));
        self
    }

    pub fn host(&self, slot: &SlotId) -> Option<&StationId> {
        self.placement.get(slot).map(|p| &p.station)
    }

    pub fn route(&self, conduct: &ConductId) -> &[LinkId] {
        self.routes.get(conduct).map_or(&[], |r| r.as_slice())
    }

    /// Canonical text form, stable across runs.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (slot, p) in &self.placement {
            let _ = write!(out, "{slot}={}@{};", p.variant, p.station);
        }
        for (conduct, route) in &self.routes {
            if route.is_empty() {
                continue;
            }
            let _ = write!(out, "{conduct}:");
            for (i, link) in route.iter().enumerate() {
                if i > 0 {
                    out.push('+');
                }
                out.push_str(link.as_str());
            }
            out.push(';');
        }
        out
    }

    /// Short stable identifier: FNV-1a 64 of the canonical form.
    pub fn id(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.canonical().bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// Things `validate_configuration` can find wrong.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    MissingSlot { slot: SlotId },
    UnknownSlot { slot: SlotId },
    InadmissibleVariant { slot: SlotId, variant: VariantId },
    UnknownStation { slot: SlotId, station: StationId },
    StationNotAllowed { slot: SlotId, station: StationId },
    UnknownConduct { conduct: ConductId },
    UnknownLink { conduct: ConductId, link: LinkId },
    DisconnectedRoute { conduct: ConductId },
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Violation::MissingSlot { slot } => write!(f, "slot `{slot}` is not placed"),
            Violation::UnknownSlot { slot } => write!(f, "unknown slot `{slot}`"),
            Violation::InadmissibleVariant { slot, variant } => {
                write!(f, "inadmissible variant `{variant}` for slot `{slot}`")
            }
            Violation::UnknownStation { slot, station } => {
                write!(f, "slot `{slot}` placed on unknown station `{station}`")
            }
            Violation::StationNotAllowed { slot, station } => {
                write!(f, "slot `{slot}` may not be hosted on station `{station}`")
            }
            Violation::UnknownConduct { conduct } => write!(f, "route for unknown conduct `{conduct}`"),
            Violation::UnknownLink { conduct, link } => write!(f, "route of `{conduct}` uses unknown link `{link}`"),
            Violation::DisconnectedRoute { conduct } => write!(f, "disconnected route for conduct `{conduct}`"),
        }
    }
}

/// A slot or a conduct named as the origin of a reconfiguration event.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Culprit {
    Slot(SlotId),
    Conduct(ConductId),
}

impl core::fmt::Display for Culprit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Culprit::Slot(s) => write!(f, "slot:{s}"),
            Culprit::Conduct(c) => write!(f, "conduct:{c}"),
        }
    }
}

/// One step of a reconfiguration plan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Replace {
        slot: SlotId,
        variant: VariantId,
    },
    /// Moving resets the routes of adjacent conducts to their default route.
    Move {
        slot: SlotId,
        station: StationId,
    },
    Reroute {
        conduct: ConductId,
        route: Vec<LinkId>,
    },
    Add {
        slot: SlotId,
        variant: VariantId,
        station: StationId,
    },
    Remove {
        slot: SlotId,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Replace { .. } => "replace",
            Action::Move { .. } => "move",
            Action::Reroute { .. } => "reroute",
            Action::Add { .. } => "add",
            Action::Remove { .. } => "remove",
        }
    }
}

/// Candidate routes per unordered station pair.
type RouteTable = BTreeMap<(StationId, StationId), Vec<Vec<LinkId>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotInfo {
    pub slot: ProcessorSlot,
    pub subgroup: SubGroupId,
    pub group: GroupId,
    /// Sorted ids of stations that may host the slot.
    pub stations: Vec<StationId>,
    pub incoming: Vec<ConductId>,
    pub outgoing: Vec<ConductId>,
}

impl SlotInfo {
    pub fn variant(&self, id: &VariantId) -> Option<&ComponentVariant> {
        self.slot.variants.iter().find(|v| &v.id == id)
    }

    /// `(variant, station)` choices in enumeration order.
    pub fn choices(&self) -> Vec<Placement> {
        let mut variants: Vec<&VariantId> = self.slot.variants.iter().map(|v| &v.id).collect();
        variants.sort();
        let mut out = Vec::with_capacity(variants.len() * self.stations.len());
        for v in variants {
            for s in &self.stations {
                out.push(Placement { variant: v.clone(), station: s.clone() });
            }
        }
        out
    }
}

/// A checked application with precomputed lookups.
#[derive(Debug, Clone)]
pub struct CompiledApp {
    app: Application,
    slots: BTreeMap<SlotId, SlotInfo>,
    conducts: BTreeMap<ConductId, Conduct>,
    /// Slots in a deterministic topological order of the conduct graph.
    order: Vec<SlotId>,
    routes: RouteTable,
    subgroup_slots: BTreeMap<SubGroupId, Vec<SlotId>>,
}

fn pair(a: &StationId, b: &StationId) -> (StationId, StationId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl CompiledApp {
    /// Checks structural and referential integrity of the application.
    ///
    /// Empty variant lists are accepted here so that enumeration can report
    /// them as an empty space.
    pub fn new(app: Application) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for c in &app.characteristics {
            if !seen.insert(c.id.as_str()) {
                return Err(ModelError::DuplicateId { kind: "characteristic", id: c.id.0.clone() });
            }
        }
        let known_char = |id: &CharId, by: &str| -> Result<(), ModelError> {
            if app.characteristic(id).is_some() {
                Ok(())
            } else {
                Err(ModelError::UnknownReference { kind: "characteristic", id: id.0.clone(), by: String::from(by) })
            }
        };

        let mut stations = BTreeSet::new();
        for s in &app.stations {
            if !stations.insert(s.id.clone()) {
                return Err(ModelError::DuplicateId { kind: "station", id: s.id.0.clone() });
            }
            if !(s.capacity.is_finite() && s.capacity > 0.0) {
                return Err(ModelError::Constraint(format!("station `{}` needs a positive capacity", s.id)));
            }
            if !(s.base_load >= 0.0 && s.base_load <= s.capacity) {
                return Err(ModelError::Constraint(format!("station `{}` base load outside [0, capacity]", s.id)));
            }
        }
        if stations.is_empty() {
            return Err(ModelError::EmptySpace(String::from("no station")));
        }

        let mut link_ids = BTreeSet::new();
        for l in &app.links {
            if !link_ids.insert(l.id.clone()) {
                return Err(ModelError::DuplicateId { kind: "link", id: l.id.0.clone() });
            }
            for s in [&l.endpoints.0, &l.endpoints.1] {
                if !stations.contains(s) {
                    return Err(ModelError::UnknownReference {
                        kind: "station",
                        id: s.0.clone(),
                        by: format!("link `{}`", l.id),
                    });
                }
            }
            if l.endpoints.0 == l.endpoints.1 {
                return Err(ModelError::Constraint(format!("link `{}` endpoints must differ", l.id)));
            }
            if !(l.bandwidth >= 0.0 && l.latency >= 0.0) {
                return Err(ModelError::Constraint(format!("link `{}` has negative bandwidth or latency", l.id)));
            }
        }

        let mut slots = BTreeMap::new();
        let mut conducts = BTreeMap::new();
        let mut subgroup_slots = BTreeMap::new();
        let mut groups_seen = BTreeSet::new();
        let mut subgroups_seen = BTreeSet::new();
        for group in &app.groups {
            if !groups_seen.insert(group.id.clone()) {
                return Err(ModelError::DuplicateId { kind: "group", id: group.id.0.clone() });
            }
            for sg in &group.subgroups {
                if !subgroups_seen.insert(sg.id.clone()) {
                    return Err(ModelError::DuplicateId { kind: "sub-group", id: sg.id.0.clone() });
                }
                for c in &sg.characteristics {
                    known_char(c, &format!("sub-group `{}`", sg.id))?;
                }
                let mut ids = Vec::new();
                for slot in &sg.slots {
                    let allowed = match &slot.stations {
                        None => stations.iter().cloned().collect::<Vec<_>>(),
                        Some(list) => {
                            let mut v = Vec::with_capacity(list.len());
                            for s in list {
                                if !stations.contains(s) {
                                    return Err(ModelError::UnknownReference {
                                        kind: "station",
                                        id: s.0.clone(),
                                        by: format!("slot `{}`", slot.id),
                                    });
                                }
                                v.push(s.clone());
                            }
                            v.sort();
                            v.dedup();
                            v
                        }
                    };
                    let mut vids = BTreeSet::new();
                    let mut ranks = BTreeSet::new();
                    for v in &slot.variants {
                        if !vids.insert(v.id.clone()) {
                            return Err(ModelError::DuplicateId { kind: "variant", id: v.id.0.clone() });
                        }
                        if !ranks.insert(v.power_rank) {
                            return Err(ModelError::Constraint(format!(
                                "power rank {} repeated in slot `{}`",
                                v.power_rank, slot.id
                            )));
                        }
                        if !(v.cpu_demand.is_finite() && v.cpu_demand >= 0.0) {
                            return Err(ModelError::Constraint(format!(
                                "variant `{}` has a negative cpu demand",
                                v.id
                            )));
                        }
                        for (cid, mark) in &v.intrinsic {
                            known_char(cid, &format!("variant `{}`", v.id))?;
                            let kind = app.characteristic(cid).map(|c| c.kind);
                            if kind != Some(CriterionKind::Intrinsic) {
                                return Err(ModelError::Constraint(format!(
                                    "variant `{}` contributes to non-intrinsic characteristic `{cid}`",
                                    v.id
                                )));
                            }
                            if !(0.0..=1.0).contains(mark) {
                                return Err(ModelError::Constraint(format!(
                                    "variant `{}` contribution to `{cid}` outside [0, 1]",
                                    v.id
                                )));
                            }
                        }
                        for (port, rules) in &v.transfer.0 {
                            if !slot.outputs.contains(port) {
                                return Err(ModelError::UnknownReference {
                                    kind: "output port",
                                    id: port.0.clone(),
                                    by: format!("variant `{}`", v.id),
                                });
                            }
                            for (cid, rule) in rules {
                                known_char(cid, &format!("variant `{}`", v.id))?;
                                if !(rule.lo.is_finite() && rule.hi.is_finite() && rule.lo <= rule.hi) {
                                    return Err(ModelError::Constraint(format!(
                                        "variant `{}` rule for `{cid}` has invalid clamp bounds",
                                        v.id
                                    )));
                                }
                                if !(rule.a.is_finite() && rule.b.is_finite()) {
                                    return Err(ModelError::Constraint(format!(
                                        "variant `{}` rule for `{cid}` is not finite",
                                        v.id
                                    )));
                                }
                            }
                        }
                    }
                    let info = SlotInfo {
                        slot: slot.clone(),
                        subgroup: sg.id.clone(),
                        group: group.id.clone(),
                        stations: allowed,
                        incoming: Vec::new(),
                        outgoing: Vec::new(),
                    };
                    if slots.insert(slot.id.clone(), info).is_some() {
                        return Err(ModelError::DuplicateId { kind: "slot", id: slot.id.0.clone() });
                    }
                    ids.push(slot.id.clone());
                }
                ids.sort();
                subgroup_slots.insert(sg.id.clone(), ids);
                for c in &sg.conducts {
                    if conducts.insert(c.id.clone(), c.clone()).is_some() {
                        return Err(ModelError::DuplicateId { kind: "conduct", id: c.id.0.clone() });
                    }
                }
            }
        }

        for c in conducts.values() {
            let by = format!("conduct `{}`", c.id);
            for (ep, output) in [(&c.source, true), (&c.sink, false)] {
                let Some(info) = slots.get(&ep.slot) else {
                    return Err(ModelError::UnknownReference { kind: "slot", id: ep.slot.0.clone(), by });
                };
                let ports = if output { &info.slot.outputs } else { &info.slot.inputs };
                if !ports.contains(&ep.port) {
                    return Err(ModelError::UnknownReference {
                        kind: if output { "output port" } else { "input port" },
                        id: ep.port.0.clone(),
                        by,
                    });
                }
            }
            if c.source.slot == c.sink.slot && !c.loopback {
                return Err(ModelError::Constraint(format!(
                    "conduct `{}` connects slot `{}` to itself without being a loopback",
                    c.id, c.source.slot
                )));
            }
            for ch in &c.carries {
                known_char(ch, &by)?;
                let src = &slots[&c.source.slot];
                for v in &src.slot.variants {
                    if v.transfer.rule(&c.source.port, ch).is_none() {
                        return Err(ModelError::Constraint(format!(
                            "variant `{}` has no rule for `{ch}` on port `{}` required by conduct `{}`",
                            v.id, c.source.port, c.id
                        )));
                    }
                }
            }
        }
        for c in conducts.values() {
            if c.loopback {
                continue;
            }
            if let Some(s) = slots.get_mut(&c.source.slot) {
                s.outgoing.push(c.id.clone());
            }
            if let Some(s) = slots.get_mut(&c.sink.slot) {
                s.incoming.push(c.id.clone());
            }
        }

        for ch in &app.characteristics {
            if let Some(probe) = &ch.probe {
                if ch.kind != CriterionKind::Contextual {
                    return Err(ModelError::Constraint(format!(
                        "intrinsic characteristic `{}` cannot have a probe",
                        ch.id
                    )));
                }
                let Some(c) = conducts.get(probe) else {
                    return Err(ModelError::UnknownReference {
                        kind: "conduct",
                        id: probe.0.clone(),
                        by: format!("characteristic `{}`", ch.id),
                    });
                };
                if !c.carries.contains(&ch.id) {
                    return Err(ModelError::Constraint(format!(
                        "probe conduct `{probe}` does not carry characteristic `{}`",
                        ch.id
                    )));
                }
            }
        }

        // Kahn's algorithm with an ordered ready set keeps the order stable.
        let mut indeg: BTreeMap<&SlotId, usize> = slots.keys().map(|k| (k, 0)).collect();
        for c in conducts.values().filter(|c| !c.loopback) {
            *indeg.get_mut(&c.sink.slot).expect("checked above") += 1;
        }
        let mut ready: BTreeSet<&SlotId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::with_capacity(slots.len());
        while let Some(next) = ready.pop_first() {
            order.push(next.clone());
            for cid in &slots[next].outgoing {
                let sink = &conducts[cid].sink.slot;
                let d = indeg.get_mut(sink).expect("checked above");
                *d -= 1;
                if *d == 0 {
                    ready.insert(sink);
                }
            }
        }
        if order.len() != slots.len() {
            let stuck = indeg.iter().find(|(_, &d)| d > 0).map(|(k, _)| (*k).clone()).unwrap_or_default();
            return Err(ModelError::CyclicTopology(stuck));
        }

        let routes = Self::route_table(&app, &stations)?;

        Ok(Self { app, slots, conducts, order, routes, subgroup_slots })
    }

    fn route_table(app: &Application, stations: &BTreeSet<StationId>) -> Result<RouteTable, ModelError> {
        let mut table = RouteTable::new();
        for l in &app.links {
            table.entry(pair(&l.endpoints.0, &l.endpoints.1)).or_default().push(vec![l.id.clone()]);
        }
        for decl in &app.routes {
            let by = format!("route {}-{}", decl.between.0, decl.between.1);
            for s in [&decl.between.0, &decl.between.1] {
                if !stations.contains(s) {
                    return Err(ModelError::UnknownReference { kind: "station", id: s.0.clone(), by });
                }
            }
            for l in &decl.links {
                if app.link(l).is_none() {
                    return Err(ModelError::UnknownReference { kind: "link", id: l.0.clone(), by });
                }
            }
            if !route_connects(app, &decl.links, &decl.between.0, &decl.between.1) {
                return Err(ModelError::Constraint(format!("{by} does not connect its stations")));
            }
            let mut links = decl.links.clone();
            if decl.between.0 > decl.between.1 {
                links.reverse();
            }
            table.entry(pair(&decl.between.0, &decl.between.1)).or_default().push(links);
        }
        // Pairs without a direct link or a declared route get the shortest
        // hop path found by breadth-first search.
        let list: Vec<&StationId> = stations.iter().collect();
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                let key = pair(a, b);
                if table.contains_key(&key) {
                    continue;
                }
                if let Some(path) = shortest_path(app, a, b) {
                    table.insert(key, vec![path]);
                }
            }
        }
        for routes in table.values_mut() {
            routes.sort();
            routes.dedup();
        }
        Ok(table)
    }

    pub fn app(&self) -> &Application {
        &self.app
    }

    pub fn slot(&self, id: &SlotId) -> Option<&SlotInfo> {
        self.slots.get(id)
    }

    pub fn slot_infos(&self) -> impl Iterator<Item = &SlotInfo> {
        self.slots.values()
    }

    pub fn slot_ids(&self) -> impl Iterator<Item = &SlotId> {
        self.slots.keys()
    }

    pub fn conduct(&self, id: &ConductId) -> Option<&Conduct> {
        self.conducts.get(id)
    }

    pub fn conduct_list(&self) -> impl Iterator<Item = &Conduct> {
        self.conducts.values()
    }

    pub fn topological_order(&self) -> &[SlotId] {
        &self.order
    }

    pub fn subgroup_slots(&self, sg: &SubGroupId) -> &[SlotId] {
        self.subgroup_slots.get(sg).map_or(&[], |v| v.as_slice())
    }

    pub fn characteristic(&self, id: &CharId) -> Option<&Characteristic> {
        self.app.characteristic(id)
    }

    /// Candidate routes between two stations, oriented from `from` to `to`.
    /// Co-located ends have the single empty route.
    pub fn route_candidates(&self, from: &StationId, to: &StationId) -> Vec<Vec<LinkId>> {
        if from == to {
            return vec![Vec::new()];
        }
        let Some(routes) = self.routes.get(&pair(from, to)) else {
            return Vec::new();
        };
        if from < to {
            routes.clone()
        } else {
            routes
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.reverse();
                    r
                })
                .collect()
        }
    }

    pub fn default_route(&self, from: &StationId, to: &StationId) -> Vec<LinkId> {
        self.route_candidates(from, to).into_iter().next().unwrap_or_default()
    }

    /// Conducts with `slot` at either end (loopbacks excluded).
    pub fn adjacent_conducts(&self, slot: &SlotId) -> Vec<ConductId> {
        let Some(info) = self.slots.get(slot) else {
            return Vec::new();
        };
        let mut v: Vec<ConductId> = info.incoming.iter().chain(info.outgoing.iter()).cloned().collect();
        v.sort();
        v.dedup();
        v
    }

    /// Upper bound of the configuration-space size, saturating.
    pub fn space_size_bound(&self) -> u128 {
        let mut n: u128 = 1;
        for info in self.slots.values() {
            n = n.saturating_mul((info.slot.variants.len() * info.stations.len()) as u128);
        }
        for c in self.conducts.values().filter(|c| !c.loopback) {
            let max = self.routes.values().map(Vec::len).max().unwrap_or(1).max(1);
            let a = &self.slots[&c.source.slot].stations;
            let b = &self.slots[&c.sink.slot].stations;
            let can_split = a.len() > 1 || b.len() > 1 || a != b;
            if can_split {
                n = n.saturating_mul(max as u128);
            }
        }
        n
    }

    /// Configuration with the given placement and default routes.
    pub fn with_default_routes(&self, placement: BTreeMap<SlotId, Placement>) -> Configuration {
        let mut cfg = Configuration { placement, routes: BTreeMap::new() };
        self.reset_routes(&mut cfg);
        cfg
    }

    fn reset_routes(&self, cfg: &mut Configuration) {
        cfg.routes.clear();
        for c in self.conducts.values().filter(|c| !c.loopback) {
            if let (Some(a), Some(b)) = (cfg.host(&c.source.slot), cfg.host(&c.sink.slot)) {
                let r = self.default_route(a, b);
                cfg.routes.insert(c.id.clone(), r);
            }
        }
    }

    fn reset_adjacent_routes(&self, cfg: &mut Configuration, slot: &SlotId) {
        for cid in self.adjacent_conducts(slot) {
            let c = &self.conducts[&cid];
            if let (Some(a), Some(b)) = (cfg.host(&c.source.slot), cfg.host(&c.sink.slot)) {
                let r = self.default_route(a, b);
                cfg.routes.insert(cid, r);
            }
        }
    }

    /// Route alternatives for conducts adjacent to `slots`, given the
    /// placement in `cfg`; every combination yields one configuration.
    fn route_variants(&self, cfg: &Configuration, conducts: &[ConductId]) -> Vec<Configuration> {
        let mut options: Vec<(ConductId, Vec<Vec<LinkId>>)> = Vec::with_capacity(conducts.len());
        for cid in conducts {
            let c = &self.conducts[cid];
            let (Some(a), Some(b)) = (cfg.host(&c.source.slot), cfg.host(&c.sink.slot)) else {
                return Vec::new();
            };
            let cands = self.route_candidates(a, b);
            if cands.is_empty() {
                return Vec::new();
            }
            options.push((cid.clone(), cands));
        }
        let mut out = Vec::new();
        let mut idx = vec![0usize; options.len()];
        loop {
            let mut next = cfg.clone();
            for (k, (cid, cands)) in options.iter().enumerate() {
                next.routes.insert(cid.clone(), cands[idx[k]].clone());
            }
            out.push(next);
            if !advance(&mut idx, |k| options[k].1.len()) {
                break;
            }
        }
        out
    }
}

/// Odometer increment with the last position fastest. Returns false on wrap.
fn advance(idx: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < radix(k) {
            return true;
        }
        idx[k] = 0;
    }
    false
}

fn route_connects(app: &Application, links: &[LinkId], from: &StationId, to: &StationId) -> bool {
    let mut at = from.clone();
    for id in links {
        let Some(link) = app.link(id) else { return false };
        match link.other(&at) {
            Some(next) => at = next.clone(),
            None => return false,
        }
    }
    &at == to
}

fn shortest_path(app: &Application, from: &StationId, to: &StationId) -> Option<Vec<LinkId>> {
    let mut links: Vec<&Link> = app.links.iter().collect();
    links.sort_by(|a, b| a.id.cmp(&b.id));
    let mut prev: BTreeMap<StationId, (StationId, LinkId)> = BTreeMap::new();
    let mut visited = BTreeSet::new();
    visited.insert(from.clone());
    let mut queue = VecDeque::new();
    queue.push_back(from.clone());
    while let Some(at) = queue.pop_front() {
        if &at == to {
            break;
        }
        for l in &links {
            if let Some(next) = l.other(&at) {
                if visited.insert(next.clone()) {
                    prev.insert(next.clone(), (at.clone(), l.id.clone()));
                    queue.push_back(next.clone());
                }
            }
        }
    }
    if !visited.contains(to) {
        return None;
    }
    let mut path = Vec::new();
    let mut at = to.clone();
    while &at != from {
        let (p, l) = prev.get(&at)?.clone();
        path.push(l);
        at = p;
    }
    path.reverse();
    Some(path)
}

/// Lists every invariant violation of `cfg` against `app`.
pub fn validate_configuration(cfg: &Configuration, app: &CompiledApp) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (slot, info) in &app.slots {
        match cfg.placement.get(slot) {
            None => out.push(Violation::MissingSlot { slot: slot.clone() }),
            Some(p) => {
                if info.variant(&p.variant).is_none() {
                    out.push(Violation::InadmissibleVariant { slot: slot.clone(), variant: p.variant.clone() });
                }
                if app.app.station(&p.station).is_none() {
                    out.push(Violation::UnknownStation { slot: slot.clone(), station: p.station.clone() });
                } else if !info.stations.contains(&p.station) {
                    out.push(Violation::StationNotAllowed { slot: slot.clone(), station: p.station.clone() });
                }
            }
        }
    }
    for slot in cfg.placement.keys() {
        if !app.slots.contains_key(slot) {
            out.push(Violation::UnknownSlot { slot: slot.clone() });
        }
    }
    for cid in cfg.routes.keys() {
        if !app.conducts.contains_key(cid) {
            out.push(Violation::UnknownConduct { conduct: cid.clone() });
        }
    }
    for c in app.conducts.values().filter(|c| !c.loopback) {
        let (Some(a), Some(b)) = (cfg.host(&c.source.slot), cfg.host(&c.sink.slot)) else {
            continue;
        };
        let route = cfg.route(&c.id);
        let mut unknown = false;
        for l in route {
            if app.app.link(l).is_none() {
                out.push(Violation::UnknownLink { conduct: c.id.clone(), link: l.clone() });
                unknown = true;
            }
        }
        if !unknown && !route_connects(&app.app, route, a, b) {
            out.push(Violation::DisconnectedRoute { conduct: c.id.clone() });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Streams every valid configuration exactly once in enumeration order.
pub struct ConfigurationStream<'a> {
    app: &'a CompiledApp,
    slots: Vec<(SlotId, Vec<Placement>)>,
    conducts: Vec<ConductId>,
    slot_idx: Vec<usize>,
    pending: VecDeque<Configuration>,
    done: bool,
}

impl Iterator for ConfigurationStream<'_> {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        loop {
            if let Some(cfg) = self.pending.pop_front() {
                return Some(cfg);
            }
            if self.done {
                return None;
            }
            let placement: BTreeMap<SlotId, Placement> = self
                .slots
                .iter()
                .zip(&self.slot_idx)
                .map(|((id, choices), &i)| (id.clone(), choices[i].clone()))
                .collect();
            let base = Configuration { placement, routes: BTreeMap::new() };
            self.pending.extend(self.app.route_variants(&base, &self.conducts));
            let slots = &self.slots;
            if !advance(&mut self.slot_idx, |k| slots[k].1.len()) {
                self.done = true;
            }
        }
    }
}

pub fn enumerate_configurations(app: &CompiledApp) -> Result<ConfigurationStream<'_>, ModelError> {
    let mut slots = Vec::with_capacity(app.slots.len());
    for (id, info) in &app.slots {
        if info.slot.variants.is_empty() {
            return Err(ModelError::EmptySpace(format!("slot `{id}` has no admissible variant")));
        }
        if info.stations.is_empty() {
            return Err(ModelError::EmptySpace(format!("slot `{id}` has no admissible station")));
        }
        slots.push((id.clone(), info.choices()));
    }
    let conducts = app.conducts.values().filter(|c| !c.loopback).map(|c| c.id.clone()).collect();
    Ok(ConfigurationStream {
        app,
        slot_idx: vec![0; slots.len()],
        slots,
        conducts,
        pending: VecDeque::new(),
        done: false,
    })
}

/// Per-characteristic intrinsic values of a configuration: the weakest
/// contribution among chosen variants, 1 when no variant contributes.
pub fn intrinsic_values(cfg: &Configuration, app: &CompiledApp) -> BTreeMap<CharId, f64> {
    let mut values: BTreeMap<CharId, f64> = app
        .app
        .characteristics
        .iter()
        .filter(|c| c.kind == CriterionKind::Intrinsic)
        .map(|c| (c.id.clone(), 1.0))
        .collect();
    let mut seen: BTreeSet<&CharId> = BTreeSet::new();
    for (slot, p) in &cfg.placement {
        let Some(v) = app.slot(slot).and_then(|i| i.variant(&p.variant)) else { continue };
        for (cid, mark) in &v.intrinsic {
            if let Some(cur) = values.get_mut(cid) {
                *cur = if seen.insert(cid) { *mark } else { cur.min(*mark) };
            }
        }
    }
    values
}

/// Application-level intrinsic criterion mark; context-free, so the same
/// for every placement of a given variant mix.
pub fn intrinsic_mark_of(cfg: &Configuration, app: &CompiledApp, user: &UserProfile) -> Result<f64, ModelError> {
    let values = intrinsic_values(cfg, app);
    let mut marks = BTreeMap::new();
    for ch in &app.app.characteristics {
        let Some(wish) = user.wish(&ch.id) else { continue };
        let m = match ch.kind {
            CriterionKind::Intrinsic => wish.mark(values[&ch.id]),
            CriterionKind::Contextual => 1.0,
        };
        marks.insert(ch.id.clone(), m);
    }
    Ok(evaluate_hierarchy(&app.app, &marks, user)?.application.intrinsic)
}

/// Configurations sharing one intrinsic mark up to epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    /// Mark of the founding (highest) member.
    pub intrinsic_mark: f64,
    pub members: Vec<Configuration>,
}

/// Greedy clustering of `(item, mark)` pairs by descending mark. An item joins
/// the first family whose index mark is within `eps`, or founds a new one.
/// Ties keep input order. Returns `(index mark, member indices)`.
pub fn cluster_by_mark(marks: &[f64], eps: f64) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = (0..marks.len()).collect();
    order.sort_by(|&a, &b| marks[b].total_cmp(&marks[a]).then(a.cmp(&b)));
    let mut families: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in order {
        match families.iter_mut().find(|(index, _)| (index - marks[i]).abs() <= eps) {
            Some((_, members)) => members.push(i),
            None => families.push((marks[i], vec![i])),
        }
    }
    families
}

pub fn partition_into_families(
    configs: &[Configuration],
    app: &CompiledApp,
    user: &UserProfile,
    eps_intrinsic: f64,
) -> Result<Vec<Family>, ModelError> {
    let marks = configs.iter().map(|c| intrinsic_mark_of(c, app, user)).collect::<Result<Vec<_>, _>>()?;
    Ok(cluster_by_mark(&marks, eps_intrinsic)
        .into_iter()
        .map(|(mark, members)| Family {
            intrinsic_mark: mark,
            members: members.into_iter().map(|i| configs[i].clone()).collect(),
        })
        .collect())
}

/// Valid configurations differing from `cfg` only at the culprit.
pub fn culprit_neighbors(
    cfg: &Configuration,
    culprit: &Culprit,
    app: &CompiledApp,
) -> Result<Vec<Configuration>, ModelError> {
    match culprit {
        Culprit::Slot(slot) => {
            let info = app.slot(slot).ok_or_else(|| ModelError::UnknownCulprit(slot.0.clone()))?;
            let current = cfg.placement.get(slot);
            let adjacent = app.adjacent_conducts(slot);
            let mut out = Vec::new();
            for choice in info.choices() {
                if Some(&choice) == current {
                    continue;
                }
                let mut next = cfg.clone();
                let moved = current.map(|p| p.station != choice.station).unwrap_or(true);
                next.placement.insert(slot.clone(), choice);
                if moved {
                    out.extend(app.route_variants(&next, &adjacent));
                } else {
                    out.push(next);
                }
            }
            Ok(out)
        }
        Culprit::Conduct(cid) => {
            let c = app.conduct(cid).ok_or_else(|| ModelError::UnknownCulprit(cid.0.clone()))?;
            let (Some(a), Some(b)) = (cfg.host(&c.source.slot), cfg.host(&c.sink.slot)) else {
                return Ok(Vec::new());
            };
            let current = cfg.route(cid);
            Ok(app
                .route_candidates(a, b)
                .into_iter()
                .filter(|r| r.as_slice() != current)
                .map(|r| {
                    let mut next = cfg.clone();
                    next.routes.insert(cid.clone(), r);
                    next
                })
                .collect())
        }
    }
}

/// Actions turning `current` into `target`: replacements and moves slot by
/// slot, then reroutes where the target route differs from the default
/// route a move leaves behind.
pub fn plan_actions(current: &Configuration, target: &Configuration, app: &CompiledApp) -> Vec<Action> {
    let mut actions = Vec::new();
    for (slot, p) in &target.placement {
        match current.placement.get(slot) {
            None => {
                actions.push(Action::Add { slot: slot.clone(), variant: p.variant.clone(), station: p.station.clone() })
            }
            Some(cur) => {
                if cur.variant != p.variant {
                    actions.push(Action::Replace { slot: slot.clone(), variant: p.variant.clone() });
                }
                if cur.station != p.station {
                    actions.push(Action::Move { slot: slot.clone(), station: p.station.clone() });
                }
            }
        }
    }
    for slot in current.placement.keys() {
        if !target.placement.contains_key(slot) {
            actions.push(Action::Remove { slot: slot.clone() });
        }
    }
    let staged = apply_actions(current, &actions, app);
    for (cid, route) in &target.routes {
        if staged.route(cid) != route.as_slice() {
            actions.push(Action::Reroute { conduct: cid.clone(), route: route.clone() });
        }
    }
    actions
}

pub fn apply_actions(cfg: &Configuration, actions: &[Action], app: &CompiledApp) -> Configuration {
    let mut out = cfg.clone();
    for a in actions {
        match a {
            Action::Replace { slot, variant } => {
                if let Some(p) = out.placement.get_mut(slot) {
                    p.variant = variant.clone();
                }
            }
            Action::Move { slot, station } => {
                if let Some(p) = out.placement.get_mut(slot) {
                    p.station = station.clone();
                }
                app.reset_adjacent_routes(&mut out, slot);
            }
            Action::Reroute { conduct, route } => {
                out.routes.insert(conduct.clone(), route.clone());
            }
            Action::Add { slot, variant, station } => {
                out.placement.insert(slot.clone(), Placement::new(variant.clone(), station.clone()));
                app.reset_adjacent_routes(&mut out, slot);
            }
            Action::Remove { slot } => {
                out.placement.remove(slot);
                for cid in app.adjacent_conducts(slot) {
                    out.routes.remove(&cid);
                }
            }
        }
    }
    out
}
