//! Tick-driven simulation of the platform: local platforms, event treatment,
//! reconfiguration orders with latency, and the audit trace.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{apply_actions, validate_configuration, Action, CompiledApp, Configuration, Culprit, Violation};
use crate::context::{
    apply_context_event, detect_reconfiguration_events, evaluate, ContextError, ContextEvent, ContextState, Snapshot,
    Thresholds,
};
use crate::events::{EventQueue, Intake, ReconfigurationEvent};
use crate::ids::StationId;
use crate::qos::CriterionMarks;
use crate::scenario::{Scenario, ScenarioError};
use crate::search::{
    exhaustive_plan, search_better_configuration, ReconfigurationPlan, SearchContext, SearchError, SearchParams,
    SearchSpace, Stage,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("invalid default configuration: {}", describe(.0))]
    InvalidDefaultConfiguration(Vec<Violation>),
    #[error("plan was built against configuration {expected} but {running} is running")]
    StalePlan { expected: String, running: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

fn describe(v: &[Violation]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    parts.join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Heuristic,
    /// Move to the brute-force optimum whenever it differs from the running
    /// configuration.
    Exhaustive,
}

/// Activity counters of the five managers of one station.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Managers {
    /// Events whose culprit runs here.
    pub events: u64,
    /// QoS samples taken while hosting a component.
    pub evaluation: u64,
    /// Flows leaving this station, summed over samples.
    pub communication: u64,
    /// Wish lookups made for components hosted here.
    pub user: u64,
    /// Actions applied to components hosted here.
    pub supervision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPlatform {
    pub station: StationId,
    pub managers: Managers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationOrder {
    pub id: u64,
    pub event_id: u64,
    pub plan: ReconfigurationPlan,
    /// Configuration the plan was built against.
    pub base: Configuration,
    pub issued_at: u64,
    pub completes_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Consumed,
    Deferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceBody {
    QosSample {
        intrinsic: f64,
        contextual: f64,
        config_id: String,
        in_flight: bool,
    },
    ContextEvent {
        event: ContextEvent,
        /// Deferred events returned to the queue.
        rearmed: usize,
    },
    EventEnqueued {
        event: ReconfigurationEvent,
        intake: Intake,
    },
    EventSelected {
        event_id: u64,
        priority: f64,
        culprit: Culprit,
    },
    SearchResult {
        event_id: u64,
        disposition: Disposition,
        stage: Option<Stage>,
        candidates_evaluated: u64,
        families_examined: u64,
        exact: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        plan: Option<ReconfigurationPlan>,
    },
    OrderIssued {
        order_id: u64,
        event_id: u64,
        actions: Vec<Action>,
        completes_at: u64,
        target_id: String,
        predicted: CriterionMarks,
    },
    OrderCompleted {
        order_id: u64,
        config_id: String,
        actions: usize,
    },
}

impl TraceBody {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceBody::QosSample { .. } => "qos_sample",
            TraceBody::ContextEvent { .. } => "context_event",
            TraceBody::EventEnqueued { .. } => "event_enqueued",
            TraceBody::EventSelected { .. } => "event_selected",
            TraceBody::SearchResult { .. } => "search_result",
            TraceBody::OrderIssued { .. } => "order_issued",
            TraceBody::OrderCompleted { .. } => "order_completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub at: u64,
    /// Overall QoS of the running configuration when the record was made.
    pub overall: f64,
    #[serde(flatten)]
    pub body: TraceBody,
}

/// A deployed application under simulation.
pub struct Simulation {
    scenario: Scenario,
    app: CompiledApp,
    policy: Policy,
    params: SearchParams,
    thresholds: Thresholds,
    space: Option<SearchSpace>,
    events: Vec<ContextEvent>,
    next_event: usize,
    state: ContextState,
    config: Configuration,
    queue: EventQueue,
    platforms: BTreeMap<StationId, LocalPlatform>,
    in_flight: Option<ReconfigurationOrder>,
    last: Snapshot,
    trace: Vec<TraceRecord>,
    orders: u64,
    now: u64,
}

/// Places the default configuration, instantiates one local platform per
/// used station and samples QoS at t = 0.
pub fn deploy_initial(scenario: &Scenario, policy: Policy) -> Result<Simulation, RuntimeError> {
    scenario.parameters.check()?;
    let app = CompiledApp::new(scenario.application.clone()).map_err(ScenarioError::from)?;
    let mut filled = scenario.clone();
    filled.fill_default_routes(&app);
    let config = filled.default_configuration.clone();
    validate_configuration(&config, &app).map_err(RuntimeError::InvalidDefaultConfiguration)?;
    let (app, _) = filled.compile()?;

    let params = scenario.parameters.search();
    let space = if app.space_size_bound() <= u128::from(params.exhaustive_limit) {
        Some(SearchSpace::build(&app, &scenario.user, params.eps_intrinsic)?)
    } else {
        None
    };
    let mut events = scenario.events.clone();
    events.sort_by_key(|e| e.at);

    let state = ContextState::initial(&app, scenario.initial_environment.clone());
    let last = evaluate(&config, &app, &state, &scenario.user, &scenario.spies)?;
    let mut sim = Simulation {
        thresholds: scenario.parameters.thresholds(),
        scenario: filled,
        app,
        policy,
        params,
        space,
        events,
        next_event: 0,
        state,
        config,
        queue: EventQueue::new(),
        platforms: BTreeMap::new(),
        in_flight: None,
        last,
        trace: Vec::new(),
        orders: 0,
        now: 0,
    };
    sim.ensure_platforms();
    sim.sample();
    Ok(sim)
}

impl Simulation {
    pub fn app(&self) -> &CompiledApp {
        &self.app
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn configuration(&self) -> &Configuration {
        &self.config
    }

    pub fn context(&self) -> &ContextState {
        &self.state
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn platforms(&self) -> &BTreeMap<StationId, LocalPlatform> {
        &self.platforms
    }

    pub fn in_flight(&self) -> Option<&ReconfigurationOrder> {
        self.in_flight.as_ref()
    }

    pub fn latest(&self) -> &Snapshot {
        &self.last
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn record(&mut self, at: u64, body: TraceBody) {
        let seq = self.trace.len() as u64;
        self.trace.push(TraceRecord { seq, at, overall: self.last.report.overall, body });
    }

    fn ensure_platforms(&mut self) {
        for p in self.config.placement.values() {
            self.platforms
                .entry(p.station.clone())
                .or_insert_with(|| LocalPlatform { station: p.station.clone(), managers: Managers::default() });
        }
    }

    fn host_of(&self, culprit: &Culprit) -> Option<StationId> {
        let slot = match culprit {
            Culprit::Slot(s) => s.clone(),
            Culprit::Conduct(c) => self.app.conduct(c)?.source.slot.clone(),
        };
        self.config.host(&slot).cloned()
    }

    fn sample(&mut self) {
        let hosted: BTreeSet<&StationId> = self.config.placement.values().map(|p| &p.station).collect();
        let wishes = self.scenario.user.wishes.len() as u64;
        let mut crossing: BTreeMap<StationId, u64> = BTreeMap::new();
        for c in self.app.conduct_list() {
            if !self.config.route(&c.id).is_empty() {
                if let Some(h) = self.config.host(&c.source.slot) {
                    *crossing.entry(h.clone()).or_default() += 1;
                }
            }
        }
        for (id, p) in self.platforms.iter_mut() {
            if hosted.contains(id) {
                p.managers.evaluation += 1;
                p.managers.user += wishes;
                p.managers.communication += crossing.get(id).copied().unwrap_or(0);
            }
        }
        let report = &self.last.report;
        let body = TraceBody::QosSample {
            intrinsic: report.application.intrinsic,
            contextual: report.application.contextual,
            config_id: self.config.id(),
            in_flight: self.in_flight.is_some(),
        };
        self.record(self.now, body);
    }

    /// Makes the order's target current if it still applies to the running
    /// configuration.
    pub fn apply_reconfiguration(&mut self, order: &ReconfigurationOrder) -> Result<(), RuntimeError> {
        if order.base != self.config {
            return Err(RuntimeError::StalePlan { expected: order.base.id(), running: self.config.id() });
        }
        let next = apply_actions(&self.config, &order.plan.actions, &self.app);
        debug_assert_eq!(next, order.plan.target);
        for a in &order.plan.actions {
            let station = match a {
                Action::Replace { slot, .. } | Action::Remove { slot } => self.config.host(slot).cloned(),
                Action::Move { station, .. } | Action::Add { station, .. } => Some(station.clone()),
                Action::Reroute { conduct, .. } => self.host_of(&Culprit::Conduct(conduct.clone())),
            };
            self.config = apply_actions(&self.config, core::slice::from_ref(a), &self.app);
            self.ensure_platforms();
            if let Some(p) = station.and_then(|s| self.platforms.get_mut(&s)) {
                p.managers.supervision += 1;
            }
        }
        self.config = next;
        Ok(())
    }

    fn plan(
        &self,
        ev: &ReconfigurationEvent,
    ) -> Result<(Option<ReconfigurationPlan>, crate::search::SearchBudget), RuntimeError> {
        let ctx = SearchContext {
            app: &self.app,
            state: &self.state,
            user: &self.scenario.user,
            spies: &self.scenario.spies,
            params: &self.params,
            space: self.space.as_ref(),
        };
        let out = match self.policy {
            Policy::Heuristic => search_better_configuration(&ctx, &self.config, ev),
            Policy::Exhaustive => match exhaustive_plan(&ctx, &self.config) {
                Err(SearchError::BudgetExceeded(_)) => Ok((None, crate::search::SearchBudget::default())),
                other => other,
            },
        };
        Ok(out?)
    }

    /// Advances the clock by one tick.
    pub fn step(&mut self) -> Result<(), RuntimeError> {
        self.now += self.scenario.parameters.dt_ms;
        let now = self.now;

        let mut changed = false;
        while let Some(ev) = self.events.get(self.next_event).filter(|e| e.at <= now).cloned() {
            self.next_event += 1;
            self.state = apply_context_event(&self.state, &ev, &self.app)?;
            let rearmed = self.queue.rearm(&self.scenario.user);
            changed = true;
            self.record(ev.at, TraceBody::ContextEvent { event: ev, rearmed });
        }
        if changed || self.state.time < now {
            self.state.time = now;
        }

        if let Some(order) = self.in_flight.take_if(|o| o.completes_at <= now) {
            self.apply_reconfiguration(&order)?;
            let body = TraceBody::OrderCompleted {
                order_id: order.id,
                config_id: self.config.id(),
                actions: order.plan.actions.len(),
            };
            self.record(now, body);
        }

        let snap = evaluate(&self.config, &self.app, &self.state, &self.scenario.user, &self.scenario.spies)?;
        let prev = core::mem::replace(&mut self.last, snap);
        self.sample();

        let detected = detect_reconfiguration_events(
            Some(&prev),
            &self.last,
            &self.scenario.spies,
            &self.app,
            &self.scenario.user,
            &self.thresholds,
        );
        for ev in detected {
            if let Some(p) = self.host_of(&ev.culprit).and_then(|s| self.platforms.get_mut(&s)) {
                p.managers.events += 1;
            }
            let intake = self.queue.enqueue(ev.clone(), &self.scenario.user);
            let mut event = ev;
            event.id = match intake {
                Intake::Queued { id } | Intake::Merged { id, .. } => id,
            };
            self.record(now, TraceBody::EventEnqueued { event, intake });
        }

        if self.in_flight.is_none() {
            self.treat_events()?;
        }
        Ok(())
    }

    fn treat_events(&mut self) -> Result<(), RuntimeError> {
        let now = self.now;
        while let Some(ev) = self.queue.select_next().cloned() {
            self.record(
                now,
                TraceBody::EventSelected { event_id: ev.id, priority: ev.priority, culprit: ev.culprit.clone() },
            );
            let (plan, budget) = self.plan(&ev)?;
            let disposition = if plan.is_some() { Disposition::Consumed } else { Disposition::Deferred };
            match disposition {
                Disposition::Consumed => self.queue.consume(ev.id),
                Disposition::Deferred => self.queue.defer(ev.id),
            };
            self.record(
                now,
                TraceBody::SearchResult {
                    event_id: ev.id,
                    disposition,
                    stage: budget.stage_reached,
                    candidates_evaluated: budget.candidates_evaluated,
                    families_examined: budget.families_examined,
                    exact: budget.exact,
                    plan: plan.clone(),
                },
            );
            if let Some(plan) = plan {
                self.orders += 1;
                let latency = self.scenario.parameters.action_latency_ms * plan.actions.len() as u64;
                let order = ReconfigurationOrder {
                    id: self.orders,
                    event_id: ev.id,
                    base: self.config.clone(),
                    issued_at: now,
                    completes_at: now + latency,
                    plan,
                };
                self.record(
                    now,
                    TraceBody::OrderIssued {
                        order_id: order.id,
                        event_id: ev.id,
                        actions: order.plan.actions.clone(),
                        completes_at: order.completes_at,
                        target_id: order.plan.target.id(),
                        predicted: order.plan.predicted,
                    },
                );
                self.in_flight = Some(order);
                break;
            }
        }
        Ok(())
    }

    /// Runs ticks until the horizon; an order still in flight is completed at
    /// its due time so every issued order is traced as completed.
    pub fn run(mut self) -> Result<RunOutput, RuntimeError> {
        let horizon = self.scenario.parameters.horizon_ms;
        let dt = self.scenario.parameters.dt_ms;
        while self.now + dt < horizon {
            self.step()?;
        }
        if let Some(order) = self.in_flight.take() {
            self.apply_reconfiguration(&order)?;
            self.last = evaluate(&self.config, &self.app, &self.state, &self.scenario.user, &self.scenario.spies)?;
            let body = TraceBody::OrderCompleted {
                order_id: order.id,
                config_id: self.config.id(),
                actions: order.plan.actions.len(),
            };
            self.record(order.completes_at.max(self.now), body);
        }
        Ok(RunOutput {
            trace: self.trace,
            final_configuration: self.config,
            platforms: self.platforms,
            queue: self.queue,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub final_configuration: Configuration,
    pub platforms: BTreeMap<StationId, LocalPlatform>,
    pub queue: EventQueue,
}

pub fn run_simulation_loop(scenario: &Scenario, policy: Policy) -> Result<RunOutput, RuntimeError> {
    deploy_initial(scenario, policy)?.run()
}

/// Aggregate figures of a run, recomputable from its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reconfigurations: u64,
    pub actions: BTreeMap<String, u64>,
    pub total_actions: u64,
    pub min_qos: f64,
    pub mean_qos: f64,
    pub final_qos: f64,
    pub samples: u64,
    pub events_enqueued: u64,
    pub searches: u64,
    pub failed_searches: u64,
    pub candidates_evaluated: u64,
}

impl Summary {
    pub fn from_records(records: &[TraceRecord]) -> Self {
        let mut s = Summary {
            reconfigurations: 0,
            actions: BTreeMap::new(),
            total_actions: 0,
            min_qos: 1.0,
            mean_qos: 0.0,
            final_qos: 0.0,
            samples: 0,
            events_enqueued: 0,
            searches: 0,
            failed_searches: 0,
            candidates_evaluated: 0,
        };
        let mut sum = 0.0;
        let mut issued: BTreeMap<u64, &[Action]> = BTreeMap::new();
        for r in records {
            match &r.body {
                TraceBody::QosSample { .. } => {
                    s.samples += 1;
                    sum += r.overall;
                    s.min_qos = s.min_qos.min(r.overall);
                    s.final_qos = r.overall;
                }
                TraceBody::EventEnqueued { .. } => s.events_enqueued += 1,
                TraceBody::SearchResult { disposition, candidates_evaluated, .. } => {
                    s.searches += 1;
                    s.candidates_evaluated += candidates_evaluated;
                    if *disposition == Disposition::Deferred {
                        s.failed_searches += 1;
                    }
                }
                TraceBody::OrderIssued { order_id, actions, .. } => {
                    issued.insert(*order_id, actions);
                }
                TraceBody::OrderCompleted { order_id, .. } => {
                    s.reconfigurations += 1;
                    for a in issued.get(order_id).copied().unwrap_or(&[]) {
                        *s.actions.entry(String::from(a.kind())).or_default() += 1;
                        s.total_actions += 1;
                    }
                }
                TraceBody::ContextEvent { .. } | TraceBody::EventSelected { .. } => {}
            }
        }
        if s.samples > 0 {
            s.mean_qos = sum / s.samples as f64;
        } else {
            s.min_qos = 0.0;
        }
        s
    }
}

/// Checks the ordering and pairing invariants of a trace; returns the first
/// problem found.
pub fn check_trace(records: &[TraceRecord]) -> Result<(), String> {
    for w in records.windows(2) {
        if (w[1].at, w[1].seq) <= (w[0].at, w[0].seq) {
            return Err(format!("records {} and {} are out of order", w[0].seq, w[1].seq));
        }
    }
    let mut awaiting_result: Option<u64> = None;
    let mut open_orders: BTreeSet<u64> = BTreeSet::new();
    let mut in_flight = 0usize;
    for r in records {
        match &r.body {
            TraceBody::EventSelected { event_id, .. } => {
                if let Some(prev) = awaiting_result {
                    return Err(format!("event {prev} selected without a search result"));
                }
                awaiting_result = Some(*event_id);
            }
            TraceBody::SearchResult { event_id, .. } => {
                if awaiting_result != Some(*event_id) {
                    return Err(format!("search result for event {event_id} without selection"));
                }
                awaiting_result = None;
            }
            TraceBody::OrderIssued { order_id, .. } => {
                if !open_orders.insert(*order_id) {
                    return Err(format!("order {order_id} issued twice"));
                }
                in_flight += 1;
                if in_flight > 1 {
                    return Err(String::from("two orders in flight"));
                }
            }
            TraceBody::OrderCompleted { order_id, .. } => {
                if !open_orders.remove(order_id) {
                    return Err(format!("order {order_id} completed without being issued"));
                }
                in_flight -= 1;
            }
            _ => {}
        }
    }
    if let Some(e) = awaiting_result {
        return Err(format!("event {e} selected without a search result"));
    }
    if let Some(o) = open_orders.first() {
        return Err(format!("order {o} never completed"));
    }
    Ok(())
}
