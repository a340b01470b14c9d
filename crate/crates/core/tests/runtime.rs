use qosim_core::app::{Action, Culprit};
use qosim_core::context::{ContextAction, ContextEvent};
use qosim_core::events::{EventKind, EventQueue, ReconfigurationEvent};
use qosim_core::qos::WishFunction;
use qosim_core::reference::{scaling, surveillance135, toy6};
use qosim_core::runtime::{
    check_trace, deploy_initial, run_simulation_loop, Policy, RuntimeError, Summary, TraceBody, TraceRecord,
};
use qosim_core::{SlotId, UserProfile, VariantId};

fn orders(trace: &[TraceRecord]) -> Vec<(u64, Vec<Action>, u64)> {
    trace
        .iter()
        .filter_map(|r| match &r.body {
            TraceBody::OrderIssued { actions, completes_at, .. } => Some((r.at, actions.clone(), *completes_at)),
            _ => None,
        })
        .collect()
}

#[test]
fn trace_starts_with_a_sample_at_zero() {
    let sim = deploy_initial(&toy6(), Policy::Heuristic).unwrap();
    let first = &sim.trace()[0];
    assert_eq!(first.at, 0);
    assert_eq!(first.body.kind(), "qos_sample");
}

#[test]
fn inadmissible_default_is_rejected() {
    let mut sc = toy6();
    sc.default_configuration.placement.get_mut(&SlotId::from("viewer")).unwrap().variant = VariantId::from("v9");
    assert!(matches!(deploy_initial(&sc, Policy::Heuristic), Err(RuntimeError::InvalidDefaultConfiguration(_))));
}

#[test]
fn one_platform_per_used_station() {
    let mut sc = surveillance135();
    let placed = sc.default_configuration.placement.get_mut(&SlotId::from("processing")).unwrap();
    placed.station = "S2".into();
    let sim = deploy_initial(&sc, Policy::Heuristic).unwrap();
    assert_eq!(sim.platforms().len(), 3);
    let sim = deploy_initial(&toy6(), Policy::Heuristic).unwrap();
    assert_eq!(sim.platforms().len(), 1);
}

#[test]
fn latency_grows_with_each_action() {
    let out = run_simulation_loop(&surveillance135(), Policy::Exhaustive).unwrap();
    let issued = orders(&out.trace);
    assert!(!issued.is_empty());
    for (at, actions, completes_at) in &issued {
        assert_eq!(*completes_at, at + 200 * actions.len() as u64);
    }
    assert!(issued.iter().any(|o| o.1.len() == 1));
    assert!(issued.iter().any(|o| o.1.len() >= 2));
}

#[test]
fn superseded_plan_is_stale() {
    let mut sim = deploy_initial(&surveillance135(), Policy::Heuristic).unwrap();
    while sim.in_flight().is_none() {
        sim.step().unwrap();
    }
    let order = sim.in_flight().cloned().unwrap();
    let mut stale = order.clone();
    stale.base = order.plan.target.clone();
    assert!(matches!(sim.apply_reconfiguration(&stale), Err(RuntimeError::StalePlan { .. })));
    sim.apply_reconfiguration(&order).unwrap();
    assert_eq!(sim.configuration(), &order.plan.target);
}

#[test]
fn no_context_events_means_no_orders() {
    for mut sc in [toy6(), surveillance135(), scaling(4, 3, 2)] {
        sc.events.clear();
        let out = run_simulation_loop(&sc, Policy::Heuristic).unwrap();
        assert!(orders(&out.trace).is_empty(), "{}", sc.name);
        let samples = out.trace.iter().filter(|r| r.body.kind() == "qos_sample").count() as u64;
        assert_eq!(samples, sc.parameters.horizon_ms / sc.parameters.dt_ms);
    }
}

#[test]
fn runs_are_deterministic_and_conserving() {
    for sc in [toy6(), surveillance135(), scaling(5, 3, 3)] {
        for policy in [Policy::Heuristic, Policy::Exhaustive] {
            let a = run_simulation_loop(&sc, policy).unwrap();
            let b = run_simulation_loop(&sc, policy).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.final_configuration, b.final_configuration);
            check_trace(&a.trace).unwrap();
            assert!(a.queue.is_conserved());
            let s = Summary::from_records(&a.trace);
            assert_eq!(s.reconfigurations, orders(&a.trace).len() as u64);
        }
    }
}

#[test]
fn context_events_are_traced_at_their_time() {
    let mut sc = toy6();
    sc.events.push(ContextEvent::new(1250, ContextAction::SetStationLoad { station: "host".into(), value: 0.0 }));
    let out = run_simulation_loop(&sc, Policy::Heuristic).unwrap();
    let ats: Vec<u64> = out.trace.iter().filter(|r| r.body.kind() == "context_event").map(|r| r.at).collect();
    assert_eq!(ats, vec![500, 1250]);
    check_trace(&out.trace).unwrap();
}

fn ev(at: u64, slot: &str, delta: f64, user: &UserProfile) -> ReconfigurationEvent {
    ReconfigurationEvent::new(at, EventKind::Degradation, Culprit::Slot(slot.into()), vec!["q".into()], delta, user)
}

#[test]
fn queue_orders_defers_and_rearms() {
    let user =
        UserProfile { wishes: vec![WishFunction::new("q", vec![(0.0, 0.0), (1.0, 1.0)], 1.0)], ..Default::default() };
    let mut q = EventQueue::new();
    q.enqueue(ev(200, "a", -0.1, &user), &user);
    q.enqueue(ev(100, "b", -0.1, &user), &user);
    q.enqueue(ev(300, "c", -0.3, &user), &user);
    let first = q.select_next().unwrap().clone();
    assert_eq!(first.culprit, Culprit::Slot("c".into()));
    q.defer(first.id);
    let second = q.select_next().unwrap().clone();
    assert_eq!(second.culprit, Culprit::Slot("b".into()));
    q.consume(second.id);
    let third = q.select_next().unwrap().clone();
    assert_eq!(third.culprit, Culprit::Slot("a".into()));
    q.defer(third.id);
    assert!(q.select_next().is_none());
    assert_eq!(q.rearm(&user), 2);
    assert_eq!(q.select_next().unwrap().culprit, Culprit::Slot("c".into()));
    assert!(q.is_conserved());
}
