//! Reconfiguration events and the queue choosing which one to treat.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::app::Culprit;
use crate::ids::CharId;
use crate::qos::UserProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Degradation,
    Improvement,
    Spy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationEvent {
    /// Assigned on enqueue.
    pub id: u64,
    pub at: u64,
    pub kind: EventKind,
    pub culprit: Culprit,
    pub affected: Vec<CharId>,
    pub mark_delta: f64,
    pub priority: f64,
}

impl ReconfigurationEvent {
    pub fn new(
        at: u64,
        kind: EventKind,
        culprit: Culprit,
        affected: Vec<CharId>,
        mark_delta: f64,
        user: &UserProfile,
    ) -> Self {
        let mut ev = Self { id: 0, at, kind, culprit, affected, mark_delta, priority: 0.0 };
        ev.priority = priority_of(&ev, user);
        ev
    }
}

/// Importance for the user: sum of weight times the magnitude of the change.
pub fn priority_of(ev: &ReconfigurationEvent, user: &UserProfile) -> f64 {
    ev.affected.iter().map(|c| user.weight(c) * ev.mark_delta.abs()).sum()
}

/// Treatment order: priority descending, then earlier, then lower id.
pub fn treatment_order(a: &ReconfigurationEvent, b: &ReconfigurationEvent) -> Ordering {
    b.priority.total_cmp(&a.priority).then(a.at.cmp(&b.at)).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Intake {
    Queued {
        id: u64,
    },
    /// Folded into a pending event with the same culprit.
    Merged {
        id: u64,
        into: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventQueue {
    pending: Vec<ReconfigurationEvent>,
    deferred: Vec<ReconfigurationEvent>,
    consumed: u64,
    merged: u64,
    enqueued: u64,
    next_id: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, mut ev: ReconfigurationEvent, user: &UserProfile) -> Intake {
        self.next_id += 1;
        self.enqueued += 1;
        ev.id = self.next_id;
        let id = ev.id;
        match self.absorb(ev, user) {
            Some(into) => Intake::Merged { id, into },
            None => Intake::Queued { id },
        }
    }

    /// Merges `ev` into a pending event of the same culprit, if any.
    fn absorb(&mut self, ev: ReconfigurationEvent, user: &UserProfile) -> Option<u64> {
        let Some(target) = self.pending.iter_mut().find(|p| p.culprit == ev.culprit) else {
            self.pending.push(ev);
            return None;
        };
        for c in ev.affected {
            if !target.affected.contains(&c) {
                target.affected.push(c);
            }
        }
        target.affected.sort();
        if ev.mark_delta.abs() > target.mark_delta.abs() {
            target.mark_delta = ev.mark_delta;
            target.kind = ev.kind;
        }
        target.priority = priority_of(target, user);
        self.merged += 1;
        Some(target.id)
    }

    /// Highest-priority pending event, left in place.
    pub fn select_next(&self) -> Option<&ReconfigurationEvent> {
        self.pending.iter().min_by(|a, b| treatment_order(a, b))
    }

    fn take(&mut self, id: u64) -> Option<ReconfigurationEvent> {
        let i = self.pending.iter().position(|e| e.id == id)?;
        Some(self.pending.remove(i))
    }

    pub fn consume(&mut self, id: u64) -> bool {
        let found = self.take(id).is_some();
        if found {
            self.consumed += 1;
        }
        found
    }

    pub fn defer(&mut self, id: u64) -> bool {
        match self.take(id) {
            Some(ev) => {
                self.deferred.push(ev);
                true
            }
            None => false,
        }
    }

    /// Returns every deferred event to the pending set after a context change.
    pub fn rearm(&mut self, user: &UserProfile) -> usize {
        let deferred = core::mem::take(&mut self.deferred);
        let n = deferred.len();
        for ev in deferred {
            self.absorb(ev, user);
        }
        n
    }

    pub fn pending(&self) -> &[ReconfigurationEvent] {
        &self.pending
    }

    pub fn deferred(&self) -> &[ReconfigurationEvent] {
        &self.deferred
    }

    pub fn consumed_count(&self) -> u64 {
        self.consumed
    }

    pub fn merged_count(&self) -> u64 {
        self.merged
    }

    pub fn enqueued_count(&self) -> u64 {
        self.enqueued
    }

    /// pending + deferred + consumed + merged = enqueued
    pub fn is_conserved(&self) -> bool {
        self.pending.len() as u64 + self.deferred.len() as u64 + self.consumed + self.merged == self.enqueued
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::WishFunction;
    use alloc::vec;

    fn user() -> UserProfile {
        UserProfile {
            wishes: vec![
                WishFunction::new("a", vec![(0.0, 0.0), (1.0, 1.0)], 0.5),
                WishFunction::new("b", vec![(0.0, 0.0), (1.0, 1.0)], 0.2),
            ],
            ..Default::default()
        }
    }

    fn ev(at: u64, slot: &str, ch: &str, delta: f64) -> ReconfigurationEvent {
        ReconfigurationEvent::new(
            at,
            EventKind::Degradation,
            Culprit::Slot(slot.into()),
            vec![ch.into()],
            delta,
            &user(),
        )
    }

    #[test]
    fn priorities() {
        assert!((ev(0, "x", "a", -0.4).priority - 0.20).abs() < 1e-12);
        assert!((ev(0, "x", "b", -0.4).priority - 0.08).abs() < 1e-12);
        let empty = ReconfigurationEvent::new(0, EventKind::Spy, Culprit::Slot("x".into()), vec![], -0.4, &user());
        assert_eq!(empty.priority, 0.0);
        assert_eq!(ev(0, "x", "unknown", -0.4).priority, 0.0);
    }

    #[test]
    fn selection_order_and_ties() {
        let u = user();
        let mut q = EventQueue::new();
        q.enqueue(ev(0, "x", "b", -0.4), &u);
        q.enqueue(ev(0, "y", "a", -0.4), &u);
        assert_eq!(q.select_next().unwrap().culprit, Culprit::Slot("y".into()));
        assert_eq!(q.select_next(), q.select_next());

        let mut q = EventQueue::new();
        q.enqueue(ev(200, "x", "a", -0.4), &u);
        q.enqueue(ev(100, "y", "a", -0.4), &u);
        assert_eq!(q.select_next().unwrap().at, 100);
    }

    #[test]
    fn defer_and_rearm() {
        let u = user();
        let mut q = EventQueue::new();
        let Intake::Queued { id } = q.enqueue(ev(0, "x", "a", -0.4), &u) else { panic!() };
        assert!(q.defer(id));
        assert!(q.select_next().is_none());
        assert_eq!(q.deferred().len(), 1);
        assert_eq!(q.rearm(&u), 1);
        assert_eq!(q.select_next().unwrap().id, id);
        assert!(q.consume(id));
        assert!(!q.consume(id));
        assert!(q.is_conserved());
    }

    #[test]
    fn same_culprit_coalesces() {
        let u = user();
        let mut q = EventQueue::new();
        q.enqueue(ev(0, "x", "a", -0.2), &u);
        let r = q.enqueue(ev(100, "x", "b", 0.5), &u);
        assert_eq!(r, Intake::Merged { id: 2, into: 1 });
        let e = q.select_next().unwrap();
        assert_eq!(e.mark_delta, 0.5);
        assert_eq!(e.kind, EventKind::Degradation);
        assert_eq!(e.affected, vec![CharId::from("a"), CharId::from("b")]);
        assert!((e.priority - 0.35).abs() < 1e-12);
        assert_eq!(q.pending().len(), 1);
        assert!(q.is_conserved());
    }
}
