//! Fixtures shared by the integration tests: randomized small applications,
//! random contexts and an independent evaluator for the mark hierarchy.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qosim_core::app::{Application, Group, SubGroup};
use qosim_core::context::{ContextState, LinkState};
use qosim_core::qos::{Characteristic, CriterionKind, NetworkEffect, Polarity, UserProfile, WishFunction};
use qosim_core::reference::scaling;
use qosim_core::{CharId, CompiledApp, Configuration, GroupId, Scenario, SubGroupId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shapes `(n, v, s)` whose space stays at or under 1000 configurations.
pub const SMALL_SHAPES: [(usize, usize, usize); 8] =
    [(2, 2, 1), (2, 3, 2), (2, 2, 3), (3, 2, 2), (3, 3, 1), (3, 3, 2), (3, 2, 3), (4, 2, 2)];

/// A scaling chain with randomized marks, demands, capacities, links and
/// weights. Always at most 1000 configurations.
pub fn random_fixture(seed: u64) -> Scenario {
    let mut r = rng(seed);
    let (n, v, s) = SMALL_SHAPES[r.gen_range(0..SMALL_SHAPES.len())];
    let mut sc = scaling(n, v, s);
    sc.name = format!("fixture-{seed}");
    for sg in sc.application.groups.iter_mut().flat_map(|g| g.subgroups.iter_mut()) {
        for slot in &mut sg.slots {
            for var in &mut slot.variants {
                for m in var.intrinsic.values_mut() {
                    *m = r.gen_range(0.0..=1.0);
                }
                var.cpu_demand = r.gen_range(5.0..70.0);
            }
        }
    }
    for st in &mut sc.application.stations {
        st.capacity = r.gen_range(60.0..150.0);
        st.base_load = r.gen_range(0.0..st.capacity.min(90.0));
    }
    for l in &mut sc.application.links {
        l.latency = r.gen_range(1.0..40.0);
        l.bandwidth = r.gen_range(500.0..10_000.0);
    }
    for w in &mut sc.user.wishes {
        w.weight = r.gen_range(0.2..3.0);
    }
    sc
}

/// Random background loads and link states for `app`.
pub fn random_state(app: &CompiledApp, r: &mut impl Rng) -> ContextState {
    let mut st = ContextState::initial(app, BTreeMap::new());
    for v in st.station_loads.values_mut() {
        *v = r.gen_range(0.0..160.0);
    }
    for l in st.links.values_mut() {
        *l = LinkState { bandwidth: r.gen_range(100.0..10_000.0), latency: r.gen_range(0.0..60.0) };
    }
    st
}

pub fn compile(sc: &Scenario) -> (CompiledApp, Configuration) {
    sc.compile().expect("fixture compiles")
}

/// A random hierarchy of characteristics without slots, with wishes for most
/// characteristics and random positive weights at every level.
pub fn random_tree(r: &mut impl Rng) -> (Application, UserProfile, BTreeMap<CharId, f64>) {
    let mut characteristics = Vec::new();
    let mut groups = Vec::new();
    let mut user = UserProfile::default();
    let mut marks = BTreeMap::new();
    let mut next = 0;
    for g in 0..r.gen_range(1..=3) {
        let mut subgroups = Vec::new();
        for s in 0..r.gen_range(1..=3) {
            let mut listed = Vec::new();
            for _ in 0..r.gen_range(0..=4) {
                let id = format!("c{next}");
                next += 1;
                let kind = if r.gen_bool(0.5) { CriterionKind::Intrinsic } else { CriterionKind::Contextual };
                characteristics.push(Characteristic {
                    id: id.as_str().into(),
                    kind,
                    unit: String::new(),
                    description: String::new(),
                    better: Polarity::HigherIsBetter,
                    network: NetworkEffect::None,
                    probe: None,
                });
                if r.gen_bool(0.85) {
                    user.wishes.push(WishFunction::new(
                        id.as_str(),
                        vec![(0.0, 0.0), (1.0, 1.0)],
                        r.gen_range(0.1..5.0),
                    ));
                }
                marks.insert(CharId::from(id.as_str()), r.gen_range(0.0..=1.0));
                listed.push(CharId::from(id.as_str()));
            }
            let sid = format!("g{g}s{s}");
            if r.gen_bool(0.7) {
                user.subgroup_weights.insert(SubGroupId::from(sid.as_str()), r.gen_range(0.1..5.0));
            }
            subgroups.push(SubGroup {
                id: sid.as_str().into(),
                characteristics: listed,
                slots: vec![],
                conducts: vec![],
            });
        }
        let gid = format!("g{g}");
        if r.gen_bool(0.7) {
            user.group_weights.insert(GroupId::from(gid.as_str()), r.gen_range(0.1..5.0));
        }
        groups.push(Group { id: gid.as_str().into(), subgroups });
    }
    let app = Application { characteristics, groups, stations: vec![], links: vec![], routes: vec![] };
    (app, user, marks)
}

/// Application marks by expansion over leaves: every wished characteristic
/// contributes its mark times the product of its normalized weights along
/// the path to the root; a Sub-Group with nothing of one kind contributes a
/// perfect 1 for that kind.
pub fn oracle_marks(app: &Application, user: &UserProfile, marks: &BTreeMap<CharId, f64>) -> (f64, f64) {
    let kind_of: BTreeMap<&CharId, CriterionKind> = app.characteristics.iter().map(|c| (&c.id, c.kind)).collect();
    let gw = |g: &Group| user.group_weights.get(&g.id).copied().unwrap_or(1.0);
    let sw = |s: &SubGroup| user.subgroup_weights.get(&s.id).copied().unwrap_or(1.0);
    let g_total: f64 = app.groups.iter().map(gw).sum();
    let mut acc = [0.0f64; 2];
    for g in &app.groups {
        let s_total: f64 = g.subgroups.iter().map(sw).sum();
        for sg in &g.subgroups {
            let path = gw(g) / g_total * sw(sg) / s_total;
            for (slot, kind) in [(0, CriterionKind::Intrinsic), (1, CriterionKind::Contextual)] {
                let leaves: Vec<(f64, f64)> = sg
                    .characteristics
                    .iter()
                    .filter(|c| kind_of[c] == kind)
                    .filter_map(|c| user.wishes.iter().find(|w| &w.characteristic == c).map(|w| (marks[c], w.weight)))
                    .collect();
                let c_total: f64 = leaves.iter().map(|l| l.1).sum();
                if leaves.is_empty() {
                    acc[slot] += path;
                } else {
                    acc[slot] += leaves.iter().map(|(m, w)| path * w / c_total * m).sum::<f64>();
                }
            }
        }
    }
    (acc[0], acc[1])
}
