//! Family-based iterative search for a better configuration, and the
//! exhaustive oracle.
//!
//! Two modes share the same stages. When the whole configuration space is
//! small enough (`exhaustive_limit`) it is enumerated once and partitioned
//! into families; otherwise families are formed lazily around the current
//! configuration from its single-change neighbourhood.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{
    cluster_by_mark, culprit_neighbors, enumerate_configurations, intrinsic_mark_of, plan_actions, Action, CompiledApp,
    Configuration, Culprit, ModelError,
};
use crate::context::{predict_qos, ContextError, ContextState, SpyAgent};
use crate::events::ReconfigurationEvent;
use crate::ids::{ConductId, SlotId, SubGroupId};
use crate::qos::{CriterionMarks, UserProfile};
use crate::MARK_EPS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("configuration space exceeds the budget of {0} candidates")]
    BudgetExceeded(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub eps_intrinsic: f64,
    pub eps_contextual: f64,
    /// Minimum gain over the current overall mark for a plan to be accepted.
    pub hysteresis: f64,
    /// Families examined per direction in each adjacent-family batch.
    pub adjacent_k: usize,
    /// Spaces up to this size are enumerated and partitioned up front; also
    /// the largest Sub-Group space searched exhaustively.
    pub exhaustive_limit: u64,
    pub brute_force_cap: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            eps_intrinsic: 0.05,
            eps_contextual: 0.05,
            hysteresis: 0.01,
            adjacent_k: 2,
            exhaustive_limit: 1000,
            brute_force_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CulpritSameFamily,
    WholeFamily,
    AdjacentFamily,
    SubgroupRedeploy,
    /// Used by the exhaustive policy only.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationPlan {
    pub target: Configuration,
    pub actions: Vec<Action>,
    pub predicted: CriterionMarks,
    pub stage: Stage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Distinct configurations whose QoS was predicted.
    pub candidates_evaluated: u64,
    pub stage_reached: Option<Stage>,
    pub families_examined: u64,
    /// Whether the precomputed family partition was used.
    pub exact: bool,
}

/// The enumerated space with its family partition.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub configs: Vec<Configuration>,
    pub intrinsic: Vec<f64>,
    /// `(index mark, member indices)` in descending mark order.
    pub families: Vec<(f64, Vec<usize>)>,
    family_of: Vec<usize>,
    index: BTreeMap<Configuration, usize>,
}

impl SearchSpace {
    pub fn build(app: &CompiledApp, user: &UserProfile, eps_intrinsic: f64) -> Result<Self, SearchError> {
        let configs: Vec<Configuration> = enumerate_configurations(app)?.collect();
        let intrinsic = configs.iter().map(|c| intrinsic_mark_of(c, app, user)).collect::<Result<Vec<_>, _>>()?;
        let families = cluster_by_mark(&intrinsic, eps_intrinsic);
        let mut family_of = alloc::vec![0; configs.len()];
        for (f, (_, members)) in families.iter().enumerate() {
            for &m in members {
                family_of[m] = f;
            }
        }
        let index = configs.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Ok(Self { configs, intrinsic, families, family_of, index })
    }

    pub fn position(&self, cfg: &Configuration) -> Option<usize> {
        self.index.get(cfg).copied()
    }

    pub fn family_of(&self, i: usize) -> usize {
        self.family_of[i]
    }
}

/// Inputs shared by every search call at one instant.
pub struct SearchContext<'a> {
    pub app: &'a CompiledApp,
    pub state: &'a ContextState,
    pub user: &'a UserProfile,
    pub spies: &'a [SpyAgent],
    pub params: &'a SearchParams,
    /// Enables exact mode when present.
    pub space: Option<&'a SearchSpace>,
}

#[derive(Debug, Clone)]
struct Candidate {
    cfg: Configuration,
    marks: CriterionMarks,
    actions: usize,
}

impl Candidate {
    fn overall(&self) -> f64 {
        self.marks.qos()
    }
}

/// Higher overall first, then fewer actions, then configuration order.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    let (x, y) = (a.overall(), b.overall());
    if (x - y).abs() > MARK_EPS {
        return y.total_cmp(&x);
    }
    a.actions.cmp(&b.actions).then_with(|| a.cfg.cmp(&b.cfg))
}

struct Searcher<'a, 'b> {
    ctx: &'b SearchContext<'a>,
    current: &'b Configuration,
    cache: BTreeMap<Configuration, CriterionMarks>,
    budget: SearchBudget,
}

impl Searcher<'_, '_> {
    fn predict(&mut self, cfg: &Configuration) -> Result<CriterionMarks, SearchError> {
        if let Some(m) = self.cache.get(cfg) {
            return Ok(*m);
        }
        let c = self.ctx;
        let m = predict_qos(cfg, c.app, c.state, c.user, c.spies)?;
        self.budget.candidates_evaluated += 1;
        self.cache.insert(cfg.clone(), m);
        Ok(m)
    }

    fn best_of<I>(&mut self, cands: I) -> Result<Option<Candidate>, SearchError>
    where
        I: IntoIterator<Item = Configuration>,
    {
        let mut best: Option<Candidate> = None;
        for cfg in cands {
            if &cfg == self.current {
                continue;
            }
            let marks = self.predict(&cfg)?;
            let actions = plan_actions(self.current, &cfg, self.ctx.app).len();
            let cand = Candidate { cfg, marks, actions };
            if best.as_ref().is_none_or(|b| rank(&cand, b) == Ordering::Less) {
                best = Some(cand);
            }
        }
        Ok(best)
    }

    fn intrinsic(&self, cfg: &Configuration) -> Result<f64, SearchError> {
        Ok(intrinsic_mark_of(cfg, self.ctx.app, self.ctx.user)?)
    }

    /// Slots whose placement a culprit puts in play, and its Sub-Group.
    fn culprit_subgroup(&self, culprit: &Culprit) -> Option<SubGroupId> {
        let slot = match culprit {
            Culprit::Slot(s) => s.clone(),
            Culprit::Conduct(c) => self.ctx.app.conduct(c)?.source.slot.clone(),
        };
        self.ctx.app.slot(&slot).map(|i| i.subgroup.clone())
    }

    fn conducts_touching(&self, slots: &BTreeSet<SlotId>) -> BTreeSet<ConductId> {
        self.ctx
            .app
            .conduct_list()
            .filter(|c| slots.contains(&c.source.slot) || slots.contains(&c.sink.slot))
            .map(|c| c.id.clone())
            .collect()
    }

    /// Whether `cfg` equals the current configuration outside `slots`.
    fn same_outside(&self, cfg: &Configuration, slots: &BTreeSet<SlotId>, conducts: &BTreeSet<ConductId>) -> bool {
        cfg.placement.iter().all(|(s, p)| slots.contains(s) || self.current.placement.get(s) == Some(p))
            && cfg.routes.iter().all(|(c, r)| conducts.contains(c) || self.current.routes.get(c) == Some(r))
    }

    /// Every single-change neighbour: one slot re-placed or one conduct rerouted.
    fn single_changes(&self) -> Result<Vec<Configuration>, SearchError> {
        let app = self.ctx.app;
        let mut out = Vec::new();
        for slot in app.slot_ids() {
            out.extend(culprit_neighbors(self.current, &Culprit::Slot(slot.clone()), app)?);
        }
        for c in app.conduct_list().filter(|c| !c.loopback) {
            out.extend(culprit_neighbors(self.current, &Culprit::Conduct(c.id.clone()), app)?);
        }
        Ok(out)
    }
}

/// Families other than the current one, nearest first, in batches of `k`
/// per direction.
fn adjacent_batches(
    families: &[(f64, Vec<usize>)],
    current_mark: f64,
    skip: Option<usize>,
    k: usize,
) -> Vec<Vec<usize>> {
    let k = k.max(1);
    let mut above: Vec<(f64, usize)> = Vec::new();
    let mut below: Vec<(f64, usize)> = Vec::new();
    for (i, (mark, _)) in families.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d = mark - current_mark;
        if d >= 0.0 {
            above.push((d, i));
        } else {
            below.push((-d, i));
        }
    }
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    above.sort_by(by_distance);
    below.sort_by(by_distance);
    let rounds = above.len().max(below.len()).div_ceil(k);
    (0..rounds)
        .map(|r| {
            let lo = r * k;
            let mut batch: Vec<usize> = above.iter().skip(lo).take(k).map(|x| x.1).collect();
            batch.extend(below.iter().skip(lo).take(k).map(|x| x.1));
            batch
        })
        .collect()
}

/// Staged search for a configuration better than `current` by more than the
/// hysteresis. Returns the plan of the first stage that succeeds.
pub fn search_better_configuration(
    ctx: &SearchContext<'_>,
    current: &Configuration,
    ev: &ReconfigurationEvent,
) -> Result<(Option<ReconfigurationPlan>, SearchBudget), SearchError> {
    let mut s = Searcher { ctx, current, cache: BTreeMap::new(), budget: SearchBudget::default() };
    let now = s.predict(current)?;
    let bar = now.qos() + ctx.params.hysteresis;
    let space = ctx.space.and_then(|sp| sp.position(current).map(|i| (sp, i)));
    s.budget.exact = space.is_some();

    let accept = |s: &mut Searcher<'_, '_>, best: Option<Candidate>, stage: Stage| -> Option<ReconfigurationPlan> {
        let best = best?;
        if best.overall() > bar {
            let actions = plan_actions(s.current, &best.cfg, s.ctx.app);
            Some(ReconfigurationPlan { target: best.cfg, actions, predicted: best.marks, stage })
        } else {
            None
        }
    };

    let neighbors = culprit_neighbors(current, &ev.culprit, ctx.app)?;
    let current_mark = s.intrinsic(current)?;
    let eps = ctx.params.eps_intrinsic;

    // Stage 1: the culprit alone changes, intrinsic mark kept.
    s.budget.stage_reached = Some(Stage::CulpritSameFamily);
    s.budget.families_examined = 1;
    let stage1: Vec<Configuration> = match space {
        Some((sp, i)) => {
            let fam = sp.family_of(i);
            neighbors.iter().filter(|c| sp.position(c).is_some_and(|j| sp.family_of(j) == fam)).cloned().collect()
        }
        None => {
            let mut v = Vec::new();
            for c in &neighbors {
                if (s.intrinsic(c)? - current_mark).abs() <= eps {
                    v.push(c.clone());
                }
            }
            v
        }
    };
    let best = s.best_of(stage1)?;
    if let Some(plan) = accept(&mut s, best, Stage::CulpritSameFamily) {
        return Ok((Some(plan), s.budget));
    }

    // Stage 2: the whole current family.
    s.budget.stage_reached = Some(Stage::WholeFamily);
    let singles = if space.is_none() { s.single_changes()? } else { Vec::new() };
    let stage2: Vec<Configuration> = match space {
        Some((sp, i)) => sp.families[sp.family_of(i)].1.iter().map(|&j| sp.configs[j].clone()).collect(),
        None => {
            let mut v = Vec::new();
            for c in &singles {
                if (s.intrinsic(c)? - current_mark).abs() <= eps {
                    v.push(c.clone());
                }
            }
            v
        }
    };
    let best = s.best_of(stage2)?;
    if let Some(plan) = accept(&mut s, best, Stage::WholeFamily) {
        return Ok((Some(plan), s.budget));
    }

    // Stage 3: neighbouring families by growing intrinsic distance.
    s.budget.stage_reached = Some(Stage::AdjacentFamily);
    match space {
        Some((sp, i)) => {
            let fam = sp.family_of(i);
            for batch in adjacent_batches(&sp.families, sp.families[fam].0, Some(fam), ctx.params.adjacent_k) {
                s.budget.families_examined += batch.len() as u64;
                let cands: Vec<Configuration> =
                    batch.iter().flat_map(|&f| sp.families[f].1.iter().map(|&j| sp.configs[j].clone())).collect();
                let best = s.best_of(cands)?;
                if let Some(plan) = accept(&mut s, best, Stage::AdjacentFamily) {
                    return Ok((Some(plan), s.budget));
                }
            }
        }
        None => {
            let mut outside = Vec::new();
            let mut marks = Vec::new();
            for c in singles {
                let m = s.intrinsic(&c)?;
                if (m - current_mark).abs() > eps {
                    outside.push(c);
                    marks.push(m);
                }
            }
            let families = cluster_by_mark(&marks, eps);
            for batch in adjacent_batches(&families, current_mark, None, ctx.params.adjacent_k) {
                s.budget.families_examined += batch.len() as u64;
                let cands: Vec<Configuration> =
                    batch.iter().flat_map(|&f| families[f].1.iter().map(|&j| outside[j].clone())).collect();
                let best = s.best_of(cands)?;
                if let Some(plan) = accept(&mut s, best, Stage::AdjacentFamily) {
                    return Ok((Some(plan), s.budget));
                }
            }
        }
    }

    // Stage 4: the culprit's Sub-Group is re-chosen freely.
    s.budget.stage_reached = Some(Stage::SubgroupRedeploy);
    let Some(sg) = s.culprit_subgroup(&ev.culprit) else {
        return Ok((None, s.budget));
    };
    let slots: BTreeSet<SlotId> = ctx.app.subgroup_slots(&sg).iter().cloned().collect();
    let conducts = s.conducts_touching(&slots);
    let best = match space {
        Some((sp, _)) => {
            let cands: Vec<Configuration> =
                sp.configs.iter().filter(|c| s.same_outside(c, &slots, &conducts)).cloned().collect();
            s.best_of(cands)?
        }
        None => subgroup_redeploy(&mut s, &slots)?,
    };
    Ok((accept(&mut s, best, Stage::SubgroupRedeploy), s.budget))
}

/// Sub-Group search without a precomputed space: full product when small,
/// otherwise coordinate descent one slot at a time.
fn subgroup_redeploy(s: &mut Searcher<'_, '_>, slots: &BTreeSet<SlotId>) -> Result<Option<Candidate>, SearchError> {
    let app = s.ctx.app;
    let mut size: u128 = 1;
    for slot in slots {
        let info = app.slot(slot).expect("sub-group slots exist");
        size = size.saturating_mul((info.slot.variants.len() * info.stations.len()) as u128);
    }
    if size <= u128::from(s.ctx.params.exhaustive_limit) {
        let mut frontier = alloc::vec![s.current.clone()];
        for slot in slots {
            let mut next = Vec::new();
            for cfg in &frontier {
                next.push(cfg.clone());
                next.extend(culprit_neighbors(cfg, &Culprit::Slot(slot.clone()), app)?);
            }
            frontier = next;
        }
        return s.best_of(frontier);
    }

    let mut incumbent = s.current.clone();
    let mut incumbent_q = s.predict(&incumbent)?.qos();
    let rounds = 2 * slots.len() + 2;
    for _ in 0..rounds {
        let mut improved = false;
        for slot in slots {
            let cands = culprit_neighbors(&incumbent, &Culprit::Slot(slot.clone()), app)?;
            let mut local: Option<(f64, Configuration)> = None;
            for c in cands {
                let q = s.predict(&c)?.qos();
                if q > incumbent_q + MARK_EPS && local.as_ref().is_none_or(|(lq, _)| q > *lq + MARK_EPS) {
                    local = Some((q, c));
                }
            }
            if let Some((q, c)) = local {
                incumbent = c;
                incumbent_q = q;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    if &incumbent == s.current {
        return Ok(None);
    }
    let marks = s.predict(&incumbent)?;
    let actions = plan_actions(s.current, &incumbent, app).len();
    Ok(Some(Candidate { cfg: incumbent, marks, actions }))
}

/// Exhaustive maximiser of overall QoS; ties go to the first configuration
/// in enumeration order.
pub fn brute_force_best(
    app: &CompiledApp,
    state: &ContextState,
    user: &UserProfile,
    spies: &[SpyAgent],
    cap: u64,
) -> Result<(Configuration, CriterionMarks), SearchError> {
    scan_all(app, state, user, spies, cap).map(|(cfg, m, _)| (cfg, m))
}

fn scan_all(
    app: &CompiledApp,
    state: &ContextState,
    user: &UserProfile,
    spies: &[SpyAgent],
    cap: u64,
) -> Result<(Configuration, CriterionMarks, u64), SearchError> {
    let mut best: Option<(Configuration, CriterionMarks)> = None;
    let mut seen: u64 = 0;
    for cfg in enumerate_configurations(app)? {
        seen += 1;
        if seen > cap {
            return Err(SearchError::BudgetExceeded(cap));
        }
        let m = predict_qos(&cfg, app, state, user, spies)?;
        if best.as_ref().is_none_or(|(_, b)| m.qos() > b.qos() + MARK_EPS) {
            best = Some((cfg, m));
        }
    }
    let (cfg, m) = best
        .ok_or_else(|| SearchError::Model(ModelError::EmptySpace(alloc::string::String::from("no configuration"))))?;
    Ok((cfg, m, seen))
}

/// Plan toward the exhaustive optimum whenever it differs from `current`.
pub fn exhaustive_plan(
    ctx: &SearchContext<'_>,
    current: &Configuration,
) -> Result<(Option<ReconfigurationPlan>, SearchBudget), SearchError> {
    let (target, predicted, seen) = scan_all(ctx.app, ctx.state, ctx.user, ctx.spies, ctx.params.brute_force_cap)?;
    let budget = SearchBudget {
        candidates_evaluated: seen,
        stage_reached: Some(Stage::Exhaustive),
        families_examined: 0,
        exact: true,
    };
    if &target == current {
        return Ok((None, budget));
    }
    let actions = plan_actions(current, &target, ctx.app);
    Ok((Some(ReconfigurationPlan { target, actions, predicted, stage: Stage::Exhaustive }), budget))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_alternate_directions_nearest_first() {
        let fams: Vec<(f64, Vec<usize>)> = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4].iter().map(|&m| (m, Vec::new())).collect();
        let b = adjacent_batches(&fams, 0.7, Some(2), 1);
        assert_eq!(b, alloc::vec![alloc::vec![1, 3], alloc::vec![0, 4], alloc::vec![5]]);
        let b = adjacent_batches(&fams, 0.7, Some(2), 2);
        assert_eq!(b, alloc::vec![alloc::vec![1, 0, 3, 4], alloc::vec![5]]);
    }
}
