//! Leader-follower coalition formation.
//!
//! Each leader that detected a task broadcasts a proposal, collects bids from
//! searching UAVs holding any required resource, and runs merge-and-split
//! over the bidders to pick the coalition it values most. Selected followers
//! that received several requests accept the one with the best utility and
//! refuse the others. Leaders with refusals drop the refusers and search
//! again, until every outstanding request is accepted.
//!
//! Because the value of a coalition without the leader is zero, the only
//! profitable merge joins a singleton to the leader's coalition, and a split
//! amounts to dropping a subset of followers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::credit::CreditLedger;
use crate::domain::{travel_time, Amount, Coalition, GameParams, TaskDescriptor, TaskId, UavId, UavProfile};
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::valuation::{
    expected_credit_increment, utility_from_parts, value_breakdown, Fleet, SnrProvider,
    ValuationContext, ValueBreakdown,
};

/// Coalitions up to this size are checked against every bipartition;
/// larger ones only against single-member removals.
pub const FULL_SPLIT_LIMIT: usize = 12;

/// Largest candidate pool accepted by [`exhaustive_best`].
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Search,
    Proposal,
    Bid,
    Formation,
    Executing,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegotiationState {
    pub phase: BTreeMap<UavId, Phase>,
    /// Follower id to the leaders currently requesting it.
    pub pending_offers: BTreeMap<UavId, BTreeSet<UavId>>,
    /// Leader id to the followers that refused it.
    pub refusals: BTreeMap<UavId, BTreeSet<UavId>>,
}

impl NegotiationState {
    fn new(fleet: &Fleet) -> Self {
        Self {
            phase: fleet.keys().map(|&id| (id, Phase::Search)).collect(),
            ..Self::default()
        }
    }

    fn refused(&self, leader: UavId) -> impl Iterator<Item = UavId> + '_ {
        self.refusals.get(&leader).into_iter().flatten().copied()
    }
}

/// Searching UAVs other than the leader that hold a positive amount of at
/// least one resource type the task needs.
pub fn collect_bids(
    leader: &UavProfile,
    task: &TaskDescriptor,
    fleet: &Fleet,
    phase: &BTreeMap<UavId, Phase>,
) -> BTreeSet<UavId> {
    let needed: Vec<usize> = task
        .required
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_positive())
        .map(|(j, _)| j)
        .collect();
    fleet
        .values()
        .filter(|u| u.id != leader.id)
        .filter(|u| phase.get(&u.id).copied().unwrap_or(Phase::Search) == Phase::Search)
        .filter(|u| {
            needed
                .iter()
                .any(|&j| u.resources.amounts().get(j).is_some_and(|a: &Amount| a.is_positive()))
        })
        .map(|u| u.id)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum MergeSplitStep {
    Merge {
        uav: UavId,
        value_before: f64,
        value_after: f64,
    },
    Split {
        removed: Vec<UavId>,
        value_before: f64,
        value_after: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeSplitResult {
    /// Followers in the leader's coalition (the leader itself is implied).
    pub followers: BTreeSet<UavId>,
    pub value: f64,
    pub steps: Vec<MergeSplitStep>,
    pub passes: usize,
}

/// Memoised coalition values for one leader and task.
struct Evaluator<'c, 'a> {
    ctx: &'c ValuationContext<'a>,
    cache: BTreeMap<BTreeSet<UavId>, f64>,
}

impl<'c, 'a> Evaluator<'c, 'a> {
    fn new(ctx: &'c ValuationContext<'a>) -> Self {
        Self {
            ctx,
            cache: BTreeMap::new(),
        }
    }

    fn value(&mut self, followers: &BTreeSet<UavId>) -> Result<f64> {
        if let Some(&v) = self.cache.get(followers) {
            return Ok(v);
        }
        let v = self.ctx.value_of(followers)?;
        self.cache.insert(followers.clone(), v);
        Ok(v)
    }

    /// Best single-singleton merge, if it gains more than `eps`.
    fn best_merge(
        &mut self,
        followers: &BTreeSet<UavId>,
        pool: &BTreeSet<UavId>,
        value: f64,
        eps: f64,
    ) -> Result<Option<(UavId, f64)>> {
        let mut best: Option<(UavId, f64)> = None;
        for &u in pool.difference(followers) {
            let mut joined = followers.clone();
            joined.insert(u);
            let v = self.value(&joined)?;
            if v - value > eps && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((u, v));
            }
        }
        Ok(best)
    }

    /// Best split of the coalition: the subset of followers whose removal
    /// raises the leader's value the most, if by more than `eps`.
    fn best_split(
        &mut self,
        followers: &BTreeSet<UavId>,
        value: f64,
        eps: f64,
    ) -> Result<Option<(Vec<UavId>, f64)>> {
        let members: Vec<UavId> = followers.iter().copied().collect();
        let mut best: Option<(Vec<UavId>, f64)> = None;
        for removed in removal_sets(&members) {
            let kept: BTreeSet<UavId> = followers
                .iter()
                .copied()
                .filter(|id| !removed.contains(id))
                .collect();
            let v = self.value(&kept)?;
            if v - value > eps && best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((removed, v));
            }
        }
        Ok(best)
    }
}

/// Nonempty subsets of `members` to try splitting off.
fn removal_sets(members: &[UavId]) -> Vec<Vec<UavId>> {
    if members.len() > FULL_SPLIT_LIMIT {
        return members.iter().map(|&m| vec![m]).collect();
    }
    (1u32..(1 << members.len()))
        .map(|mask| {
            members
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &m)| m)
                .collect()
        })
        .collect()
}

/// Merge-and-split search by the leader of `ctx` over `candidates`.
///
/// Starts from all singletons. Merge phase: repeatedly join the singleton
/// with the largest value gain to the leader's coalition. Split phase:
/// repeatedly drop the follower subset whose removal gains the most. The
/// passes repeat while splits happen. Only moves gaining more than
/// `merge_split_eps` are taken, so every move strictly raises the value and
/// the search terminates.
pub fn merge_split(ctx: &ValuationContext<'_>, candidates: &BTreeSet<UavId>) -> Result<MergeSplitResult> {
    let eps = ctx.params.merge_split_eps;
    let mut eval = Evaluator::new(ctx);
    let mut followers = BTreeSet::new();
    let mut value = eval.value(&followers)?;
    let mut steps = Vec::new();
    let mut passes = 0;

    loop {
        passes += 1;
        while let Some((u, v)) = eval.best_merge(&followers, candidates, value, eps)? {
            followers.insert(u);
            steps.push(MergeSplitStep::Merge {
                uav: u,
                value_before: value,
                value_after: v,
            });
            value = v;
        }

        let mut split = false;
        while let Some((removed, v)) = eval.best_split(&followers, value, eps)? {
            for id in &removed {
                followers.remove(id);
            }
            steps.push(MergeSplitStep::Split {
                removed,
                value_before: value,
                value_after: v,
            });
            value = v;
            split = true;
        }
        if !split {
            break;
        }
    }

    Ok(MergeSplitResult {
        followers,
        value,
        steps,
        passes,
    })
}

/// Best leader-containing coalition over every subset of `candidates`.
pub fn exhaustive_best(
    ctx: &ValuationContext<'_>,
    candidates: &BTreeSet<UavId>,
) -> Result<(BTreeSet<UavId>, f64)> {
    if candidates.len() > EXHAUSTIVE_LIMIT {
        return Err(Error::InvalidValue(format!(
            "exhaustive search over {} candidates",
            candidates.len()
        )));
    }
    let pool: Vec<UavId> = candidates.iter().copied().collect();
    let mut best = (BTreeSet::new(), ctx.value_of(&BTreeSet::new())?);
    for mask in 1u32..(1 << pool.len()) {
        let set: BTreeSet<UavId> = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &id)| id)
            .collect();
        let v = ctx.value_of(&set)?;
        if v > best.1 {
            best = (set, v);
        }
    }
    Ok(best)
}

/// No merge with an available singleton and no split of the coalition
/// raises the leader's value by more than `merge_split_eps`.
pub fn is_locally_stable(
    ctx: &ValuationContext<'_>,
    followers: &BTreeSet<UavId>,
    available: &BTreeSet<UavId>,
) -> Result<bool> {
    let eps = ctx.params.merge_split_eps;
    let mut eval = Evaluator::new(ctx);
    let value = eval.value(followers)?;
    Ok(eval.best_merge(followers, available, value, eps)?.is_none()
        && eval.best_split(followers, value, eps)?.is_none())
}

/// One leader's position in a partition, for [`stability_check`].
pub struct LeaderPosition<'a> {
    pub ctx: ValuationContext<'a>,
    pub followers: BTreeSet<UavId>,
    /// Singletons the leader could still merge with.
    pub available: BTreeSet<UavId>,
}

/// A partition is stable when coalitions are disjoint and no leader can
/// gain from a merge or a split.
pub fn stability_check(partition: &[LeaderPosition<'_>]) -> Result<bool> {
    let mut seen = BTreeSet::new();
    for p in partition {
        let members = std::iter::once(p.ctx.leader).chain(p.followers.iter().copied());
        for id in members {
            if !seen.insert(id) {
                return Ok(false);
            }
        }
    }
    for p in partition {
        if !is_locally_stable(&p.ctx, &p.followers, &p.available)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A formation request as seen by a follower.
pub struct Offer<'a> {
    pub leader: UavId,
    pub task: &'a TaskDescriptor,
    pub coalition: &'a Coalition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub accepted: UavId,
    pub refused: Vec<UavId>,
    pub utilities: BTreeMap<UavId, f64>,
}

/// Accept the offer with the highest follower utility and refuse the rest.
/// Exact ties go to the lowest leader id. Returns `None` without offers.
pub fn follower_select(
    follower: &UavProfile,
    offers: &[Offer<'_>],
    params: &GameParams,
    fleet: &Fleet,
) -> Option<Selection> {
    let utilities: BTreeMap<UavId, f64> = offers
        .iter()
        .map(|o| {
            let gain = expected_credit_increment(follower.id, o.coalition, &o.task.required, fleet);
            (
                o.leader,
                utility_from_parts(gain, params.alpha4, travel_time(follower, o.task)),
            )
        })
        .collect();
    let mut best: Option<(UavId, f64)> = None;
    for (&leader, &u) in &utilities {
        if best.is_none_or(|(_, bu)| u > bu) {
            best = Some((leader, u));
        }
    }
    let (accepted, _) = best?;
    Some(Selection {
        accepted,
        refused: utilities.keys().copied().filter(|&l| l != accepted).collect(),
        utilities,
    })
}

pub struct NegotiationInput<'a> {
    pub round: u64,
    pub fleet: &'a Fleet,
    pub tasks: &'a [TaskDescriptor],
    /// Detecting leader of each task.
    pub leaders: &'a BTreeMap<TaskId, UavId>,
    pub params: &'a GameParams,
    pub credits: &'a CreditLedger,
    pub deadline: f64,
    pub snr: BTreeMap<TaskId, &'a dyn SnrProvider>,
}

impl<'a> NegotiationInput<'a> {
    pub fn context(&self, task: &'a TaskDescriptor) -> Result<ValuationContext<'a>> {
        let leader = *self
            .leaders
            .get(&task.id)
            .ok_or_else(|| Error::InvalidValue(format!("task {} has no leader", task.id)))?;
        let snr = *self
            .snr
            .get(&task.id)
            .ok_or_else(|| Error::InvalidValue(format!("task {} has no channel model", task.id)))?;
        Ok(ValuationContext {
            params: self.params,
            credits: self.credits,
            task,
            leader,
            fleet: self.fleet,
            deadline: self.deadline,
            snr,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormedCoalition {
    pub coalition: Coalition,
    pub value: f64,
    pub breakdown: ValueBreakdown,
    pub t_up: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationOutcome {
    pub formed: Vec<FormedCoalition>,
    pub unserved: Vec<TaskId>,
    /// Offer/response rounds until every request was accepted.
    pub rounds: usize,
    /// Number of (leader, follower) refusals.
    pub refusals: usize,
    pub bids: BTreeMap<TaskId, BTreeSet<UavId>>,
    pub state: NegotiationState,
}

impl NegotiationOutcome {
    pub fn formed_for(&self, task: TaskId) -> Option<&FormedCoalition> {
        self.formed.iter().find(|f| f.coalition.task_id == task)
    }

    /// Bidders for `task` that did not refuse its leader and are not in
    /// another coalition.
    pub fn available(&self, task: TaskId, leader: UavId) -> BTreeSet<UavId> {
        let refused: BTreeSet<UavId> = self.state.refused(leader).collect();
        let taken: BTreeSet<UavId> = self
            .formed
            .iter()
            .filter(|f| f.coalition.task_id != task)
            .flat_map(|f| f.coalition.member_ids.iter().copied())
            .collect();
        self.bids
            .get(&task)
            .into_iter()
            .flatten()
            .copied()
            .filter(|id| !refused.contains(id) && !taken.contains(id))
            .collect()
    }

    /// Distinct UAVs that refused at least one leader.
    pub fn refusing_uavs(&self) -> BTreeSet<UavId> {
        self.state.refusals.values().flatten().copied().collect()
    }
}

/// Run the proposal, bid, formation and response protocol to completion.
pub fn negotiate(input: &NegotiationInput<'_>, log: &mut EventLog) -> Result<NegotiationOutcome> {
    let round = input.round;
    let mut state = NegotiationState::new(input.fleet);
    let tasks: BTreeMap<TaskId, &TaskDescriptor> = input.tasks.iter().map(|t| (t.id, t)).collect();
    let mut leader_of = BTreeMap::new();
    let mut task_of = BTreeMap::new();
    for &id in tasks.keys() {
        let leader = *input
            .leaders
            .get(&id)
            .ok_or_else(|| Error::InvalidValue(format!("task {id} has no leader")))?;
        if task_of.insert(leader, id).is_some() {
            return Err(Error::InvalidValue(format!("UAV {leader} leads two tasks")));
        }
        leader_of.insert(id, leader);
        state.phase.insert(leader, Phase::Proposal);
        log.push(Event::Proposal {
            round,
            task: id,
            leader,
            required: tasks[&id].required.clone(),
        });
    }

    let mut bids = BTreeMap::new();
    for (&id, &task) in &tasks {
        let leader = input.fleet.get(&leader_of[&id]).ok_or(Error::UnknownUav(leader_of[&id]))?;
        let b = collect_bids(leader, task, input.fleet, &state.phase);
        log.push(Event::Bids {
            round,
            task: id,
            leader: leader.id,
            bidders: b.iter().copied().collect(),
        });
        bids.insert(id, b);
    }
    for b in bids.values().flatten() {
        state.phase.insert(*b, Phase::Bid);
    }

    let mut current: BTreeMap<TaskId, Option<FormedCoalition>> = BTreeMap::new();
    let mut active: BTreeSet<TaskId> = tasks.keys().copied().collect();
    let mut rounds = 0;
    let mut refusals = 0;
    let round_cap = input.fleet.len() * tasks.len().max(1) + 1;

    loop {
        rounds += 1;
        for &id in &active {
            let leader = leader_of[&id];
            state.phase.insert(leader, Phase::Formation);
            let ctx = input.context(tasks[&id])?;
            let refused: BTreeSet<UavId> = state.refused(leader).collect();
            let candidates: BTreeSet<UavId> = bids[&id].difference(&refused).copied().collect();

            let result = merge_split(&ctx, &candidates)?;
            for step in &result.steps {
                log.push(step_event(round, rounds, leader, step));
            }
            let mut coalition = ctx.coalition(&result.followers)?;
            coalition.snr_opt = Some(ctx.snr.coalition_snr(&coalition));
            let breakdown = value_breakdown(&coalition, &ctx);

            if breakdown.deficit_free {
                log.push(Event::Offer {
                    round,
                    negotiation_round: rounds,
                    task: id,
                    leader,
                    members: coalition.relay_order(),
                    value: result.value,
                });
                let diag = ctx.snr.diagnostics(&coalition);
                current.insert(
                    id,
                    Some(FormedCoalition {
                        coalition,
                        value: result.value,
                        breakdown,
                        t_up: diag.map(|d| d.0),
                        iterations: diag.map(|d| d.1),
                    }),
                );
            } else {
                log.push(Event::Unserved {
                    round,
                    negotiation_round: rounds,
                    task: id,
                    leader,
                });
                current.insert(id, None);
            }
        }

        state.pending_offers.clear();
        for fc in current.values().flatten() {
            for f in fc.coalition.followers() {
                state
                    .pending_offers
                    .entry(f)
                    .or_default()
                    .insert(fc.coalition.leader_id);
            }
        }

        let mut next_active = BTreeSet::new();
        for (&follower, leaders) in &state.pending_offers {
            let profile = input.fleet.get(&follower).ok_or(Error::UnknownUav(follower))?;
            let offers: Vec<Offer<'_>> = leaders
                .iter()
                .filter_map(|l| {
                    let task = task_of[l];
                    current[&task].as_ref().map(|fc| Offer {
                        leader: *l,
                        task: tasks[&task],
                        coalition: &fc.coalition,
                    })
                })
                .collect();
            let Some(sel) = follower_select(profile, &offers, input.params, input.fleet) else {
                continue;
            };
            for &l in leaders {
                log.push(Event::Response {
                    round,
                    negotiation_round: rounds,
                    follower,
                    leader: l,
                    accept: l == sel.accepted,
                });
            }
            for l in sel.refused {
                state.refusals.entry(l).or_default().insert(follower);
                refusals += 1;
                next_active.insert(task_of[&l]);
            }
        }

        if next_active.is_empty() || rounds >= round_cap {
            break;
        }
        active = next_active;
    }

    let mut formed = Vec::new();
    let mut unserved = Vec::new();
    for (id, fc) in current {
        match fc {
            Some(fc) => {
                for &m in &fc.coalition.member_ids {
                    state.phase.insert(m, Phase::Executing);
                }
                formed.push(fc);
            }
            None => unserved.push(id),
        }
    }
    for phase in state.phase.values_mut() {
        if *phase != Phase::Executing {
            *phase = Phase::Search;
        }
    }
    for fc in &formed {
        let task = tasks[&fc.coalition.task_id];
        log.push(Event::Formed {
            round,
            task: task.id,
            leader: fc.coalition.leader_id,
            members: fc.coalition.relay_order(),
            aggregate: fc.coalition.aggregate.clone(),
            required: task.required.clone(),
            value: fc.value,
            snr: fc.coalition.snr_opt.unwrap_or(0.0),
            t_up: fc.t_up.unwrap_or(0.0),
            iterations: fc.iterations.unwrap_or(0),
        });
    }
    log.push(Event::NegotiationDone {
        round,
        negotiation_rounds: rounds,
        refusals,
    });

    Ok(NegotiationOutcome {
        formed,
        unserved,
        rounds,
        refusals,
        bids,
        state,
    })
}

fn step_event(round: u64, negotiation_round: usize, leader: UavId, step: &MergeSplitStep) -> Event {
    match step {
        MergeSplitStep::Merge {
            uav,
            value_before,
            value_after,
        } => Event::Merge {
            round,
            negotiation_round,
            leader,
            uav: *uav,
            value_before: *value_before,
            value_after: *value_after,
        },
        MergeSplitStep::Split {
            removed,
            value_before,
            value_after,
        } => Event::Split {
            round,
            negotiation_round,
            leader,
            removed: removed.clone(),
            value_before: *value_before,
            value_after: *value_after,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::test_support::{task, uav};
    use crate::domain::member_set;
    use crate::valuation::FixedSnr;

    fn params() -> GameParams {
        GameParams {
            alpha1: 0.1,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 0.1,
            big_l: 1e4,
            gamma_eps: 0.0,
            snr_threshold: 0.5,
            field_radius: 10.0,
            deadline_factor: 1.0,
            merge_split_eps: 1e-9,
            initial_credit: 1.0,
        }
    }

    fn fleet(uavs: Vec<UavProfile>) -> Fleet {
        uavs.into_iter().map(|u| (u.id, u)).collect()
    }

    fn ctx<'a>(
        p: &'a GameParams,
        ledger: &'a CreditLedger,
        t: &'a TaskDescriptor,
        f: &'a Fleet,
        snr: &'a dyn SnrProvider,
    ) -> ValuationContext<'a> {
        ValuationContext {
            params: p,
            credits: ledger,
            task: t,
            leader: 1,
            fleet: f,
            deadline: p.deadline(1.0),
            snr,
        }
    }

    #[test]
    fn bids_require_a_needed_resource() {
        let f = fleet(vec![
            uav(1, [0.0; 3], &[0.0, 0.0, 0.0]),
            uav(2, [0.0; 3], &[0.0, 0.0, 1.0]),
            uav(3, [0.0; 3], &[1.0, 0.0, 0.0]),
            uav(4, [0.0; 3], &[0.0, 2.0, 0.0]),
        ]);
        let t = task(1, [0.0; 3], &[1.0, 1.0, 0.0]);
        let mut phase: BTreeMap<UavId, Phase> = f.keys().map(|&id| (id, Phase::Search)).collect();
        assert_eq!(collect_bids(&f[&1], &t, &f, &phase), member_set([3, 4]));
        phase.insert(4, Phase::Executing);
        assert_eq!(collect_bids(&f[&1], &t, &f, &phase), member_set([3]));

        let t_only_third = task(2, [0.0; 3], &[0.0, 0.0, 1.0]);
        assert_eq!(collect_bids(&f[&1], &t_only_third, &f, &phase), member_set([2]));
        phase.insert(2, Phase::Executing);
        assert!(collect_bids(&f[&1], &t_only_third, &f, &phase).is_empty());
    }

    #[test]
    fn merge_fixes_deficit() {
        let f = fleet(vec![uav(1, [0.0; 3], &[1.0, 0.0]), uav(2, [1.0, 0.0, 0.0], &[0.0, 1.0])]);
        let t = task(1, [0.0; 3], &[1.0, 1.0]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let c = ctx(&p, &ledger, &t, &f, &snr);
        let res = merge_split(&c, &member_set([2])).unwrap();
        assert_eq!(res.followers, member_set([2]));
        let (best, v) = exhaustive_best(&c, &member_set([2])).unwrap();
        assert_eq!(best, res.followers);
        assert_eq!(v, res.value);
        assert!(res.value - c.value_of(&BTreeSet::new()).unwrap() >= p.big_l - 10.0);
    }

    #[test]
    fn late_useless_candidate_is_never_merged() {
        let f = fleet(vec![
            uav(1, [0.0; 3], &[1.0, 1.0]),
            uav(2, [50.0, 0.0, 0.0], &[0.0, 0.0]),
        ]);
        let t = task(1, [0.0; 3], &[1.0, 1.0]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let c = ctx(&p, &ledger, &t, &f, &snr);
        let res = merge_split(&c, &member_set([2])).unwrap();
        assert!(res.followers.is_empty());
        assert_eq!(exhaustive_best(&c, &member_set([2])).unwrap().0, BTreeSet::new());
    }

    #[test]
    fn merge_split_ends_stable_and_flags_redundancy() {
        // 2 alone covers the need; 3 and 4 each cover half.
        let f = fleet(vec![
            uav(1, [0.0; 3], &[0.0, 0.0]),
            uav(2, [1.0, 0.0, 0.0], &[1.0, 1.0]),
            uav(3, [1.0, 0.0, 0.0], &[1.0, 0.0]),
            uav(4, [1.0, 0.0, 0.0], &[0.0, 1.0]),
        ]);
        let t = task(1, [0.0; 3], &[1.0, 1.0]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let c = ctx(&p, &ledger, &t, &f, &snr);
        let pool = member_set([2, 3, 4]);
        let res = merge_split(&c, &pool).unwrap();
        assert!(is_locally_stable(&c, &res.followers, &pool).unwrap());
        assert!(res.value <= exhaustive_best(&c, &pool).unwrap().1);
        assert!(res.value > c.value_of(&BTreeSet::new()).unwrap());
        assert!(!is_locally_stable(&c, &pool, &pool).unwrap());
    }

    #[test]
    fn removal_sets_cover_bipartitions_then_fall_back() {
        assert_eq!(removal_sets(&[1, 2, 3]).len(), 7);
        let big: Vec<UavId> = (0..=FULL_SPLIT_LIMIT as u32).collect();
        assert_eq!(removal_sets(&big).len(), big.len());
    }

    #[test]
    fn follower_select_rules() {
        let f = fleet(vec![
            uav(1, [0.0; 3], &[1.0, 0.0]),
            uav(2, [10.0, 0.0, 0.0], &[1.0, 0.0]),
            uav(3, [5.0, 0.0, 0.0], &[0.0, 1.0]),
        ]);
        let t1 = task(1, [0.0; 3], &[1.0, 1.0]);
        let t2 = task(2, [10.0, 0.0, 0.0], &[1.0, 1.0]);
        let c1 = Coalition::from_members(&f[&1], [&f[&3]], 1).unwrap();
        let c2 = Coalition::from_members(&f[&2], [&f[&3]], 2).unwrap();
        let p = params();

        let one = follower_select(&f[&3], &[Offer { leader: 1, task: &t1, coalition: &c1 }], &p, &f).unwrap();
        assert_eq!(one.accepted, 1);
        assert!(one.refused.is_empty());

        // Equal credit gain and equal distance: tie goes to the lower leader id.
        let both = [
            Offer { leader: 2, task: &t2, coalition: &c2 },
            Offer { leader: 1, task: &t1, coalition: &c1 },
        ];
        let tie = follower_select(&f[&3], &both, &p, &f).unwrap();
        assert_eq!(tie.utilities[&1], tie.utilities[&2]);
        assert_eq!(tie.accepted, 1);
        assert_eq!(tie.refused, vec![2]);

        // Move the follower nearer to task 2.
        let mut near = f.clone();
        near.get_mut(&3).unwrap().position.0 = [9.0, 0.0, 0.0];
        let pick = follower_select(&near[&3], &both, &p, &near).unwrap();
        assert_eq!(pick.accepted, 2);
        assert!(follower_select(&f[&3], &[], &p, &f).is_none());
    }

    fn two_task_input<'a>(
        f: &'a Fleet,
        tasks: &'a [TaskDescriptor],
        leaders: &'a BTreeMap<TaskId, UavId>,
        p: &'a GameParams,
        ledger: &'a CreditLedger,
        snr: &'a FixedSnr,
    ) -> NegotiationInput<'a> {
        NegotiationInput {
            round: 1,
            fleet: f,
            tasks,
            leaders,
            params: p,
            credits: ledger,
            deadline: p.deadline(1.0),
            snr: tasks.iter().map(|t| (t.id, snr as &dyn SnrProvider)).collect(),
        }
    }

    #[test]
    fn disjoint_preferences_settle_in_one_round() {
        let f = fleet(vec![
            uav(1, [0.0; 3], &[1.0, 0.0]),
            uav(2, [5.0, 0.0, 0.0], &[0.0, 1.0]),
            uav(3, [0.5, 0.0, 0.0], &[0.0, 1.0]),
            uav(4, [5.5, 0.0, 0.0], &[1.0, 0.0]),
        ]);
        let tasks = vec![task(1, [0.0; 3], &[1.0, 1.0]), task(2, [5.0, 0.0, 0.0], &[1.0, 1.0])];
        let leaders = BTreeMap::from([(1, 1), (2, 2)]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let input = two_task_input(&f, &tasks, &leaders, &p, &ledger, &snr);
        let mut log = EventLog::new();
        let out = negotiate(&input, &mut log).unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.refusals, 0);
        assert_eq!(out.formed_for(1).unwrap().coalition.member_ids, member_set([1, 3]));
        assert_eq!(out.formed_for(2).unwrap().coalition.member_ids, member_set([2, 4]));
    }

    #[test]
    fn contested_follower_takes_two_rounds() {
        // Follower 3 is the best fit for both leaders but nearer to task 2;
        // leader 1 falls back to follower 4 after the refusal.
        let f = fleet(vec![
            uav(1, [0.0; 3], &[1.0, 0.0]),
            uav(2, [4.0, 0.0, 0.0], &[1.0, 0.0]),
            uav(3, [3.0, 0.0, 0.0], &[0.0, 1.0]),
            uav(4, [1.0, 0.0, 0.0], &[0.0, 1.5]),
        ]);
        let tasks = vec![task(1, [0.0; 3], &[1.0, 1.0]), task(2, [4.0, 0.0, 0.0], &[1.0, 1.0])];
        let leaders = BTreeMap::from([(1, 1), (2, 2)]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let input = two_task_input(&f, &tasks, &leaders, &p, &ledger, &snr);
        let mut log = EventLog::new();
        let out = negotiate(&input, &mut log).unwrap();

        assert_eq!(out.rounds, 2);
        assert_eq!(out.refusals, 1);
        assert!(out.rounds <= out.refusals + 1);
        assert_eq!(out.formed_for(2).unwrap().coalition.member_ids, member_set([2, 3]));
        assert_eq!(out.formed_for(1).unwrap().coalition.member_ids, member_set([1, 4]));
        assert_eq!(out.state.refusals[&1], member_set([3]));
        assert_eq!(out.state.phase[&3], Phase::Executing);

        let positions: Vec<LeaderPosition<'_>> = out
            .formed
            .iter()
            .map(|fc| {
                let t = tasks.iter().find(|t| t.id == fc.coalition.task_id).unwrap();
                let mut c = input.context(t).unwrap();
                c.leader = fc.coalition.leader_id;
                LeaderPosition {
                    followers: fc.coalition.followers().collect(),
                    available: out.available(t.id, fc.coalition.leader_id),
                    ctx: c,
                }
            })
            .collect();
        assert!(stability_check(&positions).unwrap());
    }

    #[test]
    fn leader_without_feasible_coalition_is_unserved() {
        let f = fleet(vec![uav(1, [0.0; 3], &[1.0, 0.0]), uav(2, [1.0, 0.0, 0.0], &[1.0, 0.0])]);
        let tasks = vec![task(1, [0.0; 3], &[1.0, 1.0])];
        let leaders = BTreeMap::from([(1, 1)]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let input = two_task_input(&f, &tasks, &leaders, &p, &ledger, &snr);
        let mut log = EventLog::new();
        let out = negotiate(&input, &mut log).unwrap();
        assert!(out.formed.is_empty());
        assert_eq!(out.unserved, vec![1]);
        assert!(log.events().iter().any(|e| matches!(e, Event::Unserved { task: 1, .. })));
    }

    #[test]
    fn stability_detects_profitable_merge_and_overlap() {
        let f = fleet(vec![uav(1, [0.0; 3], &[1.0, 0.0]), uav(2, [1.0, 0.0, 0.0], &[0.0, 1.0])]);
        let t = task(1, [0.0; 3], &[1.0, 1.0]);
        let p = params();
        let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
        let snr = FixedSnr(1.0);
        let singleton = LeaderPosition {
            ctx: ctx(&p, &ledger, &t, &f, &snr),
            followers: BTreeSet::new(),
            available: member_set([2]),
        };
        assert!(!stability_check(&[singleton]).unwrap());

        let a = LeaderPosition {
            ctx: ctx(&p, &ledger, &t, &f, &snr),
            followers: member_set([2]),
            available: BTreeSet::new(),
        };
        let b = LeaderPosition {
            ctx: ValuationContext { leader: 2, ..ctx(&p, &ledger, &t, &f, &snr) },
            followers: BTreeSet::new(),
            available: BTreeSet::new(),
        };
        assert!(!stability_check(&[a, b]).unwrap());
    }

    #[test]
    fn higher_credit_twin_is_preferred() {
        // Two followers identical in resources and position; only credit differs.
        let f = fleet(vec![
            uav(1, [0.0; 3], &[1.0, 0.0]),
            uav(2, [1.0, 0.0, 0.0], &[0.0, 1.0]),
            uav(3, [1.0, 0.0, 0.0], &[0.0, 1.0]),
        ]);
        let t = task(1, [0.0; 3], &[1.0, 1.0]);
        let p = params();
        let snr = FixedSnr(1.0);
        for (c2, c3, want) in [(0.0, 1.0, 3), (1.0, 0.0, 2)] {
            let ledger = CreditLedger::from_credits([(1, 1.0), (2, c2), (3, c3)].into(), 1.0, 1).unwrap();
            let c = ctx(&p, &ledger, &t, &f, &snr);
            let res = merge_split(&c, &member_set([2, 3])).unwrap();
            assert_eq!(res.followers, member_set([want]));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn merge_split_ends_stable_and_bounded(
            res in proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 3), 2..7),
            pos in proptest::collection::vec(-3.0..3.0f64, 6),
            need in proptest::collection::vec(0.2..1.5f64, 3),
            snr in 0.1..2.0f64,
        ) {
            let f = fleet(
                std::iter::once(uav(1, [0.0; 3], &[0.0; 3]))
                    .chain(res.iter().enumerate().map(|(i, r)| {
                        uav(i as UavId + 2, [pos[i % 6], pos[(i + 1) % 6], 0.0], r)
                    }))
                    .collect(),
            );
            let t = task(1, [0.0; 3], &need);
            let p = params();
            let ledger = CreditLedger::new(f.keys().copied(), 1.0).unwrap();
            let snr = FixedSnr(snr);
            let c = ctx(&p, &ledger, &t, &f, &snr);
            let candidates: BTreeSet<UavId> = f.keys().copied().filter(|&id| id != 1).collect();

            let res = merge_split(&c, &candidates).unwrap();
            let (_, best) = exhaustive_best(&c, &candidates).unwrap();
            let (_, alone) = exhaustive_best(&c, &BTreeSet::new()).unwrap();
            proptest::prop_assert!(res.followers.is_subset(&candidates));
            proptest::prop_assert!(res.value <= best + 1e-9);
            proptest::prop_assert!(res.value >= alone - 1e-9);
            let rest: BTreeSet<UavId> = candidates.difference(&res.followers).copied().collect();
            proptest::prop_assert!(is_locally_stable(&c, &res.followers, &rest).unwrap());
        }
    }
}
