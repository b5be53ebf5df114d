//! Leader-side coalition value and follower-side offer utility.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::credit::{credit_increments, CreditLedger};
use crate::domain::{
    gamma_extended, travel_time, Coalition, GameParams, ResourceVector, TaskDescriptor, UavId,
    UavProfile,
};
use crate::error::{Error, Result};

pub type Fleet = BTreeMap<UavId, UavProfile>;

/// Source of the optimised base-station SNR of a coalition.
pub trait SnrProvider {
    fn coalition_snr(&self, coalition: &Coalition) -> f64;

    /// Bisection diagnostics `(t_up, iterations)` when the provider runs the
    /// optimiser.
    fn diagnostics(&self, _coalition: &Coalition) -> Option<(f64, usize)> {
        None
    }
}

/// Constant SNR for every coalition; handy when the relaying term is not
/// under study.
#[derive(Debug, Clone, Copy)]
pub struct FixedSnr(pub f64);

impl SnrProvider for FixedSnr {
    fn coalition_snr(&self, _: &Coalition) -> f64 {
        self.0
    }
}

pub struct ValuationContext<'a> {
    pub params: &'a GameParams,
    pub credits: &'a CreditLedger,
    pub task: &'a TaskDescriptor,
    /// The leader evaluating coalitions for `task`.
    pub leader: UavId,
    pub fleet: &'a Fleet,
    /// Preferred latest arrival time.
    pub deadline: f64,
    pub snr: &'a dyn SnrProvider,
}

impl ValuationContext<'_> {
    /// Coalition of the evaluating leader plus `followers`.
    pub fn coalition(&self, followers: &BTreeSet<UavId>) -> Result<Coalition> {
        let leader = self.uav(self.leader)?;
        let others = followers
            .iter()
            .map(|&id| self.uav(id))
            .collect::<Result<Vec<_>>>()?;
        Coalition::from_members(leader, others, self.task.id)
    }

    pub fn uav(&self, id: UavId) -> Result<&UavProfile> {
        self.fleet.get(&id).ok_or(Error::UnknownUav(id))
    }

    pub fn value_of(&self, followers: &BTreeSet<UavId>) -> Result<f64> {
        Ok(leader_value(&self.coalition(followers)?, self))
    }
}

/// The four terms of the leader's coalition value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBreakdown {
    pub credit: f64,
    pub snr: f64,
    pub resources: f64,
    pub deadline: f64,
    /// No required resource type is short.
    pub deficit_free: bool,
}

impl ValueBreakdown {
    pub fn total(&self) -> f64 {
        self.credit + self.snr + self.resources - self.deadline
    }
}

/// Term-by-term coalition value as seen by `ctx.leader`.
///
/// Resource ratios are taken as required over available, so a shortfall
/// saturates to `-L` while a surplus scores below 1. Types the task does not
/// need are skipped.
pub fn value_breakdown(coalition: &Coalition, ctx: &ValuationContext<'_>) -> ValueBreakdown {
    let p = ctx.params;
    let neg_l = -p.big_l;

    let credit: f64 = coalition
        .followers()
        .map(|id| ctx.credits.credit(id).unwrap_or(0.0))
        .sum();

    let snr = coalition
        .snr_opt
        .unwrap_or_else(|| ctx.snr.coalition_snr(coalition));
    let snr_ratio = if snr > 0.0 { p.snr_threshold / snr } else { f64::INFINITY };

    let mut deficit_free = true;
    let resources: f64 = coalition
        .aggregate
        .iter()
        .zip(ctx.task.required.iter())
        .filter_map(|(have, need)| {
            let need = need.finite().filter(|&n| n > 0.0)?;
            let ratio = have.inverse_ratio(need);
            if ratio > 1.0 {
                deficit_free = false;
            }
            Some(gamma_extended(neg_l, p.gamma_eps, ratio))
        })
        .sum();

    let latest = coalition
        .member_ids
        .iter()
        .filter_map(|id| ctx.fleet.get(id))
        .map(|u| travel_time(u, ctx.task))
        .fold(0.0, f64::max);

    ValueBreakdown {
        credit: p.alpha1 * credit,
        snr: p.alpha2 * gamma_extended(neg_l, p.gamma_eps, snr_ratio),
        resources: p.alpha3 * resources,
        deadline: gamma_extended(p.big_l, p.gamma_eps, latest / ctx.deadline),
        deficit_free,
    }
}

/// Coalition value for the evaluating leader. Coalitions that do not contain
/// that leader are worth nothing to it.
pub fn leader_value(coalition: &Coalition, ctx: &ValuationContext<'_>) -> f64 {
    if coalition.leader_id != ctx.leader || !coalition.contains(ctx.leader) {
        return 0.0;
    }
    value_breakdown(coalition, ctx).total()
}

/// Credit increment `uav` would earn if every member of `offer` expended
/// all of its committed resources.
pub fn expected_credit_increment(
    uav: UavId,
    offer: &Coalition,
    required: &ResourceVector,
    fleet: &Fleet,
) -> f64 {
    let committed: Option<BTreeMap<UavId, ResourceVector>> = offer
        .member_ids
        .iter()
        .chain(std::iter::once(&uav))
        .map(|id| fleet.get(id).map(|u| (*id, u.resources.clone())))
        .collect();
    committed
        .and_then(|c| credit_increments(&c, required, offer.task_id).ok())
        .and_then(|inc| inc.get(&uav).copied())
        .unwrap_or(0.0)
}

/// Follower's utility for joining `offer`: expected credit gain minus the
/// weighted travel time to the task.
pub fn follower_utility(uav: &UavProfile, offer: &Coalition, ctx: &ValuationContext<'_>) -> f64 {
    let gain = expected_credit_increment(uav.id, offer, &ctx.task.required, ctx.fleet);
    utility_from_parts(gain, ctx.params.alpha4, travel_time(uav, ctx.task))
}

pub(crate) fn utility_from_parts(expected_gain: f64, alpha4: f64, travel: f64) -> f64 {
    expected_gain - alpha4 * travel
}
