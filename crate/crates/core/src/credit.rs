//! Cumulative cooperation credits.
//!
//! Each completed task pays its members an increment proportional to their
//! effective contribution, measured on what they actually expended. After
//! all of a round's increments are applied, the credits of the whole network
//! are min-max rescaled back into `[0, C]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{gamma_extended, Amount, Coalition, ResourceVector, TaskId, UavId};
use crate::error::{Error, Result};

/// What a member claimed at bid time against what it really expended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub uav_id: UavId,
    pub committed: ResourceVector,
    pub actual: ResourceVector,
}

/// One completed task to be settled in a round.
#[derive(Debug, Clone)]
pub struct TaskSettlement<'a> {
    pub coalition: &'a Coalition,
    pub required: &'a ResourceVector,
    pub reports: &'a [ContributionReport],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditLedger {
    credits: BTreeMap<UavId, f64>,
    capacity: f64,
    round: u64,
}

/// Effective resource contribution: the sum over required types of the
/// contributed-to-required ratio, clamped at 1 per type. Types with zero
/// requirement are skipped.
pub fn effective_contribution(actual: &ResourceVector, required: &ResourceVector) -> Result<f64> {
    if actual.len() != required.len() {
        return Err(Error::LengthMismatch {
            expected: required.len(),
            found: actual.len(),
        });
    }
    if !required.iter().any(Amount::is_positive) {
        return Err(Error::EmptyRequirement);
    }
    Ok(actual
        .iter()
        .zip(required.iter())
        .filter_map(|(have, need)| {
            let need = need.finite()?;
            (need > 0.0).then(|| gamma_extended(1.0, 0.0, have.ratio_to(need)))
        })
        .sum())
}

/// Credit increment `tau * a_i / sum(a)` for every contributor, where `tau`
/// is the task value. Errors when the contributions sum to zero.
pub fn credit_increments(
    contributions: &BTreeMap<UavId, ResourceVector>,
    required: &ResourceVector,
    task_id: TaskId,
) -> Result<BTreeMap<UavId, f64>> {
    let effective = contributions
        .iter()
        .map(|(&id, r)| Ok((id, effective_contribution(r, required)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let total: f64 = effective.values().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateCoalition { task: task_id });
    }
    let task_value = required.finite_total();
    Ok(effective
        .into_iter()
        .map(|(id, a)| (id, task_value * a / total))
        .collect())
}

impl CreditLedger {
    /// Every UAV starts at the same positive credit `capacity`.
    pub fn new(ids: impl IntoIterator<Item = UavId>, capacity: f64) -> Result<Self> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::InvalidValue(format!("initial credit {capacity}")));
        }
        Ok(Self {
            credits: ids.into_iter().map(|id| (id, capacity)).collect(),
            capacity,
            round: 0,
        })
    }

    /// Ledger with explicit credits, each of which must lie in `[0, capacity]`.
    pub fn from_credits(credits: BTreeMap<UavId, f64>, capacity: f64, round: u64) -> Result<Self> {
        let mut ledger = Self::new(std::iter::empty(), capacity)?;
        if let Some((id, c)) = credits.iter().find(|(_, &c)| !(0.0..=capacity).contains(&c)) {
            return Err(Error::InvalidValue(format!("credit {c} of UAV {id} outside [0, {capacity}]")));
        }
        ledger.credits = credits;
        ledger.round = round;
        Ok(ledger)
    }

    pub fn credit(&self, id: UavId) -> Option<f64> {
        self.credits.get(&id).copied()
    }

    pub fn credits(&self) -> &BTreeMap<UavId, f64> {
        &self.credits
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Credit divided by the capacity, in `[0, 1]`.
    pub fn normalized(&self, id: UavId) -> Option<f64> {
        self.credit(id).map(|c| c / self.capacity)
    }

    /// Settle a single task and rescale.
    pub fn update_after_task(
        &self,
        coalition: &Coalition,
        required: &ResourceVector,
        reports: &[ContributionReport],
    ) -> Result<CreditLedger> {
        let settlement = TaskSettlement {
            coalition,
            required,
            reports,
        };
        let outcome = self.apply_round(&[settlement]);
        match outcome.failures.into_iter().next() {
            Some((_, err)) => Err(err),
            None => Ok(outcome.ledger),
        }
    }

    /// Apply every settlement's increments, then rescale once over the whole
    /// network. A settlement that cannot be paid (missing report, zero total
    /// contribution) is skipped and reported in `failures`.
    pub fn apply_round(&self, settlements: &[TaskSettlement<'_>]) -> RoundCredits {
        let mut intermediate = self.credits.clone();
        let mut failures = Vec::new();
        let mut increments = BTreeMap::new();

        for s in settlements {
            match self.settlement_increments(s) {
                Ok(inc) => {
                    for (id, delta) in inc {
                        *intermediate.entry(id).or_insert(0.0) += delta;
                        increments.insert(id, delta);
                    }
                }
                Err(err) => failures.push((s.coalition.task_id, err)),
            }
        }

        RoundCredits {
            ledger: CreditLedger {
                credits: rescale(intermediate, self.capacity),
                capacity: self.capacity,
                round: self.round + 1,
            },
            increments,
            failures,
        }
    }

    fn settlement_increments(&self, s: &TaskSettlement<'_>) -> Result<BTreeMap<UavId, f64>> {
        let by_id: BTreeMap<UavId, &ContributionReport> =
            s.reports.iter().map(|r| (r.uav_id, r)).collect();
        let mut actual = BTreeMap::new();
        for &id in &s.coalition.member_ids {
            if !self.credits.contains_key(&id) {
                return Err(Error::UnknownUav(id));
            }
            let report = by_id.get(&id).ok_or(Error::MissingReport(id))?;
            actual.insert(id, report.actual.clone());
        }
        credit_increments(&actual, s.required, s.coalition.task_id)
    }
}

/// Result of settling one round.
#[derive(Debug)]
pub struct RoundCredits {
    pub ledger: CreditLedger,
    pub increments: BTreeMap<UavId, f64>,
    pub failures: Vec<(TaskId, Error)>,
}

fn rescale(intermediate: BTreeMap<UavId, f64>, capacity: f64) -> BTreeMap<UavId, f64> {
    let (min, max) = intermediate
        .values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    let span = max - min;
    // Negated so a NaN span also resets.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(span > 1e-12 * capacity.max(max.abs())) {
        return intermediate.into_keys().map(|id| (id, capacity)).collect();
    }
    intermediate
        .into_iter()
        .map(|(id, c)| (id, capacity * (c - min) / span))
        .collect()
}
