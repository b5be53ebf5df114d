//! Core vocabulary shared by every other module: resource vectors, UAV and
//! task descriptions, coalitions, game weights and the clamping function used
//! throughout the valuation and credit formulas.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Index;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type UavId = u32;
pub type TaskId = u32;

/// Clamp `x` to itself on `(0, 1 + eps]` and to `l` everywhere above.
///
/// With `eps = 0` this is the plain saturating form used by the coalition
/// value and the effective-contribution sum.
pub fn gamma(l: f64, eps: f64, x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidClampArgument(x));
    }
    Ok(gamma_extended(l, eps, x))
}

/// Same as [`gamma`] but defined on the closed half line `[0, +inf]`.
///
/// Ratios with a zero denominator (missing resource, zero SNR) arrive here as
/// `+inf` and land on the saturation branch; a zero numerator stays 0.
pub(crate) fn gamma_extended(l: f64, eps: f64, x: f64) -> f64 {
    debug_assert!(!x.is_nan() && x >= 0.0);
    if x <= 1.0 + eps {
        x
    } else {
        l
    }
}

/// One resource quantity. Non-consumable resources are `Unlimited`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amount {
    Finite(f64),
    Unlimited,
}

impl Amount {
    pub const ZERO: Amount = Amount::Finite(0.0);

    pub fn is_unlimited(self) -> bool {
        matches!(self, Amount::Unlimited)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Amount::Finite(v) => Some(v),
            Amount::Unlimited => None,
        }
    }

    pub fn is_positive(self) -> bool {
        match self {
            Amount::Finite(v) => v > 0.0,
            Amount::Unlimited => true,
        }
    }

    /// Ratio `self / denom` for a finite positive denominator.
    pub fn ratio_to(self, denom: f64) -> f64 {
        match self {
            Amount::Finite(v) => v / denom,
            Amount::Unlimited => f64::INFINITY,
        }
    }

    /// Ratio `numer / self`, which is zero against an unlimited amount and
    /// `+inf` against a zero amount with positive numerator.
    pub fn inverse_ratio(self, numer: f64) -> f64 {
        match self {
            Amount::Unlimited => 0.0,
            Amount::Finite(v) if v > 0.0 => numer / v,
            Amount::Finite(_) => {
                if numer > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }

    pub fn covers(self, need: f64) -> bool {
        match self {
            Amount::Finite(v) => v >= need,
            Amount::Unlimited => true,
        }
    }

    pub fn scaled(self, factor: f64) -> Amount {
        match self {
            Amount::Finite(v) => Amount::Finite(v * factor),
            Amount::Unlimited => Amount::Unlimited,
        }
    }
}

impl std::ops::Add for Amount {
    type Output = Amount;

    fn add(self, rhs: Amount) -> Amount {
        match (self, rhs) {
            (Amount::Finite(a), Amount::Finite(b)) => Amount::Finite(a + b),
            _ => Amount::Unlimited,
        }
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Amount::Finite(v) => write!(f, "{v}"),
            Amount::Unlimited => f.write_str("unlimited"),
        }
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Amount::Finite(v) => s.serialize_f64(*v),
            Amount::Unlimited => s.serialize_str("unlimited"),
        }
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct AmountVisitor;

        impl Visitor<'_> for AmountVisitor {
            type Value = Amount;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or the string \"unlimited\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Amount, E> {
                Ok(Amount::Finite(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Amount, E> {
                Ok(Amount::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Amount, E> {
                Ok(Amount::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Amount, E> {
                match v {
                    "unlimited" | "inf" => Ok(Amount::Unlimited),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        d.deserialize_any(AmountVisitor)
    }
}

/// Per-type resource quantities (capabilities, requirements or coalition
/// aggregates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceVector(Vec<Amount>);

impl ResourceVector {
    pub fn new(amounts: Vec<Amount>) -> Result<Self> {
        for a in &amounts {
            if let Amount::Finite(v) = a {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(Error::InvalidValue(format!("resource amount {v}")));
                }
            }
        }
        Ok(Self(amounts))
    }

    pub fn from_finite(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().copied().map(Amount::Finite).collect())
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![Amount::ZERO; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Amount> + '_ {
        self.0.iter().copied()
    }

    pub fn amounts(&self) -> &[Amount] {
        &self.0
    }

    fn check_len(&self, other: &ResourceVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &ResourceVector) -> Result<ResourceVector> {
        self.check_len(other)?;
        Ok(Self(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect()))
    }

    pub fn scaled(&self, factor: f64) -> ResourceVector {
        Self(self.iter().map(|a| a.scaled(factor)).collect())
    }

    /// Componentwise `self >= need`. `need` is expected to be finite.
    pub fn covers(&self, need: &ResourceVector) -> Result<bool> {
        self.check_len(need)?;
        Ok(self
            .iter()
            .zip(need.iter())
            .all(|(have, need)| match need {
                Amount::Finite(n) => have.covers(n),
                Amount::Unlimited => have.is_unlimited(),
            }))
    }

    /// Sum of finite components; unlimited components are ignored.
    pub fn finite_total(&self) -> f64 {
        self.iter().filter_map(Amount::finite).sum()
    }

    /// Subtract `used` from each finite component, flooring at zero.
    pub fn deplete(&self, used: &ResourceVector) -> Result<ResourceVector> {
        self.check_len(used)?;
        Ok(Self(
            self.iter()
                .zip(used.iter())
                .map(|(have, used)| match (have, used) {
                    (Amount::Finite(h), Amount::Finite(u)) => Amount::Finite((h - u).max(0.0)),
                    (Amount::Finite(_), Amount::Unlimited) => Amount::ZERO,
                    (Amount::Unlimited, _) => Amount::Unlimited,
                })
                .collect(),
        ))
    }
}

impl Index<usize> for ResourceVector {
    type Output = Amount;

    fn index(&self, i: usize) -> &Amount {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Position(pub [f64; 3]);

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.distance(&Position::default())
    }
}

/// How a UAV behaves once it has joined a coalition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Cooperative,
    /// Expends only `fraction` of what it committed.
    Selfish { fraction: f64 },
}

impl Behavior {
    pub fn expended(&self, committed: &ResourceVector) -> ResourceVector {
        match self {
            Behavior::Cooperative => committed.clone(),
            Behavior::Selfish { fraction } => committed.scaled(*fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavProfile {
    pub id: UavId,
    pub position: Position,
    pub speed: f64,
    pub resources: ResourceVector,
    pub power_cap: f64,
    pub behavior: Behavior,
    pub is_leader_capable: bool,
}

impl UavProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(Error::InvalidValue(format!("UAV {} speed {}", self.id, self.speed)));
        }
        if !(self.power_cap.is_finite() && self.power_cap > 0.0) {
            return Err(Error::InvalidValue(format!(
                "UAV {} power cap {}",
                self.id, self.power_cap
            )));
        }
        if let Behavior::Selfish { fraction } = self.behavior {
            if !(0.0..1.0).contains(&fraction) {
                return Err(Error::InvalidValue(format!(
                    "UAV {} selfish fraction {fraction} outside [0, 1)",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub id: TaskId,
    pub location: Position,
    pub required: ResourceVector,
    pub appearance_round: u64,
}

impl TaskDescriptor {
    pub fn new(
        id: TaskId,
        location: Position,
        required: ResourceVector,
        appearance_round: u64,
    ) -> Result<Self> {
        if required.iter().any(Amount::is_unlimited) {
            return Err(Error::InvalidValue(format!("task {id} requires an unlimited amount")));
        }
        if !required.iter().any(Amount::is_positive) {
            return Err(Error::EmptyRequirement);
        }
        Ok(Self {
            id,
            location,
            required,
            appearance_round,
        })
    }

    /// Task value: the sum of all required amounts.
    pub fn value(&self) -> f64 {
        self.required.finite_total()
    }
}

/// A leader-rooted member set serving one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coalition {
    pub leader_id: UavId,
    pub member_ids: BTreeSet<UavId>,
    pub task_id: TaskId,
    pub aggregate: ResourceVector,
    pub snr_opt: Option<f64>,
}

impl Coalition {
    /// Build a coalition from profiles; the leader is always added to the
    /// member set.
    pub fn from_members<'a>(
        leader: &'a UavProfile,
        followers: impl IntoIterator<Item = &'a UavProfile>,
        task_id: TaskId,
    ) -> Result<Self> {
        let mut members = vec![leader];
        members.extend(followers.into_iter().filter(|u| u.id != leader.id));
        let aggregate = aggregate_resources(&members)?;
        Ok(Self {
            leader_id: leader.id,
            member_ids: members.iter().map(|u| u.id).collect(),
            task_id,
            aggregate,
            snr_opt: None,
        })
    }

    pub fn contains(&self, id: UavId) -> bool {
        self.member_ids.contains(&id)
    }

    /// Member ids with the leader first, then the rest ascending. This is the
    /// relay order used for channel vectors.
    pub fn relay_order(&self) -> Vec<UavId> {
        std::iter::once(self.leader_id)
            .chain(self.member_ids.iter().copied().filter(|&id| id != self.leader_id))
            .collect()
    }

    pub fn followers(&self) -> impl Iterator<Item = UavId> + '_ {
        self.member_ids.iter().copied().filter(move |&id| id != self.leader_id)
    }
}

/// Weights and thresholds of the coalition game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub big_l: f64,
    pub gamma_eps: f64,
    pub snr_threshold: f64,
    pub field_radius: f64,
    pub deadline_factor: f64,
    pub merge_split_eps: f64,
    pub initial_credit: f64,
}

impl GameParams {
    /// Saturation magnitude large enough to dominate every bounded term of
    /// the coalition value for a network of `n_uavs` and `n_types` resources.
    pub fn default_big_l(
        alpha1: f64,
        alpha2: f64,
        alpha3: f64,
        initial_credit: f64,
        n_uavs: usize,
        n_types: usize,
    ) -> f64 {
        1e3 * (alpha1 * initial_credit * n_uavs as f64 + alpha2 + alpha3 * n_types as f64 + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
            ("big_l", self.big_l),
            ("snr_threshold", self.snr_threshold),
            ("field_radius", self.field_radius),
            ("deadline_factor", self.deadline_factor),
            ("merge_split_eps", self.merge_split_eps),
            ("initial_credit", self.initial_credit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma_eps.is_finite() && self.gamma_eps >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma_eps must be nonnegative, got {}",
                self.gamma_eps
            )));
        }
        Ok(())
    }

    /// Preferred arrival deadline `deadline_factor * field_radius / reference_speed`.
    pub fn deadline(&self, reference_speed: f64) -> f64 {
        self.deadline_factor * self.field_radius / reference_speed
    }
}

/// Componentwise sum of the members' capability vectors.
pub fn aggregate_resources(members: &[&UavProfile]) -> Result<ResourceVector> {
    let (first, rest) = members.split_first().ok_or(Error::EmptyMembers)?;
    rest.iter()
        .try_fold(first.resources.clone(), |acc, u| acc.checked_add(&u.resources))
}

/// Straight-line travel time from the UAV's position to the task location.
pub fn travel_time(uav: &UavProfile, task: &TaskDescriptor) -> f64 {
    uav.position.distance(&task.location) / uav.speed
}

/// Mean speed of a set of UAVs, the reference speed of the deadline.
pub fn mean_speed<'a>(uavs: impl IntoIterator<Item = &'a UavProfile>) -> f64 {
    let (sum, n) = uavs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), u| (s + u.speed, n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

pub fn member_set(ids: impl IntoIterator<Item = UavId>) -> BTreeSet<UavId> {
    ids.into_iter().collect()
}
