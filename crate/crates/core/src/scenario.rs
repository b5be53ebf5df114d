//! Reproducible worlds: UAV placement, resources, tasks and fading channels.
//!
//! Every random draw comes from a ChaCha stream keyed by the seed, the round
//! and the purpose of the draw, so rounds are independent and a round can be
//! regenerated without replaying the ones before it.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beamforming::{optimize_snr, BisectionOptions, ChannelState};
use crate::domain::{
    Amount, Behavior, Coalition, GameParams, Position, ResourceVector, TaskDescriptor, TaskId,
    UavId, UavProfile,
};
use crate::error::{Error, Result};
use crate::valuation::{Fleet, SnrProvider};

/// Tunable weights of the coalition game. `big_l` defaults to a value that
/// dominates every bounded term for the configured network size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub big_l: Option<f64>,
    pub gamma_eps: f64,
    pub snr_threshold: f64,
    pub deadline_factor: f64,
    pub merge_split_eps: f64,
    pub initial_credit: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.1,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 0.1,
            big_l: None,
            gamma_eps: 0.0,
            snr_threshold: 0.1,
            // Any point of the field is reachable on time from any other.
            deadline_factor: 2.0,
            merge_split_eps: 1e-9,
            initial_credit: 1.0,
        }
    }
}

/// Resource range either shared by every type or given per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RangeSpec {
    Shared([f64; 2]),
    PerType(Vec<[f64; 2]>),
}

impl RangeSpec {
    fn for_type(&self, j: usize) -> [f64; 2] {
        match self {
            RangeSpec::Shared(r) => *r,
            RangeSpec::PerType(v) => v[j],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Depletion {
    /// Capabilities never change.
    #[default]
    None,
    /// Each member loses its share of the requirement it actually served.
    Consume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_leaders: usize,
    pub n_followers: usize,
    pub n_resource_types: usize,
    pub field_radius: f64,
    pub resource_range: RangeSpec,
    /// Probability that a UAV carries a given resource type at all.
    pub resource_presence: f64,
    pub task_requirement_range: [f64; 2],
    /// Tasks appear within this fraction of the field radius from their leader.
    pub detection_radius: f64,
    pub selfish_ids: Vec<UavId>,
    /// One fraction per selfish id, or a single fraction for all of them.
    pub selfish_fractions: Vec<f64>,
    /// Per-UAV speeds in id order; every UAV flies at 1 when empty.
    pub speeds: Vec<f64>,
    pub power_cap: f64,
    pub channel_exponent: f64,
    pub channel_scale: f64,
    pub noise_variance: f64,
    pub base_noise: f64,
    pub base_station: [f64; 3],
    /// Followers take fresh positions every round.
    pub relocate_followers: bool,
    /// Keep the first round's requirement vectors instead of drawing new ones.
    pub persistent_tasks: bool,
    pub depletion: Depletion,
    /// Absolute bisection precision; relative `1e-6 * t_up` when unset.
    pub precision: Option<f64>,
    pub game: GameConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_leaders: 2,
            n_followers: 6,
            n_resource_types: 5,
            field_radius: 1.0,
            resource_range: RangeSpec::Shared([0.3, 0.8]),
            resource_presence: 1.0,
            task_requirement_range: [1.0, 1.5],
            detection_radius: 0.2,
            selfish_ids: Vec::new(),
            selfish_fractions: vec![0.0],
            speeds: Vec::new(),
            power_cap: 1.0,
            channel_exponent: 1.0,
            channel_scale: 1.0,
            noise_variance: 1.0,
            base_noise: 1.0,
            base_station: [0.0; 3],
            relocate_followers: true,
            persistent_tasks: false,
            depletion: Depletion::None,
            precision: None,
            game: GameConfig::default(),
        }
    }
}

fn check_range(name: &str, [lo, hi]: [f64; 2]) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} [{lo}, {hi}] is not a nonnegative range")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn n_uavs(&self) -> usize {
        self.n_leaders + self.n_followers
    }

    pub fn leader_ids(&self) -> impl Iterator<Item = UavId> {
        1..=self.n_leaders as UavId
    }

    pub fn follower_ids(&self) -> impl Iterator<Item = UavId> {
        self.n_leaders as UavId + 1..=self.n_uavs() as UavId
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_leaders == 0 || self.n_followers == 0 || self.n_resource_types == 0 {
            return Err(Error::InvalidConfig(
                "n_leaders, n_followers and n_resource_types must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("field_radius", self.field_radius),
            ("power_cap", self.power_cap),
            ("channel_exponent", self.channel_exponent),
            ("channel_scale", self.channel_scale),
            ("noise_variance", self.noise_variance),
            ("base_noise", self.base_noise),
        ] {
            check_positive(name, v)?;
        }
        if let Some(p) = self.precision {
            check_positive("precision", p)?;
        }
        match &self.resource_range {
            RangeSpec::Shared(r) => check_range("resource_range", *r)?,
            RangeSpec::PerType(v) => {
                if v.len() != self.n_resource_types {
                    return Err(Error::InvalidConfig(format!(
                        "resource_range lists {} types, expected {}",
                        v.len(),
                        self.n_resource_types
                    )));
                }
                for r in v {
                    check_range("resource_range", *r)?;
                }
            }
        }
        check_range("task_requirement_range", self.task_requirement_range)?;
        if self.task_requirement_range[1] <= 0.0 {
            return Err(Error::InvalidConfig("task_requirement_range must allow positive needs".into()));
        }
        if !(0.0..=1.0).contains(&self.resource_presence) {
            return Err(Error::InvalidConfig(format!(
                "resource_presence {} outside [0, 1]",
                self.resource_presence
            )));
        }
        if !(self.detection_radius.is_finite() && self.detection_radius >= 0.0) {
            return Err(Error::InvalidConfig("detection_radius must be nonnegative".into()));
        }
        if !self.selfish_ids.is_empty()
            && self.selfish_fractions.len() != 1
            && self.selfish_fractions.len() != self.selfish_ids.len()
        {
            return Err(Error::InvalidConfig(
                "selfish_fractions needs one entry or one per selfish id".into(),
            ));
        }
        for &id in &self.selfish_ids {
            if id == 0 || id as usize > self.n_uavs() {
                return Err(Error::InvalidConfig(format!("selfish id {id} is not a UAV")));
            }
        }
        if !self.speeds.is_empty() && self.speeds.len() != self.n_uavs() {
            return Err(Error::InvalidConfig(format!(
                "speeds lists {} UAVs, expected {}",
                self.speeds.len(),
                self.n_uavs()
            )));
        }
        for &s in &self.speeds {
            check_positive("speed", s)?;
        }
        self.game_params()?.validate()
    }

    pub fn game_params(&self) -> Result<GameParams> {
        let g = &self.game;
        let big_l = g.big_l.unwrap_or_else(|| {
            GameParams::default_big_l(
                g.alpha1,
                g.alpha2,
                g.alpha3,
                g.initial_credit,
                self.n_uavs(),
                self.n_resource_types,
            )
        });
        let params = GameParams {
            alpha1: g.alpha1,
            alpha2: g.alpha2,
            alpha3: g.alpha3,
            alpha4: g.alpha4,
            big_l,
            gamma_eps: g.gamma_eps,
            snr_threshold: g.snr_threshold,
            field_radius: self.field_radius,
            deadline_factor: g.deadline_factor,
            merge_split_eps: g.merge_split_eps,
            initial_credit: g.initial_credit,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            exponent: self.channel_exponent,
            scale: self.channel_scale,
            noise_variance: self.noise_variance,
            base_noise: self.base_noise,
            min_distance: 1e-3 * self.field_radius,
        }
    }

    pub fn bisection(&self) -> BisectionOptions {
        BisectionOptions {
            precision: self.precision,
            ..BisectionOptions::default()
        }
    }

    fn behavior(&self, id: UavId) -> Behavior {
        match self.selfish_ids.iter().position(|&s| s == id) {
            Some(k) => Behavior::Selfish {
                fraction: *self.selfish_fractions.get(k).unwrap_or(&self.selfish_fractions[0]),
            },
            None => Behavior::Cooperative,
        }
    }

    fn speed(&self, id: UavId) -> f64 {
        self.speeds.get(id as usize - 1).copied().unwrap_or(1.0)
    }
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy)]
pub enum Purpose {
    Placement = 0,
    Resources = 1,
    Tasks = 2,
    Channels = 3,
}

/// Independent generator for one `(round, purpose)` pair of a seed.
pub fn stream_rng(seed: u64, round: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((round << 8) | purpose as u64);
    rng
}

/// Uniform point in the ball of radius `radius` around `center`.
pub fn uniform_in_ball<R: Rng>(rng: &mut R, center: Position, radius: f64) -> Position {
    let dir: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().cbrt();
    Position(std::array::from_fn(|k| center.0[k] + r * dir[k] / norm))
}

fn draw_resources<R: Rng>(rng: &mut R, cfg: &ScenarioConfig) -> ResourceVector {
    let amounts = (0..cfg.n_resource_types)
        .map(|j| {
            let [lo, hi] = cfg.resource_range.for_type(j);
            let present = rng.random::<f64>() < cfg.resource_presence;
            let v = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            Amount::Finite(if present { v } else { 0.0 })
        })
        .collect();
    ResourceVector::new(amounts).expect("finite nonnegative draws")
}

fn draw_requirement<R: Rng>(rng: &mut R, cfg: &ScenarioConfig) -> ResourceVector {
    let [lo, hi] = cfg.task_requirement_range;
    loop {
        let v: Vec<f64> = (0..cfg.n_resource_types)
            .map(|_| if lo < hi { rng.random_range(lo..=hi) } else { lo })
            .collect();
        if v.iter().any(|&x| x > 0.0) {
            return ResourceVector::from_finite(&v).expect("finite nonnegative draws");
        }
    }
}

/// Snapshot of the network in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub round: u64,
    pub fleet: Fleet,
    pub tasks: Vec<TaskDescriptor>,
    /// Detecting leader of each task.
    pub leaders: BTreeMap<TaskId, UavId>,
    pub base_station: Position,
    pub params: GameParams,
}

/// Initial world: leaders `1..=n_leaders`, followers after them, and one
/// task near each leader with the same id as that leader.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<World> {
    cfg.validate()?;
    let params = cfg.game_params()?;
    let origin = Position([0.0; 3]);
    let mut placement = stream_rng(cfg.seed, 0, Purpose::Placement);
    let mut resources = stream_rng(cfg.seed, 0, Purpose::Resources);

    let mut fleet = Fleet::new();
    for id in 1..=cfg.n_uavs() as UavId {
        let uav = UavProfile {
            id,
            position: uniform_in_ball(&mut placement, origin, cfg.field_radius),
            speed: cfg.speed(id),
            resources: draw_resources(&mut resources, cfg),
            power_cap: cfg.power_cap,
            behavior: cfg.behavior(id),
            is_leader_capable: id as usize <= cfg.n_leaders,
        };
        uav.validate()?;
        fleet.insert(id, uav);
    }

    let mut task_rng = stream_rng(cfg.seed, 0, Purpose::Tasks);
    let mut tasks = Vec::new();
    let mut leaders = BTreeMap::new();
    for leader in cfg.leader_ids() {
        let location = uniform_in_ball(
            &mut task_rng,
            fleet[&leader].position,
            cfg.detection_radius * cfg.field_radius,
        );
        let required = draw_requirement(&mut task_rng, cfg);
        tasks.push(TaskDescriptor::new(leader, location, required, 0)?);
        leaders.insert(leader, leader);
    }

    Ok(World {
        round: 0,
        fleet,
        tasks,
        leaders,
        base_station: Position(cfg.base_station),
        params,
    })
}

impl World {
    /// World of round `round`: fresh follower positions and task
    /// requirements according to the config. Capabilities carry over.
    pub fn advance(&self, cfg: &ScenarioConfig, round: u64) -> World {
        let mut next = self.clone();
        next.round = round;
        if cfg.relocate_followers {
            let mut rng = stream_rng(cfg.seed, round, Purpose::Placement);
            for id in cfg.follower_ids() {
                let p = uniform_in_ball(&mut rng, Position([0.0; 3]), cfg.field_radius);
                if let Some(u) = next.fleet.get_mut(&id) {
                    u.position = p;
                }
            }
        }
        if !cfg.persistent_tasks {
            let mut rng = stream_rng(cfg.seed, round, Purpose::Tasks);
            for t in &mut next.tasks {
                t.required = draw_requirement(&mut rng, cfg);
                t.appearance_round = round;
            }
        }
        next
    }
}

/// Large-scale fading and noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub exponent: f64,
    pub scale: f64,
    /// Receiver noise variance at each relay.
    pub noise_variance: f64,
    /// Noise variance at the base station.
    pub base_noise: f64,
    /// Distances below this are raised to it.
    pub min_distance: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            exponent: 1.0,
            scale: 1.0,
            noise_variance: 1.0,
            base_noise: 1.0,
            min_distance: 1e-3,
        }
    }
}

impl ChannelModel {
    pub fn variance(&self, distance: f64) -> f64 {
        self.scale * distance.max(self.min_distance).powf(-self.exponent)
    }

    /// Circularly-symmetric complex Gaussian gain over `distance`.
    pub fn draw_gain<R: Rng>(&self, rng: &mut R, distance: f64) -> Complex64 {
        let sd = (self.variance(distance) / 2.0).sqrt();
        let n = Normal::new(0.0, sd).expect("finite standard deviation");
        Complex64::new(n.sample(rng), n.sample(rng))
    }
}

/// Channels of relays at `relays` forwarding from `target` to `base`.
pub fn sample_channels<R: Rng>(
    rng: &mut R,
    relays: &[Position],
    target: Position,
    base: Position,
    model: &ChannelModel,
) -> Result<ChannelState> {
    let mut h_tu = Vec::with_capacity(relays.len());
    let mut h_ub = Vec::with_capacity(relays.len());
    for p in relays {
        h_tu.push(model.draw_gain(rng, target.distance(p)));
        h_ub.push(model.draw_gain(rng, p.distance(&base)));
    }
    ChannelState::new(h_tu, h_ub, vec![model.noise_variance; relays.len()], model.base_noise)
}

/// Per-UAV channels of one task, frozen for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskChannels {
    gains: BTreeMap<UavId, (Complex64, Complex64)>,
    noise_variance: f64,
    base_noise: f64,
}

impl TaskChannels {
    pub fn sample(
        world: &World,
        task: &TaskDescriptor,
        model: &ChannelModel,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng(seed, world.round, Purpose::Channels);
        // One substream per task keeps draws independent of task order.
        rng.set_word_pos(u128::from(task.id) << 40);
        let ids: Vec<UavId> = world.fleet.keys().copied().collect();
        let positions: Vec<Position> = world.fleet.values().map(|u| u.position).collect();
        let ch = sample_channels(&mut rng, &positions, task.location, world.base_station, model)?;
        Ok(Self {
            gains: ids
                .into_iter()
                .zip(ch.h_tu.into_iter().zip(ch.h_ub))
                .collect(),
            noise_variance: model.noise_variance,
            base_noise: model.base_noise,
        })
    }

    /// Channel state of `members` in the given relay order.
    pub fn for_members(&self, members: &[UavId]) -> Result<ChannelState> {
        let mut h_tu = Vec::with_capacity(members.len());
        let mut h_ub = Vec::with_capacity(members.len());
        for id in members {
            let (tu, ub) = self.gains.get(id).ok_or(Error::UnknownUav(*id))?;
            h_tu.push(*tu);
            h_ub.push(*ub);
        }
        ChannelState::new(h_tu, h_ub, vec![self.noise_variance; members.len()], self.base_noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRecord {
    pub snr: f64,
    pub t_up: f64,
    pub iterations: usize,
}

/// Optimised coalition SNR over frozen task channels, memoised by member set.
pub struct SnrCache<'a> {
    channels: TaskChannels,
    fleet: &'a Fleet,
    options: BisectionOptions,
    solved: RefCell<BTreeMap<Vec<UavId>, SnrRecord>>,
}

impl<'a> SnrCache<'a> {
    pub fn new(channels: TaskChannels, fleet: &'a Fleet, options: BisectionOptions) -> Self {
        Self {
            channels,
            fleet,
            options,
            solved: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn solve(&self, coalition: &Coalition) -> Result<SnrRecord> {
        let order = coalition.relay_order();
        if let Some(r) = self.solved.borrow().get(&order) {
            return Ok(*r);
        }
        let state = self.channels.for_members(&order)?;
        let caps = order
            .iter()
            .map(|id| self.fleet.get(id).map(|u| u.power_cap).ok_or(Error::UnknownUav(*id)))
            .collect::<Result<Vec<_>>>()?;
        let sol = optimize_snr(&state, &caps, &self.options)?;
        let record = SnrRecord {
            snr: sol.snr,
            t_up: sol.t_up,
            iterations: sol.iterations,
        };
        self.solved.borrow_mut().insert(order, record);
        Ok(record)
    }

    pub fn solved_count(&self) -> usize {
        self.solved.borrow().len()
    }
}

impl SnrProvider for SnrCache<'_> {
    fn coalition_snr(&self, coalition: &Coalition) -> f64 {
        self.solve(coalition).map_or(0.0, |r| r.snr)
    }

    fn diagnostics(&self, coalition: &Coalition) -> Option<(f64, usize)> {
        self.solve(coalition).ok().map(|r| (r.t_up, r.iterations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_world_shape() {
        let w = generate_scenario(&ScenarioConfig::default()).unwrap();
        assert_eq!(w.fleet.len(), 8);
        assert_eq!(w.tasks.len(), 2);
        assert!(w.fleet.values().all(|u| u.resources.len() == 5));
        assert_eq!(w.fleet.values().filter(|u| u.is_leader_capable).count(), 2);
        assert!(w.fleet.values().all(|u| u.position.norm() <= 1.0 + 1e-12));
        for t in &w.tasks {
            let leader = &w.fleet[&w.leaders[&t.id]];
            assert!(leader.position.distance(&t.location) <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn same_seed_same_world() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_scenario(&cfg).unwrap(), generate_scenario(&cfg).unwrap());
        let w = generate_scenario(&cfg).unwrap();
        assert_eq!(w.advance(&cfg, 3), w.advance(&cfg, 3));
        assert_ne!(w.advance(&cfg, 3), w.advance(&cfg, 4));
    }

    #[test]
    fn seeds_change_placements() {
        let mean_pairwise = |seed: u64| {
            let cfg = ScenarioConfig { seed, ..ScenarioConfig::default() };
            let w = generate_scenario(&cfg).unwrap();
            let ps: Vec<Position> = w.fleet.values().map(|u| u.position).collect();
            let mut sum = 0.0;
            let mut n = 0.0;
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    sum += ps[i].distance(&ps[j]);
                    n += 1.0;
                }
            }
            sum / n
        };
        let means: Vec<f64> = (0..100).map(mean_pairwise).collect();
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        assert!(var > 1e-4, "variance {var}");
        // Two independent uniform points in the unit ball are 36/35 apart on average.
        assert!((avg - 36.0 / 35.0).abs() < 0.05, "mean {avg}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            ScenarioConfig { n_leaders: 0, ..ScenarioConfig::default() },
            ScenarioConfig { resource_range: RangeSpec::Shared([1.0, 0.5]), ..ScenarioConfig::default() },
            ScenarioConfig { task_requirement_range: [-1.0, 1.0], ..ScenarioConfig::default() },
            ScenarioConfig { selfish_ids: vec![42], ..ScenarioConfig::default() },
            ScenarioConfig { channel_exponent: 0.0, ..ScenarioConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_scenario(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ScenarioConfig::from_toml_str(
            "seed = 9\nselfish_ids = [5, 6]\nresource_range = [[0, 1], [0, 2], [0, 1], [0, 1], [0, 1]]\n[game]\nalpha1 = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.game.alpha1, 0.2);
        assert_eq!(cfg.resource_range.for_type(1), [0.0, 2.0]);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(ScenarioConfig::from_toml_str("sed = 9\n").is_err());
        assert!(ScenarioConfig::from_toml_str("[game]\nalpha9 = 1\n").is_err());
    }

    #[test]
    fn selfish_behaviour_assigned() {
        let cfg = ScenarioConfig {
            selfish_ids: vec![5, 6],
            selfish_fractions: vec![0.0, 0.5],
            ..ScenarioConfig::default()
        };
        let w = generate_scenario(&cfg).unwrap();
        assert_eq!(w.fleet[&5].behavior, Behavior::Selfish { fraction: 0.0 });
        assert_eq!(w.fleet[&6].behavior, Behavior::Selfish { fraction: 0.5 });
        assert_eq!(w.fleet[&4].behavior, Behavior::Cooperative);
    }

    #[test]
    fn variance_follows_inverse_distance() {
        let m = ChannelModel::default();
        assert!((m.variance(4.0) - m.variance(2.0) / 2.0).abs() < 1e-15);
        assert_eq!(m.variance(0.0), m.variance(1e-3));

        let mut rng = stream_rng(7, 0, Purpose::Channels);
        let d = 2.5;
        let n = 10_000;
        let draws: Vec<Complex64> = (0..n).map(|_| m.draw_gain(&mut rng, d)).collect();
        let power = draws.iter().map(|h| h.norm_sqr()).sum::<f64>() / n as f64;
        assert!((power - 1.0 / d).abs() < 0.05 / d, "power {power}");

        let mean = draws.iter().sum::<Complex64>() / n as f64;
        assert!(mean.norm() < 4.0 * (1.0 / d / n as f64).sqrt());
        let re = draws.iter().map(|h| h.re * h.re).sum::<f64>() / n as f64;
        let im = draws.iter().map(|h| h.im * h.im).sum::<f64>() / n as f64;
        assert!((re - im).abs() < 0.1 * (re + im) / 2.0, "{re} vs {im}");
    }

    #[test]
    fn channels_frozen_within_round() {
        let cfg = ScenarioConfig::default();
        let w = generate_scenario(&cfg).unwrap().advance(&cfg, 1);
        let model = cfg.channel_model();
        let a = TaskChannels::sample(&w, &w.tasks[0], &model, cfg.seed).unwrap();
        let b = TaskChannels::sample(&w, &w.tasks[0], &model, cfg.seed).unwrap();
        assert_eq!(a, b);
        let other = TaskChannels::sample(&w, &w.tasks[1], &model, cfg.seed).unwrap();
        assert_ne!(a, other);
        let next = TaskChannels::sample(&w.advance(&cfg, 2), &w.tasks[0], &model, cfg.seed).unwrap();
        assert_ne!(a, next);

        // Subsets reuse the same per-UAV gains.
        let full = a.for_members(&[1, 3, 4]).unwrap();
        let part = a.for_members(&[1, 4]).unwrap();
        assert_eq!(full.h_tu[2], part.h_tu[1]);
        assert!(a.for_members(&[99]).is_err());
    }

    #[test]
    fn snr_cache_memoises_and_matches_direct_solve() {
        let cfg = ScenarioConfig::default();
        let w = generate_scenario(&cfg).unwrap().advance(&cfg, 1);
        let tc = TaskChannels::sample(&w, &w.tasks[0], &cfg.channel_model(), cfg.seed).unwrap();
        let cache = SnrCache::new(tc.clone(), &w.fleet, cfg.bisection());
        let c = Coalition::from_members(&w.fleet[&1], [&w.fleet[&3], &w.fleet[&4]], 1).unwrap();
        let first = cache.coalition_snr(&c);
        assert_eq!(cache.coalition_snr(&c), first);
        assert_eq!(cache.solved_count(), 1);
        let direct = optimize_snr(&tc.for_members(&c.relay_order()).unwrap(), &[1.0; 3], &cfg.bisection()).unwrap();
        assert_eq!(direct.snr, first);
        let (t_up, iters) = cache.diagnostics(&c).unwrap();
        assert!(first <= t_up && iters > 0);
    }

    #[test]
    fn persistent_tasks_keep_requirements() {
        let cfg = ScenarioConfig { persistent_tasks: true, relocate_followers: false, ..ScenarioConfig::default() };
        let w = generate_scenario(&cfg).unwrap();
        let later = w.advance(&cfg, 5);
        assert_eq!(later.tasks[0].required, w.tasks[0].required);
        assert_eq!(later.fleet, w.fleet);
    }
}
