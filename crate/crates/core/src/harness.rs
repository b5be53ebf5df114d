//! Multi-round simulation: negotiate, execute, settle credits, and compare
//! against assigning the nearest UAVs.

use std::collections::{BTreeMap, BTreeSet};

use crate::credit::{ContributionReport, CreditLedger, TaskSettlement};
use crate::domain::{
    aggregate_resources, mean_speed, travel_time, Amount, Coalition, ResourceVector, TaskDescriptor,
    TaskId, UavId, UavProfile,
};
use crate::error::{Error, Result};
use crate::events::{CreditEntry, Event, EventLog};
use crate::negotiation::{negotiate, FormedCoalition, NegotiationInput, NegotiationOutcome};
use crate::scenario::{generate_scenario, Depletion, ScenarioConfig, SnrCache, TaskChannels, World};
use crate::valuation::SnrProvider;

/// Aggregate-to-requirement ratio of each resource type the task needs.
/// Types with zero or unlimited requirement are skipped.
pub fn type_ratios(aggregate: &ResourceVector, required: &ResourceVector) -> Result<Vec<(usize, f64)>> {
    if aggregate.len() != required.len() {
        return Err(Error::LengthMismatch {
            expected: required.len(),
            found: aggregate.len(),
        });
    }
    Ok(required
        .iter()
        .zip(aggregate.iter())
        .enumerate()
        .filter_map(|(j, (need, have))| match need {
            Amount::Finite(t) if t > 0.0 => Some((j, have.ratio_to(t))),
            _ => None,
        })
        .collect())
}

/// Mean over resource types of aggregate over requirement; 1 means no
/// over-provisioning.
pub fn efficiency_from_vectors(aggregate: &ResourceVector, required: &ResourceVector) -> Result<f64> {
    let ratios = type_ratios(aggregate, required)?;
    if ratios.is_empty() {
        return Err(Error::EmptyRequirement);
    }
    Ok(ratios.iter().map(|(_, r)| r).sum::<f64>() / ratios.len() as f64)
}

pub fn efficiency_factor(coalition: &Coalition, task: &TaskDescriptor) -> Result<f64> {
    if coalition.member_ids.is_empty() {
        return Err(Error::EmptyMembers);
    }
    efficiency_from_vectors(&coalition.aggregate, &task.required)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineAssignment {
    pub coalition: Coalition,
    pub covered: bool,
}

/// Nearest-UAV assignment. Tasks take turns in id order; on its turn an
/// uncovered task takes the remaining follower with the shortest travel
/// time (lowest id on ties). Resources only decide when a task stops.
pub fn baseline_nearest(world: &World) -> Result<Vec<BaselineAssignment>> {
    let leaders: BTreeSet<UavId> = world.leaders.values().copied().collect();
    let mut free: BTreeSet<UavId> = world.fleet.keys().copied().filter(|id| !leaders.contains(id)).collect();
    let mut groups: BTreeMap<TaskId, Vec<UavId>> = BTreeMap::new();
    let tasks: BTreeMap<TaskId, &TaskDescriptor> = world.tasks.iter().map(|t| (t.id, t)).collect();

    let covered = |members: &[UavId], task: &TaskDescriptor| -> Result<bool> {
        let profiles: Vec<&UavProfile> = members.iter().map(|id| &world.fleet[id]).collect();
        aggregate_resources(&profiles)?.covers(&task.required)
    };

    for &id in tasks.keys() {
        let leader = *world.leaders.get(&id).ok_or(Error::InvalidValue(format!("task {id} has no leader")))?;
        groups.insert(id, vec![leader]);
    }
    loop {
        let mut progressed = false;
        for (&id, &task) in &tasks {
            if free.is_empty() {
                break;
            }
            if covered(&groups[&id], task)? {
                continue;
            }
            let next = free
                .iter()
                .copied()
                .min_by(|a, b| {
                    travel_time(&world.fleet[a], task)
                        .total_cmp(&travel_time(&world.fleet[b], task))
                        .then(a.cmp(b))
                })
                .expect("nonempty");
            free.remove(&next);
            groups.get_mut(&id).expect("task group").push(next);
            progressed = true;
        }
        if !progressed {
            break;
        }
    }

    tasks
        .iter()
        .map(|(&id, &task)| {
            let members = &groups[&id];
            let leader = &world.fleet[&members[0]];
            let others = members[1..].iter().map(|m| &world.fleet[m]);
            Ok(BaselineAssignment {
                covered: covered(members, task)?,
                coalition: Coalition::from_members(leader, others, id)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrRow {
    pub task: TaskId,
    pub members: Vec<UavId>,
    pub snr: f64,
    pub t_up: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub formed: Vec<FormedCoalition>,
    pub efficiency: BTreeMap<TaskId, f64>,
    pub baseline: Vec<BaselineAssignment>,
    /// Only tasks the baseline covered.
    pub baseline_efficiency: BTreeMap<TaskId, f64>,
    pub credits: BTreeMap<UavId, f64>,
    pub snr: Vec<SnrRow>,
    pub served: Vec<TaskId>,
    pub failed: Vec<TaskId>,
    pub negotiation_rounds: usize,
    pub refusals: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub reports: Vec<RoundReport>,
    pub events: EventLog,
    pub ledger: CreditLedger,
    pub world: World,
}

impl SimulationResult {
    pub fn final_credits(&self) -> &BTreeMap<UavId, f64> {
        self.ledger.credits()
    }

    pub fn mean_efficiency(&self) -> Option<f64> {
        mean(self.reports.iter().flat_map(|r| r.efficiency.values().copied()))
    }

    pub fn mean_baseline_efficiency(&self) -> Option<f64> {
        mean(self.reports.iter().flat_map(|r| r.baseline_efficiency.values().copied()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Contribution reports of a coalition's members: each commits its whole
/// capability and expends what its behaviour allows.
pub fn execute(coalition: &Coalition, world: &World) -> Result<Vec<ContributionReport>> {
    coalition
        .relay_order()
        .into_iter()
        .map(|id| {
            let uav = world.fleet.get(&id).ok_or(Error::UnknownUav(id))?;
            Ok(ContributionReport {
                uav_id: id,
                committed: uav.resources.clone(),
                actual: uav.behavior.expended(&uav.resources),
            })
        })
        .collect()
}

/// Lower each member's capabilities by its share of the served requirement,
/// in proportion to what it actually expended.
fn consume(world: &mut World, task: &TaskDescriptor, reports: &[ContributionReport]) -> Result<()> {
    let mut total = ResourceVector::zeros(task.required.len());
    for r in reports {
        total = total.checked_add(&r.actual)?;
    }
    for r in reports {
        let used: Vec<Amount> = r
            .actual
            .iter()
            .zip(total.iter())
            .zip(task.required.iter())
            .map(|((mine, all), need)| match (mine, all, need) {
                (Amount::Finite(m), Amount::Finite(a), Amount::Finite(t)) if a > 0.0 => {
                    Amount::Finite(m * (t / a).min(1.0))
                }
                _ => Amount::ZERO,
            })
            .collect();
        let uav = world.fleet.get_mut(&r.uav_id).ok_or(Error::UnknownUav(r.uav_id))?;
        uav.resources = uav.resources.deplete(&ResourceVector::new(used)?)?;
    }
    Ok(())
}

/// One full round on `world`: negotiation, baseline, execution and credit
/// settlement. Events are appended to `log`.
pub fn play_round(
    cfg: &ScenarioConfig,
    world: &mut World,
    ledger: &CreditLedger,
    log: &mut EventLog,
) -> Result<(RoundReport, CreditLedger, NegotiationOutcome)> {
    let round = world.round;
    log.push(Event::RoundStart { round });
    let model = cfg.channel_model();
    let caches = world
        .tasks
        .iter()
        .map(|t| {
            let ch = TaskChannels::sample(world, t, &model, cfg.seed)?;
            Ok((t.id, SnrCache::new(ch, &world.fleet, cfg.bisection())))
        })
        .collect::<Result<BTreeMap<TaskId, SnrCache<'_>>>>()?;

    let input = NegotiationInput {
        round,
        fleet: &world.fleet,
        tasks: &world.tasks,
        leaders: &world.leaders,
        params: &world.params,
        credits: ledger,
        deadline: world.params.deadline(mean_speed(world.fleet.values())),
        snr: caches.iter().map(|(&id, c)| (id, c as &dyn SnrProvider)).collect(),
    };
    let outcome = negotiate(&input, log)?;
    drop(input);

    let baseline = baseline_nearest(world)?;
    let tasks: BTreeMap<TaskId, &TaskDescriptor> = world.tasks.iter().map(|t| (t.id, t)).collect();
    let mut baseline_efficiency = BTreeMap::new();
    for b in &baseline {
        let task = tasks[&b.coalition.task_id];
        log.push(Event::Baseline {
            round,
            task: task.id,
            leader: b.coalition.leader_id,
            members: b.coalition.relay_order(),
            aggregate: b.coalition.aggregate.clone(),
            required: task.required.clone(),
            covered: b.covered,
        });
        if b.covered {
            baseline_efficiency.insert(task.id, efficiency_factor(&b.coalition, task)?);
        }
    }

    let mut efficiency = BTreeMap::new();
    let mut snr = Vec::new();
    let mut reports = Vec::new();
    for fc in &outcome.formed {
        let task = tasks[&fc.coalition.task_id];
        if !fc.coalition.aggregate.covers(&task.required)? {
            return Err(Error::InvalidValue(format!("task {} served with a deficit", task.id)));
        }
        efficiency.insert(task.id, efficiency_factor(&fc.coalition, task)?);
        snr.push(SnrRow {
            task: task.id,
            members: fc.coalition.relay_order(),
            snr: fc.coalition.snr_opt.unwrap_or(0.0),
            t_up: fc.t_up.unwrap_or(0.0),
            iterations: fc.iterations.unwrap_or(0),
        });
        let r = execute(&fc.coalition, world)?;
        log.push(Event::Execution {
            round,
            task: task.id,
            reports: r.clone(),
        });
        reports.push(r);
    }

    let settlements: Vec<TaskSettlement<'_>> = outcome
        .formed
        .iter()
        .zip(&reports)
        .map(|(fc, r)| TaskSettlement {
            coalition: &fc.coalition,
            required: &tasks[&fc.coalition.task_id].required,
            reports: r,
        })
        .collect();
    let settled = ledger.apply_round(&settlements);
    for (task, err) in &settled.failures {
        log.push(Event::SettlementFailed {
            round,
            task: *task,
            reason: err.to_string(),
        });
    }
    log.push(Event::Credits {
        round,
        credits: CreditEntry::from_map(settled.ledger.credits()),
    });

    let failed_settlement: BTreeSet<TaskId> = settled.failures.iter().map(|(t, _)| *t).collect();
    let served: Vec<TaskId> = outcome.formed.iter().map(|f| f.coalition.task_id).collect();
    let mut failed = outcome.unserved.clone();
    failed.extend(failed_settlement.iter().copied());
    failed.sort_unstable();

    let owned_tasks: Vec<TaskDescriptor> = world.tasks.clone();
    let report = RoundReport {
        round,
        formed: outcome.formed.clone(),
        efficiency,
        baseline,
        baseline_efficiency,
        credits: settled.ledger.credits().clone(),
        snr,
        served,
        failed,
        negotiation_rounds: outcome.rounds,
        refusals: outcome.refusals,
    };

    if cfg.depletion == Depletion::Consume {
        for (fc, r) in outcome.formed.iter().zip(&reports) {
            let task = owned_tasks
                .iter()
                .find(|t| t.id == fc.coalition.task_id)
                .expect("formed task exists");
            consume(world, task, r)?;
        }
    }
    Ok((report, settled.ledger, outcome))
}

/// Run `n_rounds` rounds, numbered from 1.
pub fn run_simulation(cfg: &ScenarioConfig, n_rounds: u64) -> Result<SimulationResult> {
    let initial = generate_scenario(cfg)?;
    let params = &initial.params;
    let mut ledger = CreditLedger::new(initial.fleet.keys().copied(), params.initial_credit)?;
    let mut events = EventLog::new();
    let mut reports = Vec::new();
    let mut world = initial.clone();
    for round in 1..=n_rounds {
        world = world.advance(cfg, round);
        let (report, next, _) = play_round(cfg, &mut world, &ledger, &mut events)?;
        ledger = next;
        reports.push(report);
    }
    Ok(SimulationResult {
        reports,
        events,
        ledger,
        world,
    })
}

/// Baseline assignments alone over `n_rounds` rounds.
pub fn run_baseline(cfg: &ScenarioConfig, n_rounds: u64) -> Result<EventLog> {
    let mut world = generate_scenario(cfg)?;
    let mut log = EventLog::new();
    for round in 1..=n_rounds {
        world = world.advance(cfg, round);
        log.push(Event::RoundStart { round });
        for b in baseline_nearest(&world)? {
            let task = world
                .tasks
                .iter()
                .find(|t| t.id == b.coalition.task_id)
                .expect("assigned task exists");
            log.push(Event::Baseline {
                round,
                task: task.id,
                leader: b.coalition.leader_id,
                members: b.coalition.relay_order(),
                aggregate: b.coalition.aggregate.clone(),
                required: task.required.clone(),
                covered: b.covered,
            });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::test_support::{task, uav};
    use crate::domain::Position;

    fn rv(v: &[f64]) -> ResourceVector {
        ResourceVector::from_finite(v).unwrap()
    }

    #[test]
    fn table_efficiency_factor() {
        let agg = rv(&[2.37, 2.87, 2.90, 1.36, 1.53]);
        let req = rv(&[2.37, 2.78, 2.51, 1.33, 1.15]);
        let ratios: Vec<f64> = type_ratios(&agg, &req).unwrap().into_iter().map(|(_, r)| r).collect();
        for (r, want) in ratios.iter().zip([1.00, 1.03, 1.16, 1.02, 1.33]) {
            assert!((r - want).abs() <= 0.005, "{r} vs {want}");
        }
        let ef = efficiency_from_vectors(&agg, &req).unwrap();
        assert!((ef - 1.11).abs() <= 0.005, "{ef}");
        assert!(agg.covers(&req).unwrap());
    }

    #[test]
    fn efficiency_exact_match_and_linearity() {
        let req = rv(&[1.0, 2.0, 0.0]);
        assert_eq!(efficiency_from_vectors(&req, &req).unwrap(), 1.0);
        let agg = rv(&[1.5, 2.5, 9.0]);
        let ef = efficiency_from_vectors(&agg, &req).unwrap();
        // The zero-requirement type is skipped.
        assert!((ef - (1.5 + 1.25) / 2.0).abs() < 1e-15);
        assert!((efficiency_from_vectors(&agg.scaled(2.0), &req).unwrap() - 2.0 * ef).abs() < 1e-12);
        assert!(efficiency_from_vectors(&agg, &rv(&[0.0, 0.0, 0.0])).is_err());
    }

    fn small_world(followers: Vec<UavProfile>) -> World {
        let mut fleet: crate::valuation::Fleet = BTreeMap::new();
        fleet.insert(1, uav(1, [0.0; 3], &[0.0, 0.0]));
        for f in followers {
            fleet.insert(f.id, f);
        }
        World {
            round: 1,
            fleet,
            tasks: vec![task(1, [0.0; 3], &[1.0, 1.0])],
            leaders: BTreeMap::from([(1, 1)]),
            base_station: Position([0.0; 3]),
            params: ScenarioConfig::default().game_params().unwrap(),
        }
    }

    #[test]
    fn baseline_ignores_resources_in_ordering() {
        let a = uav(2, [0.1, 0.0, 0.0], &[0.0, 0.5]);
        let b = uav(3, [0.2, 0.0, 0.0], &[1.0, 1.0]);
        let c = uav(4, [0.3, 0.0, 0.0], &[1.0, 0.5]);
        let w = small_world(vec![a.clone(), b.clone(), c.clone()]);
        let order = baseline_nearest(&w).unwrap()[0].coalition.relay_order();
        assert_eq!(order, vec![1, 2, 3]);

        let mut swapped = w.clone();
        let ra = swapped.fleet[&2].resources.clone();
        let rb = swapped.fleet[&3].resources.clone();
        swapped.fleet.get_mut(&2).unwrap().resources = rb;
        swapped.fleet.get_mut(&3).unwrap().resources = ra;
        // 2 now covers alone, so the walk stops earlier but keeps the order.
        assert_eq!(baseline_nearest(&swapped).unwrap()[0].coalition.relay_order(), vec![1, 2]);
    }

    #[test]
    fn colocated_follower_first() {
        let w = small_world(vec![
            uav(2, [0.5, 0.0, 0.0], &[1.0, 1.0]),
            uav(3, [0.0, 0.0, 0.0], &[0.1, 0.0]),
        ]);
        let b = &baseline_nearest(&w).unwrap()[0];
        assert_eq!(b.coalition.relay_order(), vec![1, 2, 3]);
        assert!(b.covered);
    }

    #[test]
    fn baseline_reports_uncovered_tasks() {
        let w = small_world(vec![uav(2, [0.5, 0.0, 0.0], &[0.2, 0.2])]);
        let b = &baseline_nearest(&w).unwrap()[0];
        assert!(!b.covered);
        assert_eq!(b.coalition.member_ids.len(), 2);
    }

    #[test]
    fn consume_removes_served_share() {
        let mut w = small_world(vec![uav(2, [0.0; 3], &[2.0, 1.0]), uav(3, [0.0; 3], &[2.0, 1.0])]);
        let c = Coalition::from_members(&w.fleet[&1], [&w.fleet[&2], &w.fleet[&3]], 1).unwrap();
        let reports = execute(&c, &w).unwrap();
        let t = w.tasks[0].clone();
        consume(&mut w, &t, &reports).unwrap();
        assert_eq!(w.fleet[&2].resources, rv(&[1.5, 0.5]));
        assert_eq!(w.fleet[&3].resources, rv(&[1.5, 0.5]));
    }

    #[test]
    fn simulation_serves_without_deficit() {
        let cfg = ScenarioConfig::default();
        let sim = run_simulation(&cfg, 5).unwrap();
        assert_eq!(sim.reports.len(), 5);
        for r in &sim.reports {
            assert!(r.negotiation_rounds <= r.refusals + 1);
            assert_eq!(r.served.len() + r.failed.len(), 2);
            for fc in &r.formed {
                let t = sim.world.tasks.iter().find(|t| t.id == fc.coalition.task_id).unwrap();
                assert!(r.efficiency[&t.id] >= 1.0);
            }
            assert!(r.credits.values().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn symmetric_cooperative_run_stays_uniform() {
        // Every UAV holds half of each requirement, so each leader needs
        // exactly one follower and all increments are equal.
        let cfg = ScenarioConfig {
            n_followers: 2,
            resource_range: crate::scenario::RangeSpec::Shared([0.5, 0.5]),
            resource_presence: 1.0,
            task_requirement_range: [1.0, 1.0],
            ..ScenarioConfig::default()
        };
        let sim = run_simulation(&cfg, 4).unwrap();
        for r in &sim.reports {
            assert_eq!(r.formed.len(), 2);
            assert!(r.credits.values().all(|&c| (c - 1.0).abs() < 1e-12), "{:?}", r.credits);
        }
    }
}
