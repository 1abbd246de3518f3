//! The multi-agent tick loop, run metrics, audit replay and the brute-force
//! reachability oracle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::agent::{intake, Action, AgentError, AgentProgram, AgentSpec, StepContext, TestingTask};
use crate::blackboard::{AuditEvent, Blackboard, BlackboardError, SyncMode};
use crate::nav::{update_belief, AgentBelief};
use crate::world::{
    apply_chained_connections, apply_distant_connections, apply_multi_connections, bresenham,
    generate_basic_level, AgentId, CellKind, CellView, GenError, InteractOutcome, Level,
    LevelError, MoveOutcome, ObjId, WorldError, WorldState,
};

/// Parameters for a generated level: the basic hall plus logic variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GenSpec {
    pub scale: u32,
    pub seed: u64,
    pub distant: usize,
    pub chained: usize,
    pub multi: usize,
}

impl GenSpec {
    pub fn basic(scale: u32, seed: u64) -> Self {
        GenSpec {
            scale,
            seed,
            distant: 0,
            chained: 0,
            multi: 0,
        }
    }

    pub fn build(&self) -> Result<Level, GenError> {
        let mut level = generate_basic_level(self.scale, self.seed);
        let sub = |k: u64| {
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k)
        };
        if self.chained > 0 {
            level = apply_chained_connections(&level, self.chained, sub(1))?;
        }
        if self.distant > 0 {
            level = apply_distant_connections(&level, self.distant, sub(2))?;
        }
        if self.multi > 0 {
            level = apply_multi_connections(&level, self.multi, sub(3))?;
        }
        Ok(level)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LevelSource {
    Generated(GenSpec),
    Given(Arc<Level>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub level: LevelSource,
    pub agents: Vec<AgentSpec>,
    pub sync_mode: SyncMode,
    pub view_distance: u32,
    pub global_budget: u64,
    /// Per-attempt tick budget; derived from the level size when `None`.
    pub per_task_budget: Option<u64>,
    pub seed: u64,
    pub sync_every: u64,
    /// Extra ticks charged for every extended sync.
    pub sync_tax: u64,
}

impl RunConfig {
    pub fn new(level: LevelSource, agents: Vec<AgentSpec>) -> Self {
        RunConfig {
            level,
            agents,
            sync_mode: SyncMode::Extended,
            view_distance: DEFAULT_VIEW_DISTANCE,
            global_budget: 50_000,
            per_task_budget: None,
            seed: 0,
            sync_every: 1,
            sync_tax: 0,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.agents.is_empty() {
            return bad("at least one agent is required");
        }
        if self.global_budget == 0 || self.per_task_budget == Some(0) {
            return bad("budgets must be positive");
        }
        if self.view_distance == 0 {
            return bad("view distance must be at least 1");
        }
        if self.sync_every == 0 {
            return bad("sync cadence must be at least 1");
        }
        if let LevelSource::Generated(g) = &self.level {
            if g.scale == 0 {
                return bad("scale must be at least 1");
            }
        }
        Ok(())
    }

    pub fn build_level(&self) -> Result<Arc<Level>, RunError> {
        match &self.level {
            LevelSource::Generated(g) => Ok(Arc::new(g.build()?)),
            LevelSource::Given(l) => Ok(l.clone()),
        }
    }

    /// 400 ticks per ten cells of the level's larger side.
    pub fn attempt_budget(&self, level: &Level) -> u64 {
        self.per_task_budget.unwrap_or_else(|| match &self.level {
            LevelSource::Generated(g) => 400 * g.scale as u64,
            LevelSource::Given(_) => 400 * (level.width().max(level.height()) as u64 / 10).max(1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Blackboard(#[from] BlackboardError),
    #[error("invariant violated at tick {tick}: {message}")]
    Invariant { tick: u64, message: String },
}

impl RunError {
    /// Configuration and level problems, as opposed to internal failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RunError::Config(_) | RunError::Level(_) | RunError::Gen(_)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Every task is done.
    AllDone,
    /// The global tick budget ran out.
    Budget,
    /// Every agent reported it has nothing left to do.
    AgentsIdle,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::AllDone => "all-done",
            Termination::Budget => "budget",
            Termination::AgentsIdle => "agents-idle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskOutcome {
    pub tick: u64,
    pub agent: AgentId,
    pub accidental: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Ticks until every task was done; `None` when the run did not finish.
    pub total_ticks_to_all_done: Option<u64>,
    pub ticks_run: u64,
    pub termination: Termination,
    pub points_timeline: Vec<(u64, u32)>,
    pub per_task: BTreeMap<String, TaskOutcome>,
    pub unfinished: Vec<String>,
    pub exploration_coverage: f64,
    pub interactions: u64,
    pub accidental_count: u64,
    /// Rows of the metrics CSV, without the header.
    pub events: Vec<MetricsRow>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricsRow {
    pub tick: u64,
    pub event: &'static str,
    pub agent: Option<AgentId>,
    pub task: String,
    pub points_cum: u32,
    pub detail: String,
}

impl MetricsReport {
    fn empty() -> Self {
        MetricsReport {
            total_ticks_to_all_done: None,
            ticks_run: 0,
            termination: Termination::Budget,
            points_timeline: Vec::new(),
            per_task: BTreeMap::new(),
            unfinished: Vec::new(),
            exploration_coverage: 0.0,
            interactions: 0,
            accidental_count: 0,
            events: Vec::new(),
        }
    }

    pub fn final_points(&self) -> u32 {
        self.points_timeline.last().map_or(0, |(_, p)| *p)
    }

    /// Ticks until done, or the ticks actually run for unfinished runs.
    pub fn makespan(&self) -> u64 {
        self.total_ticks_to_all_done.unwrap_or(self.ticks_run)
    }

    /// First tick at which cumulative points reached `points`.
    pub fn ticks_to_points(&self, points: u32) -> Option<u64> {
        self.points_timeline
            .iter()
            .find(|(_, p)| *p >= points)
            .map(|(t, _)| *t)
    }

    /// `tick,event,agent,task,points_cum,detail`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,event,agent,task,points_cum,detail\n");
        for r in &self.events {
            let agent = r.agent.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.tick, r.event, agent, r.task, r.points_cum, r.detail
            );
        }
        out
    }

    /// Flat `key: value` block in a fixed key order.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let done = self
            .total_ticks_to_all_done
            .map_or("dnf".to_string(), |t| t.to_string());
        let timeline: Vec<String> = self
            .points_timeline
            .iter()
            .map(|(t, p)| format!("{t}:{p}"))
            .collect();
        let per_task: Vec<String> = self
            .per_task
            .iter()
            .map(|(k, o)| {
                format!(
                    "{k}@{}/{}{}",
                    o.tick,
                    o.agent,
                    if o.accidental { "/accidental" } else { "" }
                )
            })
            .collect();
        let _ = writeln!(out, "total_ticks_to_all_done: {done}");
        let _ = writeln!(out, "ticks_run: {}", self.ticks_run);
        let _ = writeln!(out, "termination: {}", self.termination.name());
        let _ = writeln!(out, "final_points: {}", self.final_points());
        let _ = writeln!(out, "points_timeline: {}", timeline.join(" "));
        let _ = writeln!(out, "per_task: {}", per_task.join(" "));
        let _ = writeln!(out, "unfinished: {}", self.unfinished.join(" "));
        let _ = writeln!(
            out,
            "exploration_coverage: {:.4}",
            self.exploration_coverage
        );
        let _ = writeln!(out, "interactions: {}", self.interactions);
        let _ = writeln!(out, "accidental_count: {}", self.accidental_count);
        out
    }
}

/// Adds `value` points credited at `tick` to the timeline. Credits on the same
/// tick share one entry.
pub fn record_points(report: &mut MetricsReport, tick: u64, value: u32) {
    let total = report.final_points() + value;
    match report.points_timeline.last_mut() {
        Some((t, p)) if *t == tick => *p = total,
        _ => report.points_timeline.push((tick, total)),
    }
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub report: MetricsReport,
    pub audit: Vec<AuditEvent>,
    pub world: WorldState,
    pub level: Arc<Level>,
    pub beliefs: Vec<AgentBelief>,
}

fn agent_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn run(config: &RunConfig) -> Result<MetricsReport, RunError> {
    run_traced(config).map(|t| t.report)
}

/// Runs the tick loop: every tick each agent in id order observes, reports
/// discoveries, and performs one action; then beliefs are synchronized. Stops
/// when every task is done, the budget is spent, or every agent is done.
pub fn run_traced(config: &RunConfig) -> Result<RunTrace, RunError> {
    config.validate()?;
    let level = config.build_level()?;
    let n = config.agents.len();
    let tasks = TestingTask::for_level(&level, config.attempt_budget(&level));
    let mut world = WorldState::new(level.clone(), n)?;
    let mut bb = Blackboard::new(&level, tasks, n, config.sync_mode);
    let mut beliefs: Vec<AgentBelief> = (0..n)
        .map(|i| AgentBelief::new(AgentId(i), &level))
        .collect();
    let mut programs: Vec<AgentProgram> = config
        .agents
        .iter()
        .enumerate()
        .map(|(i, spec)| AgentProgram::new(AgentId(i), *spec, agent_seed(config.seed, i)))
        .collect();
    let mut report = MetricsReport::empty();

    let mut clock = 0u64;
    let mut termination = Termination::Budget;
    let mut ticks_done = 0u64;
    let mut credited = BTreeSet::new();
    'ticks: while clock < config.global_budget {
        world.set_tick(clock);
        bb.set_tick(clock);
        for i in 0..n {
            let agent = AgentId(i);
            let obs = world.observe(agent, config.view_distance)?;
            update_belief(&mut beliefs[i], &obs);
            intake(&mut bb, &obs)?;
            let mates: Vec<(AgentId, crate::world::Pos)> = bb
                .shared_positions()
                .iter()
                .filter(|(a, _)| *a != agent)
                .copied()
                .collect();
            let ctx = StepContext {
                tick: clock,
                pos: world.agent_pos(agent)?,
                obs: &obs,
                teammates: &mates,
            };
            let action = programs[i].step(&ctx, &mut beliefs[i], &mut bb)?;
            // Credits happen before this agent's action is applied, so every
            // newly done target must be open in the current truth state.
            for task in bb.done().keys() {
                if credited.insert(*task) && !world.is_open(bb.task(*task).target) {
                    return Err(RunError::Invariant {
                        tick: clock,
                        message: format!("{} credited while closed", bb.task_name(*task)),
                    });
                }
            }
            bb.share_observation(obs);
            apply_action(&mut world, &mut bb, &mut report, agent, action, clock)?;
        }
        ticks_done = clock + 1;
        if bb.all_done() {
            termination = Termination::AllDone;
            break 'ticks;
        }
        if (clock + 1).is_multiple_of(config.sync_every) {
            bb.sync(&mut beliefs, world.agent_positions());
            if config.sync_mode == SyncMode::Extended && n > 1 {
                clock += config.sync_tax;
            }
        }
        if programs.iter().all(|p| p.is_done()) {
            termination = Termination::AgentsIdle;
            break 'ticks;
        }
        clock += 1;
    }
    for p in &mut programs {
        p.abort(&mut bb)?;
    }
    if !bb.locks().is_empty() {
        return Err(RunError::Invariant {
            tick: ticks_done,
            message: "locks leaked at termination".into(),
        });
    }

    report.ticks_run = ticks_done;
    report.termination = termination;
    if termination == Termination::AllDone {
        report.total_ticks_to_all_done = Some(ticks_done);
    }
    fill_report(&mut report, &bb, &level, &beliefs);
    Ok(RunTrace {
        report,
        audit: bb.audit_log().to_vec(),
        world,
        level,
        beliefs,
    })
}

fn apply_action(
    world: &mut WorldState,
    bb: &mut Blackboard,
    report: &mut MetricsReport,
    agent: AgentId,
    action: Action,
    tick: u64,
) -> Result<(), RunError> {
    match action {
        Action::NoOp => {}
        Action::Move(dir) => {
            let moved = matches!(world.step_move(agent, dir)?, MoveOutcome::Moved(_));
            bb.record(AuditEvent::Move {
                tick,
                agent,
                dir,
                moved,
            });
        }
        Action::Interact(obj) => {
            report.interactions += 1;
            let toggled = match world.interact(agent, obj)? {
                InteractOutcome::Toggled(ds) => ds,
                InteractOutcome::OutOfRange | InteractOutcome::Occupied(_) => Vec::new(),
            };
            bb.note_door_changes(toggled.len());
            let names = toggled
                .iter()
                .map(|d| world.level().name(*d).to_string())
                .collect();
            bb.record(AuditEvent::Interact {
                tick,
                agent,
                obj: bb.object_name(obj),
                toggled: names,
            });
        }
    }
    Ok(())
}

fn fill_report(
    report: &mut MetricsReport,
    bb: &Blackboard,
    level: &Level,
    beliefs: &[AgentBelief],
) {
    let value_of: BTreeMap<&str, u32> = bb
        .all_tasks()
        .iter()
        .map(|t| (bb.task_name(t.id), t.value))
        .collect();
    for e in bb.audit_log() {
        let (tick, event, agent, task, detail) = match e {
            AuditEvent::Publish { tick, agent, task } => {
                (*tick, "publish", *agent, task, String::new())
            }
            AuditEvent::Claim { tick, agent, task } => {
                (*tick, "claim", *agent, task, String::new())
            }
            AuditEvent::Release { tick, agent, task } => {
                (*tick, "release", *agent, task, String::new())
            }
            AuditEvent::Complete {
                tick,
                agent,
                task,
                accidental,
            } => {
                let value = value_of[task.as_str()];
                record_points(report, *tick, value);
                report.per_task.insert(
                    task.clone(),
                    TaskOutcome {
                        tick: *tick,
                        agent: *agent,
                        accidental: *accidental,
                    },
                );
                if *accidental {
                    report.accidental_count += 1;
                }
                let kind = if *accidental { "accidental" } else { "solved" };
                (
                    *tick,
                    "complete",
                    *agent,
                    task,
                    format!("{kind};value={value}"),
                )
            }
            _ => continue,
        };
        report.events.push(MetricsRow {
            tick,
            event,
            agent: Some(agent),
            task: task.clone(),
            points_cum: report.final_points(),
            detail,
        });
    }
    report.unfinished = bb
        .all_tasks()
        .iter()
        .filter(|t| !bb.done().contains_key(&t.id))
        .map(|t| bb.task_name(t.id).to_string())
        .collect();

    let mut seen = vec![false; level.width() * level.height()];
    for b in beliefs {
        for (p, view) in b.known_cells() {
            if view != CellView::Wall {
                seen[level.index(p)] = true;
            }
        }
    }
    let floor = level.floor_count().max(1);
    report.exploration_coverage = seen.iter().filter(|s| **s).count() as f64 / floor as f64;

    let makespan = report
        .total_ticks_to_all_done
        .map_or("dnf".to_string(), |t| t.to_string());
    report.events.push(MetricsRow {
        tick: report.ticks_run,
        event: "end",
        agent: None,
        task: String::new(),
        points_cum: report.final_points(),
        detail: format!(
            "termination={};makespan={}",
            report.termination.name(),
            makespan
        ),
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("audit event at tick {tick} does not match the replayed world: {message}")]
    Mismatch { tick: u64, message: String },
    #[error("unknown object {0} in audit log")]
    UnknownObject(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Re-applies the move and interact records of an audit log to a fresh world
/// and checks every recorded outcome along the way.
pub fn replay_audit(
    level: Arc<Level>,
    agents: usize,
    events: &[AuditEvent],
) -> Result<WorldState, ReplayError> {
    let mut world = WorldState::new(level.clone(), agents)?;
    for e in events {
        match e {
            AuditEvent::Move {
                tick,
                agent,
                dir,
                moved,
            } => {
                world.set_tick(*tick);
                let outcome = world.step_move(*agent, *dir)?;
                if matches!(outcome, MoveOutcome::Moved(_)) != *moved {
                    return Err(ReplayError::Mismatch {
                        tick: *tick,
                        message: format!("{agent} move {}", dir.as_char()),
                    });
                }
            }
            AuditEvent::Interact {
                tick,
                agent,
                obj,
                toggled,
            } => {
                world.set_tick(*tick);
                let id = level
                    .find(obj)
                    .ok_or_else(|| ReplayError::UnknownObject(obj.clone()))?;
                let flipped: Vec<String> = match world.interact(*agent, id)? {
                    InteractOutcome::Toggled(ds) => {
                        ds.iter().map(|d| level.name(*d).to_string()).collect()
                    }
                    InteractOutcome::OutOfRange | InteractOutcome::Occupied(_) => Vec::new(),
                };
                if &flipped != toggled {
                    return Err(ReplayError::Mismatch {
                        tick: *tick,
                        message: format!("{agent} interact {obj}"),
                    });
                }
            }
            _ => {}
        }
    }
    Ok(world)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("state space of {states} exceeds the cap of {cap}")]
    CapExceeded { states: u128, cap: u128 },
    #[error("level has no spawn point")]
    NoSpawn,
}

pub const DEFAULT_ORACLE_CAP: u128 = 1 << 22;

pub const DEFAULT_VIEW_DISTANCE: u32 = 6;

/// [`oracle_reachable_set_within`] at the default view distance.
pub fn oracle_reachable_set(level: &Level, cap: u128) -> Result<BTreeSet<ObjId>, OracleError> {
    oracle_reachable_set_within(level, DEFAULT_VIEW_DISTANCE, cap)
}

/// Doors that some single-agent action sequence from the first spawn point can
/// open while the agent sees them, with sight as in
/// [`WorldState::observe`](crate::world::WorldState::observe).
///
/// This is exact for one agent. Teams can reach more: one agent may flip a
/// button that toggles doors on both sides of a wall while a teammate watches
/// the target, a state a lone agent cannot reach when toggles must cancel out
/// for it to cross back.
pub fn oracle_reachable_set_within(
    level: &Level,
    view_distance: u32,
    cap: u128,
) -> Result<BTreeSet<ObjId>, OracleError> {
    let doors: Vec<ObjId> = level.doors().collect();
    let cells = level.width() * level.height();
    let states = (cells as u128) << doors.len();
    if doors.len() >= 64 || states > cap {
        return Err(OracleError::CapExceeded { states, cap });
    }
    let start = *level.spawn_points().first().ok_or(OracleError::NoSpawn)?;
    let bit: BTreeMap<ObjId, u32> = doors
        .iter()
        .enumerate()
        .map(|(i, d)| (*d, i as u32))
        .collect();
    let door_bit: Vec<Option<u32>> = (0..cells)
        .map(|i| level.door_at(level.pos_of(i)).map(|d| bit[&d]))
        .collect();
    let press_mask: BTreeMap<ObjId, u64> = level
        .buttons()
        .map(|b| {
            (
                b,
                level.connected_doors(b).fold(0u64, |m, d| m | 1 << bit[&d]),
            )
        })
        .collect();
    // Buttons within Chebyshev distance 1 of each cell.
    let mut near_buttons: Vec<Vec<u64>> = vec![Vec::new(); cells];
    for id in level.object_ids() {
        let o = level.object(id);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let p = crate::world::Pos::new(o.pos.x + dx, o.pos.y + dy);
                if level.in_bounds(p) {
                    let i = level.index(p);
                    if o.is_button() {
                        near_buttons[i].push(press_mask[&id]);
                    }
                }
            }
        }
    }
    // Per cell: doors in view range with a wall-free line, and the doors on
    // that line that must be open.
    let r2 = view_distance as i64 * view_distance as i64;
    let sight: Vec<Vec<(u64, u64)>> = (0..cells)
        .map(|i| {
            let from = level.pos_of(i);
            doors
                .iter()
                .filter_map(|d| {
                    let to = level.object(*d).pos;
                    if from.dist2(to) > r2 {
                        return None;
                    }
                    let mut need = 0u64;
                    for p in bresenham(from, to).filter(|p| *p != from && *p != to) {
                        if level.cell(p) != CellKind::Floor {
                            return None;
                        }
                        need |= door_bit[level.index(p)].map_or(0, |b| 1 << b);
                    }
                    Some((1u64 << bit[d], need))
                })
                .collect()
        })
        .collect();
    let walkable = |i: usize, mask: u64| -> bool {
        level.cells()[i] == CellKind::Floor && door_bit[i].is_none_or(|b| mask >> b & 1 == 1)
    };

    let width = doors.len();
    let mut seen = vec![0u64; (cells << width).div_ceil(64)];
    let mut visit = |i: usize, mask: u64| -> bool {
        let k = (i << width) | mask as usize;
        let fresh = seen[k / 64] >> (k % 64) & 1 == 0;
        seen[k / 64] |= 1 << (k % 64);
        fresh
    };
    let mut witnessed = 0u64;
    let mut queue = VecDeque::new();
    let s = level.index(start);
    visit(s, 0);
    queue.push_back((s, 0u64));
    while let Some((i, mask)) = queue.pop_front() {
        for &(door, need) in &sight[i] {
            if mask & door != 0 && need & !mask == 0 {
                witnessed |= door;
            }
        }
        let p = level.pos_of(i);
        for q in p.neighbors() {
            if level.in_bounds(q) {
                let qi = level.index(q);
                if walkable(qi, mask) && visit(qi, mask) {
                    queue.push_back((qi, mask));
                }
            }
        }
        // A press may not close the door the agent stands in.
        let under = door_bit[i].map_or(0, |b| 1u64 << b) & mask;
        for m in &near_buttons[i] {
            if m & under != 0 {
                continue;
            }
            let next = mask ^ m;
            if visit(i, next) {
                queue.push_back((i, next));
            }
        }
    }
    Ok(doors
        .iter()
        .filter(|d| witnessed >> bit[d] & 1 == 1)
        .copied()
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reachability {
    Reachable,
    Unreachable,
}

pub fn oracle_reachable(level: &Level, target: ObjId) -> Result<Reachability, OracleError> {
    let set = oracle_reachable_set(level, DEFAULT_ORACLE_CAP)?;
    Ok(if set.contains(&target) {
        Reachability::Reachable
    } else {
        Reachability::Unreachable
    })
}
