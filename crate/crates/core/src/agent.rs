//! Per-agent testing logic. The solver loop, the dynamic-goal enabler search
//! and task finding are flattened into one resumable state machine that emits
//! exactly one primitive action per tick.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::blackboard::{Blackboard, BlackboardError, Grant};
use crate::nav::{bfs_nearest, bfs_nearest_via, AgentBelief, DistanceMap, ExplorePolicy};
use crate::world::{AgentId, CellView, Dir, Level, ObjId, ObjectState, Observation, Pos};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Predicate {
    DoorOpen,
}

/// Per-attempt tick budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StopCondition {
    pub attempt_budget: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnablerKind {
    Button,
}

/// Verify that `psi` can be made to hold on `target` before `stop` fires.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TestingTask {
    pub id: TaskId,
    pub target: ObjId,
    pub psi: Predicate,
    pub stop: StopCondition,
    pub value: u32,
    pub enabler_kind: EnablerKind,
}

impl TestingTask {
    /// One door-open task per door, in door id order.
    pub fn for_level(level: &Level, attempt_budget: u64) -> Vec<TestingTask> {
        let stop = StopCondition {
            attempt_budget: attempt_budget.max(1),
        };
        level
            .doors()
            .enumerate()
            .map(|(i, d)| TestingTask {
                id: TaskId(i),
                target: d,
                psi: Predicate::DoorOpen,
                stop,
                value: level.object(d).points(),
                enabler_kind: EnablerKind::Button,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectHeuristic {
    Random,
    /// Tasks worth strictly more than the threshold.
    HighValue(u32),
    /// Tasks worth strictly less than the threshold.
    LowValue(u32),
    /// Nearest known target first.
    Eager,
    /// Never takes a task; only explores and reports.
    Explorer,
}

impl SelectHeuristic {
    pub fn admits(self, value: u32) -> bool {
        match self {
            SelectHeuristic::HighValue(t) => value > t,
            SelectHeuristic::LowValue(t) => value < t,
            SelectHeuristic::Explorer => false,
            SelectHeuristic::Random | SelectHeuristic::Eager => true,
        }
    }
}

impl fmt::Display for SelectHeuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectHeuristic::Random => write!(f, "random"),
            SelectHeuristic::HighValue(t) => write!(f, "high:{t}"),
            SelectHeuristic::LowValue(t) => write!(f, "low:{t}"),
            SelectHeuristic::Eager => write!(f, "eager"),
            SelectHeuristic::Explorer => write!(f, "explorer"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FindHeuristic {
    /// Enabler with the shortest believed path from the agent, ties by id.
    ClosestFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentSpec {
    pub select: SelectHeuristic,
    pub find: FindHeuristic,
    pub explore: ExplorePolicy,
}

impl AgentSpec {
    pub fn new(select: SelectHeuristic) -> Self {
        AgentSpec {
            select,
            find: FindHeuristic::ClosestFirst,
            explore: ExplorePolicy::Gradual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Move(Dir),
    Interact(ObjId),
    NoOp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynStage {
    /// Pick the next untried enabler, or explore for more.
    Choose,
    ToEnabler(ObjId),
    Press(ObjId),
    /// Walk back until the target is in view, then check the predicate.
    Return(ObjId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Claiming(TaskId),
    TravelToTarget(TaskId),
    Verifying(TaskId),
    DynGoal(TaskId, DynStage),
    FindingTask { explored: u32 },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Blackboard(#[from] BlackboardError),
    #[error("{agent}: {message}")]
    Inconsistent { agent: AgentId, message: String },
}

/// A task as seen by the selection heuristics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub id: TaskId,
    pub value: u32,
    pub location: Option<Pos>,
}

/// Believed path length from `dm`'s origin to some cell within interaction
/// range of `p`.
fn reach_distance(dm: &DistanceMap, p: Pos) -> Option<u32> {
    (-1..=1)
        .flat_map(|dy| (-1..=1).map(move |dx| Pos::new(p.x + dx, p.y + dy)))
        .filter_map(|c| dm.get(c))
        .min()
}

/// Picks a task from `to_do` according to `h`. Random and threshold variants
/// draw uniformly from the admissible candidates; Eager takes the nearest
/// located target (unreachable ones rank by straight-line distance).
pub fn select_task(
    h: SelectHeuristic,
    to_do: &[Candidate],
    belief: &AgentBelief,
    from: Pos,
    rng: &mut ChaCha8Rng,
) -> Option<TaskId> {
    let admissible: Vec<&Candidate> = to_do.iter().filter(|c| h.admits(c.value)).collect();
    match h {
        SelectHeuristic::Explorer => None,
        SelectHeuristic::Eager => {
            if admissible.is_empty() {
                return None;
            }
            let dm = DistanceMap::new(belief, from);
            admissible
                .iter()
                .min_by_key(|c| {
                    let path = c
                        .location
                        .and_then(|p| reach_distance(&dm, p))
                        .unwrap_or(u32::MAX);
                    let straight = c.location.map_or(u32::MAX, |p| p.manhattan(from));
                    (path, straight, c.id)
                })
                .map(|c| c.id)
        }
        _ => admissible.choose(rng).map(|c| c.id),
    }
}

/// Closest-first enabler choice. Unreachable candidates count as infinitely
/// far; ties go to the smaller id.
pub fn choose_enabler(
    h: FindHeuristic,
    delta: &[ObjId],
    from: Pos,
    belief: &AgentBelief,
) -> Option<ObjId> {
    match h {
        FindHeuristic::ClosestFirst => {
            let dm = DistanceMap::new(belief, from);
            delta
                .iter()
                .map(|b| {
                    let d = belief
                        .sighting(*b)
                        .and_then(|s| reach_distance(&dm, s.snapshot.pos))
                        .unwrap_or(u32::MAX);
                    (d, *b)
                })
                .min()
                .map(|(_, b)| b)
        }
    }
}

/// Publishes tasks whose targets appear in `obs`, and completes toDo tasks whose
/// target is seen open. Returns `true` when at least one task was new.
pub fn intake(bb: &mut Blackboard, obs: &Observation) -> Result<bool, BlackboardError> {
    let mut fresh = Vec::new();
    let mut open = BTreeSet::new();
    let mut newly_open = Vec::new();
    for (id, snap) in &obs.visible_objects {
        let ObjectState::Door { open: is_open } = snap.state else {
            continue;
        };
        let Some(task) = bb.task_for_target(*id) else {
            continue;
        };
        if !bb.is_discovered(task) {
            fresh.push((task, snap.pos));
            if is_open {
                open.insert(task);
            }
        } else if is_open && bb.to_do().contains(&task) {
            newly_open.push(task);
        }
    }
    let published = bb.publish_discovered(&fresh, obs.observer, &open)?;
    for task in newly_open {
        bb.complete_observed(task, obs.observer)?;
    }
    Ok(!published.is_empty())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Goal {
    /// Any cell within interaction range of a position.
    Near(Pos),
    /// A specific frontier cell.
    Frontier(Pos),
    /// A frontier cell picked while every reachable frontier cell is closer
    /// to some teammate.
    Spread(Pos),
}

#[derive(Clone, Debug)]
struct Plan {
    goal: Goal,
    steps: VecDeque<Pos>,
}

/// What the agent knows about this tick when deciding.
pub struct StepContext<'a> {
    pub tick: u64,
    pub pos: Pos,
    pub obs: &'a Observation,
    /// Teammate positions shared through the blackboard (extended sync only).
    pub teammates: &'a [(AgentId, Pos)],
}

const MAX_TRANSITIONS: usize = 16;

#[derive(Clone, Debug)]
pub struct AgentProgram {
    pub agent: AgentId,
    pub spec: AgentSpec,
    phase: Phase,
    rng: ChaCha8Rng,
    plan: Option<Plan>,
    claimed: Option<TaskId>,
    /// Enablers locked for the current attempt. Pressed ones stay locked
    /// until the attempt ends so teammates cannot undo the door states the
    /// attempt relies on.
    held: BTreeSet<ObjId>,
    pressed: BTreeSet<ObjId>,
    attempt_start: u64,
    attempt_changes: u64,
    /// Set after a press left the target closed: newly reachable terrain that
    /// is closer than the next enabler gets explored first.
    probe: bool,
    /// Tick of this agent's latest press; doors seen closed no later than
    /// this may have changed since.
    last_press: Option<u64>,
}

impl AgentProgram {
    pub fn new(agent: AgentId, spec: AgentSpec, seed: u64) -> Self {
        AgentProgram {
            agent,
            spec,
            phase: Phase::Idle,
            rng: ChaCha8Rng::seed_from_u64(seed),
            plan: None,
            claimed: None,
            held: BTreeSet::new(),
            pressed: BTreeSet::new(),
            attempt_start: 0,
            attempt_changes: 0,
            probe: false,
            last_press: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn claimed(&self) -> Option<TaskId> {
        self.claimed
    }

    pub fn held_locks(&self) -> &BTreeSet<ObjId> {
        &self.held
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn inconsistent(&self, message: impl Into<String>) -> AgentError {
        AgentError::Inconsistent {
            agent: self.agent,
            message: message.into(),
        }
    }

    fn candidates(&self, bb: &Blackboard) -> Vec<Candidate> {
        bb.to_do()
            .iter()
            .filter(|t| bb.may_claim(**t, self.agent))
            .map(|t| Candidate {
                id: *t,
                value: bb.task(*t).value,
                location: bb.target_pos(*t),
            })
            .collect()
    }

    fn has_selectable(&self, bb: &Blackboard) -> bool {
        self.candidates(bb)
            .iter()
            .any(|c| self.spec.select.admits(c.value))
    }

    /// Advances the state machine until it emits a primitive action.
    pub fn step(
        &mut self,
        ctx: &StepContext,
        belief: &mut AgentBelief,
        bb: &mut Blackboard,
    ) -> Result<Action, AgentError> {
        for _ in 0..MAX_TRANSITIONS {
            if let Some(action) = self.transition(ctx, belief, bb)? {
                return Ok(action);
            }
        }
        Ok(Action::NoOp)
    }

    /// One phase transition. `Some` ends the tick.
    fn transition(
        &mut self,
        ctx: &StepContext,
        belief: &mut AgentBelief,
        bb: &mut Blackboard,
    ) -> Result<Option<Action>, AgentError> {
        if let Some(task) = self.claimed {
            if bb.claims().get(&task) != Some(&self.agent) {
                return Err(self.inconsistent(format!(
                    "holds {} without a blackboard claim",
                    bb.task_name(task)
                )));
            }
            if ctx.tick.saturating_sub(self.attempt_start) >= bb.task(task).stop.attempt_budget {
                self.give_up(bb)?;
                return Ok(None);
            }
        }
        match self.phase {
            Phase::Idle | Phase::Done => {
                let cands = self.candidates(bb);
                match select_task(self.spec.select, &cands, belief, ctx.pos, &mut self.rng) {
                    Some(task) => self.phase = Phase::Claiming(task),
                    None if self.frontier_move(ctx.pos, belief, ctx.teammates).is_some() => {
                        self.phase = Phase::FindingTask { explored: 0 }
                    }
                    None => {
                        self.phase = Phase::Done;
                        return Ok(Some(Action::NoOp));
                    }
                }
                Ok(None)
            }
            Phase::Claiming(task) => {
                if bb.claim(task, self.agent)? == Grant::Granted {
                    self.claimed = Some(task);
                    self.attempt_start = ctx.tick;
                    self.attempt_changes = bb.door_changes();
                    self.plan = None;
                    self.phase = Phase::TravelToTarget(task);
                    Ok(None)
                } else {
                    self.phase = Phase::Idle;
                    Ok(Some(Action::NoOp))
                }
            }
            Phase::FindingTask { explored } => {
                let stop = match self.spec.explore {
                    ExplorePolicy::Gradual => self.has_selectable(bb),
                    ExplorePolicy::Aggressive => false,
                    ExplorePolicy::Budget(n) => explored >= n,
                };
                if stop {
                    self.phase = Phase::Idle;
                    return Ok(None);
                }
                match self.frontier_move(ctx.pos, belief, ctx.teammates) {
                    Some(action) => {
                        self.phase = Phase::FindingTask {
                            explored: explored + 1,
                        };
                        Ok(Some(action))
                    }
                    None => {
                        self.phase = Phase::Done;
                        Ok(Some(Action::NoOp))
                    }
                }
            }
            Phase::TravelToTarget(task) => {
                let target = self.target_pos(task, bb)?;
                if ctx.pos.chebyshev(target) <= 1 && ctx.obs.sees(target) {
                    self.phase = Phase::Verifying(task);
                    return Ok(None);
                }
                match self.approach(ctx.pos, target, belief) {
                    Some(action) => Ok(Some(action)),
                    None => {
                        // Cut off from the target: look for an enabler that
                        // reopens the way.
                        self.phase = Phase::DynGoal(task, DynStage::Choose);
                        Ok(None)
                    }
                }
            }
            Phase::Verifying(task) => {
                let door = bb.task(task).target;
                match ctx.obs.object(door).and_then(|s| s.door_open()) {
                    Some(true) => {
                        self.finish(task, bb)?;
                    }
                    Some(false) => self.phase = Phase::DynGoal(task, DynStage::Choose),
                    None => self.phase = Phase::TravelToTarget(task),
                }
                Ok(None)
            }
            Phase::DynGoal(task, stage) => self.dynamic_goal_step(task, stage, ctx, belief, bb),
        }
    }

    fn dynamic_goal_step(
        &mut self,
        task: TaskId,
        stage: DynStage,
        ctx: &StepContext,
        belief: &mut AgentBelief,
        bb: &mut Blackboard,
    ) -> Result<Option<Action>, AgentError> {
        let door = bb.task(task).target;
        match stage {
            DynStage::Choose => {
                let mut delta: Vec<ObjId> = belief
                    .last_seen()
                    .iter()
                    .filter(|(id, s)| {
                        s.snapshot.state == ObjectState::Button
                            && !belief.tried().is_marked(door, **id)
                            && !bb.is_locked_by_other(**id, self.agent)
                    })
                    .map(|(id, _)| *id)
                    .collect();
                self.skip_unreachable(door, ctx.pos, &mut delta, belief);
                if self.probe {
                    if let Some(action) = self.probe_step(ctx.pos, &delta, belief) {
                        return Ok(Some(action));
                    }
                    self.probe = false;
                }
                // A repeated round in the same order can toggle the doors it
                // needs back into the same states; later rounds shuffle, and
                // explore whatever the last press opened up before pressing on.
                let pick = if belief.tried().round(door) == 0 {
                    choose_enabler(self.spec.find, &delta, ctx.pos, belief)
                } else {
                    if let Some(action) = self.frontier_move(ctx.pos, belief, ctx.teammates) {
                        return Ok(Some(action));
                    }
                    delta.choose(&mut self.rng).copied()
                };
                if let Some(b) = pick {
                    if self.held.contains(&b) || bb.lock(b, self.agent)? == Grant::Granted {
                        belief.tried_mut().mark(door, b);
                        self.held.insert(b);
                        self.plan = None;
                        self.phase = Phase::DynGoal(task, DynStage::ToEnabler(b));
                        return Ok(None);
                    }
                    return Ok(Some(Action::NoOp));
                }
                if let Some(action) = self.frontier_move(ctx.pos, belief, ctx.teammates) {
                    return Ok(Some(action));
                }
                belief.tried_mut().start_new_round(door);
                self.give_up(bb)?;
                Ok(None)
            }
            DynStage::ToEnabler(b) => {
                let Some(bpos) = belief.sighting(b).map(|s| s.snapshot.pos) else {
                    return Err(self.inconsistent("chose an enabler it never saw"));
                };
                if ctx.pos.chebyshev(bpos) <= 1 {
                    self.phase = Phase::DynGoal(task, DynStage::Press(b));
                    return Ok(None);
                }
                match self.approach(ctx.pos, bpos, belief) {
                    Some(action) => Ok(Some(action)),
                    None => {
                        if !self.pressed.contains(&b) {
                            self.held.remove(&b);
                            bb.unlock(b, self.agent)?;
                        }
                        self.phase = Phase::DynGoal(task, DynStage::Choose);
                        Ok(None)
                    }
                }
            }
            DynStage::Press(b) => {
                self.pressed.insert(b);
                self.last_press = Some(ctx.tick);
                self.phase = Phase::DynGoal(task, DynStage::Return(b));
                self.plan = None;
                Ok(Some(Action::Interact(b)))
            }
            DynStage::Return(_) => {
                if let Some(open) = ctx.obs.object(door).and_then(|s| s.door_open()) {
                    if open {
                        self.finish(task, bb)?;
                    } else {
                        self.probe = true;
                        self.phase = Phase::DynGoal(task, DynStage::Choose);
                    }
                    return Ok(None);
                }
                let target = self.target_pos(task, bb)?;
                match self.approach(ctx.pos, target, belief) {
                    Some(action) => Ok(Some(action)),
                    None => {
                        self.phase = Phase::DynGoal(task, DynStage::Choose);
                        Ok(None)
                    }
                }
            }
        }
    }

    fn target_pos(&self, task: TaskId, bb: &Blackboard) -> Result<Pos, AgentError> {
        bb.target_pos(task).ok_or_else(|| {
            self.inconsistent(format!(
                "claimed {} with unknown location",
                bb.task_name(task)
            ))
        })
    }

    /// Explores toward the nearest frontier cell when it is strictly closer
    /// than every candidate enabler.
    fn probe_step(&mut self, pos: Pos, delta: &[ObjId], belief: &AgentBelief) -> Option<Action> {
        let frontier = belief.frontier();
        let to_frontier = bfs_nearest(belief, pos, |p| p != pos && frontier.contains(&p))?;
        let spots: Vec<Pos> = delta
            .iter()
            .filter_map(|b| belief.sighting(*b))
            .map(|s| s.snapshot.pos)
            .collect();
        if let Some(to_button) =
            bfs_nearest(belief, pos, |p| spots.iter().any(|b| b.chebyshev(p) <= 1))
        {
            if to_button.len() <= to_frontier.len() {
                return None;
            }
        }
        let f = *to_frontier.last()?;
        self.start(pos, Goal::Frontier(f), to_frontier)
    }

    fn finish(&mut self, task: TaskId, bb: &mut Blackboard) -> Result<(), AgentError> {
        self.probe = false;
        self.drop_locks(bb)?;
        bb.complete(task, self.agent)?;
        self.claimed = None;
        self.plan = None;
        self.phase = Phase::Idle;
        Ok(())
    }

    fn drop_locks(&mut self, bb: &mut Blackboard) -> Result<(), AgentError> {
        self.pressed.clear();
        for b in std::mem::take(&mut self.held) {
            bb.unlock(b, self.agent)?;
        }
        Ok(())
    }

    /// Returns the claimed task to toDo and remembers that this agent gave up.
    fn give_up(&mut self, bb: &mut Blackboard) -> Result<(), AgentError> {
        self.probe = false;
        self.drop_locks(bb)?;
        if let Some(task) = self.claimed.take() {
            bb.release_exhausted(task, self.agent, self.attempt_changes)?;
        }
        self.plan = None;
        self.phase = Phase::Idle;
        Ok(())
    }

    /// Drops any claim and lock, e.g. when the run ends.
    pub fn abort(&mut self, bb: &mut Blackboard) -> Result<(), AgentError> {
        self.probe = false;
        self.drop_locks(bb)?;
        if let Some(task) = self.claimed.take() {
            bb.release(task, self.agent)?;
        }
        self.plan = None;
        self.phase = Phase::Done;
        Ok(())
    }

    fn follow(&mut self, pos: Pos, belief: &AgentBelief, goal: &Goal) -> Option<Action> {
        let plan = self.plan.as_mut().filter(|p| p.goal == *goal)?;
        while plan.steps.front() == Some(&pos) {
            plan.steps.pop_front();
        }
        let next = *plan.steps.front()?;
        if plan.steps.iter().all(|p| belief.traversable(*p)) {
            Dir::between(pos, next).map(Action::Move)
        } else {
            None
        }
    }

    /// Step toward interaction range of `target`; explores toward it when no
    /// believed path exists. `None` when neither is possible.
    fn approach(&mut self, pos: Pos, target: Pos, belief: &AgentBelief) -> Option<Action> {
        let goal = Goal::Near(target);
        if let Some(a) = self.follow(pos, belief, &goal) {
            return Some(a);
        }
        if let Some(path) = bfs_nearest(belief, pos, |c| c.chebyshev(target) <= 1) {
            return self.start(pos, goal, path);
        }
        // No believed route: go and look at closed doors on the way that an
        // own press may have opened since, stopping in front of the first.
        if let Some(path) = self.stale_route(pos, target, belief) {
            return self.start(pos, goal, path);
        }
        // Otherwise head for the frontier cell that looks closest to the
        // target.
        if let Some(Plan {
            goal: Goal::Frontier(f),
            ..
        }) = &self.plan
        {
            let f = *f;
            if belief.frontier().contains(&f) {
                if let Some(a) = self.follow(pos, belief, &Goal::Frontier(f)) {
                    return Some(a);
                }
            }
        }
        let dm = DistanceMap::new(belief, pos);
        let best = belief
            .frontier()
            .iter()
            .filter_map(|f| dm.get(*f).map(|d| (d + f.manhattan(target), *f)))
            .min()?;
        let path = dm.path_to(best.1)?;
        self.start(pos, Goal::Frontier(best.1), path)
    }

    /// With no reachable frontier, an enabler that not even a stale door
    /// leads to would only fail in travel; mark it tried right away.
    fn skip_unreachable(
        &self,
        door: ObjId,
        pos: Pos,
        delta: &mut Vec<ObjId>,
        belief: &mut AgentBelief,
    ) {
        if delta.is_empty() {
            return;
        }
        let dm = DistanceMap::via(belief, pos, |p| {
            belief.traversable(p) || self.is_stale(p, belief)
        });
        if belief.frontier().iter().any(|f| dm.get(*f).is_some()) {
            return;
        }
        let reachable = |b: &ObjId| {
            belief.sighting(*b).is_some_and(|s| {
                let at = s.snapshot.pos;
                (-1..=1)
                    .any(|dy| (-1..=1).any(|dx| dm.get(Pos::new(at.x + dx, at.y + dy)).is_some()))
            })
        };
        let (keep, skip): (Vec<ObjId>, Vec<ObjId>) = delta.iter().partition(|b| reachable(b));
        for b in skip {
            belief.tried_mut().mark(door, b);
        }
        *delta = keep;
    }

    fn is_stale(&self, p: Pos, belief: &AgentBelief) -> bool {
        match (self.last_press, belief.cell(p)) {
            (Some(since), Some(CellView::Door(d))) => {
                belief.sighting(d).is_some_and(|s| s.tick <= since)
            }
            _ => false,
        }
    }

    fn stale_route(&self, pos: Pos, target: Pos, belief: &AgentBelief) -> Option<Vec<Pos>> {
        self.last_press?;
        let stale = |p: Pos| self.is_stale(p, belief);
        let mut path = bfs_nearest_via(
            belief,
            pos,
            |p| belief.traversable(p) || stale(p),
            |c| c.chebyshev(target) <= 1,
        )?;
        let cut = path.iter().position(|p| stale(*p))?;
        path.truncate(cut);
        (path.len() > 1).then_some(path)
    }

    /// A frontier cell is ours when we are strictly nearer to it than every
    /// teammate whose position we know (ties go to the lower agent id).
    fn owns(&self, f: Pos, pos: Pos, mates: &[(AgentId, Pos)]) -> bool {
        mates
            .iter()
            .all(|(id, p)| (pos.manhattan(f), self.agent) < (p.manhattan(f), *id))
    }

    /// Step toward the nearest reachable frontier cell, preferring cells no
    /// known teammate is closer to. When a teammate is closer to all of them,
    /// heads for the least contested one instead of trailing that teammate.
    fn frontier_move(
        &mut self,
        pos: Pos,
        belief: &AgentBelief,
        mates: &[(AgentId, Pos)],
    ) -> Option<Action> {
        let frontier = belief.frontier();
        match self.plan.as_ref().map(|p| p.goal) {
            Some(Goal::Frontier(f)) if frontier.contains(&f) && self.owns(f, pos, mates) => {
                if let Some(a) = self.follow(pos, belief, &Goal::Frontier(f)) {
                    return Some(a);
                }
            }
            Some(Goal::Spread(f)) if frontier.contains(&f) => {
                if let Some(a) = self.follow(pos, belief, &Goal::Spread(f)) {
                    return Some(a);
                }
            }
            _ => {}
        }
        if mates.is_empty() {
            let path = bfs_nearest(belief, pos, |p| p != pos && frontier.contains(&p))?;
            let f = *path.last()?;
            return self.start(pos, Goal::Frontier(f), path);
        }
        if let Some(path) = bfs_nearest(belief, pos, |p| {
            p != pos && frontier.contains(&p) && self.owns(p, pos, mates)
        }) {
            let f = *path.last()?;
            return self.start(pos, Goal::Frontier(f), path);
        }
        let dm = DistanceMap::new(belief, pos);
        let (_, _, f) = frontier
            .iter()
            .filter(|f| **f != pos)
            .filter_map(|f| {
                let d = dm.get(*f)? as i64;
                let m = mates.iter().map(|(_, o)| o.manhattan(*f)).min()? as i64;
                Some((d - 2 * m, d, *f))
            })
            .min()?;
        let path = dm.path_to(f)?;
        self.start(pos, Goal::Spread(f), path)
    }

    fn start(&mut self, pos: Pos, goal: Goal, path: Vec<Pos>) -> Option<Action> {
        let mut steps: VecDeque<Pos> = path.into();
        if steps.pop_front() != Some(pos) {
            return None;
        }
        let dir = Dir::between(pos, *steps.front()?)?;
        self.plan = Some(Plan { goal, steps });
        Some(Action::Move(dir))
    }
}
