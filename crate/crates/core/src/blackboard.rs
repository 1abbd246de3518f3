//! Shared coordination state: the task universe, toDo/claimed/done partition,
//! enabler locks, the observation pool used by extended synchronization and an
//! append-only audit log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::agent::{TaskId, TestingTask};
use crate::nav::{update_belief, AgentBelief, TriedMarks};
use crate::world::{AgentId, Dir, Level, ObjId, Observation, Pos};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SyncMode {
    /// Share task sets and target locations only.
    Basic,
    /// Additionally share explored cells, freshest object states and tried marks.
    Extended,
}

impl SyncMode {
    pub fn name(self) -> &'static str {
        match self {
            SyncMode::Basic => "basic",
            SyncMode::Extended => "extended",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DoneEntry {
    pub tick: u64,
    pub agent: AgentId,
    pub accidental: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grant {
    Granted,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlackboardError {
    #[error("unknown task {0}")]
    UnknownTask(usize),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("task {task} is not claimed by {agent}")]
    NotClaimedBy { task: String, agent: AgentId },
    #[error("task {0} is already done")]
    AlreadyDone(String),
    #[error("object {0} is not a button")]
    NotAButton(String),
    #[error("{agent} does not hold the lock on {obj}")]
    NotLockHolder { obj: String, agent: AgentId },
}

/// One audit record. World actions are logged alongside blackboard operations
/// so the log can be replayed against a fresh world.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuditEvent {
    Publish {
        tick: u64,
        agent: AgentId,
        task: String,
    },
    Claim {
        tick: u64,
        agent: AgentId,
        task: String,
    },
    Complete {
        tick: u64,
        agent: AgentId,
        task: String,
        accidental: bool,
    },
    Release {
        tick: u64,
        agent: AgentId,
        task: String,
    },
    Lock {
        tick: u64,
        agent: AgentId,
        obj: String,
    },
    Unlock {
        tick: u64,
        agent: AgentId,
        obj: String,
    },
    Sync {
        tick: u64,
        mode: SyncMode,
    },
    Move {
        tick: u64,
        agent: AgentId,
        dir: Dir,
        moved: bool,
    },
    Interact {
        tick: u64,
        agent: AgentId,
        obj: String,
        toggled: Vec<String>,
    },
}

impl fmt::Display for AuditEvent {
    /// `tick,event,agent,task_or_obj,extra`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditEvent::Publish { tick, agent, task } => {
                write!(f, "{tick},publish,{agent},{task},")
            }
            AuditEvent::Claim { tick, agent, task } => write!(f, "{tick},claim,{agent},{task},"),
            AuditEvent::Complete {
                tick,
                agent,
                task,
                accidental,
            } => {
                let kind = if *accidental { "accidental" } else { "solved" };
                write!(f, "{tick},complete,{agent},{task},{kind}")
            }
            AuditEvent::Release { tick, agent, task } => {
                write!(f, "{tick},release,{agent},{task},")
            }
            AuditEvent::Lock { tick, agent, obj } => write!(f, "{tick},lock,{agent},{obj},"),
            AuditEvent::Unlock { tick, agent, obj } => write!(f, "{tick},unlock,{agent},{obj},"),
            AuditEvent::Sync { tick, mode } => write!(f, "{tick},sync,,,{}", mode.name()),
            AuditEvent::Move {
                tick,
                agent,
                dir,
                moved,
            } => {
                let ev = if *moved { "move" } else { "blocked" };
                write!(f, "{tick},{ev},{agent},,{}", dir.as_char())
            }
            AuditEvent::Interact {
                tick,
                agent,
                obj,
                toggled,
            } => {
                let extra = if toggled.is_empty() {
                    "-".to_string()
                } else {
                    toggled.join(";")
                };
                write!(f, "{tick},interact,{agent},{obj},{extra}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("audit line {line}: {message}")]
pub struct AuditParseError {
    pub line: usize,
    pub message: String,
}

fn parse_agent(s: &str) -> Option<AgentId> {
    s.strip_prefix('a')?.parse().ok().map(AgentId)
}

impl AuditEvent {
    pub fn tick(&self) -> u64 {
        match self {
            AuditEvent::Publish { tick, .. }
            | AuditEvent::Claim { tick, .. }
            | AuditEvent::Complete { tick, .. }
            | AuditEvent::Release { tick, .. }
            | AuditEvent::Lock { tick, .. }
            | AuditEvent::Unlock { tick, .. }
            | AuditEvent::Sync { tick, .. }
            | AuditEvent::Move { tick, .. }
            | AuditEvent::Interact { tick, .. } => *tick,
        }
    }

    /// Inverse of the `Display` form.
    pub fn parse(line_no: usize, line: &str) -> Result<AuditEvent, AuditParseError> {
        let err = |m: &str| AuditParseError {
            line: line_no,
            message: m.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err("expected 5 fields"));
        }
        let tick: u64 = fields[0].parse().map_err(|_| err("bad tick"))?;
        let agent = || parse_agent(fields[2]).ok_or_else(|| err("bad agent"));
        let name = fields[3].to_string();
        let dir = || {
            let mut cs = fields[4].chars();
            match (cs.next().and_then(Dir::from_char), cs.next()) {
                (Some(d), None) => Ok(d),
                _ => Err(err("bad direction")),
            }
        };
        Ok(match fields[1] {
            "publish" => AuditEvent::Publish {
                tick,
                agent: agent()?,
                task: name,
            },
            "claim" => AuditEvent::Claim {
                tick,
                agent: agent()?,
                task: name,
            },
            "complete" => AuditEvent::Complete {
                tick,
                agent: agent()?,
                task: name,
                accidental: match fields[4] {
                    "accidental" => true,
                    "solved" => false,
                    _ => return Err(err("bad completion kind")),
                },
            },
            "release" => AuditEvent::Release {
                tick,
                agent: agent()?,
                task: name,
            },
            "lock" => AuditEvent::Lock {
                tick,
                agent: agent()?,
                obj: name,
            },
            "unlock" => AuditEvent::Unlock {
                tick,
                agent: agent()?,
                obj: name,
            },
            "sync" => AuditEvent::Sync {
                tick,
                mode: match fields[4] {
                    "basic" => SyncMode::Basic,
                    "extended" => SyncMode::Extended,
                    _ => return Err(err("bad sync mode")),
                },
            },
            "move" => AuditEvent::Move {
                tick,
                agent: agent()?,
                dir: dir()?,
                moved: true,
            },
            "blocked" => AuditEvent::Move {
                tick,
                agent: agent()?,
                dir: dir()?,
                moved: false,
            },
            "interact" => AuditEvent::Interact {
                tick,
                agent: agent()?,
                obj: name,
                toggled: match fields[4] {
                    "-" => Vec::new(),
                    list => list.split(';').map(str::to_string).collect(),
                },
            },
            _ => return Err(err("unknown event")),
        })
    }
}

pub fn audit_csv(events: &[AuditEvent]) -> String {
    let mut out = String::from("tick,event,agent,task_or_obj,extra\n");
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_audit_csv(text: &str) -> Result<Vec<AuditEvent>, AuditParseError> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| AuditEvent::parse(i + 1, l))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditViolation {
    #[error("tick {tick}: {agent} claimed {task} while it was held by {holder}")]
    DoubleClaim {
        tick: u64,
        agent: AgentId,
        task: String,
        holder: AgentId,
    },
    #[error("tick {tick}: {task} completed twice")]
    DoubleCompletion { tick: u64, task: String },
    #[error("tick {tick}: {agent} completed {task} without holding its claim")]
    CompletionWithoutClaim {
        tick: u64,
        agent: AgentId,
        task: String,
    },
    #[error("tick {tick}: {agent} released {task} it did not hold")]
    BadRelease {
        tick: u64,
        agent: AgentId,
        task: String,
    },
    #[error("tick {tick}: {agent} locked {obj} held by {holder}")]
    DoubleLock {
        tick: u64,
        agent: AgentId,
        obj: String,
        holder: AgentId,
    },
    #[error("tick {tick}: {agent} unlocked {obj} it did not hold")]
    BadUnlock {
        tick: u64,
        agent: AgentId,
        obj: String,
    },
    #[error("locks still held at the end of the log: {0:?}")]
    LeakedLocks(Vec<String>),
    #[error("tick {0} appears after a later tick")]
    TimeTravel(u64),
}

/// Checks single-claim, exactly-once completion and lock hygiene on a log.
pub fn check_audit(events: &[AuditEvent]) -> Result<(), AuditViolation> {
    let mut claims: BTreeMap<&str, AgentId> = BTreeMap::new();
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut locks: BTreeMap<&str, AgentId> = BTreeMap::new();
    let mut last_tick = 0;
    for e in events {
        if e.tick() < last_tick {
            return Err(AuditViolation::TimeTravel(e.tick()));
        }
        last_tick = e.tick();
        match e {
            AuditEvent::Claim { tick, agent, task } => {
                if let Some(holder) = claims.get(task.as_str()) {
                    return Err(AuditViolation::DoubleClaim {
                        tick: *tick,
                        agent: *agent,
                        task: task.clone(),
                        holder: *holder,
                    });
                }
                claims.insert(task, *agent);
            }
            AuditEvent::Complete {
                tick,
                agent,
                task,
                accidental,
            } => {
                if !done.insert(task) {
                    return Err(AuditViolation::DoubleCompletion {
                        tick: *tick,
                        task: task.clone(),
                    });
                }
                match claims.remove(task.as_str()) {
                    Some(holder) if holder == *agent => {}
                    None if *accidental => {}
                    _ => {
                        return Err(AuditViolation::CompletionWithoutClaim {
                            tick: *tick,
                            agent: *agent,
                            task: task.clone(),
                        })
                    }
                }
            }
            AuditEvent::Release { tick, agent, task } => {
                if claims.remove(task.as_str()) != Some(*agent) {
                    return Err(AuditViolation::BadRelease {
                        tick: *tick,
                        agent: *agent,
                        task: task.clone(),
                    });
                }
            }
            AuditEvent::Lock { tick, agent, obj } => {
                if let Some(holder) = locks.get(obj.as_str()) {
                    return Err(AuditViolation::DoubleLock {
                        tick: *tick,
                        agent: *agent,
                        obj: obj.clone(),
                        holder: *holder,
                    });
                }
                locks.insert(obj, *agent);
            }
            AuditEvent::Unlock { tick, agent, obj }
                if locks.remove(obj.as_str()) != Some(*agent) =>
            {
                return Err(AuditViolation::BadUnlock {
                    tick: *tick,
                    agent: *agent,
                    obj: obj.clone(),
                });
            }
            _ => {}
        }
    }
    if !locks.is_empty() {
        return Err(AuditViolation::LeakedLocks(
            locks.keys().map(|s| s.to_string()).collect(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Blackboard {
    all_tasks: Vec<TestingTask>,
    by_target: BTreeMap<ObjId, TaskId>,
    names: Vec<String>,
    agents: usize,
    to_do: BTreeSet<TaskId>,
    done: BTreeMap<TaskId, DoneEntry>,
    claims: BTreeMap<TaskId, AgentId>,
    locks: BTreeMap<ObjId, AgentId>,
    target_pos: BTreeMap<TaskId, Pos>,
    shared_obs: Vec<Observation>,
    positions: Vec<(AgentId, Pos)>,
    sync_mode: SyncMode,
    audit: Vec<AuditEvent>,
    exhausted: BTreeMap<(AgentId, TaskId), u64>,
    door_changes: u64,
    tick: u64,
    object_names: Vec<String>,
    buttons: BTreeSet<ObjId>,
}

impl Blackboard {
    pub fn new(level: &Level, tasks: Vec<TestingTask>, agents: usize, sync_mode: SyncMode) -> Self {
        let by_target = tasks.iter().map(|t| (t.target, t.id)).collect();
        let names = tasks
            .iter()
            .map(|t| level.name(t.target).to_string())
            .collect();
        Blackboard {
            all_tasks: tasks,
            by_target,
            names,
            agents,
            to_do: BTreeSet::new(),
            done: BTreeMap::new(),
            claims: BTreeMap::new(),
            locks: BTreeMap::new(),
            target_pos: BTreeMap::new(),
            shared_obs: Vec::new(),
            positions: Vec::new(),
            sync_mode,
            audit: Vec::new(),
            exhausted: BTreeMap::new(),
            door_changes: 0,
            tick: 0,
            object_names: level.objects().iter().map(|o| o.name.clone()).collect(),
            buttons: level.buttons().collect(),
        }
    }

    /// Current tick, stamped on audit records.
    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn sync_mode(&self) -> SyncMode {
        self.sync_mode
    }

    pub fn all_tasks(&self) -> &[TestingTask] {
        &self.all_tasks
    }

    pub fn task(&self, id: TaskId) -> &TestingTask {
        &self.all_tasks[id.0]
    }

    pub fn task_name(&self, id: TaskId) -> &str {
        &self.names[id.0]
    }

    pub fn task_for_target(&self, door: ObjId) -> Option<TaskId> {
        self.by_target.get(&door).copied()
    }

    pub fn to_do(&self) -> &BTreeSet<TaskId> {
        &self.to_do
    }

    pub fn done(&self) -> &BTreeMap<TaskId, DoneEntry> {
        &self.done
    }

    pub fn claims(&self) -> &BTreeMap<TaskId, AgentId> {
        &self.claims
    }

    pub fn locks(&self) -> &BTreeMap<ObjId, AgentId> {
        &self.locks
    }

    pub fn audit_log(&self) -> &[AuditEvent] {
        &self.audit
    }

    pub fn all_done(&self) -> bool {
        self.done.len() == self.all_tasks.len()
    }

    pub fn is_discovered(&self, id: TaskId) -> bool {
        self.to_do.contains(&id) || self.claims.contains_key(&id) || self.done.contains_key(&id)
    }

    /// Where the target of a discovered task was seen.
    pub fn target_pos(&self, id: TaskId) -> Option<Pos> {
        self.target_pos.get(&id).copied()
    }

    fn check_task(&self, id: TaskId) -> Result<(), BlackboardError> {
        if id.0 < self.all_tasks.len() {
            Ok(())
        } else {
            Err(BlackboardError::UnknownTask(id.0))
        }
    }

    fn check_agent(&self, agent: AgentId) -> Result<(), BlackboardError> {
        if agent.0 < self.agents {
            Ok(())
        } else {
            Err(BlackboardError::UnknownAgent(agent))
        }
    }

    fn log(&mut self, e: AuditEvent) {
        self.audit.push(e);
    }

    /// Adds newly discovered tasks. Tasks whose target was observed open go
    /// straight to done as accidental completions. Already known tasks are
    /// ignored. Returns the tasks that were actually new.
    pub fn publish_discovered(
        &mut self,
        tasks: &[(TaskId, Pos)],
        by: AgentId,
        observed_open: &BTreeSet<TaskId>,
    ) -> Result<Vec<TaskId>, BlackboardError> {
        self.check_agent(by)?;
        let mut fresh = Vec::new();
        for &(id, pos) in tasks {
            self.check_task(id)?;
            if self.is_discovered(id) {
                continue;
            }
            self.target_pos.insert(id, pos);
            let task = self.names[id.0].clone();
            self.log(AuditEvent::Publish {
                tick: self.tick,
                agent: by,
                task: task.clone(),
            });
            if observed_open.contains(&id) {
                self.done.insert(
                    id,
                    DoneEntry {
                        tick: self.tick,
                        agent: by,
                        accidental: true,
                    },
                );
                self.log(AuditEvent::Complete {
                    tick: self.tick,
                    agent: by,
                    task,
                    accidental: true,
                });
            } else {
                self.to_do.insert(id);
            }
            fresh.push(id);
        }
        Ok(fresh)
    }

    pub fn claim(&mut self, task: TaskId, by: AgentId) -> Result<Grant, BlackboardError> {
        self.check_task(task)?;
        self.check_agent(by)?;
        if !self.to_do.remove(&task) {
            return Ok(Grant::Denied);
        }
        self.claims.insert(task, by);
        self.log(AuditEvent::Claim {
            tick: self.tick,
            agent: by,
            task: self.names[task.0].clone(),
        });
        Ok(Grant::Granted)
    }

    /// Completes a task held by `by`. Completing a task that is already done
    /// is a no-op and returns `false`.
    pub fn complete(&mut self, task: TaskId, by: AgentId) -> Result<bool, BlackboardError> {
        self.check_task(task)?;
        if self.done.contains_key(&task) {
            return Ok(false);
        }
        if self.claims.get(&task) != Some(&by) {
            return Err(BlackboardError::NotClaimedBy {
                task: self.names[task.0].clone(),
                agent: by,
            });
        }
        self.claims.remove(&task);
        self.done.insert(
            task,
            DoneEntry {
                tick: self.tick,
                agent: by,
                accidental: false,
            },
        );
        self.log(AuditEvent::Complete {
            tick: self.tick,
            agent: by,
            task: self.names[task.0].clone(),
            accidental: false,
        });
        Ok(true)
    }

    /// Accidental completion: an unclaimed toDo task whose target `by` saw open.
    /// Returns `false` (and changes nothing) for claimed or done tasks.
    pub fn complete_observed(
        &mut self,
        task: TaskId,
        by: AgentId,
    ) -> Result<bool, BlackboardError> {
        self.check_task(task)?;
        self.check_agent(by)?;
        if !self.to_do.remove(&task) {
            return Ok(false);
        }
        self.done.insert(
            task,
            DoneEntry {
                tick: self.tick,
                agent: by,
                accidental: true,
            },
        );
        self.log(AuditEvent::Complete {
            tick: self.tick,
            agent: by,
            task: self.names[task.0].clone(),
            accidental: true,
        });
        Ok(true)
    }

    pub fn release(&mut self, task: TaskId, by: AgentId) -> Result<(), BlackboardError> {
        self.check_task(task)?;
        if self.done.contains_key(&task) {
            return Err(BlackboardError::AlreadyDone(self.names[task.0].clone()));
        }
        if self.claims.get(&task) != Some(&by) {
            return Err(BlackboardError::NotClaimedBy {
                task: self.names[task.0].clone(),
                agent: by,
            });
        }
        self.claims.remove(&task);
        self.to_do.insert(task);
        self.log(AuditEvent::Release {
            tick: self.tick,
            agent: by,
            task: self.names[task.0].clone(),
        });
        Ok(())
    }

    /// Release that also records that `by` gave up on the task. The agent will
    /// not claim it again until some door changes state after `since`.
    pub fn release_exhausted(
        &mut self,
        task: TaskId,
        by: AgentId,
        since: u64,
    ) -> Result<(), BlackboardError> {
        self.release(task, by)?;
        self.exhausted.insert((by, task), since);
        Ok(())
    }

    pub fn may_claim(&self, task: TaskId, by: AgentId) -> bool {
        self.to_do.contains(&task)
            && self
                .exhausted
                .get(&(by, task))
                .is_none_or(|since| self.door_changes > *since)
    }

    /// Number of door state flips observed so far, across all agents.
    pub fn door_changes(&self) -> u64 {
        self.door_changes
    }

    pub fn note_door_changes(&mut self, flips: usize) {
        self.door_changes += flips as u64;
    }

    fn obj_name(&self, obj: ObjId) -> String {
        self.object_names
            .get(obj.index())
            .cloned()
            .unwrap_or_else(|| format!("#{}", obj.0))
    }

    pub fn lock(&mut self, obj: ObjId, by: AgentId) -> Result<Grant, BlackboardError> {
        self.check_agent(by)?;
        if !self.buttons.contains(&obj) {
            return Err(BlackboardError::NotAButton(self.obj_name(obj)));
        }
        if self.locks.contains_key(&obj) {
            return Ok(Grant::Denied);
        }
        self.locks.insert(obj, by);
        self.log(AuditEvent::Lock {
            tick: self.tick,
            agent: by,
            obj: self.obj_name(obj),
        });
        Ok(Grant::Granted)
    }

    pub fn unlock(&mut self, obj: ObjId, by: AgentId) -> Result<(), BlackboardError> {
        if self.locks.get(&obj) != Some(&by) {
            return Err(BlackboardError::NotLockHolder {
                obj: self.obj_name(obj),
                agent: by,
            });
        }
        self.locks.remove(&obj);
        self.log(AuditEvent::Unlock {
            tick: self.tick,
            agent: by,
            obj: self.obj_name(obj),
        });
        Ok(())
    }

    pub fn is_locked_by_other(&self, obj: ObjId, me: AgentId) -> bool {
        self.locks.get(&obj).is_some_and(|h| *h != me)
    }

    /// Queues an observation for the next extended sync. Ignored in basic mode.
    pub fn share_observation(&mut self, obs: Observation) {
        if self.sync_mode == SyncMode::Extended {
            self.shared_obs.push(obs);
        }
    }

    pub fn pending_observations(&self) -> &[Observation] {
        &self.shared_obs
    }

    /// Basic mode leaves beliefs alone: task sets and target locations already
    /// live on the blackboard. Extended mode folds every pooled observation into
    /// every other agent's belief and joins tried marks, which equals a pairwise
    /// [`crate::nav::merge_beliefs`] of the beliefs. Agent positions are shared
    /// too, so explorers can spread out over the common frontier.
    pub fn sync(&mut self, beliefs: &mut [AgentBelief], positions: &[Pos]) {
        if self.sync_mode == SyncMode::Extended && beliefs.len() > 1 {
            self.positions = positions
                .iter()
                .enumerate()
                .map(|(i, p)| (AgentId(i), *p))
                .collect();
            let pool = std::mem::take(&mut self.shared_obs);
            for b in beliefs.iter_mut() {
                let me = b.agent;
                for obs in pool.iter().filter(|o| o.observer != me) {
                    update_belief(b, obs);
                }
            }
            let mut marks = TriedMarks::default();
            for b in beliefs.iter() {
                marks.join(b.tried());
            }
            for b in beliefs.iter_mut() {
                b.tried_mut().join(&marks);
            }
        }
        self.shared_obs.clear();
        self.log(AuditEvent::Sync {
            tick: self.tick,
            mode: self.sync_mode,
        });
    }

    /// Agent positions published at the last extended sync.
    pub fn shared_positions(&self) -> &[(AgentId, Pos)] {
        &self.positions
    }

    /// Logs a world action for replay.
    pub fn record(&mut self, event: AuditEvent) {
        self.log(event);
    }

    pub fn object_name(&self, obj: ObjId) -> String {
        self.obj_name(obj)
    }
}
