//! Property bodies and input strategies shared by the invariant suites and
//! the acceptance check. Levels and action scripts are derived from a seed so
//! every case is cheap to build and replayable from its seed alone.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use gamecoop::agent::{AgentSpec, SelectHeuristic, TaskId, TestingTask};
use gamecoop::blackboard::{
    audit_csv, check_audit, parse_audit_csv, AuditEvent, Blackboard, Grant, SyncMode,
};
use gamecoop::nav::{find_path, merge_beliefs, update_belief, AgentBelief};
use gamecoop::runner::{
    oracle_reachable_set_within, replay_audit, run_traced, LevelSource, RunConfig,
    DEFAULT_ORACLE_CAP,
};
use gamecoop::world::{
    AgentId, CellKind, CellView, Dir, GameObject, Level, LevelDraft, ObjId, Pos, WorldState,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIRS: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

/// Small walled level with one or two partition walls pierced by doors, some
/// loose doors, and buttons wired to one or two doors each.
pub fn tiny_level(seed: u64) -> Level {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(7..15usize);
    let h = rng.gen_range(6..11usize);
    let mut d = LevelDraft::new(w, h, CellKind::Floor);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            if x == 0 || y == 0 || x == w as i32 - 1 || y == h as i32 - 1 || rng.gen_bool(0.08) {
                d.set(Pos::new(x, y), CellKind::Wall);
            }
        }
    }
    let mut doors = Vec::new();
    let wx = rng.gen_range(2..w as i32 - 2);
    for y in 1..h as i32 - 1 {
        d.set(Pos::new(wx, y), CellKind::Wall);
    }
    let gap = Pos::new(wx, rng.gen_range(1..h as i32 - 1));
    d.set(gap, CellKind::Floor);
    doors.push(gap);
    if rng.gen_bool(0.5) {
        let wy = rng.gen_range(2..h as i32 - 2);
        for x in wx + 1..w as i32 - 1 {
            d.set(Pos::new(x, wy), CellKind::Wall);
        }
        let gap = Pos::new(rng.gen_range(wx + 1..w as i32 - 1), wy);
        d.set(gap, CellKind::Floor);
        doors.push(gap);
    }
    let mut free: Vec<Pos> = (0..w * h)
        .map(|i| Pos::new((i % w) as i32, (i / w) as i32))
        .filter(|p| d.get(*p) == CellKind::Floor && !doors.contains(p))
        .collect();
    free.shuffle(&mut rng);
    let extra = rng.gen_range(0..3);
    doors.extend(free.drain(..extra.min(free.len())));
    for (i, p) in doors.iter().enumerate() {
        let points = if rng.gen_bool(0.4) { 10 } else { 1 };
        d.objects
            .push(GameObject::door(format!("d{i}"), *p, points));
    }
    let buttons = rng.gen_range(1..5).min(free.len().saturating_sub(1));
    for i in 0..buttons {
        let p = free.pop().unwrap();
        d.objects.push(GameObject::button(format!("b{i}"), p));
        for _ in 0..rng.gen_range(1..3) {
            let door = format!("d{}", rng.gen_range(0..doors.len()));
            if !d.connections.contains(&(format!("b{i}"), door.clone())) {
                d.connections.push((format!("b{i}"), door));
            }
        }
    }
    let spawn = free.pop().expect("tiny level has a free cell");
    d.spawn_points.push(spawn);
    if rng.gen_bool(0.5) {
        if let Some(p) = free.pop() {
            d.spawn_points.push(p);
        }
    }
    d.build().expect("tiny level is well formed")
}

pub fn heuristic() -> impl Strategy<Value = SelectHeuristic> {
    prop_oneof![
        Just(SelectHeuristic::Random),
        Just(SelectHeuristic::HighValue(5)),
        Just(SelectHeuristic::LowValue(5)),
        Just(SelectHeuristic::Eager),
        Just(SelectHeuristic::Explorer),
    ]
}

#[derive(Clone, Debug)]
pub struct RunCase {
    pub level_seed: u64,
    pub team: Vec<SelectHeuristic>,
    pub extended: bool,
    pub view: u32,
    pub seed: u64,
}

pub fn run_case() -> impl Strategy<Value = RunCase> {
    (
        any::<u64>(),
        prop::collection::vec(heuristic(), 1..4),
        any::<bool>(),
        2..8u32,
        any::<u64>(),
    )
        .prop_map(|(level_seed, team, extended, view, seed)| RunCase {
            level_seed,
            team,
            extended,
            view,
            seed,
        })
}

/// Single claim, exactly-once completion and lock hygiene hold on the audit
/// log, which replays to the final world and survives a CSV round trip.
/// Every credit happens while the door is truly open, and a lone agent only
/// credits oracle-reachable tasks. Points never go down.
pub fn run_invariants(case: &RunCase) -> Result<(), TestCaseError> {
    let level = Arc::new(tiny_level(case.level_seed));
    let mut c = RunConfig::new(
        LevelSource::Given(level.clone()),
        case.team.iter().map(|h| AgentSpec::new(*h)).collect(),
    );
    c.sync_mode = if case.extended {
        SyncMode::Extended
    } else {
        SyncMode::Basic
    };
    c.view_distance = case.view;
    c.global_budget = 1_500;
    c.seed = case.seed;
    let trace = run_traced(&c).map_err(|e| TestCaseError::fail(e.to_string()))?;
    check_audit(&trace.audit).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let completes = trace
        .audit
        .iter()
        .filter(|e| matches!(e, AuditEvent::Complete { .. }))
        .count();
    prop_assert_eq!(completes, trace.report.per_task.len());

    let replayed = replay_audit(level.clone(), case.team.len(), &trace.audit)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(replayed.agent_positions(), trace.world.agent_positions());
    prop_assert_eq!(replayed.door_states(), trace.world.door_states());
    for pair in trace.report.points_timeline.windows(2) {
        prop_assert!(pair[0].1 <= pair[1].1);
    }
    let parsed = parse_audit_csv(&audit_csv(&trace.audit))
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&parsed, &trace.audit);

    for (i, e) in trace.audit.iter().enumerate() {
        if let AuditEvent::Complete { task, .. } = e {
            let before = replay_audit(level.clone(), case.team.len(), &trace.audit[..i])
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(
                before.is_open(level.find(task).unwrap()),
                "{} credited while closed",
                task
            );
        }
    }
    if case.team.len() > 1 {
        return Ok(());
    }
    let reach: BTreeSet<&str> = oracle_reachable_set_within(&level, case.view, DEFAULT_ORACLE_CAP)
        .map_err(|e| TestCaseError::fail(e.to_string()))?
        .into_iter()
        .map(|d| level.name(d))
        .collect();
    for task in trace.report.per_task.keys() {
        prop_assert!(
            reach.contains(task.as_str()),
            "{} credited but unreachable",
            task
        );
    }
    Ok(())
}

/// One scripted world step: a mover steps or presses, or a presser parked on
/// a button presses it.
#[derive(Clone, Debug)]
pub enum Act {
    Move(usize, Dir),
    Press(usize, usize),
    Park(usize),
}

#[derive(Clone, Debug)]
pub struct WorldCase {
    pub level_seed: u64,
    pub movers: usize,
    pub acts: Vec<Act>,
}

pub fn world_case() -> impl Strategy<Value = WorldCase> {
    let act = prop_oneof![
        3 => (0..3usize, 0..4usize).prop_map(|(a, d)| Act::Move(a, DIRS[d])),
        1 => (0..3usize, 0..8usize).prop_map(|(a, b)| Act::Press(a, b)),
        1 => (0..8usize).prop_map(Act::Park),
    ];
    (any::<u64>(), 1..4usize, prop::collection::vec(act, 1..120)).prop_map(
        |(level_seed, movers, acts)| WorldCase {
            level_seed,
            movers,
            acts,
        },
    )
}

/// Movers start on spawn points; one extra agent is parked on every button.
fn fuzz_world(level: &Arc<Level>, movers: usize) -> (WorldState, Vec<ObjId>) {
    let buttons: Vec<ObjId> = level.buttons().collect();
    let spawns = level.spawn_points();
    let mut pos: Vec<Pos> = (0..movers).map(|i| spawns[i % spawns.len()]).collect();
    pos.extend(buttons.iter().map(|b| level.object(*b).pos));
    (WorldState::with_positions(level.clone(), pos), buttons)
}

fn apply_act(
    w: &mut WorldState,
    act: &Act,
    movers: usize,
    buttons: &[ObjId],
) -> Result<(), TestCaseError> {
    let fail = |e: gamecoop::world::WorldError| TestCaseError::fail(e.to_string());
    match *act {
        Act::Move(a, dir) => {
            w.step_move(AgentId(a % movers), dir).map_err(fail)?;
        }
        Act::Press(a, b) => {
            w.interact(AgentId(a % movers), buttons[b % buttons.len()])
                .map_err(fail)?;
        }
        Act::Park(b) => {
            let i = b % buttons.len();
            w.interact(AgentId(movers + i), buttons[i]).map_err(fail)?;
        }
    }
    Ok(())
}

fn standing_ok(w: &WorldState) -> bool {
    let level = w.level();
    w.agent_positions().iter().all(|p| {
        level.cell(*p) == CellKind::Floor && level.door_at(*p).is_none_or(|d| w.is_open(d))
    })
}

/// Agents never stand on a wall or a closed door; pressing the same button
/// twice from the same spot restores every door; opening doors never hides a
/// cell; replaying the script gives the same trajectory.
pub fn world_invariants(case: &WorldCase) -> Result<(), TestCaseError> {
    let level = Arc::new(tiny_level(case.level_seed));
    let (mut w, buttons) = fuzz_world(&level, case.movers);
    let (mut twin, _) = fuzz_world(&level, case.movers);
    for act in &case.acts {
        apply_act(&mut w, act, case.movers, &buttons)?;
        apply_act(&mut twin, act, case.movers, &buttons)?;
        prop_assert!(standing_ok(&w), "agent on a blocked cell after {:?}", act);
        prop_assert_eq!(&w, &twin);

        let before = w.door_states();
        let mut probe = w.clone();
        let a = AgentId(case.movers);
        probe.interact(a, buttons[0]).unwrap();
        probe.interact(a, buttons[0]).unwrap();
        prop_assert_eq!(probe.door_states(), before.clone());

        // Press a button that only opens doors and compare what movers see.
        if let Some(i) = buttons
            .iter()
            .position(|b| level.connected_doors(*b).all(|d| !w.is_open(d)))
        {
            let mut opened = w.clone();
            opened
                .interact(AgentId(case.movers + i), buttons[i])
                .unwrap();
            for m in 0..case.movers {
                let seen = |s: &WorldState| -> BTreeSet<Pos> {
                    s.observe(AgentId(m), 5)
                        .unwrap()
                        .visible_cells
                        .into_iter()
                        .map(|(p, _)| p)
                        .collect()
                };
                prop_assert!(seen(&w).is_subset(&seen(&opened)));
            }
        }
    }
    Ok(())
}

/// Beliefs only grow: known cells are kept, sightings never get older, and
/// the frontier stays inside the known non-wall cells.
pub fn belief_monotone(case: &WorldCase) -> Result<(), TestCaseError> {
    let level = Arc::new(tiny_level(case.level_seed));
    let (mut w, buttons) = fuzz_world(&level, case.movers);
    let mut belief = AgentBelief::new(AgentId(0), &level);
    let mut rng = ChaCha8Rng::seed_from_u64(case.level_seed);
    for act in &case.acts {
        apply_act(&mut w, act, case.movers, &buttons)?;
        // Ticks jump around so stale observations arrive too.
        w.set_tick(rng.gen_range(0..50));
        let obs = w
            .observe(AgentId(rng.gen_range(0..case.movers)), rng.gen_range(1..7))
            .unwrap();
        let old = belief.clone();
        update_belief(&mut belief, &obs);
        for (p, view) in old.known_cells() {
            prop_assert_eq!(belief.cell(p), Some(view));
        }
        for (id, s) in old.last_seen() {
            let now = belief.sighting(*id).unwrap();
            prop_assert!((now.tick, now.seq) >= (s.tick, s.seq));
        }
        for p in belief.frontier() {
            prop_assert!(matches!(
                belief.cell(*p),
                Some(CellView::Floor) | Some(CellView::Door(_))
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MergeCase {
    pub world: WorldCase,
    pub picks: Vec<u8>,
    pub marks: Vec<(u8, u8, u8, bool)>,
}

pub fn merge_case() -> impl Strategy<Value = MergeCase> {
    (
        world_case(),
        prop::collection::vec(any::<u8>(), 1..60),
        prop::collection::vec((any::<u8>(), any::<u8>(), 0..3u8, any::<bool>()), 0..12),
    )
        .prop_map(|(world, picks, marks)| MergeCase {
            world,
            picks,
            marks,
        })
}

/// Three beliefs fed from different observations of one fuzzed world.
fn three_beliefs(case: &MergeCase) -> Result<[AgentBelief; 3], TestCaseError> {
    let level = Arc::new(tiny_level(case.world.level_seed));
    let (mut w, buttons) = fuzz_world(&level, case.world.movers);
    let mut out = [0, 1, 2].map(|i| AgentBelief::new(AgentId(i), &level));
    for (k, act) in case.world.acts.iter().enumerate() {
        apply_act(&mut w, act, case.world.movers, &buttons)?;
        w.set_tick(k as u64 / 3);
        let pick = case.picks[k % case.picks.len()];
        let who = pick as usize % case.world.movers;
        let obs = w.observe(AgentId(who), 1 + pick as u32 % 5).unwrap();
        update_belief(&mut out[pick as usize % 3], &obs);
    }
    let doors: Vec<ObjId> = level.doors().collect();
    for &(b, t, e, new_round) in &case.marks {
        let target = doors[t as usize % doors.len()];
        let enabler = buttons[e as usize % buttons.len()];
        let tried = out[b as usize % 3].tried_mut();
        if new_round {
            tried.start_new_round(target);
        }
        tried.mark(target, enabler);
    }
    Ok(out)
}

/// Merge is commutative, idempotent, associative and absorbs both inputs.
pub fn merge_laws(case: &MergeCase) -> Result<(), TestCaseError> {
    let [a, b, c] = three_beliefs(case)?;
    let ab = merge_beliefs(&a, &b);
    prop_assert!(ab.same_knowledge(&merge_beliefs(&b, &a)));
    prop_assert!(merge_beliefs(&a, &a).same_knowledge(&a));
    prop_assert!(merge_beliefs(&ab, &a).same_knowledge(&ab));
    let left = merge_beliefs(&ab, &c);
    let right = merge_beliefs(&a, &merge_beliefs(&b, &c));
    prop_assert!(left.same_knowledge(&right));
    for (p, v) in a.known_cells().chain(b.known_cells()) {
        prop_assert_eq!(ab.cell(p), Some(v));
    }
    Ok(())
}

/// Random maze with a complete belief, plus two endpoints.
#[derive(Clone, Debug)]
pub struct PathCase {
    pub seed: u64,
    pub from: (u8, u8),
    pub to: (u8, u8),
}

pub fn path_case() -> impl Strategy<Value = PathCase> {
    (any::<u64>(), any::<(u8, u8)>(), any::<(u8, u8)>()).prop_map(|(seed, from, to)| PathCase {
        seed,
        from,
        to,
    })
}

/// Shortest believed path equals the BFS distance over truly open cells, and
/// only crosses open cells.
pub fn path_matches_bfs(case: &PathCase) -> Result<(), TestCaseError> {
    let level = Arc::new(tiny_level(case.seed));
    let (mut w, buttons) = fuzz_world(&level, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    for (i, b) in buttons.iter().enumerate() {
        if rng.gen_bool(0.5) {
            w.interact(AgentId(1 + i), *b).unwrap();
        }
    }
    let mut belief = AgentBelief::new(AgentId(0), &level);
    for m in 0..=buttons.len() {
        update_belief(&mut belief, &w.observe(AgentId(m), 30).unwrap());
    }
    let cell = |(x, y): (u8, u8)| {
        Pos::new(
            x as i32 % level.width() as i32,
            y as i32 % level.height() as i32,
        )
    };
    let (from, to) = (cell(case.from), cell(case.to));
    if !w.passable(from) || !belief.is_known(from) {
        return Ok(());
    }
    let open = |p: Pos| belief.traversable(p);
    let mut dist = BTreeMap::from([(from, 0usize)]);
    let mut queue = VecDeque::from([from]);
    while let Some(p) = queue.pop_front() {
        for n in p.neighbors() {
            if open(n) && !dist.contains_key(&n) {
                dist.insert(n, dist[&p] + 1);
                queue.push_back(n);
            }
        }
    }
    match find_path(&belief, from, to) {
        Ok(path) => {
            prop_assert_eq!(Some(&(path.len() - 1)), dist.get(&to));
            prop_assert_eq!(path[0], from);
            for pair in path.windows(2) {
                prop_assert_eq!(pair[0].manhattan(pair[1]), 1);
                prop_assert!(w.passable(pair[1]));
            }
        }
        Err(_) => prop_assert!(!dist.contains_key(&to)),
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct BoardCase {
    pub level_seed: u64,
    pub ops: Vec<(u8, u8, u8)>,
}

pub fn board_case() -> impl Strategy<Value = BoardCase> {
    (
        any::<u64>(),
        prop::collection::vec(any::<(u8, u8, u8)>(), 1..80),
    )
        .prop_map(|(level_seed, ops)| BoardCase { level_seed, ops })
}

/// Arbitrary interleavings of blackboard operations from three agents keep
/// toDo, claims and done disjoint, never grant a second claim or lock, and
/// leave an audit log that passes the checker once holders unlock.
pub fn board_invariants(case: &BoardCase) -> Result<(), TestCaseError> {
    let level = tiny_level(case.level_seed);
    let tasks = TestingTask::for_level(&level, 100);
    let n = tasks.len();
    let mut bb = Blackboard::new(&level, tasks, 3, SyncMode::Basic);
    let buttons: Vec<ObjId> = level.buttons().collect();
    for (tick, &(op, who, what)) in case.ops.iter().enumerate() {
        bb.set_tick(tick as u64);
        let agent = AgentId(who as usize % 3);
        let task = TaskId(what as usize % n);
        let button = buttons[what as usize % buttons.len()];
        match op % 7 {
            0 => {
                let pos = level.object(level.doors().nth(task.0).unwrap()).pos;
                let open = if who % 5 == 0 {
                    BTreeSet::from([task])
                } else {
                    BTreeSet::new()
                };
                bb.publish_discovered(&[(task, pos)], agent, &open).unwrap();
            }
            1 => {
                let free = bb.to_do().contains(&task);
                let g = bb.claim(task, agent).unwrap();
                prop_assert_eq!(g == Grant::Granted, free);
            }
            2 => {
                let _ = bb.complete(task, agent);
            }
            3 => {
                let _ = bb.release(task, agent);
            }
            4 => {
                let free = !bb.locks().contains_key(&button);
                prop_assert_eq!(bb.lock(button, agent).unwrap() == Grant::Granted, free);
            }
            5 => {
                let _ = bb.unlock(button, agent);
            }
            _ => {
                let _ = bb.complete_observed(task, agent);
            }
        }
        let todo = bb.to_do();
        let claimed: BTreeSet<TaskId> = bb.claims().keys().copied().collect();
        let done: BTreeSet<TaskId> = bb.done().keys().copied().collect();
        prop_assert!(
            todo.is_disjoint(&claimed) && todo.is_disjoint(&done) && claimed.is_disjoint(&done)
        );
    }
    let held: Vec<(ObjId, AgentId)> = bb.locks().iter().map(|(o, a)| (*o, *a)).collect();
    for (o, a) in held {
        bb.unlock(o, a).unwrap();
    }
    check_audit(bb.audit_log()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let completes = bb
        .audit_log()
        .iter()
        .filter(|e| matches!(e, AuditEvent::Complete { .. }))
        .count();
    prop_assert_eq!(completes, bb.done().len());
    Ok(())
}
