//! Agent beliefs, path planning over believed-traversable cells, frontier
//! exploration targets and the belief join used by extended synchronization.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use crate::world::{AgentId, CellView, Level, ObjId, ObjectSnapshot, Observation, Pos};

/// When an exploring agent stops exploring. The target cell is always the
/// nearest reachable frontier; only the stop rule differs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExplorePolicy {
    /// Stop as soon as a new task has been discovered.
    Gradual,
    /// Stop only when no reachable frontier is left.
    Aggressive,
    /// Stop after this many exploration ticks.
    Budget(u32),
}

/// Latest known state of an object and when it was observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sighting {
    pub snapshot: ObjectSnapshot,
    pub tick: u64,
    pub seq: u64,
}

impl Sighting {
    fn key(&self) -> (u64, u64, bool) {
        (
            self.tick,
            self.seq,
            self.snapshot.door_open().unwrap_or(false),
        )
    }
}

/// Enablers tried per target. Marks are grouped in rounds: once every
/// candidate for a target has been tried without success a new round starts
/// and earlier marks are dropped. Ordered by `(round, marks)` per target, a
/// later round wins a join and equal rounds union, so beliefs form a join
/// semilattice.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TriedMarks {
    by_target: BTreeMap<ObjId, (u32, BTreeSet<ObjId>)>,
}

impl TriedMarks {
    pub fn round(&self, target: ObjId) -> u32 {
        self.by_target.get(&target).map_or(0, |(r, _)| *r)
    }

    /// Tried in the current round for `target`.
    pub fn is_marked(&self, target: ObjId, enabler: ObjId) -> bool {
        self.by_target
            .get(&target)
            .is_some_and(|(_, m)| m.contains(&enabler))
    }

    pub fn mark(&mut self, target: ObjId, enabler: ObjId) {
        self.by_target.entry(target).or_default().1.insert(enabler);
    }

    pub fn start_new_round(&mut self, target: ObjId) {
        let entry = self.by_target.entry(target).or_default();
        entry.0 += 1;
        entry.1.clear();
    }

    /// Enablers tried for `target` in its current round.
    pub fn current(&self, target: ObjId) -> impl Iterator<Item = ObjId> + '_ {
        self.by_target
            .get(&target)
            .into_iter()
            .flat_map(|(_, m)| m.iter().copied())
    }

    pub fn join(&mut self, other: &TriedMarks) {
        for (t, (r, marks)) in &other.by_target {
            let mine = self.by_target.entry(*t).or_default();
            if *r > mine.0 {
                *mine = (*r, marks.clone());
            } else if *r == mine.0 {
                mine.1.extend(marks.iter().copied());
            }
        }
    }
}

/// What one agent believes about the level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentBelief {
    pub agent: AgentId,
    width: usize,
    height: usize,
    known: Vec<Option<CellView>>,
    known_count: usize,
    last_seen: BTreeMap<ObjId, Sighting>,
    tried: TriedMarks,
    frontier: BTreeSet<Pos>,
}

impl AgentBelief {
    pub fn new(agent: AgentId, level: &Level) -> Self {
        AgentBelief {
            agent,
            width: level.width(),
            height: level.height(),
            known: vec![None; level.width() * level.height()],
            known_count: 0,
            last_seen: BTreeMap::new(),
            tried: TriedMarks::default(),
            frontier: BTreeSet::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    fn idx(&self, p: Pos) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    fn pos(&self, i: usize) -> Pos {
        Pos::new((i % self.width) as i32, (i / self.width) as i32)
    }

    pub fn cell(&self, p: Pos) -> Option<CellView> {
        if self.in_bounds(p) {
            self.known[self.idx(p)]
        } else {
            None
        }
    }

    pub fn is_known(&self, p: Pos) -> bool {
        self.cell(p).is_some()
    }

    pub fn known_count(&self) -> usize {
        self.known_count
    }

    /// Known cells in `(y, x)` order.
    pub fn known_cells(&self) -> impl Iterator<Item = (Pos, CellView)> + '_ {
        self.known
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (self.pos(i), c)))
    }

    pub fn last_seen(&self) -> &BTreeMap<ObjId, Sighting> {
        &self.last_seen
    }

    pub fn sighting(&self, obj: ObjId) -> Option<&Sighting> {
        self.last_seen.get(&obj)
    }

    pub fn tried(&self) -> &TriedMarks {
        &self.tried
    }

    pub fn tried_mut(&mut self) -> &mut TriedMarks {
        &mut self.tried
    }

    pub fn frontier(&self) -> &BTreeSet<Pos> {
        &self.frontier
    }

    /// Floor, or a door last seen open.
    pub fn traversable(&self, p: Pos) -> bool {
        match self.cell(p) {
            Some(CellView::Floor) => true,
            Some(CellView::Door(d)) => self.door_open(d) == Some(true),
            _ => false,
        }
    }

    /// Last known open flag of a door.
    pub fn door_open(&self, door: ObjId) -> Option<bool> {
        self.last_seen
            .get(&door)
            .and_then(|s| s.snapshot.door_open())
    }

    fn has_unknown_neighbor(&self, p: Pos) -> bool {
        p.neighbors()
            .any(|n| self.in_bounds(n) && self.known[self.idx(n)].is_none())
    }

    fn learn_cell(&mut self, p: Pos, view: CellView) {
        if !self.in_bounds(p) {
            return;
        }
        let i = self.idx(p);
        if self.known[i].is_some() {
            return;
        }
        self.known[i] = Some(view);
        self.known_count += 1;
        if view != CellView::Wall && self.has_unknown_neighbor(p) {
            self.frontier.insert(p);
        }
        for n in p.neighbors() {
            if self.frontier.contains(&n) && !self.has_unknown_neighbor(n) {
                self.frontier.remove(&n);
            }
        }
    }

    fn learn_object(&mut self, id: ObjId, sighting: Sighting) {
        match self.last_seen.get(&id) {
            Some(old) if old.key() >= sighting.key() => {}
            _ => {
                self.last_seen.insert(id, sighting);
            }
        }
    }

    /// True when both beliefs hold the same facts, whoever owns them.
    pub fn same_knowledge(&self, other: &AgentBelief) -> bool {
        self.known == other.known && self.last_seen == other.last_seen && self.tried == other.tried
    }
}

/// Folds an observation into a belief. Cells are only ever added; object
/// states are replaced only by sightings at least as recent.
pub fn update_belief(belief: &mut AgentBelief, obs: &Observation) {
    for &(p, view) in &obs.visible_cells {
        belief.learn_cell(p, view);
    }
    for &(id, snapshot) in &obs.visible_objects {
        belief.learn_object(
            id,
            Sighting {
                snapshot,
                tick: obs.tick,
                seq: obs.seq,
            },
        );
    }
}

/// Join of two beliefs. The result keeps the owner of `mine`.
pub fn merge_beliefs(mine: &AgentBelief, theirs: &AgentBelief) -> AgentBelief {
    let mut out = mine.clone();
    absorb(&mut out, theirs);
    out
}

/// In-place form of [`merge_beliefs`].
pub fn absorb(mine: &mut AgentBelief, theirs: &AgentBelief) {
    for (i, c) in theirs.known.iter().enumerate() {
        if let Some(view) = c {
            let p = theirs.pos(i);
            mine.learn_cell(p, *view);
        }
    }
    for (id, s) in &theirs.last_seen {
        mine.learn_object(*id, *s);
    }
    mine.tried.join(&theirs.tried);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathError {
    /// The destination cell is not in the belief at all.
    UnknownTarget,
    /// Known, but not connected to the start through traversable cells.
    Unreachable,
}

/// Shortest 4-connected path over believed-traversable cells, both ends
/// included. A* with the Manhattan heuristic; equal-cost frontier entries are
/// expanded in `(y, x)` order so results are deterministic.
pub fn find_path(belief: &AgentBelief, from: Pos, to: Pos) -> Result<Vec<Pos>, PathError> {
    if !belief.is_known(to) {
        return Err(PathError::UnknownTarget);
    }
    if from == to {
        return Ok(vec![from]);
    }
    if !belief.traversable(to) || !belief.in_bounds(from) {
        return Err(PathError::Unreachable);
    }
    let n = belief.width * belief.height;
    let mut g = vec![u32::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut open = BinaryHeap::new();
    let start = belief.idx(from);
    g[start] = 0;
    open.push(Reverse((from.manhattan(to), 0u32, from)));
    while let Some(Reverse((_, cost, p))) = open.pop() {
        let pi = belief.idx(p);
        if cost > g[pi] {
            continue;
        }
        if p == to {
            let mut path = vec![p];
            let mut cur = pi;
            while cur != start {
                cur = parent[cur];
                path.push(belief.pos(cur));
            }
            path.reverse();
            return Ok(path);
        }
        for q in p.neighbors() {
            if !belief.traversable(q) {
                continue;
            }
            let qi = belief.idx(q);
            let nc = cost + 1;
            if nc < g[qi] {
                g[qi] = nc;
                parent[qi] = pi;
                open.push(Reverse((nc + q.manhattan(to), nc, q)));
            }
        }
    }
    Err(PathError::Unreachable)
}

/// Breadth-first distances from `from` over believed-traversable cells.
#[derive(Clone, Debug)]
pub struct DistanceMap {
    width: usize,
    dist: Vec<u32>,
    parent: Vec<u32>,
    origin: Pos,
}

impl DistanceMap {
    pub fn new(belief: &AgentBelief, from: Pos) -> Self {
        Self::via(belief, from, |p| belief.traversable(p))
    }

    /// Distances over the cells `pass` admits.
    pub fn via(belief: &AgentBelief, from: Pos, pass: impl Fn(Pos) -> bool) -> Self {
        let n = belief.width * belief.height;
        let mut dist = vec![u32::MAX; n];
        let mut parent = vec![u32::MAX; n];
        if belief.in_bounds(from) {
            let s = belief.idx(from);
            dist[s] = 0;
            let mut queue = VecDeque::from([from]);
            while let Some(p) = queue.pop_front() {
                let pi = belief.idx(p);
                for q in p.neighbors() {
                    if belief.in_bounds(q) && pass(q) {
                        let qi = belief.idx(q);
                        if dist[qi] == u32::MAX {
                            dist[qi] = dist[pi] + 1;
                            parent[qi] = pi as u32;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        DistanceMap {
            width: belief.width,
            dist,
            parent,
            origin: from,
        }
    }

    pub fn origin(&self) -> Pos {
        self.origin
    }

    fn index(&self, p: Pos) -> Option<usize> {
        if p.x < 0 || p.y < 0 || p.x as usize >= self.width {
            return None;
        }
        let i = p.y as usize * self.width + p.x as usize;
        (i < self.dist.len()).then_some(i)
    }

    pub fn get(&self, p: Pos) -> Option<u32> {
        self.index(p)
            .map(|i| self.dist[i])
            .filter(|d| *d != u32::MAX)
    }

    /// Path from the origin to `to` along the BFS tree.
    pub fn path_to(&self, to: Pos) -> Option<Vec<Pos>> {
        self.get(to)?;
        let mut path = vec![to];
        let mut cur = self.index(to)?;
        while self.parent[cur] != u32::MAX {
            cur = self.parent[cur] as usize;
            path.push(Pos::new(
                (cur % self.width) as i32,
                (cur / self.width) as i32,
            ));
        }
        path.reverse();
        Some(path)
    }

    /// Reachable cell of `cells` with the smallest `(distance, position)`.
    pub fn nearest<I: IntoIterator<Item = Pos>>(&self, cells: I) -> Option<(Pos, u32)> {
        cells
            .into_iter()
            .filter_map(|p| self.get(p).map(|d| (d, p)))
            .min()
            .map(|(d, p)| (p, d))
    }
}

/// Breadth-first search that stops after the first distance layer containing a
/// goal cell. Returns the path to the smallest `(y, x)` goal of that layer.
pub fn bfs_nearest(
    belief: &AgentBelief,
    from: Pos,
    goal: impl Fn(Pos) -> bool,
) -> Option<Vec<Pos>> {
    bfs_nearest_via(belief, from, |p| belief.traversable(p), goal)
}

/// [`bfs_nearest`] over the cells `pass` admits instead of the believed
/// traversable ones.
pub fn bfs_nearest_via(
    belief: &AgentBelief,
    from: Pos,
    pass: impl Fn(Pos) -> bool,
    goal: impl Fn(Pos) -> bool,
) -> Option<Vec<Pos>> {
    if !belief.in_bounds(from) {
        return None;
    }
    if goal(from) {
        return Some(vec![from]);
    }
    let n = belief.width * belief.height;
    let mut parent = vec![u32::MAX; n];
    let start = belief.idx(from);
    parent[start] = start as u32;
    let mut layer = vec![from];
    while !layer.is_empty() {
        let mut next = Vec::new();
        let mut found: Option<Pos> = None;
        for p in &layer {
            let pi = belief.idx(*p);
            for q in p.neighbors() {
                if !belief.in_bounds(q) || !pass(q) {
                    continue;
                }
                let qi = belief.idx(q);
                if parent[qi] != u32::MAX {
                    continue;
                }
                parent[qi] = pi as u32;
                if goal(q) && found.is_none_or(|f| q < f) {
                    found = Some(q);
                }
                next.push(q);
            }
        }
        if let Some(f) = found {
            let mut path = vec![f];
            let mut cur = belief.idx(f);
            while cur != start {
                cur = parent[cur] as usize;
                path.push(belief.pos(cur));
            }
            path.reverse();
            return Some(path);
        }
        layer = next;
    }
    None
}

/// Nearest reachable frontier cell, ties by `(y, x)`. The policy is accepted for
/// interface symmetry; it only affects the caller's stop rule.
pub fn next_exploration_target(
    belief: &AgentBelief,
    from: Pos,
    _policy: ExplorePolicy,
) -> Option<Pos> {
    bfs_nearest(belief, from, |p| belief.frontier.contains(&p))
        .and_then(|path| path.last().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{CellKind, LevelDraft, WorldState};
    use std::sync::Arc;

    fn corridor() -> Arc<Level> {
        let mut d = LevelDraft::new(8, 3, CellKind::Wall);
        for x in 1..7 {
            d.set(Pos::new(x, 1), CellKind::Floor);
        }
        d.spawn_points.push(Pos::new(1, 1));
        Arc::new(d.build().unwrap())
    }

    #[test]
    fn corridor_path_has_six_positions() {
        let level = corridor();
        let w = WorldState::new(level.clone(), 1).unwrap();
        let mut b = AgentBelief::new(AgentId(0), &level);
        update_belief(&mut b, &w.observe(AgentId(0), 10).unwrap());
        let path = find_path(&b, Pos::new(1, 1), Pos::new(6, 1)).unwrap();
        assert_eq!(path.len(), 6);
        assert_eq!(
            find_path(&b, Pos::new(1, 1), Pos::new(0, 0)),
            Err(PathError::Unreachable)
        );
    }

    #[test]
    fn unknown_target_is_distinct() {
        let level = corridor();
        let w = WorldState::new(level.clone(), 1).unwrap();
        let mut b = AgentBelief::new(AgentId(0), &level);
        update_belief(&mut b, &w.observe(AgentId(0), 2).unwrap());
        assert_eq!(
            find_path(&b, Pos::new(1, 1), Pos::new(6, 1)),
            Err(PathError::UnknownTarget)
        );
        assert_eq!(
            next_exploration_target(&b, Pos::new(1, 1), ExplorePolicy::Gradual),
            Some(Pos::new(3, 1))
        );
    }

    #[test]
    fn fully_known_level_has_no_target() {
        let level = corridor();
        let mut b = AgentBelief::new(AgentId(0), &level);
        for x in 1..7 {
            let w = WorldState::with_positions(level.clone(), vec![Pos::new(x, 1)]);
            update_belief(&mut b, &w.observe(AgentId(0), 10).unwrap());
        }
        assert!(b.frontier().is_empty());
        assert_eq!(
            next_exploration_target(&b, Pos::new(1, 1), ExplorePolicy::Aggressive),
            None
        );
    }

    #[test]
    fn stale_sighting_does_not_override() {
        let level = corridor();
        let mut b = AgentBelief::new(AgentId(0), &level);
        let id = ObjId(0);
        let snap = |open| ObjectSnapshot {
            pos: Pos::new(3, 1),
            state: crate::world::ObjectState::Door { open },
        };
        b.learn_object(
            id,
            Sighting {
                snapshot: snap(true),
                tick: 9,
                seq: 0,
            },
        );
        b.learn_object(
            id,
            Sighting {
                snapshot: snap(false),
                tick: 5,
                seq: 0,
            },
        );
        assert_eq!(b.door_open(id), Some(true));

        let mut other = AgentBelief::new(AgentId(1), &level);
        other.learn_object(
            id,
            Sighting {
                snapshot: snap(false),
                tick: 5,
                seq: 0,
            },
        );
        assert_eq!(merge_beliefs(&other, &b).door_open(id), Some(true));
        assert_eq!(merge_beliefs(&b, &other).door_open(id), Some(true));
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let level = corridor();
        let w = WorldState::new(level.clone(), 1).unwrap();
        let mut b = AgentBelief::new(AgentId(0), &level);
        update_belief(&mut b, &w.observe(AgentId(0), 3).unwrap());
        let empty = AgentBelief::new(AgentId(1), &level);
        assert_eq!(merge_beliefs(&b, &empty), b);
        assert!(merge_beliefs(&empty, &b).same_knowledge(&b));
    }

    #[test]
    fn tried_marks_rounds() {
        let mut t = TriedMarks::default();
        t.mark(ObjId(1), ObjId(2));
        assert!(t.is_marked(ObjId(1), ObjId(2)));
        t.start_new_round(ObjId(1));
        assert!(!t.is_marked(ObjId(1), ObjId(2)));
        assert_eq!(t.current(ObjId(1)).count(), 0);
        assert_eq!(t.round(ObjId(1)), 1);
    }
}
