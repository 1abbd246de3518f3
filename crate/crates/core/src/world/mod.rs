//! Game structure `(agents, objects)`: level geometry, the object roster with its
//! hidden button→door wiring, the mutable truth state, and the three primitive
//! transitions agents can cause (move, interact, observe).

mod format;
mod gen;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use format::{load_level, serialize_level};
pub use gen::{
    apply_chained_connections, apply_distant_connections, apply_multi_connections,
    generate_basic_level, hall_cells, GenError, HIGH_VALUE_DOORS,
};

/// Grid coordinate. `x` grows rightward, `y` downward. Ordered by `(y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    pub fn step(self, dir: Dir) -> Pos {
        let (dx, dy) = dir.delta();
        Pos::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Pos) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn chebyshev(self, other: Pos) -> u32 {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    /// Squared Euclidean distance.
    pub fn dist2(self, other: Pos) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }

    pub fn neighbors(self) -> impl Iterator<Item = Pos> {
        Dir::ALL.into_iter().map(move |d| self.step(d))
    }
}

impl Ord for Pos {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Pos {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    N,
    W,
    E,
    S,
}

impl Dir {
    /// Neighbor order that visits cells in lexicographic `(y, x)` order.
    pub const ALL: [Dir; 4] = [Dir::N, Dir::W, Dir::E, Dir::S];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, -1),
            Dir::S => (0, 1),
            Dir::E => (1, 0),
            Dir::W => (-1, 0),
        }
    }

    /// Direction of a unit step from `from` to `to`, if they are 4-adjacent.
    pub fn between(from: Pos, to: Pos) -> Option<Dir> {
        Dir::ALL.into_iter().find(|d| from.step(*d) == to)
    }

    pub fn as_char(self) -> char {
        match self {
            Dir::N => 'N',
            Dir::S => 'S',
            Dir::E => 'E',
            Dir::W => 'W',
        }
    }

    pub fn from_char(c: char) -> Option<Dir> {
        match c {
            'N' => Some(Dir::N),
            'S' => Some(Dir::S),
            'E' => Some(Dir::E),
            'W' => Some(Dir::W),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Wall,
    Floor,
}

/// Index of an object inside its [`Level`]. Objects are stored sorted by name,
/// so comparing ids compares names lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjId(pub u16);

impl ObjId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Door { points: u32 },
    Button,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GameObject {
    pub name: String,
    pub kind: ObjectKind,
    pub pos: Pos,
}

impl GameObject {
    pub fn door(name: impl Into<String>, pos: Pos, points: u32) -> Self {
        GameObject {
            name: name.into(),
            kind: ObjectKind::Door { points },
            pos,
        }
    }

    pub fn button(name: impl Into<String>, pos: Pos) -> Self {
        GameObject {
            name: name.into(),
            kind: ObjectKind::Button,
            pos,
        }
    }

    pub fn is_door(&self) -> bool {
        matches!(self.kind, ObjectKind::Door { .. })
    }

    pub fn is_button(&self) -> bool {
        matches!(self.kind, ObjectKind::Button)
    }

    pub fn points(&self) -> u32 {
        match self.kind {
            ObjectKind::Door { points } => points,
            ObjectKind::Button => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LevelError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("level dimensions must be positive and match the grid")]
    BadDimensions,
    #[error("object {0} lies outside the grid")]
    OutOfBounds(String),
    #[error("object {0} is placed on a wall cell")]
    ObjectOnWall(String),
    #[error("duplicate object id {0}")]
    DuplicateId(String),
    #[error("objects {0} and {1} share a position")]
    SharedPosition(String, String),
    #[error("spawn point {0} is not a free floor cell")]
    BadSpawn(Pos),
    #[error("spawn point {0} coincides with a door")]
    SpawnOnDoor(Pos),
    #[error("unknown button id {0}")]
    UnknownButton(String),
    #[error("unknown door id {0}")]
    UnknownDoor(String),
}

impl LevelError {
    /// Stable machine-readable code, one per error kind.
    pub fn code(&self) -> &'static str {
        match self {
            LevelError::Syntax { .. } => "syntax",
            LevelError::BadDimensions => "bad-dimensions",
            LevelError::OutOfBounds(_) => "out-of-bounds",
            LevelError::ObjectOnWall(_) => "object-on-wall",
            LevelError::DuplicateId(_) => "duplicate-id",
            LevelError::SharedPosition(..) => "shared-position",
            LevelError::BadSpawn(_) => "bad-spawn",
            LevelError::SpawnOnDoor(_) => "spawn-on-door",
            LevelError::UnknownButton(_) => "unknown-button",
            LevelError::UnknownDoor(_) => "unknown-door",
        }
    }
}

/// Unvalidated level contents, addressed by object name. Used by the parser and
/// the generators; [`LevelDraft::build`] checks every structural invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelDraft {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellKind>,
    pub objects: Vec<GameObject>,
    /// `(button, door)` pairs.
    pub connections: Vec<(String, String)>,
    pub spawn_points: Vec<Pos>,
}

impl LevelDraft {
    pub fn new(width: usize, height: usize, fill: CellKind) -> Self {
        LevelDraft {
            width,
            height,
            cells: vec![fill; width * height],
            objects: Vec::new(),
            connections: Vec::new(),
            spawn_points: Vec::new(),
        }
    }

    pub fn set(&mut self, p: Pos, kind: CellKind) {
        let i = p.y as usize * self.width + p.x as usize;
        self.cells[i] = kind;
    }

    pub fn get(&self, p: Pos) -> CellKind {
        if p.x < 0 || p.y < 0 || p.x as usize >= self.width || p.y as usize >= self.height {
            return CellKind::Wall;
        }
        self.cells[p.y as usize * self.width + p.x as usize]
    }

    pub fn object_mut(&mut self, name: &str) -> Option<&mut GameObject> {
        self.objects.iter_mut().find(|o| o.name == name)
    }

    pub fn build(self) -> Result<Level, LevelError> {
        let LevelDraft {
            width,
            height,
            cells,
            mut objects,
            connections,
            spawn_points,
        } = self;
        if width == 0 || height == 0 || cells.len() != width * height {
            return Err(LevelError::BadDimensions);
        }
        objects.sort_by(|a, b| a.name.cmp(&b.name));
        for pair in objects.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(LevelError::DuplicateId(pair[0].name.clone()));
            }
        }
        let in_bounds =
            |p: Pos| p.x >= 0 && p.y >= 0 && (p.x as usize) < width && (p.y as usize) < height;
        let mut object_at: Vec<Option<ObjId>> = vec![None; width * height];
        for (i, o) in objects.iter().enumerate() {
            if !in_bounds(o.pos) {
                return Err(LevelError::OutOfBounds(o.name.clone()));
            }
            let ci = o.pos.y as usize * width + o.pos.x as usize;
            if cells[ci] != CellKind::Floor {
                return Err(LevelError::ObjectOnWall(o.name.clone()));
            }
            if let Some(other) = object_at[ci] {
                return Err(LevelError::SharedPosition(
                    objects[other.index()].name.clone(),
                    o.name.clone(),
                ));
            }
            object_at[ci] = Some(ObjId(i as u16));
        }
        for &sp in &spawn_points {
            if !in_bounds(sp) || cells[sp.y as usize * width + sp.x as usize] != CellKind::Floor {
                return Err(LevelError::BadSpawn(sp));
            }
            if let Some(id) = object_at[sp.y as usize * width + sp.x as usize] {
                if objects[id.index()].is_door() {
                    return Err(LevelError::SpawnOnDoor(sp));
                }
            }
        }
        let lookup = |name: &str| {
            objects
                .binary_search_by(|o| o.name.as_str().cmp(name))
                .ok()
                .map(|i| ObjId(i as u16))
        };
        let mut wiring: BTreeMap<ObjId, BTreeSet<ObjId>> = BTreeMap::new();
        for (button, door) in &connections {
            let b = lookup(button)
                .filter(|b| objects[b.index()].is_button())
                .ok_or_else(|| LevelError::UnknownButton(button.clone()))?;
            let d = lookup(door)
                .filter(|d| objects[d.index()].is_door())
                .ok_or_else(|| LevelError::UnknownDoor(door.clone()))?;
            wiring.entry(b).or_default().insert(d);
        }
        Ok(Level {
            width,
            height,
            cells,
            objects,
            connections: wiring,
            spawn_points,
            object_at,
        })
    }
}

/// Immutable map geometry, object roster, and the hidden connection relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    objects: Vec<GameObject>,
    connections: BTreeMap<ObjId, BTreeSet<ObjId>>,
    spawn_points: Vec<Pos>,
    object_at: Vec<Option<ObjId>>,
}

impl Level {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn index(&self, p: Pos) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        Pos::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Cell kind; anything outside the grid reads as wall.
    pub fn cell(&self, p: Pos) -> CellKind {
        if self.in_bounds(p) {
            self.cells[self.index(p)]
        } else {
            CellKind::Wall
        }
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn objects(&self) -> &[GameObject] {
        &self.objects
    }

    pub fn object(&self, id: ObjId) -> &GameObject {
        &self.objects[id.index()]
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ObjId> + '_ {
        (0..self.objects.len()).map(|i| ObjId(i as u16))
    }

    pub fn find(&self, name: &str) -> Option<ObjId> {
        self.objects
            .binary_search_by(|o| o.name.as_str().cmp(name))
            .ok()
            .map(|i| ObjId(i as u16))
    }

    pub fn name(&self, id: ObjId) -> &str {
        &self.objects[id.index()].name
    }

    pub fn object_at(&self, p: Pos) -> Option<ObjId> {
        if self.in_bounds(p) {
            self.object_at[self.index(p)]
        } else {
            None
        }
    }

    pub fn door_at(&self, p: Pos) -> Option<ObjId> {
        self.object_at(p).filter(|id| self.object(*id).is_door())
    }

    pub fn doors(&self) -> impl Iterator<Item = ObjId> + '_ {
        self.object_ids().filter(|id| self.object(*id).is_door())
    }

    pub fn buttons(&self) -> impl Iterator<Item = ObjId> + '_ {
        self.object_ids().filter(|id| self.object(*id).is_button())
    }

    pub fn connections(&self) -> &BTreeMap<ObjId, BTreeSet<ObjId>> {
        &self.connections
    }

    /// Doors toggled by `button` (empty for unconnected buttons and for doors).
    pub fn connected_doors(&self, button: ObjId) -> impl Iterator<Item = ObjId> + '_ {
        self.connections.get(&button).into_iter().flatten().copied()
    }

    /// Buttons wired to `door`.
    pub fn buttons_of(&self, door: ObjId) -> Vec<ObjId> {
        self.connections
            .iter()
            .filter(|(_, ds)| ds.contains(&door))
            .map(|(b, _)| *b)
            .collect()
    }

    pub fn spawn_points(&self) -> &[Pos] {
        &self.spawn_points
    }

    pub fn total_points(&self) -> u32 {
        self.objects.iter().map(|o| o.points()).sum()
    }

    pub fn floor_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == CellKind::Floor).count()
    }

    /// Back to an editable, name-addressed form.
    pub fn to_draft(&self) -> LevelDraft {
        let mut connections = Vec::new();
        for (b, ds) in &self.connections {
            for d in ds {
                connections.push((self.name(*b).to_string(), self.name(*d).to_string()));
            }
        }
        LevelDraft {
            width: self.width,
            height: self.height,
            cells: self.cells.clone(),
            objects: self.objects.clone(),
            connections,
            spawn_points: self.spawn_points.clone(),
        }
    }
}

/// What an agent perceives a cell to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellView {
    Wall,
    Floor,
    Door(ObjId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectState {
    Door { open: bool },
    Button,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ObjectSnapshot {
    pub pos: Pos,
    pub state: ObjectState,
}

impl ObjectSnapshot {
    pub fn door_open(&self) -> Option<bool> {
        match self.state {
            ObjectState::Door { open } => Some(open),
            ObjectState::Button => None,
        }
    }
}

/// What one agent sees at one instant. `seq` orders observations taken within
/// the same tick (it counts transitions applied to the world so far).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub observer: AgentId,
    pub tick: u64,
    pub seq: u64,
    pub visible_cells: Vec<(Pos, CellView)>,
    pub visible_objects: Vec<(ObjId, ObjectSnapshot)>,
    pub visible_agents: Vec<(AgentId, Pos)>,
}

impl Observation {
    pub fn stamp(&self) -> (u64, u64) {
        (self.tick, self.seq)
    }

    pub fn sees(&self, p: Pos) -> bool {
        self.visible_cells
            .binary_search_by(|(q, _)| q.cmp(&p))
            .is_ok()
    }

    pub fn object(&self, id: ObjId) -> Option<&ObjectSnapshot> {
        self.visible_objects
            .iter()
            .find(|(o, _)| *o == id)
            .map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown object index {0}")]
    UnknownObject(u16),
    #[error("object {0} is a door; doors are not directly interactable")]
    NotInteractable(String),
    #[error("level has no spawn points")]
    NoSpawnPoints,
    #[error("view distance must be at least 1")]
    BadViewDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveOutcome {
    Moved(Pos),
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InteractOutcome {
    /// Doors whose state flipped.
    Toggled(Vec<ObjId>),
    OutOfRange,
    /// Refused: this open door would close on an agent standing in it.
    Occupied(ObjId),
}

/// Mutable truth: door flags, agent positions, tick counter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldState {
    level: Arc<Level>,
    door_open: Vec<bool>,
    agent_pos: Vec<Pos>,
    tick: u64,
    transitions: u64,
}

impl WorldState {
    /// Places `agents` agents on the level's spawn points (cycling if there are
    /// more agents than spawn points). Every door starts closed.
    pub fn new(level: Arc<Level>, agents: usize) -> Result<Self, WorldError> {
        if level.spawn_points().is_empty() {
            return Err(WorldError::NoSpawnPoints);
        }
        let spawns = level.spawn_points();
        let positions = (0..agents).map(|i| spawns[i % spawns.len()]).collect();
        Ok(Self::with_positions(level, positions))
    }

    pub fn with_positions(level: Arc<Level>, agent_pos: Vec<Pos>) -> Self {
        let door_open = vec![false; level.objects().len()];
        WorldState {
            level,
            door_open,
            agent_pos,
            tick: 0,
            transitions: 0,
        }
    }

    pub fn level(&self) -> &Arc<Level> {
        &self.level
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn agent_count(&self) -> usize {
        self.agent_pos.len()
    }

    pub fn agent_pos(&self, agent: AgentId) -> Result<Pos, WorldError> {
        self.agent_pos
            .get(agent.0)
            .copied()
            .ok_or(WorldError::UnknownAgent(agent))
    }

    pub fn agent_positions(&self) -> &[Pos] {
        &self.agent_pos
    }

    pub fn is_open(&self, door: ObjId) -> bool {
        self.door_open.get(door.index()).copied().unwrap_or(false)
    }

    /// Open flags of every door, by door id.
    pub fn door_states(&self) -> BTreeMap<ObjId, bool> {
        self.level
            .doors()
            .map(|d| (d, self.door_open[d.index()]))
            .collect()
    }

    /// Floor cell that is not a closed door.
    pub fn passable(&self, p: Pos) -> bool {
        if self.level.cell(p) != CellKind::Floor {
            return false;
        }
        match self.level.door_at(p) {
            Some(d) => self.door_open[d.index()],
            None => true,
        }
    }

    pub fn step_move(&mut self, agent: AgentId, dir: Dir) -> Result<MoveOutcome, WorldError> {
        let from = self.agent_pos(agent)?;
        self.transitions += 1;
        let to = from.step(dir);
        if self.passable(to) {
            self.agent_pos[agent.0] = to;
            Ok(MoveOutcome::Moved(to))
        } else {
            Ok(MoveOutcome::Blocked)
        }
    }

    pub fn interact(&mut self, agent: AgentId, obj: ObjId) -> Result<InteractOutcome, WorldError> {
        let at = self.agent_pos(agent)?;
        let object = self
            .level
            .objects()
            .get(obj.index())
            .ok_or(WorldError::UnknownObject(obj.0))?;
        if object.is_door() {
            return Err(WorldError::NotInteractable(object.name.clone()));
        }
        self.transitions += 1;
        if at.chebyshev(object.pos) > 1 {
            return Ok(InteractOutcome::OutOfRange);
        }
        let doors: Vec<ObjId> = self.level.connected_doors(obj).collect();
        if let Some(d) = doors.iter().find(|d| {
            self.door_open[d.index()] && self.agent_pos.contains(&self.level.object(**d).pos)
        }) {
            return Ok(InteractOutcome::Occupied(*d));
        }
        for d in &doors {
            self.door_open[d.index()] = !self.door_open[d.index()];
        }
        Ok(InteractOutcome::Toggled(doors))
    }

    /// Cells within Euclidean `view_distance` whose Bresenham line from the
    /// observer crosses no wall and no closed door. The end cell itself is
    /// visible even when it is opaque.
    pub fn observe(&self, agent: AgentId, view_distance: u32) -> Result<Observation, WorldError> {
        if view_distance == 0 {
            return Err(WorldError::BadViewDistance);
        }
        let at = self.agent_pos(agent)?;
        let v = view_distance as i32;
        let r2 = (v as i64) * (v as i64);
        let mut visible_cells = Vec::new();
        let mut visible_objects = Vec::new();
        for y in (at.y - v)..=(at.y + v) {
            for x in (at.x - v)..=(at.x + v) {
                let p = Pos::new(x, y);
                if !self.level.in_bounds(p) || at.dist2(p) > r2 {
                    continue;
                }
                if !self.line_clear(at, p) {
                    continue;
                }
                let view = match self.level.cell(p) {
                    CellKind::Wall => CellView::Wall,
                    CellKind::Floor => match self.level.door_at(p) {
                        Some(d) => CellView::Door(d),
                        None => CellView::Floor,
                    },
                };
                visible_cells.push((p, view));
                if let Some(id) = self.level.object_at(p) {
                    let state = match self.level.object(id).kind {
                        ObjectKind::Door { .. } => ObjectState::Door {
                            open: self.door_open[id.index()],
                        },
                        ObjectKind::Button => ObjectState::Button,
                    };
                    visible_objects.push((id, ObjectSnapshot { pos: p, state }));
                }
            }
        }
        visible_objects.sort_by_key(|(id, _)| *id);
        let visible_agents = self
            .agent_pos
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                *i != agent.0 && visible_cells.binary_search_by(|(q, _)| q.cmp(p)).is_ok()
            })
            .map(|(i, p)| (AgentId(i), *p))
            .collect();
        Ok(Observation {
            observer: agent,
            tick: self.tick,
            seq: self.transitions,
            visible_cells,
            visible_objects,
            visible_agents,
        })
    }

    fn line_clear(&self, from: Pos, to: Pos) -> bool {
        bresenham(from, to)
            .filter(|p| *p != from && *p != to)
            .all(|p| self.passable(p))
    }
}

/// Integer line from `a` to `b`, both endpoints included.
pub fn bresenham(a: Pos, b: Pos) -> impl Iterator<Item = Pos> {
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cur = Some(a);
    std::iter::from_fn(move || {
        let p = cur?;
        if p == b {
            cur = None;
        } else {
            let mut next = p;
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                next.x += sx;
            }
            if e2 <= dx {
                err += dx;
                next.y += sy;
            }
            cur = Some(next);
        }
        Some(p)
    })
}
