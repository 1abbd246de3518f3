//! Procedural generators for the basic ten-door hall and its logic variants.
//!
//! The basic layout at scale `k` is a `10k × 10k` open hall ringed by a one
//! cell wall. Ten side rooms sit behind that ring (three on the top and bottom
//! sides, two on the left and right), each reached through a single door cell
//! in the ring. Every door `di` has a button `bi` on the hall cell directly in
//! front of it.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{CellKind, GameObject, Level, LevelDraft, LevelError, ObjId, Pos};

/// Doors worth ten points in the basic level; all others are worth one.
pub const HIGH_VALUE_DOORS: [&str; 4] = ["d2", "d3", "d6", "d9"];

const DOOR_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("requested {requested} doors but the level only has {available} eligible")]
    NotEnoughDoors { requested: usize, available: usize },
    #[error("no floor cell is far enough from door {0}")]
    NoFarCell(String),
    #[error("side room behind door {0} has no free cell")]
    NoRoomCell(String),
    #[error("door {0} has no connected button")]
    Unwired(String),
    #[error("level has no spawn point to locate the hall from")]
    NoHall,
    #[error(transparent)]
    Level(#[from] LevelError),
}

fn points_for(index: usize) -> u32 {
    if HIGH_VALUE_DOORS.contains(&format!("d{index}").as_str()) {
        10
    } else {
        1
    }
}

#[derive(Clone, Copy)]
enum Side {
    Top,
    Right,
    Bottom,
    Left,
}

/// Basic-Level at `scale` (hall side `10 * scale`). Door placement and the
/// assignment of door ids to side rooms are drawn from `seed`.
pub fn generate_basic_level(scale: u32, seed: u64) -> Level {
    assert!(scale >= 1, "scale must be at least 1");
    let k = scale as i32;
    let hall = 10 * k;
    let depth = 3 + k / 3;
    let origin = depth + 2;
    let size = (hall + 2 * origin) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draft = LevelDraft::new(size, size, CellKind::Wall);

    for y in origin..origin + hall {
        for x in origin..origin + hall {
            draft.set(Pos::new(x, y), CellKind::Floor);
        }
    }

    // (door cell, button cell, room cells) per slot, clockwise from top-left.
    let mut slots: Vec<(Pos, Pos)> = Vec::with_capacity(DOOR_COUNT);
    for (side, count) in [
        (Side::Top, 3),
        (Side::Right, 2),
        (Side::Bottom, 3),
        (Side::Left, 2),
    ] {
        for j in 0..count {
            let lo = j * hall / count;
            let hi = (j + 1) * hall / count - 1; // last cell of the slot is a separator wall
            let along = rng.gen_range(lo..hi);
            // `t` runs along the side, `s` goes outward from the ring (1..=depth).
            let map = |t: i32, s: i32| -> Pos {
                match side {
                    Side::Top => Pos::new(origin + t, origin - 1 - s),
                    Side::Bottom => Pos::new(origin + hall - 1 - t, origin + hall + s),
                    Side::Right => Pos::new(origin + hall + s, origin + t),
                    Side::Left => Pos::new(origin - 1 - s, origin + hall - 1 - t),
                }
            };
            for t in lo..hi {
                for s in 1..=depth {
                    draft.set(map(t, s), CellKind::Floor);
                }
            }
            let door = map(along, 0);
            let button = map(along, -1);
            draft.set(door, CellKind::Floor);
            slots.push((door, button));
        }
    }

    slots.shuffle(&mut rng);
    for (i, (door, button)) in slots.into_iter().enumerate() {
        draft
            .objects
            .push(GameObject::door(format!("d{i}"), door, points_for(i)));
        draft
            .objects
            .push(GameObject::button(format!("b{i}"), button));
        draft.connections.push((format!("b{i}"), format!("d{i}")));
    }

    let c = origin + hall / 2;
    let q = (hall / 4).max(1);
    draft.spawn_points = vec![
        Pos::new(c, c),
        Pos::new(c - q, c),
        Pos::new(c + q, c),
        Pos::new(c, c - q),
        Pos::new(c, c + q),
    ];
    draft
        .build()
        .expect("basic level construction is valid by design")
}

/// Floor cells reachable from the first spawn point without passing any door,
/// sorted by position.
pub fn hall_cells(level: &Level) -> Vec<Pos> {
    let Some(&start) = level.spawn_points().first() else {
        return Vec::new();
    };
    let mut seen = vec![false; level.width() * level.height()];
    let mut queue = VecDeque::from([start]);
    seen[level.index(start)] = true;
    let mut out = Vec::new();
    while let Some(p) = queue.pop_front() {
        out.push(p);
        for n in p.neighbors() {
            if level.cell(n) == CellKind::Floor
                && level.door_at(n).is_none()
                && !seen[level.index(n)]
            {
                seen[level.index(n)] = true;
                queue.push_back(n);
            }
        }
    }
    out.sort();
    out
}

fn occupied(draft: &LevelDraft) -> BTreeSet<Pos> {
    draft
        .objects
        .iter()
        .map(|o| o.pos)
        .chain(draft.spawn_points.iter().copied())
        .collect()
}

fn sole_button(level: &Level, door: ObjId) -> Result<ObjId, GenError> {
    level
        .buttons_of(door)
        .first()
        .copied()
        .ok_or_else(|| GenError::Unwired(level.name(door).to_string()))
}

/// Moves the button of `count` seed-chosen doors to a uniformly drawn hall cell
/// at Euclidean distance at least half the hall diameter from its door.
pub fn apply_distant_connections(
    level: &Level,
    count: usize,
    seed: u64,
) -> Result<Level, GenError> {
    if count == 0 {
        return Ok(level.clone());
    }
    let mut doors: Vec<ObjId> = level.doors().collect();
    if count > doors.len() {
        return Err(GenError::NotEnoughDoors {
            requested: count,
            available: doors.len(),
        });
    }
    let hall = hall_cells(level);
    if hall.is_empty() {
        return Err(GenError::NoHall);
    }
    let (min_x, max_x) = (
        hall.iter().map(|p| p.x).min().unwrap(),
        hall.iter().map(|p| p.x).max().unwrap(),
    );
    let (min_y, max_y) = (
        hall.iter().map(|p| p.y).min().unwrap(),
        hall.iter().map(|p| p.y).max().unwrap(),
    );
    let diameter = (max_x - min_x + 1).max(max_y - min_y + 1) as i64;
    // dist >= diameter / 2  <=>  4 * dist^2 >= diameter^2
    let far_enough = |a: Pos, b: Pos| 4 * a.dist2(b) >= diameter * diameter;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    doors.shuffle(&mut rng);
    // Placed in shuffle order, so a larger count extends a smaller one.
    let chosen: Vec<ObjId> = doors.into_iter().take(count).collect();

    let mut draft = level.to_draft();
    for door in chosen {
        let button = sole_button(level, door)?;
        let door_pos = level.object(door).pos;
        let taken = occupied(&draft);
        let eligible: Vec<Pos> = hall
            .iter()
            .copied()
            .filter(|p| far_enough(*p, door_pos) && !taken.contains(p))
            .collect();
        let target = *eligible
            .choose(&mut rng)
            .ok_or_else(|| GenError::NoFarCell(level.name(door).to_string()))?;
        draft
            .object_mut(level.name(button))
            .expect("button exists")
            .pos = target;
    }
    Ok(draft.build()?)
}

/// For `count` disjoint seed-chosen `(guard, target)` door pairs, hides the
/// target's button inside the side room behind the guard.
pub fn apply_chained_connections(
    level: &Level,
    count: usize,
    seed: u64,
) -> Result<Level, GenError> {
    if count == 0 {
        return Ok(level.clone());
    }
    let mut doors: Vec<ObjId> = level.doors().collect();
    if count > 3 || 2 * count > doors.len() {
        return Err(GenError::NotEnoughDoors {
            requested: 2 * count,
            available: doors.len().min(6),
        });
    }
    let hall: BTreeSet<Pos> = hall_cells(level).into_iter().collect();
    if hall.is_empty() {
        return Err(GenError::NoHall);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    doors.shuffle(&mut rng);
    let mut draft = level.to_draft();
    for pair in doors.chunks(2).take(count) {
        let (guard, target) = (pair[0], pair[1]);
        let button = sole_button(level, target)?;
        let room = room_behind(level, guard, &hall);
        let taken = occupied(&draft);
        let free: Vec<Pos> = room.into_iter().filter(|p| !taken.contains(p)).collect();
        let cell = *free
            .choose(&mut rng)
            .ok_or_else(|| GenError::NoRoomCell(level.name(guard).to_string()))?;
        draft
            .object_mut(level.name(button))
            .expect("button exists")
            .pos = cell;
    }
    Ok(draft.build()?)
}

/// Floor cells on the far side of `door` from the hall, sorted.
fn room_behind(level: &Level, door: ObjId, hall: &BTreeSet<Pos>) -> Vec<Pos> {
    let start = level.object(door).pos;
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<Pos> = start
        .neighbors()
        .filter(|n| {
            level.cell(*n) == CellKind::Floor && !hall.contains(n) && level.door_at(*n).is_none()
        })
        .collect();
    seen.extend(queue.iter().copied());
    while let Some(p) = queue.pop_front() {
        for n in p.neighbors() {
            if level.cell(n) == CellKind::Floor
                && !hall.contains(&n)
                && level.door_at(n).is_none()
                && seen.insert(n)
            {
                queue.push_back(n);
            }
        }
    }
    seen.into_iter().collect()
}

/// Wires `count` seed-chosen buttons to one or two additional doors each.
pub fn apply_multi_connections(level: &Level, count: usize, seed: u64) -> Result<Level, GenError> {
    if count == 0 {
        return Ok(level.clone());
    }
    let mut buttons: Vec<ObjId> = level.buttons().collect();
    if count > buttons.len() {
        return Err(GenError::NotEnoughDoors {
            requested: count,
            available: buttons.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    buttons.shuffle(&mut rng);
    let chosen: Vec<ObjId> = buttons.into_iter().take(count).collect();
    let mut draft = level.to_draft();
    for b in chosen {
        let wired: BTreeSet<ObjId> = level.connected_doors(b).collect();
        let mut spare: Vec<ObjId> = level.doors().filter(|d| !wired.contains(d)).collect();
        spare.shuffle(&mut rng);
        let extra = rng.gen_range(1..=2).min(spare.len());
        for d in spare.into_iter().take(extra) {
            draft
                .connections
                .push((level.name(b).to_string(), level.name(d).to_string()));
        }
    }
    Ok(draft.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_level_shape() {
        let level = generate_basic_level(1, 7);
        assert_eq!(level.doors().count(), 10);
        assert_eq!(level.buttons().count(), 10);
        assert_eq!(level.total_points(), 46);
        for i in 0..10 {
            let d = level.find(&format!("d{i}")).unwrap();
            let b = level.find(&format!("b{i}")).unwrap();
            assert_eq!(level.connected_doors(b).collect::<Vec<_>>(), vec![d]);
            assert_eq!(level.object(b).pos.manhattan(level.object(d).pos), 1);
            let expected = if [2, 3, 6, 9].contains(&i) { 10 } else { 1 };
            assert_eq!(level.object(d).points(), expected);
        }
        assert_eq!(hall_cells(&level).len(), 100);
    }

    #[test]
    fn hall_scales_with_scale() {
        let level = generate_basic_level(10, 3);
        assert_eq!(hall_cells(&level).len(), 100 * 100);
        assert_eq!(level.doors().count(), 10);
        assert_eq!(level.total_points(), 46);
    }

    #[test]
    fn door_placement_depends_on_seed_only() {
        assert_eq!(generate_basic_level(2, 11), generate_basic_level(2, 11));
        assert_ne!(generate_basic_level(2, 11), generate_basic_level(2, 12));
    }

    #[test]
    fn zero_counts_are_identity() {
        let level = generate_basic_level(2, 5);
        assert_eq!(apply_distant_connections(&level, 0, 1).unwrap(), level);
        assert_eq!(apply_chained_connections(&level, 0, 1).unwrap(), level);
        assert_eq!(apply_multi_connections(&level, 0, 1).unwrap(), level);
    }

    #[test]
    fn distant_buttons_are_far() {
        for scale in 1..=3 {
            let level = generate_basic_level(scale, 21);
            let far = apply_distant_connections(&level, 10, 4).unwrap();
            for d in far.doors() {
                let b = far.buttons_of(d)[0];
                let dist2 = far.object(b).pos.dist2(far.object(d).pos);
                let half = 5 * scale as i64;
                assert!(
                    dist2 >= half * half,
                    "scale {scale}: {} too close",
                    far.name(b)
                );
            }
        }
    }

    #[test]
    fn distant_rejects_too_many() {
        let level = generate_basic_level(1, 1);
        assert!(matches!(
            apply_distant_connections(&level, 11, 1),
            Err(GenError::NotEnoughDoors { .. })
        ));
        assert!(matches!(
            apply_chained_connections(&level, 4, 1),
            Err(GenError::NotEnoughDoors { .. })
        ));
    }

    #[test]
    fn chained_button_lives_in_guard_room() {
        let level = generate_basic_level(2, 9);
        let chained = apply_chained_connections(&level, 3, 2).unwrap();
        let hall: BTreeSet<Pos> = hall_cells(&chained).into_iter().collect();
        let hidden: Vec<ObjId> = chained
            .buttons()
            .filter(|b| !hall.contains(&chained.object(*b).pos))
            .collect();
        assert_eq!(hidden.len(), 3);
        let moved_doors: BTreeSet<ObjId> = hidden
            .iter()
            .flat_map(|b| chained.connected_doors(*b))
            .collect();
        assert_eq!(moved_doors.len(), 3);
    }

    #[test]
    fn multi_connection_adds_doors() {
        let level = generate_basic_level(1, 3);
        let multi = apply_multi_connections(&level, 2, 8).unwrap();
        let wired: Vec<usize> = multi
            .buttons()
            .map(|b| multi.connected_doors(b).count())
            .collect();
        assert_eq!(wired.iter().filter(|n| **n > 1).count(), 2);
        assert!(wired.iter().all(|n| (1..=3).contains(n)));
    }
}
