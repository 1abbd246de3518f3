//! `LEVEL v1` plain-text level files.
//!
//! ```text
//! LEVEL v1
//! size: <W> <H>
//! grid:
//! <H rows of W chars, '#' wall, '.' floor>
//! door <id> <x> <y> <points>
//! button <id> <x> <y>
//! connect <button-id> <door-id>[,<door-id>...]
//! agent <x> <y>
//! ```
//!
//! Directive lines may appear in any order after the grid. Blank lines are
//! ignored. Serialization emits doors, buttons, connections and agents in
//! that order, each sorted by id (agents keep their spawn order).

use std::fmt::Write as _;

use super::{CellKind, GameObject, Level, LevelDraft, LevelError, Pos};

fn syntax(line: usize, column: usize, message: impl Into<String>) -> LevelError {
    LevelError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Tokens of a directive line with their 1-based start columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_ascii_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_num<T: std::str::FromStr>(
    line: usize,
    tok: (usize, &str),
    what: &str,
) -> Result<T, LevelError> {
    tok.1
        .parse::<T>()
        .map_err(|_| syntax(line, tok.0, format!("expected {what}, found `{}`", tok.1)))
}

fn expect_arity(line: usize, toks: &[(usize, &str)], n: usize) -> Result<(), LevelError> {
    if toks.len() != n {
        let col = toks
            .get(n)
            .map(|t| t.0)
            .unwrap_or_else(|| toks.last().map(|t| t.0 + t.1.len()).unwrap_or(1));
        return Err(syntax(
            line,
            col,
            format!("`{}` takes {} arguments", toks[0].1, n - 1),
        ));
    }
    Ok(())
}

fn check_id(line: usize, tok: (usize, &str)) -> Result<String, LevelError> {
    if tok.1.contains(',') {
        return Err(syntax(line, tok.0, format!("invalid id `{}`", tok.1)));
    }
    Ok(tok.1.to_string())
}

pub fn load_level(text: &str) -> Result<Level, LevelError> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l));

    let (n, header) = lines.next().unwrap_or((1, ""));
    if header.trim_end() != "LEVEL v1" {
        return Err(syntax(n, 1, "expected header `LEVEL v1`"));
    }

    let (n, size_line) = lines
        .next()
        .ok_or_else(|| syntax(2, 1, "missing `size:` line"))?;
    let toks = tokens(size_line);
    if toks.first().map(|t| t.1) != Some("size:") {
        return Err(syntax(n, 1, "expected `size: <W> <H>`"));
    }
    expect_arity(n, &toks, 3)?;
    let width: usize = parse_num(n, toks[1], "width")?;
    let height: usize = parse_num(n, toks[2], "height")?;
    if width == 0 || height == 0 {
        return Err(syntax(n, toks[1].0, "dimensions must be positive"));
    }

    let (n, grid_line) = lines
        .next()
        .ok_or_else(|| syntax(3, 1, "missing `grid:` line"))?;
    if grid_line.trim_end() != "grid:" {
        return Err(syntax(n, 1, "expected `grid:`"));
    }

    let mut draft = LevelDraft::new(width, height, CellKind::Wall);
    for y in 0..height {
        let (n, row) = lines
            .next()
            .ok_or_else(|| syntax(4 + y, 1, "grid ends early"))?;
        if row.len() != width {
            return Err(syntax(
                n,
                row.len().min(width) + 1,
                format!("grid row must have {width} cells"),
            ));
        }
        for (x, c) in row.chars().enumerate() {
            let kind = match c {
                '#' => CellKind::Wall,
                '.' => CellKind::Floor,
                other => {
                    return Err(syntax(
                        n,
                        x + 1,
                        format!("unexpected grid character `{other}`"),
                    ))
                }
            };
            draft.set(Pos::new(x as i32, y as i32), kind);
        }
    }

    for (n, line) in lines {
        let toks = tokens(line);
        let Some(&(col, head)) = toks.first() else {
            continue;
        };
        match head {
            "door" => {
                expect_arity(n, &toks, 5)?;
                let id = check_id(n, toks[1])?;
                let x = parse_num(n, toks[2], "x coordinate")?;
                let y = parse_num(n, toks[3], "y coordinate")?;
                let points = parse_num(n, toks[4], "points")?;
                draft
                    .objects
                    .push(GameObject::door(id, Pos::new(x, y), points));
            }
            "button" => {
                expect_arity(n, &toks, 4)?;
                let id = check_id(n, toks[1])?;
                let x = parse_num(n, toks[2], "x coordinate")?;
                let y = parse_num(n, toks[3], "y coordinate")?;
                draft.objects.push(GameObject::button(id, Pos::new(x, y)));
            }
            "connect" => {
                expect_arity(n, &toks, 3)?;
                let button = check_id(n, toks[1])?;
                let (dcol, list) = toks[2];
                let mut offset = 0;
                for door in list.split(',') {
                    if door.is_empty() {
                        return Err(syntax(n, dcol + offset, "empty door id in connection list"));
                    }
                    draft.connections.push((button.clone(), door.to_string()));
                    offset += door.len() + 1;
                }
            }
            "agent" => {
                expect_arity(n, &toks, 3)?;
                let x = parse_num(n, toks[1], "x coordinate")?;
                let y = parse_num(n, toks[2], "y coordinate")?;
                draft.spawn_points.push(Pos::new(x, y));
            }
            other => return Err(syntax(n, col, format!("unknown directive `{other}`"))),
        }
    }

    draft.build()
}

pub fn serialize_level(level: &Level) -> String {
    let mut out = String::new();
    out.push_str("LEVEL v1\n");
    let _ = writeln!(out, "size: {} {}", level.width(), level.height());
    out.push_str("grid:\n");
    for y in 0..level.height() {
        for x in 0..level.width() {
            out.push(match level.cell(Pos::new(x as i32, y as i32)) {
                CellKind::Wall => '#',
                CellKind::Floor => '.',
            });
        }
        out.push('\n');
    }
    for d in level.doors() {
        let o = level.object(d);
        let _ = writeln!(
            out,
            "door {} {} {} {}",
            o.name,
            o.pos.x,
            o.pos.y,
            o.points()
        );
    }
    for b in level.buttons() {
        let o = level.object(b);
        let _ = writeln!(out, "button {} {} {}", o.name, o.pos.x, o.pos.y);
    }
    for (b, doors) in level.connections() {
        let list: Vec<&str> = doors.iter().map(|d| level.name(*d)).collect();
        let _ = writeln!(out, "connect {} {}", level.name(*b), list.join(","));
    }
    for sp in level.spawn_points() {
        let _ = writeln!(out, "agent {} {}", sp.x, sp.y);
    }
    out
}
