use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, write_atomic, IoError, Result};
use crate::density::DotMap;

/// Parses `x,y` lines against a `width`×`height` frame. Blank lines are skipped.
pub fn parse_dots_str(text: &str, width: usize, height: usize) -> Result<DotMap> {
    let mut map = DotMap::empty(width, height);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let bad = |msg: String| IoError::Malformed { line, msg };
        let (xs, ys) = s
            .split_once(',')
            .ok_or_else(|| bad(format!("expected `x,y`, got {s:?}")))?;
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("not a number: {:?}", t.trim())))
        };
        let (x, y) = (num(xs)?, num(ys)?);
        map.push(x, y).map_err(|e| bad(e.to_string()))?;
    }
    Ok(map)
}

pub fn parse_dots_csv(path: &Path, width: usize, height: usize) -> Result<DotMap> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_dots_str(&text, width, height)
}

/// One `x,y` line per dot, shortest round-trip float formatting.
pub fn format_dots_csv(dots: &DotMap) -> String {
    let mut s = String::new();
    for d in dots.dots() {
        writeln!(s, "{},{}", d.x, d.y).expect("writing to String");
    }
    s
}

pub fn write_dots_csv(path: &Path, dots: &DotMap) -> Result<()> {
    write_atomic(path, format_dots_csv(dots).as_bytes())
}
