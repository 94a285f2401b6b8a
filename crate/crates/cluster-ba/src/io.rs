//! Plain-text file formats: scans, trajectories, and associations.
//!
//! All files are line oriented; `#` starts a comment that runs to the end of
//! the line, blank lines are skipped, and CRLF endings are tolerated. Indices
//! in files are 1-based; in-memory indices are 0-based. Floats are written
//! with Rust's shortest round-trip formatting, so write-then-read is exact
//! and integral values stay readable ("1", not "1.0000000000000000e0").

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::Pose;

fn file_err(op: &str, path: &Path, e: std::io::Error) -> Error {
    Error::InvalidInput(format!("{op} {}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| file_err("cannot read", path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| file_err("cannot write", path, e))
}

/// Data lines with their 1-based line numbers: comments stripped, blanks and
/// CR endings removed.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("expected a number, found {tok:?}")))
}

fn parse_index(tok: &str, path: &Path, line: usize) -> Result<usize> {
    let v: usize = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a positive index, found {tok:?}")))?;
    if v == 0 {
        return Err(parse_err(path, line, "indices are 1-based; found 0"));
    }
    Ok(v)
}

/// Writes one point per line: `x y z` in meters.
pub fn write_scan(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    let mut out = String::new();
    for p in points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    write_file(path, &out)
}

pub fn read_scan(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let text = read_file(path)?;
    let mut points = Vec::new();
    for (line, body) in data_lines(&text) {
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 fields (x y z), found {}", toks.len()),
            ));
        }
        points.push(Vector3::new(
            parse_f64(toks[0], path, line)?,
            parse_f64(toks[1], path, line)?,
            parse_f64(toks[2], path, line)?,
        ));
    }
    Ok(points)
}

/// Writes one pose per line: `j r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz`,
/// the row-major 3x4 matrix `[R | t]` prefixed with the 1-based pose index.
pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut out = String::new();
    for (q, pose) in poses.iter().enumerate() {
        write!(out, "{}", q + 1).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                write!(out, " {}", pose.rot[(r, c)]).unwrap();
            }
            write!(out, " {}", pose.trans[r]).unwrap();
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = read_file(path)?;
    let mut poses = Vec::new();
    for (line, body) in data_lines(&text) {
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 13 {
            return Err(parse_err(
                path,
                line,
                format!("expected 13 fields (j r11..tz), found {}", toks.len()),
            ));
        }
        let j = parse_index(toks[0], path, line)?;
        if j != poses.len() + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected pose index {}, found {j}", poses.len() + 1),
            ));
        }
        let mut rot = Matrix3::zeros();
        let mut trans = Vector3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rot[(r, c)] = parse_f64(toks[1 + 4 * r + c], path, line)?;
            }
            trans[r] = parse_f64(toks[1 + 4 * r + 3], path, line)?;
        }
        poses.push(Pose::new(rot, trans));
    }
    Ok(poses)
}

/// Ground-truth association: per feature, pose index -> point indices into
/// that pose's scan.
pub type Association = Vec<BTreeMap<usize, Vec<usize>>>;

/// Writes one membership per line: `feature_id pose_id point_index`, all
/// 1-based, sorted by (feature, pose, point) so output is deterministic.
pub fn write_association(path: &Path, assoc: &Association) -> Result<()> {
    let mut out = String::new();
    for (f, by_pose) in assoc.iter().enumerate() {
        for (&q, indices) in by_pose {
            for &k in indices {
                writeln!(out, "{} {} {}", f + 1, q + 1, k + 1).unwrap();
            }
        }
    }
    write_file(path, &out)
}

pub fn read_association(path: &Path) -> Result<Association> {
    let text = read_file(path)?;
    let mut assoc: Association = Vec::new();
    for (line, body) in data_lines(&text) {
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!(
                    "expected 3 fields (feature_id pose_id point_index), found {}",
                    toks.len()
                ),
            ));
        }
        let f = parse_index(toks[0], path, line)? - 1;
        let q = parse_index(toks[1], path, line)? - 1;
        let k = parse_index(toks[2], path, line)? - 1;
        if f >= assoc.len() {
            assoc.resize_with(f + 1, BTreeMap::new);
        }
        assoc[f].entry(q).or_default().push(k);
    }
    Ok(assoc)
}
