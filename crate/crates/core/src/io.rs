//! ASCII interchange format for labelled clouds.
//!
//! ```text
//! # forestseg v1 columns: x y z sem inst
//! 1.250000 -3.000000 0.125000 stem 4
//! 1.300000 -3.010000 0.140000 vegetation -
//! ```
//!
//! The header names the columns present; `sem` and `inst` are optional.
//! Coordinates are written with 6 decimals, semantic classes by name and
//! unassigned instances as `-`. Further lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cloud::{LabeledCloud, Point, SemanticLabel};
use crate::error::{Error, Result};

pub const HEADER_PREFIX: &str = "# forestseg v1 columns:";
pub const COORD_DECIMALS: usize = 6;

pub fn read_cloud(path: &Path) -> Result<LabeledCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, path)
}

pub fn write_cloud(path: &Path, cloud: &LabeledCloud) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_cloud(cloud).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn format_cloud(cloud: &LabeledCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 40 + 64);
    out.push_str(HEADER_PREFIX);
    out.push_str(" x y z");
    if cloud.semantic.is_some() {
        out.push_str(" sem");
    }
    if cloud.instance.is_some() {
        out.push_str(" inst");
    }
    out.push('\n');
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
        if let Some(sem) = &cloud.semantic {
            out.push(' ');
            out.push_str(sem[i].as_str());
        }
        if let Some(inst) = &cloud.instance {
            match inst[i] {
                Some(id) => {
                    let _ = write!(out, " {id}");
                }
                None => out.push_str(" -"),
            }
        }
        out.push('\n');
    }
    out
}

/// Parses interchange text; `origin` only labels error messages.
pub fn parse_cloud(text: &str, origin: &Path) -> Result<LabeledCloud> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (header_no, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| err(1, "missing header line".into()))?;
    let columns = header.strip_prefix(HEADER_PREFIX).ok_or_else(|| {
        err(
            header_no,
            format!("expected header starting with `{HEADER_PREFIX}`"),
        )
    })?;
    let columns: Vec<&str> = columns.split_whitespace().collect();
    let (has_sem, has_inst) = match columns.as_slice() {
        ["x", "y", "z"] => (false, false),
        ["x", "y", "z", "sem"] => (true, false),
        ["x", "y", "z", "inst"] => (false, true),
        ["x", "y", "z", "sem", "inst"] => (true, true),
        _ => {
            return Err(err(
                header_no,
                format!("unsupported column set `{}`", columns.join(" ")),
            ))
        }
    };
    let width = 3 + has_sem as usize + has_inst as usize;

    let mut points = Vec::new();
    let mut semantic = Vec::new();
    let mut instance = Vec::new();
    for (no, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != width {
            return Err(err(
                no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut coord = [0.0; 3];
        for (a, c) in coord.iter_mut().enumerate() {
            let v: f64 = fields[a]
                .parse()
                .map_err(|_| err(no, format!("invalid coordinate `{}`", fields[a])))?;
            if !v.is_finite() {
                return Err(err(no, format!("non-finite coordinate `{}`", fields[a])));
            }
            *c = v;
        }
        points.push(Point::new(coord[0], coord[1], coord[2]));
        let mut next = 3;
        if has_sem {
            let label: SemanticLabel = fields[next].parse().map_err(|m| err(no, m))?;
            semantic.push(label);
            next += 1;
        }
        if has_inst {
            let field = fields[next];
            let id = if field == "-" {
                None
            } else {
                Some(
                    field
                        .parse::<u32>()
                        .map_err(|_| err(no, format!("invalid instance id `{field}`")))?,
                )
            };
            instance.push(id);
        }
    }
    Ok(LabeledCloud {
        points,
        semantic: has_sem.then_some(semantic),
        instance: has_inst.then_some(instance),
        heights: None,
    })
}

/// Rounds coordinates to the interchange precision.
pub fn quantize(cloud: &LabeledCloud) -> LabeledCloud {
    let scale = 10f64.powi(COORD_DECIMALS as i32);
    let q = |v: f64| (v * scale).round() / scale;
    let mut out = cloud.clone();
    for p in &mut out.points {
        *p = Point::new(q(p.x), q(p.y), q(p.z));
    }
    out
}
