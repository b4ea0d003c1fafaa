use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};

fn parse_coord(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Value { line });
    }
    Ok(v)
}

fn parse_point(fields: &[&str], line: usize) -> Result<Point> {
    Ok([
        parse_coord(fields[0], line)?,
        parse_coord(fields[1], line)?,
        parse_coord(fields[2], line)?,
    ])
}

/// Parses `x y z [mask]` lines. Blank lines are skipped; the mask column
/// (`0` or `1`) must appear on every point line or on none.
///
/// ```
/// use pcdiag_core::data::parse_xyz;
///
/// let cloud = parse_xyz("0 0 0 1\n1 0 0 1\n0 1 0 0\n").unwrap();
/// assert_eq!(cloud.len(), 3);
/// assert_eq!(cloud.mask(), Some(&[true, true, false][..]));
/// ```
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut mask: Vec<bool> = Vec::new();
    let mut masked: Option<bool> = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        let has_mask = fields.len() == 4;
        if *masked.get_or_insert(has_mask) != has_mask {
            return Err(Error::Parse {
                line,
                msg: "mask column present on some lines only".into(),
            });
        }
        points.push(parse_point(&fields, line)?);
        if has_mask {
            mask.push(match fields[3] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("mask must be 0 or 1, found `{other}`"),
                    })
                }
            });
        }
    }
    if points.is_empty() {
        return Err(Error::Parse {
            line: last_line.max(1),
            msg: "no points".into(),
        });
    }
    let cloud = PointCloud::new(points)?;
    if masked == Some(true) {
        cloud.with_mask(mask)
    } else {
        Ok(cloud)
    }
}

/// Parses an OFF mesh and returns its vertices; faces are ignored.
///
/// The counts may share the header line (`OFF 4 1 0` or `OFF4 1 0`, as in
/// some ModelNet files). `#` comments and blank lines are skipped.
pub fn parse_off(text: &str) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (header_line, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let rest = header.strip_prefix("OFF").ok_or_else(|| Error::Parse {
        line: header_line,
        msg: format!("expected `OFF` header, found `{header}`"),
    })?;
    let (counts_line, counts) = if rest.trim().is_empty() {
        lines.next().ok_or(Error::Parse {
            line: header_line,
            msg: "missing counts line".into(),
        })?
    } else {
        (header_line, rest.trim())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|f| f.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: counts_line,
            msg: format!("bad counts `{counts}`"),
        })?;
    let Some(&n_vertices) = counts.first() else {
        return Err(Error::Parse {
            line: counts_line,
            msg: "missing vertex count".into(),
        });
    };
    let mut points = Vec::with_capacity(n_vertices);
    let mut last = counts_line;
    for _ in 0..n_vertices {
        let (line, l) = lines.next().ok_or(Error::Parse {
            line: last + 1,
            msg: format!("expected {n_vertices} vertices, found {}", points.len()),
        })?;
        last = line;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line,
                msg: "vertex needs 3 coordinates".into(),
            });
        }
        points.push(parse_point(&fields, line)?);
    }
    PointCloud::new(points).map_err(|_| Error::Parse {
        line: counts_line,
        msg: "mesh has no vertices".into(),
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_xyz(&read(path.as_ref())?)
}

pub fn load_off(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_off(&read(path.as_ref())?)
}

/// Renders a cloud in the xyz format, with the mask column when the cloud
/// has one. Coordinates use the shortest representation that parses back
/// to the same `f64`.
pub fn to_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(mask) = cloud.mask() {
            out.push_str(if mask[i] { " 1" } else { " 0" });
        }
        out.push('\n');
    }
    out
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_xyz(cloud)).map_err(|e| Error::io(path, e))
}
