//! Raw event ingestion.
//!
//! Events CSV: header row with `timestamp` (seconds since the epoch) and
//! either `node_index` or `x,y`, plus an optional `count` (default 1).
//! Coordinates CSV: `node_index,x,y`, one row per node.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Location {
    Node(usize),
    Point(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp: i64,
    pub location: Location,
    pub count: u64,
}

/// How locations map to nodes. `Nodes` assigns points to the nearest node
/// (ties to the lower index). `Grid` uses half-open cells
/// `[x0 + c·w, x0 + (c+1)·w)` numbered row-major with node coordinates at
/// cell centres; points outside the grid are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regions {
    Nodes(Vec<[f64; 2]>),
    Grid {
        min: [f64; 2],
        max: [f64; 2],
        cols: usize,
        rows: usize,
    },
}

impl Regions {
    pub fn len(&self) -> usize {
        match self {
            Regions::Nodes(c) => c.len(),
            Regions::Grid { cols, rows, .. } => cols * rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        match self {
            Regions::Nodes(c) => c.clone(),
            Regions::Grid { min, max, cols, rows } => {
                let w = (max[0] - min[0]) / *cols as f64;
                let h = (max[1] - min[1]) / *rows as f64;
                (0..rows * cols)
                    .map(|k| [min[0] + ((k % cols) as f64 + 0.5) * w, min[1] + ((k / cols) as f64 + 0.5) * h])
                    .collect()
            }
        }
    }

    fn locate(&self, loc: Location) -> Option<usize> {
        match (self, loc) {
            (_, Location::Node(i)) => (i < self.len()).then_some(i),
            (Regions::Nodes(coords), Location::Point(x, y)) => {
                let d = |c: &[f64; 2]| (c[0] - x).powi(2) + (c[1] - y).powi(2);
                (0..coords.len()).min_by(|&a, &b| d(&coords[a]).total_cmp(&d(&coords[b])))
            }
            (Regions::Grid { min, max, cols, rows }, Location::Point(x, y)) => {
                if !(min[0] <= x && x < max[0] && min[1] <= y && y < max[1]) {
                    return None;
                }
                let c = (((x - min[0]) / (max[0] - min[0]) * *cols as f64) as usize).min(cols - 1);
                let r = (((y - min[1]) / (max[1] - min[1]) * *rows as f64) as usize).min(rows - 1);
                Some(r * cols + c)
            }
        }
    }
}

/// `steps` intervals of `interval` seconds starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: i64,
    pub interval: i64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub records: usize,
    pub ingested_events: u64,
    pub dropped_events: u64,
    pub dropped_records: usize,
}

/// Counts events per (step, node). Records outside the span or the regions
/// are dropped and counted.
pub fn aggregate(records: &[EventRecord], regions: &Regions, span: Span) -> Result<(Dataset, AggregateStats)> {
    if regions.is_empty() {
        return Err(Error::invalid("no regions defined"));
    }
    if span.steps == 0 || span.interval <= 0 {
        return Err(Error::invalid("zero-length span"));
    }
    let n = regions.len();
    let mut values = vec![0.0; span.steps * n];
    let mut stats = AggregateStats {
        records: records.len(),
        ..AggregateStats::default()
    };
    for r in records {
        stats.ingested_events += r.count;
        let offset = r.timestamp - span.start;
        let step = offset.div_euclid(span.interval);
        let node = regions.locate(r.location);
        match node {
            Some(i) if offset >= 0 && (step as usize) < span.steps => {
                values[step as usize * n + i] += r.count as f64;
            }
            _ => {
                stats.dropped_events += r.count;
                stats.dropped_records += 1;
            }
        }
    }
    if stats.dropped_records > 0 {
        log::warn!(
            "dropped {} out-of-bounds records ({} events)",
            stats.dropped_records,
            stats.dropped_events
        );
    }
    let dataset = Dataset::new(values, span.steps, regions.coords(), span.start, span.interval)?;
    Ok((dataset, stats))
}

fn schema(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<(csv::Reader<std::fs::File>, csv::StringRecord)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
        _ => schema(path, 1, e.to_string()),
    })?;
    let headers = reader.headers().map_err(|e| schema(path, 1, e.to_string()))?.clone();
    Ok((reader, headers))
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|_| schema(path, line, format!("column '{name}': cannot parse '{raw}'")))
}

pub fn read_events_csv(path: &Path) -> Result<Vec<EventRecord>> {
    let (mut reader, headers) = open(path)?;
    let ts = column(&headers, "timestamp").ok_or_else(|| schema(path, 1, "missing 'timestamp' column"))?;
    let node = column(&headers, "node_index");
    let xy = column(&headers, "x").zip(column(&headers, "y"));
    if node.is_none() && xy.is_none() {
        return Err(schema(path, 1, "need a 'node_index' column or both 'x' and 'y'"));
    }
    let count = column(&headers, "count");
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let timestamp = field(path, line, &rec, ts, "timestamp")?;
        let location = match (node, xy) {
            (Some(i), _) if rec.get(i).is_some_and(|s| !s.is_empty()) || xy.is_none() => {
                Location::Node(field(path, line, &rec, i, "node_index")?)
            }
            (_, Some((x, y))) => Location::Point(field(path, line, &rec, x, "x")?, field(path, line, &rec, y, "y")?),
            _ => unreachable!("checked above"),
        };
        let count = match count {
            Some(c) if rec.get(c).is_some_and(|s| !s.is_empty()) => field(path, line, &rec, c, "count")?,
            _ => 1,
        };
        out.push(EventRecord {
            timestamp,
            location,
            count,
        });
    }
    Ok(out)
}

/// Node coordinates indexed by `node_index`; indices must cover `0..N`
/// exactly once.
pub fn read_coords_csv(path: &Path) -> Result<Vec<[f64; 2]>> {
    let (mut reader, headers) = open(path)?;
    let cols = ["node_index", "x", "y"].map(|c| column(&headers, c));
    let [Some(ni), Some(xi), Some(yi)] = cols else {
        return Err(schema(path, 1, "coordinates need 'node_index', 'x' and 'y' columns"));
    };
    let mut rows: Vec<(usize, [f64; 2], u64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| schema(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let i: usize = field(path, line, &rec, ni, "node_index")?;
        let x: f64 = field(path, line, &rec, xi, "x")?;
        let y: f64 = field(path, line, &rec, yi, "y")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(schema(path, line, "non-finite coordinate"));
        }
        rows.push((i, [x, y], line));
    }
    if rows.is_empty() {
        return Err(schema(path, 1, "no nodes"));
    }
    let mut coords = vec![None; rows.len()];
    for (i, c, line) in rows {
        match coords.get_mut(i) {
            Some(slot @ None) => *slot = Some(c),
            Some(Some(_)) => return Err(schema(path, line, format!("duplicate node_index {i}"))),
            None => return Err(schema(path, line, format!("node_index {i} out of range"))),
        }
    }
    Ok(coords.into_iter().map(|c| c.expect("every index filled")).collect())
}
