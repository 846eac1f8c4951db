//! Reference allocation strategies sharing one rank-and-allocate harness.
//!
//! Every score provider emits `[k × N]` intensities; nodes are ranked by
//! their mean over the horizon and the top `budget` are demanded. Supply
//! matching happens in the environment, identically for every provider.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Per-slot mean of a raw `[L × N]` history, projected over `horizon`
/// future steps. The future step `h` (1-indexed) shares its slot with
/// history rows `l ≡ L − 1 + h (mod steps_per_day)`.
pub fn historical_average(history: &[f64], nodes: usize, steps_per_day: usize, horizon: usize) -> Result<Vec<f64>> {
    if nodes == 0 || history.len() % nodes != 0 {
        return Err(Error::shape("historical_average", &[history.len()], &[nodes]));
    }
    let len = history.len() / nodes;
    if steps_per_day == 0 || len < steps_per_day {
        return Err(Error::SequenceTooShort {
            len,
            needed: steps_per_day.max(1),
        });
    }
    let mut out = vec![0.0; horizon * nodes];
    for h in 1..=horizon {
        let slot = (len - 1 + h) % steps_per_day;
        let rows: Vec<usize> = (slot..len).step_by(steps_per_day).collect();
        for i in 0..nodes {
            let s: f64 = rows.iter().map(|&l| history[l * nodes + i]).sum();
            out[(h - 1) * nodes + i] = s / rows.len() as f64;
        }
    }
    Ok(out)
}

/// Mean score per node over the horizon rows of `[k × N]` scores.
pub fn mean_scores(scores: &[f64], nodes: usize) -> Vec<f64> {
    let k = scores.len() / nodes.max(1);
    (0..nodes)
        .map(|i| (0..k).map(|h| scores[h * nodes + i]).sum::<f64>() / k.max(1) as f64)
        .collect()
}

/// Demands the `budget` nodes with the highest mean score. Ties go to the
/// lower node index (stable sort on descending score).
pub fn rank_allocate(scores: &[f64], nodes: usize, budget: usize) -> Vec<bool> {
    let mean = mean_scores(scores, nodes);
    let mut order: Vec<usize> = (0..nodes).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
    let mut action = vec![false; nodes];
    for &i in order.iter().take(budget) {
        action[i] = true;
    }
    action
}

/// Perfect foresight over the raw future `[W × N]`: demands nodes that see
/// an event, earliest first, then by event count, then by index.
pub fn oracle_allocate(future: &[f64], nodes: usize, window: usize, budget: usize) -> Vec<bool> {
    let rows = (future.len() / nodes.max(1)).min(window);
    let mut ranked: Vec<(usize, f64, usize)> = (0..nodes)
        .filter_map(|i| {
            let first = (0..rows).find(|&h| future[h * nodes + i] > 0.0)?;
            let total: f64 = (0..rows).map(|h| future[h * nodes + i]).sum();
            Some((first, total, i))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut action = vec![false; nodes];
    for &(_, _, i) in ranked.iter().take(budget) {
        action[i] = true;
    }
    action
}

/// Uniform subset: size uniform in `0..=min(budget, N)`, then the members.
pub fn random_allocate<R: Rng + ?Sized>(rng: &mut R, nodes: usize, budget: usize) -> Vec<bool> {
    let size = rng.random_range(0..=budget.min(nodes));
    let mut action = vec![false; nodes];
    for i in sample(rng, nodes, size) {
        action[i] = true;
    }
    action
}

/// External scores keyed by window index, each `[k × N]`. Missing entries
/// are zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub nodes: usize,
    pub horizon: usize,
    pub windows: BTreeMap<usize, Vec<f64>>,
}

impl ScoreTable {
    pub fn get(&self, window: usize) -> Option<&[f64]> {
        self.windows.get(&window).map(Vec::as_slice)
    }
}

/// Reads `window_index,horizon_step,node_index,score` rows; `horizon_step`
/// is 0-based.
pub fn read_scores_csv(path: &Path, nodes: usize, horizon: usize) -> Result<ScoreTable> {
    let schema = |line: u64, message: String| Error::Schema {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| schema(1, e.to_string()))?;
    let headers = reader.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    let expected = ["window_index", "horizon_step", "node_index", "score"];
    let idx: Vec<usize> = expected
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).ok_or_else(|| schema(1, format!("missing '{c}' column"))))
        .collect::<Result<_>>()?;
    let mut table = ScoreTable {
        nodes,
        horizon,
        windows: BTreeMap::new(),
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| schema(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let parse_usize = |k: usize| {
            get(k)
                .parse::<usize>()
                .map_err(|_| schema(line, format!("column '{}': cannot parse '{}'", expected[k], get(k))))
        };
        let (w, h, i) = (parse_usize(0)?, parse_usize(1)?, parse_usize(2)?);
        let score: f64 = get(3)
            .parse()
            .map_err(|_| schema(line, format!("column 'score': cannot parse '{}'", get(3))))?;
        if h >= horizon || i >= nodes {
            return Err(schema(line, format!("horizon_step {h} or node_index {i} out of range")));
        }
        table.windows.entry(w).or_insert_with(|| vec![0.0; horizon * nodes])[h * nodes + i] = score;
    }
    Ok(table)
}
