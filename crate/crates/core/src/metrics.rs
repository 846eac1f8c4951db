//! Evaluation metrics over a log of dispatch steps.
//!
//! Success rate is denominated by true events (nodes with an event inside
//! the coverage window at each step). False-alarm rate, distance and
//! early time are averaged over allocations. Degenerate denominators yield
//! zero and a logged warning.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{scalarize_reward, EnvConfig, NodeOutcome, StepOutcome};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub allocations: usize,
    pub successes: usize,
    pub false_alarms: usize,
    /// Travel distance of each matched dispatch, in coordinate units.
    pub distances: Vec<f64>,
    pub normalized_distances: Vec<f64>,
    /// Lead time of each success, in steps.
    pub delta_t: Vec<usize>,
    pub idle_before: usize,
    pub events: usize,
    pub scalarized_reward: f64,
}

impl StepRecord {
    pub fn from_outcome(outcome: &StepOutcome, config: &EnvConfig) -> Self {
        let mut successes = 0;
        let mut false_alarms = 0;
        let mut delta_t = Vec::new();
        for o in &outcome.outcomes {
            match *o {
                NodeOutcome::Success { delta_t: dt } => {
                    successes += 1;
                    delta_t.push(dt);
                }
                NodeOutcome::FalseAlarm => false_alarms += 1,
                NodeOutcome::Unallocated => {}
            }
        }
        StepRecord {
            allocations: outcome.dispatches.len(),
            successes,
            false_alarms,
            distances: outcome.dispatches.iter().map(|d| d.distance).collect(),
            normalized_distances: outcome.dispatches.iter().map(|d| d.normalized_distance).collect(),
            delta_t,
            idle_before: outcome.idle_before,
            events: outcome.event_nodes,
            scalarized_reward: scalarize_reward(&outcome.reward, config),
        }
    }

    /// `1 + mean normalised distance` of this step's dispatches.
    pub fn allocation_cost(&self) -> f64 {
        if self.normalized_distances.is_empty() {
            return 1.0;
        }
        1.0 + self.normalized_distances.iter().sum::<f64>() / self.normalized_distances.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLog {
    pub steps: Vec<StepRecord>,
}

impl OutcomeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        self.steps.push(record);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> OutcomeLog {
        OutcomeLog {
            steps: self.steps[start..end].to_vec(),
        }
    }

    fn allocations(&self) -> usize {
        self.steps.iter().map(|s| s.allocations).sum()
    }
}

fn ratio(num: f64, den: f64, what: &str) -> f64 {
    if den == 0.0 {
        log::warn!("{what}: empty denominator, reporting 0");
        0.0
    } else {
        num / den
    }
}

pub fn success_rate(log: &OutcomeLog) -> f64 {
    let succ: usize = log.steps.iter().map(|s| s.successes).sum();
    let events: usize = log.steps.iter().map(|s| s.events).sum();
    ratio(succ as f64, events as f64, "success rate (no events)")
}

pub fn false_alarm_rate(log: &OutcomeLog) -> f64 {
    let fa: usize = log.steps.iter().map(|s| s.false_alarms).sum();
    ratio(fa as f64, log.allocations() as f64, "false-alarm rate (no allocations)")
}

pub fn average_distance(log: &OutcomeLog) -> f64 {
    let total: f64 = log.steps.iter().flat_map(|s| &s.distances).sum();
    let count: usize = log.steps.iter().map(|s| s.distances.len()).sum();
    ratio(total, count as f64, "average distance (no allocations)")
}

pub fn average_early_time(log: &OutcomeLog) -> f64 {
    let total: usize = log.steps.iter().flat_map(|s| &s.delta_t).sum();
    let count: usize = log.steps.iter().map(|s| s.delta_t.len()).sum();
    ratio(total as f64, count as f64, "average early time (no successes)")
}

/// Mean over steps of `allocations / total_resources`.
pub fn resource_utilization(log: &OutcomeLog, total_resources: usize) -> Result<f64> {
    if total_resources == 0 {
        return Err(Error::invalid("resource utilisation needs at least one resource"));
    }
    let sum: f64 = log
        .steps
        .iter()
        .map(|s| s.allocations as f64 / total_resources as f64)
        .sum();
    Ok(ratio(sum, log.len() as f64, "resource utilisation (empty log)"))
}

/// Mean over allocating steps of scalarised reward per unit allocation cost.
pub fn cost_effectiveness(log: &OutcomeLog) -> f64 {
    let per_step: Vec<f64> = log
        .steps
        .iter()
        .filter(|s| s.allocations > 0)
        .map(|s| s.scalarized_reward / s.allocation_cost())
        .collect();
    ratio(per_step.iter().sum(), per_step.len() as f64, "cost effectiveness (no allocations)")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub sr: f64,
    pub far: f64,
    pub ad: f64,
    pub aet: f64,
    pub rur: f64,
    pub cer: f64,
}

impl MetricSet {
    pub fn compute(log: &OutcomeLog, total_resources: usize) -> Result<Self> {
        Ok(MetricSet {
            sr: success_rate(log),
            far: false_alarm_rate(log),
            ad: average_distance(log),
            aet: average_early_time(log),
            rur: resource_utilization(log, total_resources)?,
            cer: cost_effectiveness(log),
        })
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.sr, self.far, self.ad, self.aet, self.rur, self.cer]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        MetricSet {
            sr: a[0],
            far: a[1],
            ad: a[2],
            aet: a[3],
            rur: a[4],
            cer: a[5],
        }
    }

    /// Unweighted element-wise mean.
    pub fn mean(sets: &[MetricSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("mean of no metric sets"));
        }
        let mut acc = [0.0; 6];
        for s in sets {
            for (a, v) in acc.iter_mut().zip(s.to_array()) {
                *a += v;
            }
        }
        Ok(MetricSet::from_array(acc.map(|a| a / sets.len() as f64)))
    }
}

pub const METRIC_NAMES: [&str; 6] = ["SR", "FAR", "AD", "AET", "RUR", "CER"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeeklyReport {
    pub steps_per_week: usize,
    pub windows: Vec<MetricSet>,
    pub mean: MetricSet,
}

impl WeeklyReport {
    /// One CSV row per window: `window,SR,FAR,AD,AET,RUR,CER`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["window"];
        header.extend(METRIC_NAMES);
        w.write_record(&header).map_err(csv_err)?;
        for (i, m) in self.windows.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(m.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Splits the log into consecutive windows of `steps_per_week` (the last
/// one may be shorter), scores each, and averages.
pub fn weekly_report(log: &OutcomeLog, steps_per_week: usize, total_resources: usize) -> Result<WeeklyReport> {
    if steps_per_week == 0 {
        return Err(Error::invalid("steps_per_week must be at least 1"));
    }
    if log.is_empty() {
        return Err(Error::invalid("empty evaluation range"));
    }
    let windows = (0..log.len())
        .step_by(steps_per_week)
        .map(|start| MetricSet::compute(&log.slice(start, (start + steps_per_week).min(log.len())), total_resources))
        .collect::<Result<Vec<_>>>()?;
    let mean = MetricSet::mean(&windows)?;
    Ok(WeeklyReport {
        steps_per_week,
        windows,
        mean,
    })
}
