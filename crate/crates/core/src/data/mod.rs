//! Event-count datasets: aggregation, normalisation, splits, sliding
//! windows, synthetic scenarios and resource-level classification.
//!
//! A dataset stores raw per-step, per-node event counts plus calendar
//! channels. The value channel is z-scored with train-split statistics
//! when fed to a model, while futures handed to the environment stay raw.

mod ingest;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Value;

pub use ingest::{aggregate, read_coords_csv, read_events_csv, AggregateStats, EventRecord, Location, Regions, Span};
pub use synth::{synthesize, Pattern, HOTSPOT_RATE, BACKGROUND_RATE};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const HISTORY_LEN: usize = 168;
pub const MAX_HORIZON: usize = 12;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn transform(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Contiguous 7:1:2 split: train `[0, train_end)`, validation
/// `[train_end, val_end)`, test `[val_end, T)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train_end: usize,
    pub val_end: usize,
}

impl Splits {
    pub fn for_length(steps: usize) -> Self {
        Splits {
            train_end: (0.7 * steps as f64).round() as usize,
            val_end: (0.8 * steps as f64).round() as usize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub steps: usize,
    pub nodes: usize,
    /// Raw counts, row-major `[T × N]`.
    pub values: Vec<f64>,
    pub coords: Vec<[f64; 2]>,
    pub start_timestamp: i64,
    pub interval_secs: i64,
    pub splits: Splits,
    pub norm: Option<NormStats>,
}

impl Dataset {
    pub fn new(values: Vec<f64>, steps: usize, coords: Vec<[f64; 2]>, start_timestamp: i64, interval_secs: i64) -> Result<Self> {
        let nodes = coords.len();
        if nodes == 0 {
            return Err(Error::invalid("dataset needs at least one node"));
        }
        if steps == 0 || interval_secs <= 0 {
            return Err(Error::invalid("dataset needs a positive span and interval"));
        }
        if values.len() != steps * nodes {
            return Err(Error::shape("Dataset::new", &[steps, nodes], &[values.len()]));
        }
        Ok(Dataset {
            steps,
            nodes,
            values,
            coords,
            start_timestamp,
            interval_secs,
            splits: Splits::for_length(steps),
            norm: None,
        })
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.values[t * self.nodes + node]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.nodes..(t + 1) * self.nodes]
    }

    pub fn steps_per_day(&self) -> usize {
        ((SECONDS_PER_DAY / self.interval_secs).max(1)) as usize
    }

    pub fn steps_per_week(&self) -> usize {
        7 * self.steps_per_day()
    }

    fn timestamp(&self, t: usize) -> i64 {
        self.start_timestamp + t as i64 * self.interval_secs
    }

    /// Slot within the day, in `[0, steps_per_day)`.
    pub fn time_of_day(&self, t: usize) -> usize {
        (self.timestamp(t).rem_euclid(SECONDS_PER_DAY) / self.interval_secs) as usize
    }

    /// Day of week with Monday as 0.
    pub fn day_of_week(&self, t: usize) -> usize {
        // the epoch fell on a Thursday
        (self.timestamp(t).div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.splits.train_end,
            Split::Validation => self.splits.train_end..self.splits.val_end,
            Split::Test => self.splits.val_end..self.steps,
        }
    }

    /// Fits z-score statistics on the train split's value channel.
    pub fn normalize(&mut self) -> Result<NormStats> {
        let train = self.split_range(Split::Train);
        if train.is_empty() {
            return Err(Error::invalid("train split is empty"));
        }
        let slice = &self.values[train.start * self.nodes..train.end * self.nodes];
        let n = slice.len() as f64;
        let mean = slice.iter().sum::<f64>() / n;
        let var = slice.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 {
            var.sqrt()
        } else {
            log::warn!("train split has zero variance; using a unit divisor");
            1.0
        };
        let stats = NormStats { mean, std };
        self.norm = Some(stats);
        Ok(stats)
    }

    /// The model-facing value channel: z-scored when statistics are set.
    pub fn model_value(&self, t: usize, node: usize) -> f64 {
        let x = self.value(t, node);
        self.norm.map_or(x, |s| s.transform(x))
    }

    /// Mean events per step over the train split.
    pub fn demand_estimate(&self) -> f64 {
        let train = self.split_range(Split::Train);
        if train.is_empty() {
            return 0.0;
        }
        let total: f64 = self.values[train.start * self.nodes..train.end * self.nodes].iter().sum();
        total / train.len() as f64
    }

    /// Anchors `t` such that steps `t+1-L ..= t` and `t+1 ..= t+k` exist.
    pub fn anchors(&self, history: usize, horizon: usize) -> std::ops::Range<usize> {
        if self.steps < history + horizon || history == 0 {
            return 0..0;
        }
        history - 1..self.steps - horizon
    }

    /// Anchors whose time step falls inside `split`.
    pub fn split_anchors(&self, split: Split, history: usize, horizon: usize) -> std::ops::Range<usize> {
        let all = self.anchors(history, horizon);
        let r = self.split_range(split);
        let start = all.start.max(r.start);
        let end = all.end.min(r.end).max(start);
        start..end
    }

    pub fn window(&self, anchor: usize, history: usize, horizon: usize) -> Result<Window> {
        let needed = history + horizon;
        if self.steps < needed {
            return Err(Error::SequenceTooShort {
                len: self.steps,
                needed,
            });
        }
        if !self.anchors(history, horizon).contains(&anchor) {
            return Err(Error::invalid(format!("anchor {anchor} has no full window")));
        }
        let first = anchor + 1 - history;
        let n = self.nodes;
        let spd = self.steps_per_day() as f64;
        let mut data = vec![0.0; n * INPUT_CHANNELS * history];
        for l in 0..history {
            let t = first + l;
            let tod = self.time_of_day(t) as f64 / spd;
            let dow = self.day_of_week(t) as f64 / 7.0;
            for i in 0..n {
                let base = i * INPUT_CHANNELS * history;
                data[base + l] = self.model_value(t, i);
                data[base + history + l] = tod;
                data[base + 2 * history + l] = dow;
            }
        }
        let future = self.values[(anchor + 1) * n..(anchor + 1 + horizon) * n].to_vec();
        let raw_history = self.values[first * n..(anchor + 1) * n].to_vec();
        Ok(Window {
            anchor,
            history: Value::new(vec![n, INPUT_CHANNELS, history], data)?,
            raw_history,
            future,
        })
    }

    /// Every full window with stride 1.
    pub fn windows(&self, history: usize, horizon: usize) -> Result<impl Iterator<Item = Result<Window>> + '_> {
        if self.steps < history + horizon {
            return Err(Error::SequenceTooShort {
                len: self.steps,
                needed: history + horizon,
            });
        }
        Ok(self.anchors(history, horizon).map(move |t| self.window(t, history, horizon)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub anchor: usize,
    /// Model input `[N × 3 × L]`: z-scored value, time of day and day of
    /// week, both scaled to `[0, 1)`.
    pub history: Value,
    /// Raw counts `[L × N]`, oldest first.
    pub raw_history: Vec<f64>,
    /// Raw counts `[k × N]` for steps `anchor+1 ..= anchor+k`.
    pub future: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResourceLevel {
    Low,
    Medium,
    High,
}

impl std::str::FromStr for ResourceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(ResourceLevel::Low),
            "medium" => Ok(ResourceLevel::Medium),
            "high" => Ok(ResourceLevel::High),
            other => Err(Error::invalid(format!("unknown resource level '{other}'"))),
        }
    }
}

impl std::fmt::Display for ResourceLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResourceLevel::Low => "low",
            ResourceLevel::Medium => "medium",
            ResourceLevel::High => "high",
        })
    }
}

/// Supply-to-demand ratio thresholds and the ratios used to provision
/// each level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceLevelConfig {
    pub low_max: f64,
    pub medium_max: f64,
    pub low_ratio: f64,
    pub medium_ratio: f64,
    pub high_ratio: f64,
}

impl Default for ResourceLevelConfig {
    fn default() -> Self {
        ResourceLevelConfig {
            low_max: 0.9,
            medium_max: 1.5,
            low_ratio: 0.6,
            medium_ratio: 1.2,
            high_ratio: 2.0,
        }
    }
}

impl ResourceLevelConfig {
    pub fn validate(&self) -> Result<()> {
        let ratios_ok = self.low_ratio <= self.low_max
            && self.low_max < self.medium_ratio
            && self.medium_ratio <= self.medium_max
            && self.medium_max < self.high_ratio;
        if !(0.0 < self.low_max && self.low_max < self.medium_max) || !ratios_ok {
            return Err(Error::invalid("resource level thresholds must be strictly ordered"));
        }
        Ok(())
    }

    pub fn classify_ratio(&self, ratio: f64) -> ResourceLevel {
        if ratio <= self.low_max {
            ResourceLevel::Low
        } else if ratio <= self.medium_max {
            ResourceLevel::Medium
        } else {
            ResourceLevel::High
        }
    }

    /// Resource count for `level` given per-step demand, at least 1.
    pub fn resources_for(&self, level: ResourceLevel, demand: f64) -> usize {
        let ratio = match level {
            ResourceLevel::Low => self.low_ratio,
            ResourceLevel::Medium => self.medium_ratio,
            ResourceLevel::High => self.high_ratio,
        };
        ((ratio * demand).round() as usize).max(1)
    }
}

pub fn classify_resource_level(total_resources: usize, demand: f64, config: &ResourceLevelConfig) -> ResourceLevel {
    if demand <= 0.0 {
        log::warn!("zero demand estimate; classifying as high");
        return ResourceLevel::High;
    }
    config.classify_ratio(total_resources as f64 / demand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(steps: usize, nodes: usize) -> Dataset {
        let values = (0..steps * nodes).map(|k| (k % 7) as f64).collect();
        let coords = (0..nodes).map(|i| [i as f64, 0.0]).collect();
        Dataset::new(values, steps, coords, 0, 3600).unwrap()
    }

    #[test]
    fn calendar_channels() {
        let d = ramp(48, 1);
        for t in 0..48 {
            assert_eq!(d.time_of_day(t), t % 24);
            // 1970-01-01 was a Thursday
            assert_eq!(d.day_of_week(t), 3 + t / 24);
        }
        assert_eq!(d.steps_per_week(), 168);
    }

    #[test]
    fn splits_are_seven_one_two() {
        let s = Splits::for_length(2000);
        assert_eq!((s.train_end, s.val_end), (1400, 1600));
        let s = Splits::for_length(601);
        assert!((s.train_end as f64 - 420.7).abs() <= 1.0 && (s.val_end as f64 - 480.8).abs() <= 1.0);
    }

    #[test]
    fn normalization() {
        let mut c = Dataset::new(vec![3.0; 40], 20, vec![[0.0, 0.0], [1.0, 1.0]], 0, 3600).unwrap();
        c.normalize().unwrap();
        assert!((0..20).all(|t| c.model_value(t, 0) == 0.0));

        let mut d = ramp(100, 3);
        let stats = d.normalize().unwrap();
        let train = d.split_range(Split::Train);
        let mut sum = 0.0;
        for t in train.clone() {
            for i in 0..3 {
                sum += d.model_value(t, i);
                assert!((stats.invert(d.model_value(t, i)) - d.value(t, i)).abs() < 1e-10);
            }
        }
        assert!((sum / (train.len() * 3) as f64).abs() < 1e-10);
    }

    #[test]
    fn window_counts_and_alignment() {
        let d = ramp(20, 2);
        assert_eq!(d.windows(8, 12).unwrap().count(), 1);
        let d = ramp(25, 2);
        assert_eq!(d.windows(8, 12).unwrap().count(), 6);
        assert!(ramp(19, 2).windows(8, 12).is_err());

        let mut d = ramp(60, 3);
        d.normalize().unwrap();
        for w in d.windows(10, 4).unwrap() {
            let w = w.unwrap();
            assert_eq!(&w.future[..3], d.row(w.anchor + 1));
            assert_eq!(&w.raw_history[9 * 3..], d.row(w.anchor));
            // future stays raw even after normalisation
            assert!(w.future.iter().all(|x| x.fract() == 0.0));
            assert_eq!(w.history.shape(), &[3, 3, 10]);
        }
    }

    #[test]
    fn split_anchors_partition() {
        let d = ramp(600, 2);
        let all = d.anchors(168, 12);
        let parts: Vec<_> = [Split::Train, Split::Validation, Split::Test]
            .iter()
            .map(|&s| d.split_anchors(s, 168, 12))
            .collect();
        assert_eq!(parts[0].start, all.start);
        assert_eq!(parts[0].end, parts[1].start);
        assert_eq!(parts[1].end, parts[2].start);
        assert_eq!(parts[2].end, all.end);
    }

    #[test]
    fn resource_levels() {
        let c = ResourceLevelConfig::default();
        c.validate().unwrap();
        assert_eq!(classify_resource_level(50, 100.0, &c), ResourceLevel::Low);
        assert_eq!(classify_resource_level(100, 100.0, &c), ResourceLevel::Medium);
        assert_eq!(classify_resource_level(200, 100.0, &c), ResourceLevel::High);
        assert_eq!(classify_resource_level(1, 0.0, &c), ResourceLevel::High);
        for level in [ResourceLevel::Low, ResourceLevel::Medium, ResourceLevel::High] {
            assert_eq!(classify_resource_level(c.resources_for(level, 100.0), 100.0, &c), level);
            assert_eq!(level.to_string().parse::<ResourceLevel>().unwrap(), level);
        }
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 1usize..80, l in 1usize..20, k in 1usize..13) {
            let d = ramp(t, 2);
            let count = d.windows(l, k).map(|it| it.count());
            match count {
                Ok(c) => prop_assert_eq!(c, t - l - k + 1),
                Err(_) => prop_assert!(t < l + k),
            }
        }
    }
}
