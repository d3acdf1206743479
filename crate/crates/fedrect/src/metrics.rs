//! Per-round metrics, their CSV schema, and convergence-round extraction.
//!
//! The column set and order are versioned; byte-identical CSV output for
//! identical runs is part of the determinism contract, so floats are
//! written with Rust's shortest-roundtrip formatting and no timestamps ever
//! appear here.

use crate::error::{Error, Result};

/// Bumped whenever the column set or order changes.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 9] = [
    "round",
    "sim_wall_clock_s",
    "train_loss",
    "eval_accuracy",
    "alpha_used",
    "guided_flag",
    "bytes_cloud_to_client",
    "bytes_client_to_edge",
    "client_mem_bytes",
];

/// One round of an experiment. Byte counts are per client link for the
/// round; `alpha_used` is meaningful only when `guided_flag` is set (it is
/// reported as 1.0 otherwise, i.e. a purely local perturbation).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MetricsRow {
    pub round: u64,
    pub sim_wall_clock_s: f64,
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub alpha_used: f64,
    pub guided_flag: bool,
    pub bytes_cloud_to_client: u64,
    pub bytes_client_to_edge: u64,
    pub client_mem_bytes: u64,
}

/// Round-indexed metrics with strictly increasing rounds and a
/// nondecreasing simulated clock.
#[derive(Debug, Clone, Default)]
pub struct MetricsSeries {
    rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.round <= last.round {
                return Err(Error::Config(format!(
                    "metrics: round {} not greater than previous {}",
                    row.round, last.round
                )));
            }
            if row.sim_wall_clock_s < last.sim_wall_clock_s {
                return Err(Error::Config("metrics: simulated clock went backwards".into()));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Serializes the series with the versioned column order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&METRICS_COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.sim_wall_clock_s,
                r.train_loss,
                r.eval_accuracy,
                r.alpha_used,
                r.guided_flag,
                r.bytes_cloud_to_client,
                r.bytes_client_to_edge,
                r.client_mem_bytes
            ));
        }
        out
    }

    /// Moving average of eval accuracy over `window` rounds, by row index.
    fn smoothed_accuracy(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let lo = i.saturating_sub(w - 1);
                let slice = &self.rows[lo..=i];
                slice.iter().map(|r| r.eval_accuracy).sum::<f64>() / slice.len() as f64
            })
            .collect()
    }

    /// First round whose smoothed eval accuracy reaches `fraction` of the
    /// run's smoothed maximum.
    pub fn convergence_round(&self, window: usize, fraction: f64) -> Option<u64> {
        if self.rows.is_empty() {
            return None;
        }
        let smoothed = self.smoothed_accuracy(window);
        let peak = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return self.rows.first().map(|r| r.round);
        }
        let target = fraction * peak;
        smoothed
            .iter()
            .position(|&a| a >= target)
            .map(|i| self.rows[i].round)
    }

    /// First round whose raw eval accuracy reaches `target`.
    pub fn first_round_reaching(&self, target: f64) -> Option<u64> {
        self.rows.iter().find(|r| r.eval_accuracy >= target).map(|r| r.round)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: u64, clock: f64, acc: f64) -> MetricsRow {
        MetricsRow {
            round,
            sim_wall_clock_s: clock,
            train_loss: 1.0 / (round + 1) as f64,
            eval_accuracy: acc,
            alpha_used: 1.0,
            guided_flag: false,
            bytes_cloud_to_client: 0,
            bytes_client_to_edge: 24,
            client_mem_bytes: 1000,
        }
    }

    #[test]
    fn push_enforces_ordering() {
        let mut s = MetricsSeries::new();
        s.push(row(0, 0.0, 0.1)).unwrap();
        s.push(row(1, 1.0, 0.2)).unwrap();
        assert!(s.push(row(1, 2.0, 0.3)).is_err());
        assert!(s.push(row(2, 0.5, 0.3)).is_err());
    }

    #[test]
    fn csv_has_versioned_header_and_one_line_per_round() {
        let mut s = MetricsSeries::new();
        s.push(row(0, 0.0, 0.5)).unwrap();
        s.push(row(1, 2.5, 0.75)).unwrap();
        let csv = s.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("1,2.5,"));
    }

    #[test]
    fn convergence_round_uses_smoothed_accuracy() {
        let mut s = MetricsSeries::new();
        let accs = [0.1, 0.2, 0.5, 0.9, 0.9, 0.9, 0.9, 0.9];
        for (i, &a) in accs.iter().enumerate() {
            s.push(row(i as u64, i as f64, a)).unwrap();
        }
        let c = s.convergence_round(5, 0.99).unwrap();
        assert!(c >= 4, "converged too early at {c}");
        assert_eq!(s.first_round_reaching(0.9), Some(3));
    }
}
