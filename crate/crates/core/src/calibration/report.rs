use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::model::ModuleId;

use super::ValidationResult;

/// Modules count as accurate strictly below these.
pub const RMSE_TARGET_N: f64 = 0.4;
pub const WORST_TARGET_PCT_FSO: f64 = 5.0;

/// Results built from fewer trials than this are flagged low-confidence.
pub const LOW_CONFIDENCE_TRIALS: usize = 10;

/// Fixed-width histogram over `[lo, hi)`; values at or above `hi` land in
/// `overflow`, values below `lo` in `underflow`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn fixed(lo: f64, hi: f64, bins: usize) -> Self {
        // lo + (hi - lo) * i / n keeps every edge the correctly rounded
        // decimal when the endpoints are exact.
        let edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Histogram {
            edges,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    /// RMSE bins: 0 to 1 N in 0.05 N steps.
    pub fn rmse() -> Self {
        Histogram::fixed(0.0, 1.0, 20)
    }

    /// Worst-error bins: 0 to 10 % FSO in 0.5 % steps.
    pub fn worst_pct() -> Self {
        Histogram::fixed(0.0, 10.0, 20)
    }

    pub fn add(&mut self, v: f64) {
        let n = self.counts.len();
        if v < self.edges[0] {
            self.underflow += 1;
        } else if v >= self.edges[n] || v.is_nan() {
            self.overflow += 1;
        } else {
            let i = self.edges.partition_point(|&e| e <= v) - 1;
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// `bin_lo,bin_hi,count` rows; overflow appears as a final row with an
    /// `inf` upper edge.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:.2},{:.2},{}", self.edges[i], self.edges[i + 1], c).unwrap();
        }
        writeln!(out, "{:.2},inf,{}", self.edges[self.counts.len()], self.overflow).unwrap();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetReport {
    pub results: Vec<ValidationResult>,
    pub fraction_rmse_under_0p4: f64,
    pub fraction_worst_under_5pct: f64,
    pub rmse_histogram: Histogram,
    pub worst_histogram: Histogram,
    /// Modules with no result.
    pub missing: Vec<ModuleId>,
    pub low_confidence: bool,
}

impl FleetReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// Key-value summary, one `key = value` per line.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let n = self.results.len();
        let mean_rmse = if n > 0 {
            self.results.iter().map(|r| r.rmse).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let max_worst = self
            .results
            .iter()
            .map(|r| r.worst_error_pct_fso)
            .fold(0.0, f64::max);
        writeln!(out, "modules = {n}").unwrap();
        writeln!(out, "complete = {}", self.is_complete()).unwrap();
        let missing: Vec<String> = self.missing.iter().map(|m| format!("{}:{}", m.fret(), m.string())).collect();
        writeln!(out, "missing = {}", missing.join(" ")).unwrap();
        writeln!(out, "low_confidence = {}", self.low_confidence).unwrap();
        writeln!(out, "rmse_target_n = {RMSE_TARGET_N}").unwrap();
        writeln!(out, "worst_target_pct_fso = {WORST_TARGET_PCT_FSO}").unwrap();
        writeln!(out, "fraction_rmse_under_0p4 = {:.6}", self.fraction_rmse_under_0p4).unwrap();
        writeln!(out, "fraction_worst_under_5pct = {:.6}", self.fraction_worst_under_5pct).unwrap();
        writeln!(out, "mean_rmse_n = {mean_rmse:.6}").unwrap();
        writeln!(out, "max_worst_pct_fso = {max_worst:.6}").unwrap();
        out
    }
}

/// Summarizes per-module validation against the accuracy targets.
/// Fractions are over the modules present and use strict inequality.
pub fn fleet_report(results: &[ValidationResult]) -> FleetReport {
    let present: BTreeSet<ModuleId> = results.iter().map(|r| r.module).collect();
    let missing = ModuleId::all().filter(|m| !present.contains(m)).collect();
    let mut rmse_histogram = Histogram::rmse();
    let mut worst_histogram = Histogram::worst_pct();
    for r in results {
        rmse_histogram.add(r.rmse);
        worst_histogram.add(r.worst_error_pct_fso);
    }
    let fraction = |pred: &dyn Fn(&ValidationResult) -> bool| {
        if results.is_empty() {
            0.0
        } else {
            results.iter().filter(|r| pred(r)).count() as f64 / results.len() as f64
        }
    };
    FleetReport {
        fraction_rmse_under_0p4: fraction(&|r| r.rmse < RMSE_TARGET_N),
        fraction_worst_under_5pct: fraction(&|r| r.worst_error_pct_fso < WORST_TARGET_PCT_FSO),
        rmse_histogram,
        worst_histogram,
        missing,
        low_confidence: results.iter().any(|r| r.n_trials < LOW_CONFIDENCE_TRIALS),
        results: results.to_vec(),
    }
}
