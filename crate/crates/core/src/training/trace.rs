use std::fmt::Write as _;

use serde::Serialize;

use super::Engine;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_rmse_norm: f64,
    pub val_rmse_norm: f64,
}

/// Per-round normalized RMSE on the training and validation sets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingTrace {
    pub seed: u64,
    pub engine: Engine,
    pub config_digest: String,
    pub records: Vec<RoundRecord>,
}

impl TrainingTrace {
    pub fn new(seed: u64, engine: Engine, config_digest: String) -> Self {
        Self {
            seed,
            engine,
            config_digest,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: RoundRecord) {
        debug_assert!(self.records.last().map_or(true, |r| r.round < record.round));
        self.records.push(record);
    }

    pub fn final_val(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_rmse_norm)
    }

    pub fn best_val(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.val_rmse_norm)
            .min_by(f64::total_cmp)
    }

    /// Median validation score over rounds `first..=last` (inclusive).
    pub fn median_val(&self, first: usize, last: usize) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.round >= first && r.round <= last)
            .map(|r| r.val_rmse_norm)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        let mid = vals.len() / 2;
        Some(if vals.len() % 2 == 1 {
            vals[mid]
        } else {
            (vals[mid - 1] + vals[mid]) / 2.0
        })
    }

    /// `round,train_rmse_norm,val_rmse_norm` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,train_rmse_norm,val_rmse_norm\n");
        for r in &self.records {
            writeln!(out, "{},{},{}", r.round, r.train_rmse_norm, r.val_rmse_norm)
                .expect("writing to a String cannot fail");
        }
        out
    }
}
