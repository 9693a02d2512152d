use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One evaluation checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sim_seconds: f64,
    pub accuracy: f64,
    pub mean_len: f64,
    pub mean_reward: f64,
    pub iter: usize,
}

/// Evaluation checkpoints against simulated wall-clock, strictly increasing
/// in time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a curve from `(seconds, accuracy)` pairs; other columns are 0.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut curve = Self::new();
        for (i, &(sim_seconds, accuracy)) in pairs.iter().enumerate() {
            curve.push(CurvePoint { sim_seconds, accuracy, mean_len: 0.0, mean_reward: 0.0, iter: i })?;
        }
        Ok(curve)
    }

    pub fn push(&mut self, point: CurvePoint) -> Result<()> {
        if !point.sim_seconds.is_finite() {
            return invalid("curve time must be finite");
        }
        if let Some(last) = self.points.last() {
            if point.sim_seconds <= last.sim_seconds {
                return invalid(format!(
                    "curve time must strictly increase ({} after {})",
                    point.sim_seconds, last.sim_seconds
                ));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn peak_accuracy(&self) -> Option<f64> {
        self.points.iter().map(|p| p.accuracy).reduce(f64::max)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.points.last().map(|p| p.accuracy)
    }

    /// Time of the first checkpoint whose accuracy is at least `target`.
    pub fn time_to_reach(&self, target: f64) -> Option<f64> {
        self.points.iter().find(|p| p.accuracy >= target).map(|p| p.sim_seconds)
    }

    pub const CSV_HEADER: [&'static str; 5] = ["sim_seconds", "accuracy", "mean_len", "mean_reward", "iter"];

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for p in &self.points {
            w.write_record([
                p.sim_seconds.to_string(),
                p.accuracy.to_string(),
                p.mean_len.to_string(),
                p.mean_reward.to_string(),
                p.iter.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut curve = Self::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            curve.push(row?)?;
        }
        Ok(curve)
    }
}
