use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SanasError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub model_id: String,
    pub accuracy: f64,
    pub mean_flops: f64,
}

impl ParetoPoint {
    pub fn new(model_id: impl Into<String>, accuracy: f64, mean_flops: f64) -> Result<Self> {
        if !accuracy.is_finite() || !mean_flops.is_finite() || mean_flops < 0.0 {
            return Err(SanasError::Input(format!(
                "invalid point ({accuracy}, {mean_flops})"
            )));
        }
        Ok(ParetoPoint {
            model_id: model_id.into(),
            accuracy,
            mean_flops,
        })
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.accuracy >= other.accuracy
            && self.mean_flops <= other.mean_flops
            && (self.accuracy > other.accuracy || self.mean_flops < other.mean_flops)
    }
}

/// Non-dominated points sorted by cost; exact duplicates keep the smallest model id.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    // cost ascending, accuracy descending, then id
    sorted.sort_by(|a, b| {
        a.mean_flops
            .total_cmp(&b.mean_flops)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then(a.model_id.cmp(&b.model_id))
    });
    let mut front: Vec<ParetoPoint> = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    for p in sorted {
        if let Some(last) = front.last() {
            if last.accuracy == p.accuracy && last.mean_flops == p.mean_flops {
                continue;
            }
        }
        // everything earlier is no more expensive; p survives only with a strictly better accuracy
        if p.accuracy > best_acc {
            best_acc = p.accuracy;
            front.push(p.clone());
        }
    }
    front
}

pub fn write_points_csv(path: &Path, points: &[ParetoPoint]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| SanasError::io(path, e))?;
    let mut text = String::from("model_id,accuracy,mean_flops\n");
    for p in points {
        text.push_str(&format!("{},{},{}\n", p.model_id, p.accuracy, p.mean_flops));
    }
    f.write_all(text.as_bytes()).map_err(|e| SanasError::io(path, e))
}
