//! Per-class precision/recall/F1, overall accuracy, and the confusion
//! matrix. Zero-denominator cases report 0 and absent classes are
//! flagged. Hard labels come from the argmax of the soft targets
//! (lowest-index tie-break).

use serde::{Deserialize, Serialize};

use super::run::Dataset;
use crate::facegraph::{EmotionClass, NUM_CLASSES};
use crate::fusionnet::FusionNet;
use crate::Result;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True-label count for the class.
    pub support: u64,
    /// Set when the class appears in neither labels nor predictions.
    pub absent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub empty: bool,
}

/// Metrics from a 7x7 confusion matrix (rows true, columns predicted).
pub fn compute_metrics(confusion: &[[u64; NUM_CLASSES]; NUM_CLASSES]) -> MetricsReport {
    let total: u64 = confusion.iter().flatten().sum();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c];
        let row: u64 = confusion[c].iter().sum();
        let col: u64 = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: row,
            absent: row == 0 && col == 0,
        });
    }
    let correct: u64 = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64, pc: &[ClassMetrics]| {
        pc.iter().map(f).sum::<f64>() / NUM_CLASSES as f64
    };
    MetricsReport {
        total,
        accuracy: ratio(correct, total),
        macro_precision: mean(|m| m.precision, &per_class),
        macro_recall: mean(|m| m.recall, &per_class),
        macro_f1: mean(|m| m.f1, &per_class),
        per_class,
        confusion: confusion.iter().map(|r| r.to_vec()).collect(),
        empty: total == 0,
    }
}

/// Evaluates the model over a dataset in batches. An empty dataset yields
/// an explicitly flagged empty report.
pub fn evaluate(model: &FusionNet, dataset: &Dataset, batch_size: usize) -> Result<MetricsReport> {
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let n = dataset.len();
    if n == 0 {
        return Ok(compute_metrics(&confusion));
    }
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, graphs, targets) = dataset.gather(chunk);
        let dists = model.predict(&images, &graphs)?;
        for (d, t) in dists.iter().zip(targets.iter()) {
            let true_class = t.dist().argmax().index();
            let pred_class = d.argmax().index();
            confusion[true_class][pred_class] += 1;
        }
    }
    Ok(compute_metrics(&confusion))
}

impl MetricsReport {
    /// Human-readable rendering for report files.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.empty {
            out.push_str("empty_report 1\n");
            return out;
        }
        out.push_str(&format!("total {}\n", self.total));
        out.push_str(&format!("accuracy {:.6}\n", self.accuracy));
        out.push_str(&format!("macro_precision {:.6}\n", self.macro_precision));
        out.push_str(&format!("macro_recall {:.6}\n", self.macro_recall));
        out.push_str(&format!("macro_f1 {:.6}\n", self.macro_f1));
        for (c, m) in EmotionClass::ALL.iter().zip(self.per_class.iter()) {
            out.push_str(&format!(
                "{} precision {:.6} recall {:.6} f1 {:.6} support {}{}\n",
                c.name(),
                m.precision,
                m.recall,
                m.f1,
                m.support,
                if m.absent { " absent" } else { "" }
            ));
        }
        out
    }
}
