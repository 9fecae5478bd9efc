//! Descriptive statistics over per-frame emotion scores, the argmax label
//! histogram, and the per-child affect-polarity summary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::facegraph::{EmotionClass, EmotionDistribution, NUM_CLASSES};
use crate::{Error, Result};

/// One scored frame.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub frame_id: String,
    pub child_id: String,
    pub dist: EmotionDistribution,
}

/// Per-frame softmax scores for a whole run.
#[derive(Debug, Clone, Default)]
pub struct EmotionScoreSeries {
    pub rows: Vec<ScoreRow>,
}

/// Prediction CSV header (analysis input).
pub const PREDICTIONS_CSV_HEADER: &str =
    "frame_id,child_id,angry,disgust,fear,happy,sad,surprise,neutral";

impl EmotionScoreSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column of one class's scores across all frames.
    pub fn class_scores(&self, class: EmotionClass) -> Vec<f64> {
        self.rows.iter().map(|r| r.dist.get(class)).collect()
    }

    pub fn read_csv(path: &Path) -> Result<EmotionScoreSeries> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
        let headers = reader.headers().map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
        let expected: Vec<&str> = PREDICTIONS_CSV_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Csv {
                path: path.into(),
                message: format!(
                    "unexpected header '{}'",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Csv {
                path: path.into(),
                message: format!("row {}: {e}", i + 2),
            })?;
            let mut p = [0.0; NUM_CLASSES];
            for c in 0..NUM_CLASSES {
                p[c] = record[c + 2].parse().map_err(|e| Error::Csv {
                    path: path.into(),
                    message: format!("row {}: field {}: {e}", i + 2, c + 3),
                })?;
            }
            rows.push(ScoreRow {
                frame_id: record[0].to_string(),
                child_id: record[1].to_string(),
                dist: EmotionDistribution::new(p).map_err(|e| Error::Csv {
                    path: path.into(),
                    message: format!("row {}: {e}", i + 2),
                })?,
            });
        }
        Ok(EmotionScoreSeries { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.into(),
            message: e.to_string(),
        })?;
        w.write_record(PREDICTIONS_CSV_HEADER.split(','))
            .map_err(|e| Error::Csv { path: path.into(), message: e.to_string() })?;
        for r in &self.rows {
            let mut record = vec![r.frame_id.clone(), r.child_id.clone()];
            record.extend(r.dist.as_array().iter().map(|v| format!("{v:.12}")));
            w.write_record(&record)
                .map_err(|e| Error::Csv { path: path.into(), message: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub class: EmotionClass,
    pub n: u64,
    pub mean: f64,
    /// Sample (n-1) standard deviation; 0 with `single_observation` set
    /// when n = 1.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub single_observation: bool,
}

/// Quantile by linear interpolation between order statistics over a
/// sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = lo + 1;
    if hi >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-class column statistics across every frame in the series.
pub fn descriptive_stats(series: &EmotionScoreSeries) -> Result<Vec<DescriptiveStats>> {
    if series.is_empty() {
        return Err(Error::EmptyInput("descriptive statistics over an empty series".into()));
    }
    let n = series.len();
    let mut out = Vec::with_capacity(NUM_CLASSES);
    for class in EmotionClass::ALL {
        let mut values = series.class_scores(class);
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean: f64 = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(DescriptiveStats {
            class,
            n: n as u64,
            mean,
            std,
            min: values[0],
            q1: quantile_sorted(&values, 0.25),
            median: quantile_sorted(&values, 0.50),
            q3: quantile_sorted(&values, 0.75),
            max: values[n - 1],
            single_observation: n == 1,
        });
    }
    Ok(out)
}

/// Frame counts by argmax label (lowest-index tie-break). Counts always
/// sum to the number of rows.
pub fn label_histogram(series: &EmotionScoreSeries) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for r in &series.rows {
        counts[r.dist.argmax().index()] += 1;
    }
    counts
}

/// Which polarity set a class belongs to.
pub fn polarity_of(class: EmotionClass) -> Option<Polarity> {
    match class {
        EmotionClass::Happy | EmotionClass::Surprise => Some(Polarity::Positive),
        EmotionClass::Sad | EmotionClass::Angry | EmotionClass::Disgust | EmotionClass::Fear => {
            Some(Polarity::Negative)
        }
        EmotionClass::Neutral => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildPolarity {
    pub child_id: String,
    pub dominant: EmotionClass,
    pub polarity: Polarity,
    /// Summed non-neutral probability mass behind the decision.
    pub non_neutral_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolaritySummary {
    pub positive_fraction: f64,
    pub negative_fraction: f64,
    pub children: Vec<ChildPolarity>,
    /// Children excluded for having zero non-neutral mass.
    pub excluded: Vec<String>,
}

/// Per-child dominant affect: argmax over the child's summed non-neutral
/// class mass (neutral dominates frame counts and would mask polarity).
/// Children with zero non-neutral mass are excluded and flagged.
pub fn polarity_summary(series: &EmotionScoreSeries) -> Result<PolaritySummary> {
    if series.is_empty() {
        return Err(Error::EmptyInput("polarity summary over an empty series".into()));
    }
    let mut per_child: BTreeMap<String, [f64; NUM_CLASSES]> = BTreeMap::new();
    for r in &series.rows {
        let acc = per_child.entry(r.child_id.clone()).or_insert([0.0; NUM_CLASSES]);
        for (i, v) in r.dist.as_array().iter().enumerate() {
            acc[i] += v;
        }
    }
    let mut children = Vec::new();
    let mut excluded = Vec::new();
    for (child_id, mass) in per_child {
        let non_neutral: f64 = (0..NUM_CLASSES - 1).map(|i| mass[i]).sum();
        if non_neutral == 0.0 {
            excluded.push(child_id);
            continue;
        }
        let mut best = 0usize;
        for i in 1..NUM_CLASSES - 1 {
            if mass[i] > mass[best] {
                best = i;
            }
        }
        let dominant = EmotionClass::from_index(best).unwrap();
        children.push(ChildPolarity {
            child_id,
            dominant,
            polarity: polarity_of(dominant).expect("non-neutral class has a polarity"),
            non_neutral_mass: non_neutral,
        });
    }
    let included = children.len();
    if included == 0 {
        return Err(Error::EmptyInput("every child had zero non-neutral mass".into()));
    }
    let positive = children.iter().filter(|c| c.polarity == Polarity::Positive).count();
    Ok(PolaritySummary {
        positive_fraction: positive as f64 / included as f64,
        negative_fraction: (included - positive) as f64 / included as f64,
        children,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(frame: &str, child: &str, p: [f64; 7]) -> ScoreRow {
        ScoreRow {
            frame_id: frame.into(),
            child_id: child.into(),
            dist: EmotionDistribution::new(p).unwrap(),
        }
    }

    #[test]
    fn single_row_stats_flagged() {
        let series = EmotionScoreSeries {
            rows: vec![row("f0", "c0", [0.2, 0.1, 0.1, 0.3, 0.1, 0.1, 0.1])],
        };
        let stats = descriptive_stats(&series).unwrap();
        assert!(stats[0].single_observation);
        assert_abs_diff_eq!(stats[0].mean, 0.2, epsilon = 1e-12);
        assert_eq!(stats[0].std, 0.0);
        assert_abs_diff_eq!(stats[3].median, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn two_row_forced_arithmetic() {
        let series = EmotionScoreSeries {
            rows: vec![
                row("f0", "c0", [0.2, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0]),
                row("f1", "c0", [0.4, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ],
        };
        let stats = descriptive_stats(&series).unwrap();
        assert_abs_diff_eq!(stats[0].mean, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(stats[0].std, 0.1414213562373095, epsilon = 1e-12);
        assert_abs_diff_eq!(stats[0].min, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(stats[0].max, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn random_rows_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<ScoreRow> = (0..100)
            .map(|i| {
                let mut p = [0.0f64; 7];
                let mut s = 0.0;
                for v in p.iter_mut() {
                    *v = rng.random_range(0.001..1.0);
                    s += *v;
                }
                for v in p.iter_mut() {
                    *v /= s;
                }
                row(&format!("f{i}"), "c0", p)
            })
            .collect();
        let series = EmotionScoreSeries { rows };
        let stats = descriptive_stats(&series).unwrap();
        for class in EmotionClass::ALL {
            let vals = series.class_scores(class);
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
            let s = &stats[class.index()];
            assert_abs_diff_eq!(s.mean, mean, epsilon = 1e-9);
            assert_abs_diff_eq!(s.std, var.sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn histogram_counts_sum_and_tie_break() {
        let series = EmotionScoreSeries {
            rows: vec![
                row("f0", "c0", [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
                row("f1", "c0", *EmotionDistribution::uniform().as_array()),
                row("f2", "c0", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            ],
        };
        let h = label_histogram(&series);
        assert_eq!(h.iter().sum::<u64>(), 3);
        assert_eq!(h[EmotionClass::Happy.index()], 1);
        // Uniform row ties; lowest index (angry) wins.
        assert_eq!(h[EmotionClass::Angry.index()], 1);
        assert_eq!(h[EmotionClass::Neutral.index()], 1);

        assert_eq!(label_histogram(&EmotionScoreSeries::default()), [0; 7]);
    }

    #[test]
    fn polarity_single_happy_child() {
        let series = EmotionScoreSeries {
            rows: vec![row("f0", "kid", [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])],
        };
        let s = polarity_summary(&series).unwrap();
        assert_abs_diff_eq!(s.positive_fraction, 1.0, epsilon = 1e-12);
        assert_eq!(s.children.len(), 1);
        assert_eq!(s.children[0].dominant, EmotionClass::Happy);
    }

    #[test]
    fn polarity_hand_enumerated_five_children() {
        // Dominance by summed non-neutral mass, enumerated by hand:
        // c0 happy (pos), c1 sad (neg), c2 surprise (pos), c3 fear (neg),
        // c4 angry (neg) => 2/5 positive.
        let series = EmotionScoreSeries {
            rows: vec![
                row("f0", "c0", [0.1, 0.0, 0.0, 0.5, 0.1, 0.1, 0.2]),
                row("f1", "c0", [0.2, 0.0, 0.0, 0.4, 0.1, 0.1, 0.2]),
                row("f2", "c1", [0.1, 0.0, 0.0, 0.1, 0.6, 0.0, 0.2]),
                row("f3", "c2", [0.0, 0.1, 0.0, 0.2, 0.1, 0.5, 0.1]),
                row("f4", "c3", [0.1, 0.1, 0.6, 0.0, 0.1, 0.0, 0.1]),
                row("f5", "c4", [0.7, 0.0, 0.1, 0.0, 0.1, 0.0, 0.1]),
            ],
        };
        let s = polarity_summary(&series).unwrap();
        assert_eq!(s.children.len(), 5);
        assert_abs_diff_eq!(s.positive_fraction, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(s.negative_fraction, 0.6, epsilon = 1e-12);
        let dom: Vec<EmotionClass> = s.children.iter().map(|c| c.dominant).collect();
        assert_eq!(
            dom,
            vec![
                EmotionClass::Happy,
                EmotionClass::Sad,
                EmotionClass::Surprise,
                EmotionClass::Fear,
                EmotionClass::Angry
            ]
        );
    }

    #[test]
    fn polarity_excludes_pure_neutral_children() {
        let series = EmotionScoreSeries {
            rows: vec![
                row("f0", "c0", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
                row("f1", "c1", [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            ],
        };
        let s = polarity_summary(&series).unwrap();
        assert_eq!(s.excluded, vec!["c0".to_string()]);
        assert_eq!(s.children.len(), 1);
        assert_abs_diff_eq!(s.positive_fraction + s.negative_fraction, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        let series = EmotionScoreSeries {
            rows: vec![
                row("f0", "c0", [0.2, 0.1, 0.1, 0.3, 0.1, 0.1, 0.1]),
                row("f1", "c1", [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            ],
        };
        series.write_csv(&path).unwrap();
        let back = EmotionScoreSeries::read_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.rows[1].child_id, "c1");
        for (a, b) in back.rows[0]
            .dist
            .as_array()
            .iter()
            .zip(series.rows[0].dist.as_array())
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }
}
