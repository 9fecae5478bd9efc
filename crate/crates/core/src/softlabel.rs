//! Calibrated soft labels from two upstream emotion scorers.
//!
//! Per frame the pipeline is: weighted fusion of the two scorer
//! distributions, a multiplicative penalty on the neutral entry,
//! renormalization (softmax by default, plain sum-normalization behind a
//! config switch), then temperature sharpening. All stages map valid
//! distributions to valid distributions and are pure functions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::facegraph::{EmotionClass, EmotionDistribution, NUM_CLASSES};
use crate::{Error, Result};

/// Version tag written into the calibrated-label CSV provenance column.
pub const CALIB_VERSION: &str = "calib-v1";

/// One scorer's per-frame output.
#[derive(Debug, Clone)]
pub struct ScorerOutput {
    pub scorer_id: String,
    pub frame_id: String,
    pub dist: EmotionDistribution,
}

/// How the adjusted vector is renormalized after the neutral penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Renorm {
    /// Exponentiate each entry and divide by the sum. Note this is not the
    /// identity on valid distributions.
    #[default]
    Softmax,
    /// Divide by the sum.
    Sum,
}

/// Calibration parameters. Scorer roles are bound by id, not by argument
/// position: the scorer whose id equals `fer_scorer_id` receives
/// `w_fer_role`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub w_fer_role: f64,
    pub w_deepface_role: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub renorm: Renorm,
    pub fer_scorer_id: String,
    pub deepface_scorer_id: String,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            w_fer_role: 2.0 / 3.0,
            w_deepface_role: 1.0 / 3.0,
            gamma: 0.7,
            temperature: 0.7,
            renorm: Renorm::Softmax,
            fer_scorer_id: "fer".into(),
            deepface_scorer_id: "deepface".into(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_fer_role < 0.0 || self.w_deepface_role < 0.0 {
            return Err(Error::Config("scorer weights must be non-negative".into()));
        }
        let sum = self.w_fer_role + self.w_deepface_role;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("scorer weights sum to {sum}, expected 1")));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature = {} must be strictly positive",
                self.temperature
            )));
        }
        if self.fer_scorer_id == self.deepface_scorer_id {
            return Err(Error::Config("scorer role ids must differ".into()));
        }
        Ok(())
    }
}

fn to_distribution(p: [f64; NUM_CLASSES], stage: &str) -> Result<EmotionDistribution> {
    EmotionDistribution::new(p)
        .map_err(|e| Error::Numerical(format!("{stage} produced an invalid distribution: {e}")))
}

/// Weighted fusion of the two scorer distributions. Inputs must refer to
/// the same frame; the role weights attach by scorer id.
pub fn fuse(a: &ScorerOutput, b: &ScorerOutput, cfg: &CalibrationConfig) -> Result<EmotionDistribution> {
    cfg.validate()?;
    if a.frame_id != b.frame_id {
        return Err(Error::Pairing(format!(
            "scorer outputs refer to different frames: '{}' vs '{}'",
            a.frame_id, b.frame_id
        )));
    }
    let weight_of = |s: &ScorerOutput| -> Result<f64> {
        if s.scorer_id == cfg.fer_scorer_id {
            Ok(cfg.w_fer_role)
        } else if s.scorer_id == cfg.deepface_scorer_id {
            Ok(cfg.w_deepface_role)
        } else {
            Err(Error::Config(format!(
                "scorer id '{}' matches neither configured role ('{}', '{}')",
                s.scorer_id, cfg.fer_scorer_id, cfg.deepface_scorer_id
            )))
        }
    };
    let (wa, wb) = (weight_of(a)?, weight_of(b)?);
    if a.scorer_id == b.scorer_id {
        return Err(Error::Pairing(format!(
            "both outputs come from scorer '{}'",
            a.scorer_id
        )));
    }
    let mut p = [0.0; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        p[i] = wa * a.dist.as_array()[i] + wb * b.dist.as_array()[i];
    }
    to_distribution(p, "fuse")
}

/// Scales the neutral entry by `gamma`, then renormalizes. The default
/// softmax renormalization exponentiates each entry and divides by the
/// sum; it is not the identity even for gamma = 1.
pub fn neutral_penalty(
    p: &EmotionDistribution,
    gamma: f64,
    renorm: Renorm,
) -> Result<EmotionDistribution> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma = {gamma} outside (0, 1]")));
    }
    let mut q = *p.as_array();
    q[EmotionClass::Neutral.index()] *= gamma;
    let q = match renorm {
        Renorm::Softmax => {
            let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut e = [0.0; NUM_CLASSES];
            for i in 0..NUM_CLASSES {
                e[i] = (q[i] - m).exp();
            }
            let s: f64 = e.iter().sum();
            e.map(|v| v / s)
        }
        Renorm::Sum => {
            let s: f64 = q.iter().sum();
            q.map(|v| v / s)
        }
    };
    to_distribution(q, "neutral_penalty")
}

/// Raises each entry to the power 1/T and renormalizes. T < 1 sharpens
/// (entropy does not increase); T = 1 is sum-renormalization, the
/// identity on valid distributions.
pub fn temperature_sharpen(p: &EmotionDistribution, temperature: f64) -> Result<EmotionDistribution> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature = {temperature} must be strictly positive"
        )));
    }
    let inv_t = 1.0 / temperature;
    let mut w = [0.0; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        w[i] = p.as_array()[i].powf(inv_t);
    }
    let s: f64 = w.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Numerical(format!(
            "temperature sharpening collapsed the distribution (sum = {s})"
        )));
    }
    to_distribution(w.map(|v| v / s), "temperature_sharpen")
}

/// Full calibration: fuse, neutral penalty with renormalization, then
/// temperature sharpening, in that order.
pub fn calibrate(
    a: &ScorerOutput,
    b: &ScorerOutput,
    cfg: &CalibrationConfig,
) -> Result<EmotionDistribution> {
    let fused = fuse(a, b, cfg)?;
    let penalized = neutral_penalty(&fused, cfg.gamma, cfg.renorm)?;
    temperature_sharpen(&penalized, cfg.temperature)
}

/// CSV header shared by the scorer and calibrated-label files (the latter
/// appends `calib_version`).
pub const SCORER_CSV_HEADER: &str = "frame_id,angry,disgust,fear,happy,sad,surprise,neutral";

/// Reads a scorer CSV (`frame_id, angry, ..., neutral`) into frame order
/// and a lookup map. Rows must parse as valid distributions.
pub fn read_scorer_csv(path: &Path, scorer_id: &str) -> Result<Vec<ScorerOutput>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;
    let expected: Vec<&str> = SCORER_CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Csv {
            path: path.into(),
            message: format!("unexpected header '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.into(),
            message: format!("row {}: {e}", i + 2),
        })?;
        if record.len() != NUM_CLASSES + 1 {
            return Err(Error::Csv {
                path: path.into(),
                message: format!("row {}: expected {} fields", i + 2, NUM_CLASSES + 1),
            });
        }
        let frame_id = record[0].to_string();
        let mut p = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            p[c] = record[c + 1].parse().map_err(|e| Error::Csv {
                path: path.into(),
                message: format!("row {}: field {}: {e}", i + 2, c + 2),
            })?;
        }
        let dist = EmotionDistribution::new(p).map_err(|e| Error::Csv {
            path: path.into(),
            message: format!("row {} ('{frame_id}'): {e}", i + 2),
        })?;
        out.push(ScorerOutput {
            scorer_id: scorer_id.to_string(),
            frame_id,
            dist,
        });
    }
    Ok(out)
}

/// Calibrates two scorer CSVs row by row (paired on frame_id) and writes
/// the calibrated CSV with the provenance column. `frames` fixes the
/// output row order; every requested frame must be present in both
/// scorer files.
pub fn calibrate_csv(
    fer_rows: &[ScorerOutput],
    deepface_rows: &[ScorerOutput],
    frames: &[String],
    cfg: &CalibrationConfig,
    out_path: &Path,
) -> Result<usize> {
    cfg.validate()?;
    let index =
        |rows: &[ScorerOutput]| -> BTreeMap<String, EmotionDistribution> {
            rows.iter().map(|r| (r.frame_id.clone(), r.dist)).collect()
        };
    let fer = index(fer_rows);
    let df = index(deepface_rows);

    let mut writer = csv::Writer::from_path(out_path).map_err(|e| Error::Csv {
        path: out_path.into(),
        message: e.to_string(),
    })?;
    let mut header: Vec<String> = SCORER_CSV_HEADER.split(',').map(String::from).collect();
    header.push("calib_version".into());
    writer.write_record(&header).map_err(|e| Error::Csv {
        path: out_path.into(),
        message: e.to_string(),
    })?;

    let mut written = 0usize;
    for frame_id in frames {
        let (pa, pb) = match (fer.get(frame_id), df.get(frame_id)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Integrity(format!(
                    "frame '{frame_id}' missing from at least one scorer CSV"
                )))
            }
        };
        let a = ScorerOutput {
            scorer_id: cfg.fer_scorer_id.clone(),
            frame_id: frame_id.clone(),
            dist: *pa,
        };
        let b = ScorerOutput {
            scorer_id: cfg.deepface_scorer_id.clone(),
            frame_id: frame_id.clone(),
            dist: *pb,
        };
        let cal = calibrate(&a, &b, cfg)?;
        let mut record = vec![frame_id.clone()];
        record.extend(cal.as_array().iter().map(|v| format!("{v:.12}")));
        record.push(CALIB_VERSION.into());
        writer.write_record(&record).map_err(|e| Error::Csv {
            path: out_path.into(),
            message: e.to_string(),
        })?;
        written += 1;
    }
    writer.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn out(id: &str, frame: &str, p: [f64; 7]) -> ScorerOutput {
        ScorerOutput {
            scorer_id: id.into(),
            frame_id: frame.into(),
            dist: EmotionDistribution::new(p).unwrap(),
        }
    }

    fn random_dist(rng: &mut ChaCha8Rng) -> [f64; 7] {
        let mut p = [0.0; 7];
        let mut s = 0.0;
        for v in p.iter_mut() {
            *v = rng.random_range(0.0..1.0f64).max(1e-9);
            s += *v;
        }
        p.map(|v| v / s)
    }

    // Independent arithmetic oracle for the full calibration chain.
    fn calibrate_oracle(pa: [f64; 7], pb: [f64; 7], wa: f64, gamma: f64, t: f64) -> [f64; 7] {
        let mut p = [0.0; 7];
        for i in 0..7 {
            p[i] = wa * pa[i] + (1.0 - wa) * pb[i];
        }
        p[6] *= gamma;
        let e = p.map(f64::exp);
        let s: f64 = e.iter().sum();
        let p = e.map(|v| v / s);
        let w = p.map(|v| v.powf(1.0 / t));
        let s: f64 = w.iter().sum();
        w.map(|v| v / s)
    }

    #[test]
    fn fuse_identical_inputs_is_identity() {
        let cfg = CalibrationConfig::default();
        let p = [0.1, 0.2, 0.1, 0.3, 0.1, 0.1, 0.1];
        let a = out("fer", "f0", p);
        let b = out("deepface", "f0", p);
        let fused = fuse(&a, &b, &cfg).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(fused.as_array()[i], p[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn fuse_one_hot_weighting_forced() {
        let cfg = CalibrationConfig::default();
        let happy = EmotionDistribution::one_hot(EmotionClass::Happy);
        let sad = EmotionDistribution::one_hot(EmotionClass::Sad);
        let a = out("fer", "f0", *happy.as_array());
        let b = out("deepface", "f0", *sad.as_array());
        let fused = fuse(&a, &b, &cfg).unwrap();
        assert_abs_diff_eq!(fused.get(EmotionClass::Happy), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.get(EmotionClass::Sad), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.get(EmotionClass::Angry), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fuse_binds_weights_by_scorer_id_not_position() {
        let cfg = CalibrationConfig::default();
        let happy = EmotionDistribution::one_hot(EmotionClass::Happy);
        let sad = EmotionDistribution::one_hot(EmotionClass::Sad);
        // Swapped argument order: deepface first.
        let b = out("deepface", "f0", *sad.as_array());
        let a = out("fer", "f0", *happy.as_array());
        let fused = fuse(&b, &a, &cfg).unwrap();
        assert_abs_diff_eq!(fused.get(EmotionClass::Happy), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fuse_rejects_mismatched_frames_and_bad_weights() {
        let cfg = CalibrationConfig::default();
        let a = out("fer", "f0", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = out("deepface", "f1", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(fuse(&a, &b, &cfg), Err(Error::Pairing(_))));

        let bad = CalibrationConfig {
            w_fer_role: 0.5,
            w_deepface_role: 0.6,
            ..CalibrationConfig::default()
        };
        let b2 = out("deepface", "f0", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(fuse(&a, &b2, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn fuse_matches_weighted_sum_oracle() {
        let cfg = CalibrationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pa = random_dist(&mut rng);
            let pb = random_dist(&mut rng);
            let fused = fuse(&out("fer", "f", pa), &out("deepface", "f", pb), &cfg).unwrap();
            for i in 0..7 {
                let want = (2.0 / 3.0) * pa[i] + (1.0 / 3.0) * pb[i];
                assert_abs_diff_eq!(fused.as_array()[i], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn neutral_penalty_gamma_one_is_softmax_not_identity() {
        let p = EmotionDistribution::new([0.4, 0.3, 0.1, 0.05, 0.05, 0.05, 0.05]).unwrap();
        let q = neutral_penalty(&p, 1.0, Renorm::Softmax).unwrap();
        // Softmax of a probability vector: strictly different from p here.
        assert!((q.as_array()[0] - 0.4).abs() > 1e-3);
        let e: Vec<f64> = p.as_array().iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for i in 0..7 {
            assert_abs_diff_eq!(q.as_array()[i], e[i] / s, epsilon = 1e-12);
        }
    }

    #[test]
    fn neutral_penalty_uniform_frozen_values() {
        // Frozen from the scripted softmax oracle.
        let q = neutral_penalty(&EmotionDistribution::uniform(), 0.7, Renorm::Softmax).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(q.as_array()[i], 0.143718463121523, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(q.as_array()[6], 0.137689221270863, epsilon = 1e-12);
        assert!(q.get(EmotionClass::Neutral) < 1.0 / 7.0);
        assert!(q.as_array()[0] > 1.0 / 7.0);
    }

    #[test]
    fn neutral_penalty_keeps_zero_neutral_minimal() {
        let p = EmotionDistribution::new([0.3, 0.2, 0.2, 0.1, 0.1, 0.1, 0.0]).unwrap();
        let q = neutral_penalty(&p, 0.7, Renorm::Softmax).unwrap();
        let min = q.as_array().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(q.get(EmotionClass::Neutral) <= min + 1e-15);
    }

    #[test]
    fn temperature_fixed_points_and_frozen_case() {
        let u = EmotionDistribution::uniform();
        let q = temperature_sharpen(&u, 0.4).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(q.as_array()[i], 1.0 / 7.0, epsilon = 1e-12);
        }

        let hot = EmotionDistribution::one_hot(EmotionClass::Fear);
        let q = temperature_sharpen(&hot, 0.7).unwrap();
        assert_eq!(q, hot);

        let p = EmotionDistribution::new([0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let q = temperature_sharpen(&p, 0.7).unwrap();
        // Frozen from the power-then-normalize oracle.
        assert_abs_diff_eq!(q.as_array()[0], 0.640891560792150, epsilon = 1e-12);
        assert_abs_diff_eq!(q.as_array()[1], 0.359108439207850, epsilon = 1e-12);
        assert!(q.as_array()[0] > 0.6);
    }

    #[test]
    fn calibrate_uniform_frozen_values() {
        let cfg = CalibrationConfig::default();
        let u = *EmotionDistribution::uniform().as_array();
        let c = calibrate(&out("fer", "f", u), &out("deepface", "f", u), &cfg).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(c.as_array()[i], 0.144079512239752, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(c.as_array()[6], 0.135522926561485, epsilon = 1e-12);
        assert!(c.as_array()[6] < c.as_array()[0]);
    }

    #[test]
    fn calibrate_gamma_one_t_one_preserves_argmax_of_one_hot() {
        let cfg = CalibrationConfig {
            gamma: 1.0,
            temperature: 1.0,
            ..CalibrationConfig::default()
        };
        let hot = *EmotionDistribution::one_hot(EmotionClass::Surprise).as_array();
        let c = calibrate(&out("fer", "f", hot), &out("deepface", "f", hot), &cfg).unwrap();
        assert_eq!(c.argmax(), EmotionClass::Surprise);
    }

    #[test]
    fn calibrate_matches_composed_oracle_on_random_pairs() {
        let cfg = CalibrationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let pa = random_dist(&mut rng);
            let pb = random_dist(&mut rng);
            let got = calibrate(&out("fer", "f", pa), &out("deepface", "f", pb), &cfg).unwrap();
            let want = calibrate_oracle(pa, pb, 2.0 / 3.0, 0.7, 0.7);
            for i in 0..7 {
                assert_abs_diff_eq!(got.as_array()[i], want[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn csv_roundtrip_and_missing_frame_error() {
        let dir = tempfile::tempdir().unwrap();
        let fer_path = dir.path().join("fer.csv");
        let df_path = dir.path().join("deepface.csv");
        std::fs::write(
            &fer_path,
            "frame_id,angry,disgust,fear,happy,sad,surprise,neutral\nf0,1,0,0,0,0,0,0\nf1,0,0,0,1,0,0,0\n",
        )
        .unwrap();
        std::fs::write(
            &df_path,
            "frame_id,angry,disgust,fear,happy,sad,surprise,neutral\nf0,0,0,0,0,0,0,1\nf1,0,0,0,1,0,0,0\n",
        )
        .unwrap();
        let fer = read_scorer_csv(&fer_path, "fer").unwrap();
        let df = read_scorer_csv(&df_path, "deepface").unwrap();
        assert_eq!(fer.len(), 2);

        let out_path = dir.path().join("labels.csv");
        let cfg = CalibrationConfig::default();
        let frames = vec!["f0".to_string(), "f1".to_string()];
        let n = calibrate_csv(&fer, &df, &frames, &cfg, &out_path).unwrap();
        assert_eq!(n, 2);
        let text = std::fs::read_to_string(&out_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "frame_id,angry,disgust,fear,happy,sad,surprise,neutral,calib_version"
        );
        assert!(text.contains(CALIB_VERSION));

        let missing = vec!["f0".to_string(), "f2".to_string()];
        assert!(matches!(
            calibrate_csv(&fer, &df, &missing, &cfg, &out_path),
            Err(Error::Integrity(_))
        ));
    }

    proptest! {
        #[test]
        fn stages_preserve_validity_and_fuse_is_linear(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pa = random_dist(&mut rng);
            let pb = random_dist(&mut rng);
            let pc = random_dist(&mut rng);
            let alpha: f64 = rng.random_range(0.0..1.0);
            let cfg = CalibrationConfig::default();

            // Validity through every stage.
            let fused = fuse(&out("fer", "f", pa), &out("deepface", "f", pb), &cfg).unwrap();
            let pen = neutral_penalty(&fused, cfg.gamma, cfg.renorm).unwrap();
            let sharp = temperature_sharpen(&pen, cfg.temperature).unwrap();
            for d in [&fused, &pen, &sharp] {
                let s: f64 = d.as_array().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(d.as_array().iter().all(|&v| v >= 0.0));
            }

            // Linearity of fuse in its first argument.
            let mut mix = [0.0; 7];
            for i in 0..7 {
                mix[i] = alpha * pa[i] + (1.0 - alpha) * pc[i];
            }
            let f_mix = fuse(&out("fer", "f", mix), &out("deepface", "f", pb), &cfg).unwrap();
            let f_a = fuse(&out("fer", "f", pa), &out("deepface", "f", pb), &cfg).unwrap();
            let f_c = fuse(&out("fer", "f", pc), &out("deepface", "f", pb), &cfg).unwrap();
            for i in 0..7 {
                let want = alpha * f_a.as_array()[i] + (1.0 - alpha) * f_c.as_array()[i];
                prop_assert!((f_mix.as_array()[i] - want).abs() < 1e-12);
            }
        }

        #[test]
        fn neutral_rank_never_improves_and_nonneutral_argmax_stable(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
            let p = random_dist(&mut rng);
            let d = EmotionDistribution::new(p).unwrap();
            let q = neutral_penalty(&d, 0.7, Renorm::Softmax).unwrap();

            let rank = |v: &[f64; 7]| v.iter().filter(|&&x| x > v[6]).count();
            prop_assert!(rank(q.as_array()) >= rank(d.as_array()));

            let argmax_nonneutral = |v: &[f64; 7]| {
                (0..6).fold(0usize, |best, i| if v[i] > v[best] { i } else { best })
            };
            prop_assert_eq!(
                argmax_nonneutral(d.as_array()),
                argmax_nonneutral(q.as_array())
            );
        }

        #[test]
        fn sharpening_never_shrinks_spread_and_t1_is_identity(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(131).wrapping_add(3));
            let p = random_dist(&mut rng);
            let d = EmotionDistribution::new(p).unwrap();

            let spread = |v: &[f64; 7]| {
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - v.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            let q = temperature_sharpen(&d, 0.7).unwrap();
            prop_assert!(spread(q.as_array()) >= spread(d.as_array()) - 1e-12);

            let same = temperature_sharpen(&d, 1.0).unwrap();
            for i in 0..7 {
                prop_assert!((same.as_array()[i] - d.as_array()[i]).abs() < 1e-12);
            }
        }
    }
}
