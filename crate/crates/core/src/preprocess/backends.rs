//! Pluggable detector / validator / landmarker backends.
//!
//! Real model adapters can implement these traits; the toolkit itself
//! ships deterministic stubs, which are what the tests and the synthetic
//! fixtures run on. The `frame_id` passed to validators and landmarkers
//! is context for scripted stubs; real backends are free to ignore it.

use std::collections::{BTreeMap, BTreeSet};

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BBox, DetectionResult, FrameRecord};
use crate::facegraph::NUM_LANDMARKS;
use crate::{Error, Result};

pub trait FaceDetector: Sync {
    /// All face detections in the frame; empty when no face is found.
    fn detect(&self, frame: &FrameRecord) -> Result<Vec<DetectionResult>>;
}

pub trait FaceValidator: Sync {
    /// Secondary face-presence verdict for a crop. `Err` means the
    /// backend itself failed, which the pipeline counts as no-face with a
    /// distinct diagnostic.
    fn validate(&self, frame_id: &str, crop: &RgbImage) -> Result<bool>;
}

pub trait Landmarker: Sync {
    /// Raw (unnormalized) 468x3 landmark coordinates for a face crop.
    fn landmarks(&self, frame_id: &str, crop: &RgbImage) -> Result<Array2<f64>>;
}

/// Scripted per-frame detection used by the stub detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedDetection {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub confidence: f64,
}

/// Scripted behavior for one frame, keyed by frame id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FrameScript {
    /// Detections to report; `None` means fall back to the default
    /// centered detection, `Some(vec![])` means "no face".
    #[serde(default)]
    pub detections: Option<Vec<ScriptedDetection>>,
    /// Validator verdict override (default: accept).
    #[serde(default)]
    pub validator_rejects: bool,
    /// Simulate a validator backend failure.
    #[serde(default)]
    pub validator_fails: bool,
    /// Replace landmark output with non-finite values.
    #[serde(default)]
    pub poison_landmarks: bool,
}

/// File-loadable behavior table driving all three stubs, so a whole
/// preprocessing run is reproducible from one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubScript {
    #[serde(default)]
    pub frames: BTreeMap<String, FrameScript>,
    /// Confidence of the default centered detection.
    #[serde(default = "default_confidence")]
    pub default_confidence: f64,
}

fn default_confidence() -> f64 {
    0.95
}

impl Default for StubScript {
    fn default() -> Self {
        StubScript {
            frames: BTreeMap::new(),
            default_confidence: default_confidence(),
        }
    }
}

impl StubScript {
    pub fn load(path: &std::path::Path) -> Result<StubScript> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("stub script {}: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("stub script: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic detector stub: scripted detections when present,
/// otherwise one centered box covering half the frame.
pub struct StubDetector {
    pub script: StubScript,
}

impl FaceDetector for StubDetector {
    fn detect(&self, frame: &FrameRecord) -> Result<Vec<DetectionResult>> {
        let (img_w, img_h) = frame.image.dimensions();
        let scripted = self.script.frames.get(&frame.frame_id).and_then(|f| f.detections.as_ref());
        if let Some(dets) = scripted {
            let mut out = Vec::new();
            for d in dets {
                out.push(DetectionResult {
                    bbox: BBox::new_clamped(d.x, d.y, d.w, d.h, img_w, img_h)?,
                    confidence: d.confidence,
                    detector_id: "stub".into(),
                });
            }
            return Ok(out);
        }
        let w = (img_w / 2).max(1);
        let h = (img_h / 2).max(1);
        Ok(vec![DetectionResult {
            bbox: BBox::new_clamped(
                (img_w / 4) as i64,
                (img_h / 4) as i64,
                w as i64,
                h as i64,
                img_w,
                img_h,
            )?,
            confidence: self.script.default_confidence,
            detector_id: "stub".into(),
        }])
    }
}

/// Deterministic validator stub driven by the same script.
pub struct StubValidator {
    pub script: StubScript,
}

impl FaceValidator for StubValidator {
    fn validate(&self, frame_id: &str, _crop: &RgbImage) -> Result<bool> {
        match self.script.frames.get(frame_id) {
            Some(f) if f.validator_fails => Err(Error::Backend {
                backend: "stub-validator".into(),
                message: format!("scripted failure for frame '{frame_id}'"),
            }),
            Some(f) => Ok(!f.validator_rejects),
            None => Ok(true),
        }
    }
}

/// Validator with a fixed verdict, handy in tests.
pub struct FixedValidator(pub bool);

impl FaceValidator for FixedValidator {
    fn validate(&self, _frame_id: &str, _crop: &RgbImage) -> Result<bool> {
        Ok(self.0)
    }
}

/// Validator stub simulating a rejecting backend set, by frame id.
pub struct RejectSetValidator(pub BTreeSet<String>);

impl FaceValidator for RejectSetValidator {
    fn validate(&self, frame_id: &str, _crop: &RgbImage) -> Result<bool> {
        Ok(!self.0.contains(frame_id))
    }
}

/// Deterministic landmarker stub: coordinates derived from a SHA-256
/// stream over the frame id, guaranteed finite with non-degenerate
/// extents (and optionally poisoned via the script).
pub struct StubLandmarker {
    pub script: StubScript,
}

fn hash_stream_coords(frame_id: &str) -> Array2<f64> {
    let mut coords = Array2::zeros((NUM_LANDMARKS, 3));
    let mut counter: u64 = 0;
    let mut pool: Vec<u8> = Vec::with_capacity(32);
    let next = |pool: &mut Vec<u8>, counter: &mut u64| -> f64 {
        if pool.is_empty() {
            let mut hasher = Sha256::new();
            hasher.update(frame_id.as_bytes());
            hasher.update(counter.to_le_bytes());
            *counter += 1;
            pool.extend_from_slice(&hasher.finalize());
        }
        let b = [
            pool.pop().unwrap(),
            pool.pop().unwrap(),
            pool.pop().unwrap(),
            pool.pop().unwrap(),
        ];
        u32::from_le_bytes(b) as f64 / u32::MAX as f64
    };
    for mut row in coords.rows_mut() {
        for v in row.iter_mut() {
            *v = next(&mut pool, &mut counter) * 200.0 - 100.0;
        }
    }
    // Guarantee non-degenerate extents on every axis.
    for a in 0..3 {
        coords[[2, a]] = -150.0;
        coords[[3, a]] = 150.0;
    }
    coords
}

impl Landmarker for StubLandmarker {
    fn landmarks(&self, frame_id: &str, _crop: &RgbImage) -> Result<Array2<f64>> {
        let mut coords = hash_stream_coords(frame_id);
        if let Some(f) = self.script.frames.get(frame_id) {
            if f.poison_landmarks {
                coords[[0, 0]] = f64::NAN;
            }
        }
        Ok(coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_landmarker_is_deterministic_and_finite() {
        let lm = StubLandmarker { script: StubScript::default() };
        let crop = RgbImage::new(4, 4);
        let a = lm.landmarks("frame_a", &crop).unwrap();
        let b = lm.landmarks("frame_a", &crop).unwrap();
        let c = lm.landmarks("frame_b", &crop).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a.nrows(), NUM_LANDMARKS);
    }

    #[test]
    fn stub_detector_defaults_to_centered_box() {
        let det = StubDetector { script: StubScript::default() };
        let frame = FrameRecord {
            frame_id: "f".into(),
            source_video: "v".into(),
            timestamp_s: 0.0,
            image: RgbImage::new(128, 128),
        };
        let dets = det.detect(&frame).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, BBox { x: 32, y: 32, w: 64, h: 64 });
        assert!((dets[0].confidence - 0.95).abs() < 1e-12);
    }

    #[test]
    fn script_roundtrips_through_json() {
        let mut script = StubScript::default();
        script.frames.insert(
            "f1".into(),
            FrameScript {
                detections: Some(vec![]),
                validator_rejects: true,
                ..FrameScript::default()
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        script.save(&path).unwrap();
        let loaded = StubScript::load(&path).unwrap();
        assert!(loaded.frames["f1"].validator_rejects);
        assert_eq!(loaded.frames["f1"].detections, Some(vec![]));
    }
}
