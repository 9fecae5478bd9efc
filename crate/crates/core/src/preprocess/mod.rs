//! Quality-gated face extraction from raw frames.
//!
//! The per-frame pipeline is: blur gate, detection, confidence/size gate,
//! padded secondary validation, crop-resize to 224x224, landmark
//! extraction and normalization. Detector, validator and landmarker are
//! pluggable backends; deterministic stubs live in [`backends`].

pub mod backends;
mod pipeline;

pub use pipeline::{run_pipeline, Manifest, ManifestEntry, PipelineOutput, LANDMARK_CSV_COLUMNS};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::facegraph::{EmotionDistribution, FaceGraph};
use crate::{Error, Result};

/// Side length of persisted face crops.
pub const CROP_SIZE: u32 = 224;

/// Thresholds for the detection gates and the blur filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateConfig {
    /// Laplacian-variance threshold; frames scoring below are blurry.
    pub blur_threshold: f64,
    /// Minimum bounding-box side in pixels (inclusive accept).
    pub min_face: u32,
    /// Minimum detector confidence (inclusive accept).
    pub min_confidence: f64,
    /// Fractional padding per side applied only during validation.
    pub validation_padding: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            blur_threshold: 25.0,
            min_face: 30,
            min_confidence: 0.70,
            validation_padding: 0.20,
        }
    }
}

/// A raw frame queued for processing.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: String,
    pub source_video: String,
    pub timestamp_s: f64,
    pub image: RgbImage,
}

/// Axis-aligned pixel bounding box, clamped to image bounds on
/// construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// Clamps raw coordinates into an image of the given size. Fails when
    /// nothing of the box remains inside the image.
    pub fn new_clamped(x: i64, y: i64, w: i64, h: i64, img_w: u32, img_h: u32) -> Result<BBox> {
        let x0 = x.clamp(0, img_w as i64);
        let y0 = y.clamp(0, img_h as i64);
        let x1 = (x + w).clamp(0, img_w as i64);
        let y1 = (y + h).clamp(0, img_h as i64);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Shape(format!(
                "bbox ({x}, {y}, {w}, {h}) lies outside a {img_w}x{img_h} image"
            )));
        }
        Ok(BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }

    /// Expands by `fraction` of the box size on every side, clamped to
    /// the image. Used only for validation; the stored box is unchanged.
    pub fn padded(&self, fraction: f64, img_w: u32, img_h: u32) -> BBox {
        let px = (self.w as f64 * fraction).round() as i64;
        let py = (self.h as f64 * fraction).round() as i64;
        BBox::new_clamped(
            self.x as i64 - px,
            self.y as i64 - py,
            self.w as i64 + 2 * px,
            self.h as i64 + 2 * py,
            img_w,
            img_h,
        )
        .expect("padding a valid bbox cannot empty it")
    }
}

/// One face detection from a detector backend.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub bbox: BBox,
    pub confidence: f64,
    pub detector_id: String,
}

/// Outcome of the confidence/size gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    RejectLowConfidence,
    RejectTooSmall,
}

/// Applies the confidence and size gates. Boundary values are accepted:
/// confidence >= min_confidence and both sides >= min_face pass.
pub fn gate_detection(det: &DetectionResult, cfg: &GateConfig) -> GateDecision {
    if det.confidence < cfg.min_confidence {
        GateDecision::RejectLowConfidence
    } else if det.bbox.w < cfg.min_face || det.bbox.h < cfg.min_face {
        GateDecision::RejectTooSmall
    } else {
        GateDecision::Accept
    }
}

/// Variance of the 3x3 discrete Laplacian ([[0,1,0],[1,-4,1],[0,1,0]],
/// valid region) over the BT.601 luma of the image. Low variance means
/// missing high-frequency detail, i.e. blur.
pub fn blur_score(image: &RgbImage) -> Result<f64> {
    let (w, h) = image.dimensions();
    if w < 3 || h < 3 {
        return Err(Error::Shape(format!(
            "image {w}x{h} is smaller than the 3x3 Laplacian kernel"
        )));
    }
    let gray = |x: u32, y: u32| -> f64 {
        let p = image.get_pixel(x, y);
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    };
    let n = ((w - 2) * (h - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = gray(x, y - 1) + gray(x, y + 1) + gray(x - 1, y) + gray(x + 1, y)
                - 4.0 * gray(x, y);
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / n;
    Ok(sum_sq / n - mean * mean)
}

/// Runs the secondary validator on the padded crop. The padded region is
/// never persisted; callers keep using the original box.
pub fn validate_with_padding(
    det: &DetectionResult,
    frame: &FrameRecord,
    validator: &dyn backends::FaceValidator,
    cfg: &GateConfig,
) -> Result<bool> {
    let (img_w, img_h) = frame.image.dimensions();
    let padded = det.bbox.padded(cfg.validation_padding, img_w, img_h);
    let crop =
        image::imageops::crop_imm(&frame.image, padded.x, padded.y, padded.w, padded.h).to_image();
    validator.validate(&frame.frame_id, &crop)
}

/// The training triplet: aligned crop, face graph, optional soft label.
#[derive(Debug, Clone)]
pub struct FaceSample {
    pub frame_id: String,
    pub crop: RgbImage,
    pub graph: FaceGraph,
    pub soft_label: Option<EmotionDistribution>,
}

impl FaceSample {
    pub fn validate_crop(&self) -> Result<()> {
        let (w, h) = self.crop.dimensions();
        if w != CROP_SIZE || h != CROP_SIZE {
            return Err(Error::Shape(format!(
                "crop is {w}x{h}, expected {CROP_SIZE}x{CROP_SIZE}"
            )));
        }
        Ok(())
    }
}

/// Per-frame terminal outcome, the unit the quality counters consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOutcome {
    Unreadable,
    Blurry,
    /// No face survived: detector found none, the validator said no (or
    /// failed), or landmark extraction failed.
    NoFace,
    RejectedLowConfidence,
    RejectedTooSmall,
    Extracted,
}

/// Preprocessing counters, one increment per frame outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QualityAccumulator {
    pub total_found: u64,
    pub valid_images: u64,
    pub blurry_skipped: u64,
    pub no_face: u64,
    pub rejected_low_confidence: u64,
    pub rejected_too_small: u64,
    pub faces_extracted: u64,
}

impl QualityAccumulator {
    pub fn record(&mut self, outcome: FrameOutcome) {
        self.total_found += 1;
        if outcome != FrameOutcome::Unreadable {
            self.valid_images += 1;
        }
        match outcome {
            FrameOutcome::Unreadable => {}
            FrameOutcome::Blurry => self.blurry_skipped += 1,
            FrameOutcome::NoFace => self.no_face += 1,
            FrameOutcome::RejectedLowConfidence => self.rejected_low_confidence += 1,
            FrameOutcome::RejectedTooSmall => self.rejected_too_small += 1,
            FrameOutcome::Extracted => self.faces_extracted += 1,
        }
    }

    pub fn merge(&mut self, other: &QualityAccumulator) {
        self.total_found += other.total_found;
        self.valid_images += other.valid_images;
        self.blurry_skipped += other.blurry_skipped;
        self.no_face += other.no_face;
        self.rejected_low_confidence += other.rejected_low_confidence;
        self.rejected_too_small += other.rejected_too_small;
        self.faces_extracted += other.faces_extracted;
    }

    /// Counter conservation: every valid frame lands in exactly one
    /// terminal bucket.
    pub fn is_conservative(&self) -> bool {
        self.valid_images
            == self.blurry_skipped
                + self.no_face
                + self.rejected_low_confidence
                + self.rejected_too_small
                + self.faces_extracted
    }

    pub fn finalize(self, processing_time_s: f64) -> QualityReport {
        let success_rate = if self.total_found == 0 {
            0.0
        } else {
            self.faces_extracted as f64 / self.total_found as f64
        };
        QualityReport {
            empty_input: self.total_found == 0,
            success_rate,
            processing_time_s,
            counters: self,
        }
    }
}

/// Final preprocessing report mirroring the summary-statistics table:
/// totals, per-gate rejection counts, success rate and wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub counters: QualityAccumulator,
    pub success_rate: f64,
    pub processing_time_s: f64,
    pub empty_input: bool,
}

impl QualityReport {
    /// Flat key-value text rendering, one `key value` pair per line.
    pub fn to_key_value_text(&self) -> String {
        let c = &self.counters;
        format!(
            "total_images_found {}\n\
             valid_images {}\n\
             blurry_images_skipped {}\n\
             images_with_no_faces {}\n\
             rejected_low_confidence {}\n\
             rejected_too_small {}\n\
             total_faces_extracted {}\n\
             success_rate {:.4}\n\
             processing_time_seconds {:.2}\n\
             empty_input {}\n",
            c.total_found,
            c.valid_images,
            c.blurry_skipped,
            c.no_face,
            c.rejected_low_confidence,
            c.rejected_too_small,
            c.faces_extracted,
            self.success_rate,
            self.processing_time_s,
            if self.empty_input { 1 } else { 0 },
        )
    }

    pub fn parse_key_value_text(text: &str) -> Result<QualityReport> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once(' ') {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let get_u64 = |k: &str| -> Result<u64> {
            map.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Integrity(format!("quality report missing counter '{k}'")))
        };
        let get_f64 = |k: &str| -> Result<f64> {
            map.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Integrity(format!("quality report missing field '{k}'")))
        };
        let counters = QualityAccumulator {
            total_found: get_u64("total_images_found")?,
            valid_images: get_u64("valid_images")?,
            blurry_skipped: get_u64("blurry_images_skipped")?,
            no_face: get_u64("images_with_no_faces")?,
            rejected_low_confidence: get_u64("rejected_low_confidence")?,
            rejected_too_small: get_u64("rejected_too_small")?,
            faces_extracted: get_u64("total_faces_extracted")?,
        };
        Ok(QualityReport {
            success_rate: get_f64("success_rate")?,
            processing_time_s: get_f64("processing_time_seconds")?,
            empty_input: get_u64("empty_input")? == 1,
            counters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn solid(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb([v, v, v]))
    }

    fn checkerboard(w: u32, h: u32, a: u8, b: u8) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = if (x + y) % 2 == 0 { a } else { b };
            image::Rgb([v, v, v])
        })
    }

    /// Direct convolution oracle: same definition, written as plain loops
    /// over an f64 luma plane.
    fn blur_oracle(img: &RgbImage) -> f64 {
        let (w, h) = img.dimensions();
        let g: Vec<Vec<f64>> = (0..h)
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let p = img.get_pixel(x, y);
                        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
                    })
                    .collect()
            })
            .collect();
        let mut vals = Vec::new();
        for y in 1..(h - 1) as usize {
            for x in 1..(w - 1) as usize {
                vals.push(g[y - 1][x] + g[y + 1][x] + g[y][x - 1] + g[y][x + 1] - 4.0 * g[y][x]);
            }
        }
        let n = vals.len() as f64;
        let mean: f64 = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    #[test]
    fn blur_constant_image_scores_zero() {
        let img = solid(32, 32, 128);
        let s = blur_score(&img).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        assert!(s < 25.0, "constant image must be flagged blurry");
    }

    #[test]
    fn blur_checkerboard_matches_oracle_and_is_sharp() {
        let img = checkerboard(6, 6, 0, 255);
        let s = blur_score(&img).unwrap();
        let want = blur_oracle(&img);
        assert_abs_diff_eq!(s, want, epsilon = 1e-9);
        // Responses alternate +-4*255; variance = 1020^2.
        assert_abs_diff_eq!(s, 1_040_400.0, epsilon = 1e-6);
        assert!(s > 25.0);
    }

    #[test]
    fn blur_scales_quadratically_with_intensity() {
        let img1 = checkerboard(16, 16, 0, 100);
        let img2 = checkerboard(16, 16, 0, 200);
        let s1 = blur_score(&img1).unwrap();
        let s2 = blur_score(&img2).unwrap();
        assert_abs_diff_eq!(s2, 4.0 * s1, epsilon = 1e-9 * s2.max(1.0));
    }

    #[test]
    fn blur_rejects_tiny_images() {
        assert!(blur_score(&solid(2, 8, 0)).is_err());
    }

    #[test]
    fn gate_thresholds_from_the_pipeline_contract() {
        let cfg = GateConfig::default();
        let det = |conf: f64, w: u32, h: u32| DetectionResult {
            bbox: BBox { x: 0, y: 0, w, h },
            confidence: conf,
            detector_id: "stub".into(),
        };
        assert_eq!(gate_detection(&det(0.69, 100, 100), &cfg), GateDecision::RejectLowConfidence);
        assert_eq!(gate_detection(&det(0.95, 29, 40), &cfg), GateDecision::RejectTooSmall);
        assert_eq!(gate_detection(&det(0.70, 30, 30), &cfg), GateDecision::Accept);
    }

    #[test]
    fn bbox_clamps_and_padding_clamps_at_corners() {
        // Hand-computed: bbox (0,0,40,40) in 100x100 padded by 20% gives
        // pad 8 per side; the top-left clamps to the image origin.
        let b = BBox::new_clamped(0, 0, 40, 40, 100, 100).unwrap();
        let p = b.padded(0.20, 100, 100);
        assert_eq!(p, BBox { x: 0, y: 0, w: 48, h: 48 });

        // Interior bbox pads on all sides.
        let b = BBox::new_clamped(30, 30, 40, 40, 100, 100).unwrap();
        let p = b.padded(0.20, 100, 100);
        assert_eq!(p, BBox { x: 22, y: 22, w: 56, h: 56 });

        // Fully outside fails.
        assert!(BBox::new_clamped(-50, -50, 20, 20, 100, 100).is_err());
    }

    #[test]
    fn accumulator_counts_and_conserves() {
        let mut acc = QualityAccumulator::default();
        for _ in 0..3 {
            acc.record(FrameOutcome::Extracted);
        }
        acc.record(FrameOutcome::Blurry);
        acc.record(FrameOutcome::NoFace);
        acc.record(FrameOutcome::Unreadable);
        acc.record(FrameOutcome::RejectedLowConfidence);
        assert_eq!(acc.total_found, 7);
        assert_eq!(acc.valid_images, 6);
        assert!(acc.is_conservative());
        let report = acc.finalize(1.5);
        assert_abs_diff_eq!(report.success_rate, 3.0 / 7.0, epsilon = 1e-12);
        assert!(!report.empty_input);

        let empty = QualityAccumulator::default().finalize(0.0);
        assert!(empty.empty_input);
        assert_eq!(empty.success_rate, 0.0);
    }

    #[test]
    fn quality_report_text_roundtrip() {
        let mut acc = QualityAccumulator::default();
        acc.record(FrameOutcome::Extracted);
        acc.record(FrameOutcome::Blurry);
        let report = acc.finalize(2.0);
        let text = report.to_key_value_text();
        let parsed = QualityReport::parse_key_value_text(&text).unwrap();
        assert_eq!(parsed.counters, report.counters);
        assert!(parsed.success_rate > 0.0);
    }
}
