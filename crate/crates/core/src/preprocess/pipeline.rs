//! The batch preprocessing pipeline: manifest in, crops + landmark CSV +
//! quality report out.
//!
//! Frames are processed in a worker pool but the sample sink and the CSV
//! writer always consume results in manifest order, so output is
//! byte-identical regardless of worker count.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;

use super::backends::{FaceDetector, FaceValidator, Landmarker};
use super::{
    blur_score, gate_detection, validate_with_padding, FaceSample, FrameOutcome, FrameRecord,
    GateConfig, GateDecision, QualityAccumulator, QualityReport, CROP_SIZE,
};
use crate::facegraph::{normalize_landmarks, FaceGraph, NUM_LANDMARKS};
use crate::{Error, Result};

/// Landmark CSV column count: frame_id, face_id, then x/y/z per landmark.
pub const LANDMARK_CSV_COLUMNS: usize = 2 + 3 * NUM_LANDMARKS;

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub path: PathBuf,
}

/// Ordered list of frames to process. Built either from a text file with
/// one frame path per line or from a directory walked in lexicographic
/// order. Frame ids are file stems and must be unique.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_paths(paths: Vec<PathBuf>) -> Result<Manifest> {
        let mut entries = Vec::with_capacity(paths.len());
        let mut seen = std::collections::HashSet::new();
        for path in paths {
            let frame_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Usage(format!("cannot derive frame id from '{}'", path.display())))?
                .to_string();
            if !seen.insert(frame_id.clone()) {
                return Err(Error::Usage(format!("duplicate frame id '{frame_id}' in manifest")));
            }
            entries.push(ManifestEntry { frame_id, path });
        }
        Ok(Manifest { entries })
    }

    pub fn from_file(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let paths = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = PathBuf::from(l);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            })
            .collect();
        Manifest::from_paths(paths)
    }

    pub fn from_dir(dir: &Path) -> Result<Manifest> {
        let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
            .collect();
        paths.sort();
        Manifest::from_paths(paths)
    }

    /// A file path loads as a manifest file, a directory is walked.
    pub fn load(path: &Path) -> Result<Manifest> {
        if path.is_dir() {
            Manifest::from_dir(path)
        } else if path.is_file() {
            Manifest::from_file(path)
        } else {
            Err(Error::Usage(format!("manifest path '{}' does not exist", path.display())))
        }
    }
}

/// Where the pipeline persists its outputs. Either side may be disabled
/// for in-memory runs.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub crops_dir: Option<PathBuf>,
    pub landmarks_csv: Option<PathBuf>,
}

struct FrameResult {
    outcome: FrameOutcome,
    sample: Option<FaceSample>,
    csv_row: Option<String>,
    diagnostic: Option<String>,
}

fn landmark_csv_header() -> String {
    let mut cols = Vec::with_capacity(LANDMARK_CSV_COLUMNS);
    cols.push("frame_id".to_string());
    cols.push("face_id".to_string());
    for i in 0..NUM_LANDMARKS {
        cols.push(format!("x_{i}"));
        cols.push(format!("y_{i}"));
        cols.push(format!("z_{i}"));
    }
    cols.join(",")
}

fn process_frame(
    entry: &ManifestEntry,
    index: usize,
    fps: f64,
    detector: &dyn FaceDetector,
    validator: &dyn FaceValidator,
    landmarker: &dyn Landmarker,
    gates: &GateConfig,
) -> FrameResult {
    let reject = |outcome, diag: Option<String>| FrameResult {
        outcome,
        sample: None,
        csv_row: None,
        diagnostic: diag,
    };

    let image = match image::open(&entry.path) {
        Ok(img) => img.to_rgb8(),
        Err(e) => {
            return reject(
                FrameOutcome::Unreadable,
                Some(format!("{}: unreadable: {e}", entry.frame_id)),
            )
        }
    };
    let frame = FrameRecord {
        frame_id: entry.frame_id.clone(),
        source_video: entry
            .path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or("")
            .to_string(),
        timestamp_s: if fps > 0.0 { index as f64 / fps } else { 0.0 },
        image,
    };

    match blur_score(&frame.image) {
        Ok(score) if score < gates.blur_threshold => return reject(FrameOutcome::Blurry, None),
        Ok(_) => {}
        Err(e) => {
            return reject(
                FrameOutcome::Unreadable,
                Some(format!("{}: blur gate: {e}", frame.frame_id)),
            )
        }
    }

    let detections = match detector.detect(&frame) {
        Ok(d) => d,
        Err(e) => {
            return reject(
                FrameOutcome::NoFace,
                Some(format!("{}: detector failed: {e}", frame.frame_id)),
            )
        }
    };
    // Single-subject footage: keep only the highest-confidence detection
    // (first wins on ties).
    let best = detections
        .into_iter()
        .reduce(|best, d| if d.confidence > best.confidence { d } else { best });
    let det = match best {
        Some(d) => d,
        None => return reject(FrameOutcome::NoFace, None),
    };

    match gate_detection(&det, gates) {
        GateDecision::RejectLowConfidence => return reject(FrameOutcome::RejectedLowConfidence, None),
        GateDecision::RejectTooSmall => return reject(FrameOutcome::RejectedTooSmall, None),
        GateDecision::Accept => {}
    }

    match validate_with_padding(&det, &frame, validator, gates) {
        Ok(true) => {}
        Ok(false) => return reject(FrameOutcome::NoFace, None),
        Err(e) => {
            return reject(
                FrameOutcome::NoFace,
                Some(format!("{}: validator failed: {e}", frame.frame_id)),
            )
        }
    }

    // Crop from the original unpadded bbox, bilinear-resize to 224x224.
    let crop_raw =
        image::imageops::crop_imm(&frame.image, det.bbox.x, det.bbox.y, det.bbox.w, det.bbox.h)
            .to_image();
    let crop: RgbImage = image::imageops::resize(
        &crop_raw,
        CROP_SIZE,
        CROP_SIZE,
        image::imageops::FilterType::Triangle,
    );

    let raw_landmarks = match landmarker.landmarks(&frame.frame_id, &crop) {
        Ok(l) => l,
        Err(e) => {
            return reject(
                FrameOutcome::NoFace,
                Some(format!("{}: landmarker failed: {e}", frame.frame_id)),
            )
        }
    };
    let normalized = match normalize_landmarks(&raw_landmarks) {
        Ok(n) => n,
        Err(e) => {
            return reject(
                FrameOutcome::NoFace,
                Some(format!("{}: landmark normalization failed: {e}", frame.frame_id)),
            )
        }
    };
    let diagnostic = normalized.any_degenerate().then(|| {
        format!(
            "{}: degenerate landmark axes {:?}",
            frame.frame_id, normalized.degenerate_axes
        )
    });

    let mut row = String::with_capacity(NUM_LANDMARKS * 36);
    row.push_str(&frame.frame_id);
    row.push_str(",0");
    for r in normalized.set.coords().rows() {
        for v in r.iter() {
            row.push(',');
            row.push_str(&format!("{v:.9}"));
        }
    }

    let graph = match FaceGraph::with_canonical_topology(normalized.set) {
        Ok(g) => g,
        Err(e) => {
            return reject(
                FrameOutcome::NoFace,
                Some(format!("{}: topology: {e}", frame.frame_id)),
            )
        }
    };

    FrameResult {
        outcome: FrameOutcome::Extracted,
        sample: Some(FaceSample {
            frame_id: frame.frame_id,
            crop,
            graph,
            soft_label: None,
        }),
        csv_row: Some(row),
        diagnostic,
    }
}

/// Runs the full preprocessing pipeline over a manifest.
///
/// Every extracted sample is handed to `sink` in manifest order; when
/// `output` paths are set the crop PNGs and the landmark CSV are written
/// as a side effect. Partial per-frame failures never abort the batch.
pub fn run_pipeline(
    manifest: &Manifest,
    detector: &dyn FaceDetector,
    validator: &dyn FaceValidator,
    landmarker: &dyn Landmarker,
    gates: &GateConfig,
    fps: f64,
    workers: usize,
    output: &PipelineOutput,
    sink: &mut dyn FnMut(FaceSample) -> Result<()>,
) -> Result<QualityReport> {
    let started = Instant::now();
    let mut acc = QualityAccumulator::default();

    let mut csv_writer = match &output.landmarks_csv {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = std::io::BufWriter::new(file);
            writeln!(w, "{}", landmark_csv_header()).map_err(|e| Error::io(path, e))?;
            Some((w, path.clone()))
        }
        None => None,
    };
    if let Some(dir) = &output.crops_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    // Batched parallel map with ordered sequential drain.
    const BATCH: usize = 64;
    for (batch_idx, batch) in manifest.entries.chunks(BATCH).enumerate() {
        let base = batch_idx * BATCH;
        let results: Vec<FrameResult> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(i, entry)| {
                    process_frame(entry, base + i, fps, detector, validator, landmarker, gates)
                })
                .collect()
        });
        for result in results {
            acc.record(result.outcome);
            if let Some(diag) = &result.diagnostic {
                eprintln!("preprocess: {diag}");
            }
            if let Some(row) = &result.csv_row {
                if let Some((w, path)) = csv_writer.as_mut() {
                    writeln!(w, "{row}").map_err(|e| Error::io(path.as_path(), e))?;
                }
            }
            if let Some(sample) = result.sample {
                if let Some(dir) = &output.crops_dir {
                    let path = dir.join(format!("{}.png", sample.frame_id));
                    sample.crop.save(&path).map_err(|e| {
                        Error::Io {
                            path,
                            source: std::io::Error::other(e.to_string()),
                        }
                    })?;
                }
                sink(sample)?;
            }
        }
    }

    if let Some((w, path)) = csv_writer.as_mut() {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    debug_assert!(acc.is_conservative());
    Ok(acc.finalize(started.elapsed().as_secs_f64()))
}
