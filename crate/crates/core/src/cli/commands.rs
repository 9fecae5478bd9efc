//! The stage commands. Stages couple through files in the run directory
//! and validate their inputs' schema hashes on entry.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{validate_csv_schema, ArtifactSchema, PipelineConfig, StageMeta};
use crate::analysis::{analyze_series, render_reports, EmotionScoreSeries, ScoreRow};
use crate::facegraph::{normalize_landmarks, EmotionDistribution, FaceGraph, NUM_CLASSES, NUM_LANDMARKS};
use crate::fusionnet::{load_checkpoint, softmax_to_distributions, FusionNet};
use crate::preprocess::backends::{
    FaceDetector, FaceValidator, Landmarker, StubDetector, StubLandmarker, StubScript,
    StubValidator,
};
use crate::preprocess::{run_pipeline, FaceSample, Manifest, PipelineOutput, QualityReport};
use crate::softlabel::{calibrate_csv, read_scorer_csv};
use crate::trainer::{child_id_of, evaluate, run_training, Dataset, MetricsReport};
use crate::{Error, Result};

fn load_stub_script(config: &PipelineConfig) -> Result<StubScript> {
    match &config.dataset.stub_script {
        Some(path) => StubScript::load(path),
        None => Ok(StubScript::default()),
    }
}

struct Backends {
    detector: Box<dyn FaceDetector>,
    validator: Box<dyn FaceValidator>,
    landmarker: Box<dyn Landmarker>,
}

fn build_backends(config: &PipelineConfig) -> Result<Backends> {
    let script = load_stub_script(config)?;
    let kind_err = |role: &str, kind: &str| {
        Error::Config(format!(
            "unknown {role} backend '{kind}' (built-in: 'stub'; real model adapters plug in \
             through the backend traits)"
        ))
    };
    let detector: Box<dyn FaceDetector> = match config.preprocess.detector.as_str() {
        "stub" => Box::new(StubDetector { script: script.clone() }),
        other => return Err(kind_err("detector", other)),
    };
    let validator: Box<dyn FaceValidator> = match config.preprocess.validator.as_str() {
        "stub" => Box::new(StubValidator { script: script.clone() }),
        other => return Err(kind_err("validator", other)),
    };
    let landmarker: Box<dyn Landmarker> = match config.preprocess.landmarker.as_str() {
        "stub" => Box::new(StubLandmarker { script }),
        other => return Err(kind_err("landmarker", other)),
    };
    Ok(Backends { detector, validator, landmarker })
}

/// Stage 1: frames to crops, landmark CSV, and the quality report.
pub fn cmd_preprocess(config: &PipelineConfig) -> Result<QualityReport> {
    let manifest_path = config
        .dataset
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Usage("config has no dataset.manifest".into()))?;
    let manifest = Manifest::load(manifest_path)?;
    let backends = build_backends(config)?;
    config.snapshot()?;

    let stage_dir = config.stage_dir("preprocess");
    let output = PipelineOutput {
        crops_dir: Some(stage_dir.join("crops")),
        landmarks_csv: Some(stage_dir.join("landmarks.csv")),
    };
    let report = run_pipeline(
        &manifest,
        backends.detector.as_ref(),
        backends.validator.as_ref(),
        backends.landmarker.as_ref(),
        &config.preprocess.gate_config(),
        config.preprocess.fps,
        config.preprocess.workers,
        &output,
        &mut |_| Ok(()),
    )?;

    let report_path = stage_dir.join("quality_report.txt");
    std::fs::write(&report_path, report.to_key_value_text())
        .map_err(|e| Error::io(&report_path, e))?;
    StageMeta::new("preprocess", config)
        .with_schema("landmarks.csv", ArtifactSchema::LandmarksCsv)
        .write(&stage_dir)?;
    Ok(report)
}

/// Frame ids in landmark-CSV row order.
fn extracted_frame_ids(landmarks_csv: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(landmarks_csv).map_err(|e| Error::io(landmarks_csv, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').next().unwrap_or("").to_string())
        .collect())
}

/// Stage 2: calibrated soft labels for every extracted frame.
pub fn cmd_label(config: &PipelineConfig) -> Result<usize> {
    let landmarks_csv = config.stage_dir("preprocess").join("landmarks.csv");
    validate_csv_schema(&landmarks_csv, ArtifactSchema::LandmarksCsv)?;
    let frames = extracted_frame_ids(&landmarks_csv)?;

    let fer_path = config
        .dataset
        .fer_csv
        .as_ref()
        .ok_or_else(|| Error::Usage("config has no dataset.fer_csv".into()))?;
    let df_path = config
        .dataset
        .deepface_csv
        .as_ref()
        .ok_or_else(|| Error::Usage("config has no dataset.deepface_csv".into()))?;
    validate_csv_schema(fer_path, ArtifactSchema::ScorerCsv)?;
    validate_csv_schema(df_path, ArtifactSchema::ScorerCsv)?;

    let calibration = config.label.calibration_config();
    let fer = read_scorer_csv(fer_path, &calibration.fer_scorer_id)?;
    let df = read_scorer_csv(df_path, &calibration.deepface_scorer_id)?;

    config.snapshot()?;
    let stage_dir = config.stage_dir("label");
    std::fs::create_dir_all(&stage_dir).map_err(|e| Error::io(&stage_dir, e))?;
    let out_path = stage_dir.join("soft_labels.csv");
    let written = calibrate_csv(&fer, &df, &frames, &calibration, &out_path)?;
    StageMeta::new("label", config)
        .with_schema("soft_labels.csv", ArtifactSchema::LabelsCsv)
        .write(&stage_dir)?;
    Ok(written)
}

fn parse_landmark_rows(landmarks_csv: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let text = std::fs::read_to_string(landmarks_csv).map_err(|e| Error::io(landmarks_csv, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + 3 * NUM_LANDMARKS {
            return Err(Error::Csv {
                path: landmarks_csv.into(),
                message: format!("row {}: expected {} fields, got {}", i + 1, 2 + 3 * NUM_LANDMARKS, fields.len()),
            });
        }
        let mut coords = Array2::zeros((NUM_LANDMARKS, 3));
        for r in 0..NUM_LANDMARKS {
            for c in 0..3 {
                coords[[r, c]] = fields[2 + 3 * r + c].parse().map_err(|e| Error::Csv {
                    path: landmarks_csv.into(),
                    message: format!("row {}: {e}", i + 1),
                })?;
            }
        }
        out.push((fields[0].to_string(), coords));
    }
    Ok(out)
}

fn read_labels_map(path: &Path) -> Result<BTreeMap<String, EmotionDistribution>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.into(),
            message: format!("row {}: {e}", i + 2),
        })?;
        let mut p = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            p[c] = record[c + 1].parse().map_err(|e| Error::Csv {
                path: path.into(),
                message: format!("row {}: {e}", i + 2),
            })?;
        }
        out.insert(
            record[0].to_string(),
            EmotionDistribution::new(p).map_err(|e| Error::Csv {
                path: path.into(),
                message: format!("row {}: {e}", i + 2),
            })?,
        );
    }
    Ok(out)
}

/// Joins crops, landmarks and labels into labeled samples, in landmark
/// CSV order.
fn load_labeled_samples(config: &PipelineConfig) -> Result<Vec<FaceSample>> {
    let pre_dir = config.stage_dir("preprocess");
    let landmarks_csv = pre_dir.join("landmarks.csv");
    let labels_csv = config.stage_dir("label").join("soft_labels.csv");
    validate_csv_schema(&landmarks_csv, ArtifactSchema::LandmarksCsv)?;
    validate_csv_schema(&labels_csv, ArtifactSchema::LabelsCsv)?;

    let labels = read_labels_map(&labels_csv)?;
    let rows = parse_landmark_rows(&landmarks_csv)?;
    let crops_dir = pre_dir.join("crops");
    let mut samples = Vec::with_capacity(rows.len());
    for (frame_id, coords) in rows {
        let label = labels.get(&frame_id).copied().ok_or_else(|| {
            Error::Integrity(format!("frame '{frame_id}' has landmarks but no soft label"))
        })?;
        let crop_path = crops_dir.join(format!("{frame_id}.png"));
        let crop = image::open(&crop_path)
            .map_err(|e| {
                Error::Integrity(format!("crop '{}' unreadable: {e}", crop_path.display()))
            })?
            .to_rgb8();
        // Landmark CSV rows are already normalized; re-normalization is a
        // fixed point and revalidates the invariants.
        let normalized = normalize_landmarks(&coords)?;
        samples.push(FaceSample {
            frame_id,
            crop,
            graph: FaceGraph::with_canonical_topology(normalized.set)?,
            soft_label: Some(label),
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub resume: Option<PathBuf>,
}

/// Stage 3: train the fusion classifier against the calibrated labels.
pub fn cmd_train(config: &PipelineConfig, args: &TrainArgs) -> Result<MetricsReport> {
    let samples = load_labeled_samples(config)?;
    let mut train_cfg = config.train.clone();
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        train_cfg.batch_size = batch;
    }
    train_cfg.validate()?;

    let dataset = Dataset::from_samples(
        &samples,
        config.model.image_mean,
        config.model.image_std,
        train_cfg.smoothing,
    )?;
    let mut model = FusionNet::new(&config.model, config.seed)?;
    let start_epoch = match &args.resume {
        Some(path) => load_checkpoint(&mut model, path)?.epoch as usize,
        None => 0,
    };

    config.snapshot()?;
    let stage_dir = config.stage_dir("train");
    std::fs::create_dir_all(&stage_dir).map_err(|e| Error::io(&stage_dir, e))?;
    let outcome = run_training(
        &mut model,
        &dataset,
        &train_cfg,
        start_epoch,
        Some(&stage_dir.join("metrics.csv")),
        Some(&stage_dir),
    )?;

    let final_path = stage_dir.join("final_metrics.json");
    let text = serde_json::to_string_pretty(&outcome.final_metrics)
        .map_err(|e| Error::Config(format!("metrics encode: {e}")))?;
    std::fs::write(&final_path, text).map_err(|e| Error::io(&final_path, e))?;
    StageMeta::new("train", config).write(&stage_dir)?;
    Ok(outcome.final_metrics)
}

/// Stage 4: metrics on the validation split plus a prediction CSV over
/// every labeled frame.
pub fn cmd_eval(config: &PipelineConfig) -> Result<MetricsReport> {
    let samples = load_labeled_samples(config)?;
    let checkpoint = config.stage_dir("train").join("model_final.ckpt");
    if !checkpoint.exists() {
        return Err(Error::Integrity(format!(
            "checkpoint '{}' is missing; run train first",
            checkpoint.display()
        )));
    }
    let mut model = FusionNet::new(&config.model, config.seed)?;
    load_checkpoint(&mut model, &checkpoint)?;

    let dataset = Dataset::from_samples(
        &samples,
        config.model.image_mean,
        config.model.image_std,
        config.train.smoothing,
    )?;

    // The same deterministic split the trainer used.
    let (train_idx, val_idx) =
        crate::trainer::split_indices(dataset.len(), config.train.val_fraction, config.seed);
    let eval_set = if val_idx.is_empty() { dataset.subset(&train_idx) } else { dataset.subset(&val_idx) };
    let metrics = evaluate(&model, &eval_set, config.train.batch_size)?;

    // Predictions over every labeled frame, in dataset order.
    let mut rows = Vec::with_capacity(dataset.len());
    let mut fallbacks = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(config.train.batch_size.max(1)) {
        let (images, graphs, _) = dataset.gather(chunk);
        let out = model.forward_eval(&images, &graphs)?;
        fallbacks += out.fallback_count;
        let dists = softmax_to_distributions(&out.logits)?;
        for (&i, dist) in chunk.iter().zip(dists.iter()) {
            rows.push(ScoreRow {
                frame_id: dataset.frame_ids[i].clone(),
                child_id: child_id_of(&dataset.frame_ids[i]),
                dist: *dist,
            });
        }
    }
    let series = EmotionScoreSeries { rows };

    config.snapshot()?;
    let stage_dir = config.stage_dir("eval");
    std::fs::create_dir_all(&stage_dir).map_err(|e| Error::io(&stage_dir, e))?;
    series.write_csv(&stage_dir.join("predictions.csv"))?;

    let json_path = stage_dir.join("metrics_report.json");
    let text = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Error::Config(format!("metrics encode: {e}")))?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    let txt_path = stage_dir.join("metrics_report.txt");
    std::fs::write(&txt_path, metrics.to_text()).map_err(|e| Error::io(&txt_path, e))?;
    let mut confusion = String::from("true_class,angry,disgust,fear,happy,sad,surprise,neutral\n");
    for (c, row) in crate::facegraph::EmotionClass::ALL.iter().zip(metrics.confusion.iter()) {
        confusion.push_str(&format!(
            "{},{}\n",
            c.name(),
            row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    let conf_path = stage_dir.join("confusion.csv");
    std::fs::write(&conf_path, confusion).map_err(|e| Error::io(&conf_path, e))?;
    let fb_path = stage_dir.join("fallbacks.txt");
    std::fs::write(&fb_path, format!("gcn_fallbacks {fallbacks}\n"))
        .map_err(|e| Error::io(&fb_path, e))?;
    StageMeta::new("eval", config)
        .with_schema("predictions.csv", ArtifactSchema::PredictionsCsv)
        .write(&stage_dir)?;
    Ok(metrics)
}

fn optional_json(path: &Path) -> Option<serde_json::Value> {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
}

/// Stage 5: statistics battery, report bundle, and the consolidated run
/// summary.
pub fn cmd_analyze(config: &PipelineConfig) -> Result<()> {
    let predictions = config.stage_dir("eval").join("predictions.csv");
    validate_csv_schema(&predictions, ArtifactSchema::PredictionsCsv)?;
    let series = EmotionScoreSeries::read_csv(&predictions)?;
    let results = analyze_series(&series, config.analysis.alpha)?;

    config.snapshot()?;
    let stage_dir = config.stage_dir("analysis");
    render_reports(&results, &stage_dir)?;
    StageMeta::new("analysis", config).write(&stage_dir)?;

    // Consolidated run summary.
    let quality = std::fs::read_to_string(config.stage_dir("preprocess").join("quality_report.txt"))
        .ok()
        .and_then(|t| QualityReport::parse_key_value_text(&t).ok());
    let summary = serde_json::json!({
        "tool_version": super::TOOL_VERSION,
        "seed": config.seed,
        "config_hash": config.content_hash(),
        "preprocess": quality.map(|q| serde_json::json!({
            "total_found": q.counters.total_found,
            "valid_images": q.counters.valid_images,
            "blurry_skipped": q.counters.blurry_skipped,
            "no_face": q.counters.no_face,
            "rejected_low_confidence": q.counters.rejected_low_confidence,
            "rejected_too_small": q.counters.rejected_too_small,
            "faces_extracted": q.counters.faces_extracted,
            "success_rate": q.success_rate,
        })),
        "train": optional_json(&config.stage_dir("train").join("final_metrics.json")),
        "eval": optional_json(&config.stage_dir("eval").join("metrics_report.json")),
        "analysis": {
            "frames": series.len(),
            "histogram": results.histogram.to_vec(),
            "positive_fraction": results.polarity.positive_fraction,
            "negative_fraction": results.polarity.negative_fraction,
            "anova_statistic": results.anova.statistic,
            "anova_p": results.anova.p_value,
            "kruskal_statistic": results.kruskal.statistic,
            "kruskal_p": results.kruskal.p_value,
            "tukey_significant_pairs": results.tukey.comparisons.iter().filter(|c| c.significant).count(),
        },
    });
    let summary_path = config.run_dir.join("run_summary.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("run summary: {e}")))?;
    std::fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    Ok(())
}

/// Re-renders the figure bundle from the stored predictions and returns a
/// human-readable consolidated summary.
pub fn cmd_report(config: &PipelineConfig) -> Result<String> {
    let summary_path = config.run_dir.join("run_summary.json");
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&summary_path).map_err(|_| {
            Error::Integrity(format!(
                "run summary '{}' is missing; run analyze first",
                summary_path.display()
            ))
        })?,
    )
    .map_err(|e| Error::Integrity(format!("run summary: {e}")))?;

    let predictions = config.stage_dir("eval").join("predictions.csv");
    validate_csv_schema(&predictions, ArtifactSchema::PredictionsCsv)?;
    let series = EmotionScoreSeries::read_csv(&predictions)?;
    let results = analyze_series(&series, config.analysis.alpha)?;
    render_reports(&results, &config.stage_dir("analysis"))?;

    let mut out = String::new();
    out.push_str(&format!("run directory: {}\n", config.run_dir.display()));
    if let Some(p) = summary.get("preprocess").filter(|v| !v.is_null()) {
        out.push_str(&format!(
            "preprocess: {} frames, {} extracted (success rate {:.1}%)\n",
            p["total_found"], p["faces_extracted"],
            p["success_rate"].as_f64().unwrap_or(0.0) * 100.0
        ));
    }
    if let Some(e) = summary.get("eval").filter(|v| !v.is_null()) {
        out.push_str(&format!(
            "eval: accuracy {:.4}, macro F1 {:.4}\n",
            e["accuracy"].as_f64().unwrap_or(0.0),
            e["macro_f1"].as_f64().unwrap_or(0.0)
        ));
    }
    out.push_str(&format!(
        "analysis: {} frames, polarity {:.1}% positive / {:.1}% negative\n",
        series.len(),
        results.polarity.positive_fraction * 100.0,
        results.polarity.negative_fraction * 100.0
    ));
    out.push_str(&format!(
        "histogram: {}\n",
        crate::facegraph::EmotionClass::ALL
            .iter()
            .zip(results.histogram.iter())
            .map(|(c, n)| format!("{} {n}", c.name()))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    Ok(out)
}
