//! Pipeline orchestration: one TOML config drives five file-coupled
//! stages, each runnable as a subcommand. Stages validate their inputs'
//! schema hashes and leave enough metadata in the run directory to
//! reproduce every output byte-identically in single-worker mode.

mod commands;

pub use commands::{
    cmd_analyze, cmd_eval, cmd_label, cmd_preprocess, cmd_report, cmd_train, TrainArgs,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fusionnet::ModelConfig;
use crate::preprocess::GateConfig;
use crate::softlabel::{CalibrationConfig, Renorm};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Frame manifest: a text file of paths or a directory of PNGs.
    pub manifest: Option<PathBuf>,
    pub fer_csv: Option<PathBuf>,
    pub deepface_csv: Option<PathBuf>,
    /// Behavior table for the stub backends.
    pub stub_script: Option<PathBuf>,
}

fn default_fps() -> f64 { 15.0 }
fn default_workers() -> usize { 1 }
fn default_backend() -> String { "stub".into() }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub blur_threshold: f64,
    pub min_face: u32,
    pub min_confidence: f64,
    pub validation_padding: f64,
    pub fps: f64,
    pub workers: usize,
    pub detector: String,
    pub validator: String,
    pub landmarker: String,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let gates = GateConfig::default();
        PreprocessSection {
            blur_threshold: gates.blur_threshold,
            min_face: gates.min_face,
            min_confidence: gates.min_confidence,
            validation_padding: gates.validation_padding,
            fps: default_fps(),
            workers: default_workers(),
            detector: default_backend(),
            validator: default_backend(),
            landmarker: default_backend(),
        }
    }
}

impl PreprocessSection {
    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            blur_threshold: self.blur_threshold,
            min_face: self.min_face,
            min_confidence: self.min_confidence,
            validation_padding: self.validation_padding,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub fer_role: f64,
    pub deepface_role: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection {
            fer_role: 2.0 / 3.0,
            deepface_role: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    pub weights: WeightsSection,
    pub gamma: f64,
    pub temperature: f64,
    pub renorm: Renorm,
    pub fer_scorer_id: String,
    pub deepface_scorer_id: String,
}

impl Default for LabelSection {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        LabelSection {
            weights: WeightsSection::default(),
            gamma: c.gamma,
            temperature: c.temperature,
            renorm: c.renorm,
            fer_scorer_id: c.fer_scorer_id,
            deepface_scorer_id: c.deepface_scorer_id,
        }
    }
}

impl LabelSection {
    pub fn calibration_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            w_fer_role: self.weights.fer_role,
            w_deepface_role: self.weights.deepface_role,
            gamma: self.gamma,
            temperature: self.temperature,
            renorm: self.renorm,
            fer_scorer_id: self.fer_scorer_id.clone(),
            deepface_scorer_id: self.deepface_scorer_id.clone(),
        }
    }
}

fn default_alpha() -> f64 { 0.05 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub alpha: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { alpha: default_alpha() }
    }
}

/// The whole-pipeline configuration. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub dataset: DatasetSection,
    pub preprocess: PreprocessSection,
    pub label: LabelSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            run_dir: default_run_dir(),
            dataset: DatasetSection::default(),
            preprocess: PreprocessSection::default(),
            label: LabelSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config '{}': {e}", path.display())))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Usage(format!("config '{}': {e}", path.display())))?;
        // The global seed is authoritative for every stage.
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn content_hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Writes the effective config snapshot into the run directory.
    pub fn snapshot(&self) -> Result<()> {
        std::fs::create_dir_all(&self.run_dir).map_err(|e| Error::io(&self.run_dir, e))?;
        let path = self.run_dir.join("config.snapshot.toml");
        let text = toml::to_string(self).expect("config serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir.join(stage)
    }
}

/// Known artifact schemas. A schema hash is the SHA-256 of the schema tag
/// and the exact header line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactSchema {
    LandmarksCsv,
    ScorerCsv,
    LabelsCsv,
    PredictionsCsv,
}

impl ArtifactSchema {
    pub fn tag(self) -> &'static str {
        match self {
            ArtifactSchema::LandmarksCsv => "landmarks-csv/v1",
            ArtifactSchema::ScorerCsv => "scorer-csv/v1",
            ArtifactSchema::LabelsCsv => "labels-csv/v1",
            ArtifactSchema::PredictionsCsv => "predictions-csv/v1",
        }
    }

    pub fn expected_header(self) -> String {
        match self {
            ArtifactSchema::LandmarksCsv => {
                let mut cols = vec!["frame_id".to_string(), "face_id".to_string()];
                for i in 0..crate::facegraph::NUM_LANDMARKS {
                    cols.push(format!("x_{i}"));
                    cols.push(format!("y_{i}"));
                    cols.push(format!("z_{i}"));
                }
                cols.join(",")
            }
            ArtifactSchema::ScorerCsv => crate::softlabel::SCORER_CSV_HEADER.to_string(),
            ArtifactSchema::LabelsCsv => {
                format!("{},calib_version", crate::softlabel::SCORER_CSV_HEADER)
            }
            ArtifactSchema::PredictionsCsv => crate::analysis::PREDICTIONS_CSV_HEADER.to_string(),
        }
    }

    pub fn expected_hash(self) -> String {
        hash_schema(self.tag(), &self.expected_header())
    }
}

fn hash_schema(tag: &str, header: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(tag.as_bytes());
    hasher.update(b":");
    hasher.update(header.as_bytes());
    hex::encode(hasher.finalize())
}

/// Validates a CSV artifact's header against its expected schema;
/// mismatches are pipeline-integrity errors naming both hashes.
pub fn validate_csv_schema(path: &Path, schema: ArtifactSchema) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|_| {
        Error::Integrity(format!(
            "required artifact '{}' is missing; run the upstream stage first",
            path.display()
        ))
    })?;
    use std::io::BufRead;
    let mut header = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let header = header.trim_end_matches(['\n', '\r']);
    let actual = hash_schema(schema.tag(), header);
    let expected = schema.expected_hash();
    if actual != expected {
        return Err(Error::Integrity(format!(
            "schema hash mismatch for '{}' ({}): expected {expected}, found {actual}",
            path.display(),
            schema.tag(),
        )));
    }
    Ok(())
}

/// Per-stage provenance written next to each stage's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Artifact name to schema hash for every output this stage wrote.
    pub schemas: BTreeMap<String, String>,
}

impl StageMeta {
    pub fn new(stage: &str, config: &PipelineConfig) -> StageMeta {
        StageMeta {
            stage: stage.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            config_hash: config.content_hash(),
            schemas: BTreeMap::new(),
        }
    }

    pub fn with_schema(mut self, artifact: &str, schema: ArtifactSchema) -> StageMeta {
        self.schemas.insert(artifact.to_string(), schema.expected_hash());
        self
    }

    pub fn write(&self, stage_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(stage_dir).map_err(|e| Error::io(stage_dir, e))?;
        let path = stage_dir.join("stage.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("stage meta: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
