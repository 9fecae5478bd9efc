//! The epoch loop: deterministic split and shuffling, per-epoch metrics,
//! checkpointing.

use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, smooth_targets, train_step, AdamW, MetricsReport, SmoothedTarget, TrainConfig};
use crate::facegraph::FaceGraph;
use crate::fusionnet::{normalize_images, save_checkpoint, FusionNet};
use crate::preprocess::FaceSample;
use crate::{Error, Result};

/// In-memory training set: normalized image tensors, face graphs and
/// smoothed soft-label targets, one row per frame.
pub struct Dataset {
    pub frame_ids: Vec<String>,
    pub child_ids: Vec<String>,
    pub images: Array4<f64>,
    pub graphs: Vec<FaceGraph>,
    pub targets: Vec<SmoothedTarget>,
}

impl Dataset {
    /// Builds a dataset from labeled samples. Every sample must carry a
    /// soft label; image tensors are normalized with the model's
    /// per-channel constants and targets are smoothed once here.
    pub fn from_samples(
        samples: &[FaceSample],
        mean: [f64; 3],
        std: [f64; 3],
        smoothing: f64,
    ) -> Result<Dataset> {
        let mut frame_ids = Vec::with_capacity(samples.len());
        let mut child_ids = Vec::with_capacity(samples.len());
        let mut graphs = Vec::with_capacity(samples.len());
        let mut targets = Vec::with_capacity(samples.len());
        let mut crops = Vec::with_capacity(samples.len());
        for s in samples {
            s.validate_crop()?;
            let label = s.soft_label.as_ref().ok_or_else(|| {
                Error::Integrity(format!("frame '{}' has no soft label", s.frame_id))
            })?;
            frame_ids.push(s.frame_id.clone());
            child_ids.push(child_id_of(&s.frame_id));
            graphs.push(s.graph.clone());
            targets.push(smooth_targets(label, smoothing)?);
            crops.push(&s.crop);
        }
        let images = normalize_images(&crops, mean, std)?;
        Ok(Dataset {
            frame_ids,
            child_ids,
            images,
            graphs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    /// Copies the rows at `indices` into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Array4<f64>, Vec<FaceGraph>, Vec<SmoothedTarget>) {
        let images = self.images.select(Axis(0), indices);
        let graphs = indices.iter().map(|&i| self.graphs[i].clone()).collect();
        let targets = indices.iter().map(|&i| self.targets[i]).collect();
        (images, graphs, targets)
    }

    /// Row-subset view as an owned dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            frame_ids: indices.iter().map(|&i| self.frame_ids[i].clone()).collect(),
            child_ids: indices.iter().map(|&i| self.child_ids[i].clone()).collect(),
            images: self.images.select(Axis(0), indices),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// Child id convention: the frame-id prefix before the first underscore.
pub fn child_id_of(frame_id: &str) -> String {
    frame_id.split('_').next().unwrap_or(frame_id).to_string()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub final_metrics: MetricsReport,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z ^ (z >> 33)
}

/// Deterministic train/validation split by frame.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xABCD, 0));
    indices.shuffle(&mut rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let val = indices[..n_val].to_vec();
    let train = indices[n_val..].to_vec();
    (train, val)
}

/// Runs the full training loop. Per-epoch metrics go to `metrics_csv`
/// when set; a rolling checkpoint and the final checkpoint go to
/// `checkpoint_dir` when set. Validation uses the held-out split, or the
/// training set itself when `val_fraction` is 0.
pub fn run_training(
    model: &mut FusionNet,
    dataset: &Dataset,
    cfg: &TrainConfig,
    start_epoch: usize,
    metrics_csv: Option<&Path>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty".into()));
    }

    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::Config("validation split leaves no training frames".into()));
    }
    let val_set = if val_idx.is_empty() {
        dataset.subset(&train_idx)
    } else {
        dataset.subset(&val_idx)
    };

    let mut csv: Option<(std::io::BufWriter<std::fs::File>, PathBuf)> = match metrics_csv {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = std::io::BufWriter::new(f);
            use std::io::Write;
            writeln!(w, "epoch,loss,lr_backbone,lr_head,accuracy,macro_f1")
                .map_err(|e| Error::io(path, e))?;
            Some((w, path.to_path_buf()))
        }
        None => None,
    };

    let mut opt = AdamW::new(model);
    let mut records = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr_backbone = cfg.lr_backbone_at(epoch as f64);
        let lr_head = cfg.lr_head_at(epoch as f64);

        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (images, graphs, targets) = dataset.gather(chunk);
            let stats = train_step(
                model,
                &images,
                &graphs,
                &targets,
                cfg.clip_norm,
                lr_backbone,
                lr_head,
                cfg.weight_decay,
                &mut opt,
                mix(cfg.seed, 2 + epoch as u64, step as u64),
            )?;
            loss_sum += stats.loss;
            steps += 1;
        }
        let loss = loss_sum / steps.max(1) as f64;

        let metrics = evaluate(model, &val_set, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            loss,
            lr_backbone,
            lr_head,
            accuracy: metrics.accuracy,
            macro_f1: metrics.macro_f1,
        };
        if let Some((w, path)) = csv.as_mut() {
            use std::io::Write;
            writeln!(
                w,
                "{},{:.9},{:.12e},{:.12e},{:.6},{:.6}",
                record.epoch, record.loss, record.lr_backbone, record.lr_head,
                record.accuracy, record.macro_f1
            )
            .map_err(|e| Error::io(path.as_path(), e))?;
        }
        records.push(record);

        if let Some(dir) = checkpoint_dir {
            save_checkpoint(model, &dir.join("checkpoint_last.ckpt"), cfg.seed, (epoch + 1) as u32)?;
        }
    }

    if let Some((w, path)) = csv.as_mut() {
        use std::io::Write;
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(model, &dir.join("model_final.ckpt"), cfg.seed, cfg.epochs as u32)?;
    }

    let final_metrics = evaluate(model, &val_set, cfg.batch_size)?;
    Ok(TrainOutcome {
        epochs: records,
        final_metrics,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
