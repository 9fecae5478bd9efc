//! The hybrid classifier: an attention-refined global image branch plus a
//! graph-convolution branch over the face landmarks, fused by
//! concatenation into a dense classifier head.
//!
//! The graph branch is fault-isolated per sample: a graph that yields
//! non-finite values anywhere is replaced by the 128-wide zero vector
//! (counted and reported), leaving the image branch and every other
//! sample untouched.

mod attention;
mod backbone;
mod checkpoint;
mod gcn;
mod head;
pub mod nn;

pub use attention::{AttentionBlock, AttentionCache};
pub use backbone::{StubBackbone, FEATURE_DIM, INPUT_SIZE};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use gcn::{
    gcn_forward, mean_pool, mean_pool_backward, GcnLayer, GraphConvStack, GraphTopology,
    SparseProp,
};
pub use head::{ClassifierHead, FUSED_DIM, HIDDEN1, HIDDEN2};

use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::facegraph::{
    build_topology, topology_content_hash, EmotionDistribution, FaceGraph, NUM_CLASSES,
    NUM_LANDMARKS,
};
use crate::{Error, Result};

/// Width of the graph-branch output vector.
pub const GCN_OUT_DIM: usize = 128;

fn default_gcn_hidden() -> usize { 64 }
fn default_cnn_bottleneck() -> usize { 128 }
fn default_gcn_bottleneck() -> usize { 32 }
fn default_dropout1() -> f64 { 0.325 }
fn default_dropout2() -> f64 { 0.275 }
fn default_backbone_kind() -> String { "stub".into() }
fn default_frozen_prefix() -> usize { 44 }
fn default_image_mean() -> [f64; 3] { [0.485, 0.456, 0.406] }
fn default_image_std() -> [f64; 3] { [0.229, 0.224, 0.225] }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcnSection {
    #[serde(default = "default_gcn_hidden")]
    pub hidden: usize,
}

impl Default for GcnSection {
    fn default() -> Self { GcnSection { hidden: default_gcn_hidden() } }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttnSection {
    #[serde(default = "default_cnn_bottleneck")]
    pub cnn_bottleneck: usize,
    #[serde(default = "default_gcn_bottleneck")]
    pub gcn_bottleneck: usize,
}

impl Default for AttnSection {
    fn default() -> Self {
        AttnSection {
            cnn_bottleneck: default_cnn_bottleneck(),
            gcn_bottleneck: default_gcn_bottleneck(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSection {
    #[serde(default = "default_dropout1")]
    pub dropout1: f64,
    #[serde(default = "default_dropout2")]
    pub dropout2: f64,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection { dropout1: default_dropout1(), dropout2: default_dropout2() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    #[serde(default = "default_backbone_kind")]
    pub kind: String,
    #[serde(default = "default_frozen_prefix")]
    pub frozen_prefix: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        BackboneSection {
            kind: default_backbone_kind(),
            frozen_prefix: default_frozen_prefix(),
        }
    }
}

/// Model hyperparameters; every field has the documented default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gcn: GcnSection,
    pub attn: AttnSection,
    pub head: HeadSection,
    pub backbone: BackboneSection,
    pub image_mean: [f64; 3],
    pub image_std: [f64; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gcn: GcnSection::default(),
            attn: AttnSection::default(),
            head: HeadSection::default(),
            backbone: BackboneSection::default(),
            image_mean: default_image_mean(),
            image_std: default_image_std(),
        }
    }
}

impl ModelConfig {
    /// Stable content hash of the configuration.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("model config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone)]
pub struct ParamMeta {
    pub name: String,
    pub group: ParamGroup,
    pub trainable: bool,
}

/// Per-sample fused features exposed for inspection.
#[derive(Debug, Clone)]
pub struct FusionFeatures {
    pub f_cnn_attn: Array1<f64>,
    pub f_gcn: Array1<f64>,
    pub f_fused: Array1<f64>,
}

/// Result of a forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// Pre-softmax scores, one row per sample.
    pub logits: Array2<f64>,
    pub features: Vec<FusionFeatures>,
    /// Per-sample flag: graph branch replaced by the zero vector.
    pub fallback: Vec<bool>,
    pub fallback_count: usize,
}

#[derive(Debug)]
pub struct TrainCache {
    backbone: backbone::BackboneCache,
    cnn_attn: AttentionCache,
    gcn: gcn::GcnStackCache,
    gcn_attn: AttentionCache,
    head: head::HeadCache,
    fallback: Vec<bool>,
    batch: usize,
}

pub struct FusionNet {
    pub config: ModelConfig,
    backbone: StubBackbone,
    cnn_attention: AttentionBlock,
    gcn: GraphConvStack,
    gcn_attention: AttentionBlock,
    head: ClassifierHead,
    prop: SparseProp,
    face_edges: Vec<crate::facegraph::Edge>,
    topology_hash: String,
}

impl FusionNet {
    /// Builds the network with seed-deterministic initialization over the
    /// canonical face topology.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<FusionNet> {
        if config.backbone.kind != "stub" {
            return Err(Error::Config(format!(
                "unknown backbone kind '{}' (built-in: 'stub')",
                config.backbone.kind
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = StubBackbone::new(config.backbone.frozen_prefix, &mut rng)?;
        let cnn_attention =
            AttentionBlock::new("cnn_attention", FEATURE_DIM, config.attn.cnn_bottleneck, &mut rng);
        let gcn = GraphConvStack::new("gcn", 3, config.gcn.hidden, GCN_OUT_DIM, &mut rng);
        let gcn_attention =
            AttentionBlock::new("gcn_attention", GCN_OUT_DIM, config.attn.gcn_bottleneck, &mut rng);
        let head = ClassifierHead::new(config.head.dropout1, config.head.dropout2, &mut rng);

        let face_edges = build_topology()?;
        let topology_hash = topology_content_hash(&face_edges);
        let topo = GraphTopology::from_face_edges(NUM_LANDMARKS, &face_edges)?;
        let prop = SparseProp::new(&topo);
        Ok(FusionNet {
            config: config.clone(),
            backbone,
            cnn_attention,
            gcn,
            gcn_attention,
            head,
            prop,
            face_edges,
            topology_hash,
        })
    }

    pub fn topology_hash(&self) -> &str {
        &self.topology_hash
    }

    pub fn params(&self) -> Vec<&nn::PTensor> {
        let mut out = self.backbone.params();
        out.extend(self.cnn_attention.params());
        out.extend(self.gcn.params());
        out.extend(self.gcn_attention.params());
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut nn::PTensor> {
        let mut out = self.backbone.params_mut();
        out.extend(self.cnn_attention.params_mut());
        out.extend(self.gcn.params_mut());
        out.extend(self.gcn_attention.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    /// Canonical per-tensor metadata: registration order, group, and
    /// trainability (the backbone's frozen prefix).
    pub fn param_meta(&self) -> Vec<ParamMeta> {
        let n_backbone = self.backbone.num_param_tensors();
        let frozen = self.backbone.frozen_prefix();
        self.params()
            .iter()
            .enumerate()
            .map(|(i, p)| ParamMeta {
                name: p.name.clone(),
                group: if i < n_backbone { ParamGroup::Backbone } else { ParamGroup::Head },
                trainable: i >= frozen || i >= n_backbone,
            })
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_batch(&self, images: &Array4<f64>, graphs: &[FaceGraph]) -> Result<usize> {
        let b = images.shape()[0];
        if b != graphs.len() {
            return Err(Error::Shape(format!(
                "batch size mismatch: {b} images vs {} graphs",
                graphs.len()
            )));
        }
        for g in graphs {
            if g.edges != self.face_edges {
                return Err(Error::Shape(
                    "face graph topology differs from the model's committed topology".into(),
                ));
            }
        }
        Ok(b)
    }

    /// Stacks per-sample landmarks into a (batch * nodes, 3) matrix and
    /// flags samples with non-finite coordinates.
    fn stack_landmarks(&self, graphs: &[FaceGraph]) -> (Array2<f64>, Vec<bool>) {
        let b = graphs.len();
        let mut h0 = Array2::zeros((b * NUM_LANDMARKS, 3));
        let mut bad = vec![false; b];
        for (s, g) in graphs.iter().enumerate() {
            let coords = g.landmarks.coords();
            bad[s] = coords.iter().any(|v| !v.is_finite());
            h0.slice_mut(ndarray::s![s * NUM_LANDMARKS..(s + 1) * NUM_LANDMARKS, ..])
                .assign(coords);
        }
        (h0, bad)
    }

    fn run_graph_branch(
        &self,
        graphs: &[FaceGraph],
    ) -> (Array2<f64>, Vec<bool>, gcn::GcnStackCache, AttentionCache) {
        let b = graphs.len();
        let (h0, input_bad) = self.stack_landmarks(graphs);
        let (nodes, gcn_cache) = self.gcn.forward(&self.prop, &h0, b);
        let pooled = mean_pool(&nodes, b, NUM_LANDMARKS);
        let (f_gcn, attn_cache) = self
            .gcn_attention
            .forward(&pooled)
            .expect("pooled width matches the attention block by construction");
        let mut fallback = input_bad;
        for (s, row) in f_gcn.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                fallback[s] = true;
            }
        }
        (f_gcn, fallback, gcn_cache, attn_cache)
    }

    /// Zeroes the graph-branch caches for fallen-back samples so backward
    /// passes see finite (and exactly zero) contributions from them.
    fn sanitize_graph_caches(
        fallback: &[bool],
        f_gcn: &mut Array2<f64>,
        gcn_cache: &mut gcn::GcnStackCache,
        attn_cache: &mut AttentionCache,
    ) {
        for (s, &fb) in fallback.iter().enumerate() {
            if !fb {
                continue;
            }
            f_gcn.row_mut(s).fill(0.0);
            for lc in &mut gcn_cache.layer_caches {
                lc.m
                    .slice_mut(ndarray::s![s * NUM_LANDMARKS..(s + 1) * NUM_LANDMARKS, ..])
                    .fill(0.0);
                lc.z
                    .slice_mut(ndarray::s![s * NUM_LANDMARKS..(s + 1) * NUM_LANDMARKS, ..])
                    .fill(0.0);
            }
            attn_cache.input.row_mut(s).fill(0.0);
            attn_cache.z1.row_mut(s).fill(0.0);
            attn_cache.a1.row_mut(s).fill(0.0);
            attn_cache.weights.row_mut(s).fill(0.0);
            attn_cache.ln.x_hat.row_mut(s).fill(0.0);
            attn_cache.ln.inv_std[s] = 1.0;
        }
    }

    fn assemble_output(
        logits: Array2<f64>,
        fused: &Array2<f64>,
        fallback: Vec<bool>,
    ) -> ForwardOutput {
        let features = fused
            .rows()
            .into_iter()
            .map(|row| FusionFeatures {
                f_cnn_attn: row.slice(ndarray::s![..FEATURE_DIM]).to_owned(),
                f_gcn: row.slice(ndarray::s![FEATURE_DIM..]).to_owned(),
                f_fused: row.to_owned(),
            })
            .collect();
        let fallback_count = fallback.iter().filter(|&&f| f).count();
        ForwardOutput {
            logits,
            features,
            fallback,
            fallback_count,
        }
    }

    /// Evaluation-mode forward: dropout disabled, no caches retained.
    pub fn forward_eval(&self, images: &Array4<f64>, graphs: &[FaceGraph]) -> Result<ForwardOutput> {
        let b = self.check_batch(images, graphs)?;
        let (feat, _) = self.backbone.forward(images, false)?;
        let (f_cnn, _) = self.cnn_attention.forward(&feat)?;
        let (mut f_gcn, fallback, _, _) = self.run_graph_branch(graphs);
        for (s, &fb) in fallback.iter().enumerate() {
            if fb {
                f_gcn.row_mut(s).fill(0.0);
            }
        }
        let mut fused = Array2::zeros((b, FUSED_DIM));
        fused.slice_mut(ndarray::s![.., ..FEATURE_DIM]).assign(&f_cnn);
        fused.slice_mut(ndarray::s![.., FEATURE_DIM..]).assign(&f_gcn);
        let logits = self.head.forward_eval(&fused);
        Ok(Self::assemble_output(logits, &fused, fallback))
    }

    /// Training-mode forward retaining every cache needed by
    /// [`FusionNet::backward`]. Dropout masks derive from `dropout_seed`.
    pub fn forward_train(
        &self,
        images: &Array4<f64>,
        graphs: &[FaceGraph],
        dropout_seed: u64,
    ) -> Result<(ForwardOutput, TrainCache)> {
        let b = self.check_batch(images, graphs)?;
        let (feat, bb_cache) = self.backbone.forward(images, true)?;
        let (f_cnn, cnn_attn_cache) = self.cnn_attention.forward(&feat)?;
        let (mut f_gcn, fallback, mut gcn_cache, mut gcn_attn_cache) = self.run_graph_branch(graphs);
        Self::sanitize_graph_caches(&fallback, &mut f_gcn, &mut gcn_cache, &mut gcn_attn_cache);
        let mut fused = Array2::zeros((b, FUSED_DIM));
        fused.slice_mut(ndarray::s![.., ..FEATURE_DIM]).assign(&f_cnn);
        fused.slice_mut(ndarray::s![.., FEATURE_DIM..]).assign(&f_gcn);
        let (logits, head_cache) = self.head.forward_train(&fused, dropout_seed);
        let output = Self::assemble_output(logits, &fused, fallback.clone());
        Ok((
            output,
            TrainCache {
                backbone: bb_cache.expect("train forward always caches"),
                cnn_attn: cnn_attn_cache,
                gcn: gcn_cache,
                gcn_attn: gcn_attn_cache,
                head: head_cache,
                fallback,
                batch: b,
            },
        ))
    }

    /// Accumulates gradients for dL/dlogits into every trainable tensor.
    pub fn backward(&mut self, cache: &TrainCache, dlogits: &Array2<f64>) {
        let dfused = self.head.backward(&cache.head, dlogits);
        let dcnn = dfused.slice(ndarray::s![.., ..FEATURE_DIM]).to_owned();
        let mut dgcn = dfused.slice(ndarray::s![.., FEATURE_DIM..]).to_owned();
        // Fallen-back samples contributed a constant zero vector.
        for (s, &fb) in cache.fallback.iter().enumerate() {
            if fb {
                dgcn.row_mut(s).fill(0.0);
            }
        }
        let dpool = self.gcn_attention.backward(&cache.gcn_attn, &dgcn);
        let dnodes = mean_pool_backward(&dpool, cache.batch, NUM_LANDMARKS);
        let _dh0 = self.gcn.backward(&self.prop, &cache.gcn, &dnodes, cache.batch);
        let dfeat = self.cnn_attention.backward(&cache.cnn_attn, &dcnn);
        self.backbone.backward(&cache.backbone, &dfeat);
    }

    /// Softmax class distributions in evaluation mode.
    pub fn predict(&self, images: &Array4<f64>, graphs: &[FaceGraph]) -> Result<Vec<EmotionDistribution>> {
        let out = self.forward_eval(images, graphs)?;
        softmax_to_distributions(&out.logits)
    }
}

/// Converts logit rows to validated distributions.
pub fn softmax_to_distributions(logits: &Array2<f64>) -> Result<Vec<EmotionDistribution>> {
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::Shape(format!(
            "logit width {} != {NUM_CLASSES}",
            logits.ncols()
        )));
    }
    let probs = nn::softmax_rows(logits);
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut p = [0.0; NUM_CLASSES];
            for (i, v) in row.iter().enumerate() {
                p[i] = *v;
            }
            EmotionDistribution::new(p)
        })
        .collect()
}

/// Converts 8-bit RGB crops to the normalized Bx3xHxW input tensor using
/// the configured per-channel mean and standard deviation.
pub fn normalize_images(crops: &[&image::RgbImage], mean: [f64; 3], std: [f64; 3]) -> Result<Array4<f64>> {
    let b = crops.len();
    let mut out = Array4::zeros((b, 3, INPUT_SIZE, INPUT_SIZE));
    for (s, crop) in crops.iter().enumerate() {
        let (w, h) = crop.dimensions();
        if w as usize != INPUT_SIZE || h as usize != INPUT_SIZE {
            return Err(Error::Shape(format!(
                "crop {s} is {w}x{h}, expected {INPUT_SIZE}x{INPUT_SIZE}"
            )));
        }
        for y in 0..INPUT_SIZE {
            for x in 0..INPUT_SIZE {
                let px = crop.get_pixel(x as u32, y as u32);
                for c in 0..3 {
                    out[[s, c, y, x]] = (px[c] as f64 / 255.0 - mean[c]) / std[c];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facegraph::{normalize_landmarks, LandmarkSet};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2 as A2;
    use rand::{Rng, SeedableRng};

    fn small_images(rng: &mut ChaCha8Rng, b: usize) -> Array4<f64> {
        Array4::from_shape_fn((b, 3, INPUT_SIZE, INPUT_SIZE), |_| rng.random_range(-1.0..1.0))
    }

    fn random_graph(rng: &mut ChaCha8Rng) -> FaceGraph {
        let raw = A2::from_shape_fn((NUM_LANDMARKS, 3), |_| rng.random_range(-3.0..3.0));
        let n = normalize_landmarks(&raw).unwrap();
        FaceGraph::with_canonical_topology(n.set).unwrap()
    }

    fn poisoned_graph(rng: &mut ChaCha8Rng) -> FaceGraph {
        let g = random_graph(rng);
        let mut coords = g.landmarks.into_coords();
        coords[[10, 0]] = f64::NAN;
        FaceGraph {
            landmarks: LandmarkSet::new(coords).unwrap(),
            edges: g.edges,
        }
    }

    #[test]
    fn forward_shapes_and_finite_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = FusionNet::new(&ModelConfig::default(), 11).unwrap();
        let images = small_images(&mut rng, 2);
        let graphs = vec![random_graph(&mut rng), random_graph(&mut rng)];
        let out = model.forward_eval(&images, &graphs).unwrap();
        assert_eq!(out.logits.shape(), &[2, NUM_CLASSES]);
        assert!(out.logits.iter().all(|v| v.is_finite()));
        assert_eq!(out.fallback_count, 0);
        for f in &out.features {
            assert_eq!(f.f_cnn_attn.len(), FEATURE_DIM);
            assert_eq!(f.f_gcn.len(), GCN_OUT_DIM);
            assert_eq!(f.f_fused.len(), FUSED_DIM);
            // Exact concatenation.
            for i in 0..FEATURE_DIM {
                assert_eq!(f.f_fused[i], f.f_cnn_attn[i]);
            }
            for i in 0..GCN_OUT_DIM {
                assert_eq!(f.f_fused[FEATURE_DIM + i], f.f_gcn[i]);
            }
        }
    }

    #[test]
    fn predict_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = FusionNet::new(&ModelConfig::default(), 3).unwrap();
        let images = small_images(&mut rng, 3);
        let graphs = (0..3).map(|_| random_graph(&mut rng)).collect::<Vec<_>>();
        let dists = model.predict(&images, &graphs).unwrap();
        assert_eq!(dists.len(), 3);
        for d in dists {
            assert_abs_diff_eq!(d.as_array().iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn poisoned_graph_zero_fills_only_its_gcn_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FusionNet::new(&ModelConfig::default(), 5).unwrap();
        let images = small_images(&mut rng, 2);
        let healthy = vec![random_graph(&mut rng), random_graph(&mut rng)];
        let mut poisoned = healthy.clone();
        poisoned[1] = poisoned_graph(&mut rng);

        let out_h = model.forward_eval(&images, &healthy).unwrap();
        let out_p = model.forward_eval(&images, &poisoned).unwrap();
        assert_eq!(out_p.fallback, vec![false, true]);
        assert_eq!(out_p.fallback_count, 1);

        // Sample 0 is bit-identical; sample 1's CNN slots are unchanged
        // and its GCN slots are exactly zero.
        for i in 0..FUSED_DIM {
            assert_eq!(out_p.features[0].f_fused[i], out_h.features[0].f_fused[i]);
        }
        for i in 0..FEATURE_DIM {
            assert_eq!(out_p.features[1].f_cnn_attn[i], out_h.features[1].f_cnn_attn[i]);
        }
        assert!(out_p.features[1].f_gcn.iter().all(|&v| v == 0.0));
        assert!(out_p.logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn train_forward_is_dropout_seed_deterministic_and_backward_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = FusionNet::new(&ModelConfig::default(), 6).unwrap();
        let images = small_images(&mut rng, 2);
        let graphs = vec![random_graph(&mut rng), poisoned_graph(&mut rng)];
        let (out1, cache) = model.forward_train(&images, &graphs, 42).unwrap();
        let (out2, _) = model.forward_train(&images, &graphs, 42).unwrap();
        assert_eq!(out1.logits, out2.logits);

        let dlogits = A2::from_shape_fn((2, NUM_CLASSES), |_| rng.random_range(-1.0..1.0));
        model.zero_grads();
        model.backward(&cache, &dlogits);
        for p in model.params() {
            assert!(
                p.grad.iter().all(|g| g.is_finite()),
                "non-finite gradient in {}",
                p.name
            );
        }
        // The GCN branch still receives gradient from the healthy sample.
        let gcn_grad_norm: f64 = model.gcn.params().iter().map(|p| p.grad.mapv(|g| g * g).sum()).sum();
        assert!(gcn_grad_norm > 0.0);
    }

    #[test]
    fn param_meta_counts_groups_and_freezing() {
        let model = FusionNet::new(&ModelConfig::default(), 7).unwrap();
        let meta = model.param_meta();
        assert_eq!(meta.len(), 50 + 4 + 6 + 4 + 10);
        assert_eq!(meta.iter().filter(|m| m.group == ParamGroup::Backbone).count(), 50);
        assert_eq!(meta.iter().filter(|m| !m.trainable).count(), 44);
        for m in meta.iter().take(44) {
            assert!(!m.trainable);
            assert!(m.name.starts_with("backbone."));
        }
        // Unique names.
        let mut names: Vec<&str> = meta.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), meta.len());
    }

    #[test]
    fn all_zero_parameters_give_uniform_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = FusionNet::new(&ModelConfig::default(), 9).unwrap();
        for p in model.params_mut() {
            p.value.fill(0.0);
        }
        // Layer-norm gains zeroed too: logits must be exactly zero.
        let images = small_images(&mut rng, 2);
        let graphs = vec![random_graph(&mut rng), random_graph(&mut rng)];
        let out = model.forward_eval(&images, &graphs).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
        let dists = softmax_to_distributions(&out.logits).unwrap();
        for d in dists {
            for &v in d.as_array() {
                assert_abs_diff_eq!(v, 1.0 / 7.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_batch_mismatch_and_wrong_backbone_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = FusionNet::new(&ModelConfig::default(), 1).unwrap();
        let images = small_images(&mut rng, 2);
        let graphs = vec![random_graph(&mut rng)];
        assert!(model.forward_eval(&images, &graphs).is_err());

        let bad = ModelConfig {
            backbone: BackboneSection { kind: "resnet50".into(), frozen_prefix: 44 },
            ..ModelConfig::default()
        };
        assert!(FusionNet::new(&bad, 1).is_err());
    }
}
