//! Graph convolution over a fixed topology.
//!
//! Per layer: H' = act(P H W + b) with P = D^{-1/2} (A + I) D^{-1/2},
//! the symmetric-normalized adjacency with self-loops. P is precomputed
//! once per topology and applied as a sparse operator; batches stack node
//! features for all samples into one matrix so the dense matmuls run at
//! full size.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::nn::{relu, relu_mask, PTensor};
use crate::facegraph::Edge;
use crate::{Error, Result};

/// A small generic graph: node count plus undirected edges. The face
/// topology is one instance; tests use arbitrary small graphs.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl GraphTopology {
    pub fn from_edges(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, b) in &edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Shape(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::Shape(format!("self-loop ({a}, {a}) in topology")));
            }
        }
        Ok(GraphTopology { num_nodes, edges })
    }

    pub fn from_face_edges(num_nodes: usize, edges: &[Edge]) -> Result<Self> {
        GraphTopology::from_edges(
            num_nodes,
            edges.iter().map(|e| (e.0 as usize, e.1 as usize)).collect(),
        )
    }
}

/// Precomputed sparse propagation operator P (symmetric).
#[derive(Debug, Clone)]
pub struct SparseProp {
    pub num_nodes: usize,
    /// (row, col, weight) triplets sorted by row then col; includes both
    /// directions of every edge plus the self-loops.
    entries: Vec<(u32, u32, f64)>,
}

impl SparseProp {
    pub fn new(topo: &GraphTopology) -> SparseProp {
        let n = topo.num_nodes;
        let mut degree = vec![1.0f64; n]; // self-loop
        for &(a, b) in &topo.edges {
            degree[a] += 1.0;
            degree[b] += 1.0;
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut entries = Vec::with_capacity(2 * topo.edges.len() + n);
        for i in 0..n {
            entries.push((i as u32, i as u32, inv_sqrt[i] * inv_sqrt[i]));
        }
        for &(a, b) in &topo.edges {
            let w = inv_sqrt[a] * inv_sqrt[b];
            entries.push((a as u32, b as u32, w));
            entries.push((b as u32, a as u32, w));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        SparseProp {
            num_nodes: n,
            entries,
        }
    }

    /// Applies P to each sample block of a stacked (batch * num_nodes, d)
    /// matrix. Entry order is fixed, so accumulation is deterministic.
    pub fn apply_batched(&self, h: &Array2<f64>, batch: usize) -> Array2<f64> {
        assert_eq!(h.nrows(), batch * self.num_nodes);
        let mut out = Array2::zeros(h.raw_dim());
        for s in 0..batch {
            let base = s * self.num_nodes;
            for &(r, c, w) in &self.entries {
                let src = h.row(base + c as usize);
                let mut dst = out.row_mut(base + r as usize);
                dst.scaled_add(w, &src);
            }
        }
        out
    }

    /// Dense matrix form of P, for oracles and small-graph checks.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(r, c, w) in &self.entries {
            m[[r as usize, c as usize]] = w;
        }
        m
    }
}

/// One graph-convolution layer.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub w: PTensor,
    pub b: PTensor,
    pub relu_after: bool,
}

#[derive(Debug, Clone)]
pub struct GcnLayerCache {
    /// M = P H (input after propagation), needed for dW.
    pub m: Array2<f64>,
    /// Pre-activation, needed for the rectifier mask.
    pub z: Array2<f64>,
}

impl GcnLayer {
    pub fn new(name: &str, d_in: usize, d_out: usize, relu_after: bool, rng: &mut ChaCha8Rng) -> Self {
        GcnLayer {
            w: PTensor::new(format!("{name}.weight"), super::nn::uniform_init(rng, &[d_in, d_out], d_in)),
            b: PTensor::new(format!("{name}.bias"), super::nn::uniform_init(rng, &[d_out], d_in)),
            relu_after,
        }
    }

    pub fn forward(
        &self,
        prop: &SparseProp,
        h: &Array2<f64>,
        batch: usize,
    ) -> (Array2<f64>, GcnLayerCache) {
        let m = prop.apply_batched(h, batch);
        let mut z = m.dot(&self.w.v2());
        z += &self.b.v1();
        let out = if self.relu_after { relu(&z) } else { z.clone() };
        (out, GcnLayerCache { m, z })
    }

    pub fn backward(
        &mut self,
        prop: &SparseProp,
        cache: &GcnLayerCache,
        dout: &Array2<f64>,
        batch: usize,
    ) -> Array2<f64> {
        let dz = if self.relu_after {
            dout * &relu_mask(&cache.z)
        } else {
            dout.clone()
        };
        let dw = cache.m.t().dot(&dz);
        self.w.add_grad(&dw.into_dyn());
        let db = dz.sum_axis(Axis(0));
        self.b.add_grad(&db.into_dyn());
        let dm = dz.dot(&self.w.v2().t());
        // P is symmetric, so dH = P dM.
        prop.apply_batched(&dm, batch)
    }
}

/// The three-layer stack: widths in -> hidden -> out -> out, rectifier
/// after the first two layers only.
#[derive(Debug, Clone)]
pub struct GraphConvStack {
    pub layers: Vec<GcnLayer>,
}

#[derive(Debug, Clone)]
pub struct GcnStackCache {
    pub layer_caches: Vec<GcnLayerCache>,
}

impl GraphConvStack {
    pub fn new(name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        GraphConvStack {
            layers: vec![
                GcnLayer::new(&format!("{name}.layer1"), d_in, hidden, true, rng),
                GcnLayer::new(&format!("{name}.layer2"), hidden, d_out, true, rng),
                GcnLayer::new(&format!("{name}.layer3"), d_out, d_out, false, rng),
            ],
        }
    }

    pub fn params(&self) -> Vec<&PTensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut PTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// Batched forward over stacked node features (batch * n, d_in).
    pub fn forward(
        &self,
        prop: &SparseProp,
        h0: &Array2<f64>,
        batch: usize,
    ) -> (Array2<f64>, GcnStackCache) {
        let mut h = h0.clone();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(prop, &h, batch);
            layer_caches.push(cache);
            h = next;
        }
        (h, GcnStackCache { layer_caches })
    }

    pub fn backward(
        &mut self,
        prop: &SparseProp,
        cache: &GcnStackCache,
        dout: &Array2<f64>,
        batch: usize,
    ) -> Array2<f64> {
        let mut d = dout.clone();
        for (layer, lc) in self.layers.iter_mut().zip(cache.layer_caches.iter()).rev() {
            d = layer.backward(prop, lc, &d, batch);
        }
        d
    }
}

/// Single-graph node embeddings: (n, d_in) -> (n, d_out).
pub fn gcn_forward(stack: &GraphConvStack, prop: &SparseProp, h0: &Array2<f64>) -> Result<Array2<f64>> {
    if h0.nrows() != prop.num_nodes {
        return Err(Error::Shape(format!(
            "node feature rows {} != topology nodes {}",
            h0.nrows(),
            prop.num_nodes
        )));
    }
    if h0.ncols() != stack.layers[0].w.v2().nrows() {
        return Err(Error::Shape(format!(
            "node feature width {} != layer-1 input width {}",
            h0.ncols(),
            stack.layers[0].w.v2().nrows()
        )));
    }
    Ok(stack.forward(prop, h0, 1).0)
}

/// Arithmetic mean over each sample's node rows: (batch * n, d) -> (batch, d).
pub fn mean_pool(node_feats: &Array2<f64>, batch: usize, num_nodes: usize) -> Array2<f64> {
    let d = node_feats.ncols();
    let mut out = Array2::zeros((batch, d));
    for s in 0..batch {
        let block = node_feats.slice(ndarray::s![s * num_nodes..(s + 1) * num_nodes, ..]);
        out.row_mut(s).assign(&block.mean_axis(Axis(0)).unwrap());
    }
    out
}

/// Backward of [`mean_pool`]: spreads each pooled gradient uniformly over
/// that sample's node rows.
pub fn mean_pool_backward(dpool: &Array2<f64>, batch: usize, num_nodes: usize) -> Array2<f64> {
    let d = dpool.ncols();
    let scale = 1.0 / num_nodes as f64;
    let mut out = Array2::zeros((batch * num_nodes, d));
    for s in 0..batch {
        let g = dpool.row(s).mapv(|v| v * scale);
        for r in 0..num_nodes {
            out.row_mut(s * num_nodes + r).assign(&g);
        }
    }
    out
}
