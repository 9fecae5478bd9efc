//! Canonical emotion classes, the 468-landmark set, the fixed face-graph
//! topology and landmark normalization.
//!
//! Everything here is a pure function over value types; all of it is safe
//! to call concurrently.

mod topology;

pub use topology::{
    build_topology, edges_from_chains, load_topology_file, topology_content_hash,
    write_topology_file, ChainGroup, CONTOUR_CHAINS, TOPOLOGY_VERSION,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of emotion classes.
pub const NUM_CLASSES: usize = 7;

/// Number of face landmarks.
pub const NUM_LANDMARKS: usize = 468;

/// Landmark row treated as the nose tip. The canonical 468-point mesh
/// places the nose tip at index 1; fixed here so normalization is
/// deterministic everywhere.
pub const NOSE_TIP_INDEX: usize = 1;

/// The seven emotion classes in canonical index order. This order is
/// load-bearing: every probability vector, CSV column block and file
/// schema in the toolkit indexes emotions this way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionClass {
    Angry = 0,
    Disgust = 1,
    Fear = 2,
    Happy = 3,
    Sad = 4,
    Surprise = 5,
    Neutral = 6,
}

impl EmotionClass {
    pub const ALL: [EmotionClass; NUM_CLASSES] = [
        EmotionClass::Angry,
        EmotionClass::Disgust,
        EmotionClass::Fear,
        EmotionClass::Happy,
        EmotionClass::Sad,
        EmotionClass::Surprise,
        EmotionClass::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EmotionClass> {
        EmotionClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionClass::Angry => "angry",
            EmotionClass::Disgust => "disgust",
            EmotionClass::Fear => "fear",
            EmotionClass::Happy => "happy",
            EmotionClass::Sad => "sad",
            EmotionClass::Surprise => "surprise",
            EmotionClass::Neutral => "neutral",
        }
    }
}

impl std::fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EmotionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmotionClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown emotion class '{s}'")))
    }
}

/// Tolerance for the sum-to-one check on stored distributions.
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-6;

/// A probability vector over the seven emotion classes.
///
/// Entries are non-negative, bounded by one, and sum to one within
/// [`DISTRIBUTION_SUM_TOL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionDistribution {
    p: [f64; NUM_CLASSES],
}

impl EmotionDistribution {
    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self> {
        for (i, &v) in p.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Distribution(format!("entry {i} is not finite")));
            }
            if !(0.0..=1.0 + DISTRIBUTION_SUM_TOL).contains(&v) {
                return Err(Error::Distribution(format!("entry {i} = {v} outside [0, 1]")));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::Distribution(format!("entries sum to {sum}, expected 1")));
        }
        Ok(EmotionDistribution { p })
    }

    pub fn uniform() -> Self {
        EmotionDistribution {
            p: [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
        }
    }

    pub fn one_hot(class: EmotionClass) -> Self {
        let mut p = [0.0; NUM_CLASSES];
        p[class.index()] = 1.0;
        EmotionDistribution { p }
    }

    pub fn get(&self, class: EmotionClass) -> f64 {
        self.p[class.index()]
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.p
    }

    /// Highest-probability class; ties break toward the lowest canonical
    /// index.
    pub fn argmax(&self) -> EmotionClass {
        let mut best = 0usize;
        for i in 1..NUM_CLASSES {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        EmotionClass::from_index(best).unwrap()
    }
}

/// 468 normalized 3-D landmarks, row-major (x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    coords: Array2<f64>,
}

impl LandmarkSet {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.nrows() != NUM_LANDMARKS || coords.ncols() != 3 {
            return Err(Error::Shape(format!(
                "landmark matrix is {}x{}, expected {NUM_LANDMARKS}x3",
                coords.nrows(),
                coords.ncols()
            )));
        }
        Ok(LandmarkSet { coords })
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> Array2<f64> {
        self.coords
    }
}

/// Result of [`normalize_landmarks`]: the normalized set plus per-axis
/// degeneracy flags (an axis whose extent collapsed to a point maps to
/// all zeros and is flagged rather than aborting a batch).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLandmarks {
    pub set: LandmarkSet,
    pub degenerate_axes: [bool; 3],
}

impl NormalizedLandmarks {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate_axes.iter().any(|&d| d)
    }
}

/// Normalizes raw landmark coordinates: translate so the nose-tip row
/// ([`NOSE_TIP_INDEX`]) sits at the origin, then map each axis affinely
/// so its minimum lands at -1 and its maximum at +1.
///
/// An axis with zero extent after translation maps to all zeros and is
/// flagged degenerate. Non-finite input is rejected.
pub fn normalize_landmarks(raw: &Array2<f64>) -> Result<NormalizedLandmarks> {
    if raw.nrows() != NUM_LANDMARKS || raw.ncols() != 3 {
        return Err(Error::Shape(format!(
            "raw landmark matrix is {}x{}, expected {NUM_LANDMARKS}x3",
            raw.nrows(),
            raw.ncols()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("landmark coordinates contain non-finite values".into()));
    }

    let nose = raw.row(NOSE_TIP_INDEX).to_owned();
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        row -= &nose;
    }

    let mut degenerate = [false; 3];
    for axis in 0..3 {
        let col = out.column(axis);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            degenerate[axis] = true;
            out.column_mut(axis).fill(0.0);
        } else {
            let scale = 2.0 / (hi - lo);
            out.column_mut(axis).mapv_inplace(|v| (v - lo) * scale - 1.0);
        }
    }

    Ok(NormalizedLandmarks {
        set: LandmarkSet::new(out)?,
        degenerate_axes: degenerate,
    })
}

/// An undirected edge between two landmark indices. Stored in contour
/// walk order; `normalized()` gives the (min, max) form used for
/// duplicate checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge(pub u16, pub u16);

impl Edge {
    pub fn normalized(self) -> (u16, u16) {
        if self.0 <= self.1 {
            (self.0, self.1)
        } else {
            (self.1, self.0)
        }
    }
}

/// A face as a fixed-topology graph: the normalized landmarks plus the
/// shared contour edge list. Self-loops are added inside the graph
/// convolution, never stored here.
#[derive(Debug, Clone)]
pub struct FaceGraph {
    pub landmarks: LandmarkSet,
    pub edges: Vec<Edge>,
}

impl FaceGraph {
    /// Builds a face graph over the canonical committed topology.
    pub fn with_canonical_topology(landmarks: LandmarkSet) -> Result<Self> {
        Ok(FaceGraph {
            landmarks,
            edges: build_topology()?,
        })
    }

    pub fn num_nodes(&self) -> usize {
        NUM_LANDMARKS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_landmarks(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((NUM_LANDMARKS, 3), |_| rng.random_range(-5.0..5.0))
    }

    /// Independent two-line oracle: translate to the nose tip, then
    /// per-axis min-max onto [-1, 1].
    fn normalize_oracle(raw: &Array2<f64>) -> Array2<f64> {
        let nose = raw.row(NOSE_TIP_INDEX).to_owned();
        let t = raw - &nose.broadcast((NUM_LANDMARKS, 3)).unwrap();
        let mut out = t.clone();
        for a in 0..3 {
            let lo = t.column(a).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.column(a).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                out.column_mut(a).fill(0.0);
            } else {
                out.column_mut(a).mapv_inplace(|v| -1.0 + 2.0 * (v - lo) / (hi - lo));
            }
        }
        out
    }

    #[test]
    fn emotion_class_order_is_fixed() {
        let names: Vec<&str> = EmotionClass::ALL.iter().map(|c| c.name()).collect();
        assert_eq!(
            names,
            ["angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"]
        );
        for (i, c) in EmotionClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(EmotionClass::from_index(i), Some(*c));
        }
    }

    #[test]
    fn distribution_rejects_bad_input() {
        assert!(EmotionDistribution::new([0.5, 0.5, 0.2, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(EmotionDistribution::new([-0.1, 0.4, 0.2, 0.2, 0.1, 0.1, 0.1]).is_err());
        assert!(EmotionDistribution::new([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).is_err());
        assert!(EmotionDistribution::uniform().as_array().iter().sum::<f64>() - 1.0 < 1e-12);
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        let d = EmotionDistribution::uniform();
        assert_eq!(d.argmax(), EmotionClass::Angry);
        let d = EmotionDistribution::new([0.2, 0.2, 0.2, 0.2, 0.1, 0.05, 0.05]).unwrap();
        assert_eq!(d.argmax(), EmotionClass::Angry);
    }

    #[test]
    fn normalize_all_rows_equal_nose_tip_gives_zero_and_flags() {
        let raw = Array2::from_elem((NUM_LANDMARKS, 3), 3.25);
        let n = normalize_landmarks(&raw).unwrap();
        assert_eq!(n.degenerate_axes, [true, true, true]);
        assert!(n.set.coords().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_fixed_point_on_centered_unit_extent_input() {
        // Nose tip at the origin and every axis spanning exactly [-1, 1]:
        // such an input is a fixed point of the map.
        let mut fixed = Array2::zeros((NUM_LANDMARKS, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for v in fixed.iter_mut() {
            *v = rng.random_range(-0.99..0.99);
        }
        for a in 0..3 {
            fixed[[NOSE_TIP_INDEX, a]] = 0.0;
            fixed[[2, a]] = -1.0;
            fixed[[3, a]] = 1.0;
        }
        let n = normalize_landmarks(&fixed).unwrap();
        assert_eq!(n.degenerate_axes, [false, false, false]);
        for (a, b) in n.set.coords().iter().zip(fixed.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_matches_scripted_oracle() {
        for seed in 0..5 {
            let raw = random_landmarks(seed);
            let n = normalize_landmarks(&raw).unwrap();
            let want = normalize_oracle(&raw);
            for (a, b) in n.set.coords().iter().zip(want.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let mut raw = random_landmarks(3);
        raw[[100, 1]] = f64::INFINITY;
        assert!(normalize_landmarks(&raw).is_err());
    }

    #[test]
    fn normalize_idempotent_translation_and_scale_invariant() {
        let raw = random_landmarks(42);
        let once = normalize_landmarks(&raw).unwrap();
        let twice = normalize_landmarks(once.set.coords()).unwrap();
        for (a, b) in once.set.coords().iter().zip(twice.set.coords().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }

        let shifted = &raw + 17.5;
        let n_shift = normalize_landmarks(&shifted).unwrap();
        for (a, b) in once.set.coords().iter().zip(n_shift.set.coords().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }

        let mut scaled = raw.clone();
        let s = [2.5, 0.3, 7.0];
        for a in 0..3 {
            scaled.column_mut(a).mapv_inplace(|v| v * s[a]);
        }
        let n_scale = normalize_landmarks(&scaled).unwrap();
        for (a, b) in once.set.coords().iter().zip(n_scale.set.coords().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn normalize_output_in_unit_cube(seed in 0u64..1000) {
            let raw = random_landmarks(seed);
            let n = normalize_landmarks(&raw).unwrap();
            for &v in n.set.coords().iter() {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
