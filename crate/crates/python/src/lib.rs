//! Python bindings for the emofusion toolkit: landmark normalization and
//! topology, soft-label calibration, the KL training loss, the learning
//! rate schedule, and the statistics battery.

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use emofusion::analysis;
use emofusion::facegraph;
use emofusion::preprocess;
use emofusion::softlabel;
use emofusion::trainer;

fn err<T>(e: emofusion::Error) -> PyResult<T> {
    Err(PyValueError::new_err(e.to_string()))
}

fn to_dist(p: [f64; 7], what: &str) -> PyResult<facegraph::EmotionDistribution> {
    facegraph::EmotionDistribution::new(p)
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn vec7(v: Vec<f64>, what: &str) -> PyResult<[f64; 7]> {
    v.try_into()
        .map_err(|_| PyValueError::new_err(format!("{what} must have exactly 7 entries")))
}

/// Canonical emotion class names in index order.
#[pyfunction]
fn emotion_classes() -> Vec<&'static str> {
    facegraph::EmotionClass::ALL.iter().map(|c| c.name()).collect()
}

/// Translate landmarks to the nose tip and min-max each axis onto
/// [-1, 1]. Returns (normalized 468x3 rows, per-axis degeneracy flags).
#[pyfunction]
fn normalize_landmarks(coords: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<bool>)> {
    if coords.len() != facegraph::NUM_LANDMARKS || coords.iter().any(|r| r.len() != 3) {
        return Err(PyValueError::new_err(format!(
            "expected {}x3 coordinates",
            facegraph::NUM_LANDMARKS
        )));
    }
    let raw = Array2::from_shape_fn((facegraph::NUM_LANDMARKS, 3), |(r, c)| coords[r][c]);
    match facegraph::normalize_landmarks(&raw) {
        Ok(n) => Ok((
            n.set
                .coords()
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            n.degenerate_axes.to_vec(),
        )),
        Err(e) => err(e),
    }
}

/// The fixed contour edge list of the 468-landmark face graph.
#[pyfunction]
fn build_topology() -> PyResult<Vec<(u16, u16)>> {
    match facegraph::build_topology() {
        Ok(edges) => Ok(edges.into_iter().map(|e| (e.0, e.1)).collect()),
        Err(e) => err(e),
    }
}

/// Content hash of the committed topology.
#[pyfunction]
fn topology_hash() -> PyResult<String> {
    match facegraph::build_topology() {
        Ok(edges) => Ok(facegraph::topology_content_hash(&edges)),
        Err(e) => err(e),
    }
}

/// Laplacian-variance blur score of an RGB image given as row-major
/// bytes.
#[pyfunction]
fn blur_score(pixels: Vec<u8>, width: u32, height: u32) -> PyResult<f64> {
    let img = image::RgbImage::from_raw(width, height, pixels)
        .ok_or_else(|| PyValueError::new_err("pixel buffer does not match width*height*3"))?;
    match preprocess::blur_score(&img) {
        Ok(s) => Ok(s),
        Err(e) => err(e),
    }
}

fn config_from(
    gamma: f64,
    temperature: f64,
    w_fer: f64,
    renorm: &str,
) -> PyResult<softlabel::CalibrationConfig> {
    let renorm = match renorm {
        "softmax" => softlabel::Renorm::Softmax,
        "sum" => softlabel::Renorm::Sum,
        other => return Err(PyValueError::new_err(format!("renorm must be 'softmax' or 'sum', got '{other}'"))),
    };
    Ok(softlabel::CalibrationConfig {
        w_fer_role: w_fer,
        w_deepface_role: 1.0 - w_fer,
        gamma,
        temperature,
        renorm,
        ..softlabel::CalibrationConfig::default()
    })
}

/// Full soft-label calibration: weighted fusion, neutral penalty with
/// renormalization, temperature sharpening.
#[pyfunction]
#[pyo3(signature = (fer, deepface, gamma=0.7, temperature=0.7, w_fer=2.0/3.0, renorm="softmax"))]
fn calibrate(
    fer: Vec<f64>,
    deepface: Vec<f64>,
    gamma: f64,
    temperature: f64,
    w_fer: f64,
    renorm: &str,
) -> PyResult<Vec<f64>> {
    let cfg = config_from(gamma, temperature, w_fer, renorm)?;
    let a = softlabel::ScorerOutput {
        scorer_id: cfg.fer_scorer_id.clone(),
        frame_id: "py".into(),
        dist: to_dist(vec7(fer, "fer")?, "fer")?,
    };
    let b = softlabel::ScorerOutput {
        scorer_id: cfg.deepface_scorer_id.clone(),
        frame_id: "py".into(),
        dist: to_dist(vec7(deepface, "deepface")?, "deepface")?,
    };
    match softlabel::calibrate(&a, &b, &cfg) {
        Ok(d) => Ok(d.as_array().to_vec()),
        Err(e) => err(e),
    }
}

/// Neutral penalty followed by renormalization.
#[pyfunction]
#[pyo3(signature = (p, gamma=0.7, renorm="softmax"))]
fn neutral_penalty(p: Vec<f64>, gamma: f64, renorm: &str) -> PyResult<Vec<f64>> {
    let cfg = config_from(gamma, 1.0, 0.5, renorm)?;
    let d = to_dist(vec7(p, "p")?, "p")?;
    match softlabel::neutral_penalty(&d, gamma, cfg.renorm) {
        Ok(d) => Ok(d.as_array().to_vec()),
        Err(e) => err(e),
    }
}

/// Power-(1/T) sharpening with renormalization.
#[pyfunction]
fn temperature_sharpen(p: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    let d = to_dist(vec7(p, "p")?, "p")?;
    match softlabel::temperature_sharpen(&d, temperature) {
        Ok(d) => Ok(d.as_array().to_vec()),
        Err(e) => err(e),
    }
}

/// Label smoothing: (1 - eps) y + eps/7.
#[pyfunction]
fn smooth_targets(y: Vec<f64>, epsilon: f64) -> PyResult<Vec<f64>> {
    let d = to_dist(vec7(y, "y")?, "y")?;
    match trainer::smooth_targets(&d, epsilon) {
        Ok(t) => Ok(t.dist().as_array().to_vec()),
        Err(e) => err(e),
    }
}

/// Batch-mean KL divergence between smoothed targets and softmax(logits).
#[pyfunction]
fn kl_loss(logits: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
    let b = logits.len();
    if logits.iter().any(|r| r.len() != 7) {
        return Err(PyValueError::new_err("each logit row must have 7 entries"));
    }
    let logits = Array2::from_shape_fn((b, 7), |(i, j)| logits[i][j]);
    let targets = targets
        .into_iter()
        .map(|t| {
            let d = to_dist(vec7(t, "target")?, "target")?;
            trainer::smooth_targets(&d, 0.0).map_err(|e| PyValueError::new_err(e.to_string()))
        })
        .collect::<PyResult<Vec<_>>>()?;
    match trainer::kl_loss(&logits, &targets) {
        Ok(l) => Ok(l),
        Err(e) => err(e),
    }
}

/// Cosine warm-restart learning rate at a (real-valued) epoch.
#[pyfunction]
#[pyo3(signature = (epoch, base, t0=10.0, t_mult=2.0, eta_min=1e-5))]
fn lr_at(epoch: f64, base: f64, t0: f64, t_mult: f64, eta_min: f64) -> PyResult<f64> {
    let sched = trainer::ScheduleConfig {
        t0,
        t_mult,
        eta_min,
        eta_min_backbone: None,
        eta_min_head: None,
    };
    sched.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(trainer::lr_at(epoch, base, &sched))
}

fn test_result_tuple(
    r: analysis::StatTestResult,
) -> (Option<f64>, Option<f64>, Vec<f64>, Vec<String>) {
    (r.statistic, r.p_value, r.dof, r.flags)
}

/// One-way ANOVA: returns (F, p, dof, flags).
#[pyfunction]
fn anova_oneway(groups: Vec<Vec<f64>>) -> PyResult<(Option<f64>, Option<f64>, Vec<f64>, Vec<String>)> {
    match analysis::anova_oneway(&groups) {
        Ok(r) => Ok(test_result_tuple(r)),
        Err(e) => err(e),
    }
}

/// Kruskal-Wallis: returns (H, p, dof, flags).
#[pyfunction]
fn kruskal_wallis(groups: Vec<Vec<f64>>) -> PyResult<(Option<f64>, Option<f64>, Vec<f64>, Vec<String>)> {
    match analysis::kruskal_wallis(&groups) {
        Ok(r) => Ok(test_result_tuple(r)),
        Err(e) => err(e),
    }
}

/// Tukey HSD over all pairs: rows of
/// (group_a, group_b, mean_diff, q, p, significant).
#[pyfunction]
#[pyo3(signature = (groups, alpha=0.05))]
fn tukey_hsd(
    groups: Vec<Vec<f64>>,
    alpha: f64,
) -> PyResult<Vec<(usize, usize, f64, f64, f64, bool)>> {
    match analysis::tukey_hsd(&groups, alpha) {
        Ok(r) => Ok(r
            .comparisons
            .into_iter()
            .map(|c| (c.group_a, c.group_b, c.mean_diff, c.q_statistic, c.p_value, c.significant))
            .collect()),
        Err(e) => err(e),
    }
}

/// Survival function of the studentized range distribution.
#[pyfunction]
fn studentized_range_sf(q: f64, k: usize, dof: f64) -> f64 {
    analysis::special::studentized_range_sf(q, k, dof)
}

#[pymodule]
fn emofusion_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(emotion_classes, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_landmarks, m)?)?;
    m.add_function(wrap_pyfunction!(build_topology, m)?)?;
    m.add_function(wrap_pyfunction!(topology_hash, m)?)?;
    m.add_function(wrap_pyfunction!(blur_score, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(neutral_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_sharpen, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_targets, m)?)?;
    m.add_function(wrap_pyfunction!(kl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(anova_oneway, m)?)?;
    m.add_function(wrap_pyfunction!(kruskal_wallis, m)?)?;
    m.add_function(wrap_pyfunction!(tukey_hsd, m)?)?;
    m.add_function(wrap_pyfunction!(studentized_range_sf, m)?)?;
    Ok(())
}
