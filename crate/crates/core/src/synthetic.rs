//! Deterministic synthetic fixtures: frame images, a stub-backend script,
//! and the two scorer CSVs. Used by the integration tests, the end-to-end
//! smoke run, and the bundled fixture generator example.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::facegraph::{EmotionClass, NUM_CLASSES};
use crate::preprocess::backends::{FrameScript, StubScript};
use crate::softlabel::SCORER_CSV_HEADER;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub num_children: usize,
    pub frames_per_child: usize,
    /// Global frame indices rendered blurry (constant image).
    pub blurry: Vec<usize>,
    /// Global frame indices scripted as detector misses.
    pub no_face: Vec<usize>,
    pub seed: u64,
    pub frame_size: u32,
}

impl FixtureSpec {
    /// The bundled 64-frame fixture: 16 children x 4 frames, two blurry
    /// frames and two detector misses.
    pub fn default_64() -> FixtureSpec {
        FixtureSpec {
            num_children: 16,
            frames_per_child: 4,
            blurry: vec![5, 30],
            no_face: vec![12, 47],
            seed: 2024,
            frame_size: 128,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.num_children * self.frames_per_child
    }
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub frames_dir: PathBuf,
    pub manifest: PathBuf,
    pub stub_script: PathBuf,
    pub fer_csv: PathBuf,
    pub deepface_csv: PathBuf,
}

fn frame_id(child: usize, frame: usize) -> String {
    format!("c{child:02}_f{frame:02}")
}

/// A high-frequency textured frame passes the blur gate; per-frame phase
/// keeps crops visually distinct.
fn sharp_frame(size: u32, phase: u32) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let v = if (x + y + phase) % 2 == 0 { 30 } else { 225 };
        let r = ((x * 3 + phase * 17) % 256) as u8;
        Rgb([r, v, 255 - v])
    })
}

fn blurry_frame(size: u32) -> RgbImage {
    RgbImage::from_pixel(size, size, Rgb([120, 120, 120]))
}

/// Per-child emotion bias: the first eleven of every fifteen children
/// lean positive (happy/surprise), the rest lean negative, mirroring the
/// shape of real session data.
fn child_bias(child: usize) -> EmotionClass {
    match child % 15 {
        0..=7 => EmotionClass::Happy,
        8..=10 => EmotionClass::Surprise,
        11 | 12 => EmotionClass::Sad,
        13 => EmotionClass::Angry,
        _ => EmotionClass::Fear,
    }
}

fn scorer_row(rng: &mut ChaCha8Rng, bias: EmotionClass, strength: f64) -> [f64; NUM_CLASSES] {
    let mut p = [0.0f64; NUM_CLASSES];
    let mut sum = 0.0;
    for v in p.iter_mut() {
        *v = rng.random_range(0.02..0.3);
        sum += *v;
    }
    p[bias.index()] += strength;
    sum += strength;
    p.map(|v| v / sum)
}

/// Writes the complete fixture into `dir` and returns the paths.
pub fn generate_fixture(dir: &Path, spec: &FixtureSpec) -> Result<FixturePaths> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut manifest_lines = Vec::new();
    let mut script = StubScript::default();
    let mut fer = String::from(SCORER_CSV_HEADER);
    fer.push('\n');
    let mut deepface = fer.clone();

    let mut global = 0usize;
    for child in 0..spec.num_children {
        for frame in 0..spec.frames_per_child {
            let id = frame_id(child, frame);
            let img = if spec.blurry.contains(&global) {
                blurry_frame(spec.frame_size)
            } else {
                sharp_frame(spec.frame_size, global as u32)
            };
            let path = frames_dir.join(format!("{id}.png"));
            img.save(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            manifest_lines.push(format!("frames/{id}.png"));

            if spec.no_face.contains(&global) {
                script.frames.insert(
                    id.clone(),
                    FrameScript {
                        detections: Some(vec![]),
                        ..FrameScript::default()
                    },
                );
            }

            let bias = child_bias(child);
            let strength = rng.random_range(0.6..1.2);
            let fer_p = scorer_row(&mut rng, bias, strength);
            let df_p = scorer_row(&mut rng, bias, strength * 0.8);
            let fmt = |p: [f64; NUM_CLASSES]| {
                p.iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>().join(",")
            };
            fer.push_str(&format!("{id},{}\n", fmt(fer_p)));
            deepface.push_str(&format!("{id},{}\n", fmt(df_p)));
            global += 1;
        }
    }

    let manifest = dir.join("frames.manifest");
    std::fs::write(&manifest, manifest_lines.join("\n") + "\n")
        .map_err(|e| Error::io(&manifest, e))?;
    let stub_script = dir.join("stub_script.json");
    script.save(&stub_script)?;
    let fer_csv = dir.join("fer_scores.csv");
    std::fs::write(&fer_csv, fer).map_err(|e| Error::io(&fer_csv, e))?;
    let deepface_csv = dir.join("deepface_scores.csv");
    std::fs::write(&deepface_csv, deepface).map_err(|e| Error::io(&deepface_csv, e))?;

    Ok(FixturePaths {
        root: dir.to_path_buf(),
        frames_dir,
        manifest,
        stub_script,
        fer_csv,
        deepface_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::blur_score;

    #[test]
    fn fixture_is_deterministic_and_gates_as_designed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = FixtureSpec::default_64();
        let p1 = generate_fixture(d1.path(), &spec).unwrap();
        let p2 = generate_fixture(d2.path(), &spec).unwrap();

        assert_eq!(
            std::fs::read(&p1.fer_csv).unwrap(),
            std::fs::read(&p2.fer_csv).unwrap()
        );
        assert_eq!(
            std::fs::read(&p1.stub_script).unwrap(),
            std::fs::read(&p2.stub_script).unwrap()
        );

        let manifest = std::fs::read_to_string(&p1.manifest).unwrap();
        assert_eq!(manifest.lines().count(), 64);

        // The blurry frames score under the gate; sharp frames over it.
        let blurry = image::open(p1.frames_dir.join("c01_f01.png")).unwrap().to_rgb8();
        assert!(blur_score(&blurry).unwrap() < 25.0);
        let sharp = image::open(p1.frames_dir.join("c00_f00.png")).unwrap().to_rgb8();
        assert!(blur_score(&sharp).unwrap() > 25.0);
    }
}
