//! Generates a synthetic demo fixture: frames, manifest, stub-backend
//! script, and the two scorer CSVs, plus a ready-to-run pipeline config.
//!
//! Usage: cargo run --release --example gen_fixture -- <output-dir>

use emofusion::synthetic::{generate_fixture, FixtureSpec};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixture".to_string());
    let dir = std::path::PathBuf::from(out);
    let spec = FixtureSpec::default_64();
    let paths = generate_fixture(&dir, &spec).expect("fixture generation");
    let config = dir.join("pipeline.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 7\nrun_dir = '{}'\n\n[dataset]\nmanifest = '{}'\nfer_csv = '{}'\ndeepface_csv = '{}'\nstub_script = '{}'\n\n[train]\nepochs = 2\nbatch_size = 32\n",
            dir.join("run").display(),
            paths.manifest.display(),
            paths.fer_csv.display(),
            paths.deepface_csv.display(),
            paths.stub_script.display(),
        ),
    )
    .expect("config write");
    println!("fixture: {} frames under {}", spec.total_frames(), paths.frames_dir.display());
    println!("config:  {}", config.display());
}
