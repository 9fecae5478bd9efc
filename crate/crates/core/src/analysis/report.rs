//! The analysis report bundle: data CSVs for every figure plus the
//! quick-look images and the significance-test text files.

use std::path::Path;

use image::Rgb;

use super::descriptive::{
    descriptive_stats, label_histogram, polarity_summary, EmotionScoreSeries, Polarity,
    PolaritySummary,
};
use super::hypothesis::{anova_oneway, kruskal_wallis, tukey_hsd, StatTestResult, TukeyResult};
use super::kde::{box_summary, gaussian_kde, BoxSummary, KdeCurve};
use super::plots;
use crate::facegraph::EmotionClass;
use crate::{Error, Result};

/// Everything the analysis stage computes.
pub struct AnalysisResults {
    pub stats: Vec<super::descriptive::DescriptiveStats>,
    pub histogram: [u64; 7],
    pub polarity: PolaritySummary,
    pub anova: StatTestResult,
    pub kruskal: StatTestResult,
    pub tukey: TukeyResult,
    pub kde: Vec<KdeCurve>,
    pub boxes: Vec<BoxSummary>,
}

/// Runs the full statistics battery over a prediction series. The seven
/// test groups are the per-class score columns pooled over all frames.
pub fn analyze_series(series: &EmotionScoreSeries, alpha: f64) -> Result<AnalysisResults> {
    if series.is_empty() {
        return Err(Error::EmptyInput("analysis over an empty prediction series".into()));
    }
    let groups: Vec<Vec<f64>> = EmotionClass::ALL
        .iter()
        .map(|&c| series.class_scores(c))
        .collect();
    let mut kde = Vec::with_capacity(7);
    let mut boxes = Vec::with_capacity(7);
    for g in &groups {
        kde.push(gaussian_kde(g, 256)?);
        boxes.push(box_summary(g)?);
    }
    Ok(AnalysisResults {
        stats: descriptive_stats(series)?,
        histogram: label_histogram(series),
        polarity: polarity_summary(series)?,
        anova: anova_oneway(&groups)?,
        kruskal: kruskal_wallis(&groups)?,
        tukey: tukey_hsd(&groups, alpha)?,
        kde,
        boxes,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the whole bundle into `dir`: descriptive stats, histogram,
/// polarity, ANOVA/Kruskal text, Tukey table, KDE and box-plot data CSVs,
/// and the four figure PNGs. Every CSV is a pure function of the inputs.
pub fn render_reports(results: &AnalysisResults, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut stats_csv = String::from("class,n,mean,std,min,q1,median,q3,max,single_observation\n");
    for s in &results.stats {
        stats_csv.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
            s.class.name(),
            s.n,
            s.mean,
            s.std,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max,
            if s.single_observation { 1 } else { 0 },
        ));
    }
    write(&dir.join("emotion_descriptive_stats.csv"), &stats_csv)?;

    let mut hist_csv = String::from("class,count\n");
    for (c, &n) in EmotionClass::ALL.iter().zip(results.histogram.iter()) {
        hist_csv.push_str(&format!("{},{n}\n", c.name()));
    }
    write(&dir.join("label_histogram.csv"), &hist_csv)?;

    let p = &results.polarity;
    let mut polarity_csv = String::from("kind,value,count\n");
    polarity_csv.push_str(&format!(
        "positive_fraction,{:.6},{}\n",
        p.positive_fraction,
        p.children.iter().filter(|c| c.polarity == Polarity::Positive).count()
    ));
    polarity_csv.push_str(&format!(
        "negative_fraction,{:.6},{}\n",
        p.negative_fraction,
        p.children.iter().filter(|c| c.polarity == Polarity::Negative).count()
    ));
    polarity_csv.push_str(&format!("excluded_children,,{}\n", p.excluded.len()));
    write(&dir.join("polarity.csv"), &polarity_csv)?;

    let mut children_csv = String::from("child_id,dominant_class,polarity,non_neutral_mass\n");
    for c in &p.children {
        children_csv.push_str(&format!(
            "{},{},{},{:.9}\n",
            c.child_id,
            c.dominant.name(),
            match c.polarity {
                Polarity::Positive => "positive",
                Polarity::Negative => "negative",
            },
            c.non_neutral_mass,
        ));
    }
    write(&dir.join("polarity_children.csv"), &children_csv)?;

    write(&dir.join("anova.txt"), &results.anova.to_text())?;
    write(&dir.join("kruskal.txt"), &results.kruskal.to_text())?;

    let mut tukey_csv = String::from("group_a,group_b,mean_diff,q_statistic,p_value,significant\n");
    for c in &results.tukey.comparisons {
        tukey_csv.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9e},{}\n",
            EmotionClass::from_index(c.group_a).map(|e| e.name()).unwrap_or("?"),
            EmotionClass::from_index(c.group_b).map(|e| e.name()).unwrap_or("?"),
            c.mean_diff,
            c.q_statistic,
            c.p_value,
            if c.significant { 1 } else { 0 },
        ));
    }
    write(&dir.join("tukey.csv"), &tukey_csv)?;

    let mut kde_csv = String::from("class,x,density,degenerate,location\n");
    for (c, curve) in EmotionClass::ALL.iter().zip(results.kde.iter()) {
        if curve.degenerate {
            kde_csv.push_str(&format!("{},,,1,{:.9}\n", c.name(), curve.location));
        } else {
            for (x, d) in curve.grid.iter().zip(curve.density.iter()) {
                kde_csv.push_str(&format!("{},{x:.9},{d:.9},0,\n", c.name()));
            }
        }
    }
    write(&dir.join("kde.csv"), &kde_csv)?;

    let mut box_csv = String::from("class,whisker_lo,q1,median,q3,whisker_hi,outliers\n");
    for (c, b) in EmotionClass::ALL.iter().zip(results.boxes.iter()) {
        box_csv.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
            c.name(),
            b.whisker_lo,
            b.q1,
            b.median,
            b.q3,
            b.whisker_hi,
            b.outliers,
        ));
    }
    write(&dir.join("box_stats.csv"), &box_csv)?;

    // Figures.
    let save = |img: image::RgbImage, name: &str| -> Result<()> {
        let path = dir.join(name);
        img.save(&path).map_err(|e| Error::Io {
            path,
            source: std::io::Error::other(e.to_string()),
        })
    };
    save(plots::bar_chart(&results.histogram), "label_histogram.png")?;
    let curves: Vec<(Vec<f64>, Vec<f64>)> = results
        .kde
        .iter()
        .filter(|c| !c.degenerate)
        .map(|c| (c.grid.clone(), c.density.clone()))
        .collect();
    save(plots::line_chart(&curves), "kde.png")?;
    save(plots::box_plot(&results.boxes), "box_stats.png")?;
    save(
        plots::pie_chart(&[
            (p.positive_fraction, Rgb([64, 160, 160])),
            (p.negative_fraction, Rgb([240, 128, 110])),
        ]),
        "polarity.png",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facegraph::EmotionDistribution;

    fn series_with_structure() -> EmotionScoreSeries {
        let mut rows = Vec::new();
        for child in 0..4 {
            for f in 0..25 {
                let mut p = [0.1f64; 7];
                p[child % 7] += 0.25 + 0.001 * f as f64;
                let s: f64 = p.iter().sum();
                for v in p.iter_mut() {
                    *v /= s;
                }
                rows.push(super::super::descriptive::ScoreRow {
                    frame_id: format!("c{child:02}_f{f:03}"),
                    child_id: format!("c{child:02}"),
                    dist: EmotionDistribution::new(p).unwrap(),
                });
            }
        }
        EmotionScoreSeries { rows }
    }

    #[test]
    fn analyze_and_render_full_bundle() {
        let series = series_with_structure();
        let results = analyze_series(&series, 0.05).unwrap();
        assert_eq!(results.histogram.iter().sum::<u64>(), 100);
        assert_eq!(results.tukey.comparisons.len(), 21);

        let dir = tempfile::tempdir().unwrap();
        render_reports(&results, dir.path()).unwrap();
        for name in [
            "emotion_descriptive_stats.csv",
            "label_histogram.csv",
            "polarity.csv",
            "polarity_children.csv",
            "anova.txt",
            "kruskal.txt",
            "tukey.csv",
            "kde.csv",
            "box_stats.csv",
            "label_histogram.png",
            "kde.png",
            "box_stats.png",
            "polarity.png",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }

        // Bar CSV rows equal the histogram counts.
        let text = std::fs::read_to_string(dir.path().join("label_histogram.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        for (line, (c, n)) in lines[1..]
            .iter()
            .zip(EmotionClass::ALL.iter().zip(results.histogram.iter()))
        {
            assert_eq!(*line, format!("{},{n}", c.name()));
        }
    }

    #[test]
    fn rendering_is_byte_identical_across_runs() {
        let series = series_with_structure();
        let results = analyze_series(&series, 0.05).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        render_reports(&results, d1.path()).unwrap();
        render_reports(&results, d2.path()).unwrap();
        for name in ["emotion_descriptive_stats.csv", "tukey.csv", "kde.csv", "polarity.csv"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn constant_class_yields_equal_box_points_and_degenerate_kde() {
        // All mass fixed: class scores are constant across frames.
        let rows: Vec<_> = (0..30)
            .map(|i| super::super::descriptive::ScoreRow {
                frame_id: format!("f{i}"),
                child_id: "c0".into(),
                dist: EmotionDistribution::new([0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1]).unwrap(),
            })
            .collect();
        let series = EmotionScoreSeries { rows };
        let results = analyze_series(&series, 0.05);
        // Zero between and zero within variance in every class: ANOVA is
        // defined only against other classes, which differ in mean here.
        let results = results.unwrap();
        let b = &results.boxes[0];
        assert_eq!(b.whisker_lo, b.whisker_hi);
        assert_eq!(b.q1, b.q3);
        assert!(results.kde[0].degenerate);
        // Within-group variance is zero but means differ.
        assert!(results.anova.flags.contains(&"zero_within_variance".to_string()));
    }
}
