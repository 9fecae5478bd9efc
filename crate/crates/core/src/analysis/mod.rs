//! The statistical reporting layer: descriptive statistics, label
//! histograms, affect polarity, significance tests, and the report
//! bundle.

mod descriptive;
mod hypothesis;
mod kde;
mod plots;
mod report;
pub mod special;

pub use descriptive::{
    descriptive_stats, label_histogram, polarity_of, polarity_summary, ChildPolarity,
    DescriptiveStats, EmotionScoreSeries, Polarity, PolaritySummary, ScoreRow,
    PREDICTIONS_CSV_HEADER,
};
pub use hypothesis::{
    anova_oneway, kruskal_wallis, tukey_hsd, PairwiseComparison, StatTestResult, TukeyResult,
};
pub use kde::{box_summary, gaussian_kde, trapezoid_integral, BoxSummary, KdeCurve};
pub use report::{analyze_series, render_reports, AnalysisResults};
