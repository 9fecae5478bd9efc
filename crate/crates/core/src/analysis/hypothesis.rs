//! One-way ANOVA, Kruskal-Wallis, and Tukey HSD over k groups of
//! observations.

use serde::{Deserialize, Serialize};

use super::special::{chi2_sf, f_sf, studentized_range_sf};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test_name: String,
    /// None when the statistic is undefined (see `flags`).
    pub statistic: Option<f64>,
    pub dof: Vec<f64>,
    pub p_value: Option<f64>,
    pub flags: Vec<String>,
}

impl StatTestResult {
    /// Key-value text rendering for report files.
    pub fn to_text(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.9e}"),
            None => "undefined".to_string(),
        };
        format!(
            "test {}\nstatistic {}\ndof {}\np_value {}\nflags {}\n",
            self.test_name,
            fmt_opt(self.statistic),
            self.dof.iter().map(|d| format!("{d}")).collect::<Vec<_>>().join(","),
            fmt_opt(self.p_value),
            if self.flags.is_empty() { "none".to_string() } else { self.flags.join(",") },
        )
    }
}

fn check_groups(groups: &[Vec<f64>]) -> Result<(usize, usize)> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::Usage(format!("need at least 2 groups, got {k}")));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Usage("every group needs at least one observation".into()));
    }
    if n < k + 2 {
        return Err(Error::Usage(format!(
            "need at least 2 observations beyond the group count ({} total for {k} groups)",
            k + 2
        )));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite observation".into()));
    }
    Ok((k, n))
}

struct AnovaDecomposition {
    ss_between: f64,
    ss_within: f64,
    df_between: f64,
    df_within: f64,
    means: Vec<f64>,
}

fn anova_decompose(groups: &[Vec<f64>]) -> Result<AnovaDecomposition> {
    let (k, n) = check_groups(groups)?;
    // A constant group has its mean pinned to the constant and
    // contributes exactly zero within-group variance, so the degenerate
    // branches trigger exactly rather than on summation roundoff.
    let means: Vec<f64> = groups
        .iter()
        .map(|g| {
            if g.iter().all(|&x| x == g[0]) {
                g[0]
            } else {
                g.iter().sum::<f64>() / g.len() as f64
            }
        })
        .collect();
    let grand: f64 = if means.iter().all(|&m| m == means[0]) {
        means[0]
    } else {
        groups.iter().flatten().sum::<f64>() / n as f64
    };
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m) * (x - m)).sum::<f64>())
        .sum();
    Ok(AnovaDecomposition {
        ss_between,
        ss_within,
        df_between: (k - 1) as f64,
        df_within: (n - k) as f64,
        means,
    })
}

/// Classic one-way F test. An all-constant input (zero between-group and
/// zero within-group variance) yields an undefined-F flag instead of a
/// number; zero within-group variance alone is flagged with p = 0.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<StatTestResult> {
    let d = anova_decompose(groups)?;
    let dof = vec![d.df_between, d.df_within];
    if d.ss_within == 0.0 && d.ss_between == 0.0 {
        return Ok(StatTestResult {
            test_name: "anova_oneway".into(),
            statistic: None,
            dof,
            p_value: None,
            flags: vec!["undefined_f".into()],
        });
    }
    if d.ss_within == 0.0 {
        return Ok(StatTestResult {
            test_name: "anova_oneway".into(),
            statistic: None,
            dof,
            p_value: Some(0.0),
            flags: vec!["zero_within_variance".into()],
        });
    }
    let msb = d.ss_between / d.df_between;
    let msw = d.ss_within / d.df_within;
    let f = msb / msw;
    Ok(StatTestResult {
        test_name: "anova_oneway".into(),
        statistic: Some(f),
        p_value: Some(f_sf(f, d.df_between, d.df_within)),
        dof,
        flags: vec![],
    })
}

/// Mid-ranks over the pooled sample, with tie multiplicities for the
/// standard correction.
fn pooled_midranks(groups: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        for (xi, &x) in g.iter().enumerate() {
            pooled.push((x, gi, xi));
        }
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ranks: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut ties = Vec::new();
    let n = pooled.len();
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // Average rank for the tied run (1-indexed ranks i+1..=j+1).
        let avg = (i + j + 2) as f64 / 2.0;
        for item in pooled.iter().take(j + 1).skip(i) {
            ranks[item.1][item.2] = avg;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Kruskal-Wallis H with mid-rank tie handling and the standard tie
/// correction. All observations identical yields H = 0 with an all-ties
/// flag.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<StatTestResult> {
    let (k, n) = check_groups(groups)?;
    let (ranks, ties) = pooled_midranks(groups);
    let n_f = n as f64;
    let h_raw: f64 = 12.0 / (n_f * (n_f + 1.0))
        * ranks
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                s * s / r.len() as f64
            })
            .sum::<f64>()
        - 3.0 * (n_f + 1.0);
    let correction = 1.0
        - ties
            .iter()
            .map(|&t| (t * t * t - t) as f64)
            .sum::<f64>()
            / (n_f * n_f * n_f - n_f);
    let dof = vec![(k - 1) as f64];
    if correction == 0.0 {
        return Ok(StatTestResult {
            test_name: "kruskal_wallis".into(),
            statistic: Some(0.0),
            p_value: Some(1.0),
            dof,
            flags: vec!["all_ties".into()],
        });
    }
    // Guard tiny negative residue from floating cancellation.
    let h = (h_raw / correction).max(0.0);
    Ok(StatTestResult {
        test_name: "kruskal_wallis".into(),
        statistic: Some(h),
        p_value: Some(chi2_sf(h, (k - 1) as f64)),
        dof,
        flags: vec![],
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub group_a: usize,
    pub group_b: usize,
    pub mean_diff: f64,
    pub q_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TukeyResult {
    pub alpha: f64,
    pub dof_within: f64,
    pub comparisons: Vec<PairwiseComparison>,
    pub flags: Vec<String>,
}

/// Tukey HSD over all pairs, with the Tukey-Kramer standard error for
/// unequal group sizes: se = sqrt(msw/2 (1/n_a + 1/n_b)).
pub fn tukey_hsd(groups: &[Vec<f64>], alpha: f64) -> Result<TukeyResult> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Usage(format!("alpha = {alpha} outside (0, 1)")));
    }
    let d = anova_decompose(groups)?;
    let k = groups.len();
    let msw = d.ss_within / d.df_within;
    let mut flags = Vec::new();
    if msw == 0.0 {
        flags.push("zero_within_variance".into());
    }
    let mut comparisons = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let diff = d.means[a] - d.means[b];
            let se = (msw / 2.0 * (1.0 / groups[a].len() as f64 + 1.0 / groups[b].len() as f64)).sqrt();
            let (q, p) = if se == 0.0 {
                if diff == 0.0 {
                    (0.0, 1.0)
                } else {
                    (f64::INFINITY, 0.0)
                }
            } else {
                let q = diff.abs() / se;
                (q, studentized_range_sf(q, k, d.df_within))
            };
            comparisons.push(PairwiseComparison {
                group_a: a,
                group_b: b,
                mean_diff: diff,
                q_statistic: q,
                p_value: p,
                significant: p < alpha,
            });
        }
    }
    Ok(TukeyResult {
        alpha,
        dof_within: d.df_within,
        comparisons,
        flags,
    })
}
