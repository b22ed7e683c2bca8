use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::student::two_sided_p;
use crate::error::{bail_validation, Result};

/// Per-fold scores of two methods evaluated on the same folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub method_a: Vec<f64>,
    pub method_b: Vec<f64>,
    /// Test/train size ratio; `None` means `1/(k−1)` as in k-fold CV.
    pub rho: Option<f64>,
}

impl FoldScores {
    pub fn new(method_a: Vec<f64>, method_b: Vec<f64>, rho: Option<f64>) -> Result<Self> {
        let s = Self { method_a, method_b, rho };
        s.validate()?;
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.method_a.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(1.0 / (self.k() as f64 - 1.0))
    }

    fn validate(&self) -> Result<()> {
        if self.method_a.len() != self.method_b.len() {
            bail_validation!("score vectors differ in length ({} vs {})", self.method_a.len(), self.method_b.len());
        }
        if self.k() < 2 {
            bail_validation!("need at least 2 folds, got {}", self.k());
        }
        if let Some(r) = self.rho {
            if !(r >= 0.0 && r.is_finite()) {
                bail_validation!("rho must be finite and non-negative, got {r}");
            }
        }
        if self.method_a.iter().chain(&self.method_b).any(|v| !v.is_finite()) {
            bail_validation!("scores must be finite");
        }
        Ok(())
    }

    pub fn diffs(&self) -> Vec<f64> {
        self.method_a.iter().zip(&self.method_b).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub uncorrected_se: f64,
    pub corrected_se: f64,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub cohens_d: f64,
    pub warning: Option<String>,
}

fn mean_sd(d: &[f64]) -> (f64, f64) {
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, libm::sqrt(var))
}

/// Ratio with the sign of `num` and `±∞` when the spread is zero; `0/0` is 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(num)
    }
}

/// Paired t-test with the variance inflated by `1/k + ρ` to account for
/// overlapping training sets across folds.
pub fn corrected_paired_ttest(scores: &FoldScores) -> Result<TTestResult> {
    scores.validate()?;
    let d = scores.diffs();
    let k = d.len() as f64;
    let (mean, sd) = mean_sd(&d);
    let uncorrected_se = sd / libm::sqrt(k);
    let corrected_se = sd * libm::sqrt(1.0 / k + scores.rho());
    let t = ratio(mean, corrected_se);
    let df = d.len() - 1;
    let warning = (sd == 0.0 && mean != 0.0).then(|| String::from("zero variance in fold differences; t is infinite"));
    Ok(TTestResult {
        mean_diff: mean,
        sd_diff: sd,
        uncorrected_se,
        corrected_se,
        t,
        df,
        p: two_sided_p(t, df as f64),
        cohens_d: ratio(mean, sd),
        warning,
    })
}

/// Same test from summary statistics: mean difference, the uncorrected
/// standard error `sd/√k` and the fold count.
pub fn corrected_ttest_from_summary(mean_diff: f64, uncorrected_se: f64, k: usize, rho: Option<f64>) -> Result<TTestResult> {
    if k < 2 {
        bail_validation!("need at least 2 folds, got {k}");
    }
    if !(uncorrected_se >= 0.0 && uncorrected_se.is_finite() && mean_diff.is_finite()) {
        bail_validation!("mean and standard error must be finite, se non-negative");
    }
    let kf = k as f64;
    let rho = rho.unwrap_or(1.0 / (kf - 1.0));
    if !(rho >= 0.0 && rho.is_finite()) {
        bail_validation!("rho must be finite and non-negative, got {rho}");
    }
    let sd = uncorrected_se * libm::sqrt(kf);
    let corrected_se = sd * libm::sqrt(1.0 / kf + rho);
    let t = ratio(mean_diff, corrected_se);
    let warning = (sd == 0.0 && mean_diff != 0.0).then(|| String::from("zero variance in fold differences; t is infinite"));
    Ok(TTestResult {
        mean_diff,
        sd_diff: sd,
        uncorrected_se,
        corrected_se,
        t,
        df: k - 1,
        p: two_sided_p(t, (k - 1) as f64),
        cohens_d: ratio(mean_diff, sd),
        warning,
    })
}

/// Mean paired difference over its standard deviation.
pub fn cohens_d(scores: &FoldScores) -> Result<f64> {
    scores.validate()?;
    let (mean, sd) = mean_sd(&scores.diffs());
    Ok(ratio(mean, sd))
}
