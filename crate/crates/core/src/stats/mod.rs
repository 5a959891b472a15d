//! Paired comparison of two conditions and mean ± std summaries.

mod special;
mod table;

pub use special::{ln_gamma, reg_inc_beta, student_t_two_sided};
pub use table::{
    compare_reports, render_table, ComparisonRow, ComparisonTable, Metric, TableFormat,
};

use crate::error::{Error, Result};
use crate::sum::CompensatedSum;

/// p-values strictly below this are significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

pub fn is_significant(p: f64) -> bool {
    p < SIGNIFICANCE_LEVEL
}

/// Two conditions measured on the same subjects, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    condition_a: Vec<f64>,
    condition_b: Vec<f64>,
    metric_name: String,
}

impl PairedSample {
    pub fn new(condition_a: Vec<f64>, condition_b: Vec<f64>, metric_name: impl Into<String>) -> Result<Self> {
        let metric_name = metric_name.into();
        if condition_a.len() != condition_b.len() {
            return Err(Error::invalid(format!(
                "{metric_name}: conditions have {} and {} values",
                condition_a.len(),
                condition_b.len()
            )));
        }
        if condition_a.len() < 2 {
            return Err(Error::invalid(format!(
                "{metric_name}: a paired test needs at least 2 pairs"
            )));
        }
        if condition_a.iter().chain(&condition_b).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{metric_name}: non-finite value")));
        }
        Ok(PairedSample {
            condition_a,
            condition_b,
            metric_name,
        })
    }

    pub fn len(&self) -> usize {
        self.condition_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.condition_a.is_empty()
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn condition_a(&self) -> &[f64] {
        &self.condition_a
    }

    pub fn condition_b(&self) -> &[f64] {
        &self.condition_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: u64,
    pub p_value: f64,
    pub significant: bool,
}

impl TestResult {
    fn new(t_statistic: f64, degrees_of_freedom: u64, p_value: f64) -> Self {
        TestResult {
            t_statistic,
            degrees_of_freedom,
            p_value,
            significant: is_significant(p_value),
        }
    }
}

/// Two-sided paired t-test on the differences `a - b`.
pub fn paired_t_test(s: &PairedSample) -> Result<TestResult> {
    let d: Vec<f64> = s
        .condition_a
        .iter()
        .zip(&s.condition_b)
        .map(|(a, b)| a - b)
        .collect();
    let n = d.len();
    let dof = (n - 1) as u64;
    if d.iter().all(|&x| x == d[0]) {
        return if d[0] == 0.0 {
            Ok(TestResult::new(0.0, dof, 1.0))
        } else {
            Err(Error::DegenerateVariance.context(s.metric_name.clone()))
        };
    }
    let (mean, sd) = mean_std(&d);
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TestResult::new(t, dof, student_t_two_sided(t, dof as f64)))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Arithmetic mean and sample standard deviation (`n - 1` denominator; 0
/// for a single value).
pub fn summarize(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty list"));
    }
    Ok(mean_std(values))
}
