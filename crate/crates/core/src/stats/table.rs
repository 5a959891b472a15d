//! Side-by-side comparison tables: per dataset, one mean ± std row per
//! condition and a p-value row between them, one column per metric.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{is_significant, paired_t_test, summarize, PairedSample};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dice,
    Sensitivity,
    Specificity,
    Hausdorff,
    MeanSurfaceDistance,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Dice,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::Hausdorff,
        Metric::MeanSurfaceDistance,
    ];

    /// Overlap metrics are shown as percentages, distances in mm.
    pub fn is_percentage(self) -> bool {
        matches!(self, Metric::Dice | Metric::Sensitivity | Metric::Specificity)
    }

    pub fn column_title(self) -> &'static str {
        match self {
            Metric::Dice => "Dice (%)",
            Metric::Sensitivity => "Sensitivity (%)",
            Metric::Specificity => "Specificity (%)",
            Metric::Hausdorff => "Hausdorff (mm)",
            Metric::MeanSurfaceDistance => "Mean (mm)",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Hausdorff => "hausdorff_mm",
            Metric::MeanSurfaceDistance => "mssd_mm",
        }
    }

    pub fn of(self, r: &MetricReport) -> f64 {
        match self {
            Metric::Dice => r.dice,
            Metric::Sensitivity => r.sensitivity,
            Metric::Specificity => r.specificity,
            Metric::Hausdorff => r.hausdorff_mm,
            Metric::MeanSurfaceDistance => r.mean_surface_dist_mm,
        }
    }

    fn display_scale(self) -> f64 {
        if self.is_percentage() {
            100.0
        } else {
            1.0
        }
    }
}

/// One (dataset, metric) cell group, in display units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub metric: Metric,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    pub p_value: f64,
    pub significant: bool,
}

impl ComparisonRow {
    pub fn new(dataset: impl Into<String>, metric: Metric, a: (f64, f64), b: (f64, f64), p_value: f64) -> Self {
        ComparisonRow {
            dataset: dataset.into(),
            metric,
            mean_a: a.0,
            std_a: a.1,
            mean_b: b.0,
            std_b: b.1,
            p_value,
            significant: is_significant(p_value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    label_a: String,
    label_b: String,
    rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Every dataset present must have exactly one row per metric.
    pub fn new(label_a: impl Into<String>, label_b: impl Into<String>, rows: Vec<ComparisonRow>) -> Result<Self> {
        for r in &rows {
            if r.std_a < 0.0 || r.std_b < 0.0 || r.std_a.is_nan() || r.std_b.is_nan() {
                return Err(Error::invalid(format!(
                    "{} {:?}: negative standard deviation",
                    r.dataset, r.metric
                )));
            }
            if !(0.0..=1.0).contains(&r.p_value) {
                return Err(Error::invalid(format!("{} {:?}: p outside [0, 1]", r.dataset, r.metric)));
            }
            if r.significant != is_significant(r.p_value) {
                return Err(Error::invalid(format!(
                    "{} {:?}: significance flag disagrees with p",
                    r.dataset, r.metric
                )));
            }
        }
        let table = ComparisonTable {
            label_a: label_a.into(),
            label_b: label_b.into(),
            rows,
        };
        for ds in table.datasets() {
            for m in Metric::ALL {
                let n = table.rows.iter().filter(|r| r.dataset == ds && r.metric == m).count();
                if n != 1 {
                    return Err(Error::invalid(format!(
                        "dataset {ds:?} has {n} rows for {m:?}, expected exactly 1"
                    )));
                }
            }
        }
        Ok(table)
    }

    pub fn rows(&self) -> &[ComparisonRow] {
        &self.rows
    }

    pub fn labels(&self) -> (&str, &str) {
        (&self.label_a, &self.label_b)
    }

    /// Dataset names in order of first appearance.
    pub fn datasets(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.dataset.as_str()) {
                out.push(&r.dataset);
            }
        }
        out
    }

    fn row(&self, dataset: &str, metric: Metric) -> &ComparisonRow {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.metric == metric)
            .expect("validated on construction")
    }
}

/// Pairs two sets of per-subject reports by `subject_id` and tests every
/// metric. Both sets must cover the same subjects.
pub fn compare_reports(dataset: &str, a: &[MetricReport], b: &[MetricReport]) -> Result<Vec<ComparisonRow>> {
    let ctx = |e: Error| e.context(format!("dataset {dataset}"));
    let mut seen = std::collections::HashSet::new();
    for r in a {
        if !seen.insert(r.subject_id.as_str()) {
            return Err(ctx(Error::invalid(format!("duplicate subject {:?} in first set", r.subject_id))));
        }
    }
    let mut by_id = std::collections::HashMap::new();
    for r in b {
        if by_id.insert(r.subject_id.as_str(), r).is_some() {
            return Err(ctx(Error::invalid(format!("duplicate subject {:?} in second set", r.subject_id))));
        }
    }
    if let Some(r) = a.iter().find(|r| !by_id.contains_key(r.subject_id.as_str())) {
        return Err(ctx(Error::invalid(format!("subject {:?} missing from second set", r.subject_id))));
    }
    if let Some(r) = b.iter().find(|r| !seen.contains(r.subject_id.as_str())) {
        return Err(ctx(Error::invalid(format!("subject {:?} missing from first set", r.subject_id))));
    }
    let pairs: Vec<(&MetricReport, &MetricReport)> =
        a.iter().map(|r| (r, by_id[r.subject_id.as_str()])).collect();

    Metric::ALL
        .iter()
        .map(|&m| {
            let scale = m.display_scale();
            let va: Vec<f64> = pairs.iter().map(|(x, _)| m.of(x) * scale).collect();
            let vb: Vec<f64> = pairs.iter().map(|(_, y)| m.of(y) * scale).collect();
            let test = paired_t_test(&PairedSample::new(va.clone(), vb.clone(), m.key())?)?;
            Ok(ComparisonRow::new(dataset, m, summarize(&va)?, summarize(&vb)?, test.p_value))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
    Latex,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            "latex" | "tex" => Ok(TableFormat::Latex),
            other => Err(Error::invalid(format!(
                "unknown table format {other:?}, expected markdown|csv|latex"
            ))),
        }
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:.3}")
}

/// Three decimals; scientific notation once three decimals would show zero.
fn fmt_p(p: f64) -> String {
    if p == 0.0 {
        "0".to_string()
    } else if p >= 0.001 {
        format!("{p:.3}")
    } else {
        format!("{p:.3e}")
    }
}

fn cell(mean: f64, std: f64) -> String {
    format!("{} ± {}", fmt_value(mean), fmt_value(std))
}

fn escape_latex(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' | '%' | '$' | '#' | '_' | '{' | '}' => {
                out.push('\\');
                out.push(ch);
            }
            _ => out.push(ch),
        }
    }
    out
}

fn escape_csv(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_table(t: &ComparisonTable, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => render_markdown(t),
        TableFormat::Csv => render_csv(t),
        TableFormat::Latex => render_latex(t),
    }
}

fn render_markdown(t: &ComparisonTable) -> String {
    let esc = |s: &str| s.replace('|', "\\|");
    let mut out = String::from("| Condition |");
    for m in Metric::ALL {
        let _ = write!(out, " {} |", m.column_title());
    }
    out.push_str("\n|---|---|---|---|---|---|\n");
    for ds in t.datasets() {
        let _ = writeln!(out, "| **{}** | | | | | |", esc(ds));
        let mut line_a = format!("| {} |", esc(&t.label_a));
        let mut line_p = String::from("| *p-value* |");
        let mut line_b = format!("| {} |", esc(&t.label_b));
        for m in Metric::ALL {
            let r = t.row(ds, m);
            let _ = write!(line_a, " {} |", cell(r.mean_a, r.std_a));
            let _ = write!(line_b, " {} |", cell(r.mean_b, r.std_b));
            if r.significant {
                let _ = write!(line_p, " **{}** |", fmt_p(r.p_value));
            } else {
                let _ = write!(line_p, " {} |", fmt_p(r.p_value));
            }
        }
        for line in [line_a, line_p, line_b] {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

fn render_csv(t: &ComparisonTable) -> String {
    let mut out = String::from(
        "dataset,metric,condition_a,mean_a,std_a,condition_b,mean_b,std_b,p_value,significant\n",
    );
    for ds in t.datasets() {
        for m in Metric::ALL {
            let r = t.row(ds, m);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                escape_csv(ds),
                m.key(),
                escape_csv(&t.label_a),
                fmt_value(r.mean_a),
                fmt_value(r.std_a),
                escape_csv(&t.label_b),
                fmt_value(r.mean_b),
                fmt_value(r.std_b),
                fmt_p(r.p_value),
                r.significant
            );
        }
    }
    out
}

fn render_latex(t: &ComparisonTable) -> String {
    let mut out = String::from("\\begin{tabular}{cccccc}\n\\toprule\n\\textbf{Condition}");
    for m in Metric::ALL {
        let _ = write!(out, " & \\textbf{{{}}}", escape_latex(m.column_title()));
    }
    out.push_str(" \\\\\n");
    for ds in t.datasets() {
        let _ = write!(
            out,
            "\\midrule\n\\multicolumn{{6}}{{c}}{{\\textbf{{{}}}}}\\\\\n\\midrule\n",
            escape_latex(ds)
        );
        let mut line_a = format!("\\textbf{{{}}}", escape_latex(&t.label_a));
        let mut line_p = String::from("\\textit{p-value}");
        let mut line_b = format!("\\textbf{{{}}}", escape_latex(&t.label_b));
        for m in Metric::ALL {
            let r = t.row(ds, m);
            let _ = write!(line_a, " & ${} \\pm {}$", fmt_value(r.mean_a), fmt_value(r.std_a));
            let _ = write!(line_b, " & ${} \\pm {}$", fmt_value(r.mean_b), fmt_value(r.std_b));
            if r.significant {
                let _ = write!(line_p, " & $\\boldsymbol{{{}}}$", fmt_p(r.p_value));
            } else {
                let _ = write!(line_p, " & ${}$", fmt_p(r.p_value));
            }
        }
        for line in [line_a, line_p, line_b] {
            out.push_str(&line);
            out.push_str(" \\\\\n");
        }
    }
    out.push_str("\\bottomrule\n\\end{tabular}\n");
    out
}
