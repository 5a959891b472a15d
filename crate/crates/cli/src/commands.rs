use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use silverseg::fusion::{majority_vote, staple_fuse, threshold_mask, PriorMode, RaterSet, StapleConfig};
use silverseg::metrics::{self, read_reports, write_reports};
use silverseg::pipeline::{
    extract_patches, fuse_triplanar, largest_connected_component, normalize, predict_triplanar,
    split_folds, trivial_predictor, write_patchset, PatchConfig, Predictor, PredictorSpec,
};
use silverseg::stats::{compare_reports, render_table, summarize, ComparisonTable, Metric, TableFormat};
use silverseg::volume::{load_mask, load_volume, save_mask, save_volume};
use silverseg::{IntensityKind, PlaneAxis};

use crate::error::{CliError, CliResult};
use crate::{
    CompareArgs, EvaluateArgs, FuseArgs, PostprocessArgs, PredictArgs, PrepPatchesArgs, ReportArgs,
    SplitArgs, ThresholdArgs, TrivialPredictArgs, VoteArgs,
};

fn same_path(a: &Path, b: &Path) -> bool {
    a == b || matches!((fs::canonicalize(a), fs::canonicalize(b)), (Ok(x), Ok(y)) if x == y)
}

/// Rejects any output that would overwrite an input.
fn ensure_outputs_distinct(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    for o in outputs {
        if let Some(i) = inputs.iter().find(|i| same_path(i, o)) {
            return Err(CliError::usage(format!(
                "output {} would overwrite input {}",
                o.display(),
                i.display()
            )));
        }
    }
    Ok(())
}

fn ensure_unit_interval(name: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::usage(format!("--{name} must lie in [0, 1], got {v}")))
    }
}

fn stem(p: &Path) -> String {
    let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".hdr", ".csv"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_owned();
        }
    }
    name
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn to_json(value: &impl Serialize, path: &Path) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct RaterEntry<'a> {
    id: &'a str,
    sensitivity: f64,
    specificity: f64,
}

#[derive(Serialize)]
struct FuseSidecar<'a> {
    raters: Vec<RaterEntry<'a>>,
    iterations: usize,
    converged: bool,
    prior_foreground: f64,
    threshold: f64,
}

pub fn fuse(a: FuseArgs) -> CliResult<()> {
    ensure_unit_interval("threshold", a.threshold)?;
    if !a.ids.is_empty() && a.ids.len() != a.raters.len() {
        return Err(CliError::usage(format!(
            "{} --ids given for {} --raters",
            a.ids.len(),
            a.raters.len()
        )));
    }
    let config = StapleConfig {
        max_iterations: a.max_iterations,
        tolerance: a.tolerance,
        initial_sensitivity: a.initial_sensitivity,
        initial_specificity: a.initial_specificity,
        prior: a.prior.map_or(PriorMode::MeanForegroundFraction, PriorMode::Fixed),
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let inputs: Vec<&Path> = a.raters.iter().map(PathBuf::as_path).collect();
    let outputs: Vec<&Path> = [Some(a.out.as_path()), a.posterior.as_deref(), a.json.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    ensure_outputs_distinct(&inputs, &outputs)?;

    let ids = if a.ids.is_empty() {
        let stems: Vec<String> = a.raters.iter().map(|p| stem(p)).collect();
        let mut sorted = stems.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() == stems.len() {
            stems
        } else {
            a.raters.iter().map(|p| p.display().to_string()).collect()
        }
    } else {
        a.ids.clone()
    };
    let masks = a.raters.iter().map(load_mask).collect::<Result<Vec<_>, _>>()?;
    let set = RaterSet::new(masks, ids)?;
    let result = staple_fuse(&set, &config)?;
    save_mask(&result.silver_mask(a.threshold)?, &a.out)?;
    if let Some(p) = &a.posterior {
        save_volume(&result.posterior_volume(), p)?;
    }
    if let Some(p) = &a.json {
        let sidecar = FuseSidecar {
            raters: result
                .rater_ids
                .iter()
                .zip(&result.performances)
                .map(|(id, perf)| RaterEntry {
                    id,
                    sensitivity: perf.sensitivity,
                    specificity: perf.specificity,
                })
                .collect(),
            iterations: result.iterations,
            converged: result.converged,
            prior_foreground: result.prior_foreground,
            threshold: a.threshold,
        };
        write_output(Some(p), &to_json(&sidecar, p)?)?;
    }
    if !result.converged {
        eprintln!(
            "silverseg: warning: STAPLE stopped after {} iterations without converging",
            result.iterations
        );
    }
    Ok(())
}

pub fn vote(a: VoteArgs) -> CliResult<()> {
    let inputs: Vec<&Path> = a.raters.iter().map(PathBuf::as_path).collect();
    ensure_outputs_distinct(&inputs, &[&a.out])?;
    let masks = a.raters.iter().map(load_mask).collect::<Result<Vec<_>, _>>()?;
    let set = RaterSet::with_default_ids(masks)?;
    save_mask(&majority_vote(&set), &a.out)?;
    Ok(())
}

pub fn threshold(a: ThresholdArgs) -> CliResult<()> {
    ensure_unit_interval("threshold", a.threshold)?;
    ensure_outputs_distinct(&[&a.input], &[&a.out])?;
    let prob = load_volume(&a.input)?.with_kind(IntensityKind::Probability)?;
    save_mask(&threshold_mask(&prob, a.threshold)?, &a.out)?;
    Ok(())
}

pub fn prep_patches(a: PrepPatchesArgs) -> CliResult<()> {
    if a.patch_size == 0 || a.per_slice == 0 {
        return Err(CliError::usage("--patch-size and --per-slice must be positive"));
    }
    if a.subject.is_empty() || a.subject.contains(['/', '\\']) {
        return Err(CliError::usage(format!("--subject {:?} is not a usable file name", a.subject)));
    }
    let mut axes = if a.axis.is_empty() { PlaneAxis::ALL.to_vec() } else { a.axis.clone() };
    axes.sort();
    axes.dedup();
    let config = PatchConfig {
        size: a.patch_size,
        per_slice: a.per_slice,
    };

    let image = normalize(&load_volume(&a.image)?).map_err(|e| e.context("normalize"))?;
    let mask = load_mask(&a.mask)?;
    let sets = axes
        .iter()
        .map(|&axis| extract_patches(&image, &mask, axis, &a.subject, a.seed, &config))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    for (axis, set) in axes.iter().zip(&sets) {
        let path = a.out_dir.join(format!("{}_{axis}.patches", a.subject));
        write_patchset(set, &path)?;
        eprintln!("silverseg: {}: {} patches", path.display(), set.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct SplitOutput {
    k: usize,
    seed: u64,
    assignment: BTreeMap<String, usize>,
    folds: Vec<Vec<String>>,
}

pub fn split(a: SplitArgs) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::usage("--k must be positive"));
    }
    if let (Some(out), Some(list)) = (&a.out, &a.subjects_file) {
        ensure_outputs_distinct(&[list], &[out])?;
    }
    let ids: Vec<String> = match &a.subjects_file {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| CliError::io(p, e))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect(),
        None => a.ids.clone(),
    };
    let folds = split_folds(&ids, a.k, a.seed)?;
    let mut per_fold = folds.folds(&ids);
    per_fold.iter_mut().for_each(|f| f.sort());
    let out = SplitOutput {
        k: folds.k,
        seed: folds.seed,
        assignment: folds.assignment,
        folds: per_fold,
    };
    let path = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    write_output(a.out.as_deref(), &to_json(&out, &path)?)
}

pub fn predict(a: PredictArgs) -> CliResult<()> {
    let template = |specific: &Option<String>, axis: PlaneAxis| -> CliResult<PredictorSpec> {
        let t = specific.as_ref().or(a.command.as_ref()).ok_or_else(|| {
            CliError::usage(format!("no predictor command for {axis}: pass --command or --command-{axis}"))
        })?;
        PredictorSpec::new(t.clone(), a.timeout).map_err(|e| CliError::usage(e.to_string()))
    };
    let specs = [
        template(&a.command_axial, PlaneAxis::Axial)?,
        template(&a.command_coronal, PlaneAxis::Coronal)?,
        template(&a.command_sagittal, PlaneAxis::Sagittal)?,
    ];
    ensure_outputs_distinct(&[&a.image], &[&a.out])?;

    let image = normalize(&load_volume(&a.image)?).map_err(|e| e.context("normalize"))?;
    let predictors: [&dyn Predictor; 3] = [&specs[0], &specs[1], &specs[2]];
    let [ax, cor, sag] = predict_triplanar(&image, predictors)?;
    if let Some(dir) = &a.prob_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (axis, p) in PlaneAxis::ALL.iter().zip([&ax, &cor, &sag]) {
            save_volume(p, dir.join(format!("prob_{axis}.nii.gz")))?;
        }
    }
    let fused = fuse_triplanar(&ax, &cor, &sag).map_err(|e| e.context("fuse"))?;
    save_mask(&largest_connected_component(&fused), &a.out)?;
    Ok(())
}

pub fn postprocess(a: PostprocessArgs) -> CliResult<()> {
    let mut inputs: Vec<&Path> = a.probs.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.mask.as_deref());
    ensure_outputs_distinct(&inputs, &[&a.out])?;
    let mask = match &a.mask {
        Some(m) => load_mask(m)?,
        None => {
            let p = a
                .probs
                .iter()
                .map(|p| load_volume(p)?.with_kind(IntensityKind::Probability))
                .collect::<Result<Vec<_>, _>>()?;
            fuse_triplanar(&p[0], &p[1], &p[2])?
        }
    };
    save_mask(&largest_connected_component(&mask), &a.out)?;
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    if let Some(out) = &a.out {
        ensure_outputs_distinct(&[&a.pred, &a.reference], &[out])?;
    }
    let pred = load_mask(&a.pred)?;
    let reference = load_mask(&a.reference)?;
    let report = metrics::evaluate(&pred, &reference, &a.subject)?;
    match &a.out {
        None => write_reports(std::io::stdout().lock(), &[report], true)?,
        Some(p) => {
            let file = if a.append {
                OpenOptions::new().create(true).append(true).open(p)
            } else {
                File::create(p)
            }
            .map_err(|e| CliError::io(p, e))?;
            let empty = file.metadata().map_err(|e| CliError::io(p, e))?.len() == 0;
            write_reports(file, &[report], empty)?;
        }
    }
    Ok(())
}

pub fn compare(a: CompareArgs) -> CliResult<()> {
    if a.a.len() != a.b.len() {
        return Err(CliError::usage(format!("{} --a files but {} --b files", a.a.len(), a.b.len())));
    }
    if !a.dataset.is_empty() && a.dataset.len() != a.a.len() {
        return Err(CliError::usage(format!(
            "{} --dataset names for {} --a files",
            a.dataset.len(),
            a.a.len()
        )));
    }
    if let Some(out) = &a.out {
        let inputs: Vec<&Path> = a.a.iter().chain(&a.b).map(PathBuf::as_path).collect();
        ensure_outputs_distinct(&inputs, &[out])?;
    }
    let names: Vec<String> = if a.dataset.is_empty() {
        a.a.iter().map(|p| stem(p)).collect()
    } else {
        a.dataset.clone()
    };
    let mut rows = Vec::new();
    for ((name, pa), pb) in names.iter().zip(&a.a).zip(&a.b) {
        rows.extend(compare_reports(name, &read_reports(pa)?, &read_reports(pb)?)?);
    }
    let table = ComparisonTable::new(a.label_a, a.label_b, rows)?;
    write_output(a.out.as_deref(), &render_table(&table, a.format))
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    if a.format == TableFormat::Latex {
        return Err(CliError::usage("report supports --format markdown or csv"));
    }
    if let Some(out) = &a.out {
        ensure_outputs_distinct(&[&a.metrics], &[out])?;
    }
    let reports = read_reports(&a.metrics)?;
    let mut text = match a.format {
        TableFormat::Csv => String::from("metric,n,mean,std\n"),
        _ => String::from("| Metric | n | Mean | Std |\n|---|---|---|---|\n"),
    };
    for m in Metric::ALL {
        let scale = if m.is_percentage() { 100.0 } else { 1.0 };
        let values: Vec<f64> = reports.iter().map(|r| m.of(r) * scale).collect();
        let (mean, std) = summarize(&values)?;
        let n = values.len();
        text.push_str(&match a.format {
            TableFormat::Csv => format!("{},{n},{mean},{std}\n", m.key()),
            _ => format!("| {} | {n} | {mean:.3} | {std:.3} |\n", m.column_title()),
        });
    }
    write_output(a.out.as_deref(), &text)
}

pub fn trivial_predict(a: TrivialPredictArgs) -> CliResult<()> {
    ensure_outputs_distinct(&[&a.input], &[&a.output])?;
    let vol = load_volume(&a.input)?.with_kind(IntensityKind::Normalized)?;
    save_volume(&trivial_predictor(&vol)?, &a.output)?;
    Ok(())
}
