//! `silverseg`: silver-standard fusion, skull-stripping inference plumbing,
//! evaluation and statistical comparison from the command line.
//!
//! Exit status is 0 on success, 1 on domain errors and 2 on usage errors.
//! Diagnostics go to standard error as `silverseg: <kind>: <message>`.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use silverseg::stats::TableFormat;
use silverseg::PlaneAxis;

#[derive(Parser, Debug)]
#[command(name = "silverseg", version, about = "Silver-standard mask fusion and segmentation evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse rater masks with STAPLE and threshold the posterior.
    Fuse(FuseArgs),
    /// Fuse rater masks by majority vote (ties count as foreground).
    Vote(VoteArgs),
    /// Binarize a probability volume.
    Threshold(ThresholdArgs),
    /// Cut 2D training patches from every brain-containing slice.
    PrepPatches(PrepPatchesArgs),
    /// Assign subjects to cross-validation folds.
    Split(SplitArgs),
    /// Run the tri-planar inference path with external predictors.
    Predict(PredictArgs),
    /// Fuse tri-planar probabilities and/or keep the largest component.
    Postprocess(PostprocessArgs),
    /// Score a predicted mask against a reference mask.
    Evaluate(EvaluateArgs),
    /// Paired comparison of two metric CSVs, rendered as a table.
    Compare(CompareArgs),
    /// Mean ± std of every metric in a metric CSV.
    Report(ReportArgs),
    /// Reference predictor: probability = normalized intensity / 1000.
    #[command(hide = true)]
    TrivialPredict(TrivialPredictArgs),
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Rater masks (2 to 64), all on one grid.
    #[arg(long, num_args = 2.., required = true)]
    raters: Vec<PathBuf>,
    /// Rater identifiers; defaults to the file stems.
    #[arg(long, num_args = 1..)]
    ids: Vec<String>,
    /// Silver-standard mask output.
    #[arg(long)]
    out: PathBuf,
    /// Optional posterior probability volume output.
    #[arg(long)]
    posterior: Option<PathBuf>,
    /// Optional JSON sidecar with per-rater performance.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.99)]
    initial_sensitivity: f64,
    #[arg(long, default_value_t = 0.99)]
    initial_specificity: f64,
    /// Fixed foreground prior; defaults to the raters' mean foreground fraction.
    #[arg(long)]
    prior: Option<f64>,
}

#[derive(Args, Debug)]
struct VoteArgs {
    #[arg(long, num_args = 2.., required = true)]
    raters: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Probability volume with values in [0, 1].
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct PrepPatchesArgs {
    /// Raw intensity volume; normalized to [0, 1000] before cutting.
    #[arg(long)]
    image: PathBuf,
    /// Brain mask selecting the slices and the patch foreground.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    subject: String,
    /// Receives one `<subject>_<axis>.patches` file per axis.
    #[arg(long)]
    out_dir: PathBuf,
    /// Planes to sample; defaults to all three.
    #[arg(long, num_args = 1..)]
    axis: Vec<PlaneAxis>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    #[arg(long, default_value_t = 5)]
    per_slice: usize,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Subject ids, one per line.
    #[arg(long, conflicts_with = "ids", required_unless_present = "ids")]
    subjects_file: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    ids: Vec<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    image: PathBuf,
    /// Command template used for every plane. Must contain {input},
    /// {output} and {axis}.
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    command_axial: Option<String>,
    #[arg(long)]
    command_coronal: Option<String>,
    #[arg(long)]
    command_sagittal: Option<String>,
    /// Per-invocation time limit in seconds.
    #[arg(long, default_value_t = 3600)]
    timeout: u64,
    /// Final skull-stripping mask.
    #[arg(long)]
    out: PathBuf,
    /// Directory receiving `prob_<axis>.nii.gz` for each plane.
    #[arg(long)]
    prob_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PostprocessArgs {
    /// Axial, coronal and sagittal probability volumes to fuse.
    #[arg(long, num_args = 3, conflicts_with = "mask", required_unless_present = "mask")]
    probs: Vec<PathBuf>,
    /// Binary mask to clean up instead of fused probabilities.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    subject: String,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append to `--out`, writing the header only if the file is empty.
    #[arg(long, requires = "out")]
    append: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Metric CSVs of condition A, one per dataset.
    #[arg(long, num_args = 1.., required = true)]
    a: Vec<PathBuf>,
    /// Metric CSVs of condition B, matching `--a` one to one.
    #[arg(long, num_args = 1.., required = true)]
    b: Vec<PathBuf>,
    /// Dataset names, matching `--a`; defaults to the file stems of `--a`.
    #[arg(long, num_args = 1..)]
    dataset: Vec<String>,
    #[arg(long, default_value = "Gold")]
    label_a: String,
    #[arg(long, default_value = "Silver")]
    label_b: String,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    /// Table output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// markdown or csv.
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrivialPredictArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Accepted for protocol compatibility; the mapping ignores it.
    #[arg(long)]
    axis: Option<PlaneAxis>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuse(a) => commands::fuse(a),
        Command::Vote(a) => commands::vote(a),
        Command::Threshold(a) => commands::threshold(a),
        Command::PrepPatches(a) => commands::prep_patches(a),
        Command::Split(a) => commands::split(a),
        Command::Predict(a) => commands::predict(a),
        Command::Postprocess(a) => commands::postprocess(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Report(a) => commands::report(a),
        Command::TrivialPredict(a) => commands::trivial_predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("silverseg: {}: {e}", e.kind());
            e.exit_code()
        }
    }
}
