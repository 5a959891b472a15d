use std::fs::File;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, PredictorFailure, Result};
use crate::volume::{load_volume, save_volume, IntensityKind, PlaneAxis, VoxelVolume};

/// Produces a probability volume for one plane from a normalized volume.
pub trait Predictor: Send + Sync {
    fn predict(&self, vol: &VoxelVolume, axis: PlaneAxis) -> Result<VoxelVolume>;
}

/// Maps normalized intensity `v` to probability `v / 1000`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrivialPredictor;

impl Predictor for TrivialPredictor {
    fn predict(&self, vol: &VoxelVolume, _axis: PlaneAxis) -> Result<VoxelVolume> {
        trivial_predictor(vol)
    }
}

pub fn trivial_predictor(vol: &VoxelVolume) -> Result<VoxelVolume> {
    vol.ensure_kind(IntensityKind::Normalized, "trivial predictor input")?;
    let data = vol.data().iter().map(|&v| v / 1000.0).collect();
    VoxelVolume::new(*vol.grid(), data, IntensityKind::Probability)
}

/// External command run once per plane. The template is executed by `sh -c`
/// after substituting `{input}`, `{output}` (shell-quoted NIfTI paths) and
/// `{axis}` (axial, coronal or sagittal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSpec {
    command_template: String,
    timeout_s: u64,
}

impl PredictorSpec {
    pub const PLACEHOLDERS: [&'static str; 3] = ["{input}", "{output}", "{axis}"];

    pub fn new(command_template: impl Into<String>, timeout_s: u64) -> Result<Self> {
        let command_template = command_template.into();
        if let Some(p) = Self::PLACEHOLDERS.iter().find(|p| !command_template.contains(*p)) {
            return Err(Error::invalid(format!("predictor template lacks the {p} placeholder")));
        }
        if timeout_s == 0 {
            return Err(Error::invalid("predictor timeout must be positive"));
        }
        Ok(PredictorSpec { command_template, timeout_s })
    }

    pub fn command_template(&self) -> &str {
        &self.command_template
    }

    pub fn timeout_s(&self) -> u64 {
        self.timeout_s
    }

    fn render(&self, input: &str, output: &str, axis: PlaneAxis) -> String {
        self.command_template
            .replace("{input}", &shell_quote(input))
            .replace("{output}", &shell_quote(output))
            .replace("{axis}", axis.name())
    }
}

impl Predictor for PredictorSpec {
    fn predict(&self, vol: &VoxelVolume, axis: PlaneAxis) -> Result<VoxelVolume> {
        run_predictor(self, vol, axis)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

const STDERR_LIMIT: usize = 4096;

/// Writes `vol` to a private temporary directory, runs the command and reads
/// back a probability volume that must share `vol`'s grid.
pub fn run_predictor(spec: &PredictorSpec, vol: &VoxelVolume, axis: PlaneAxis) -> Result<VoxelVolume> {
    vol.ensure_kind(IntensityKind::Normalized, "predictor input")?;
    let fail = |kind| Error::Predictor { axis: axis.name().to_owned(), kind };

    let dir = tempfile::Builder::new()
        .prefix("silverseg-predict-")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("input.nii");
    let output = dir.path().join("output.nii");
    let stderr_path = dir.path().join("stderr.txt");
    save_volume(vol, &input)?;

    let command = spec.render(&input.to_string_lossy(), &output.to_string_lossy(), axis);
    let stderr = File::create(&stderr_path).map_err(|e| Error::io(&stderr_path, e))?;
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&command)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = cmd.spawn().map_err(|e| fail(PredictorFailure::Spawn(e.to_string())))?;

    let status = match wait_with_timeout(&mut child, Duration::from_secs(spec.timeout_s))
        .map_err(|e| fail(PredictorFailure::Spawn(e.to_string())))?
    {
        Some(status) => status,
        None => {
            kill_tree(&mut child);
            return Err(fail(PredictorFailure::Timeout(spec.timeout_s)));
        }
    };
    if !status.success() {
        let text = std::fs::read_to_string(&stderr_path).unwrap_or_default();
        let text = text.trim();
        let start = text.len().saturating_sub(STDERR_LIMIT);
        let start = (start..text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(text.len());
        return Err(fail(PredictorFailure::NonZeroExit {
            code: status.code(),
            stderr: text[start..].to_owned(),
        }));
    }

    let out = load_volume(&output).map_err(|e| fail(PredictorFailure::Output(e.to_string())))?;
    if out.grid() != vol.grid() {
        return Err(fail(PredictorFailure::GridMismatch {
            expected: vol.grid().to_string(),
            got: out.grid().to_string(),
        }));
    }
    if let Some(&v) = out.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(fail(PredictorFailure::OutOfRange(v)));
    }
    out.with_kind(IntensityKind::Probability)
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> std::io::Result<Option<std::process::ExitStatus>> {
    let deadline = Instant::now() + timeout;
    let mut pause = Duration::from_millis(2);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        std::thread::sleep(pause.min(deadline - now));
        pause = (pause * 2).min(Duration::from_millis(50));
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // the child leads its own process group
        let _ = Command::new("kill")
            .args(["-KILL", "--", &format!("-{}", child.id())])
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
    let _ = child.wait();
}
