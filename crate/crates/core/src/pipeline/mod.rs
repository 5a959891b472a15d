//! Inference-side stages: normalization, patch creation, the external
//! predictor protocol, tri-planar fusion and connected-component cleanup.

mod components;
mod folds;
mod patches;
mod predictor;

pub use components::largest_connected_component;
pub use folds::{split_folds, FoldAssignment};
pub use patches::{
    extract_patches, read_patchset, write_patchset, PatchConfig, PatchProvenance, PatchSet,
    MAX_REJECTIONS, PATCHSET_MAGIC, PATCHSET_VERSION,
};
pub use predictor::{run_predictor, trivial_predictor, Predictor, PredictorSpec, TrivialPredictor};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, IntensityKind, PlaneAxis, VoxelVolume};

pub const NORMALIZED_MAX: f64 = 1000.0;
pub const FUSION_THRESHOLD: f64 = 0.5;

const CHUNK: usize = 1 << 16;

/// Min-max maps the volume onto `[0, 1000]`. Constant volumes map to zeros.
pub fn normalize(vol: &VoxelVolume) -> Result<VoxelVolume> {
    let data = vol.data();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        let [x, y, z] = vol.grid().coords(i);
        return Err(Error::invalid(format!(
            "non-finite intensity {} at voxel ({x}, {y}, {z})",
            data[i]
        )));
    }
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = vec![0f32; data.len()];
    if hi > lo {
        let (lo, range) = (lo as f64, hi as f64 - lo as f64);
        crate::par::for_each_chunk_mut(&mut out, CHUNK, |start, chunk| {
            for (o, &v) in chunk.iter_mut().zip(&data[start..]) {
                *o = (((v as f64 - lo) / range) * NORMALIZED_MAX).clamp(0.0, NORMALIZED_MAX) as f32;
            }
        });
    }
    VoxelVolume::new(*vol.grid(), out, IntensityKind::Normalized)
}

/// Foreground where the mean of the three probabilities is at least 0.5.
pub fn fuse_triplanar(axial: &VoxelVolume, coronal: &VoxelVolume, sagittal: &VoxelVolume) -> Result<BinaryMask> {
    for (v, name) in [(axial, "axial"), (coronal, "coronal"), (sagittal, "sagittal")] {
        v.ensure_kind(IntensityKind::Probability, &format!("{name} prediction"))?;
    }
    axial.grid().ensure_same(coronal.grid())?;
    axial.grid().ensure_same(sagittal.grid())?;
    let (a, c, s) = (axial.data(), coronal.data(), sagittal.data());
    let mut out = vec![0u8; a.len()];
    crate::par::for_each_chunk_mut(&mut out, CHUNK, |start, chunk| {
        for (k, o) in chunk.iter_mut().enumerate() {
            let i = start + k;
            // sorted so the sum is independent of argument order
            let mut v = [a[i] as f64, c[i] as f64, s[i] as f64];
            v.sort_by(f64::total_cmp);
            *o = ((v[0] + v[1] + v[2]) / 3.0 >= FUSION_THRESHOLD) as u8;
        }
    });
    Ok(BinaryMask::from_raw_unchecked(*axial.grid(), out))
}

/// Runs the three plane predictors, concurrently when the `parallel`
/// feature is enabled. Output order is axial, coronal, sagittal.
pub fn predict_triplanar(
    normalized: &VoxelVolume,
    predictors: [&dyn Predictor; 3],
) -> Result<[VoxelVolume; 3]> {
    let run = |k: usize| {
        let axis = PlaneAxis::ALL[k];
        predictors[k]
            .predict(normalized, axis)
            .map_err(|e| e.context(format!("predict {axis}")))
    };
    let (ax, (cor, sag)) = crate::par::join(|| run(0), || crate::par::join(|| run(1), || run(2)));
    Ok([ax?, cor?, sag?])
}

/// normalize, predict per plane, fuse, keep the largest component.
pub fn skull_strip(vol: &VoxelVolume, predictors: [&dyn Predictor; 3]) -> Result<BinaryMask> {
    let normalized = normalize(vol).map_err(|e| e.context("normalize"))?;
    let [ax, cor, sag] = predict_triplanar(&normalized, predictors)?;
    let fused = fuse_triplanar(&ax, &cor, &sag).map_err(|e| e.context("fuse"))?;
    Ok(largest_connected_component(&fused))
}
