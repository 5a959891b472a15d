//! Overlap and surface-distance metrics between a predicted mask and a
//! reference mask on the same grid.
//!
//! Surfaces are 6-connected boundaries: foreground voxels with at least one
//! face neighbour that is background or outside the grid. Distances are
//! Euclidean between voxel centres, in millimetres.

mod kdtree;

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::CompensatedSum;
use crate::volume::BinaryMask;
use kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(pred: &BinaryMask, reference: &BinaryMask) -> Result<ConfusionCounts> {
    pred.grid().ensure_same(reference.grid())?;
    let chunks = crate::par::map_range(pred.data().len().div_ceil(1 << 16), |c| {
        let lo = c << 16;
        let hi = (lo + (1 << 16)).min(pred.data().len());
        // index = 2*pred + ref: 0 tn, 1 fn, 2 fp, 3 tp
        let mut n = [0u64; 4];
        for (&p, &r) in pred.data()[lo..hi].iter().zip(&reference.data()[lo..hi]) {
            n[(2 * p + r) as usize] += 1;
        }
        n
    });
    let mut n = [0u64; 4];
    for c in chunks {
        for k in 0..4 {
            n[k] += c[k];
        }
    }
    Ok(ConfusionCounts {
        tn: n[0],
        fn_: n[1],
        fp: n[2],
        tp: n[3],
    })
}

/// `2tp / (2tp + fp + fn)`; undefined when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> Result<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Err(Error::UndefinedMetric("undefined Dice: both masks are empty"));
    }
    Ok((2 * c.tp) as f64 / denom as f64)
}

/// `tp / (tp + fn)`; undefined when the reference has no foreground.
pub fn sensitivity(c: &ConfusionCounts) -> Result<f64> {
    let denom = c.tp + c.fn_;
    if denom == 0 {
        return Err(Error::UndefinedMetric(
            "undefined sensitivity: reference foreground is empty",
        ));
    }
    Ok(c.tp as f64 / denom as f64)
}

/// `tn / (tn + fp)`; undefined when the reference has no background.
pub fn specificity(c: &ConfusionCounts) -> Result<f64> {
    let denom = c.tn + c.fp;
    if denom == 0 {
        return Err(Error::UndefinedMetric(
            "undefined specificity: reference background is empty",
        ));
    }
    Ok(c.tn as f64 / denom as f64)
}

/// Boundary voxels of `mask` in linear-index order.
pub fn surface_voxels(mask: &BinaryMask) -> Result<Vec<[usize; 3]>> {
    if mask.is_empty() {
        return Err(Error::UndefinedMetric("surface of an empty mask"));
    }
    let g = *mask.grid();
    let [nx, ny, nz] = g.dims();
    let data = mask.data();
    let slabs = crate::par::map_range(nz, |z| {
        let mut out = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                if data[i] == 0 {
                    continue;
                }
                let boundary = x == 0
                    || x + 1 == nx
                    || y == 0
                    || y + 1 == ny
                    || z == 0
                    || z + 1 == nz
                    || data[i - 1] == 0
                    || data[i + 1] == 0
                    || data[i - nx] == 0
                    || data[i + nx] == 0
                    || data[i - nx * ny] == 0
                    || data[i + nx * ny] == 0;
                if boundary {
                    out.push([x, y, z]);
                }
            }
        }
        out
    });
    Ok(slabs.concat())
}

/// Directed nearest-surface distances in both directions.
#[derive(Debug, Clone)]
pub struct SurfaceDistances {
    /// For each surface voxel of `pred`, distance to the `reference` surface.
    pub pred_to_ref: Vec<f64>,
    pub ref_to_pred: Vec<f64>,
}

impl SurfaceDistances {
    pub fn hausdorff(&self) -> f64 {
        self.pred_to_ref
            .iter()
            .chain(&self.ref_to_pred)
            .fold(0.0, |a, &b| a.max(b))
    }

    pub fn mean_symmetric(&self) -> f64 {
        let total: CompensatedSum = self.pred_to_ref.iter().chain(&self.ref_to_pred).copied().collect();
        total.value() / (self.pred_to_ref.len() + self.ref_to_pred.len()) as f64
    }
}

fn to_i64(v: &[[usize; 3]]) -> Vec<[i64; 3]> {
    v.iter().map(|p| p.map(|c| c as i64)).collect()
}

pub fn surface_distances(pred: &BinaryMask, reference: &BinaryMask) -> Result<SurfaceDistances> {
    pred.grid().ensure_same(reference.grid())?;
    let (sa, sb) = crate::par::join(|| surface_voxels(pred), || surface_voxels(reference));
    let (sa, sb) = (to_i64(&sa?), to_i64(&sb?));
    let spacing = pred.spacing().map(|s| s as f64);
    let directed = |from: &[[i64; 3]], to: &[[i64; 3]]| {
        let tree = KdTree::build(to.to_vec(), spacing);
        crate::par::map_slice(from, |&p| tree.nearest_dist2(p).sqrt())
    };
    let (pred_to_ref, ref_to_pred) = crate::par::join(|| directed(&sa, &sb), || directed(&sb, &sa));
    Ok(SurfaceDistances {
        pred_to_ref,
        ref_to_pred,
    })
}

/// Symmetric Hausdorff distance between the two surfaces, in mm.
pub fn hausdorff(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    Ok(surface_distances(pred, reference)?.hausdorff())
}

/// Mean of all nearest-surface distances taken in both directions, in mm.
pub fn mean_symmetric_surface_distance(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    Ok(surface_distances(pred, reference)?.mean_symmetric())
}

/// The five metrics for one subject. Overlap metrics are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub subject_id: String,
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub hausdorff_mm: f64,
    #[serde(rename = "mssd_mm")]
    pub mean_surface_dist_mm: f64,
}

pub fn evaluate(pred: &BinaryMask, reference: &BinaryMask, subject_id: &str) -> Result<MetricReport> {
    let ctx = |e: Error| e.context(format!("subject {subject_id}"));
    if pred.grid() != reference.grid() {
        return Err(ctx(Error::GridMismatch {
            left: format!("pred {}", pred.grid()),
            right: format!("ref {}", reference.grid()),
        }));
    }
    let c = confusion(pred, reference).map_err(ctx)?;
    let d = surface_distances(pred, reference).map_err(ctx)?;
    Ok(MetricReport {
        subject_id: subject_id.to_string(),
        dice: dice(&c).map_err(ctx)?,
        sensitivity: sensitivity(&c).map_err(ctx)?,
        specificity: specificity(&c).map_err(ctx)?,
        hausdorff_mm: d.hausdorff(),
        mean_surface_dist_mm: d.mean_symmetric(),
    })
}

/// Writes reports as CSV rows, optionally preceded by the header line.
pub fn write_reports<W: io::Write>(out: W, reports: &[MetricReport], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    for r in reports {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv write: {e}")))
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<MetricReport>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<MetricReport>, _>>()
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}
