//! Volume and mask data model, plane slicing and slice reconstruction.
//!
//! All grids use one global layout: row-major with x fastest, so the linear
//! index of voxel `(x, y, z)` is `x + nx * (y + ny * z)`. Axial slices are
//! contiguous; sagittal slices are the strided case.

mod nifti;

pub use nifti::{load_mask, load_volume, save_mask, save_volume, save_volume_as, DataType};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts and physical spacing (millimetres per voxel) of a 3D grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f32; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f32; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(Error::invalid(format!("dims overflow: {dims:?}")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Grid { dims, spacing })
    }

    /// Unit-spacing grid.
    pub fn with_dims(dims: [usize; 3]) -> Result<Self> {
        Grid::new(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn with_spacing(self, spacing: [f32; 3]) -> Result<Self> {
        Grid::new(self.dims, spacing)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        write!(f, "{nx}x{ny}x{nz} @ ({sx}, {sy}, {sz}) mm")
    }
}

/// What the values of a [`VoxelVolume`] mean, with the range each implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    Raw,
    /// Values in `[0, 1000]`.
    Normalized,
    /// Values in `[0, 1]`.
    Probability,
}

impl IntensityKind {
    fn range(self) -> Option<(f32, f32)> {
        match self {
            IntensityKind::Raw => None,
            IntensityKind::Normalized => Some((0.0, 1000.0)),
            IntensityKind::Probability => Some((0.0, 1.0)),
        }
    }

    fn check(self, data: &[f32]) -> Result<()> {
        if let Some((lo, hi)) = self.range() {
            if let Some(v) = data.iter().find(|v| !(**v >= lo && **v <= hi)) {
                return Err(Error::invalid(format!(
                    "{self:?} volume holds value {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    grid: Grid,
    data: Vec<f32>,
    kind: IntensityKind,
}

impl VoxelVolume {
    pub fn new(grid: Grid, data: Vec<f32>, kind: IntensityKind) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match grid {grid} ({} voxels)",
                data.len(),
                grid.len()
            )));
        }
        kind.check(&data)?;
        Ok(VoxelVolume { grid, data, kind })
    }

    /// Raw-intensity volume filled from `f(x, y, z)`.
    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let data = (0..grid.len())
            .map(|i| {
                let [x, y, z] = grid.coords(i);
                f(x, y, z)
            })
            .collect();
        VoxelVolume {
            grid,
            data,
            kind: IntensityKind::Raw,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn kind(&self) -> IntensityKind {
        self.kind
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Re-labels the volume, checking the range the new kind requires.
    pub fn with_kind(self, kind: IntensityKind) -> Result<Self> {
        kind.check(&self.data)?;
        Ok(VoxelVolume { kind, ..self })
    }

    pub(crate) fn ensure_kind(&self, kind: IntensityKind, what: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what} must be a {kind:?} volume, got {:?}",
                self.kind
            )))
        }
    }

    pub fn extract_slices(&self, axis: PlaneAxis) -> Vec<Slice2D<f32>> {
        extract_slices(&self.grid, &self.data, axis)
    }

    pub fn slice(&self, axis: PlaneAxis, index: usize) -> Slice2D<f32> {
        extract_plane(&self.grid, &self.data, axis, index)
    }
}

/// Dense binary segmentation, one byte per voxel holding 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<u8>,
}

impl BinaryMask {
    /// Builds a mask from bytes that must all be 0 or 1.
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match grid {grid} ({} voxels)",
                data.len(),
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "mask value {} at voxel {:?} is not 0 or 1",
                data[i],
                grid.coords(i)
            )));
        }
        Ok(BinaryMask { grid, data })
    }

    pub fn from_bools(grid: Grid, data: &[bool]) -> Result<Self> {
        BinaryMask::new(grid, data.iter().map(|&b| b as u8).collect())
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize, usize) -> bool) -> Self {
        let data = (0..grid.len())
            .map(|i| {
                let [x, y, z] = grid.coords(i);
                f(x, y, z) as u8
            })
            .collect();
        BinaryMask { grid, data }
    }

    pub fn empty(grid: Grid) -> Self {
        BinaryMask {
            grid,
            data: vec![0; grid.len()],
        }
    }

    pub(crate) fn from_raw_unchecked(grid: Grid, data: Vec<u8>) -> Self {
        debug_assert!(data.len() == grid.len() && data.iter().all(|&v| v <= 1));
        BinaryMask { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.grid.index(x, y, z)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&v| v != 0)
    }

    pub fn slice(&self, axis: PlaneAxis, index: usize) -> Slice2D<u8> {
        extract_plane(&self.grid, &self.data, axis, index)
    }

    pub fn extract_slices(&self, axis: PlaneAxis) -> Vec<Slice2D<u8>> {
        extract_slices(&self.grid, &self.data, axis)
    }

    /// The mask as a 0/1 scalar volume.
    pub fn to_volume(&self) -> VoxelVolume {
        VoxelVolume {
            grid: self.grid,
            data: self.data.iter().map(|&v| v as f32).collect(),
            kind: IntensityKind::Probability,
        }
    }
}

/// Anatomical plane; each maps to a fixed array axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneAxis {
    /// z-slices
    Axial,
    /// y-slices
    Coronal,
    /// x-slices
    Sagittal,
}

impl PlaneAxis {
    pub const ALL: [PlaneAxis; 3] = [PlaneAxis::Axial, PlaneAxis::Coronal, PlaneAxis::Sagittal];

    /// Array axis the plane is perpendicular to.
    pub fn normal_axis(self) -> usize {
        match self {
            PlaneAxis::Axial => 2,
            PlaneAxis::Coronal => 1,
            PlaneAxis::Sagittal => 0,
        }
    }

    /// In-plane array axes as (column axis, row axis); columns vary fastest.
    pub fn in_plane_axes(self) -> (usize, usize) {
        match self {
            PlaneAxis::Axial => (0, 1),
            PlaneAxis::Coronal => (0, 2),
            PlaneAxis::Sagittal => (1, 2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlaneAxis::Axial => "axial",
            PlaneAxis::Coronal => "coronal",
            PlaneAxis::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for PlaneAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PlaneAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(PlaneAxis::Axial),
            "coronal" => Ok(PlaneAxis::Coronal),
            "sagittal" => Ok(PlaneAxis::Sagittal),
            other => Err(Error::invalid(format!(
                "unknown axis {other:?}, expected axial|coronal|sagittal"
            ))),
        }
    }
}

/// A 2D grid cut from a volume. `cols` runs along the plane's first in-plane
/// axis and varies fastest in `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D<T> {
    pub cols: usize,
    pub rows: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Slice2D<T> {
    pub fn new(cols: usize, rows: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != cols * rows {
            return Err(Error::invalid(format!(
                "slice data length {} does not match {cols}x{rows}",
                data.len()
            )));
        }
        Ok(Slice2D { cols, rows, data })
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> T {
        self.data[col + self.cols * row]
    }

    /// Copies the `width` x `height` window whose top-left corner is at
    /// (`col`, `row`).
    pub fn window(&self, col: usize, row: usize, width: usize, height: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(width * height);
        for r in row..row + height {
            let start = col + self.cols * r;
            out.extend_from_slice(&self.data[start..start + width]);
        }
        out
    }
}

fn extract_plane<T: Copy>(grid: &Grid, data: &[T], axis: PlaneAxis, index: usize) -> Slice2D<T> {
    let (ca, ra) = axis.in_plane_axes();
    let (cols, rows) = (grid.dims[ca], grid.dims[ra]);
    let mut out = Vec::with_capacity(cols * rows);
    let mut p = [0usize; 3];
    p[axis.normal_axis()] = index;
    for r in 0..rows {
        p[ra] = r;
        for c in 0..cols {
            p[ca] = c;
            out.push(data[grid.index(p[0], p[1], p[2])]);
        }
    }
    Slice2D { cols, rows, data: out }
}

fn extract_slices<T: Copy + Send + Sync>(grid: &Grid, data: &[T], axis: PlaneAxis) -> Vec<Slice2D<T>> {
    crate::par::map_range(grid.dims[axis.normal_axis()], |k| {
        extract_plane(grid, data, axis, k)
    })
}

/// Inverse of [`VoxelVolume::extract_slices`]: stacks `slices` along `axis`.
pub fn reconstruct_slices(
    slices: &[Slice2D<f32>],
    axis: PlaneAxis,
    spacing: [f32; 3],
    kind: IntensityKind,
) -> Result<VoxelVolume> {
    let first = slices
        .first()
        .ok_or_else(|| Error::invalid("cannot reconstruct a volume from zero slices"))?;
    if let Some((k, s)) = slices
        .iter()
        .enumerate()
        .find(|(_, s)| (s.cols, s.rows) != (first.cols, first.rows) || s.data.len() != s.cols * s.rows)
    {
        return Err(Error::invalid(format!(
            "slice {k} has shape {}x{}, expected {}x{}",
            s.cols, s.rows, first.cols, first.rows
        )));
    }
    let (ca, ra) = axis.in_plane_axes();
    let na = axis.normal_axis();
    let mut dims = [0usize; 3];
    dims[ca] = first.cols;
    dims[ra] = first.rows;
    dims[na] = slices.len();
    let grid = Grid::new(dims, spacing)?;
    let mut data = vec![0f32; grid.len()];
    let mut p = [0usize; 3];
    for (k, s) in slices.iter().enumerate() {
        p[na] = k;
        for r in 0..s.rows {
            p[ra] = r;
            for c in 0..s.cols {
                p[ca] = c;
                data[grid.index(p[0], p[1], p[2])] = s.at(c, r);
            }
        }
    }
    VoxelVolume::new(grid, data, kind)
}
