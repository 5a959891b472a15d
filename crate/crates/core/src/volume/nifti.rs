//! NIfTI-1 reading and writing for the 3D subset used by the toolkit.
//!
//! Reads little- or big-endian single-file (`n+1`) and header/image pair
//! (`ni1`) datasets with datatype uint8, int16 or float32, optionally
//! gzip-compressed (decided by a `.gz` path suffix). Writes little-endian
//! single-file datasets. Orientation fields are written as identity and
//! ignored on read; only axis order matters for same-grid comparisons.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{BinaryMask, Grid, IntensityKind, VoxelVolume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// On-disk voxel type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    UInt8,
    Int16,
    Float32,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::UInt8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            DataType::UInt8 => 8,
            DataType::Int16 => 16,
            DataType::Float32 => 32,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::UInt8),
            4 => Some(DataType::Int16),
            16 => Some(DataType::Float32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        self.bitpix() as usize / 8
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        MultiGzDecoder::new(file)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    } else {
        file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

/// `.hdr[.gz]` → `.img[.gz]` for two-file datasets.
fn image_path(header: &Path) -> Result<PathBuf> {
    let name = header.to_string_lossy();
    for (hdr, img) in [(".hdr.gz", ".img.gz"), (".hdr", ".img")] {
        if let Some(stem) = name.strip_suffix(hdr) {
            return Ok(PathBuf::from(format!("{stem}{img}")));
        }
    }
    Err(Error::nifti(
        "magic",
        format!("ni1 header in {} but path does not end in .hdr", header.display()),
    ))
}

struct Header {
    big_endian: bool,
    dims: [usize; 3],
    spacing: [f32; 3],
    datatype: DataType,
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    single_file: bool,
}

macro_rules! endian_read {
    ($be:expr, $fn:ident, $buf:expr) => {
        if $be {
            BigEndian::$fn($buf)
        } else {
            LittleEndian::$fn($buf)
        }
    };
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::nifti(
            "sizeof_hdr",
            format!("file holds {} bytes, shorter than a {HEADER_SIZE}-byte header", buf.len()),
        ));
    }
    let big_endian = if LittleEndian::read_i32(&buf[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        false
    } else if BigEndian::read_i32(&buf[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        true
    } else {
        return Err(Error::nifti("sizeof_hdr", "not 348 in either byte order"));
    };
    let i16_at = |off: usize| endian_read!(big_endian, read_i16, &buf[off..]);
    let f32_at = |off: usize| endian_read!(big_endian, read_f32, &buf[off..]);

    let single_file = match &buf[offsets::MAGIC..offsets::MAGIC + 4] {
        b"n+1\0" => true,
        b"ni1\0" => false,
        other => {
            return Err(Error::nifti("magic", format!("unrecognised magic {other:?}")));
        }
    };

    let ndim = i16_at(offsets::DIM);
    if ndim != 3 {
        return Err(Error::nifti(
            "dim[0]",
            format!("unsupported dimensionality {ndim}, only 3D volumes are handled"),
        ));
    }
    let mut dims = [0usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let v = i16_at(offsets::DIM + 2 * (k + 1));
        if v <= 0 {
            return Err(Error::nifti(
                ["dim[1]", "dim[2]", "dim[3]"][k],
                format!("nonpositive extent {v}"),
            ));
        }
        *d = v as usize;
    }

    let code = i16_at(offsets::DATATYPE);
    let datatype = DataType::from_code(code).ok_or_else(|| {
        Error::nifti(
            "datatype",
            format!("unsupported datatype code {code} (expected 2 uint8, 4 int16 or 16 float32)"),
        )
    })?;
    let bitpix = i16_at(offsets::BITPIX);
    if bitpix != datatype.bitpix() {
        return Err(Error::nifti(
            "bitpix",
            format!("{bitpix} does not match datatype {datatype:?}"),
        ));
    }

    let mut spacing = [0f32; 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        let v = f32_at(offsets::PIXDIM + 4 * (k + 1));
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::nifti(
                ["pixdim[1]", "pixdim[2]", "pixdim[3]"][k],
                format!("voxel spacing must be positive and finite, got {v}"),
            ));
        }
        *s = v;
    }

    let vox_offset = f32_at(offsets::VOX_OFFSET);
    if !(vox_offset.is_finite() && vox_offset >= 0.0) || (single_file && vox_offset < HEADER_SIZE as f32) {
        return Err(Error::nifti("vox_offset", format!("invalid offset {vox_offset}")));
    }

    Ok(Header {
        big_endian,
        dims,
        spacing,
        datatype,
        vox_offset: vox_offset as usize,
        scl_slope: f32_at(offsets::SCL_SLOPE),
        scl_inter: f32_at(offsets::SCL_INTER),
        single_file,
    })
}

fn decode(header: &Header, payload: &[u8]) -> Result<Vec<f32>> {
    let n = header.dims.iter().product::<usize>();
    let need = n * header.datatype.size();
    let body = payload.get(header.vox_offset..).unwrap_or(&[]);
    if body.len() < need {
        return Err(Error::nifti(
            "data",
            format!(
                "truncated payload: {} bytes after vox_offset, {need} required",
                body.len()
            ),
        ));
    }
    let body = &body[..need];
    let be = header.big_endian;
    let mut out: Vec<f32> = match header.datatype {
        DataType::UInt8 => body.iter().map(|&b| b as f32).collect(),
        DataType::Int16 => body
            .chunks_exact(2)
            .map(|c| endian_read!(be, read_i16, c) as f32)
            .collect(),
        DataType::Float32 => body
            .chunks_exact(4)
            .map(|c| endian_read!(be, read_f32, c))
            .collect(),
    };
    let (slope, inter) = (header.scl_slope, header.scl_inter);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        let (s, b) = (slope as f64, inter as f64);
        for v in &mut out {
            *v = (*v as f64 * s + b) as f32;
        }
    }
    Ok(out)
}

/// Reads a 3D NIfTI-1 file as a raw-intensity volume.
pub fn load_volume(path: impl AsRef<Path>) -> Result<VoxelVolume> {
    let path = path.as_ref();
    let buf = read_file(path)?;
    let header = parse_header(&buf).map_err(|e| e.context(path.display().to_string()))?;
    let data = if header.single_file {
        decode(&header, &buf)
    } else {
        let img = image_path(path)?;
        decode(&header, &read_file(&img)?)
    }
    .map_err(|e| e.context(path.display().to_string()))?;
    let grid = Grid::new(header.dims, header.spacing)?;
    VoxelVolume::new(grid, data, IntensityKind::Raw)
}

/// Reads a NIfTI file whose voxels must all be 0 or 1.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let vol = load_volume(path)?;
    let grid = *vol.grid();
    let mut bytes = Vec::with_capacity(grid.len());
    for (i, &v) in vol.data().iter().enumerate() {
        if v == 0.0 {
            bytes.push(0);
        } else if v == 1.0 {
            bytes.push(1);
        } else {
            return Err(Error::invalid(format!(
                "{}: voxel {:?} holds {v}, not a binary mask value",
                path.display(),
                grid.coords(i)
            )));
        }
    }
    Ok(BinaryMask::from_raw_unchecked(grid, bytes))
}

fn header_bytes(grid: &Grid, datatype: DataType) -> Result<Vec<u8>> {
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for k in 0..3 {
        dim[k + 1] = i16::try_from(grid.dims()[k])
            .map_err(|_| Error::invalid(format!("extent {} exceeds the NIfTI-1 limit", grid.dims()[k])))?;
    }
    for (k, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[offsets::DIM + 2 * k..], *d);
    }
    LittleEndian::write_i16(&mut h[offsets::DATATYPE..], datatype.code());
    LittleEndian::write_i16(&mut h[offsets::BITPIX..], datatype.bitpix());
    let sp = grid.spacing();
    let pixdim = [1.0, sp[0], sp[1], sp[2], 1.0, 1.0, 1.0, 1.0];
    for (k, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[offsets::PIXDIM + 4 * k..], *p);
    }
    LittleEndian::write_f32(&mut h[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    // spatial unit: millimetres
    h[offsets::XYZT_UNITS] = 2;
    LittleEndian::write_i16(&mut h[offsets::QFORM_CODE..], 1);
    LittleEndian::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    for row in 0..3 {
        LittleEndian::write_f32(&mut h[offsets::SROW_X + 16 * row + 4 * row..], sp[row]);
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");
    Ok(h)
}

fn write_file(path: &Path, header: &[u8], body: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(header)
            .and_then(|_| enc.write_all(body))
            .and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(header)
            .and_then(|_| w.write_all(body))
            .and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

/// Writes a volume as float32 NIfTI-1 (gzip when the path ends in `.gz`).
pub fn save_volume(vol: &VoxelVolume, path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(vol, path, DataType::Float32)
}

/// Writes a volume with an explicit on-disk datatype. Integer datatypes
/// require every value to be an integer within the type's range.
pub fn save_volume_as(vol: &VoxelVolume, path: impl AsRef<Path>, datatype: DataType) -> Result<()> {
    let path = path.as_ref();
    let header = header_bytes(vol.grid(), datatype)?;
    let data = vol.data();
    let mut body = Vec::with_capacity(data.len() * datatype.size());
    let (lo, hi) = match datatype {
        DataType::UInt8 => (0.0, u8::MAX as f32),
        DataType::Int16 => (i16::MIN as f32, i16::MAX as f32),
        DataType::Float32 => (f32::NEG_INFINITY, f32::INFINITY),
    };
    for &v in data {
        if datatype != DataType::Float32 && !(v.fract() == 0.0 && v >= lo && v <= hi) {
            return Err(Error::invalid(format!(
                "value {v} is not representable as {datatype:?}"
            )));
        }
        match datatype {
            DataType::UInt8 => body.push(v as u8),
            DataType::Int16 => body.write_i16::<LittleEndian>(v as i16).expect("vec write"),
            DataType::Float32 => body.write_f32::<LittleEndian>(v).expect("vec write"),
        }
    }
    write_file(path, &header, &body)
}

/// Writes a mask as uint8 NIfTI-1 holding 0 and 1.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = mask.data().iter().position(|&v| v > 1) {
        return Err(Error::invalid(format!(
            "mask voxel {:?} holds {}, refusing to write {}",
            mask.grid().coords(i),
            mask.data()[i],
            path.display()
        )));
    }
    let header = header_bytes(mask.grid(), DataType::UInt8)?;
    write_file(path, &header, mask.data())
}
