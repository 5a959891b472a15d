use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, IntensityKind, PlaneAxis, VoxelVolume};

pub const PATCHSET_MAGIC: &[u8; 8] = b"PATCHSET";
pub const PATCHSET_VERSION: u32 = 1;
/// Uniform draws tried per patch before falling back to centring on a
/// foreground voxel.
pub const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub size: usize,
    pub per_slice: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig { size: 64, per_slice: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchProvenance {
    pub subject_id: String,
    pub axis: PlaneAxis,
    pub slice_index: usize,
    pub row_offset: usize,
    pub col_offset: usize,
}

/// Square patches cut from one (subject, axis). `images` and `masks` hold
/// `size * size` values per patch, column index fastest, in provenance order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub size: usize,
    pub seed: u64,
    pub provenance: Vec<PatchProvenance>,
    pub images: Vec<f32>,
    pub masks: Vec<u8>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn image(&self, k: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.images[k * n..(k + 1) * n]
    }

    pub fn mask(&self, k: usize) -> &[u8] {
        let n = self.size * self.size;
        &self.masks[k * n..(k + 1) * n]
    }
}

/// FNV-1a over the placement key, finished with a SplitMix64 step.
fn slice_seed(seed: u64, subject_id: &str, axis: PlaneAxis, slice: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&seed.to_le_bytes());
    feed(subject_id.as_bytes());
    feed(&[0xff, axis.normal_axis() as u8]);
    feed(&(slice as u64).to_le_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Summed-area table with a zero border: `(cols + 1) * (rows + 1)` entries.
struct Integral {
    stride: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(cols: usize, rows: usize, data: &[u8]) -> Self {
        let stride = cols + 1;
        let mut sums = vec![0u32; stride * (rows + 1)];
        for r in 0..rows {
            let mut run = 0u32;
            for c in 0..cols {
                run += data[c + cols * r] as u32;
                sums[(c + 1) + stride * (r + 1)] = sums[(c + 1) + stride * r] + run;
            }
        }
        Integral { stride, sums }
    }

    fn window(&self, col: usize, row: usize, size: usize) -> u32 {
        let s = self.stride;
        let (c1, r1) = (col + size, row + size);
        self.sums[c1 + s * r1] + self.sums[col + s * row] - self.sums[col + s * r1] - self.sums[c1 + s * row]
    }
}

/// Cuts `config.per_slice` patches from every slice along `axis` whose mask
/// has foreground. Placement depends only on (seed, subject_id, axis, slice).
pub fn extract_patches(
    vol: &VoxelVolume,
    mask: &BinaryMask,
    axis: PlaneAxis,
    subject_id: &str,
    seed: u64,
    config: &PatchConfig,
) -> Result<PatchSet> {
    vol.ensure_kind(IntensityKind::Normalized, "patch source")?;
    vol.grid().ensure_same(mask.grid())?;
    if config.size == 0 || config.per_slice == 0 {
        return Err(Error::invalid("patch size and count must be positive"));
    }
    let dims = vol.dims();
    let (ca, ra) = axis.in_plane_axes();
    let (cols, rows) = (dims[ca], dims[ra]);
    if cols < config.size || rows < config.size {
        return Err(Error::invalid(format!(
            "{axis} slice extent {cols}x{rows} is smaller than the {0}x{0} patch",
            config.size
        )));
    }
    let size = config.size;

    let per_slice = crate::par::map_range(dims[axis.normal_axis()], |k| {
        let m = mask.slice(axis, k);
        if m.data.iter().all(|&v| v == 0) {
            return Vec::new();
        }
        let img = vol.slice(axis, k);
        let integral = Integral::new(cols, rows, &m.data);
        let mut rng = ChaCha8Rng::seed_from_u64(slice_seed(seed, subject_id, axis, k));
        let max_col = (cols - size) as u64;
        let max_row = (rows - size) as u64;
        let mut foreground: Option<Vec<(usize, usize)>> = None;

        (0..config.per_slice)
            .map(|_| {
                let mut hit = None;
                for _ in 0..MAX_REJECTIONS {
                    let c = rng.gen_range(0..=max_col) as usize;
                    let r = rng.gen_range(0..=max_row) as usize;
                    if integral.window(c, r, size) > 0 {
                        hit = Some((c, r));
                        break;
                    }
                }
                let (c, r) = hit.unwrap_or_else(|| {
                    let fg = foreground.get_or_insert_with(|| {
                        (0..rows)
                            .flat_map(|r| (0..cols).map(move |c| (c, r)))
                            .filter(|&(c, r)| m.at(c, r) != 0)
                            .collect()
                    });
                    let (fc, fr) = fg[rng.gen_range(0..fg.len() as u64) as usize];
                    (
                        fc.saturating_sub(size / 2).min(cols - size),
                        fr.saturating_sub(size / 2).min(rows - size),
                    )
                });
                let prov = PatchProvenance {
                    subject_id: subject_id.to_owned(),
                    axis,
                    slice_index: k,
                    row_offset: r,
                    col_offset: c,
                };
                (prov, img.window(c, r, size, size), m.window(c, r, size, size))
            })
            .collect::<Vec<_>>()
    });

    let mut out = PatchSet {
        size,
        seed,
        provenance: Vec::new(),
        images: Vec::new(),
        masks: Vec::new(),
    };
    for (prov, img, m) in per_slice.into_iter().flatten() {
        out.provenance.push(prov);
        out.images.extend_from_slice(&img);
        out.masks.extend_from_slice(&m);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "subject {subject_id}: mask has no foreground on any {axis} slice"
        )));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    dims: [usize; 2],
    count: usize,
    provenance: Vec<PatchProvenance>,
}

/// Layout: magic `PATCHSET`, u64 LE header length, JSON header, then
/// `count * size * size` f32 LE image values and as many u8 mask values.
pub fn write_patchset(set: &PatchSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let header = serde_json::to_vec(&Header {
        version: PATCHSET_VERSION,
        seed: set.seed,
        dims: [set.size, set.size],
        count: set.len(),
        provenance: set.provenance.clone(),
    })
    .map_err(|e| Error::invalid(format!("patch header: {e}")))?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(PATCHSET_MAGIC).map_err(io)?;
    w.write_u64::<LittleEndian>(header.len() as u64).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for &v in &set.images {
        w.write_f32::<LittleEndian>(v).map_err(io)?;
    }
    w.write_all(&set.masks).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_patchset(path: impl AsRef<Path>) -> Result<PatchSet> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let bad = |msg: String| Error::invalid(format!("{}: {msg}", path.display()));
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != PATCHSET_MAGIC {
        return Err(bad("not a patch set file".into()));
    }
    let len = r.read_u64::<LittleEndian>().map_err(io)?;
    let mut header = Vec::new();
    (&mut r).take(len).read_to_end(&mut header).map_err(io)?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != PATCHSET_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    if header.dims[0] != header.dims[1] || header.count != header.provenance.len() {
        return Err(bad("inconsistent header".into()));
    }
    let size = header.dims[0];
    let n = header
        .count
        .checked_mul(size * size)
        .ok_or_else(|| bad("patch count overflows".into()))?;
    let mut images = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut images).map_err(io)?;
    let mut masks = vec![0u8; n];
    r.read_exact(&mut masks).map_err(io)?;
    if r.read(&mut [0u8; 1]).map_err(io)? != 0 {
        return Err(bad("trailing bytes".into()));
    }
    Ok(PatchSet {
        size,
        seed: header.seed,
        provenance: header.provenance,
        images,
        masks,
    })
}
