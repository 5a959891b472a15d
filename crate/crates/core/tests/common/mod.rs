//! Straightforward reference implementations used as test oracles, plus
//! random input generators. Nothing here calls into the library's
//! algorithms; only its data types are used to carry inputs.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silverseg::{BinaryMask, Grid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid(d: [usize; 3]) -> Grid {
    Grid::with_dims(d).unwrap()
}

/// Random mask with each voxel set with probability `density`.
pub fn random_mask(rng: &mut impl Rng, g: Grid, density: f64) -> BinaryMask {
    let data = (0..g.len()).map(|_| rng.gen_bool(density) as u8).collect();
    BinaryMask::new(g, data).unwrap()
}

/// Random blob: a ball of random radius at a random centre, with voxels
/// flipped at rate `noise`.
pub fn random_blob(rng: &mut impl Rng, g: Grid, noise: f64) -> BinaryMask {
    let [nx, ny, nz] = g.dims();
    let c = [
        rng.gen_range(0.0..nx as f64),
        rng.gen_range(0.0..ny as f64),
        rng.gen_range(0.0..nz as f64),
    ];
    let r = rng.gen_range(1.5..(nx.min(ny).min(nz) as f64 / 2.0).max(2.0));
    let mut data = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let [x, y, z] = g.coords(i);
        let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
        let inside = d2 <= r * r;
        data.push((inside ^ rng.gen_bool(noise)) as u8);
    }
    BinaryMask::new(g, data).unwrap()
}

// ---------------------------------------------------------------- STAPLE

pub struct OracleStaple {
    pub posterior: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub prior: f64,
}

/// Plain voxel-by-voxel binary STAPLE with direct products.
pub fn staple_oracle(
    masks: &[&[u8]],
    p0: f64,
    q0: f64,
    fixed_prior: Option<f64>,
    max_iterations: usize,
    tolerance: f64,
) -> OracleStaple {
    let r = masks.len();
    let n = masks[0].len();
    let prior = fixed_prior.unwrap_or_else(|| {
        let mut acc = 0.0;
        for m in masks {
            acc += m.iter().filter(|&&d| d == 1).count() as f64 / n as f64;
        }
        acc / r as f64
    });
    let clamp = |v: f64| v.clamp(1e-6, 1.0 - 1e-6);
    let mut p = vec![p0; r];
    let mut q = vec![q0; r];
    let mut w = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        iterations += 1;
        for i in 0..n {
            let mut a = prior;
            let mut b = 1.0 - prior;
            for j in 0..r {
                if masks[j][i] == 1 {
                    a *= p[j];
                    b *= 1.0 - q[j];
                } else {
                    a *= 1.0 - p[j];
                    b *= q[j];
                }
            }
            w[i] = a / (a + b);
        }
        let sw: f64 = w.iter().sum();
        let sb: f64 = w.iter().map(|x| 1.0 - x).sum();
        let mut delta: f64 = 0.0;
        for j in 0..r {
            let mut num_p = 0.0;
            let mut num_q = 0.0;
            for i in 0..n {
                if masks[j][i] == 1 {
                    num_p += w[i];
                } else {
                    num_q += 1.0 - w[i];
                }
            }
            let np = clamp(num_p / sw);
            let nq = clamp(num_q / sb);
            delta = delta.max((np - p[j]).abs()).max((nq - q[j]).abs());
            p[j] = np;
            q[j] = nq;
        }
        if delta < tolerance {
            converged = true;
            break;
        }
    }
    OracleStaple {
        posterior: w,
        sensitivity: p,
        specificity: q,
        iterations,
        converged,
        prior,
    }
}

// --------------------------------------------------------------- metrics

/// (tp, fp, tn, fn) by direct tally.
pub fn confusion_oracle(pred: &[u8], truth: &[u8]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fneg += 1,
        }
    }
    (tp, fp, tn, fneg)
}

/// Foreground voxels with a background or out-of-grid 6-neighbour.
pub fn surface_oracle(m: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.dims();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(x, y, z) {
                    continue;
                }
                let (x, y, z) = (x as i64, y as i64, z as i64);
                let nb = [
                    (x - 1, y, z),
                    (x + 1, y, z),
                    (x, y - 1, z),
                    (x, y + 1, z),
                    (x, y, z - 1),
                    (x, y, z + 1),
                ];
                let boundary = nb.iter().any(|&(a, b, c)| {
                    a < 0
                        || b < 0
                        || c < 0
                        || a >= nx as i64
                        || b >= ny as i64
                        || c >= nz as i64
                        || !m.get(a as usize, b as usize, c as usize)
                });
                if boundary {
                    out.push([x as usize, y as usize, z as usize]);
                }
            }
        }
    }
    out
}

fn nearest(a: [usize; 3], set: &[[usize; 3]], sp: [f64; 3]) -> f64 {
    set.iter()
        .map(|b| {
            let d: f64 = (0..3)
                .map(|k| ((a[k] as f64 - b[k] as f64) * sp[k]).powi(2))
                .sum();
            d.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// All-pairs (Hausdorff, mean symmetric surface distance).
pub fn distance_oracle(pred: &BinaryMask, truth: &BinaryMask) -> (f64, f64) {
    let sp = pred.spacing().map(|s| s as f64);
    let sa = surface_oracle(pred);
    let sb = surface_oracle(truth);
    let da: Vec<f64> = sa.iter().map(|&a| nearest(a, &sb, sp)).collect();
    let db: Vec<f64> = sb.iter().map(|&b| nearest(b, &sa, sp)).collect();
    let hd = da.iter().chain(&db).cloned().fold(0.0, f64::max);
    let mean = (da.iter().sum::<f64>() + db.iter().sum::<f64>()) / (da.len() + db.len()) as f64;
    (hd, mean)
}

// ------------------------------------------------------------ components

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Largest 26-connected component via union-find over neighbour offsets;
/// ties go to the component whose lexicographically smallest (x, y, z)
/// voxel is smallest.
pub fn lcc_oracle(m: &BinaryMask) -> Vec<u8> {
    let g = *m.grid();
    let [nx, ny, nz] = g.dims();
    let n = g.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if m.data()[i] == 0 {
            continue;
        }
        let [x, y, z] = g.coords(i);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                        continue;
                    }
                    let j = g.index(a as usize, b as usize, c as usize);
                    if m.data()[j] == 1 {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        if ri != rj {
                            parent[ri] = rj;
                        }
                    }
                }
            }
        }
    }
    let mut size = std::collections::HashMap::<usize, (usize, [usize; 3])>::new();
    for i in 0..n {
        if m.data()[i] == 1 {
            let root = find(&mut parent, i);
            let c = g.coords(i);
            let e = size.entry(root).or_insert((0, c));
            e.0 += 1;
            if c < e.1 {
                e.1 = c;
            }
        }
    }
    let best = size
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(&root, _)| root);
    (0..n)
        .map(|i| (m.data()[i] == 1 && Some(find(&mut parent, i)) == best) as u8)
        .collect()
}

/// Number of 26-connected foreground components.
pub fn component_count(m: &BinaryMask) -> usize {
    let g = *m.grid();
    let [nx, ny, nz] = g.dims();
    let mut seen = vec![false; g.len()];
    let mut count = 0;
    for s in 0..g.len() {
        if m.data()[s] == 0 || seen[s] {
            continue;
        }
        count += 1;
        let mut queue = std::collections::VecDeque::from([s]);
        seen[s] = true;
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = g.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let j = g.index(a as usize, b as usize, c as usize);
                        if m.data()[j] == 1 && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    count
}

// ---------------------------------------------------------------- phantoms

/// Raw-intensity phantom: background in [0, 200], balls in [800, 1000].
/// Returns the volume and the expected mask of every ball voxel. With
/// lo <= 200 and hi >= 800, min-max normalization sends background to at
/// most 250 and ball voxels to at least 750.
pub fn ball_phantom(g: Grid, balls: &[([f64; 3], f64)]) -> (silverseg::VoxelVolume, BinaryMask) {
    let inside = |x: usize, y: usize, z: usize| {
        balls.iter().any(|(c, r)| {
            (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2) <= r * r
        })
    };
    let mut data = Vec::with_capacity(g.len());
    let mut truth = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let [x, y, z] = g.coords(i);
        let wobble = ((x * 7 + y * 13 + z * 29) % 201) as f32;
        if inside(x, y, z) {
            data.push(1000.0 - wobble);
            truth.push(1u8);
        } else {
            data.push(wobble);
            truth.push(0u8);
        }
    }
    assert!(truth.contains(&1) && truth.contains(&0));
    let vol = silverseg::VoxelVolume::new(g, data, silverseg::IntensityKind::Raw).unwrap();
    (vol, BinaryMask::new(g, truth).unwrap())
}
