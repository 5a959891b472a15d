//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use nifti::{NiftiObject, NiftiVolume, RandomAccessNiftiVolume, ReaderOptions};
use rand::Rng;
use serde::Deserialize;
use silverseg::fusion::{staple_fuse, threshold_mask, PriorMode, RaterSet, StapleConfig};
use silverseg::metrics::{confusion, dice, hausdorff, sensitivity, specificity, surface_distances, surface_voxels};
use silverseg::pipeline::{
    extract_patches, normalize, read_patchset, skull_strip, write_patchset, PatchConfig, TrivialPredictor,
};
use silverseg::stats::{
    is_significant, paired_t_test, render_table, ComparisonRow, ComparisonTable, Metric, PairedSample, TableFormat,
};
use silverseg::volume::{load_mask, load_volume, save_mask, save_volume_as, DataType};
use silverseg::{BinaryMask, Grid, IntensityKind, PlaneAxis, VoxelVolume};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn noisy_raters(rng: &mut impl Rng, g: Grid, r: usize) -> RaterSet {
    let truth = random_blob(rng, g, 0.0);
    let masks = (0..r)
        .map(|_| {
            let flip = rng.gen_range(0.0..0.3);
            let noise = random_mask(rng, g, flip);
            BinaryMask::new(g, truth.data().iter().zip(noise.data()).map(|(a, b)| a ^ b).collect()).unwrap()
        })
        .collect();
    RaterSet::with_default_ids(masks).unwrap()
}

/// 1. STAPLE matches the brute-force EM on 50 random 8^3 sets of 3 to 8 raters.
fn staple_oracle_equivalence() -> Outcome {
    let mut rng = rng(1001);
    let config = StapleConfig::default();
    let mut worst = 0f64;
    let mut library_time = Duration::ZERO;
    let start = Instant::now();
    for case in 0..50 {
        let r = rng.gen_range(3..=8);
        let raters = noisy_raters(&mut rng, grid([8, 8, 8]), r);
        let t = Instant::now();
        let res = staple_fuse(&raters, &config).map_err(|e| format!("case {case}: {e}"))?;
        library_time += t.elapsed();
        let masks: Vec<&[u8]> = raters.masks().iter().map(|m| m.data()).collect();
        let want = staple_oracle(&masks, 0.99, 0.99, None, config.max_iterations, config.tolerance);
        ensure!(res.iterations == want.iterations, "case {case}: {} vs {} iterations", res.iterations, want.iterations);
        for (a, b) in res.posterior().iter().zip(&want.posterior) {
            worst = worst.max((a - b).abs());
        }
        for (k, p) in res.performances.iter().enumerate() {
            worst = worst.max((p.sensitivity - want.sensitivity[k]).abs());
            worst = worst.max((p.specificity - want.specificity[k]).abs());
        }
        ensure!(worst <= 1e-9, "case {case}: deviation {worst:e} > 1e-9");
    }
    let total = start.elapsed();
    ensure!(total < Duration::from_secs(10), "took {}", secs(total));
    Ok(format!("max deviation {worst:.1e}, {} total ({} in staple_fuse)", secs(total), secs(library_time)))
}

/// 2. Five copies of one mask fuse back to that mask.
fn staple_unanimity() -> Outcome {
    let mut rng = rng(1002);
    let mut done = 0;
    while done < 20 {
        let m = random_blob(&mut rng, grid([10, 9, 8]), 0.05);
        if m.is_empty() || m.is_full() {
            continue;
        }
        let set = RaterSet::with_default_ids(vec![m.clone(); 5]).unwrap();
        let res = staple_fuse(&set, &StapleConfig::default()).map_err(|e| e.to_string())?;
        let silver = threshold_mask(&res.posterior_volume(), 0.5).map_err(|e| e.to_string())?;
        ensure!(silver == m, "mask {done}: fused mask differs from the unanimous input");
        done += 1;
    }
    Ok("20/20 masks reproduced".into())
}

/// 3. Overlap metrics exact, surface distances within 1e-9 mm, singleton case.
fn metric_oracle_equivalence() -> Outcome {
    let mut rng = rng(1003);
    let mut worst = 0f64;
    for case in 0..100 {
        let spacing = [rng.gen_range(0.5f32..2.0), rng.gen_range(0.5f32..2.0), rng.gen_range(0.5f32..2.0)];
        let g = Grid::new([16, 16, 16], spacing).unwrap();
        let (a, b) = if case % 2 == 0 {
            (random_blob(&mut rng, g, 0.02), random_blob(&mut rng, g, 0.02))
        } else {
            let (da, db) = (rng.gen_range(0.02..0.5), rng.gen_range(0.02..0.5));
            (random_mask(&mut rng, g, da), random_mask(&mut rng, g, db))
        };
        if a.is_empty() || b.is_empty() || b.is_full() {
            continue;
        }
        let c = confusion(&a, &b).map_err(|e| e.to_string())?;
        let (tp, fp, tn, fneg) = confusion_oracle(a.data(), b.data());
        ensure!((c.tp, c.fp, c.tn, c.fn_) == (tp, fp, tn, fneg), "case {case}: confusion counts differ");
        let (tp, fp, tn, fneg) = (tp as f64, fp as f64, tn as f64, fneg as f64);
        ensure!(dice(&c).unwrap() == 2.0 * tp / (2.0 * tp + fp + fneg), "case {case}: Dice differs");
        ensure!(sensitivity(&c).unwrap() == tp / (tp + fneg), "case {case}: sensitivity differs");
        ensure!(specificity(&c).unwrap() == tn / (tn + fp), "case {case}: specificity differs");
        let (hd, msd) = distance_oracle(&a, &b);
        let d = surface_distances(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((d.hausdorff() - hd).abs()).max((d.mean_symmetric() - msd).abs());
        ensure!(worst <= 1e-9, "case {case}: distance deviation {worst:e}");
    }
    let g = grid([5, 1, 1]);
    let p = BinaryMask::from_fn(g, |x, _, _| x == 0);
    let r = BinaryMask::from_fn(g, |x, _, _| x == 3);
    let d = surface_distances(&p, &r).map_err(|e| e.to_string())?;
    ensure!(d.hausdorff() == 3.0 && d.mean_symmetric() == 3.0, "singleton case gave {} / {}", d.hausdorff(), d.mean_symmetric());
    Ok(format!("100 pairs, max distance deviation {worst:.1e} mm, singleton 3.0 mm exact"))
}

#[derive(Deserialize)]
struct Fixture {
    a: Vec<f64>,
    b: Vec<f64>,
    p: f64,
}

#[derive(Deserialize)]
struct Fixtures {
    samples: Vec<Fixture>,
}

/// 4. Reference p-values, exact symmetries and the 0.05 boundary.
fn t_test_correctness() -> Outcome {
    let fx: Fixtures = serde_json::from_str(include_str!("fixtures/paired_t.json")).map_err(|e| e.to_string())?;
    ensure!(fx.samples.len() == 25, "expected 25 fixtures");
    let mut worst = 0f64;
    for (k, f) in fx.samples.iter().enumerate() {
        let r = paired_t_test(&PairedSample::new(f.a.clone(), f.b.clone(), "fx").unwrap()).map_err(|e| format!("#{k}: {e}"))?;
        worst = worst.max((r.p_value - f.p).abs());
    }
    ensure!(worst <= 1e-9, "p deviation {worst:e}");

    // dyadic inputs keep every sum, shift and power-of-two scaling exact
    let mut rng = rng(1004);
    let dyadic = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(-100_000i64..100_000) as f64 / 1024.0;
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.gen_range(2..30);
        let a: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let Ok(base) = paired_t_test(&PairedSample::new(a.clone(), b.clone(), "m").unwrap()) else {
            continue;
        };
        let run = |x: Vec<f64>, y: Vec<f64>| paired_t_test(&PairedSample::new(x, y, "m").unwrap()).unwrap();
        let swapped = run(b.clone(), a.clone());
        ensure!(swapped.t_statistic == -base.t_statistic && swapped.p_value == base.p_value, "antisymmetry broken");
        let c = dyadic(&mut rng);
        let shifted = run(a.iter().map(|x| x + c).collect(), b.iter().map(|x| x + c).collect());
        ensure!(shifted.t_statistic == base.t_statistic && shifted.p_value == base.p_value, "shift invariance broken");
        let s = 2f64.powi(rng.gen_range(-8..8));
        let scaled = run(a.iter().map(|x| x * s).collect(), b.iter().map(|x| x * s).collect());
        ensure!(scaled.t_statistic == base.t_statistic && scaled.p_value == base.p_value, "scale equivariance broken");
        ensure!(base.significant == (base.p_value < 0.05), "flag disagrees with p");
        checked += 1;
    }
    let below = f64::from_bits(0.05f64.to_bits() - 1);
    ensure!(!is_significant(0.05) && is_significant(below), "flag does not flip at 0.05");
    Ok(format!("25 fixtures within {worst:.1e}, 1000 symmetry samples exact, flag flips at 0.05"))
}

/// 5. Patch counts, shape, foreground and byte-identical reruns.
fn patch_contracts() -> Outcome {
    let g = grid([80, 80, 20]);
    let brain = BinaryMask::from_fn(g, |x, y, z| {
        let (dx, dy, dz) = (x as f64 - 40.0, y as f64 - 38.0, z as f64 - 10.0);
        dx * dx / 900.0 + dy * dy / 700.0 + dz * dz / 49.0 <= 1.0
    });
    let image = normalize(&VoxelVolume::from_fn(g, |x, y, z| ((x * 17 + y * 5 + z * 3) % 257) as f32)).unwrap();
    let cfg = PatchConfig::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for axis in PlaneAxis::ALL {
        let (ca, ra) = axis.in_plane_axes();
        let extent = (g.dims()[ca], g.dims()[ra]);
        let result = extract_patches(&image, &brain, axis, "phantom", 2024, &cfg);
        if extent.0 < 64 || extent.1 < 64 {
            // 64x64 patches do not fit; extraction must refuse
            ensure!(result.is_err(), "{axis}: {}x{} slices accepted", extent.0, extent.1);
            summary.push(format!("{axis} rejected ({}x{})", extent.0, extent.1));
            continue;
        }
        let set = result.map_err(|e| e.to_string())?;
        let brain_slices: Vec<usize> = (0..g.dims()[axis.normal_axis()])
            .filter(|&k| brain.slice(axis, k).data.contains(&1))
            .collect();
        ensure!(set.len() == 5 * brain_slices.len(), "{axis}: {} patches for {} slices", set.len(), brain_slices.len());
        for k in &brain_slices {
            let n = set.provenance.iter().filter(|p| p.slice_index == *k).count();
            ensure!(n == 5, "{axis} slice {k}: {n} patches");
        }
        ensure!(set.size == 64 && set.images.len() == set.len() * 4096 && set.masks.len() == set.len() * 4096, "patch shape");
        for k in 0..set.len() {
            ensure!(set.mask(k).contains(&1), "{axis} patch {k} has no foreground");
        }
        let (p1, p2) = (dir.path().join("a.patches"), dir.path().join("b.patches"));
        write_patchset(&set, &p1).map_err(|e| e.to_string())?;
        let again = extract_patches(&image, &brain, axis, "phantom", 2024, &cfg).map_err(|e| e.to_string())?;
        write_patchset(&again, &p2).map_err(|e| e.to_string())?;
        ensure!(std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(), "{axis}: rerun bytes differ");
        ensure!(read_patchset(&p1).map_err(|e| e.to_string())? == set, "{axis}: container round trip");
        summary.push(format!("{axis} {} patches over {} slices", set.len(), brain_slices.len()));
    }
    Ok(summary.join(", "))
}

/// 6. Two bright balls: skull stripping keeps exactly the larger one.
fn end_to_end_phantom() -> Outcome {
    let g = grid([48, 40, 36]);
    let big = ([18.0, 20.0, 18.0], 10.0);
    let small = ([40.0, 32.0, 28.0], 4.0);
    let (vol, _) = ball_phantom(g, &[big, small]);
    let (_, want) = ball_phantom(g, &[big]);
    let t = &TrivialPredictor;
    let out = skull_strip(&vol, [t, t, t]).map_err(|e| e.to_string())?;
    ensure!(component_count(&out) == 1, "{} components", component_count(&out));
    ensure!(out == want, "mask differs from the larger ball ({} vs {} voxels)", out.count(), want.count());
    Ok(format!("kept {} voxels, one component", out.count()))
}

/// 7. Table cells and significance marking.
fn report_fidelity() -> Outcome {
    let rows = [
        (Metric::Dice, (96.111, 0.616), (95.793, 0.931), 0.005),
        (Metric::Sensitivity, (97.795, 1.575), (97.715, 1.274), 0.573),
        (Metric::Specificity, (98.979, 0.389), (98.876, 0.517), 0.04),
        (Metric::Hausdorff, (13.086, 3.585), (12.494, 3.996), 0.282),
        (Metric::MeanSurfaceDistance, (0.066, 0.015), (0.075, 0.024), 0.003),
    ]
    .iter()
    .map(|&(m, a, b, p)| ComparisonRow::new("LPBA40", m, a, b, p))
    .collect();
    let table = ComparisonTable::new("Gold", "Silver", rows).map_err(|e| e.to_string())?;
    let md = render_table(&table, TableFormat::Markdown);
    ensure!(md.contains("| 96.111 ± 0.616 |"), "markdown cell missing:\n{md}");
    ensure!(md.contains(" **0.005** |") && md.contains(" 0.282 |") && !md.contains("**0.282**"), "markdown marking:\n{md}");
    let tex = render_table(&table, TableFormat::Latex);
    ensure!(tex.contains("$96.111 \\pm 0.616$"), "latex cell missing");
    ensure!(tex.contains("$\\boldsymbol{0.005}$") && tex.contains("$0.282$") && !tex.contains("boldsymbol{0.282}"), "latex marking");
    Ok("\"96.111 ± 0.616\", 0.005 bold, 0.282 plain".into())
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn ball_mask(g: Grid, c: [f64; 3], r: f64, flip_seed: Option<u64>) -> BinaryMask {
    BinaryMask::from_fn(g, |x, y, z| {
        let inside = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2) <= r * r;
        // about 1 voxel in 128 flipped
        let flip = flip_seed.is_some_and(|s| mix(s ^ g.index(x, y, z) as u64) & 127 == 0);
        inside ^ flip
    })
}

/// 8. Full-size STAPLE and Hausdorff timings.
fn performance() -> Outcome {
    let g = Grid::new([181, 217, 181], [1.0, 1.0, 1.0]).unwrap();
    let masks: Vec<BinaryMask> = (0..8)
        .map(|k| {
            let c = [90.0 + (k % 3) as f64 - 1.0, 108.0 + (k % 2) as f64, 90.0 - (k % 4) as f64 * 0.5];
            ball_mask(g, c, 60.0 + (k % 3) as f64, Some(k as u64 + 1))
        })
        .collect();
    let set = RaterSet::with_default_ids(masks).unwrap();
    let config = StapleConfig {
        tolerance: 1e-7,
        prior: PriorMode::MeanForegroundFraction,
        ..StapleConfig::default()
    };
    let t = Instant::now();
    let res = staple_fuse(&set, &config).map_err(|e| e.to_string())?;
    let staple_time = t.elapsed();
    ensure!(res.converged, "STAPLE did not converge in {} iterations", res.iterations);
    ensure!(staple_time < Duration::from_secs(60), "STAPLE took {}", secs(staple_time));

    let a = ball_mask(g, [90.0, 108.0, 90.0], 70.0, None);
    let b = ball_mask(g, [92.0, 106.0, 89.0], 69.0, None);
    let surface = (surface_voxels(&a).unwrap().len(), surface_voxels(&b).unwrap().len());
    let t = Instant::now();
    let hd = hausdorff(&a, &b).map_err(|e| e.to_string())?;
    let hd_time = t.elapsed();
    ensure!(hd_time < Duration::from_secs(5), "Hausdorff took {}", secs(hd_time));
    Ok(format!(
        "STAPLE 181x217x181x8 converged in {} iterations, {}; Hausdorff {hd:.3} mm over {}+{} surface voxels, {}",
        res.iterations,
        secs(staple_time),
        surface.0,
        surface.1,
        secs(hd_time)
    ))
}

fn independent_read(path: &Path, want: &VoxelVolume) -> Result<(), String> {
    let obj = ReaderOptions::new().read_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let h = obj.header();
    let dims = want.dims();
    ensure!(
        h.dim[0] == 3 && (1..=3).all(|k| h.dim[k] as usize == dims[k - 1]),
        "{}: reference reader saw dims {:?}",
        path.display(),
        &h.dim[..4]
    );
    ensure!(h.pixdim[1..4] == want.spacing(), "{}: reference reader saw spacing {:?}", path.display(), &h.pixdim[1..4]);
    let vol = obj.volume();
    ensure!(vol.dim().len() == 3, "reference reader dimensionality");
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let v = vol.get_f32(&[x as u16, y as u16, z as u16]).map_err(|e| e.to_string())?;
                let w = want.get(x, y, z);
                ensure!(v.to_bits() == w.to_bits(), "{}: voxel ({x},{y},{z}) {v} vs {w}", path.display());
            }
        }
    }
    Ok(())
}

/// 9. Save/load round trips across data types and compression modes.
fn io_round_trip() -> Outcome {
    let mut rng = rng(1009);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cross_checked = 0;
    for case in 0..200 {
        let dims = [rng.gen_range(1..=12), rng.gen_range(1..=12), rng.gen_range(1..=12)];
        let spacing = [rng.gen_range(0.1f32..5.0), rng.gen_range(0.1f32..5.0), rng.gen_range(0.1f32..5.0)];
        let g = Grid::new(dims, spacing).unwrap();
        let gz = (case / 4) % 2 == 1;
        let path = dir.path().join(format!("c{case}.nii{}", if gz { ".gz" } else { "" }));
        if case % 4 == 3 {
            let m = random_mask(&mut rng, g, 0.4);
            save_mask(&m, &path).map_err(|e| e.to_string())?;
            let back = load_mask(&path).map_err(|e| format!("case {case}: {e}"))?;
            ensure!(back == m, "case {case}: mask differs after round trip");
            independent_read(&path, &m.to_volume().with_kind(IntensityKind::Raw).unwrap())?;
        } else {
            let (dtype, data): (DataType, Vec<f32>) = match case % 4 {
                0 => (DataType::UInt8, (0..g.len()).map(|_| rng.gen::<u8>() as f32).collect()),
                1 => (DataType::Int16, (0..g.len()).map(|_| rng.gen::<i16>() as f32).collect()),
                _ => (
                    DataType::Float32,
                    (0..g.len())
                        .map(|_| loop {
                            let v = f32::from_bits(rng.gen());
                            if v.is_finite() {
                                break v;
                            }
                        })
                        .collect(),
                ),
            };
            let vol = VoxelVolume::new(g, data, IntensityKind::Raw).unwrap();
            save_volume_as(&vol, &path, dtype).map_err(|e| e.to_string())?;
            let back = load_volume(&path).map_err(|e| format!("case {case}: {e}"))?;
            ensure!(back.grid() == vol.grid(), "case {case}: grid {} vs {}", back.grid(), vol.grid());
            ensure!(
                back.data().iter().zip(vol.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
                "case {case}: {dtype:?} values differ after round trip"
            );
            independent_read(&path, &vol)?;
        }
        cross_checked += 1;
    }
    Ok(format!("200 files bit-exact, {cross_checked} also confirmed by an independent reader"))
}

fn main() {
    let criteria: [Check; 9] = [
        ("STAPLE oracle equivalence", staple_oracle_equivalence),
        ("STAPLE unanimity", staple_unanimity),
        ("metric oracle equivalence", metric_oracle_equivalence),
        ("t-test correctness", t_test_correctness),
        ("patch extraction contracts", patch_contracts),
        ("end-to-end phantom", end_to_end_phantom),
        ("report fidelity", report_fidelity),
        ("performance", performance),
        ("NIfTI round trip", io_round_trip),
    ];
    let mode = if silverseg::par::is_parallel() { "parallel" } else { "sequential" };
    println!("acceptance ({mode} build)");
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({})", k + 1, secs(t.elapsed())),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why} ({})", k + 1, secs(t.elapsed()));
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
