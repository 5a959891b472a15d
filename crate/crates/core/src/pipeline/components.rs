use std::collections::VecDeque;

use crate::volume::BinaryMask;

/// Keeps only the largest 26-connected foreground component. Equal-sized
/// components are ranked by their lexicographically smallest (x, y, z)
/// voxel, smallest first. An empty mask is returned unchanged.
pub fn largest_connected_component(mask: &BinaryMask) -> BinaryMask {
    let g = *mask.grid();
    let [nx, ny, nz] = g.dims();
    let data = mask.data();
    let mut label = vec![0u32; g.len()];
    let mut best: Option<(u32, usize, [usize; 3])> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();

    for seed in 0..g.len() {
        if data[seed] == 0 || label[seed] != 0 {
            continue;
        }
        next += 1;
        label[seed] = next;
        queue.push_back(seed);
        let mut size = 0usize;
        let mut min_voxel = g.coords(seed);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let [x, y, z] = g.coords(i);
            if [x, y, z] < min_voxel {
                min_voxel = [x, y, z];
            }
            for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
                for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                        let j = g.index(xx, yy, zz);
                        if data[j] != 0 && label[j] == 0 {
                            label[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        let better = match best {
            None => true,
            Some((_, s, m)) => size > s || (size == s && min_voxel < m),
        };
        if better {
            best = Some((next, size, min_voxel));
        }
    }

    let Some((keep, _, _)) = best else {
        return mask.clone();
    };
    let out = label.iter().map(|&l| (l == keep) as u8).collect();
    BinaryMask::from_raw_unchecked(g, out)
}
