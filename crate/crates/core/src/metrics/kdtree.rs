//! Static k-d tree over voxel coordinates for nearest-surface queries.
//!
//! Coordinates stay integral; distances are scaled by the grid spacing only
//! when compared, so a query returns exactly the value an exhaustive search
//! computes with the same formula.

pub(crate) struct KdTree {
    points: Vec<[i64; 3]>,
    split: Vec<u8>,
    spacing: [f64; 3],
}

#[inline]
pub(crate) fn dist2(a: [i64; 3], b: [i64; 3], spacing: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for k in 0..3 {
        let d = (a[k] - b[k]) as f64 * spacing[k];
        acc += d * d;
    }
    acc
}

impl KdTree {
    pub fn build(mut points: Vec<[i64; 3]>, spacing: [f64; 3]) -> Self {
        let mut split = vec![0u8; points.len()];
        build_range(&mut points, &mut split, spacing);
        KdTree {
            points,
            split,
            spacing,
        }
    }

    /// Squared distance to the nearest stored point.
    pub fn nearest_dist2(&self, q: [i64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), q, &mut best);
        best
    }

    fn search(&self, lo: usize, hi: usize, q: [i64; 3], best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[mid];
        let d = dist2(p, q, self.spacing);
        if d < *best {
            *best = d;
        }
        let axis = self.split[mid] as usize;
        let diff = (q[axis] - p[axis]) as f64 * self.spacing[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        if diff * diff < *best {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build_range(points: &mut [[i64; 3]], split: &mut [u8], spacing: [f64; 3]) {
    if points.len() <= 1 {
        return;
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for p in points.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| {
            let ea = (hi[a] - lo[a]) as f64 * spacing[a];
            let eb = (hi[b] - lo[b]) as f64 * spacing[b];
            ea.total_cmp(&eb).then(b.cmp(&a))
        })
        .unwrap();
    let mid = points.len() / 2;
    points.select_nth_unstable_by_key(mid, |p| p[axis]);
    split[mid] = axis as u8;
    let (left, right) = points.split_at_mut(mid);
    let (lsplit, rsplit) = split.split_at_mut(mid);
    build_range(left, lsplit, spacing);
    build_range(&mut right[1..], &mut rsplit[1..], spacing);
}
