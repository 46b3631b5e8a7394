//! Slow, obviously-correct reference implementations. Everything works on plain arrays
//! so the oracles share no code with the crates they check.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

pub type P3 = [f64; 3];
pub type I3 = [i32; 3];

pub fn dist(a: &P3, b: &P3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn cell_of(p: &P3, res: f64) -> I3 {
    [(p[0] / res).floor() as i32, (p[1] / res).floor() as i32, (p[2] / res).floor() as i32]
}

pub fn cell_center(c: &I3, res: f64) -> P3 {
    [(c[0] as f64 + 0.5) * res, (c[1] as f64 + 0.5) * res, (c[2] as f64 + 0.5) * res]
}

/// Truncated Euclidean distance from every voxel of the inclusive box `[lo, hi]` to the
/// nearest occupied voxel center, by direct minimum over all occupied voxels.
/// Output order is x fastest, then y, then z.
pub fn brute_force_edt(lo: I3, hi: I3, occupied: &[I3], res: f64, d_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let mut best = i64::MAX;
                for o in occupied {
                    let dx = (x - o[0]) as i64;
                    let dy = (y - o[1]) as i64;
                    let dz = (z - o[2]) as i64;
                    best = best.min(dx * dx + dy * dy + dz * dz);
                }
                let d = if best == i64::MAX { f64::INFINITY } else { (best as f64).sqrt() * res };
                out.push(d.min(d_max));
            }
        }
    }
    out
}

/// Double-max Hausdorff distance over a full distance matrix.
pub fn hausdorff(a: &[P3], b: &[P3]) -> f64 {
    let matrix: Vec<Vec<f64>> = a.iter().map(|p| b.iter().map(|q| dist(p, q)).collect()).collect();
    let mut forward: f64 = 0.0;
    for row in &matrix {
        let m = row.iter().cloned().fold(f64::INFINITY, f64::min);
        forward = forward.max(m);
    }
    let mut backward: f64 = 0.0;
    for j in 0..b.len() {
        let m = matrix.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min);
        backward = backward.max(m);
    }
    forward.max(backward)
}

/// Voxels touched by segment `a`→`b`: samples every `res / 100`, then bisects between
/// consecutive samples whose voxels are not face neighbors so grazed edges and corners
/// are not skipped.
pub fn dense_sample_voxels(a: &P3, b: &P3, res: f64) -> BTreeSet<I3> {
    let at = |t: f64| -> I3 {
        let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])];
        cell_of(&p, res)
    };
    let apart = |u: &I3, v: &I3| (0..3).map(|i| (u[i] - v[i]).abs()).sum::<i32>() > 1;
    #[allow(clippy::too_many_arguments)]
    fn refine(at: &dyn Fn(f64) -> I3, apart: &dyn Fn(&I3, &I3) -> bool, t0: f64, t1: f64, c0: I3, c1: I3, depth: u32, out: &mut BTreeSet<I3>) {
        if depth == 0 || !apart(&c0, &c1) {
            return;
        }
        let mid = 0.5 * (t0 + t1);
        let cm = at(mid);
        out.insert(cm);
        refine(at, apart, t0, mid, c0, cm, depth - 1, out);
        refine(at, apart, mid, t1, cm, c1, depth - 1, out);
    }

    let len = dist(a, b);
    let n = ((len / (res / 100.0)).ceil() as usize).max(1);
    let mut out = BTreeSet::new();
    let mut prev_t = 0.0;
    let mut prev = at(0.0);
    out.insert(prev);
    for i in 1..=n {
        let t = i as f64 / n as f64;
        let c = at(t);
        out.insert(c);
        refine(&at, &apart, prev_t, t, prev, c, 60, &mut out);
        prev_t = t;
        prev = c;
    }
    out
}

/// Slab-method ray/box entry distance; a ray starting inside the box returns 0.
pub fn slab_ray_box(origin: &P3, dir: &P3, min: &P3, max: &P3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < min[i] || origin[i] > max[i] {
                return None;
            }
            continue;
        }
        let t1 = (min[i] - origin[i]) / dir[i];
        let t2 = (max[i] - origin[i]) / dir[i];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_far < 0.0 {
        None
    } else {
        Some(t_near.max(0.0))
    }
}

/// Euclidean distance from `p` to a closed box; zero inside.
pub fn box_distance(p: &P3, min: &P3, max: &P3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let g = (min[i] - p[i]).max(p[i] - max[i]).max(0.0);
        s += g * g;
    }
    s.sqrt()
}

/// Distance from `p` to the surface of a closed box (inside points included).
pub fn box_surface_distance(p: &P3, min: &P3, max: &P3) -> f64 {
    let outside = box_distance(p, min, max);
    if outside > 0.0 {
        return outside;
    }
    (0..3)
        .map(|i| (p[i] - min[i]).min(max[i] - p[i]))
        .fold(f64::INFINITY, f64::min)
}

#[derive(PartialEq)]
struct Entry(f64, I3);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Plain Dijkstra over an implicit graph; returns the cheapest cost from `start` to `goal`.
pub fn dijkstra<F>(start: I3, goal: I3, mut edges: F) -> Option<f64>
where
    F: FnMut(I3) -> Vec<(I3, f64)>,
{
    let mut best: HashMap<I3, f64> = HashMap::from([(start, 0.0)]);
    let mut done = HashSet::new();
    let mut heap = BinaryHeap::from([Entry(0.0, start)]);
    while let Some(Entry(cost, v)) = heap.pop() {
        if !done.insert(v) {
            continue;
        }
        if v == goal {
            return Some(cost);
        }
        for (n, w) in edges(v) {
            let c = cost + w;
            if best.get(&n).is_none_or(|&old| c < old) {
                best.insert(n, c);
                heap.push(Entry(c, n));
            }
        }
    }
    None
}

/// The 26 neighbor offsets.
pub fn offsets26() -> Vec<I3> {
    let mut out = Vec::new();
    for dx in -1..=1 {
        for dy in -1..=1 {
            for dz in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Faces of the voxel set not shared with another voxel of the set.
pub fn exposed_faces(voxels: &[I3]) -> usize {
    let set: HashSet<I3> = voxels.iter().copied().collect();
    let dirs = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    set.iter()
        .map(|v| {
            dirs.iter()
                .filter(|d| !set.contains(&[v[0] + d[0], v[1] + d[1], v[2] + d[2]]))
                .count()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hausdorff_of_singletons() {
        assert_eq!(hausdorff(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]), 1.0);
    }

    #[test]
    fn dense_sampling_axis_segment() {
        let got = dense_sample_voxels(&[0.0; 3], &[0.35, 0.0, 0.0], 0.1);
        let want: BTreeSet<I3> = (0..4).map(|i| [i, 0, 0]).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn dense_sampling_finds_grazed_corner() {
        // passes 1e-4 below the edge at (0.1, 0.1), clipping voxel (1, 0, 0)
        let got = dense_sample_voxels(&[0.05, 0.0499, 0.05], &[0.15, 0.1499, 0.05], 0.1);
        assert!(got.contains(&[1, 0, 0]), "{got:?}");
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn edt_and_faces() {
        let d = brute_force_edt([0, 0, 0], [2, 0, 0], &[[0, 0, 0]], 0.1, 1.0);
        assert_eq!(d, vec![0.0, 0.1, 0.2]);
        assert_eq!(exposed_faces(&[[0, 0, 0]]), 6);
        assert_eq!(exposed_faces(&[[0, 0, 0], [1, 0, 0]]), 10);
    }

    #[test]
    fn slab_hits_and_misses() {
        let min = [1.0, -1.0, -1.0];
        let max = [2.0, 1.0, 1.0];
        assert_eq!(slab_ray_box(&[0.0; 3], &[1.0, 0.0, 0.0], &min, &max), Some(1.0));
        assert_eq!(slab_ray_box(&[0.0; 3], &[-1.0, 0.0, 0.0], &min, &max), None);
        assert_eq!(box_surface_distance(&[1.5, 0.0, 0.0], &min, &max), 0.5);
    }

    #[test]
    fn dijkstra_on_a_line() {
        let cost = dijkstra([0, 0, 0], [3, 0, 0], |v| vec![([v[0] + 1, 0, 0], 1.0)]);
        assert_eq!(cost, Some(3.0));
    }
}
