//! Exact Euclidean distance field over a voxel region.
//!
//! Distances are measured between voxel centers and computed with the separable
//! lower-envelope-of-parabolas transform (Felzenszwalb & Huttenlocher), one pass per
//! axis on squared distances in voxel units. Because every squared distance is an
//! integer, the result matches a brute-force minimum exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::occupancy::{VoxelCoord, VoxelSnapshot};

pub const DEFAULT_D_MAX: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum EsdfError {
    #[error("region is empty: min {min:?} max {max:?}")]
    EmptyRegion { min: VoxelCoord, max: VoxelCoord },
    #[error("d_max must be positive, got {0}")]
    InvalidDMax(f64),
}

/// Inclusive voxel index box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub min: VoxelCoord,
    pub max: VoxelCoord,
}

impl IndexBox {
    pub fn new(min: VoxelCoord, max: VoxelCoord) -> Self {
        Self { min, max }
    }

    /// Voxels whose centers lie inside `[lo, hi]`.
    pub fn covering(lo: &Vec3, hi: &Vec3, resolution: f64) -> Self {
        let first = |x: f64| (x / resolution - 0.5).ceil() as i32;
        let last = |x: f64| (x / resolution - 0.5).floor() as i32;
        Self::new(
            VoxelCoord::new(first(lo.x), first(lo.y), first(lo.z)),
            VoxelCoord::new(last(hi.x), last(hi.y), last(hi.z)),
        )
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min.axis(a) > self.max.axis(a))
    }

    pub fn dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.max.axis(a) - self.min.axis(a) + 1).max(0) as usize)
    }

    pub fn volume(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn contains(&self, v: &VoxelCoord) -> bool {
        (0..3).all(|a| v.axis(a) >= self.min.axis(a) && v.axis(a) <= self.max.axis(a))
    }

    pub fn expanded(&self, by: i32) -> Self {
        Self::new(self.min.offset(-by, -by, -by), self.max.offset(by, by, by))
    }

    /// Flat index, x fastest.
    pub fn index_of(&self, v: &VoxelCoord) -> Option<usize> {
        if !self.contains(v) {
            return None;
        }
        let [nx, ny, _] = self.dims();
        let x = (v.ix - self.min.ix) as usize;
        let y = (v.iy - self.min.iy) as usize;
        let z = (v.iz - self.min.iz) as usize;
        Some(x + nx * (y + ny * z))
    }

    pub fn coord_of(&self, index: usize) -> VoxelCoord {
        let [nx, ny, _] = self.dims();
        let x = index % nx;
        let y = (index / nx) % ny;
        let z = index / (nx * ny);
        self.min.offset(x as i32, y as i32, z as i32)
    }

    pub fn iter(&self) -> impl Iterator<Item = VoxelCoord> + '_ {
        (0..self.volume()).map(|i| self.coord_of(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsdfGrid {
    resolution: f64,
    region: IndexBox,
    d_max: f64,
    distances: Vec<f64>,
    source_revision: u64,
}

impl EsdfGrid {
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn region(&self) -> &IndexBox {
        &self.region
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn source_revision(&self) -> u64 {
        self.source_revision
    }

    /// Distance for a voxel inside the region.
    pub fn distance(&self, v: &VoxelCoord) -> Option<f64> {
        self.region.index_of(v).map(|i| self.distances[i])
    }

    /// Distance of the voxel containing `p`.
    pub fn distance_at(&self, p: &Vec3) -> Option<f64> {
        self.distance(&VoxelCoord::containing(p, self.resolution))
    }

    /// Row-major (x fastest) distances over the region.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }
}

pub fn build(snapshot: &VoxelSnapshot, region: IndexBox, d_max: f64) -> Result<EsdfGrid, EsdfError> {
    build_from_voxels(&snapshot.voxels, snapshot.resolution, region, d_max, snapshot.revision)
}

pub fn build_from_voxels(
    occupied: &[VoxelCoord],
    resolution: f64,
    region: IndexBox,
    d_max: f64,
    source_revision: u64,
) -> Result<EsdfGrid, EsdfError> {
    if region.is_empty() {
        return Err(EsdfError::EmptyRegion {
            min: region.min,
            max: region.max,
        });
    }
    if !(d_max > 0.0) {
        return Err(EsdfError::InvalidDMax(d_max));
    }

    // Obstacles farther than d_max from the region cannot change a truncated value,
    // so the working box is the region grown by d_max, clipped to where obstacles are.
    let pad = (d_max / resolution).ceil() as i32 + 1;
    let mut work = region.expanded(pad);
    let mut bbox: Option<IndexBox> = None;
    for v in occupied.iter().filter(|v| work.contains(v)) {
        let b = bbox.get_or_insert(IndexBox::new(*v, *v));
        b.min = VoxelCoord::new(b.min.ix.min(v.ix), b.min.iy.min(v.iy), b.min.iz.min(v.iz));
        b.max = VoxelCoord::new(b.max.ix.max(v.ix), b.max.iy.max(v.iy), b.max.iz.max(v.iz));
    }
    let Some(bbox) = bbox else {
        return Ok(EsdfGrid {
            resolution,
            region,
            d_max,
            distances: vec![d_max; region.volume()],
            source_revision,
        });
    };
    work = IndexBox::new(
        VoxelCoord::new(
            region.min.ix.min(bbox.min.ix),
            region.min.iy.min(bbox.min.iy),
            region.min.iz.min(bbox.min.iz),
        ),
        VoxelCoord::new(
            region.max.ix.max(bbox.max.ix),
            region.max.iy.max(bbox.max.iy),
            region.max.iz.max(bbox.max.iz),
        ),
    );

    let dims = work.dims();
    let mut field = vec![f64::INFINITY; work.volume()];
    for v in occupied {
        if let Some(i) = work.index_of(v) {
            field[i] = 0.0;
        }
    }

    let strides = [1, dims[0], dims[0] * dims[1]];
    let longest = *dims.iter().max().unwrap();
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = EnvelopeScratch::new(longest);
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for a in 0..dims[o1] {
            for b in 0..dims[o2] {
                let base = a * strides[o1] + b * strides[o2];
                for k in 0..n {
                    line[k] = field[base + k * stride];
                }
                squared_distance_1d(&line[..n], &mut out[..n], &mut scratch);
                for k in 0..n {
                    field[base + k * stride] = out[k];
                }
            }
        }
    }

    let distances = region
        .iter()
        .map(|v| {
            let sq = field[work.index_of(&v).unwrap()];
            (sq.sqrt() * resolution).min(d_max)
        })
        .collect();
    Ok(EsdfGrid {
        resolution,
        region,
        d_max,
        distances,
        source_revision,
    })
}

struct EnvelopeScratch {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl EnvelopeScratch {
    fn new(n: usize) -> Self {
        Self {
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }
}

/// One-dimensional squared distance transform of a sampled function `f`
/// (`f[q] = +inf` marks "no site"): `out[p] = min_q (p - q)^2 + f[q]`.
fn squared_distance_1d(f: &[f64], out: &mut [f64], s: &mut EnvelopeScratch) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                s.sites[0] = q;
                s.bounds[0] = f64::NEG_INFINITY;
                s.bounds[1] = f64::INFINITY;
                break;
            }
            let v = s.sites[k as usize];
            let fv = f[v] + (v * v) as f64;
            let cross = (fq - fv) / (2.0 * (q as f64 - v as f64));
            if cross <= s.bounds[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            s.sites[k as usize] = q;
            s.bounds[k as usize] = cross;
            s.bounds[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (p, slot) in out.iter_mut().enumerate() {
        while s.bounds[j + 1] < p as f64 {
            j += 1;
        }
        let v = s.sites[j];
        let d = p as f64 - v as f64;
        *slot = d * d + f[v];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(occupied: &[VoxelCoord], region: &IndexBox, res: f64, d_max: f64) -> Vec<f64> {
        region
            .iter()
            .map(|v| {
                let c = v.center(res);
                occupied
                    .iter()
                    .map(|o| (o.center(res) - c).norm())
                    .fold(d_max, f64::min)
            })
            .collect()
    }

    fn cube(n: i32) -> IndexBox {
        IndexBox::new(VoxelCoord::new(0, 0, 0), VoxelCoord::new(n - 1, n - 1, n - 1))
    }

    #[test]
    fn no_obstacles_is_d_max() {
        let g = build_from_voxels(&[], 0.1, cube(4), 2.0, 0).unwrap();
        assert!(g.distances().iter().all(|&d| d == 2.0));
    }

    #[test]
    fn single_voxel_neighbor_is_resolution() {
        let o = VoxelCoord::new(3, 3, 3);
        let g = build_from_voxels(&[o], 0.1, cube(8), 2.0, 0).unwrap();
        assert_eq!(g.distance(&o), Some(0.0));
        for n in [o.offset(1, 0, 0), o.offset(0, -1, 0), o.offset(0, 0, 1)] {
            assert!((g.distance(&n).unwrap() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_region_rejected() {
        let region = IndexBox::new(VoxelCoord::new(1, 0, 0), VoxelCoord::new(0, 0, 0));
        assert!(matches!(
            build_from_voxels(&[], 0.1, region, 2.0, 0),
            Err(EsdfError::EmptyRegion { .. })
        ));
    }

    #[test]
    fn obstacles_outside_region_count() {
        let region = cube(4);
        let outside = VoxelCoord::new(-3, 0, 0);
        let g = build_from_voxels(&[outside], 0.1, region, 2.0, 0).unwrap();
        assert!((g.distance(&VoxelCoord::new(0, 0, 0)).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(1..=12);
            let region = cube(n);
            let occupied: Vec<_> = region.iter().filter(|_| rng.gen_bool(0.05)).collect();
            let d_max = rng.gen_range(0.05..1.5);
            let g = build_from_voxels(&occupied, 0.1, region, d_max, 0).unwrap();
            let expected = brute_force(&occupied, &region, 0.1, d_max);
            for (a, b) in g.distances().iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    fn random_grid() -> impl Strategy<Value = (i32, Vec<VoxelCoord>)> {
        (2i32..8).prop_flat_map(|n| {
            let v = proptest::collection::vec((0..n, 0..n, 0..n), 1..12);
            (Just(n), v.prop_map(|v| v.into_iter().map(|(x, y, z)| VoxelCoord::new(x, y, z)).collect()))
        })
    }

    proptest! {
        #[test]
        fn lipschitz_and_truncated((n, occ) in random_grid()) {
            let res = 0.1;
            let g = build_from_voxels(&occ, res, cube(n), 0.5, 0).unwrap();
            for v in cube(n).iter() {
                let d = g.distance(&v).unwrap();
                prop_assert!((0.0..=0.5).contains(&d));
                for nb in [v.offset(1, 0, 0), v.offset(0, 1, 0), v.offset(0, 0, 1)] {
                    if let Some(dn) = g.distance(&nb) {
                        prop_assert!((d - dn).abs() <= res + 1e-12);
                    }
                }
            }
            for o in &occ {
                prop_assert_eq!(g.distance(o), Some(0.0));
            }
        }

        #[test]
        fn adding_obstacle_never_increases((n, occ) in random_grid(), extra in (0i32..8, 0i32..8, 0i32..8)) {
            let region = cube(n);
            let before = build_from_voxels(&occ, 0.1, region, 2.0, 0).unwrap();
            let mut more = occ.clone();
            more.push(VoxelCoord::new(extra.0 % n, extra.1 % n, extra.2 % n));
            let after = build_from_voxels(&more, 0.1, region, 2.0, 0).unwrap();
            for (a, b) in after.distances().iter().zip(before.distances()) {
                prop_assert!(a <= b);
            }
        }
    }
}
