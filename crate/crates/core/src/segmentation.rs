//! Scanline segmentation of a single LiDAR frame.
//!
//! Each ring is cut into scanline segments wherever two successive returns
//! jump in distance or turn sharply, then scanline segments that come
//! within `merge_dist` of each other are joined into object segments.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// Maximum distance between successive returns of one scanline, meters.
    pub gap_dist: f64,
    /// Maximum turn between successive difference vectors, radians.
    pub gap_angle: f64,
    /// Scanline segments closer than this are merged, meters.
    pub merge_dist: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            gap_dist: 0.15,
            gap_angle: 30f64.to_radians(),
            merge_dist: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanlineSegment {
    pub ring: u16,
    /// Cloud indices in acquisition order.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Cloud indices, ascending.
    pub indices: Vec<usize>,
    pub centroid: Vector3<f64>,
}

impl Segment {
    pub fn from_indices(cloud: &PointCloud, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        let sum = indices
            .iter()
            .fold(Vector3::zeros(), |acc, &i| acc + cloud.position(i));
        let centroid = if indices.is_empty() {
            sum
        } else {
            sum / indices.len() as f64
        };
        Self { indices, centroid }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (a.dot(b) / denom).clamp(-1.0, 1.0).acos()
}

/// Cuts every ring into runs of successive returns.
///
/// Two successive returns stay together iff they are at most `gap_dist`
/// apart and the step between them turns by at most `gap_angle` relative to
/// the previous step of the same run.
pub fn split_scanlines(cloud: &PointCloud, params: &SegmentationParams) -> Vec<ScanlineSegment> {
    let mut rings: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        rings.entry(p.ring).or_default().push(i);
    }

    let mut out = Vec::new();
    for (ring, order) in rings {
        let mut current = vec![order[0]];
        let mut prev_step: Option<Vector3<f64>> = None;
        for &idx in &order[1..] {
            let last = *current.last().unwrap();
            let step = cloud.position(idx) - cloud.position(last);
            let close = step.norm() <= params.gap_dist;
            let straight = prev_step.is_none_or(|prev| angle_between(&prev, &step) <= params.gap_angle);
            if close && straight {
                current.push(idx);
                prev_step = Some(step);
            } else {
                out.push(ScanlineSegment {
                    ring,
                    indices: std::mem::replace(&mut current, vec![idx]),
                });
                prev_step = None;
            }
        }
        out.push(ScanlineSegment {
            ring,
            indices: current,
        });
    }
    out
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller id as root so labels do not depend on visit order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vector3<f64>, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Joins scanline segments whose closest points are within `merge_dist`
/// (transitively). Output segments are ordered by their smallest cloud index.
pub fn agglomerate(
    segments: &[ScanlineSegment],
    cloud: &PointCloud,
    merge_dist: f64,
) -> Vec<Segment> {
    // Each cell keeps its points grouped by segment. Before a cell is
    // compared with its neighbours its groups are fused by current root, so
    // fragments that are already joined are not compared again.
    let size = merge_dist.max(1e-9);
    let mut grid: BTreeMap<Cell, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &i in &seg.indices {
            let groups = grid.entry(cell_of(&cloud.position(i), size)).or_default();
            match groups.last_mut() {
                Some((owner, pts)) if *owner == s => pts.push(i),
                _ => groups.push((s, vec![i])),
            }
        }
    }

    let mut sets = DisjointSets::new(segments.len());
    let r2 = merge_dist * merge_dist;
    let near = |pa: &[usize], pb: &[usize]| {
        pa.iter().any(|&i| {
            let p = cloud.position(i);
            pb.iter().any(|&j| (cloud.position(j) - p).norm_squared() <= r2)
        })
    };
    let keys: Vec<Cell> = grid.keys().copied().collect();
    for key in keys {
        let mut own = grid.remove(&key).unwrap();
        fuse_by_root(&mut own, &mut sets);
        for g in 0..own.len() {
            for h in g + 1..own.len() {
                if sets.find(own[g].0) != sets.find(own[h].0) && near(&own[g].1, &own[h].1) {
                    sets.union(own[g].0, own[h].0);
                }
            }
        }
        let (cx, cy, cz) = key;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(other) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for (a, pa) in &own {
                        for (b, pb) in other {
                            if sets.find(*a) != sets.find(*b) && near(pa, pb) {
                                sets.union(*a, *b);
                            }
                        }
                    }
                }
            }
        }
        // Finished cells stay out of the grid: every pair involving them has been tested.
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, seg) in segments.iter().enumerate() {
        let root = sets.find(s);
        groups.entry(root).or_default().extend_from_slice(&seg.indices);
    }
    let mut out: Vec<Segment> = groups
        .into_values()
        .map(|idx| Segment::from_indices(cloud, idx))
        .collect();
    out.sort_by_key(|s| s.indices[0]);
    out
}

/// Merges groups whose owners share a root, keeping the root as owner.
fn fuse_by_root(groups: &mut Vec<(usize, Vec<usize>)>, sets: &mut DisjointSets) {
    let mut fused: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (owner, pts) in groups.drain(..) {
        fused.entry(sets.find(owner)).or_default().extend(pts);
    }
    groups.extend(fused);
}

/// [`split_scanlines`] followed by [`agglomerate`].
pub fn segment_cloud(cloud: &PointCloud, params: &SegmentationParams) -> Vec<Segment> {
    if cloud.is_empty() {
        return Vec::new();
    }
    let lines = split_scanlines(cloud, params);
    agglomerate(&lines, cloud, params.merge_dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LidarPoint;
    use proptest::prelude::*;

    fn line_cloud(xs: &[f64], ring: u16) -> PointCloud {
        PointCloud::new(
            xs.iter()
                .map(|&x| LidarPoint::new(x, 1.0, 0.0, 10.0, ring))
                .collect(),
            "t",
        )
    }

    /// All-pairs minimum distance merge; the reference for the grid version.
    fn brute_force(segments: &[ScanlineSegment], cloud: &PointCloud, d: f64) -> Vec<Vec<usize>> {
        let n = segments.len();
        let mut label: Vec<usize> = (0..n).collect();
        let near = |a: &ScanlineSegment, b: &ScanlineSegment| {
            a.indices.iter().any(|&i| {
                b.indices
                    .iter()
                    .any(|&j| (cloud.position(i) - cloud.position(j)).norm() <= d)
            })
        };
        let mut changed = true;
        while changed {
            changed = false;
            for a in 0..n {
                for b in 0..n {
                    if label[a] != label[b] && near(&segments[a], &segments[b]) {
                        let (lo, hi) = (label[a].min(label[b]), label[a].max(label[b]));
                        for l in label.iter_mut() {
                            if *l == hi {
                                *l = lo;
                            }
                        }
                        changed = true;
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (s, seg) in segments.iter().enumerate() {
            groups.entry(label[s]).or_default().extend_from_slice(&seg.indices);
        }
        let mut out: Vec<Vec<usize>> = groups
            .into_values()
            .map(|mut v| {
                v.sort_unstable();
                v
            })
            .collect();
        out.sort_by_key(|v| v[0]);
        out
    }

    #[test]
    fn collinear_points_form_one_scanline() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let cloud = line_cloud(&xs, 0);
        let lines = split_scanlines(&cloud, &SegmentationParams::default());
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].indices, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn distant_clusters_split() {
        let p = SegmentationParams::default();
        let mut xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        xs.extend((0..10).map(|i| 0.09 + 10.0 * p.gap_dist + i as f64 * 0.01));
        let cloud = line_cloud(&xs, 0);
        let lines = split_scanlines(&cloud, &p);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].indices[0], 10);
    }

    #[test]
    fn sharp_turn_splits() {
        let pts = vec![
            LidarPoint::new(0.0, 0.0, 0.0, 1.0, 0),
            LidarPoint::new(0.05, 0.0, 0.0, 1.0, 0),
            LidarPoint::new(0.10, 0.0, 0.0, 1.0, 0),
            LidarPoint::new(0.10, 0.05, 0.0, 1.0, 0),
        ];
        let lines = split_scanlines(&PointCloud::new(pts, "t"), &SegmentationParams::default());
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn rings_are_split_separately_and_keep_order() {
        // interleaved acquisition: ring 0 and ring 1 alternate
        let mut pts = Vec::new();
        for i in 0..20 {
            pts.push(LidarPoint::new(i as f64 * 0.01, 1.0, 0.0, 1.0, 0));
            pts.push(LidarPoint::new(i as f64 * 0.01, 1.0, 0.05, 1.0, 1));
        }
        let cloud = PointCloud::new(pts, "t");
        let lines = split_scanlines(&cloud, &SegmentationParams::default());
        assert_eq!(lines.len(), 2);
        assert!(lines[0].indices.iter().all(|&i| i % 2 == 0));
        assert!(lines[0].indices.windows(2).all(|w| w[0] < w[1]));
        let segs = agglomerate(&lines, &cloud, 0.2);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 40);
    }

    #[test]
    fn single_segment_is_unchanged() {
        let cloud = line_cloud(&[0.0, 0.01, 0.02], 4);
        let lines = split_scanlines(&cloud, &SegmentationParams::default());
        let segs = agglomerate(&lines, &cloud, 0.2);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].indices, lines[0].indices);
        assert!((segs[0].centroid - Vector3::new(0.01, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn empty_cloud_has_no_segments() {
        assert!(segment_cloud(&PointCloud::default(), &SegmentationParams::default()).is_empty());
    }

    fn random_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec((0.0..3.0f64, 0.0..3.0f64, 0.0..1.0f64, 0u16..4), 1..300).prop_map(
            |v| {
                PointCloud::new(
                    v.into_iter()
                        .map(|(x, y, z, r)| LidarPoint::new(x, y, z, 1.0, r))
                        .collect(),
                    "p",
                )
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grid_merge_matches_all_pairs(cloud in random_cloud(), d in 0.05..0.6f64) {
            let params = SegmentationParams { gap_dist: 0.3, ..Default::default() };
            let lines = split_scanlines(&cloud, &params);
            let fast: Vec<Vec<usize>> = agglomerate(&lines, &cloud, d).into_iter().map(|s| s.indices).collect();
            prop_assert_eq!(fast, brute_force(&lines, &cloud, d));
        }

        #[test]
        fn segmentation_partitions_the_cloud(cloud in random_cloud()) {
            let segs = segment_cloud(&cloud, &SegmentationParams::default());
            let mut seen = vec![0u32; cloud.len()];
            for s in &segs {
                for &i in &s.indices { seen[i] += 1; }
                let mean = s.indices.iter().fold(Vector3::zeros(), |a, &i| a + cloud.position(i)) / s.len() as f64;
                prop_assert!((mean - s.centroid).norm() < 1e-12);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn merge_is_independent_of_segment_order(cloud in random_cloud()) {
            let params = SegmentationParams::default();
            let lines = split_scanlines(&cloud, &params);
            let mut rev = lines.clone();
            rev.reverse();
            let a: Vec<Vec<usize>> = agglomerate(&lines, &cloud, 0.2).into_iter().map(|s| s.indices).collect();
            let b: Vec<Vec<usize>> = agglomerate(&rev, &cloud, 0.2).into_iter().map(|s| s.indices).collect();
            prop_assert_eq!(a, b);
        }
    }
}
