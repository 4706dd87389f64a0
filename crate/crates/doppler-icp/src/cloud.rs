//! Point cloud container with a Doppler channel, PCA normal estimation,
//! and an exact nearest-neighbor index for correspondence search.

use crate::se3::{Mat3, RigidTransform, Vec3};
use thiserror::Error;

/// Default neighborhood size for normal estimation.
pub const DEFAULT_NORMAL_K: usize = 20;

/// Surface-variation cutoff `l0 / (l0 + l1 + l2)` above which a neighborhood
/// is treated as non-planar and gets no normal.
const MAX_PLANE_CURVATURE: f64 = 0.005;

/// Minimum `l1 / l2` for a neighborhood to count as two-dimensional.
/// Quasi-collinear neighborhoods (grazing-incidence scan rings) define no
/// reliable plane.
const MIN_PLANE_ANISOTROPY: f64 = 0.05;

/// Neighbors beyond this radius are excluded from the plane fit. Without the
/// cap, sparse grazing-incidence neighborhoods can span two distinct surfaces
/// and fit a fictitious plane across them.
const NORMAL_RADIUS_CAP_M: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("cannot build a spatial index over an empty cloud")]
    EmptyCloud,
    #[error("normal estimation needs k >= 3 and at least k points (k = {k}, points = {points})")]
    TooFewPoints { k: usize, points: usize },
}

/// One LiDAR return: position in the sensor frame at capture time, measured
/// radial velocity (positive = receding), and an optional unit surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerPoint {
    pub position: Vec3,
    pub doppler: f64,
    pub normal: Option<Vec3>,
}

impl DopplerPoint {
    pub fn new(position: Vec3, doppler: f64) -> Self {
        Self {
            position,
            doppler,
            normal: None,
        }
    }
}

/// An ordered scan of [`DopplerPoint`]s plus frame metadata and the sample
/// period used to convert the state vector into velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerPointCloud {
    pub points: Vec<DopplerPoint>,
    /// Period of one LiDAR sample, seconds.
    pub period_s: f64,
    pub frame_id: String,
    pub timestamp_s: f64,
    /// False when the source file carried no Doppler channel.
    pub has_doppler: bool,
}

impl DopplerPointCloud {
    pub fn new(points: Vec<DopplerPoint>, period_s: f64) -> Self {
        Self {
            points,
            period_s,
            frame_id: String::new(),
            timestamp_s: 0.0,
            has_doppler: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.points.iter().any(|p| p.normal.is_some())
    }

    /// Applies a rigid transform to positions (normals rotate, Doppler and
    /// metadata are untouched).
    pub fn transformed(&self, t: &RigidTransform) -> DopplerPointCloud {
        let points = self
            .points
            .iter()
            .map(|p| DopplerPoint {
                position: t.transform_point(&p.position),
                doppler: p.doppler,
                normal: p.normal.map(|n| t.rotate_vector(&n)),
            })
            .collect();
        DopplerPointCloud {
            points,
            period_s: self.period_s,
            frame_id: self.frame_id.clone(),
            timestamp_s: self.timestamp_s,
            has_doppler: self.has_doppler,
        }
    }
}

/// One matched pair: source index, target index, squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub squared_distance: f64,
}

/// Correspondence pairs in source order; each source index appears at most once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.pairs.iter()
    }
}

#[derive(Debug, Clone)]
struct KdNode {
    /// Splitting coordinate along `axis`; leaves store `axis = usize::MAX`.
    split: f64,
    axis: usize,
    left: usize,
    right: usize,
    /// Leaf payload: range into the `order` array.
    start: usize,
    end: usize,
}

const LEAF_SIZE: usize = 12;

/// Exact nearest-neighbor index over point positions.
///
/// Queries return the true Euclidean nearest neighbor; ties break toward the
/// lowest point index so results are reproducible across tree layouts.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    positions: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<KdNode>,
    root: usize,
}

/// Builds an index over all point positions of `cloud`.
pub fn build_index(cloud: &DopplerPointCloud) -> Result<SpatialIndex, CloudError> {
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let positions: Vec<Vec3> = cloud.points.iter().map(|p| p.position).collect();
    Ok(SpatialIndex::build(positions))
}

impl SpatialIndex {
    fn build(positions: Vec<Vec3>) -> SpatialIndex {
        let mut order: Vec<u32> = (0..positions.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = positions.len();
        let root = Self::build_node(&positions, &mut order, &mut nodes, 0, n);
        SpatialIndex {
            positions,
            order,
            nodes,
            root,
        }
    }

    fn build_node(
        positions: &[Vec3],
        order: &mut [u32],
        nodes: &mut Vec<KdNode>,
        start: usize,
        end: usize,
    ) -> usize {
        if end - start <= LEAF_SIZE {
            nodes.push(KdNode {
                split: 0.0,
                axis: usize::MAX,
                left: 0,
                right: 0,
                start,
                end,
            });
            return nodes.len() - 1;
        }

        // Split on the axis with the widest spread.
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &order[start..end] {
            let p = positions[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut axis = 0;
        for a in 1..3 {
            if hi[a] - lo[a] > hi[axis] - lo[axis] {
                axis = a;
            }
        }

        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let (pa, pb) = (positions[a as usize][axis], positions[b as usize][axis]);
            pa.partial_cmp(&pb).unwrap().then(a.cmp(&b))
        });
        let split = positions[order[mid] as usize][axis];

        let placeholder = nodes.len();
        nodes.push(KdNode {
            split,
            axis,
            left: 0,
            right: 0,
            start: 0,
            end: 0,
        });
        let left = Self::build_node(positions, order, nodes, start, mid);
        let right = Self::build_node(positions, order, nodes, mid, end);
        nodes[placeholder].left = left;
        nodes[placeholder].right = right;
        placeholder
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Exact nearest neighbor of `query`; returns `(point index, distance)`.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best_idx = u32::MAX;
        let mut best_d2 = f64::INFINITY;
        self.nearest_rec(self.root, query, &mut best_idx, &mut best_d2);
        (best_idx as usize, best_d2.sqrt())
    }

    fn nearest_rec(&self, node: usize, query: &Vec3, best_idx: &mut u32, best_d2: &mut f64) {
        let n = &self.nodes[node];
        if n.axis == usize::MAX {
            for &i in &self.order[n.start..n.end] {
                let d2 = (self.positions[i as usize] - query).norm_squared();
                if d2 < *best_d2 || (d2 == *best_d2 && i < *best_idx) {
                    *best_idx = i;
                    *best_d2 = d2;
                }
            }
            return;
        }
        let delta = query[n.axis] - n.split;
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.nearest_rec(near, query, best_idx, best_d2);
        if delta * delta <= *best_d2 {
            self.nearest_rec(far, query, best_idx, best_d2);
        }
    }

    /// The `k` nearest neighbors sorted by `(distance, index)`.
    /// Returns fewer entries when the index holds fewer than `k` points.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        // Worst candidate kept at the end; linear insertion is fine for
        // the small k used by normal estimation.
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root, query, k, &mut found);
        found
            .into_iter()
            .map(|(d2, idx)| (idx as usize, d2.sqrt()))
            .collect()
    }

    fn knn_rec(&self, node: usize, query: &Vec3, k: usize, found: &mut Vec<(f64, u32)>) {
        let n = &self.nodes[node];
        if n.axis == usize::MAX {
            for &i in &self.order[n.start..n.end] {
                let d2 = (self.positions[i as usize] - query).norm_squared();
                let entry = (d2, i);
                if found.len() < k {
                    let pos = found.partition_point(|e| *e < entry);
                    found.insert(pos, entry);
                } else if entry < *found.last().unwrap() {
                    let pos = found.partition_point(|e| *e < entry);
                    found.insert(pos, entry);
                    found.pop();
                }
            }
            return;
        }
        let delta = query[n.axis] - n.split;
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.knn_rec(near, query, k, found);
        let radius2 = if found.len() < k {
            f64::INFINITY
        } else {
            found.last().unwrap().0
        };
        if delta * delta <= radius2 {
            self.knn_rec(far, query, k, found);
        }
    }
}

/// Estimates a unit normal per point from the PCA of its `k` nearest
/// neighbors (the point itself included), oriented toward the sensor origin.
///
/// Neighborhoods whose covariance is rank deficient (collinear points) leave
/// the normal absent, which excludes the point from point-to-plane residuals.
pub fn estimate_normals(
    cloud: &DopplerPointCloud,
    k: usize,
) -> Result<DopplerPointCloud, CloudError> {
    if k < 3 || cloud.len() < k {
        return Err(CloudError::TooFewPoints {
            k,
            points: cloud.len(),
        });
    }
    let index = build_index(cloud)?;
    let mut out = cloud.clone();
    for (i, point) in cloud.points.iter().enumerate() {
        let mut neighbors = index.knn(&point.position, k);
        neighbors.retain(|&(_, d)| d <= NORMAL_RADIUS_CAP_M);
        if neighbors.len() < 3 {
            out.points[i].normal = None;
            continue;
        }
        let mut mean = Vec3::zeros();
        for &(j, _) in &neighbors {
            mean += cloud.points[j].position;
        }
        mean /= neighbors.len() as f64;
        let mut cov = Mat3::zeros();
        for &(j, _) in &neighbors {
            let d = cloud.points[j].position - mean;
            cov += d * d.transpose();
        }
        cov /= neighbors.len() as f64;

        let eigen = nalgebra::SymmetricEigen::new(cov);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| {
            eigen.eigenvalues[a]
                .partial_cmp(&eigen.eigenvalues[b])
                .unwrap()
        });
        let l0 = eigen.eigenvalues[idx[0]].max(0.0);
        let l1 = eigen.eigenvalues[idx[1]].max(0.0);
        let l2 = eigen.eigenvalues[idx[2]].max(0.0);
        // Collinear or quasi-collinear neighborhood: no reliable plane.
        if l2 <= 0.0 || l1 <= MIN_PLANE_ANISOTROPY * l2 {
            out.points[i].normal = None;
            continue;
        }
        // Non-planar neighborhood (surface seam or corner): a plane fit
        // would cross-talk between faces, so leave the normal absent.
        if l0 / (l0 + l1 + l2) > MAX_PLANE_CURVATURE {
            out.points[i].normal = None;
            continue;
        }
        let mut normal = eigen.eigenvectors.column(idx[0]).into_owned();
        let proj = normal.dot(&(-point.position));
        if proj < 0.0 {
            normal = -normal;
        } else if proj == 0.0 {
            // Grazing view: fix the sign deterministically.
            for a in 0..3 {
                if normal[a].abs() > 1e-12 {
                    if normal[a] < 0.0 {
                        normal = -normal;
                    }
                    break;
                }
            }
        }
        out.points[i].normal = Some(normal.normalize());
    }
    Ok(out)
}

/// Pairs every point of `transformed_source` with its nearest target point
/// when that neighbor lies strictly within `max_dist`; other points drop out.
pub fn match_correspondences(
    transformed_source: &DopplerPointCloud,
    index: &SpatialIndex,
    max_dist: f64,
) -> CorrespondenceSet {
    let mut pairs = Vec::new();
    for (i, point) in transformed_source.points.iter().enumerate() {
        let (target, dist) = index.nearest(&point.position);
        if dist < max_dist {
            pairs.push(Correspondence {
                source: i,
                target,
                squared_distance: dist * dist,
            });
        }
    }
    CorrespondenceSet { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud_from_positions(positions: Vec<Vec3>) -> DopplerPointCloud {
        let points = positions
            .into_iter()
            .map(|p| DopplerPoint::new(p, 0.0))
            .collect();
        DopplerPointCloud::new(points, 0.1)
    }

    fn random_cloud(n: usize, extent: f64, seed: u64) -> DopplerPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cloud_from_positions(
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                    )
                })
                .collect(),
        )
    }

    /// Exhaustive scan with the same tie-break as the index.
    fn brute_nearest(cloud: &DopplerPointCloud, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in cloud.points.iter().enumerate() {
            let d2 = (p.position - q).norm_squared();
            if d2 < best.1 || (d2 == best.1 && i < best.0) {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let cloud = cloud_from_positions(vec![]);
        assert!(matches!(build_index(&cloud), Err(CloudError::EmptyCloud)));
    }

    #[test]
    fn single_point_index_answers_that_point() {
        let cloud = cloud_from_positions(vec![Vec3::new(1.0, 2.0, 3.0)]);
        let index = build_index(&cloud).unwrap();
        let (i, d) = index.nearest(&Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(i, 0);
        assert!((d - 14.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn self_queries_return_distance_zero() {
        let cloud = random_cloud(1000, 50.0, 3);
        let index = build_index(&cloud).unwrap();
        for (i, p) in cloud.points.iter().enumerate() {
            let (j, d) = index.nearest(&p.position);
            assert_eq!(j, i);
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn nearest_matches_brute_force() {
        let cloud = random_cloud(700, 20.0, 11);
        let index = build_index(&cloud).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let q = Vec3::new(
                rng.random_range(-25.0..25.0),
                rng.random_range(-25.0..25.0),
                rng.random_range(-25.0..25.0),
            );
            assert_eq!(index.nearest(&q), brute_nearest(&cloud, &q));
        }
    }

    #[test]
    fn nearest_breaks_ties_by_lowest_index() {
        let cloud = cloud_from_positions(vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
        ]);
        let index = build_index(&cloud).unwrap();
        let (i, _) = index.nearest(&Vec3::zeros());
        assert_eq!(i, 0);
    }

    #[test]
    fn knn_matches_brute_force_ordering() {
        let cloud = random_cloud(300, 10.0, 17);
        let index = build_index(&cloud).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = Vec3::new(
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
            );
            let got = index.knn(&q, 8);
            let mut all: Vec<(f64, usize)> = cloud
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| ((p.position - q).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, &(d2, i)) in all.iter().take(8).enumerate() {
                assert_eq!(got[k].0, i);
                assert!((got[k].1 - d2.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normals_on_plane_below_sensor_point_up() {
        // Floor grid at z = -2 seen from a sensor at the origin.
        let mut positions = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                positions.push(Vec3::new(1.0 + 0.2 * i as f64, -2.0 + 0.2 * j as f64, -2.0));
            }
        }
        let cloud = cloud_from_positions(positions);
        let with_normals = estimate_normals(&cloud, 20).unwrap();
        for p in &with_normals.points {
            let n = p.normal.expect("planar neighborhood must yield a normal");
            assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-6, "normal {n:?}");
        }
    }

    #[test]
    fn normals_on_wall_face_the_origin() {
        let mut positions = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                positions.push(Vec3::new(
                    10.0,
                    -2.0 + 0.2 * i as f64,
                    -2.0 + 0.2 * j as f64,
                ));
            }
        }
        let cloud = cloud_from_positions(positions);
        let with_normals = estimate_normals(&cloud, 20).unwrap();
        for p in &with_normals.points {
            let n = p.normal.unwrap();
            assert!((n - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-6);
            assert!(n.dot(&p.position) <= 0.0);
        }
    }

    #[test]
    fn noisy_plane_normals_stay_within_five_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut positions = Vec::new();
        for _ in 0..400 {
            positions.push(Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                -2.0 + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal),
            ));
        }
        let cloud = cloud_from_positions(positions);
        let with_normals = estimate_normals(&cloud, 20).unwrap();
        let mut angle_sum = 0.0;
        let mut count = 0;
        for p in &with_normals.points {
            if let Some(n) = p.normal {
                angle_sum += n.dot(&Vec3::new(0.0, 0.0, 1.0)).clamp(-1.0, 1.0).acos();
                count += 1;
            }
        }
        let mean_deg = (angle_sum / count as f64).to_degrees();
        assert!(mean_deg < 5.0, "mean angular error {mean_deg:.2} deg");
    }

    #[test]
    fn collinear_neighborhood_yields_no_normal() {
        let positions: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect();
        let cloud = cloud_from_positions(positions);
        let with_normals = estimate_normals(&cloud, 5).unwrap();
        assert!(with_normals.points.iter().all(|p| p.normal.is_none()));
    }

    #[test]
    fn normal_estimation_rejects_small_k() {
        let cloud = random_cloud(10, 1.0, 1);
        assert!(matches!(
            estimate_normals(&cloud, 2),
            Err(CloudError::TooFewPoints { .. })
        ));
        assert!(matches!(
            estimate_normals(&cloud, 11),
            Err(CloudError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn matching_identical_clouds_is_the_identity_pairing() {
        let cloud = random_cloud(200, 10.0, 31);
        let index = build_index(&cloud).unwrap();
        let corrs = match_correspondences(&cloud, &index, 0.1);
        assert_eq!(corrs.len(), 200);
        for (i, c) in corrs.iter().enumerate() {
            assert_eq!(c.source, i);
            assert_eq!(c.target, i);
            assert_eq!(c.squared_distance, 0.0);
        }
    }

    #[test]
    fn matching_beyond_threshold_is_empty() {
        let target = cloud_from_positions(vec![Vec3::zeros(), Vec3::new(0.0, 3.0, 0.0)]);
        let index = build_index(&target).unwrap();
        let source = target.transformed(&RigidTransform::new(
            Mat3::identity(),
            Vec3::new(1.0, 0.0, 0.0),
        ));
        let corrs = match_correspondences(&source, &index, 0.5);
        assert!(corrs.is_empty());
    }

    #[test]
    fn matching_agrees_with_brute_force() {
        let target = random_cloud(300, 5.0, 41);
        let source = random_cloud(200, 5.0, 42);
        let index = build_index(&target).unwrap();
        let max_dist = 0.8;
        let corrs = match_correspondences(&source, &index, max_dist);
        let mut brute = Vec::new();
        for (i, p) in source.points.iter().enumerate() {
            let (j, d) = brute_nearest(&target, &p.position);
            if d < max_dist {
                brute.push((i, j, d * d));
            }
        }
        assert_eq!(corrs.len(), brute.len());
        for (c, &(i, j, d2)) in corrs.iter().zip(&brute) {
            assert_eq!((c.source, c.target), (i, j));
            assert!((c.squared_distance - d2).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prop_match_cardinality_monotone_in_max_dist(
            seed in 0u64..100,
            d1 in 0.01f64..2.0,
            d2 in 0.01f64..2.0,
        ) {
            let target = random_cloud(80, 4.0, seed);
            let source = random_cloud(60, 4.0, seed.wrapping_add(1));
            let index = build_index(&target).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a = match_correspondences(&source, &index, lo).len();
            let b = match_correspondences(&source, &index, hi).len();
            prop_assert!(a <= b);
        }

        #[test]
        fn prop_nearest_equals_brute_force(seed in 0u64..200) {
            let cloud = random_cloud(120, 8.0, seed);
            let index = build_index(&cloud).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let q = Vec3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            prop_assert_eq!(index.nearest(&q), brute_nearest(&cloud, &q));
        }
    }
}
