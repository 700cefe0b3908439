//! The three point-cloud views of a tractogram: a single interpolated
//! streamline, a pooled cluster, and a streamline fused with its cluster
//! neighbours.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::qbx::SampledCluster;
use crate::streamline::{resample, Point, Streamline, Tractogram};

pub const STREAMLINE_POINTS: usize = 256;
pub const CLOUD_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Representation {
    Streamline,
    Cluster,
    Fusion,
}

impl Representation {
    pub fn n_points(self) -> usize {
        match self {
            Representation::Streamline => STREAMLINE_POINTS,
            Representation::Cluster | Representation::Fusion => CLOUD_POINTS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Streamline => "streamline",
            Representation::Cluster => "cluster",
            Representation::Fusion => "fusion",
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "streamline" => Ok(Representation::Streamline),
            "cluster" => Ok(Representation::Cluster),
            "fusion" => Ok(Representation::Fusion),
            other => Err(Error::InvalidArgument(format!("unknown representation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    Streamline(usize),
    Cluster { members: Vec<usize>, level_radius_mm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSample {
    pub points: Vec<Point>,
    pub kind: Representation,
    pub label: Option<usize>,
    pub source: SampleSource,
}

pub fn build_streamline_sample(s: &Streamline, label: Option<usize>, index: usize) -> Result<PointCloudSample> {
    Ok(PointCloudSample {
        points: resample(s, STREAMLINE_POINTS)?.into_points(),
        kind: Representation::Streamline,
        label,
        source: SampleSource::Streamline(index),
    })
}

/// Draws `n` indices from `0..pool`, without replacement when the pool is
/// large enough.
pub fn draw_indices<R: Rng>(rng: &mut R, pool: usize, n: usize) -> Vec<usize> {
    if pool >= n {
        index::sample(rng, pool, n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..pool)).collect()
    }
}

/// Pools the raw points of every member streamline and draws 1024 of them.
pub fn build_cluster_sample<R: Rng>(c: &SampledCluster, t: &Tractogram, rng: &mut R) -> Result<PointCloudSample> {
    if c.member_indices.is_empty() {
        return Err(Error::InvalidArgument("cluster has no members".into()));
    }
    let mut pool: Vec<Point> = Vec::new();
    for &m in &c.member_indices {
        let s = t
            .streamlines
            .get(m)
            .ok_or_else(|| Error::InvalidArgument(format!("cluster member {m} not in tractogram")))?;
        pool.extend_from_slice(s.points());
    }
    let picks = draw_indices(rng, pool.len(), CLOUD_POINTS);
    Ok(PointCloudSample {
        points: picks.into_iter().map(|i| pool[i]).collect(),
        kind: Representation::Cluster,
        label: c.class_label,
        source: SampleSource::Cluster { members: c.member_indices.clone(), level_radius_mm: c.level_radius_mm },
    })
}

/// 256 interpolated points of `s` followed by 768 raw points drawn from its
/// neighbours. With no neighbours the tail is drawn from `s` itself.
pub fn build_fusion_sample<R: Rng>(
    s: &Streamline,
    neighbors: &[&Streamline],
    label: Option<usize>,
    index: usize,
    rng: &mut R,
) -> Result<PointCloudSample> {
    let head = resample(s, STREAMLINE_POINTS)?.into_points();
    let tail_n = CLOUD_POINTS - STREAMLINE_POINTS;
    let pool: Vec<Point> = neighbors.iter().flat_map(|n| n.points().iter().copied()).collect();
    let mut points = head.clone();
    if pool.is_empty() {
        points.extend((0..tail_n).map(|_| head[rng.gen_range(0..head.len())]));
    } else {
        points.extend(draw_indices(rng, pool.len(), tail_n).into_iter().map(|i| pool[i]));
    }
    Ok(PointCloudSample { points, kind: Representation::Fusion, label, source: SampleSource::Streamline(index) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn line(y: f64, n: usize) -> Streamline {
        Streamline::new((0..n).map(|i| [i as f64, y, 0.5 * i as f64]).collect()).unwrap()
    }

    fn cluster(members: Vec<usize>) -> SampledCluster {
        SampledCluster { member_indices: members, level_radius_mm: 4.0, node: (6, 0), class_label: Some(2) }
    }

    #[test]
    fn streamline_sample_shape_and_label() {
        let s = Streamline::new(vec![[0.0; 3], [10.0, 0.0, 0.0]]).unwrap();
        let p = build_streamline_sample(&s, Some(3), 7).unwrap();
        assert_eq!(p.points.len(), 256);
        assert_eq!(p.label, Some(3));
        assert_eq!(p.points[1][0], 10.0 / 255.0);
    }

    #[test]
    fn cluster_sample_without_replacement() {
        let t = Tractogram::new((0..10).map(|i| line(i as f64, 200)).collect());
        let c = cluster((0..10).collect());
        let p = build_cluster_sample(&c, &t, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.points.len(), 1024);
        let distinct: HashSet<[u64; 3]> = p.points.iter().map(|q| q.map(f64::to_bits)).collect();
        assert_eq!(distinct.len(), 1024);
        let pool: HashSet<[u64; 3]> = t.streamlines.iter().flat_map(|s| s.points().iter().map(|q| q.map(f64::to_bits))).collect();
        assert!(distinct.is_subset(&pool));
        assert_eq!(p.label, Some(2));
    }

    #[test]
    fn small_pool_samples_with_replacement() {
        let t = Tractogram::new((0..9).map(|i| line(i as f64, 100)).collect());
        let p = build_cluster_sample(&cluster((0..9).collect()), &t, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.points.len(), 1024);
    }

    #[test]
    fn cluster_sample_is_seeded() {
        let t = Tractogram::new((0..10).map(|i| line(i as f64, 200)).collect());
        let c = cluster((0..10).collect());
        let a = build_cluster_sample(&c, &t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = build_cluster_sample(&c, &t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(build_cluster_sample(&cluster(vec![]), &t, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    #[test]
    fn fusion_head_is_the_interpolated_streamline() {
        let s = line(0.0, 50);
        let ns: Vec<Streamline> = (1..10).map(|i| line(i as f64, 100)).collect();
        let refs: Vec<&Streamline> = ns.iter().collect();
        let p = build_fusion_sample(&s, &refs, None, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(p.points.len(), 1024);
        assert_eq!(&p.points[..256], resample(&s, 256).unwrap().points());
        assert!(p.points[256..].iter().all(|q| q[1] >= 1.0));
    }

    #[test]
    fn fusion_without_neighbors_stays_on_streamline() {
        let s = line(3.0, 20);
        let p = build_fusion_sample(&s, &[], None, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(p.points.len(), 1024);
        let head: HashSet<[u64; 3]> = p.points[..256].iter().map(|q| q.map(f64::to_bits)).collect();
        assert!(p.points.iter().all(|q| head.contains(&q.map(f64::to_bits))));
    }
}
