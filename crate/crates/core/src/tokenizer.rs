//! FPS-kNN patching and Morton sequencing of a point cloud.

use crate::error::{Error, Result};
use crate::representation::Representation;
use crate::streamline::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub n_patches: usize,
    pub patch_size: usize,
}

impl PatchConfig {
    pub fn for_representation(kind: Representation) -> Self {
        let patch_size = match kind {
            Representation::Streamline => 8,
            Representation::Cluster | Representation::Fusion => 32,
        };
        Self { n_patches: 64, patch_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patches == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument("patch count and size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSample {
    /// Patch centers after min-max normalization into the unit cube, in FPS
    /// pick order.
    pub centers: Vec<Point>,
    /// `patches[p]` holds `patch_size` points relative to center `p`
    /// (world millimetres).
    pub patches: Vec<Vec<Point>>,
    /// Morton sequence: `order[i]` is the FPS index of the i-th token.
    pub order: Vec<usize>,
    pub morton_codes: Vec<u32>,
}

impl TokenizedSample {
    /// Centers in sequence order.
    pub fn sequence_centers(&self) -> Vec<Point> {
        self.order.iter().map(|&i| self.centers[i]).collect()
    }

    /// Patches in sequence order.
    pub fn sequence_patches(&self) -> Vec<&[Point]> {
        self.order.iter().map(|&i| self.patches[i].as_slice()).collect()
    }
}

#[inline]
fn sq_dist(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Max-min farthest point sampling seeded at index 0; ties go to the lowest
/// index.
pub fn farthest_point_sample(points: &[Point], n: usize) -> Result<Vec<usize>> {
    if points.len() < n {
        return Err(Error::InvalidArgument(format!("FPS needs {n} points, cloud has {}", points.len())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut picks = Vec::with_capacity(n);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut picked = vec![false; points.len()];
    let mut current = 0;
    for _ in 0..n {
        picks.push(current);
        picked[current] = true;
        let c = points[current];
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if !picked[i] && nearest[i] > best_d {
                best_d = nearest[i];
                best = Some(i);
            }
        }
        match best {
            Some(b) => current = b,
            None => break,
        }
    }
    Ok(picks)
}

/// For each center, the `k` nearest points (the center itself first when it
/// has no coincident lower-index twin), relative to the center.
pub fn knn_patches(points: &[Point], centers: &[usize], k: usize) -> Result<Vec<Vec<Point>>> {
    if points.len() < k {
        return Err(Error::InvalidArgument(format!("kNN needs {k} points, cloud has {}", points.len())));
    }
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    Ok(centers
        .iter()
        .map(|&ci| {
            let c = points[ci];
            scratch.clear();
            scratch.extend(points.iter().enumerate().map(|(i, p)| (sq_dist(p, &c), i)));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < scratch.len() {
                scratch.select_nth_unstable_by(k - 1, cmp);
            }
            let near = &mut scratch[..k];
            near.sort_unstable_by(cmp);
            near.iter()
                .map(|&(_, i)| {
                    let p = points[i];
                    [p[0] - c[0], p[1] - c[1], p[2] - c[2]]
                })
                .collect()
        })
        .collect())
}

/// Isotropic min-max normalization: subtract the per-axis minimum and divide
/// by the largest extent, mapping the cloud into the unit cube.
pub fn unit_cube_transform(points: &[Point]) -> (Point, f64) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    (lo, if extent > 0.0 { extent } else { 1.0 })
}

pub const MORTON_BITS: u32 = 10;
const MORTON_MAX: f64 = ((1u32 << MORTON_BITS) - 1) as f64;

/// Spreads the low 10 bits of `v` to every third bit.
#[inline]
fn spread3(v: u32) -> u32 {
    let mut x = v & 0x3ff;
    x = (x | (x << 16)) & 0x030000ff;
    x = (x | (x << 8)) & 0x0300f00f;
    x = (x | (x << 4)) & 0x030c30c3;
    x = (x | (x << 2)) & 0x09249249;
    x
}

pub fn morton_code(c: &Point) -> Result<u32> {
    let mut q = [0u32; 3];
    for k in 0..3 {
        if !(0.0..=1.0).contains(&c[k]) {
            return Err(Error::InvalidArgument(format!("center coordinate {} outside [0, 1]", c[k])));
        }
        q[k] = (c[k] * MORTON_MAX).floor() as u32;
    }
    Ok(spread3(q[0]) | (spread3(q[1]) << 1) | (spread3(q[2]) << 2))
}

/// Morton codes plus the stable ascending permutation.
pub fn morton_order(centers: &[Point]) -> Result<(Vec<u32>, Vec<usize>)> {
    let codes = centers.iter().map(morton_code).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by_key(|&i| (codes[i], i));
    Ok((codes, order))
}

pub fn tokenize(points: &[Point], cfg: PatchConfig) -> Result<TokenizedSample> {
    cfg.validate()?;
    let picks = farthest_point_sample(points, cfg.n_patches)?;
    let patches = knn_patches(points, &picks, cfg.patch_size)?;
    let (lo, scale) = unit_cube_transform(points);
    let centers: Vec<Point> = picks
        .iter()
        .map(|&i| {
            let p = points[i];
            [
                ((p[0] - lo[0]) / scale).clamp(0.0, 1.0),
                ((p[1] - lo[1]) / scale).clamp(0.0, 1.0),
                ((p[2] - lo[2]) / scale).clamp(0.0, 1.0),
            ]
        })
        .collect();
    let (morton_codes, order) = morton_order(&centers)?;
    Ok(TokenizedSample { centers, patches, order, morton_codes })
}
