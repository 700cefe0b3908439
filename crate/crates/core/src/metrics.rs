//! Streamline voxelization and voxel-level DICE / Overlap / Overreach.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::streamline::{Point, Streamline};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    pub origin: Point,
}

impl VoxelGrid {
    /// Smallest grid with `margin_mm` padding that covers every point.
    pub fn covering<'a>(streamlines: impl IntoIterator<Item = &'a Streamline>, voxel_size_mm: f64, margin_mm: f64) -> Result<Self> {
        if !(voxel_size_mm > 0.0) {
            return Err(Error::InvalidArgument("voxel size must be positive".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in streamlines {
            for p in s.points() {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        if !lo[0].is_finite() {
            return Err(Error::EmptyTractogram);
        }
        let origin = [lo[0] - margin_mm, lo[1] - margin_mm, lo[2] - margin_mm];
        let dims = [0, 1, 2].map(|k| ((hi[k] + margin_mm - origin[k]) / voxel_size_mm).floor() as usize + 1);
        Ok(Self { dims, voxel_size_mm, origin })
    }

    pub fn voxel_of(&self, p: &Point) -> Result<usize> {
        let mut ijk = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.voxel_size_mm).floor();
            if !(f >= 0.0 && f < self.dims[k] as f64) {
                return Err(Error::OutsideGrid(p[0], p[1], p[2]));
            }
            ijk[k] = f as usize;
        }
        Ok((ijk[2] * self.dims[1] + ijk[1]) * self.dims[0] + ijk[0])
    }

    pub fn ijk(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let j = (linear / self.dims[0]) % self.dims[1];
        let k = linear / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub grid: VoxelGrid,
    pub occupied: BTreeSet<usize>,
}

impl VoxelMask {
    pub fn empty(grid: VoxelGrid) -> Self {
        Self { grid, occupied: BTreeSet::new() }
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn union(&self, other: &VoxelMask) -> Result<VoxelMask> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(VoxelMask { grid: self.grid, occupied: self.occupied.union(&other.occupied).copied().collect() })
    }
}

/// Marks every voxel visited by the streamlines, stepping each segment at
/// no more than half a voxel.
pub fn voxelize<'a>(streamlines: impl IntoIterator<Item = &'a Streamline>, grid: VoxelGrid) -> Result<VoxelMask> {
    let mut mask = VoxelMask::empty(grid);
    let max_step = grid.voxel_size_mm / 2.0;
    for s in streamlines {
        let pts = s.points();
        mask.occupied.insert(grid.voxel_of(&pts[0])?);
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = crate::streamline::dist(&a, &b);
            let steps = (len / max_step).ceil().max(1.0) as usize;
            for i in 1..=steps {
                let t = i as f64 / steps as f64;
                let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])];
                mask.occupied.insert(grid.voxel_of(&p)?);
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    pub dice: f64,
    pub overlap: f64,
    pub overreach: f64,
}

/// dice = 2|P∩G|/(|P|+|G|), overlap = |P∩G|/|G|, overreach = |P∖G|/|G|.
pub fn dice_overlap_overreach(pred: &VoxelMask, reference: &VoxelMask) -> Result<SegScores> {
    if pred.grid != reference.grid {
        return Err(Error::GridMismatch);
    }
    let g = reference.len();
    if g == 0 {
        return if pred.is_empty() {
            Ok(SegScores { dice: 1.0, overlap: 1.0, overreach: 0.0 })
        } else {
            Err(Error::UndefinedReference)
        };
    }
    let p = pred.len();
    let inter = pred.occupied.intersection(&reference.occupied).count();
    Ok(SegScores {
        dice: 2.0 * inter as f64 / (p + g) as f64,
        overlap: inter as f64 / g as f64,
        overreach: (p - inter) as f64 / g as f64,
    })
}
