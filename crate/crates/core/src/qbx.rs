//! QuickBundlesX hierarchical clustering and move-up cluster sampling.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::streamline::{direct_flip_sums, resample, Point, Tractogram};

pub const DEFAULT_THRESHOLDS: [f64; 7] = [40.0, 30.0, 20.0, 10.0, 8.0, 6.0, 4.0];
pub const DEFAULT_RESAMPLE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    /// Running mean of flip-aligned, resampled members.
    pub centroid: Vec<Point>,
    pub members: Vec<usize>,
    /// Index into the next coarser level; `None` on the coarsest level.
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl ClusterNode {
    fn founded_by(s: &[Point], idx: usize, parent: Option<usize>) -> Self {
        Self { centroid: s.to_vec(), members: vec![idx], parent, children: Vec::new() }
    }

    fn absorb(&mut self, s: &[Point], idx: usize, flip: bool) {
        let n = self.members.len() as f64;
        let len = s.len();
        for (i, c) in self.centroid.iter_mut().enumerate() {
            let p = if flip { &s[len - 1 - i] } else { &s[i] };
            for k in 0..3 {
                c[k] = (c[k] * n + p[k]) / (n + 1.0);
            }
        }
        self.members.push(idx);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub levels: Vec<f64>,
    /// `nodes[level]` holds that level's clusters, in creation order.
    pub nodes: Vec<Vec<ClusterNode>>,
    pub n_resample: usize,
}

impl ClusterTree {
    pub fn level_of(&self, radius: f64) -> Option<usize> {
        self.levels.iter().position(|&r| r == radius)
    }

    pub fn n_streamlines(&self) -> usize {
        self.nodes.first().map_or(0, |l| l.iter().map(|c| c.members.len()).sum())
    }
}

/// Builds the cluster hierarchy in a single pass over `t`. At every level a
/// streamline joins the first cluster (in creation order, among the children
/// of the cluster it joined one level up) whose centroid lies within that
/// level's MDF threshold, or founds a new one.
pub fn quickbundlesx(t: &Tractogram, thresholds: &[f64], n_resample: usize) -> Result<ClusterTree> {
    if t.is_empty() {
        return Err(Error::EmptyTractogram);
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must be nonempty and strictly decreasing, got {thresholds:?}"
        )));
    }
    if n_resample < 2 {
        return Err(Error::InvalidArgument("n_resample must be >= 2".into()));
    }
    let mut nodes: Vec<Vec<ClusterNode>> = vec![Vec::new(); thresholds.len()];
    let mut roots: Vec<usize> = Vec::new();
    let inv_n = 1.0 / n_resample as f64;

    for (idx, s) in t.streamlines.iter().enumerate() {
        let r = resample(s, n_resample)?;
        let pts = r.points();
        let mut parent: Option<usize> = None;
        for (level, &thr) in thresholds.iter().enumerate() {
            let candidates: &[usize] = match parent {
                None => &roots,
                Some(p) => &nodes[level - 1][p].children,
            };
            let mut chosen = None;
            for &c in candidates {
                let (direct, flipped) = direct_flip_sums(pts, &nodes[level][c].centroid);
                let d = direct.min(flipped) * inv_n;
                if d <= thr {
                    chosen = Some((c, flipped < direct));
                    break;
                }
            }
            let here = match chosen {
                Some((c, flip)) => {
                    nodes[level][c].absorb(pts, idx, flip);
                    c
                }
                None => {
                    let c = nodes[level].len();
                    nodes[level].push(ClusterNode::founded_by(pts, idx, parent));
                    match parent {
                        None => roots.push(c),
                        Some(p) => nodes[level - 1][p].children.push(c),
                    }
                    c
                }
            };
            parent = Some(here);
        }
    }
    Ok(ClusterTree { levels: thresholds.to_vec(), nodes, n_resample })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledCluster {
    pub member_indices: Vec<usize>,
    pub level_radius_mm: f64,
    /// (level index, node index) inside the tree it came from.
    pub node: (usize, usize),
    pub class_label: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct MoveUpOptions {
    pub min_members: usize,
    /// Discard clusters whose members do not all share one label.
    pub require_pure: bool,
}

impl Default for MoveUpOptions {
    fn default() -> Self {
        Self { min_members: 10, require_pure: true }
    }
}

/// Walks every 4 mm cluster up through its 6 mm and 8 mm ancestors and keeps
/// the first one holding at least `min_members` streamlines. Ancestors
/// reached from several 4 mm children are emitted once.
pub fn sample_clusters_move_up(
    tree: &ClusterTree,
    opts: MoveUpOptions,
    labels: Option<&[usize]>,
) -> Result<Vec<SampledCluster>> {
    if opts.min_members == 0 {
        return Err(Error::InvalidArgument("min_members must be >= 1".into()));
    }
    let fine = tree.level_of(4.0).ok_or(Error::MissingLevel(4.0))?;
    let mid = tree.level_of(6.0).ok_or(Error::MissingLevel(6.0))?;
    let coarse = tree.level_of(8.0).ok_or(Error::MissingLevel(8.0))?;
    if !(mid + 1 == fine && coarse + 1 == mid) {
        return Err(Error::InvalidArgument("4, 6 and 8 mm must be the three finest consecutive levels".into()));
    }
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut out = Vec::new();
    for (i, node) in tree.nodes[fine].iter().enumerate() {
        let mut at = (fine, i);
        let mut n = node;
        let accepted = loop {
            if n.members.len() >= opts.min_members {
                break Some(at);
            }
            if at.0 == coarse {
                break None;
            }
            let p = n.parent.expect("levels below the coarsest have parents");
            at = (at.0 - 1, p);
            n = &tree.nodes[at.0][p];
        };
        let Some(at) = accepted else { continue };
        if !seen.insert(at) {
            continue;
        }
        let members = tree.nodes[at.0][at.1].members.clone();
        let class_label = match labels {
            Some(l) => {
                let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
                for &m in &members {
                    *counts.entry(l[m]).or_default() += 1;
                }
                // majority, ties to the lowest class index
                let (&best, &count) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap();
                if opts.require_pure && count < members.len() {
                    continue;
                }
                Some(best)
            }
            None => None,
        };
        out.push(SampledCluster {
            member_indices: members,
            level_radius_mm: tree.levels[at.0],
            node: at,
            class_label,
        });
    }
    Ok(out)
}
