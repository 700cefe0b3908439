//! Per-class voxel DICE / Overlap / Overreach between a predicted and a
//! reference labeled tractogram.

use std::fmt::Write as _;

use anyhow::{anyhow, Result};
use tracto_core::metrics::{dice_overlap_overreach, voxelize, VoxelGrid};
use tracto_core::Tractogram;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub class: String,
    pub dice: f64,
    pub overlap: f64,
    pub overreach: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ClassRow>,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

impl Report {
    pub fn column(&self, f: impl Fn(&ClassRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn mean_dice(&self) -> f64 {
        mean_std(&self.column(|r| r.dice)).0
    }

    /// Tab-separated rows plus a `mean±std` footer.
    pub fn render(&self) -> String {
        let mut s = String::from("class\tdice\toverlap\toverreach\n");
        for r in &self.rows {
            writeln!(s, "{}\t{:.4}\t{:.4}\t{:.4}", r.class, r.dice, r.overlap, r.overreach).expect("string write");
        }
        let f = |v: Vec<f64>| {
            let (m, sd) = mean_std(&v);
            format!("{m:.4}±{sd:.4}")
        };
        writeln!(s, "mean±std\t{}\t{}\t{}", f(self.column(|r| r.dice)), f(self.column(|r| r.overlap)), f(self.column(|r| r.overreach)))
            .expect("string write");
        s
    }
}

/// One row per reference class that has streamlines, in reference order.
/// Classes are matched by name; a class missing from `pred` scores zero.
pub fn evaluate(pred: &Tractogram, reference: &Tractogram, voxel_size_mm: f64) -> Result<Report> {
    let rl = reference.labels.as_ref().ok_or_else(|| anyhow!("reference tractogram is not labeled"))?;
    let pl = pred.labels.as_ref().ok_or_else(|| anyhow!("predicted tractogram is not labeled"))?;
    let grid = VoxelGrid::covering(pred.streamlines.iter().chain(&reference.streamlines), voxel_size_mm, voxel_size_mm)?;
    let mut rows = Vec::new();
    for (c, name) in rl.class_names.iter().enumerate() {
        let r: Vec<_> = reference.indices_of_class(c).into_iter().map(|i| &reference.streamlines[i]).collect();
        if r.is_empty() {
            continue;
        }
        let p: Vec<_> = match pl.class_index(name) {
            Some(pc) => pred.indices_of_class(pc).into_iter().map(|i| &pred.streamlines[i]).collect(),
            None => Vec::new(),
        };
        let s = dice_overlap_overreach(&voxelize(p, grid)?, &voxelize(r, grid)?)?;
        rows.push(ClassRow { class: name.clone(), dice: s.dice, overlap: s.overlap, overreach: s.overreach });
    }
    Ok(Report { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tracto_core::{Labels, Streamline};

    fn line(y: f64) -> Streamline {
        Streamline::new(vec![[0.0, y, 0.0], [10.0, y, 0.0]]).unwrap()
    }

    fn tracto(ys: &[f64], labels: &[usize]) -> Tractogram {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        Tractogram::with_labels(ys.iter().map(|&y| line(y)).collect(), Labels::new(names, labels.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn identical_is_perfect() {
        let t = tracto(&[0.0, 5.0, 10.0], &[0, 1, 2]);
        let r = evaluate(&t, &t, 1.0).unwrap();
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            assert_eq!((row.dice, row.overlap, row.overreach), (1.0, 1.0, 0.0));
        }
        assert!(r.render().starts_with("class\tdice\toverlap\toverreach\n"));
        assert!(r.render().contains("mean±std\t1.0000±0.0000\t1.0000±0.0000\t0.0000±0.0000"));
    }

    #[test]
    fn swapped_class_scores_zero() {
        let reference = tracto(&[0.0, 5.0, 10.0], &[0, 1, 2]);
        let pred = tracto(&[0.0, 5.0, 10.0], &[0, 2, 2]);
        let r = evaluate(&pred, &reference, 1.0).unwrap();
        // a perfect; b empty prediction; c predicted twice as large
        assert_eq!(r.rows[1].dice, 0.0);
        assert_eq!(r.rows[2].overlap, 1.0);
        assert!((r.rows[2].overreach - 1.0).abs() < 1e-12);
        assert!((r.rows[2].dice - 2.0 / 3.0).abs() < 1e-12);
        let (m, sd) = mean_std(&r.column(|x| x.dice));
        let want = (1.0 + 0.0 + 2.0 / 3.0) / 3.0;
        assert!((m - want).abs() < 1e-12);
        let var = ((1.0 - want).powi(2) + want.powi(2) + (2.0 / 3.0 - want).powi(2)) / 3.0;
        assert!((sd - var.sqrt()).abs() < 1e-12);
    }
}
