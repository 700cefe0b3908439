//! Streamlines, tractograms and the two geometric kernels everything else
//! leans on: arc-length resampling and the mean direct-flip distance.

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// An ordered polyline in world millimetres. Always has at least two finite
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    points: Vec<Point>,
}

impl Streamline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints(points.len()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(&w[0], &w[1])).sum()
    }
}

/// Per-streamline class assignment. Labels are stored as indices into
/// `class_names`, so every label is a declared class by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub class_names: Vec<String>,
    pub indices: Vec<usize>,
}

impl Labels {
    pub fn new(class_names: Vec<String>, indices: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for name in &class_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateClass(name.clone()));
            }
        }
        if let Some((line, &bad)) = indices.iter().enumerate().find(|(_, &c)| c >= class_names.len()) {
            return Err(Error::Label(format!(
                "label {line} refers to class index {bad}, only {} classes declared",
                class_names.len()
            )));
        }
        Ok(Self { class_names, indices })
    }

    /// Builds labels from identifiers, declaring classes in first-seen order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut class_names: Vec<String> = Vec::new();
        let indices = names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                match class_names.iter().position(|c| c == n) {
                    Some(i) => i,
                    None => {
                        class_names.push(n.to_string());
                        class_names.len() - 1
                    }
                }
            })
            .collect();
        Self { class_names, indices }
    }

    pub fn name(&self, i: usize) -> &str {
        &self.class_names[self.indices[i]]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tractogram {
    pub streamlines: Vec<Streamline>,
    pub labels: Option<Labels>,
}

impl Tractogram {
    pub fn new(streamlines: Vec<Streamline>) -> Self {
        Self { streamlines, labels: None }
    }

    pub fn with_labels(streamlines: Vec<Streamline>, labels: Labels) -> Result<Self> {
        if labels.indices.len() != streamlines.len() {
            return Err(Error::Label(format!(
                "{} labels for {} streamlines",
                labels.indices.len(),
                streamlines.len()
            )));
        }
        Ok(Self { streamlines, labels: Some(labels) })
    }

    pub fn len(&self) -> usize {
        self.streamlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streamlines.is_empty()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.labels.as_ref().map(|l| l.class_names.as_slice())
    }

    /// Streamline indices carrying the given class.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..self.len()).filter(|&i| l.indices[i] == class).collect(),
            None => Vec::new(),
        }
    }

    /// Returns the sub-tractogram of the given indices, labels carried along.
    pub fn subset(&self, indices: &[usize]) -> Tractogram {
        let streamlines = indices.iter().map(|&i| self.streamlines[i].clone()).collect();
        let labels = self.labels.as_ref().map(|l| Labels {
            class_names: l.class_names.clone(),
            indices: indices.iter().map(|&i| l.indices[i]).collect(),
        });
        Tractogram { streamlines, labels }
    }

    /// Appends another tractogram, merging class declarations by name.
    pub fn extend(&mut self, other: Tractogram) -> Result<()> {
        match (&mut self.labels, other.labels) {
            (None, None) => {}
            (Some(mine), Some(theirs)) => {
                for idx in theirs.indices {
                    let name = &theirs.class_names[idx];
                    let i = match mine.class_index(name) {
                        Some(i) => i,
                        None => {
                            mine.class_names.push(name.clone());
                            mine.class_names.len() - 1
                        }
                    };
                    mine.indices.push(i);
                }
            }
            (None, Some(theirs)) if self.streamlines.is_empty() => self.labels = Some(theirs),
            _ => return Err(Error::Label("cannot merge labeled and unlabeled tractograms".into())),
        }
        self.streamlines.extend(other.streamlines);
        Ok(())
    }
}

/// Resamples `s` to `m` points spaced uniformly in normalized cumulative
/// chord length, interpolating each coordinate with a natural cubic spline.
/// Inputs with fewer than four distinct points use piecewise-linear
/// interpolation. Endpoints are copied exactly.
pub fn resample(s: &Streamline, m: usize) -> Result<Streamline> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("resample needs m >= 2, got {m}")));
    }
    // Repeated consecutive points would give zero-width spline intervals.
    let mut pts: Vec<Point> = Vec::with_capacity(s.len());
    for p in s.points() {
        if pts.last() != Some(p) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(Error::ZeroArcLength);
    }
    let mut knots = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    knots.push(0.0);
    for w in pts.windows(2) {
        acc += dist(&w[0], &w[1]);
        knots.push(acc);
    }
    let total = acc;
    for k in knots.iter_mut() {
        *k /= total;
    }
    let last = knots.len() - 1;
    knots[last] = 1.0;

    let first = pts[0];
    let end = pts[last];
    let mut out = Vec::with_capacity(m);
    if pts.len() < 4 {
        let mut seg = 0;
        for i in 0..m {
            let t = i as f64 / (m - 1) as f64;
            while seg + 1 < last && knots[seg + 1] < t {
                seg += 1;
            }
            let (t0, t1) = (knots[seg], knots[seg + 1]);
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            let (a, b) = (&pts[seg], &pts[seg + 1]);
            out.push([
                a[0] + w * (b[0] - a[0]),
                a[1] + w * (b[1] - a[1]),
                a[2] + w * (b[2] - a[2]),
            ]);
        }
    } else {
        let splines: Vec<NaturalSpline> = (0..3)
            .map(|axis| NaturalSpline::new(&knots, &pts.iter().map(|p| p[axis]).collect::<Vec<_>>()))
            .collect();
        let mut seg = 0;
        for i in 0..m {
            let t = i as f64 / (m - 1) as f64;
            while seg + 1 < last && knots[seg + 1] < t {
                seg += 1;
            }
            out.push([
                splines[0].eval(seg, t),
                splines[1].eval(seg, t),
                splines[2].eval(seg, t),
            ]);
        }
    }
    out[0] = first;
    out[m - 1] = end;
    Streamline::new(out)
}

/// One coordinate of a natural cubic spline through `(x[i], y[i])`.
struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// second derivatives at the knots; zero at both ends
    m: Vec<f64>,
}

impl NaturalSpline {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        // Thomas algorithm on the interior second derivatives.
        let inner = n - 2;
        let mut diag = vec![0.0; inner];
        let mut upper = vec![0.0; inner];
        let mut rhs = vec![0.0; inner];
        for j in 0..inner {
            let i = j + 1;
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            diag[j] = 2.0 * (h0 + h1);
            upper[j] = h1;
            rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        for j in 1..inner {
            let lower = x[j + 1] - x[j];
            let w = lower / diag[j - 1];
            diag[j] -= w * upper[j - 1];
            rhs[j] -= w * rhs[j - 1];
        }
        for j in (0..inner).rev() {
            let next = if j + 1 < inner { m[j + 2] } else { 0.0 };
            m[j + 1] = (rhs[j] - upper[j] * next) / diag[j];
        }
        Self { x: x.to_vec(), y: y.to_vec(), m }
    }

    fn eval(&self, seg: usize, t: f64) -> f64 {
        let (x0, x1) = (self.x[seg], self.x[seg + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * self.y[seg]
            + b * self.y[seg + 1]
            + ((a * a * a - a) * self.m[seg] + (b * b * b - b) * self.m[seg + 1]) * h * h / 6.0
    }
}

/// Mean direct-flip distance between two streamlines of equal point count.
pub fn mdf(s: &Streamline, t: &Streamline) -> Result<f64> {
    mdf_points(s.points(), t.points())
}

pub fn mdf_points(s: &[Point], t: &[Point]) -> Result<f64> {
    if s.len() != t.len() {
        return Err(Error::PointCountMismatch(s.len(), t.len()));
    }
    let (direct, flipped) = direct_flip_sums(s, t);
    let n = s.len() as f64;
    Ok((direct / n).min(flipped / n))
}

/// Unnormalized direct and flipped distance sums.
///
/// Terms `i` and `n-1-i` are added pairwise before accumulating, so swapping
/// the arguments or reversing either one reorders nothing and the result is
/// bitwise symmetric and flip invariant.
pub(crate) fn direct_flip_sums(s: &[Point], t: &[Point]) -> (f64, f64) {
    let n = s.len();
    let mut direct = 0.0;
    let mut flipped = 0.0;
    for i in 0..n / 2 {
        let j = n - 1 - i;
        direct += dist(&s[i], &t[i]) + dist(&s[j], &t[j]);
        flipped += dist(&s[i], &t[j]) + dist(&s[j], &t[i]);
    }
    if n % 2 == 1 {
        let m = n / 2;
        let d = dist(&s[m], &t[m]);
        direct += d;
        flipped += d;
    }
    (direct, flipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[Point]) -> Streamline {
        Streamline::new(points.to_vec()).unwrap()
    }

    #[test]
    fn rejects_invalid_streamlines() {
        assert!(matches!(Streamline::new(vec![[0.0; 3]]), Err(Error::TooFewPoints(1))));
        assert!(matches!(
            Streamline::new(vec![[0.0; 3], [f64::NAN, 0.0, 0.0]]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn two_point_line_resamples_linearly() {
        let s = line(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let r = resample(&s, 256).unwrap();
        assert_eq!(r.len(), 256);
        for (i, p) in r.points().iter().enumerate() {
            assert!((p[0] - 10.0 * i as f64 / 255.0).abs() < 1e-12);
            assert_eq!(p[1], 0.0);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn uniform_linear_input_is_unchanged() {
        let pts: Vec<Point> = (0..20).map(|i| [i as f64 * 0.5, i as f64 * 0.25, -(i as f64)]).collect();
        let s = line(&pts);
        let r = resample(&s, 20).unwrap();
        for (a, b) in r.points().iter().zip(&pts) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn quarter_circle_stays_on_circle() {
        let pts: Vec<Point> = (0..50)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / 49.0;
                [10.0 * a.cos(), 10.0 * a.sin(), 0.0]
            })
            .collect();
        let r = resample(&line(&pts), 256).unwrap();
        for p in r.points() {
            let radius = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((radius - 10.0).abs() < 0.05, "radius {radius}");
            assert!(p[0] >= -1e-9 && p[1] >= -1e-9);
        }
    }

    #[test]
    fn degenerate_streamline_errors() {
        let s = line(&[[1.0, 2.0, 3.0]; 5]);
        assert!(matches!(resample(&s, 10), Err(Error::ZeroArcLength)));
    }

    #[test]
    fn repeated_points_are_tolerated() {
        let s = line(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [2.0, 1.0, 0.0], [3.0, 3.0, 1.0]]);
        let r = resample(&s, 33).unwrap();
        assert!(r.points().iter().all(|p| p.iter().all(|c| c.is_finite())));
    }

    #[test]
    fn mdf_examples() {
        let s = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let t = line(&[[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        assert_eq!(mdf(&s, &t).unwrap(), 1.0);
        assert_eq!(mdf(&s, &s).unwrap(), 0.0);
        assert_eq!(mdf(&s, &s.reversed()).unwrap(), 0.0);
        let u = line(&[[0.0; 3], [1.0; 3], [2.0; 3]]);
        assert!(matches!(mdf(&s, &u), Err(Error::PointCountMismatch(2, 3))));
    }

    fn streamline_strategy(n: usize) -> impl Strategy<Value = Streamline> {
        proptest::collection::vec(proptest::array::uniform3(-50.0f64..50.0), n)
            .prop_map(|p| Streamline::new(p).unwrap())
    }

    proptest! {
        #[test]
        fn mdf_symmetric_and_flip_invariant(
            (s, t) in (2usize..16).prop_flat_map(|n| (streamline_strategy(n), streamline_strategy(n)))
        ) {
            let d = mdf(&s, &t).unwrap();
            prop_assert_eq!(d, mdf(&t, &s).unwrap());
            prop_assert_eq!(d, mdf(&s, &t.reversed()).unwrap());
        }

        #[test]
        fn resample_preserves_endpoints(s in (2usize..30).prop_flat_map(streamline_strategy), m in 2usize..300) {
            let r = resample(&s, m).unwrap();
            prop_assert_eq!(r.len(), m);
            prop_assert_eq!(r.points()[0], s.points()[0]);
            prop_assert_eq!(r.points()[m - 1], s.points()[s.len() - 1]);
        }

        #[test]
        fn linear_resample_never_lengthens(s in (2usize..4).prop_flat_map(streamline_strategy), m in 2usize..300) {
            let r = resample(&s, m).unwrap();
            prop_assert!(r.arc_length() <= s.arc_length() + 1e-6);
        }
    }
}
