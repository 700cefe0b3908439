//! Deterministic labeled synthetic bundles.
//!
//! Each bundle follows a parametric centerline; every streamline is the
//! centerline plus a smooth low-order polynomial offset clamped to the
//! bundle's cross-section radius, sampled at jittered parameters and
//! randomly reversed the way tracking output is.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::streamline::{Labels, Point, Streamline, Tractogram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Planar circular arc in the vertical plane rotated `azimuth` radians
    /// about z from the x axis.
    Arc { radius: f64, span: f64, azimuth: f64 },
    /// Helix around z with the given number of radians of sweep over `height`.
    Helix { radius: f64, height: f64, sweep: f64 },
    /// Two straight limbs joined by a half turn, lying in a tilted plane.
    CShape { radius: f64, limb: f64, tilt: f64 },
    /// Two opposite arcs joined end to end, rising along z.
    SShape { radius: f64, height: f64, azimuth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleSpec {
    pub name: String,
    pub shape: Shape,
    pub center: Point,
    /// Per-axis reflection applied to the shape before translation.
    pub reflect: [bool; 3],
    pub spread_mm: f64,
    pub n_streamlines: usize,
    /// Inclusive range of points per streamline.
    pub points_per_streamline: (usize, usize),
    pub seed: u64,
}

impl BundleSpec {
    pub fn new(name: impl Into<String>, shape: Shape, center: Point) -> Self {
        Self {
            name: name.into(),
            shape,
            center,
            reflect: [false; 3],
            spread_mm: 2.0,
            n_streamlines: 100,
            points_per_streamline: (40, 120),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.spread_mm > 0.0) {
            return Err(Error::InvalidArgument(format!("{}: spread_mm must be positive", self.name)));
        }
        if self.n_streamlines == 0 {
            return Err(Error::InvalidArgument(format!("{}: n_streamlines must be >= 1", self.name)));
        }
        let (lo, hi) = self.points_per_streamline;
        if lo < 2 || hi < lo {
            return Err(Error::InvalidArgument(format!("{}: bad points range {lo}..={hi}", self.name)));
        }
        Ok(())
    }

    /// Centerline position at parameter `u` in [0, 1], world coordinates.
    pub fn centerline(&self, u: f64) -> Point {
        let mut p = shape_point(&self.shape, u);
        for k in 0..3 {
            if self.reflect[k] {
                p[k] = -p[k];
            }
            p[k] += self.center[k];
        }
        p
    }
}

fn shape_point(shape: &Shape, u: f64) -> Point {
    match *shape {
        Shape::Arc { radius, span, azimuth } => {
            let a = -span / 2.0 + span * u;
            let (along, up) = (radius * a.sin(), radius * a.cos() - radius);
            [along * azimuth.cos(), along * azimuth.sin(), up]
        }
        Shape::Helix { radius, height, sweep } => {
            let a = sweep * u;
            [radius * a.cos(), radius * a.sin(), height * (u - 0.5)]
        }
        Shape::CShape { radius, limb, tilt } => {
            // arc length parameterization over limb + half circle + limb
            let total = 2.0 * limb + PI * radius;
            let s = u * total;
            let (x, y) = if s < limb {
                (limb - s, radius)
            } else if s < limb + PI * radius {
                let a = (s - limb) / radius;
                (-radius * a.sin(), radius * a.cos())
            } else {
                (s - limb - PI * radius, -radius)
            };
            [x, y * tilt.cos(), y * tilt.sin()]
        }
        Shape::SShape { radius, height, azimuth } => {
            let a = 2.0 * PI * u;
            let lateral = if u < 0.5 { radius * (1.0 - a.cos()) } else { -radius * (1.0 - a.cos()) };
            let along = radius * 2.0 * (u - 0.5) * 2.0;
            let (c, s) = (azimuth.cos(), azimuth.sin());
            [along * c - lateral * s, along * s + lateral * c, height * (u - 0.5)]
        }
    }
}

/// Reflects a bundle across the coordinate plane normal to `axis`. Names
/// ending in `_L`/`_R` swap hemisphere tags; other names gain a suffix.
pub fn mirror(spec: &BundleSpec, axis: Axis) -> BundleSpec {
    let k = axis.index();
    let mut out = spec.clone();
    out.reflect[k] = !out.reflect[k];
    out.center[k] = -out.center[k];
    out.name = if axis == Axis::X {
        if let Some(stem) = spec.name.strip_suffix("_L") {
            format!("{stem}_R")
        } else if let Some(stem) = spec.name.strip_suffix("_R") {
            format!("{stem}_L")
        } else {
            format!("{}_mirror_x", spec.name)
        }
    } else {
        format!("{}_mirror_{}", spec.name, ["x", "y", "z"][k])
    };
    out
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Point {
    loop {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n2: f64 = p.iter().map(|c| c * c).sum();
        if n2 <= 1.0 {
            return [p[0] * radius, p[1] * radius, p[2] * radius];
        }
    }
}

fn bundle_streamlines(spec: &BundleSpec, seed: u64, index: usize) -> Vec<Streamline> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, spec.seed), index as u64 + 1));
    let spread = spec.spread_mm;
    (0..spec.n_streamlines)
        .map(|_| {
            let c0 = random_in_ball(&mut rng, 0.8 * spread);
            let c1 = random_in_ball(&mut rng, 0.3 * spread);
            let c2 = random_in_ball(&mut rng, 0.2 * spread);
            let (lo, hi) = spec.points_per_streamline;
            let n = rng.gen_range(lo..=hi);
            let step = 1.0 / (n - 1) as f64;
            let mut points: Vec<Point> = (0..n)
                .map(|i| {
                    let u = if i == 0 || i == n - 1 {
                        i as f64 * step
                    } else {
                        i as f64 * step + rng.gen_range(-0.3..0.3) * step
                    };
                    let v = 2.0 * u - 1.0;
                    let q = v * v - 1.0 / 3.0;
                    let mut off = [0.0; 3];
                    for k in 0..3 {
                        off[k] = c0[k] + c1[k] * v + c2[k] * q;
                    }
                    let norm = off.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if norm > spread {
                        for c in off.iter_mut() {
                            *c *= spread / norm;
                        }
                    }
                    let base = spec.centerline(u);
                    [base[0] + off[0], base[1] + off[1], base[2] + off[2]]
                })
                .collect();
            if rng.gen_bool(0.5) {
                points.reverse();
            }
            Streamline::new(points).expect("synthetic streamline has >= 2 finite points")
        })
        .collect()
}

/// Generates all bundles, labeled by spec name, in spec order.
pub fn generate(specs: &[BundleSpec], seed: u64) -> Result<Tractogram> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no bundle specs given".into()));
    }
    let mut names: Vec<String> = Vec::with_capacity(specs.len());
    for s in specs {
        s.validate()?;
        if names.contains(&s.name) {
            return Err(Error::DuplicateClass(s.name.clone()));
        }
        names.push(s.name.clone());
    }
    let mut streamlines = Vec::new();
    let mut indices = Vec::new();
    for (class, spec) in specs.iter().enumerate() {
        let lines = bundle_streamlines(spec, seed, class);
        indices.extend(std::iter::repeat_n(class, lines.len()));
        streamlines.extend(lines);
    }
    Tractogram::with_labels(streamlines, Labels::new(names, indices)?)
}

/// The default desk-scale corpus: four shapes in the left hemisphere and
/// their mirror images across the mid-sagittal plane. Bundles are 8 mm in
/// cross-section radius, wide enough to split into many 4 mm clusters.
pub const CORPUS_SPREAD_MM: f64 = 8.0;

pub fn default_corpus(n_streamlines: usize, subject_seed: u64) -> Vec<BundleSpec> {
    let left = [
        BundleSpec::new("ARC_L", Shape::Arc { radius: 35.0, span: 2.0, azimuth: PI / 4.0 }, [-30.0, 0.0, 20.0]),
        BundleSpec::new("HELIX_L", Shape::Helix { radius: 10.0, height: 60.0, sweep: 2.0 * PI }, [-40.0, -25.0, -10.0]),
        BundleSpec::new("C_L", Shape::CShape { radius: 12.0, limb: 25.0, tilt: PI / 6.0 }, [-35.0, 35.0, -5.0]),
        BundleSpec::new("S_L", Shape::SShape { radius: 10.0, height: 30.0, azimuth: PI / 3.0 }, [-25.0, -50.0, 25.0]),
    ];
    let mut specs = Vec::with_capacity(8);
    for mut l in left {
        l.n_streamlines = n_streamlines;
        l.seed = subject_seed;
        l.spread_mm = CORPUS_SPREAD_MM;
        let r = mirror(&l, Axis::X);
        specs.push(l);
        specs.push(r);
    }
    specs
}
