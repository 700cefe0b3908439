use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracto_core::metrics::{dice_overlap_overreach, voxelize, VoxelGrid};
use tracto_core::qbx::{quickbundlesx, sample_clusters_move_up, MoveUpOptions, DEFAULT_RESAMPLE, DEFAULT_THRESHOLDS};
use tracto_core::representation::{build_cluster_sample, build_fusion_sample, build_streamline_sample, CLOUD_POINTS, STREAMLINE_POINTS};
use tracto_core::streamline::{mdf, resample, Labels, Point, Streamline, Tractogram};
use tracto_core::synth::{default_corpus, generate};
use tracto_core::tck::{read_labeled, read_tck, write_labeled, write_tck, Datatype};
use tracto_core::tokenizer::{tokenize, PatchConfig};

fn point() -> impl Strategy<Value = Point> {
    [-80.0f64..80.0, -80.0f64..80.0, -80.0f64..80.0]
}

fn streamline(min: usize, max: usize) -> impl Strategy<Value = Streamline> {
    prop::collection::vec(point(), min..=max).prop_map(|p| Streamline::new(p).unwrap())
}

fn f32_exact(s: Streamline) -> Streamline {
    Streamline::new(s.points().iter().map(|p| p.map(|v| v as f32 as f64)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mdf_symmetric_and_flip_invariant(a in streamline(2, 30), seed in any::<u64>()) {
        let n = a.len();
        let b = generate(&default_corpus(1, seed)[..1], seed).unwrap().streamlines.remove(0);
        let b = resample(&b, n).unwrap();
        let d = mdf(&a, &b).unwrap();
        prop_assert_eq!(d.to_bits(), mdf(&b, &a).unwrap().to_bits());
        prop_assert_eq!(d.to_bits(), mdf(&a.reversed(), &b).unwrap().to_bits());
        prop_assert_eq!(d.to_bits(), mdf(&a, &b.reversed()).unwrap().to_bits());
        prop_assert!(mdf(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn resample_keeps_endpoints(s in streamline(2, 40), m in 2usize..300) {
        let r = resample(&s, m).unwrap();
        prop_assert_eq!(r.len(), m);
        let (p, q) = (s.points(), r.points());
        for k in 0..3 {
            prop_assert!((p[0][k] - q[0][k]).abs() < 1e-9);
            prop_assert!((p[p.len() - 1][k] - q[m - 1][k]).abs() < 1e-9);
        }
    }

    #[test]
    fn tck_round_trip(lines in prop::collection::vec(streamline(2, 20), 1..12), float64 in any::<bool>()) {
        let t = Tractogram::new(lines.into_iter().map(f32_exact).collect());
        let dt = if float64 { Datatype::Float64LE } else { Datatype::Float32LE };
        let back = read_tck(&write_tck(&t, dt).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn labeled_round_trip(lines in prop::collection::vec(streamline(2, 6), 1..10), tags in prop::collection::vec(0usize..3, 10)) {
        let names: Vec<String> = lines.iter().enumerate().map(|(i, _)| format!("B{}", tags[i])).collect();
        let t = Tractogram::with_labels(lines.into_iter().map(f32_exact).collect(), Labels::from_names(&names)).unwrap();
        let (bytes, text) = write_labeled(&t, Datatype::Float32LE).unwrap();
        prop_assert_eq!(read_labeled(&bytes, &text).unwrap(), t);
    }

    #[test]
    fn tokenizer_is_deterministic_and_bounded(pts in prop::collection::vec(point(), 64..200)) {
        let cfg = PatchConfig { n_patches: 16, patch_size: 8 };
        let a = tokenize(&pts, cfg).unwrap();
        prop_assert_eq!(&a, &tokenize(&pts, cfg).unwrap());
        let mut order = a.order.clone();
        order.sort_unstable();
        prop_assert_eq!(order, (0..16).collect::<Vec<_>>());
        for w in a.order.windows(2) {
            prop_assert!(a.morton_codes[w[0]] <= a.morton_codes[w[1]]);
        }
        let diameter = pts.iter().flat_map(|p| pts.iter().map(move |q| tracto_core::streamline::dist(p, q))).fold(0.0, f64::max);
        for patch in &a.patches {
            prop_assert_eq!(patch[0], [0.0, 0.0, 0.0]);
            for q in patch {
                prop_assert!((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() <= diameter + 1e-9);
            }
        }
        for c in &a.centers {
            prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn identical_masks_score_perfectly(lines in prop::collection::vec(streamline(2, 8), 1..5), voxel in 0.5f64..4.0) {
        let grid = VoxelGrid::covering(&lines, voxel, voxel).unwrap();
        let m = voxelize(&lines, grid).unwrap();
        let s = dice_overlap_overreach(&m, &m).unwrap();
        prop_assert_eq!((s.dice, s.overlap, s.overreach), (1.0, 1.0, 0.0));
    }
}

#[test]
fn synthetic_corpus_is_deterministic_and_labeled() {
    let specs = default_corpus(40, 3);
    let a = generate(&specs, 3).unwrap();
    assert_eq!(a, generate(&specs, 3).unwrap());
    assert_ne!(a, generate(&specs, 4).unwrap());
    let names = a.class_names().unwrap();
    assert_eq!(names.len(), 8);
    for c in 0..8 {
        assert_eq!(a.indices_of_class(c).len(), 40);
    }
    for s in &a.streamlines {
        assert!(s.len() >= 2);
        assert!(s.points().iter().flatten().all(|v| v.is_finite()));
    }
}

#[test]
fn synthetic_bundles_give_pure_training_clusters() {
    let t = generate(&default_corpus(60, 1), 1).unwrap();
    let labels = t.labels.as_ref().unwrap().indices.clone();
    let tree = quickbundlesx(&t, &DEFAULT_THRESHOLDS, DEFAULT_RESAMPLE).unwrap();
    let lax = MoveUpOptions { min_members: 10, require_pure: false };
    let clusters = sample_clusters_move_up(&tree, lax, Some(&labels)).unwrap();
    assert!(!clusters.is_empty());
    for c in &clusters {
        assert!(c.member_indices.len() >= 10 && c.level_radius_mm <= 8.0);
        let first = labels[c.member_indices[0]];
        assert!(c.member_indices.iter().all(|&m| labels[m] == first), "mixed cluster at {} mm", c.level_radius_mm);
    }
}

#[test]
fn representation_shapes() {
    let t = generate(&default_corpus(30, 2), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = build_streamline_sample(&t.streamlines[0], Some(0), 0).unwrap();
    assert_eq!(s.points.len(), STREAMLINE_POINTS);
    let tree = quickbundlesx(&t, &DEFAULT_THRESHOLDS, DEFAULT_RESAMPLE).unwrap();
    let clusters = sample_clusters_move_up(&tree, MoveUpOptions::default(), None).unwrap();
    let c = build_cluster_sample(&clusters[0], &t, &mut rng).unwrap();
    assert_eq!(c.points.len(), CLOUD_POINTS);
    let pool: Vec<Point> = clusters[0].member_indices.iter().flat_map(|&m| t.streamlines[m].points().to_vec()).collect();
    assert!(c.points.iter().all(|p| pool.contains(p)));
    let me = clusters[0].member_indices[0];
    let neighbors: Vec<&Streamline> = clusters[0].member_indices.iter().filter(|&&m| m != me).map(|&m| &t.streamlines[m]).collect();
    let f = build_fusion_sample(&t.streamlines[me], &neighbors, None, me, &mut rng).unwrap();
    assert_eq!(f.points.len(), CLOUD_POINTS);
    assert_eq!(&f.points[..STREAMLINE_POINTS], resample(&t.streamlines[me], STREAMLINE_POINTS).unwrap().points());
    let alone = build_fusion_sample(&t.streamlines[me], &[], None, me, &mut rng).unwrap();
    assert_eq!(alone.points.len(), CLOUD_POINTS);
}
