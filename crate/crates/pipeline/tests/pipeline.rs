use std::path::{Path, PathBuf};
use std::process::Command;

use tracto_core::representation::Representation;
use tracto_core::synth::{default_corpus, generate};
use tracto_core::{Streamline, Tractogram};
use tracto_nn::checkpoint::Checkpoint;
use tracto_nn::model::Model;
use tracto_pipeline::commands::{cmd_evaluate, cmd_prepare, cmd_pretrain, cmd_synth};
use tracto_pipeline::config::PipelineConfig;
use tracto_pipeline::data::{labeled, write_labeled_tractogram, Prepared};
use tracto_pipeline::infer::infer;
use tracto_pipeline::training::{last_path, probe_batch_loss, RunOptions, Stage};

fn tiny_config(rep: Representation, train: Vec<PathBuf>, val: Vec<PathBuf>) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(rep);
    cfg.data.train = train;
    cfg.data.val = val;
    cfg.sampling.quota = 6;
    cfg.sampling.val_quota = 2;
    cfg.patch.n_patches = Some(8);
    cfg.patch.patch_size = Some(4);
    cfg.model.embed_dim = 12;
    cfg.model.extractor_depth = 2;
    cfg.model.generator_depth = 1;
    cfg.model.n_heads = 2;
    cfg.train.batch_size = 8;
    cfg.train.shards = 2;
    cfg.train.lr0 = 1e-3;
    cfg.train.pretrain_epochs = 3;
    cfg.train.max_epochs = 3;
    cfg
}

fn synth(dir: &Path, subjects: usize, n: usize) -> Vec<PathBuf> {
    cmd_synth(&dir.join("data"), subjects, n, 7).unwrap()
}

#[test]
fn prepare_honors_quota_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths = synth(dir.path(), 2, 20);
    let cfg = tiny_config(Representation::Streamline, vec![paths[0].clone()], vec![paths[1].clone()]);
    let a = cmd_prepare(&cfg, &dir.path().join("a")).unwrap();
    for (split, quota) in [("train", 6), ("val", 2)] {
        let counts = &a.manifest.counts[split];
        assert_eq!(counts.len(), 8);
        assert!(counts.values().all(|&n| n == quota), "{split}: {counts:?}");
    }
    assert!(a.manifest.warnings.is_empty());
    cmd_prepare(&cfg, &dir.path().join("b")).unwrap();
    for f in ["manifest.toml", "samples.tsv"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let back = Prepared::load(&dir.path().join("a")).unwrap();
    assert_eq!(back.samples, a.samples);
}

#[test]
fn prepare_warns_on_shortfall() {
    let dir = tempfile::tempdir().unwrap();
    let paths = synth(dir.path(), 1, 5);
    let mut cfg = tiny_config(Representation::Streamline, paths, Vec::new());
    cfg.sampling.quota = 9;
    let p = cmd_prepare(&cfg, &dir.path().join("w")).unwrap();
    assert!(p.manifest.counts["train"].values().all(|&n| n == 5));
    assert_eq!(p.manifest.warnings.len(), 8);
}

#[test]
fn cluster_samples_are_pure() {
    let dir = tempfile::tempdir().unwrap();
    let paths = synth(dir.path(), 1, 40);
    let cfg = tiny_config(Representation::Cluster, paths, Vec::new());
    let p = cmd_prepare(&cfg, &dir.path().join("w")).unwrap();
    let subjects = p.load_subjects().unwrap();
    assert!(!p.samples.is_empty());
    for s in &p.samples {
        let tracto_pipeline::data::Source::Cluster(members) = &s.source else { panic!("not a cluster sample") };
        assert!(members.len() >= cfg.sampling.min_members);
        assert!(members.iter().all(|&m| subjects[s.subject].labels[m] == s.label));
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let paths = synth(dir.path(), 2, 12);
    let cfg = tiny_config(Representation::Streamline, vec![paths[0].clone()], vec![paths[1].clone()]);
    let (full, cut) = (dir.path().join("full"), dir.path().join("cut"));
    cmd_prepare(&cfg, &full).unwrap();
    cmd_prepare(&cfg, &cut).unwrap();
    let straight = cmd_pretrain(&cfg, &full, RunOptions::default()).unwrap();
    assert_eq!(straight.history.len(), 3);

    let first = cmd_pretrain(&cfg, &cut, RunOptions { resume: false, stop_after: Some(1) }).unwrap();
    assert_eq!(first.history.len(), 1);
    assert_eq!(first.history[0], straight.history[0]);

    let prepared = Prepared::load(&cut).unwrap();
    let subjects = prepared.load_subjects().unwrap();
    let snap = Checkpoint::load(&last_path(&cut, Stage::Pretrain)).unwrap();
    let probe = probe_batch_loss(&cfg, &prepared, &subjects, Stage::Pretrain, &snap.model, 1).unwrap();
    assert_eq!(probe.to_bits(), probe_batch_loss(&cfg, &prepared, &subjects, Stage::Pretrain, &snap.model, 1).unwrap().to_bits());

    let rest = cmd_pretrain(&cfg, &cut, RunOptions { resume: true, stop_after: None }).unwrap();
    assert_eq!(rest.history.len(), 2);
    for (a, b) in rest.history.iter().zip(&straight.history[1..]) {
        assert_eq!(a.epoch, b.epoch);
        assert!((a.train_loss - b.train_loss).abs() <= 1e-9, "{} vs {}", a.train_loss, b.train_loss);
        assert!((a.val_metric - b.val_metric).abs() <= 1e-9);
    }
    let a = std::fs::read(last_path(&full, Stage::Pretrain)).unwrap();
    let b = std::fs::read(last_path(&cut, Stage::Pretrain)).unwrap();
    assert_eq!(a, b, "final checkpoints differ");
}

/// Two bundles far apart plus one streamline far from both.
fn outlier_fixture() -> Tractogram {
    let mut t = generate(&default_corpus(15, 3)[..2], 3).unwrap();
    let far = Streamline::new((0..30).map(|i| [900.0 + i as f64, -900.0, 400.0]).collect()).unwrap();
    t.streamlines.push(far);
    t.labels = None;
    t
}

#[test]
fn inference_labels_every_streamline() {
    let t = outlier_fixture();
    let classes: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
    for rep in [Representation::Streamline, Representation::Cluster, Representation::Fusion] {
        for infer_min in [1, 50] {
            let mut cfg = tiny_config(rep, Vec::new(), Vec::new());
            cfg.sampling.infer_min_members = infer_min;
            let model = Model::new(cfg.model_config(classes.len()).unwrap(), 1).unwrap();
            let ck = Checkpoint {
                model,
                optimizer: None,
                epoch: 0,
                representation: rep.to_string(),
                class_names: classes.clone(),
                best_metric: None,
                stale_epochs: 0,
            };
            let inf = infer(&ck, &cfg, &t);
            if rep == Representation::Cluster && infer_min == 50 {
                // nothing reaches 50 members, so no cluster exists to fall back on
                assert!(inf.is_err());
                continue;
            }
            let inf = inf.unwrap();
            assert_eq!(inf.labels.len(), t.len(), "{rep}");
            assert!(inf.labels.iter().all(|&l| l < classes.len()));
        }
    }
}

#[test]
fn cluster_inference_falls_back_to_nearest_centroid() {
    let t = outlier_fixture();
    let mut cfg = tiny_config(Representation::Cluster, Vec::new(), Vec::new());
    cfg.sampling.infer_min_members = 2;
    let classes = vec!["A".to_string(), "B".to_string()];
    let ck = Checkpoint {
        model: Model::new(cfg.model_config(2).unwrap(), 0).unwrap(),
        optimizer: None,
        epoch: 0,
        representation: "cluster".into(),
        class_names: classes,
        best_metric: None,
        stale_epochs: 0,
    };
    let inf = infer(&ck, &cfg, &t).unwrap();
    assert_eq!(inf.labels.len(), t.len());
    assert!(inf.fallback >= 1, "the lone outlier cannot form a 2-member cluster");
}

#[test]
fn representation_mismatch_is_an_error() {
    let cfg = tiny_config(Representation::Streamline, Vec::new(), Vec::new());
    let ck = Checkpoint {
        model: Model::new(cfg.model_config(2).unwrap(), 0).unwrap(),
        optimizer: None,
        epoch: 0,
        representation: "fusion".into(),
        class_names: vec!["A".into(), "B".into()],
        best_metric: None,
        stale_epochs: 0,
    };
    assert!(infer(&ck, &cfg, &outlier_fixture()).is_err());
}

#[test]
fn evaluate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let t = generate(&default_corpus(10, 5)[..3], 5).unwrap();
    let reference = dir.path().join("ref.tck");
    write_labeled_tractogram(&t, &reference).unwrap();
    let report = cmd_evaluate(&reference, &reference, 1.0, Some(dir.path())).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| (r.dice, r.overlap, r.overreach) == (1.0, 1.0, 0.0)));
    let text = std::fs::read_to_string(dir.path().join("report.tsv")).unwrap();
    assert!(text.starts_with("class\tdice\toverlap\toverreach\n"));

    // everything predicted as the first class
    let names = t.class_names().unwrap().to_vec();
    let pred = labeled(t.streamlines.clone(), &names, vec![0; t.len()]).unwrap();
    let pred_path = dir.path().join("pred.tck");
    write_labeled_tractogram(&pred, &pred_path).unwrap();
    let r = cmd_evaluate(&pred_path, &reference, 1.0, None).unwrap();
    assert!(r.rows[0].overreach > 0.0 && r.rows[0].overlap == 1.0);
    assert_eq!((r.rows[1].dice, r.rows[2].dice), (0.0, 0.0));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tractogpt"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = cli().args(["--seed", "3", "--out"]).arg(dir.path()).args(["synth", "--subjects", "1", "--streamlines", "4"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("subject0.tck").exists() && dir.path().join("subject0.labels").exists());

    let missing = cli().args(["evaluate", "/nonexistent/a.tck", "/nonexistent/b.tck"]).output().unwrap();
    assert!(!missing.status.success());
    let err = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));

    let no_config = cli().arg("prepare").output().unwrap();
    assert!(!no_config.status.success());

    let bad = cli().arg("frobnicate").output().unwrap();
    assert!(!bad.status.success());
}
