use sparsepat::metrics::psnr;
use sparsepat::networks::{build_fd_unet, build_unet};
use sparsepat::pipeline::{
    fine_tune, make_cv_folds, make_dataset, train, DatasetManifest, DatasetSpec, Pair, PhantomKind, TrainConfig,
};
use sparsepat::tensor::ops;
use sparsepat::{Error, Image2D, Tensor};

#[test]
fn folds_partition_the_samples() {
    for (k, train_len, test_len) in [(4, 900, 300), (6, 1000, 200)] {
        check_partition(&make_cv_folds(1200, k).unwrap(), k, train_len, test_len);
    }
}

fn check_partition(folds: &[sparsepat::pipeline::Fold], k: usize, train_len: usize, test_len: usize) {
    assert_eq!(folds.len(), k);
    let mut seen = vec![0usize; 1200];
    for fold in folds {
        assert_eq!((fold.train.len(), fold.test.len()), (train_len, test_len));
        fold.check_disjoint().unwrap();
        for &i in &fold.test {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn indivisible_folds_are_rejected() {
    assert!(make_cv_folds(10, 3).is_err());
    assert!(make_cv_folds(10, 1).is_err());
}

#[test]
fn phantom_kind_names_roundtrip() {
    for kind in PhantomKind::ALL {
        assert_eq!(kind.name().parse::<PhantomKind>().unwrap(), kind);
    }
    let err = "bogus".parse::<PhantomKind>().unwrap_err().to_string();
    assert!(err.contains("circles") && err.contains("vessels_complex"), "{err}");
}

#[test]
fn augmented_kinds_never_yield_flat_images() {
    for kind in PhantomKind::ALL {
        for seed in 0..15 {
            let img = kind.generate(seed, 32).unwrap();
            assert!(img.max() > img.min(), "{kind} seed {seed}");
            assert!(img.min() >= 0.0 && img.max() <= 1.0 + 1e-12);
        }
    }
}

fn small_spec(kind: PhantomKind, detectors: usize) -> DatasetSpec {
    DatasetSpec::new(kind, 0, detectors, 32, 11).with_splits(&[("train", 3), ("test", 2)])
}

#[test]
fn dataset_generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = small_spec(PhantomKind::SheppLogan, 10);
    let ma = make_dataset(&spec, a.path(), 1).unwrap();
    let mb = make_dataset(&spec, b.path(), 2).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(
        std::fs::read(a.path().join("manifest.json")).unwrap(),
        std::fs::read(b.path().join("manifest.json")).unwrap()
    );
    let reread = DatasetManifest::read(a.path()).unwrap();
    assert_eq!(reread, ma);
    let regenerated = make_dataset(&reread.spec, b.path(), 1).unwrap();
    assert_eq!(regenerated.samples, ma.samples);

    assert_eq!(ma.indices("train"), vec![0, 1, 2]);
    assert_eq!(ma.indices("test"), vec![3, 4]);
    let pairs = ma.load_split(a.path(), "test").unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].y.size(), 32);
}

#[test]
fn tampered_sample_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&small_spec(PhantomKind::Circles, 10), dir.path(), 1).unwrap();
    let victim = dir.path().join(&manifest.samples[1].x_file);
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    assert!(manifest.load(dir.path(), &[0]).is_ok());
    assert!(matches!(manifest.load(dir.path(), &[1]), Err(Error::Checksum { .. })));
}

#[test]
fn zero_detectors_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(make_dataset(&small_spec(PhantomKind::Circles, 0), dir.path(), 1).is_err());
}

fn mean_psnr(pairs: &[Pair]) -> f64 {
    pairs.iter().map(|p| psnr(&p.x, &p.y, None).unwrap()).sum::<f64>() / pairs.len() as f64
}

#[test]
fn dense_dataset_beats_sparse_on_same_phantoms() {
    let dense_dir = tempfile::tempdir().unwrap();
    let sparse_dir = tempfile::tempdir().unwrap();
    let n = sparsepat::acoustics::required_detectors(32);
    let dense = make_dataset(&small_spec(PhantomKind::Circles, n), dense_dir.path(), 1).unwrap();
    let sparse = make_dataset(&small_spec(PhantomKind::Circles, 10), sparse_dir.path(), 1).unwrap();
    let seeds = |m: &DatasetManifest| m.samples.iter().map(|s| s.seed).collect::<Vec<_>>();
    assert_eq!(seeds(&dense), seeds(&sparse));
    let d = mean_psnr(&dense.load_all(dense_dir.path()).unwrap());
    let s = mean_psnr(&sparse.load_all(sparse_dir.path()).unwrap());
    assert!(d > s, "dense {d} dB vs sparse {s} dB");
}

/// Synthetic pairs: a blob target and a streaked, attenuated input.
fn toy_pairs(count: usize, size: usize) -> Vec<Pair> {
    (0..count)
        .map(|k| {
            let c = size as f64 / 2.0 + k as f64;
            let y = Image2D::from_fn(size, |r, q| {
                let d2 = (r as f64 - c).powi(2) + (q as f64 - c + 2.0).powi(2);
                (-d2 / 18.0).exp()
            });
            let x = Image2D::from_fn(size, |r, q| {
                0.6 * y.get(r, q) + 0.1 * (((r + 2 * q + k) % 5) as f64 / 5.0)
            });
            Pair { seed: k as u64, x, y }
        })
        .collect()
}

fn quick_cfg(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn first_logged_loss_is_input_mse() {
    let pairs = toy_pairs(1, 16);
    let mut model = build_fd_unet::<f64>(8, 1, 0).unwrap();
    let log = train(&mut model, &pairs, &quick_cfg(1, 3)).unwrap();
    let x = Tensor::new(vec![1, 1, 16, 16], pairs[0].x.values().to_vec()).unwrap();
    let y = Tensor::new(vec![1, 1, 16, 16], pairs[0].y.values().to_vec()).unwrap();
    let expected = ops::mse(&x, &y).unwrap();
    assert_eq!(log.records[0].iteration, 0);
    assert!((log.records[0].loss - expected).abs() < 1e-12 * expected.max(1.0));
}

#[test]
fn single_pair_is_memorised() {
    let pairs = toy_pairs(1, 32);
    let mut model = build_fd_unet::<f32>(8, 1, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        ..quick_cfg(500, 1)
    };
    let log = train(&mut model, &pairs, &cfg).unwrap();
    let first = log.records.first().unwrap().loss;
    let last = log.records.last().unwrap().loss;
    assert_eq!(log.records.last().unwrap().iteration, 499);
    assert!(last < 0.01 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let pairs = toy_pairs(4, 16);
    let run = || {
        let mut model = build_unet::<f32>(8, 5).unwrap();
        let log = train(&mut model, &pairs, &quick_cfg(20, 9)).unwrap();
        (model, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    for (p, q) in a.params().params().iter().zip(b.params().params()) {
        assert_eq!(p.value, q.value);
    }
    assert_eq!(a.params().all_stats(), b.params().all_stats());
}

#[test]
fn zero_iteration_fine_tune_keeps_weights() {
    let pairs = toy_pairs(2, 16);
    let mut model = build_fd_unet::<f32>(8, 1, 2).unwrap();
    train(&mut model, &pairs, &quick_cfg(5, 1)).unwrap();
    let before = model.clone();
    let log = fine_tune(&mut model, &pairs, &quick_cfg(5, 1), 0).unwrap();
    assert!(log.records.is_empty());
    for (p, q) in model.params().params().iter().zip(before.params().params()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn non_finite_loss_reports_iteration_and_seed() {
    let mut pairs = toy_pairs(1, 16);
    pairs[0].x.values_mut()[5] = f64::NAN;
    let mut model = build_unet::<f32>(8, 0).unwrap();
    match train(&mut model, &pairs, &quick_cfg(3, 77)) {
        Err(Error::Diverged { iteration, seed, .. }) => assert_eq!((iteration, seed), (0, 77)),
        other => panic!("expected divergence, got {other:?}"),
    }
}
