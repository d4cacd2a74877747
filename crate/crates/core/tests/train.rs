mod common;

use std::collections::BTreeMap;

use dlgsa::image::{synth_image, write_ppm, Family};
use dlgsa::train::*;
use dlgsa::{Error, Graph, ParamStore, Shape, Tensor};
use rand::Rng;

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::parse(
        "model=tiny\nscale=2\nnum_groups=1\nblocks_per_group=1\nchannels=12\nheads=2\n\
         batch=2\npatch=8\ntotal_iters=4\nseed=3\ndataset=synthetic(5, 3, 24)\n",
    )
    .unwrap();
    cfg.precision = Precision::F64;
    cfg
}

#[test]
fn l1_loss_closed_forms() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_vec(Shape::vector(4), vec![1.0, -2.0, 3.0, 0.5]).unwrap());
    let b = g.input(Tensor::from_vec(Shape::vector(4), vec![1.0, -2.0, 3.0, 0.5]).unwrap());
    let l = g.l1_loss(a, b).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
    let c = g.input(Tensor::from_vec(Shape::vector(4), vec![2.0, -1.0, 4.0, 1.5]).unwrap());
    let l = g.l1_loss(c, a).unwrap();
    assert_eq!(g.value(l).data()[0], 1.0);
    let bad = g.input(Tensor::zeros(Shape::vector(3)));
    assert!(g.l1_loss(a, bad).is_err());
}

// Scalar simulation of the same update rule.
fn adam_scalar(x0: f64, steps: usize, lr: f64, grad: impl Fn(f64) -> f64) -> f64 {
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    for t in 1..=steps {
        let g = grad(x);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t as i32));
        let vh = v / (1.0 - 0.999f64.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + 1e-8);
    }
    x
}

#[test]
fn adam_minimizes_a_parabola() {
    let mut p = ParamStore::<f64>::new();
    p.insert("x", Tensor::from_vec(Shape::vector(1), vec![1.0]).unwrap());
    let mut adam = Adam::new(&p);
    for _ in 0..100 {
        let x = p.get("x").unwrap().data()[0];
        let g = BTreeMap::from([("x".to_string(), Tensor::from_vec(Shape::vector(1), vec![2.0 * x]).unwrap())]);
        adam.step(&mut p, &g, 0.1).unwrap();
    }
    let x = p.get("x").unwrap().data()[0];
    let oracle = adam_scalar(1.0, 100, 0.1, |x| 2.0 * x);
    assert!(x.abs() < 0.15, "{x}");
    assert!((x - oracle).abs() < 1e-12, "{x} vs {oracle}");
    assert_eq!(adam.t, 100);
}

#[test]
fn adam_zero_gradient_keeps_params_and_decays_moments() {
    let mut p = ParamStore::<f64>::new();
    p.insert("w", Tensor::from_vec(Shape::vector(2), vec![0.3, -0.7]).unwrap());
    let mut adam = Adam::new(&p);
    let g = |v: Vec<f64>| BTreeMap::from([("w".to_string(), Tensor::from_vec(Shape::vector(2), v).unwrap())]);
    adam.step(&mut p, &g(vec![1.0, 2.0]), 0.01).unwrap();
    let before = p.get("w").unwrap().clone();
    let (m0, v0) = (adam.m["w"].clone(), adam.v["w"].clone());
    adam.step(&mut p, &g(vec![0.0, 0.0]), 0.01).unwrap();
    for i in 0..2 {
        assert!((adam.m["w"].data()[i] - 0.9 * m0.data()[i]).abs() < 1e-15);
        assert!((adam.v["w"].data()[i] - 0.999 * v0.data()[i]).abs() < 1e-15);
    }
    // The first moment still carries momentum, so the parameter moves on.
    assert_ne!(p.get("w").unwrap(), &before);

    let mut q = ParamStore::<f64>::new();
    q.insert("w", Tensor::from_vec(Shape::vector(2), vec![0.3, -0.7]).unwrap());
    let mut fresh = Adam::new(&q);
    fresh.step(&mut q, &g(vec![0.0, 0.0]), 0.01).unwrap();
    assert_eq!(q.get("w").unwrap().data(), &[0.3, -0.7]);
}

#[test]
fn schedule_is_monotone() {
    let mut rng = common::rng(11);
    for _ in 0..50 {
        let mut ms: Vec<usize> = (0..rng.random_range(0..5)).map(|_| rng.random_range(1..500)).collect();
        ms.sort_unstable();
        ms.dedup();
        let factor = rng.random_range(0.1..1.0);
        let mut prev = f64::INFINITY;
        for it in 0..600 {
            let lr = lr_multistep(it, 5e-4, &ms, factor);
            assert!(lr <= prev);
            prev = lr;
        }
    }
    assert_eq!(lr_multistep(0, 1.0, &[3, 6], 0.5), 1.0);
    assert_eq!(lr_multistep(9, 1.0, &[3, 6], 0.5), 0.25);
}

#[test]
fn default_milestones_follow_total() {
    let mut cfg = small_config();
    cfg.total_iters = 1000;
    assert_eq!(cfg.milestones(), vec![500, 750, 900]);
}

#[test]
fn equal_seeds_give_identical_curves() {
    let run = || {
        let mut t = Trainer::<f64>::new(small_config()).unwrap();
        t.run(|_, _, _| {}).unwrap().losses
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 4);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn checkpoint_resume_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut a = Trainer::<f64>::new(small_config()).unwrap();
    a.step().unwrap();
    a.step().unwrap();
    a.checkpoint().save(&path).unwrap();
    let la = a.step().unwrap();

    let mut b = Trainer::<f64>::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(b.iteration, 2);
    let lb = b.step().unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.adam, b.adam);
}

#[test]
fn checkpoint_rejects_corruption() {
    let t = Trainer::<f64>::new(small_config()).unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(Checkpoint::<f64>::from_reader(&mut bad.as_slice()).is_err());
    let short = &bytes[..bytes.len() - 3];
    assert!(Checkpoint::<f64>::from_reader(&mut &short[..]).is_err());
    let ok = Checkpoint::<f64>::from_reader(&mut bytes.as_slice()).unwrap();
    assert_eq!(ok.config, t.config);
}

#[test]
fn augmentation_keeps_loss_statistics() {
    // Per-patch L1 of the bicubic upscale against HR; dihedral maps commute
    // with the separable resampler, so the two means should agree.
    let images: Vec<_> = (0..4)
        .map(|i| (format!("m{i}"), synth_image(40 + i, 64, 64, Family::Mixed).unwrap()))
        .collect();
    let pairs = make_pairs::<f64>(&images, 2).unwrap();
    let mean_loss = |augment: bool, seed: u64| {
        let mut rng = common::rng(seed);
        let mut total = 0.0;
        for _ in 0..1000 {
            let (lr, hr) = sample_batch(&pairs, 1, 12, 2, augment, &mut rng).unwrap();
            let up = dlgsa::image::bicubic_resize_tensor(&lr, 24, 24).unwrap();
            let l: f64 = up.data().iter().zip(hr.data()).map(|(a, b)| (a - b).abs()).sum();
            total += l / hr.len() as f64;
        }
        total / 1000.0
    };
    let (plain, aug) = (mean_loss(false, 1), mean_loss(true, 2));
    assert!((aug - plain).abs() < 0.1 * plain, "{plain} vs {aug}");
}

#[test]
fn batches_are_aligned_crops() {
    let images = vec![("a".to_string(), synth_image(1, 32, 24, Family::Blobs).unwrap())];
    let pairs = make_pairs::<f64>(&images, 2).unwrap();
    let mut rng = common::rng(4);
    let (lr, hr) = sample_batch(&pairs, 3, 6, 2, false, &mut rng).unwrap();
    assert_eq!(lr.shape(), Shape::new(3, 3, 6, 6));
    assert_eq!(hr.shape(), Shape::new(3, 3, 12, 12));
    assert!(sample_batch(&pairs, 1, 13, 2, false, &mut rng).is_err());
}

#[test]
fn bicubic_baseline_is_sane() {
    let images: Vec<_> = (0..4)
        .map(|i| (format!("b{i}"), synth_image(i, 48, 48, Family::Blobs).unwrap()))
        .collect();
    let r = evaluate_bicubic(&images, 2);
    assert!(r.errors.is_empty());
    assert!(r.scores.iter().all(|s| s.psnr.is_finite() && s.psnr > 20.0), "{}", r.to_text());
}

#[test]
fn evaluation_records_errors_and_continues() {
    let cfg = small_config();
    let t = Trainer::<f64>::new(cfg).unwrap();
    let mut images = t.images().to_vec();
    images.insert(1, ("tiny".into(), dlgsa::image::ImageRGB8::new(1, 1, vec![0; 3]).unwrap()));
    let r = evaluate(&t.model, &images, None);
    assert_eq!(r.scores.len(), 3);
    assert_eq!(r.errors.len(), 1);
    assert_eq!(r.errors[0].0, "tiny");
}

#[test]
fn tlc_single_tile_matches_plain_evaluation() {
    let t = Trainer::<f64>::new(small_config()).unwrap();
    // 24px HR at x2 gives 12px LR, one tile at window 12.
    let a = evaluate(&t.model, t.images(), None);
    let b = evaluate(&t.model, t.images(), Some(12));
    assert_eq!(a, b);
}

#[test]
fn loss_decreases_over_training() {
    let mut cfg = small_config();
    cfg.total_iters = 200;
    cfg.precision = Precision::F32;
    cfg.lr0 = 2e-3;
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let log = t.run(|_, _, _| {}).unwrap();
    let head: f64 = log.losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = log.losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn directory_dataset_reads_hr_subdir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("HR")).unwrap();
    for (i, name) in ["b.ppm", "a.ppm"].into_iter().enumerate() {
        let img = synth_image(i as u64, 16, 16, Family::Checker).unwrap();
        std::fs::write(dir.path().join("HR").join(name), write_ppm(&img)).unwrap();
    }
    std::fs::write(dir.path().join("HR").join("notes.txt"), "x").unwrap();
    let imgs = load_images(&Dataset::Directory(dir.path().to_path_buf())).unwrap();
    let names: Vec<_> = imgs.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["a", "b"]);

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_images(&Dataset::Directory(empty.path().to_path_buf())), Err(Error::Io(_))));
    assert!(matches!(load_images(&Dataset::Directory("/nonexistent/x".into())), Err(Error::Io(_))));
}

#[test]
fn nan_loss_names_first_bad_node() {
    let mut t = Trainer::<f64>::new(small_config()).unwrap();
    let name = t.model.params.iter().next().unwrap().0.clone();
    t.model.params.get_mut(&name).unwrap().data_mut()[0] = f64::NAN;
    match t.step() {
        Err(Error::Numeric(msg)) => assert!(msg.contains("non-finite"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}
