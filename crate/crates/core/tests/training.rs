mod common;

use common::{rng, uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use wta_core::dataset::{gen_synthetic, SyntheticSpec};
use wta_core::index::select_batch;
use wta_core::layer::{forward_dense, softmax_xent_dense};
use wta_core::trainer::{
    evaluate_top1, fit, sweep_eval, train_batch_dense, train_batch_hashed, EvalMode, HashedTrainer,
    Phase,
};
use wta_core::wta::{gen_permutations, hash_matrix};
use wta_core::{DenseMatrix, LayerParams, Mode, MultiHashIndex, TrainConfig, WtaConfig};

fn pair_hash_cfg(k: usize, q: usize) -> WtaConfig {
    // two bins per table: with enough tables every unit shares some bin with x
    WtaConfig {
        input_dim: k,
        num_hashes: q,
        sections: 1,
        elems: 2,
        seed: 77,
    }
}

fn dense_loss(p: &LayerParams, x: &DenseMatrix, labels: &[u32]) -> f64 {
    softmax_xent_dense(&forward_dense(x, p.weights()).unwrap(), labels)
        .unwrap()
        .0
}

#[test]
fn full_activation_hashed_training_tracks_dense() {
    let mut r = rng(1);
    let (n, k, m) = (12, 16, 8);
    let mut cfg = TrainConfig::new(Mode::Hashed, k);
    cfg.active_units = n;
    cfg.learning_rate = 0.3;
    cfg.wta = pair_hash_cfg(k, 64);
    let mut dense = LayerParams::init_uniform(n, k, 3);
    let mut hashed = dense.clone();
    let mut trainer = HashedTrainer::new(cfg.wta).unwrap();
    for _ in 0..10 {
        let x = uniform(&mut r, m, k);
        let labels: Vec<u32> = (0..m).map(|_| r.random_range(0..n as u32)).collect();
        // every unit must be voted for this to be a full-activation run
        let idx = MultiHashIndex::build(hashed.weights(), trainer.perms()).unwrap();
        let sets = select_batch(&hash_matrix(&x, trainer.perms()).unwrap(), &idx, n, &[]).unwrap();
        assert!(sets.iter().all(|s| s.len() == n));
        let ld = train_batch_dense(&mut dense, &x, &labels, &cfg)
            .unwrap()
            .loss;
        let lh = trainer
            .train_batch(&mut hashed, &x, &labels, &cfg)
            .unwrap()
            .loss;
        assert!((ld - lh).abs() < 1e-6);
    }
    for (a, b) in dense
        .weights()
        .as_slice()
        .iter()
        .zip(hashed.weights().as_slice())
    {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
}

#[test]
fn zero_learning_rate_only_measures() {
    let mut r = rng(2);
    let (n, k) = (6, 8);
    let x = uniform(&mut r, 5, k);
    let labels = [0u32, 1, 2, 3, 5];
    let mut cfg = TrainConfig::new(Mode::Hashed, k);
    cfg.learning_rate = 0.0;
    cfg.active_units = n;
    cfg.wta = pair_hash_cfg(k, 64);
    let mut p = LayerParams::init_uniform(n, k, 1);
    let before = p.clone();
    let perms = gen_permutations(cfg.wta).unwrap();
    let out = train_batch_hashed(&mut p, &x, &labels, &perms, &cfg).unwrap();
    assert_eq!(p, before);
    assert!((out.loss - dense_loss(&p, &x, &labels)).abs() < 1e-6);
    assert_eq!(out.phases.calls(Phase::Update), 0);
    let out = train_batch_dense(&mut p, &x, &labels, &cfg).unwrap();
    assert_eq!(p, before);
    assert!((out.loss - dense_loss(&p, &x, &labels)).abs() < 1e-12);
}

/// One step on a single sample with label 0, two units and `y_i = w_i·x0`.
fn two_class_step(w0: f64, w1: f64, x0: f64, lr: f64) -> (f64, f64) {
    let (y0, y1) = (w0 * x0, w1 * x0);
    let p0 = y0.exp() / (y0.exp() + y1.exp());
    (w0 - lr * (p0 - 1.0) * x0, w1 - lr * (1.0 - p0) * x0)
}

#[test]
fn two_class_closed_form_step() {
    let (w0, w1, x0, lr) = (0.3f32, -0.8f32, 1.7f32, 0.5f32);
    let (e0, e1) = two_class_step(w0 as f64, w1 as f64, x0 as f64, lr as f64);

    let mut cfg = TrainConfig::new(Mode::Dense, 1);
    cfg.learning_rate = lr;
    let mut p = LayerParams::new(DenseMatrix::from_vec(2, 1, vec![w0, w1]).unwrap()).unwrap();
    let x = DenseMatrix::from_vec(1, 1, vec![x0]).unwrap();
    train_batch_dense(&mut p, &x, &[0], &cfg).unwrap();
    assert!((p.weights().get(0, 0) as f64 - e0).abs() < 1e-6);
    assert!((p.weights().get(1, 0) as f64 - e1).abs() < 1e-6);

    // Hashing needs K >= 2; a zero second input keeps the same closed form.
    // Both rows and x have their larger entry first, so both units are voted.
    let mut cfg = TrainConfig::new(Mode::Hashed, 2);
    cfg.learning_rate = lr;
    cfg.active_units = 2;
    cfg.wta = pair_hash_cfg(2, 4);
    let mut p =
        LayerParams::new(DenseMatrix::from_vec(2, 2, vec![w0, -2.0, w1, -2.0]).unwrap()).unwrap();
    let x = DenseMatrix::from_vec(1, 2, vec![x0, 0.0]).unwrap();
    let perms = gen_permutations(cfg.wta).unwrap();
    train_batch_hashed(&mut p, &x, &[0], &perms, &cfg).unwrap();
    assert!((p.weights().get(0, 0) as f64 - e0).abs() < 1e-6);
    assert!((p.weights().get(1, 0) as f64 - e1).abs() < 1e-6);
    assert_eq!(p.weights().get(0, 1), -2.0);
}

#[test]
fn zero_inputs_give_log_n_loss() {
    let cfg = TrainConfig::new(Mode::Dense, 5);
    let mut p = LayerParams::init_uniform(7, 5, 4);
    let out = train_batch_dense(&mut p, &DenseMatrix::zeros(3, 5), &[0, 1, 6], &cfg).unwrap();
    assert!((out.loss - 7f64.ln()).abs() < 1e-9);
}

#[test]
fn dense_step_descends_on_its_batch() {
    let mut r = rng(3);
    let mut decreased = 0;
    for t in 0..100 {
        let (n, k, m) = (
            r.random_range(2..20),
            r.random_range(2..20),
            r.random_range(1..16),
        );
        let x = uniform(&mut r, m, k);
        let labels: Vec<u32> = (0..m).map(|_| r.random_range(0..n as u32)).collect();
        let mut cfg = TrainConfig::new(Mode::Dense, k);
        cfg.learning_rate = 1e-2;
        let mut p = LayerParams::init_uniform(n, k, t);
        let before = train_batch_dense(&mut p, &x, &labels, &cfg).unwrap().loss;
        if dense_loss(&p, &x, &labels) < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 95, "{decreased}/100");
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec::new(20, 32, 30, 0.05, 9)
}

#[test]
fn dense_fit_is_deterministic_and_learns() {
    let data = gen_synthetic(small_spec()).unwrap();
    let mut cfg = TrainConfig::new(Mode::Dense, 32);
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.eval_every = 10;
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&data, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert!(
        a.report.final_top1().unwrap() >= 0.95,
        "{:?}",
        a.report.final_top1()
    );
    let pts = &a.report.points;
    assert!(pts.windows(2).all(|w| w[0].elapsed_s <= w[1].elapsed_s));
    assert!(pts.iter().any(|p| p.batch % 10 == 0 && p.batch > 0));
    let mut csv = Vec::new();
    a.report.write_csv(&mut csv).unwrap();
    let back = wta_core::TrainReport::read_points_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
    assert_eq!(&back, pts);
}

#[test]
fn hashed_fit_tracks_dense_on_small_task() {
    let data = gen_synthetic(small_spec()).unwrap();
    let mut cfg = TrainConfig::new(Mode::Hashed, 32);
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.active_units = 4;
    let hashed = fit(&data, &cfg).unwrap();
    cfg.mode = Mode::Dense;
    let dense = fit(&data, &cfg).unwrap();
    let (h, d) = (
        hashed.report.final_top1().unwrap(),
        dense.report.final_top1().unwrap(),
    );
    assert!(h >= d - 0.05, "hashed {h} dense {d}");
    let ph = hashed.report.phases;
    for p in Phase::ALL {
        assert!(ph.calls(p) > 0, "{p:?}");
    }
}

#[test]
fn zero_epochs_report_initial_point_only() {
    let data = gen_synthetic(small_spec()).unwrap();
    let mut cfg = TrainConfig::new(Mode::Dense, 32);
    cfg.epochs = 0;
    let out = fit(&data, &cfg).unwrap();
    assert_eq!(out.report.points.len(), 1);
    assert_eq!(out.report.points[0].batch, 0);
    assert_eq!(out.params, LayerParams::init_uniform(20, 32, cfg.seed));
}

#[test]
fn fit_rejects_bad_inputs() {
    let data = gen_synthetic(small_spec()).unwrap();
    let mut cfg = TrainConfig::new(Mode::Hashed, 32);
    cfg.active_units = 21;
    assert!(fit(&data, &cfg).is_err());
    cfg.active_units = 4;
    cfg.wta.input_dim = 31;
    assert!(fit(&data, &cfg).is_err());
    let mut cfg = TrainConfig::new(Mode::Dense, 32);
    cfg.batch_size = 10_000;
    assert!(fit(&data, &cfg).is_err());
}

fn class_centroids(data: &wta_core::Dataset) -> LayerParams {
    let (n, k) = (data.num_classes as usize, data.dim());
    let mut w = DenseMatrix::zeros(n, k);
    let mut counts = vec![0f32; n];
    for (row, &l) in data.features.iter_rows().zip(&data.labels) {
        counts[l as usize] += 1.0;
        for (a, b) in w.row_mut(l as usize).iter_mut().zip(row) {
            *a += b;
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        for v in w.row_mut(i) {
            *v /= c;
        }
    }
    LayerParams::new(w).unwrap()
}

#[test]
fn evaluation_modes() {
    let data = gen_synthetic(small_spec()).unwrap();
    let w = class_centroids(&data);
    let dense = evaluate_top1(&w, &data.features, &data.labels, EvalMode::Dense).unwrap();
    assert!(dense >= 0.95, "{dense}");

    let perms = gen_permutations(pair_hash_cfg(32, 128)).unwrap();
    let full = EvalMode::Hashed {
        perms: &perms,
        active_units: 20,
    };
    let hashed = evaluate_top1(&w, &data.features, &data.labels, full).unwrap();
    assert_eq!(hashed, dense);

    let mut shuffled = data.labels.clone();
    shuffled.shuffle(&mut rng(5));
    let chance = evaluate_top1(&w, &data.features, &shuffled, EvalMode::Dense).unwrap();
    let (p, m) = (1.0 / 20.0, data.len() as f64);
    assert!(
        (chance - p).abs() <= 3.0 * (p * (1.0 - p) / m).sqrt(),
        "{chance}"
    );

    let rows = sweep_eval(
        &w,
        &data.features,
        &data.labels,
        &[1, 4, 20],
        &[64, 128],
        pair_hash_cfg(32, 1),
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows
        .iter()
        .filter(|r| r.active_units == 20 && r.num_hashes == 128)
    {
        assert_eq!(r.top1, dense);
    }
}
