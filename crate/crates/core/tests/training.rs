use std::collections::HashSet;
use std::path::Path;

use ngo_core::formats::{read_metric_log, Checkpoint, MetricLine, MetricLog};
use ngo_core::training::{
    gen_dataset, global_loss, global_samples, item_seed, local_loss, pairs_of, train_global, train_local, LocalModel,
    Pipeline, PipelineConfig, RunPaths, Split, TrainConfig,
};
use ngo_tensor::{Graph, Tensor};
use proptest::prelude::*;

fn loss_of(pred: &[f64], gt: &[f64], lambda_rot: f64) -> f64 {
    let n = pred.len() / 3;
    let mut g = Graph::<f64>::new();
    let p = g.constant(Tensor::new(&[n, 3], pred.to_vec()).unwrap());
    let y = g.constant(Tensor::new(&[n, 3], gt.to_vec()).unwrap());
    let l = local_loss(&mut g, p, y, lambda_rot).unwrap();
    g.value(l)[0]
}

fn wrap(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    r
}

#[test]
fn local_loss_hand_cases() {
    assert_eq!(loss_of(&[0.0; 3], &[0.0; 3], 1.0), 0.0);
    assert!((loss_of(&[1.0, 0.0, 0.0], &[0.0; 3], 1.0) - 1.0).abs() < 1e-12);
    // mean over the batch, rotation weighted
    let l = loss_of(&[1.0, 2.0, 0.5, 0.0, 0.0, 0.0], &[0.0; 6], 2.0);
    assert!((l - (1.0 + 4.0 + 2.0 * 0.25) / 2.0).abs() < 1e-12);
    // headings on either side of ±π are close
    let l = loss_of(&[0.0, 0.0, 3.1], &[0.0, 0.0, -3.1], 1.0);
    let d = 6.2 - std::f64::consts::TAU;
    assert!((l - d * d).abs() < 1e-12, "{l}");
}

#[test]
fn global_loss_sums_iterates() {
    let gt = vec![0.0; 6];
    let iters = [vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0]];
    let mut g = Graph::<f64>::new();
    let y = g.constant(Tensor::new(&[2, 3], gt).unwrap());
    let ps: Vec<_> = iters.iter().map(|p| g.constant(Tensor::new(&[2, 3], p.clone()).unwrap())).collect();
    let all = global_loss(&mut g, &ps, y, 1.0, false).unwrap();
    let last = global_loss(&mut g, &ps, y, 1.0, true).unwrap();
    assert!((g.value(all)[0] - (0.5 + 2.0)).abs() < 1e-12);
    assert!((g.value(last)[0] - 2.0).abs() < 1e-12);
    assert!(global_loss(&mut g, &[], y, 1.0, false).is_err());
    let short = g.constant(Tensor::zeros(&[1, 3]));
    assert!(global_loss(&mut g, &[short], y, 1.0, false).is_err());
}

proptest! {
    #[test]
    fn local_loss_matches_recomputation(
        rows in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -7.0f64..7.0, -2.0f64..2.0, -2.0f64..2.0, -7.0f64..7.0), 1..12),
        lambda in 0.0f64..5.0,
    ) {
        let pred: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1, r.2]).collect();
        let gt: Vec<f64> = rows.iter().flat_map(|r| [r.3, r.4, r.5]).collect();
        let expected = rows
            .iter()
            .map(|r| (r.0 - r.3).powi(2) + (r.1 - r.4).powi(2) + lambda * wrap(r.2 - r.5).powi(2))
            .sum::<f64>()
            / rows.len() as f64;
        let got = loss_of(&pred, &gt, lambda);
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn pipeline_items_are_unique_and_complete(workers in 1usize..5, total in 0usize..40, skip_frac in 0.0f64..1.0) {
        let skip = (total as f64 * skip_frac) as usize;
        let c = PipelineConfig { workers, capacity: 3, deterministic: false, base_seed: 9, total, skip };
        let items: Vec<_> = Pipeline::spawn(c, |seed, _, _| Ok(seed)).unwrap().map(|r| r.unwrap()).collect();
        prop_assert_eq!(items.len(), total - skip);
        let keys: HashSet<_> = items.iter().map(|i| (i.worker, i.seq)).collect();
        prop_assert_eq!(keys.len(), items.len());
        for it in &items {
            prop_assert_eq!(it.value, item_seed(9, it.worker, it.seq));
        }
        // the skipped prefix plus this run covers the same items as an unbroken run
        let full = PipelineConfig { skip: 0, ..c };
        let all: HashSet<_> = Pipeline::spawn(full, |s, _, _| Ok(s)).unwrap().map(|r| { let r = r.unwrap(); (r.worker, r.seq) }).collect();
        prop_assert!(keys.is_subset(&all));
        prop_assert_eq!(all.len(), total);
    }
}

#[test]
fn item_seeds_differ_across_coordinates() {
    let mut seen = HashSet::new();
    for base in 0..4 {
        for w in 0..4 {
            for s in 0..16 {
                assert!(seen.insert(item_seed(base, w, s)));
            }
        }
    }
}

#[test]
fn generated_datasets_do_not_depend_on_worker_count_in_deterministic_mode() {
    let one = TrainConfig { deterministic: true, workers: 1, ..TrainConfig::default() };
    let four = TrainConfig { deterministic: true, workers: 4, ..TrainConfig::default() };
    let a = gen_dataset(&one, Split::Seen, 3, 12, 5).unwrap();
    let b = gen_dataset(&four, Split::Seen, 3, 12, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pipeline_throughput_scales_with_workers() {
    // needs real cores; skipped otherwise
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cores < 4 {
        eprintln!("skipping: {cores} core(s) available");
        return;
    }
    let cfg = TrainConfig { batch_size: 16, ..TrainConfig::default() };
    let time = |workers: usize| {
        let c = PipelineConfig { workers, capacity: 8, deterministic: false, base_seed: 1, total: 32, skip: 0 };
        let job = cfg.clone();
        let start = std::time::Instant::now();
        let n = Pipeline::spawn(c, move |s, _, _| ngo_core::training::local_batch(&job, s)).unwrap().count();
        assert_eq!(n, 32);
        start.elapsed().as_secs_f64()
    };
    let (t1, t4) = (time(1), time(4));
    assert!(t1 / t4 >= 2.5, "speedup {:.2}", t1 / t4);
}

fn tiny_local(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed,
        epochs,
        items_per_epoch: 8,
        batch_size: 4,
        pairs_per_trajectory: 4,
        traj_len: 24,
        deterministic: true,
        eval_every: 1,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

fn paths(dir: &Path, name: &str, resume: Option<&Path>) -> RunPaths {
    RunPaths {
        checkpoint: dir.join(format!("{name}.ngoc")),
        metrics: dir.join(format!("{name}.metrics.csv")),
        resume: resume.map(Path::to_path_buf),
    }
}

fn test_pairs(cfg: &TrainConfig) -> ngo_core::training::PairBatch {
    let trajs = gen_dataset(cfg, Split::Seen, 2, 9, 77).unwrap();
    pairs_of(&trajs, cfg.max_range()).unwrap()
}

#[test]
fn local_training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local(3, 2);
    let test = test_pairs(&cfg);
    train_local(&cfg, &paths(dir.path(), "a", None), &test).unwrap();
    train_local(&cfg, &paths(dir.path(), "b", None), &test).unwrap();
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.ngoc"), read("b.ngoc"));
    assert_eq!(read("a.metrics.csv"), read("b.metrics.csv"));

    // stop after epoch 1, then continue from its checkpoint
    let c = paths(dir.path(), "c", None);
    std::fs::copy(dir.path().join("a.epoch1.ngoc"), &c.checkpoint).unwrap();
    let full_log = std::fs::read_to_string(dir.path().join("a.metrics.csv")).unwrap();
    let mut partial: String =
        full_log.lines().filter(|l| MetricLine::parse(l).unwrap().step <= 2).map(|l| format!("{l}\n")).collect();
    partial.push_str("9,train,loss,1e0\n"); // a stale record past the checkpoint
    std::fs::write(&c.metrics, partial).unwrap();
    let resumed = paths(dir.path(), "c", Some(&dir.path().join("a.epoch1.ngoc")));
    train_local(&cfg, &resumed, &test).unwrap();
    assert_eq!(read("a.ngoc"), read("c.ngoc"));
    assert_eq!(read("a.metrics.csv"), read("c.metrics.csv"));

    // finished runs and other configs refuse to resume
    let done = paths(dir.path(), "d", Some(&dir.path().join("a.ngoc")));
    assert!(train_local(&cfg, &done, &test).is_err());
    let other = TrainConfig { lr: 2e-3, ..cfg.clone() };
    let mismatch = paths(dir.path(), "e", Some(&dir.path().join("a.epoch1.ngoc")));
    assert!(train_local(&other, &mismatch, &test).is_err());
}

#[test]
fn local_training_logs_every_update_and_epoch_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local(0, 1);
    let p = paths(dir.path(), "run", None);
    let ck = train_local(&cfg, &p, &test_pairs(&cfg)).unwrap();
    assert_eq!(ck.meta("epoch"), Some("1"));
    assert_eq!(ck.meta("updates"), Some("2"));
    assert!(dir.path().join("run.epoch1.ngoc").exists());
    let lines = read_metric_log(&p.metrics).unwrap();
    let train: Vec<_> = lines.iter().filter(|l| l.split == "train").map(|l| l.step).collect();
    assert_eq!(train, vec![1, 2]);
    for step in [0, 1, 2] {
        for m in ["loss", "rmse_trans", "rmse_rot"] {
            assert!(lines.iter().any(|l| l.step == step && l.split == "test" && l.metric == m), "{step} {m}");
        }
    }
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local(4, 0);
    let p = paths(dir.path(), "init", None);
    let ck = train_local(&cfg, &p, &test_pairs(&cfg)).unwrap();
    assert_eq!(ck.meta("updates"), Some("0"));
    let model = LocalModel::load(&p.checkpoint).unwrap();
    let fresh = model.net.init_params::<f32>(4);
    for (name, t) in fresh.iter() {
        assert_eq!(model.params.get(name).unwrap().data(), t.data(), "{name}");
    }
}

#[test]
fn global_training_leaves_the_local_checkpoint_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let lcfg = tiny_local(1, 1);
    let lp = paths(dir.path(), "local", None);
    train_local(&lcfg, &lp, &test_pairs(&lcfg)).unwrap();
    let before = std::fs::read(&lp.checkpoint).unwrap();
    let local = LocalModel::load(&lp.checkpoint).unwrap();
    let snapshot = local.params.clone();

    let gcfg = TrainConfig {
        seed: 2,
        epochs: 1,
        items_per_epoch: 2,
        batch_size: 1,
        traj_len: 16,
        n_halvings: 1,
        iterations: 2,
        d_f: 16,
        hidden: 16,
        n_layers: 3,
        deterministic: true,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let trajs = gen_dataset(&gcfg, Split::Seen, 2, 17, 88).unwrap();
    let test = global_samples(&local, &trajs, 2).unwrap();
    let gp = paths(dir.path(), "global", None);
    let ck = train_global(&gcfg, &local, &gp, &test).unwrap();

    assert_eq!(std::fs::read(&lp.checkpoint).unwrap(), before);
    for (name, t) in snapshot.iter() {
        assert_eq!(local.params.get(name).unwrap().data(), t.data());
    }
    assert!(ck.tensors.iter().all(|(n, _)| !n.starts_with("local.")));
    assert_eq!(ck.meta("stage"), Some("global"));
    // the global run is itself reproducible
    let again = paths(dir.path(), "again", None);
    train_global(&gcfg, &local, &again, &test).unwrap();
    assert_eq!(std::fs::read(&gp.checkpoint).unwrap(), std::fs::read(&again.checkpoint).unwrap());
    // and a local checkpoint is not accepted as a global one
    assert!(ngo_core::training::GlobalModel::from_checkpoint(&Checkpoint::read(&lp.checkpoint).unwrap(), 256).is_err());
}

#[test]
fn metric_lines_follow_the_grammar() {
    let l = MetricLine::parse("12,test,rmse_pos,1.5e-1").unwrap();
    assert_eq!((l.step, l.split.as_str(), l.metric.as_str(), l.value), (12, "test", "rmse_pos", 0.15));
    assert_eq!(MetricLine::parse(&l.render()).unwrap(), l);
    for bad in [
        "",
        "x,test,loss,1",
        "1,test,loss",
        "1,test,loss,1,2",
        "1,te st,loss,1",
        "1,,loss,1",
        "1,test,loss,abc",
        "-1,test,loss,1",
    ] {
        assert!(MetricLine::parse(bad).is_none(), "{bad:?}");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut log = MetricLog::create(&path).unwrap();
    log.log(1, "train", "loss", 0.25).unwrap();
    log.log(2, "test", "rmse_trans", f64::INFINITY).unwrap();
    drop(log);
    let lines = read_metric_log(&path).unwrap();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].value.is_infinite());
    std::fs::write(&path, "1,train,loss,1\nnot a line\n").unwrap();
    let err = read_metric_log(&path).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn metric_lines_round_trip(step in any::<u64>(), split in "[a-z0-9_.-]{1,8}", metric in "[a-zA-Z0-9_]{1,12}", value in any::<f64>()) {
        let l = MetricLine { step, split, metric, value };
        let back = MetricLine::parse(&l.render()).unwrap();
        prop_assert_eq!(back.step, l.step);
        prop_assert!(back.value == l.value || (back.value.is_nan() && l.value.is_nan()));
    }
}
