use std::path::{Path, PathBuf};
use std::time::Instant;

use ngo_core::eval::{estimate, model_labels, render_report, write_report, write_split, GlobalVariant};
use ngo_core::formats::{read_dataset, write_dataset};
use ngo_core::mazeworld::Trajectory;
use ngo_core::nets::gradcheck::check_nets;
use ngo_core::training::{
    default_test_set, ensure_parent, gen_dataset, global_samples, pairs_of, train_global as run_global,
    train_local as run_local, GlobalModel, LocalModel, RunPaths, Split, Stage, TrainConfig,
};
use ngo_core::Error;
use ngo_tensor::checks::{broken_backward_fixture, check_op, check_op_against_f64, OPS};

use crate::{
    EvalArgs, Failure, GenDataArgs, GradCheckArgs, GradModule, SplitArg, TrainFlags, TrainGlobalArgs, TrainLocalArgs,
};

type CmdResult = Result<(), Failure>;

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Seen => Split::Seen,
        SplitArg::Unseen => Split::Unseen,
    }
}

pub fn gen_data(a: GenDataArgs) -> CmdResult {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = a.maze_min {
        cfg.maze_min = v;
    }
    if let Some(v) = a.maze_max {
        cfg.maze_max = v;
    }
    cfg.workers = a.workers;
    cfg.deterministic = a.deterministic;
    cfg.validate(Stage::Local)?;
    if a.traj_len < 2 {
        return Err(Failure::Usage("invalid --traj-len: need at least 2 frames".into()));
    }
    let start = Instant::now();
    let trajs = gen_dataset(&cfg, split_of(a.split), a.n_traj, a.traj_len, a.seed)?;
    ensure_parent(&a.out)?;
    write_dataset(&a.out, &trajs)?;
    println!(
        "wrote {} trajectories of {} frames to {} in {:.1}s",
        trajs.len(),
        a.traj_len,
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Defaults, then `--config`, then `--set`, then named flags.
fn resolve(stage: Stage, f: &TrainFlags, extra: &[(&str, Option<String>)]) -> Result<TrainConfig, Failure> {
    let mut cfg = TrainConfig::for_stage(stage);
    if let Some(path) = &f.config {
        cfg.apply_file(path)?;
    }
    for kv in &f.set {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| Failure::Usage(format!("invalid --set `{kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    let named = [
        ("seed", f.seed.map(|v| v.to_string())),
        ("epochs", f.epochs.map(|v| v.to_string())),
        ("items_per_epoch", f.items_per_epoch.map(|v| v.to_string())),
        ("batch_size", f.batch_size.map(|v| v.to_string())),
        ("lr", f.lr.map(|v| v.to_string())),
        ("workers", f.workers.map(|v| v.to_string())),
        ("eval_every", f.eval_every.map(|v| v.to_string())),
        ("maze_min", f.maze_min.map(|v| v.to_string())),
        ("maze_max", f.maze_max.map(|v| v.to_string())),
    ];
    for (k, v) in named.iter().chain(extra) {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if f.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate(stage)?;
    Ok(cfg)
}

fn run_paths(out: &Path, f: &TrainFlags) -> Result<RunPaths, Failure> {
    ensure_parent(out)?;
    let metrics = f.metrics.clone().unwrap_or_else(|| out.with_extension("metrics.csv"));
    ensure_parent(&metrics)?;
    Ok(RunPaths { checkpoint: out.to_path_buf(), metrics, resume: f.resume.clone() })
}

fn test_set(cfg: &TrainConfig, f: &TrainFlags) -> Result<Vec<Trajectory>, Failure> {
    Ok(match &f.test_data {
        Some(path) => read_dataset(path)?,
        None => default_test_set(cfg, Split::Seen, f.test_size)?,
    })
}

pub fn train_local(a: TrainLocalArgs) -> CmdResult {
    let cfg = resolve(Stage::Local, &a.flags, &[])?;
    let paths = run_paths(&a.out, &a.flags)?;
    let start = Instant::now();
    let test = pairs_of(&test_set(&cfg, &a.flags)?, cfg.max_range())?;
    let ck = run_local(&cfg, &paths, &test)?;
    println!(
        "local stage: epoch {} written to {} ({:.1}s); metrics in {}",
        ck.meta("epoch").unwrap_or("0"),
        a.out.display(),
        start.elapsed().as_secs_f64(),
        paths.metrics.display()
    );
    Ok(())
}

pub fn train_global(a: TrainGlobalArgs) -> CmdResult {
    let extra = [
        ("iterations", a.iterations.map(|v| v.to_string())),
        ("traj_len", a.traj_len.map(|v| v.to_string())),
        ("n_halvings", a.n_halvings.map(|v| v.to_string())),
        ("attention", a.attention.clone()),
    ];
    let cfg = resolve(Stage::Global, &a.flags, &extra)?;
    let paths = run_paths(&a.out, &a.flags)?;
    let start = Instant::now();
    let local = LocalModel::load(&a.local_ckpt)?;
    let window = 1usize << cfg.n_halvings;
    let test = global_samples(&local, &test_set(&cfg, &a.flags)?, window)?;
    let ck = run_global(&cfg, &local, &paths, &test)?;
    println!(
        "global stage (M={}): epoch {} written to {} ({:.1}s); metrics in {}",
        cfg.iterations,
        ck.meta("epoch").unwrap_or("0"),
        a.out.display(),
        start.elapsed().as_secs_f64(),
        paths.metrics.display()
    );
    Ok(())
}

/// Splits `LABEL=PATH`; a bare path has no label.
fn labeled(s: &str) -> (Option<String>, PathBuf) {
    match s.split_once('=') {
        Some((l, p)) if !l.is_empty() && !l.contains(['/', '\\']) => (Some(l.to_string()), PathBuf::from(p)),
        _ => (None, PathBuf::from(s)),
    }
}

fn valid_label(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let local = LocalModel::load(&a.local_ckpt)?;
    let in_dim = local.net.feature_dim();
    let mut globals: Vec<GlobalVariant> = Vec::new();
    for spec in &a.global_ckpt {
        let (label, path) = labeled(spec);
        let model =
            GlobalModel::load(&path, in_dim).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        let iterations = a.iterations.unwrap_or(model.config.iterations);
        if iterations == 0 {
            return Err(Failure::Usage("invalid --iterations: must be at least 1".into()));
        }
        let mut label = label.unwrap_or_else(|| format!("global_m{iterations}"));
        let base = label.clone();
        let mut k = 2;
        while globals.iter().any(|g| g.label == label) || label == "local" {
            label = format!("{base}_{k}");
            k += 1;
        }
        if !valid_label(&label) {
            return Err(Failure::Usage(format!("invalid --global-ckpt label `{label}`")));
        }
        globals.push(GlobalVariant { label, model, iterations });
    }
    let window = match globals.first() {
        Some(g) => g.model.net.window(),
        None => 1 << local.config.n_halvings,
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let labels = model_labels(&globals);
    let mut rows = Vec::new();
    let mut seen_splits = Vec::new();
    for spec in &a.data {
        let (split, path) = labeled(spec);
        let split = split.unwrap_or_else(|| path.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string());
        if !valid_label(&split) || seen_splits.contains(&split) {
            return Err(Failure::Usage(format!("invalid --data split name `{split}` (must be unique, [A-Za-z0-9_-])")));
        }
        seen_splits.push(split.clone());
        let trajs = read_dataset(&path)?;
        if trajs.is_empty() {
            return Err(Failure::Usage(format!("invalid --data: {} holds no trajectories", path.display())));
        }
        let estimates = estimate(&trajs, &local, &globals, window)?;
        rows.extend(write_split(&a.out_dir, &split, &labels, &estimates, a.attention_trajs)?);
    }
    let report = write_report(&a.out_dir, &rows)?;
    print!("{}", render_report(&report));
    Ok(())
}

pub fn grad_check(a: GradCheckArgs) -> CmdResult {
    let start = Instant::now();
    // (name, precision, max rel err, worst offender, tolerance)
    let mut results: Vec<(String, &str, f64, String, f64)> = Vec::new();
    match a.module {
        GradModule::Tensor => {
            for op in OPS {
                let hi = check_op::<f64>(op, a.seed, 1e-6).map_err(Error::from)?;
                let lo = check_op_against_f64::<f32>(op, a.seed, 1e-6).map_err(Error::from)?;
                for (c, precision, tol) in [(hi, "f64", 1e-6), (lo, "f32", 1e-3)] {
                    let worst = format!("{}[{}]", c.report.worst_param, c.report.worst_index);
                    results.push((op.to_string(), precision, c.report.max_rel_err, worst, tol));
                }
            }
        }
        GradModule::Nets => {
            for c in check_nets(a.seed)? {
                let worst = format!("{}[{}]", c.report.worst_param, c.report.worst_index);
                results.push((c.name.to_string(), c.precision, c.report.max_rel_err, worst, 5e-3));
            }
        }
    }
    if a.inject_broken {
        let r = broken_backward_fixture::<f64>(1e-6).map_err(Error::from)?;
        results.push((
            "broken_fixture".into(),
            "f64",
            r.max_rel_err,
            format!("{}[{}]", r.worst_param, r.worst_index),
            1e-6,
        ));
    }
    let mut failed = 0;
    let mut max_err: f64 = 0.0;
    for (name, precision, err, worst, tol) in &results {
        let ok = *err < *tol;
        failed += usize::from(!ok);
        max_err = max_err.max(*err);
        println!(
            "{:<6} {name:<28} {precision}  max_rel_err {err:.3e}  tol {tol:.0e}  worst {worst}",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "{} checks, {failed} failed, max rel err {max_err:.3e}, {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
