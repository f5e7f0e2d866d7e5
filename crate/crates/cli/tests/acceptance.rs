//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! The three-seed training recipe takes roughly 40 minutes on one core. Its
//! results are cached under the test tmpdir, keyed by a hash of the `ngo`
//! binary, so reruns against an unchanged binary only re-read the reports.
//! Set `NGO_ACCEPTANCE_FRESH=1` to ignore the cache.

use std::collections::{HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ngo_core::eval::{estimate, model_labels, parse_report, trajectory_rows, GlobalVariant, ReportRow};
use ngo_core::formats::{decode_dataset, encode_dataset, read_dataset, Checkpoint};
use ngo_core::geometry::{g2r, r2g, Pose2, RelPose2};
use ngo_core::mazeworld::{
    cast_ray, dijkstra_path, gen_maze_kruskal, gen_maze_prim, point_segment_distance, ray_offset, raycast,
    step_dynamics, Action, AgentState, Cell, Dir, DynamicsConfig, MazeGrid, N_RAYS,
};
use ngo_core::nets::gradcheck::check_nets;
use ngo_core::nets::GlobalNet;
use ngo_core::training::{GlobalModel, LocalModel, TrainConfig, TEST_SEED};
use ngo_tensor::checks::{check_op, check_op_against_f64, OPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

/// Writes past the test harness capture so the lines always show.
fn report(name: &str, o: &Outcome) {
    let line = format!("{} {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn ngo(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ngo")).args(args).output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("ngo {} failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let (mut worst_op, mut worst_net) = ((0.0f64, String::new()), (0.0f64, String::new()));
    let mut errors = Vec::new();
    for op in OPS {
        match check_op_against_f64::<f32>(op, 0, 1e-6) {
            Ok(c) if c.report.max_rel_err > worst_op.0 => worst_op = (c.report.max_rel_err, op.to_string()),
            Ok(_) => {}
            Err(e) => errors.push(format!("{op}: {e}")),
        }
        if let Err(e) = check_op::<f64>(op, 0, 1e-6) {
            errors.push(format!("{op} f64: {e}"));
        }
    }
    match check_nets(0) {
        Ok(checks) => {
            for c in checks {
                if c.report.max_rel_err > worst_net.0 {
                    worst_net = (c.report.max_rel_err, format!("{} {}", c.name, c.precision));
                }
            }
        }
        Err(e) => errors.push(format!("nets: {e}")),
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: errors.is_empty() && worst_op.0 < 1e-3 && worst_net.0 < 5e-3 && secs < 120.0,
        detail: format!(
            "{} ops, worst f32 op {:.2e} ({}) < 1e-3; worst network {:.2e} ({}) < 5e-3; {secs:.1}s < 120s{}",
            OPS.len(),
            worst_op.0,
            worst_op.1,
            worst_net.0,
            worst_net.1,
            if errors.is_empty() { String::new() } else { format!("; errors: {}", errors.join("; ")) }
        ),
    }
}

fn pose_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=2000);
        let deltas: Vec<RelPose2> = (0..n)
            .map(|_| RelPose2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.1..3.1)))
            .collect();
        let poses = r2g(&deltas).unwrap();
        let back = g2r(&poses).unwrap();
        for (a, b) in back.iter().zip(&deltas) {
            worst = worst.max((a.dx - b.dx).abs()).max((a.dy - b.dy).abs()).max((a.dtheta - b.dtheta).abs());
        }
        let again = r2g(&back).unwrap();
        for (a, b) in again.iter().zip(&poses) {
            worst = worst.max((a.x - b.x).abs()).max((a.y - b.y).abs()).max((a.theta - b.theta).abs());
        }
    }
    let square = r2g(&[RelPose2::new(1.0, 0.0, std::f64::consts::FRAC_PI_2); 4]).unwrap();
    let end = square[3];
    let closed = end.x.abs() < 1e-12 && end.y.abs() < 1e-12 && end.theta.abs() < 1e-12;
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst < 1e-9 && closed && secs < 10.0,
        detail: format!(
            "1000 trajectories, max round-trip error {worst:.1e} < 1e-9; square ends at ({:.1e}, {:.1e}, {:.1e}); {secs:.2}s < 10s",
            end.x, end.y, end.theta
        ),
    }
}

fn bfs(maze: &MazeGrid, start: Cell) -> Vec<Option<usize>> {
    let mut dist = vec![None; maze.n_cells()];
    dist[maze.index(start)] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        let d = dist[maze.index(c)].unwrap();
        for dir in Dir::ALL {
            if maze.has_wall(c, dir) {
                continue;
            }
            let n = maze.neighbor(c, dir).unwrap();
            if dist[maze.index(n)].is_none() {
                dist[maze.index(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn ray_box(x: f64, y: f64, angle: f64) -> f64 {
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut best = f64::INFINITY;
    for (edge, pos, d) in [(0.0, x, dx), (1.0, x, dx), (0.0, y, dy), (1.0, y, dy)] {
        if d.abs() > 1e-12 && (edge - pos) / d > 0.0 {
            best = best.min((edge - pos) / d);
        }
    }
    best
}

fn simulator_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut problems = Vec::new();

    let mut perfect = 0;
    let mut dijkstra_ok = true;
    for i in 0..200 {
        let (w, h, seed) = (rng.gen_range(2..20), rng.gen_range(2..20), rng.gen::<u64>());
        let m = if i % 2 == 0 { gen_maze_prim(w, h, seed) } else { gen_maze_kruskal(w, h, seed) }.unwrap();
        let dist = bfs(&m, (0, 0));
        if m.walls_consistent() && m.passage_count() == m.n_cells() - 1 && dist.iter().all(Option::is_some) {
            perfect += 1;
        }
        if i % 4 == 0 {
            for g in 0..m.n_cells() {
                let path = dijkstra_path(&m, (0, 0), m.cell_of(g));
                if path.map(|p| p.len() - 1) != dist[g] {
                    dijkstra_ok = false;
                }
            }
        }
    }
    if perfect != 200 {
        problems.push(format!("{} imperfect mazes", 200 - perfect));
    }
    if !dijkstra_ok {
        problems.push("dijkstra differs from BFS".into());
    }

    let cfg = DynamicsConfig::default();
    let mut clearance = f64::INFINITY;
    for seed in 0..3u64 {
        let m = gen_maze_kruskal(8, 8, seed).unwrap();
        let segments: Vec<_> = (0..m.n_cells()).flat_map(|i| m.wall_segments(m.cell_of(i))).collect();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (cx, cy) = m.cell_center((3, 3));
        let mut s = AgentState::at_rest(Pose2::new(cx, cy, 0.0));
        for _ in 0..10_000 {
            let a = if r.gen::<f64>() < 0.6 { Action::Forward } else { Action::ALL[r.gen_range(1..3)] };
            s = step_dynamics(&m, &cfg, &s, a);
            for [a, b] in &segments {
                clearance = clearance.min(point_segment_distance((s.pose.x, s.pose.y), *a, *b));
            }
        }
    }
    if clearance < cfg.radius - 1e-12 {
        problems.push(format!("rollout came within {clearance:.4} of a wall"));
    }

    let cell = MazeGrid::closed(1, 1, vec![[0.2, 0.4, 0.6]]).unwrap();
    let mut depth_err: f64 = 0.0;
    for (x, y, th) in [(0.5, 0.5, 0.0), (0.3, 0.7, 1.1), (0.8, 0.25, -2.0)] {
        let obs = raycast(&cell, &Pose2::new(x, y, th)).unwrap();
        for i in 0..N_RAYS {
            depth_err = depth_err.max((obs.depth(i) as f64 - ray_box(x, y, th + ray_offset(i))).abs());
        }
    }
    let diag = cast_ray(&cell, 0.5, 0.5, std::f64::consts::FRAC_PI_4).unwrap().0;
    depth_err = depth_err.max((diag - 0.5 * std::f64::consts::SQRT_2).abs());
    if depth_err >= 1e-6 {
        problems.push(format!("depth error {depth_err:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: problems.is_empty() && secs < 60.0,
        detail: format!(
            "{perfect}/200 perfect mazes; dijkstra = BFS: {dijkstra_ok}; 3x10,000-step rollouts min clearance {clearance:.4} >= radius {}; single-cell depth error {depth_err:.1e} < 1e-6; {secs:.1}s < 60s{}",
            cfg.radius,
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    }
}

/// Trained-for-one-epoch local model from the determinism run, so the local
/// deltas are not trivially zero.
fn fixed_point(local_ckpt: &Path, data: &Path) -> Outcome {
    let local = LocalModel::load(local_ckpt).unwrap();
    let trajs: Vec<_> = read_dataset(data).unwrap().into_iter().take(8).collect();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for n_halvings in [0, 2] {
        let cfg = TrainConfig { n_halvings, ..TrainConfig::for_stage(ngo_core::training::Stage::Global) };
        let net = GlobalNet::new(cfg.global_net(local.net.feature_dim())).unwrap();
        let params = net.init_params::<f32>(5);
        let variants: Vec<GlobalVariant> = [1, 5]
            .into_iter()
            .map(|m| GlobalVariant {
                label: format!("m{m}"),
                model: GlobalModel { net: net.clone(), params: params.clone(), config: cfg.clone() },
                iterations: m,
            })
            .collect();
        let est = estimate(&trajs, &local, &variants, 1 << n_halvings).unwrap();
        for (i, e) in est.iter().enumerate() {
            for (v, g) in variants.iter().zip(&e.globals) {
                compared += g.len();
                if g != &e.local {
                    mismatches.push(format!("H={n_halvings} {} trajectory {i}", v.label));
                }
            }
        }
        // and the reported metrics coincide
        let rows = trajectory_rows("seen", &model_labels(&variants), &est).unwrap();
        for r in rows.chunks(3) {
            if r[1].rmse_pos != r[0].rmse_pos || r[2].rmse_pos != r[0].rmse_pos {
                mismatches.push(format!("H={n_halvings} metrics"));
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty() && compared > 0,
        detail: format!(
            "zeroed update head, M in {{1, 5}}, H in {{0, 2}}: {compared} poses compared bitwise against accumulated local input, {} mismatches",
            mismatches.len()
        ),
    }
}

fn determinism(dir: &Path) -> (Outcome, PathBuf, PathBuf) {
    let start = Instant::now();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let d = dir.join(run);
        let data = d.join("test.ngod");
        let ck = d.join("local.ngoc");
        let res = ngo(&[
            "gen-data",
            "--out",
            p(&data),
            "--n-traj",
            "4",
            "--traj-len",
            "65",
            "--seed",
            "5",
            "--deterministic",
        ])
        .and_then(|_| {
            ngo(&[
                "train-local",
                "--out",
                p(&ck),
                "--epochs",
                "1",
                "--items-per-epoch",
                "1000",
                "--seed",
                "3",
                "--test-data",
                p(&data),
                "--deterministic",
            ])
        });
        if let Err(e) = res {
            return (Outcome { pass: false, detail: e }, ck, data);
        }
        bytes.push((std::fs::read(&data).unwrap(), std::fs::read(&ck).unwrap()));
    }
    let secs = start.elapsed().as_secs_f64();
    let same = bytes[0] == bytes[1];
    let o = Outcome {
        pass: same && secs < 600.0,
        detail: format!(
            "two runs of gen-data + train-local (1 epoch, 1000 pairs): datasets and {}-byte checkpoints {}; {secs:.1}s < 600s",
            bytes[0].1.len(),
            if same { "bit-identical" } else { "DIFFER" }
        ),
    };
    (o, dir.join("a/local.ngoc"), dir.join("a/test.ngod"))
}

fn format_suite(data: &Path, ck: &Path) -> Outcome {
    let mut problems = Vec::new();
    let raw = std::fs::read(data).unwrap();
    let trajs = decode_dataset(&raw, data).unwrap();
    if encode_dataset(&trajs).unwrap() != raw {
        problems.push("dataset re-encode differs");
    }
    let raw_ck = std::fs::read(ck).unwrap();
    let decoded = Checkpoint::decode(&raw_ck, ck).unwrap();
    if decoded.encode().unwrap() != raw_ck {
        problems.push("checkpoint re-encode differs");
    }
    let mut rejected = 0;
    let mut tried = 0;
    for i in 0..8 {
        let mut bad = raw.clone();
        bad[i] ^= 0xff;
        tried += 1;
        rejected += usize::from(decode_dataset(&bad, data).is_err());
        let mut bad = raw_ck.clone();
        bad[i] ^= 0xff;
        tried += 1;
        rejected += usize::from(Checkpoint::decode(&bad, ck).is_err());
    }
    for cut in [0, 6, raw_ck.len() / 2, raw_ck.len() - 1] {
        tried += 2;
        rejected += usize::from(Checkpoint::decode(&raw_ck[..cut], ck).is_err());
        rejected += usize::from(decode_dataset(&raw[..cut.min(raw.len() - 1)], data).is_err());
    }
    if rejected != tried {
        problems.push("a corrupted file was accepted");
    }
    Outcome {
        pass: problems.is_empty(),
        detail: format!(
            "dataset ({} trajectories) and checkpoint ({} tensors) round-trip byte-exactly; {rejected}/{tried} corrupted or truncated files rejected{}",
            trajs.len(),
            decoded.tensors.len(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    }
}

struct SeedResult {
    rows: Vec<ReportRow>,
    secs: f64,
}

fn binary_key() -> String {
    let bytes = std::fs::read(env!("CARGO_BIN_EXE_ngo")).unwrap();
    let mut h = std::collections::hash_map::DefaultHasher::new();
    bytes.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// The training recipe for one seed, through the command-line tool with
/// its default hyperparameters.
fn recipe(root: &Path, seed: u64) -> Result<SeedResult, String> {
    let dir = root.join(format!("seed{seed}"));
    let done = dir.join("done");
    if done.exists() && std::env::var_os("NGO_ACCEPTANCE_FRESH").is_none() {
        let secs = std::fs::read_to_string(&done).map_err(|e| e.to_string())?.trim().parse().unwrap_or(0.0);
        let text = std::fs::read_to_string(dir.join("eval/report.csv")).map_err(|e| e.to_string())?;
        return Ok(SeedResult { rows: parse_report(&text).map_err(|e| e.to_string())?, secs });
    }
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let seen = root.join("seen.ngod");
    let unseen = root.join("unseen.ngod");
    let s = seed.to_string();
    let local = dir.join("local.ngoc");
    ngo(&["train-local", "--out", p(&local), "--seed", &s, "--test-data", p(&seen), "--deterministic"])?;
    for m in ["1", "5"] {
        let out = dir.join(format!("global_m{m}.ngoc"));
        ngo(&[
            "train-global",
            "--out",
            p(&out),
            "--local-ckpt",
            p(&local),
            "--seed",
            &s,
            "--iterations",
            m,
            "--test-data",
            p(&seen),
            "--deterministic",
        ])?;
    }
    ngo(&[
        "eval",
        "--local-ckpt",
        p(&local),
        "--global-ckpt",
        &format!("m1={}", p(&dir.join("global_m1.ngoc"))),
        "--global-ckpt",
        &format!("m5={}", p(&dir.join("global_m5.ngoc"))),
        "--data",
        &format!("seen={}", p(&seen)),
        "--data",
        &format!("unseen={}", p(&unseen)),
        "--out-dir",
        p(&dir.join("eval")),
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(dir.join("eval/report.csv")).map_err(|e| e.to_string())?;
    let rows = parse_report(&text).map_err(|e| e.to_string())?;
    std::fs::write(&done, format!("{secs}\n")).map_err(|e| e.to_string())?;
    Ok(SeedResult { rows, secs })
}

fn recipe_results() -> Result<Vec<SeedResult>, String> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-recipe-{}", binary_key()));
    std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
    // the frozen 39-trajectory test sets, both generated from the fixed test seed
    for (split, xor) in [("seen", 1), ("unseen", 2)] {
        let path = root.join(format!("{split}.ngod"));
        if !path.exists() {
            let seed = (TEST_SEED ^ xor).to_string();
            ngo(&[
                "gen-data",
                "--out",
                p(&path),
                "--n-traj",
                "39",
                "--traj-len",
                "257",
                "--split",
                split,
                "--seed",
                &seed,
                "--deterministic",
            ])?;
        }
    }
    SEEDS.iter().map(|&s| recipe(&root, s)).collect()
}

fn rmse(rows: &[ReportRow], model: &str, split: &str) -> f64 {
    rows.iter().find(|r| r.model == model && r.split == split).map(|r| r.rmse_pos).unwrap_or(f64::NAN)
}

fn recipe_criteria(results: &[SeedResult]) -> Vec<(&'static str, Outcome)> {
    let mean = |model: &str, split: &str| {
        results.iter().map(|r| rmse(&r.rows, model, split)).sum::<f64>() / results.len() as f64
    };
    let per_seed = |model: &str| {
        results.iter().map(|r| format!("{:.3}", rmse(&r.rows, model, "seen"))).collect::<Vec<_>>().join("/")
    };
    let (local, m1, m5) = (mean("local", "seen"), mean("m1", "seen"), mean("m5", "seen"));
    let hours = results.iter().map(|r| r.secs).sum::<f64>() / 3600.0;
    let ratio = m5 / local;
    let drift = Outcome {
        pass: ratio <= 0.6 && hours <= 4.0,
        detail: format!(
            "seen RMSE over seeds {SEEDS:?}: global M=5 {m5:.3} ({}) vs local {local:.3} ({}), ratio {ratio:.3} <= 0.6; recipe {hours:.2} h <= 4 h",
            per_seed("m5"),
            per_seed("local")
        ),
    };
    let trend = Outcome {
        pass: m5 <= m1,
        detail: format!("mean seen RMSE M=5 {m5:.3} ({}) <= M=1 {m1:.3} ({})", per_seed("m5"), per_seed("m1")),
    };
    let mut worst: (f64, String) = (0.0, String::new());
    for (r, seed) in results.iter().zip(SEEDS) {
        for model in ["m1", "m5"] {
            let q = rmse(&r.rows, model, "unseen") / rmse(&r.rows, model, "seen");
            if !(q <= worst.0) {
                worst = (q, format!("seed {seed} {model}"));
            }
        }
    }
    let general = Outcome {
        pass: worst.0 <= 1.3,
        detail: format!(
            "worst unseen/seen global RMSE ratio {:.3} ({}) <= 1.3; mean M=5 unseen {:.3} vs seen {m5:.3}",
            worst.0,
            worst.1,
            mean("m5", "unseen")
        ),
    };
    vec![("drift reduction", drift), ("iteration trend", trend), ("generalization", general)]
}

#[test]
fn acceptance() {
    let work = tempfile::tempdir().unwrap();
    let mut outcomes: Vec<(&str, Outcome)> = Vec::new();
    let run = |name: &'static str, o: Outcome, all: &mut Vec<(&str, Outcome)>| {
        report(name, &o);
        all.push((name, o));
    };
    run("gradient suite", gradient_suite(), &mut outcomes);
    run("pose algebra", pose_suite(), &mut outcomes);
    run("simulator suite", simulator_suite(), &mut outcomes);
    let (det, ck, data) = determinism(work.path());
    let det_ok = det.pass;
    run("determinism", det, &mut outcomes);
    if det_ok {
        run("zero-update fixed point", fixed_point(&ck, &data), &mut outcomes);
        run("format suite", format_suite(&data, &ck), &mut outcomes);
    } else {
        for name in ["zero-update fixed point", "format suite"] {
            run(name, Outcome { pass: false, detail: "no artifacts: determinism run failed".into() }, &mut outcomes);
        }
    }
    match recipe_results() {
        Ok(results) => {
            for (name, o) in recipe_criteria(&results) {
                run(name, o, &mut outcomes);
            }
        }
        Err(e) => {
            for name in ["drift reduction", "iteration trend", "generalization"] {
                run(name, Outcome { pass: false, detail: format!("recipe failed: {e}") }, &mut outcomes);
            }
        }
    }
    let failed: Vec<_> = outcomes.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    let summary: HashMap<bool, usize> = outcomes.iter().fold(HashMap::new(), |mut m, (_, o)| {
        *m.entry(o.pass).or_default() += 1;
        m
    });
    report(
        "summary",
        &Outcome {
            pass: failed.is_empty(),
            detail: format!(
                "{} passed, {} failed",
                summary.get(&true).unwrap_or(&0),
                summary.get(&false).unwrap_or(&0)
            ),
        },
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
