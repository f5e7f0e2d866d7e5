use ngo_core::geometry::{compose, r2g, Pose2, RelPose2};
use ngo_core::nets::gradcheck::check_nets;
use ngo_core::nets::{
    set_beta_bias, zero_update_head, AttentionMode, GlobalNet, GlobalNetConfig, LocalNetConfig, LocalPoseNet,
    PAIR_CHANNELS,
};
use ngo_tensor::{Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_global(attention: AttentionMode, n_halvings: usize) -> GlobalNet {
    GlobalNet::new(GlobalNetConfig { in_dim: 10, d_f: 8, n_halvings, hidden: 12, n_layers: 9, attention }).unwrap()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random weights everywhere, including the update head.
fn noisy_params(net: &GlobalNet, seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = net.init_params::<f64>(seed);
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    p
}

fn rows_to_rels(v: &[f64]) -> Vec<RelPose2> {
    v.chunks(3).map(|r| RelPose2::new(r[0], r[1], r[2])).collect()
}

#[test]
fn zero_update_reproduces_accumulated_input_for_any_m() {
    let net = small_global(AttentionMode::Softmax, 0);
    let mut params = noisy_params(&net, 3);
    zero_update_head(&mut params, &net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = 16;
    let deltas = rand_vec(&mut rng, t * 3, 0.4);
    let feats = rand_vec(&mut rng, 8 * t, 1.0);
    let oracle = r2g(&rows_to_rels(&deltas)).unwrap();

    let mut outputs = Vec::new();
    for m in [1, 2, 5] {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::new(&[8, t], feats.clone()).unwrap());
        let d = g.constant(Tensor::new(&[t, 3], deltas.clone()).unwrap());
        let out = net.ngo_forward(&mut g, &params, f, d, m, false).unwrap();
        let direct = ngo_core::geometry::r2g_tensor(&mut g, d).unwrap();
        assert_eq!(g.value(out.poses()), g.value(direct), "M={m} is not a fixed point");
        assert_eq!(out.iterate_poses.len(), m);
        for (p, q) in g.value(out.poses()).chunks(3).zip(&oracle) {
            assert!((p[0] - q.x).abs() < 1e-12 && (p[1] - q.y).abs() < 1e-12 && (p[2] - q.theta).abs() < 1e-12);
        }
        outputs.push(g.value(out.poses()).to_vec());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn zero_update_fixed_point_in_f32_through_aggregation() {
    // the evaluation path: f32 weights, local deltas composed in windows
    let net = small_global(AttentionMode::Softmax, 2);
    let params: ParamSet<f32> = net.init_params::<f32>(5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t0 = 64;
    let deltas: Vec<f32> = rand_vec(&mut rng, t0 * 3, 0.3).into_iter().map(|v| v as f32).collect();
    let feats: Vec<f32> = rand_vec(&mut rng, t0 * 10, 1.0).into_iter().map(|v| v as f32).collect();
    let local = ngo_core::training::local_meta_poses(&deltas, 4).unwrap();
    for m in [1, 5] {
        let (poses, _, _) = net.infer(&params, &feats, &deltas, m).unwrap();
        assert_eq!(poses, local, "M={m}");
    }
}

#[test]
fn closed_beta_gate_leaves_deltas() {
    let net = small_global(AttentionMode::Softmax, 0);
    let mut params = noisy_params(&net, 9);
    set_beta_bias(&mut params, &net, -40.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = 8;
    let deltas = rand_vec(&mut rng, t * 3, 0.4);
    let mut g = Graph::<f64>::new();
    let f = g.constant(Tensor::new(&[8, t], rand_vec(&mut rng, 8 * t, 1.0)).unwrap());
    let d = g.constant(Tensor::new(&[t, 3], deltas.clone()).unwrap());
    let it = net.ngo_iterate(&mut g, &params, f, d, false).unwrap();
    let grad_norm: f64 = g.value(it.grad_p).iter().map(|v| v.abs()).sum();
    assert!(grad_norm > 1e-3, "the update head must be active for this check");
    for (a, b) in g.value(it.deltas).iter().zip(&deltas) {
        assert!((a - b).abs() < 1e-4);
    }
    assert!(g.value(it.beta).iter().all(|&b| b > 0.0 && b < 1e-12));
}

#[test]
fn open_gate_moves_deltas_by_beta_times_correction() {
    let net = small_global(AttentionMode::Softmax, 0);
    let params = noisy_params(&net, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = 6;
    let deltas = rand_vec(&mut rng, t * 3, 0.4);
    let mut g = Graph::<f64>::new();
    let f = g.constant(Tensor::new(&[8, t], rand_vec(&mut rng, 8 * t, 1.0)).unwrap());
    let d = g.constant(Tensor::new(&[t, 3], deltas.clone()).unwrap());
    let it = net.ngo_iterate(&mut g, &params, f, d, false).unwrap();
    let (gp, beta, out) = (g.value(it.grad_p), g.value(it.beta), g.value(it.deltas));
    for i in 0..t {
        for c in 0..3 {
            let mut expected = deltas[i * 3 + c] + beta[i] * gp[c * t + i];
            if c == 2 {
                expected = ngo_core::geometry::wrap_angle(expected);
            }
            assert!((out[i * 3 + c] - expected).abs() < 1e-12);
        }
    }
}

fn aggregate_deltas(net: &GlobalNet, deltas: &[f64]) -> Result<Vec<f64>, ngo_core::Error> {
    let t0 = deltas.len() / 3;
    let params = net.init_params::<f64>(0);
    let mut g = Graph::<f64>::new();
    let f = g.constant(Tensor::zeros(&[net.config().in_dim, t0]));
    let d = g.constant(Tensor::new(&[t0, 3], deltas.to_vec()).unwrap());
    let (mf, md) = net.aggregate(&mut g, &params, f, d, false)?;
    assert_eq!(g.shape(mf), &[net.config().d_f, t0 >> net.config().n_halvings]);
    Ok(g.value(md).to_vec())
}

#[test]
fn aggregation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let deltas = rand_vec(&mut rng, 12 * 3, 0.5);
    let identity = aggregate_deltas(&small_global(AttentionMode::Softmax, 0), &deltas).unwrap();
    assert_eq!(identity, deltas);

    let zeros = aggregate_deltas(&small_global(AttentionMode::Softmax, 2), &[0.0; 24]).unwrap();
    assert!(zeros.iter().all(|&v| v == 0.0));

    let straight = aggregate_deltas(&small_global(AttentionMode::Softmax, 2), &[1.0, 0.0, 0.0].repeat(4)).unwrap();
    assert_eq!(straight.len(), 3);
    assert!((straight[0] - 4.0).abs() < 1e-12 && straight[1].abs() < 1e-12 && straight[2].abs() < 1e-12);

    // each meta delta is the composition of its window
    let net = small_global(AttentionMode::Softmax, 2);
    let meta = aggregate_deltas(&net, &deltas).unwrap();
    for (j, w) in rows_to_rels(&deltas).chunks(4).enumerate() {
        let end = w.iter().fold(Pose2::ORIGIN, |p, d| compose(&p, d));
        let m = &meta[j * 3..j * 3 + 3];
        assert!((m[0] - end.x).abs() < 1e-12 && (m[1] - end.y).abs() < 1e-12 && (m[2] - end.theta).abs() < 1e-12);
    }

    let err = aggregate_deltas(&net, &deltas[..10 * 3]).unwrap_err();
    assert!(err.to_string().contains("window"), "{err}");
}

/// Direct double loop over the attention definition.
fn attention_oracle(mode: AttentionMode, f: &[f64], d: usize, t: usize, w: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let col = |u: usize| (0..d).map(|c| f[c * t + u]).collect::<Vec<_>>();
    let mut alpha = vec![0.0; t * t];
    for ti in 0..t {
        let ft = col(ti);
        let q: Vec<f64> = (0..d).map(|o| b[o] + (0..d).map(|i| ft[i] * w[i * d + o]).sum::<f64>()).collect();
        let c: Vec<f64> = (0..t).map(|u| col(u).iter().zip(&q).map(|(x, y)| x * y).sum()).collect();
        match mode {
            AttentionMode::Softmax => {
                let s: Vec<f64> = c.iter().map(|v| v / (d as f64).sqrt()).collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                for u in 0..t {
                    alpha[ti * t + u] = (s[u] - m).exp() / z;
                }
            }
            AttentionMode::Linear => {
                let z: f64 = c.iter().sum();
                for u in 0..t {
                    alpha[ti * t + u] = if z.abs() < 1e-6 { 1.0 / t as f64 } else { c[u] / z };
                }
            }
        }
    }
    let mut a = vec![0.0; d * t];
    for ti in 0..t {
        for u in 0..t {
            for c in 0..d {
                a[c * t + ti] += alpha[ti * t + u] * f[c * t + u];
            }
        }
    }
    (a, alpha)
}

fn run_attention(net: &GlobalNet, params: &ParamSet<f64>, f: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::<f64>::new();
    let fv = g.constant(Tensor::new(&[net.config().d_f, t], f.to_vec()).unwrap());
    let (a, vars) = net.attention_phase(&mut g, params, fv, false).unwrap();
    (g.value(a).to_vec(), g.value(vars.weights).to_vec())
}

#[test]
fn attention_matches_double_loop() {
    for mode in [AttentionMode::Softmax, AttentionMode::Linear] {
        let net = small_global(mode, 0);
        let params = noisy_params(&net, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, t) = (8, 5);
        let f = rand_vec(&mut rng, d * t, 1.0);
        let (a, alpha) = run_attention(&net, &params, &f, t);
        let w = params.get("ngo.query.w").unwrap().data();
        let b = params.get("ngo.query.b").unwrap().data();
        let (ea, ealpha) = attention_oracle(mode, &f, d, t, w, b);
        for (x, y) in a.iter().zip(&ea).chain(alpha.iter().zip(&ealpha)) {
            assert!((x - y).abs() < 1e-6 * y.abs().max(1.0), "{mode:?}: {x} vs {y}");
        }
        if mode == AttentionMode::Softmax {
            for row in alpha.chunks(t) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn attention_degenerate_cases() {
    for mode in [AttentionMode::Softmax, AttentionMode::Linear] {
        let net = small_global(mode, 0);
        let params = noisy_params(&net, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = rand_vec(&mut rng, 8, 1.0);
        let (a, alpha) = run_attention(&net, &params, &f1, 1);
        assert!((alpha[0] - 1.0).abs() < 1e-12, "{mode:?}");
        for (x, y) in a.iter().zip(&f1) {
            assert!((x - y).abs() < 1e-12);
        }
        // identical columns: any convex weights give the column back
        let t = 6;
        let same: Vec<f64> = f1.iter().flat_map(|&v| std::iter::repeat(v).take(t)).collect();
        let (a, _) = run_attention(&net, &params, &same, t);
        for c in 0..8 {
            for ti in 0..t {
                assert!((a[c * t + ti] - f1[c]).abs() < 1e-9, "{mode:?}");
            }
        }
    }
    // linear mode falls back to uniform weights when scores sum to ~0
    let net = small_global(AttentionMode::Linear, 0);
    let mut params = noisy_params(&net, 2);
    params.get_mut("ngo.query.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    params.get_mut("ngo.query.b").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, alpha) = run_attention(&net, &params, &rand_vec(&mut rng, 8 * 4, 1.0), 4);
    assert!(alpha.iter().all(|&v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn local_net_shapes_and_zero_heads() {
    let net = LocalPoseNet::new(LocalNetConfig::default()).unwrap();
    assert_eq!(net.conv_lengths(), vec![121, 61, 31, 16]);
    assert_eq!(net.flat_dim(), 128 * 16);
    let params = net.init_params::<f32>(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 3;
    let input: Vec<f32> = (0..n * PAIR_CHANNELS * 241).map(|_| rng.gen::<f32>()).collect();
    let actions = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let (d, f) = net.infer(&params, &input, &actions).unwrap();
    assert_eq!(d, vec![0.0; 9]);
    assert_eq!(f.len(), n * 256);
    assert!(f.iter().any(|&v| v > 0.0));
    assert!(net.infer(&params, &input[..100], &actions).is_err());

    let mut g = Graph::<f32>::new();
    let bad = g.constant(Tensor::zeros(&[1, 4, 241]));
    assert!(net.forward(&mut g, &params, bad, None, false).is_err());
    let ok = g.constant(Tensor::zeros(&[1, 8, 241]));
    assert!(net.forward(&mut g, &params, ok, None, false).is_err(), "actions are required when enabled");
}

#[test]
fn local_rotation_output_is_wrapped() {
    let net = LocalPoseNet::new(LocalNetConfig::default()).unwrap();
    let mut params = net.init_params::<f32>(0);
    params.get_mut("local.rot.b").unwrap().data_mut()[0] = 4.0;
    let (d, _) = net.infer(&params, &vec![0.5; 8 * 241], &[1.0, 0.0, 0.0]).unwrap();
    assert!((d[2] as f64 - (4.0 - std::f64::consts::TAU)).abs() < 1e-5);
}

#[test]
fn network_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    for seed in 0..3 {
        for c in check_nets(seed).unwrap() {
            assert!(c.report.max_rel_err < 5e-3, "{} {} seed {seed}: {:?}", c.name, c.precision, c.report);
            assert!(c.report.checked > 0);
        }
    }
    assert!(start.elapsed().as_secs() < 120);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_is_permutation_equivariant(seed in 0u64..1000, t in 1usize..9) {
        let net = small_global(AttentionMode::Softmax, 0);
        let params = noisy_params(&net, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = rand_vec(&mut rng, 8 * t, 1.0);
        let mut perm: Vec<usize> = (0..t).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let permuted: Vec<f64> = (0..8).flat_map(|c| perm.iter().map(|&u| f[c * t + u]).collect::<Vec<_>>()).collect();
        let (a, _) = run_attention(&net, &params, &f, t);
        let (ap, _) = run_attention(&net, &params, &permuted, t);
        for c in 0..8 {
            for (i, &u) in perm.iter().enumerate() {
                prop_assert!((ap[c * t + i] - a[c * t + u]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn optimizer_preserves_sequence_length(seed in 0u64..1000, t in 1usize..20, m in 1usize..4) {
        let net = small_global(AttentionMode::Softmax, 0);
        let params = noisy_params(&net, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::new(&[8, t], rand_vec(&mut rng, 8 * t, 1.0)).unwrap());
        let d = g.constant(Tensor::new(&[t, 3], rand_vec(&mut rng, 3 * t, 0.3)).unwrap());
        let out = net.ngo_forward(&mut g, &params, f, d, m, false).unwrap();
        for it in &out.iterates {
            prop_assert_eq!(g.shape(it.features), &[8, t]);
            prop_assert_eq!(g.shape(it.deltas), &[t, 3]);
            prop_assert_eq!(g.shape(it.grad_p), &[3, t]);
            prop_assert_eq!(g.shape(it.beta), &[1, t]);
            prop_assert_eq!(g.shape(it.attention.weights), &[t, t]);
            prop_assert!(g.value(it.beta).iter().all(|&b| b > 0.0 && b < 1.0));
        }
        prop_assert_eq!(g.shape(out.poses()), &[t, 3]);
    }
}
