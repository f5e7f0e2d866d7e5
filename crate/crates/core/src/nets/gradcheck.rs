//! Finite-difference checks of the full networks, shared by the tests and
//! the `grad-check` command.

use ngo_tensor::{
    grad_check_mixed, GradCheckReport, Graph, Objective, ParamSet, Sampling, Scalar, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::global::{AttentionMode, GlobalNet, GlobalNetConfig};
use super::local::{LocalNetConfig, LocalPoseNet, PAIR_CHANNELS};
use crate::training::{global_loss, local_loss};
use crate::Result;

#[derive(Debug, Clone)]
pub struct NetCheck {
    pub name: &'static str,
    /// Precision of the analytic pass; differences are always taken in f64.
    pub precision: &'static str,
    pub report: GradCheckReport,
}

const EPS: f64 = 1e-6;

fn tensor_err(e: crate::Error) -> TensorError {
    TensorError::Invalid { op: "nets", detail: e.to_string() }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Perturbs every parameter so no gradient path is cut off by the
/// zero-initialized heads or biases.
fn jitter(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}

struct LocalObjective {
    net: LocalPoseNet,
    input: Tensor<f64>,
    actions: Tensor<f64>,
    target: Tensor<f64>,
}

impl Objective for LocalObjective {
    fn build<S: Scalar>(&mut self, g: &mut Graph<S>, params: &ParamSet<S>) -> ngo_tensor::Result<Var> {
        let x = g.constant(self.input.cast());
        let a = g.constant(self.actions.cast());
        let y = g.constant(self.target.cast());
        let out = self.net.forward(g, params, x, Some(a), true).map_err(tensor_err)?;
        let loss = local_loss(g, out.delta, y, 1.0).map_err(tensor_err)?;
        // also pull on the feature directly
        let f = g.square(out.feature);
        let f = g.mean(f);
        g.add(loss, f)
    }
}

fn local_fixture(config: LocalNetConfig, seed: u64, batch: usize) -> (LocalObjective, ParamSet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = LocalPoseNet::new(config).expect("valid config");
    let mut params = net.init_params::<f64>(seed);
    jitter(&mut params, &mut rng, 0.05);
    let n_rays = net.config().n_rays;
    let input = random_tensor(&mut rng, &[batch, PAIR_CHANNELS, n_rays], 1.0);
    let actions: Vec<f64> = (0..batch)
        .flat_map(|i| {
            let mut a = [0.0; 3];
            a[i % 3] = 1.0;
            a
        })
        .collect();
    let actions = Tensor::new(&[batch, 3], actions).expect("shape matches");
    let target = random_tensor(&mut rng, &[batch, 3], 0.5);
    (LocalObjective { net, input, actions, target }, params)
}

/// A reduced local net small enough to check every weight.
pub fn small_local_config() -> LocalNetConfig {
    LocalNetConfig {
        n_rays: 31,
        channels: vec![4, 6, 6, 8],
        kernels: vec![7, 5, 5, 3],
        feature_dim: 12,
        use_action: true,
    }
}

struct GlobalObjective {
    net: GlobalNet,
    iterations: usize,
    target: Tensor<f64>,
    /// Skip aggregation: the inputs are already meta features and deltas.
    iterate_only: bool,
}

impl Objective for GlobalObjective {
    fn build<S: Scalar>(&mut self, g: &mut Graph<S>, params: &ParamSet<S>) -> ngo_tensor::Result<Var> {
        let f = g.param(params, "in.features")?;
        let d = g.param(params, "in.deltas")?;
        let out = if self.iterate_only {
            self.net.ngo_forward(g, params, f, d, self.iterations, true)
        } else {
            self.net.forward(g, params, f, d, self.iterations, true)
        }
        .map_err(tensor_err)?;
        let y = g.constant(self.target.cast());
        global_loss(g, &out.iterate_poses, y, 1.0, false).map_err(tensor_err)
    }
}

fn global_fixture(
    seed: u64,
    attention: AttentionMode,
    t0: usize,
    n_halvings: usize,
    iterations: usize,
    iterate_only: bool,
) -> (GlobalObjective, ParamSet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = GlobalNetConfig { in_dim: 6, d_f: 5, n_halvings, hidden: 7, n_layers: 3, attention };
    let net = GlobalNet::new(config).expect("valid config");
    let mut params = net.init_params::<f64>(seed);
    jitter(&mut params, &mut rng, 0.1);
    let t = t0 >> n_halvings;
    let (channels, steps) = if iterate_only { (config.d_f, t) } else { (config.in_dim, t0) };
    params.insert("in.features", random_tensor(&mut rng, &[channels, steps], 1.0)).expect("unique");
    params.insert("in.deltas", random_tensor(&mut rng, &[steps, 3], 0.3)).expect("unique");
    let target = random_tensor(&mut rng, &[t, 3], 1.0);
    (GlobalObjective { net, iterations, target, iterate_only }, params)
}

fn both<O: Objective>(
    name: &'static str,
    obj: &mut O,
    params: &ParamSet<f64>,
    sampling: Sampling,
    out: &mut Vec<NetCheck>,
) -> Result<()> {
    out.push(NetCheck { name, precision: "f64", report: grad_check_mixed::<f64, O>(obj, params, EPS, sampling)? });
    out.push(NetCheck { name, precision: "f32", report: grad_check_mixed::<f32, O>(obj, params, EPS, sampling)? });
    Ok(())
}

/// Every network-level check: the reduced local net (all weights), the
/// full-size local net (sampled weights), one optimizer iteration on T=8,
/// and aggregation plus two iterations end to end in both attention modes.
pub fn check_nets(seed: u64) -> Result<Vec<NetCheck>> {
    let mut out = Vec::new();
    let (mut obj, params) = local_fixture(small_local_config(), seed, 3);
    both("local_small_all_weights", &mut obj, &params, Sampling::All, &mut out)?;

    let (mut obj, params) = local_fixture(LocalNetConfig::default(), seed, 2);
    both("local_full_sampled", &mut obj, &params, Sampling::PerTensor { count: 8, seed }, &mut out)?;

    let (mut obj, params) = global_fixture(seed, AttentionMode::Softmax, 8, 0, 1, true);
    both("ngo_iterate_t8", &mut obj, &params, Sampling::All, &mut out)?;

    let (mut obj, params) = global_fixture(seed, AttentionMode::Softmax, 16, 1, 2, false);
    both("global_end_to_end_m2", &mut obj, &params, Sampling::All, &mut out)?;

    let (mut obj, params) = global_fixture(seed, AttentionMode::Linear, 16, 1, 2, false);
    both("global_linear_attention_m2", &mut obj, &params, Sampling::All, &mut out)?;
    Ok(out)
}
