use ngo_tensor::{Graph, ParamSet, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::init::{add_conv, add_linear, conv, linear};
use crate::geometry::{compose_windows, r2g_tensor};
use crate::{Error, Result};

/// How attention scores become weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// `softmax(C / sqrt(D))` per row.
    #[default]
    Softmax,
    /// `C / row sum`, uniform when the sum is near zero.
    Linear,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Softmax => "softmax",
            AttentionMode::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softmax" => Some(AttentionMode::Softmax),
            "linear" => Some(AttentionMode::Linear),
            _ => None,
        }
    }
}

/// Row sums below this magnitude switch linear attention to uniform weights.
pub const LINEAR_ATTENTION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalNetConfig {
    /// Channels of the per-step features coming from the local net.
    pub in_dim: usize,
    /// Channels after the aggregation bottleneck.
    pub d_f: usize,
    pub n_halvings: usize,
    /// Width of the optimization-phase conv stack.
    pub hidden: usize,
    pub n_layers: usize,
    pub attention: AttentionMode,
}

impl Default for GlobalNetConfig {
    fn default() -> Self {
        GlobalNetConfig {
            in_dim: 256,
            d_f: 128,
            n_halvings: 2,
            hidden: 128,
            n_layers: 9,
            attention: AttentionMode::Softmax,
        }
    }
}

/// Pose aggregation followed by the iterative attention / convolution
/// optimizer. One set of optimizer weights is shared by all iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalNet {
    config: GlobalNetConfig,
}

/// Graph handles for one attention phase.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// `[T, T]` raw scores.
    pub scores: Var,
    /// `[T, T]` normalized weights.
    pub weights: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct IterateOutput {
    /// `[D_f, T]`
    pub features: Var,
    /// `[T, 3]`
    pub deltas: Var,
    /// `[3, T]` proposed correction.
    pub grad_p: Var,
    /// `[1, T]` step sizes in (0, 1).
    pub beta: Var,
    pub attention: AttentionVars,
}

#[derive(Debug, Clone)]
pub struct GlobalOutput {
    /// `[D_f, T]`
    pub meta_features: Var,
    /// `[T, 3]`
    pub meta_deltas: Var,
    /// One entry per iteration.
    pub iterates: Vec<IterateOutput>,
    /// `[T, 3]` global poses after each iteration.
    pub iterate_poses: Vec<Var>,
}

impl GlobalOutput {
    /// Global poses after the last iteration.
    pub fn poses(&self) -> Var {
        *self.iterate_poses.last().expect("at least one iteration")
    }
}

/// Attention matrices of every iteration, copied out of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub t: usize,
    /// Row-major `[T, T]` score matrix per iteration.
    pub scores: Vec<Vec<f64>>,
    /// Row-major `[T, T]` weight matrix per iteration.
    pub weights: Vec<Vec<f64>>,
}

impl AttentionTrace {
    pub fn collect<S: Scalar>(g: &Graph<S>, out: &GlobalOutput) -> Self {
        let t = g.shape(out.meta_deltas)[0];
        let grab = |v: Var| g.value(v).iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        AttentionTrace {
            t,
            scores: out.iterates.iter().map(|it| grab(it.attention.scores)).collect(),
            weights: out.iterates.iter().map(|it| grab(it.attention.weights)).collect(),
        }
    }
}

impl GlobalNet {
    pub fn new(config: GlobalNetConfig) -> Result<Self> {
        let c = &config;
        if c.in_dim == 0 || c.d_f == 0 || c.hidden == 0 {
            return Err(Error::config("global", "layer sizes must be positive"));
        }
        if c.n_layers < 2 {
            return Err(Error::config("global.n_layers", "need at least 2 conv layers"));
        }
        if c.n_halvings > 16 {
            return Err(Error::config("global.n_halvings", "too many halvings"));
        }
        Ok(GlobalNet { config })
    }

    pub fn config(&self) -> &GlobalNetConfig {
        &self.config
    }

    pub fn window(&self) -> usize {
        1 << self.config.n_halvings
    }

    /// Channels entering the optimization phase: features, attention, deltas.
    pub fn opt_in(&self) -> usize {
        2 * self.config.d_f + 3
    }

    pub fn opt_out(&self) -> usize {
        self.config.d_f + 4
    }

    /// Fresh parameters. The correction rows of the last optimizer layer
    /// start at zero, so an untrained net returns its input poses.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> ParamSet<S> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for i in 0..c.n_halvings {
            add_conv(&mut p, &mut rng, &format!("agg.block{i}"), c.in_dim, c.in_dim, 3, 2.0).expect("unique names");
        }
        add_conv(&mut p, &mut rng, "agg.proj", c.d_f, c.in_dim, 1, 1.0).expect("unique names");
        add_linear(&mut p, &mut rng, "ngo.query", c.d_f, c.d_f, 1.0).expect("unique names");
        let mut c_in = self.opt_in();
        for i in 0..c.n_layers {
            let last = i + 1 == c.n_layers;
            let c_out = if last { self.opt_out() } else { c.hidden };
            add_conv(&mut p, &mut rng, &format!("ngo.conv{i}"), c_out, c_in, 3, if last { 1.0 } else { 2.0 })
                .expect("unique names");
            c_in = c_out;
        }
        zero_update_head(&mut p, self).expect("layer exists");
        p
    }

    fn last_layer(&self) -> String {
        format!("ngo.conv{}", self.config.n_layers - 1)
    }

    /// Temporal conv/pool stack over `features [in_dim, T0]` and window
    /// composition of `deltas [T0, 3]`.
    pub fn aggregate<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamSet<S>,
        features: Var,
        deltas: Var,
        trainable: bool,
    ) -> Result<(Var, Var)> {
        let fs = g.shape(features).to_vec();
        let ds = g.shape(deltas).to_vec();
        if fs.len() != 2 || fs[0] != self.config.in_dim {
            return Err(Error::LengthMismatch {
                what: "aggregate feature channels",
                left: fs[0],
                right: self.config.in_dim,
            });
        }
        if ds != [fs[1], 3] {
            return Err(Error::LengthMismatch { what: "aggregate deltas vs features", left: ds[0], right: fs[1] });
        }
        let t0 = fs[1];
        if t0 % self.window() != 0 {
            return Err(Error::LengthMismatch { what: "aggregate length vs window", left: t0, right: self.window() });
        }
        let mut x = features;
        for i in 0..self.config.n_halvings {
            x = conv(g, params, &format!("agg.block{i}"), x, 1, 1, trainable)?;
            x = g.relu(x);
            x = g.maxpool1d(x)?;
        }
        let meta_features = conv(g, params, "agg.proj", x, 1, 0, trainable)?;
        let meta_deltas = compose_windows(g, deltas, self.window())?;
        Ok((meta_features, meta_deltas))
    }

    /// `A = F · αᵀ` with `α` from query/feature scores.
    pub fn attention_phase<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamSet<S>,
        f: Var,
        trainable: bool,
    ) -> Result<(Var, AttentionVars)> {
        let ft = g.transpose(f)?;
        let q = linear(g, params, "ngo.query", ft, trainable)?;
        let scores = g.matmul(q, f)?;
        let weights = match self.config.attention {
            AttentionMode::Softmax => {
                let scaled = g.scale(scores, S::from_f64(1.0 / (self.config.d_f as f64).sqrt()));
                g.softmax(scaled)?
            }
            AttentionMode::Linear => g.row_normalize(scores, S::from_f64(LINEAR_ATTENTION_EPS))?,
        };
        let wt = g.transpose(weights)?;
        let a = g.matmul(f, wt)?;
        Ok((a, AttentionVars { scores, weights }))
    }

    /// One attention + optimization step on `f [D_f, T]` and `deltas [T, 3]`.
    pub fn ngo_iterate<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamSet<S>,
        f: Var,
        deltas: Var,
        trainable: bool,
    ) -> Result<IterateOutput> {
        let d_f = self.config.d_f;
        let (a, attention) = self.attention_phase(g, params, f, trainable)?;
        let dt = g.transpose(deltas)?;
        let mut x = g.concat(&[f, a, dt], 0)?;
        for i in 0..self.config.n_layers {
            x = conv(g, params, &format!("ngo.conv{i}"), x, 1, 1, trainable)?;
            if i + 1 < self.config.n_layers {
                x = g.relu(x);
            }
        }
        let features = g.narrow(x, 0, 0, d_f)?;
        let grad_p = g.narrow(x, 0, d_f, 3)?;
        let beta_raw = g.narrow(x, 0, d_f + 3, 1)?;
        let beta = g.sigmoid(beta_raw);
        let beta3 = g.concat(&[beta, beta, beta], 0)?;
        let step = g.mul(beta3, grad_p)?;
        let moved = g.add(dt, step)?;
        let xy = g.narrow(moved, 0, 0, 2)?;
        let th = g.narrow(moved, 0, 2, 1)?;
        let th = g.wrap_angle(th);
        let next = g.concat(&[xy, th], 0)?;
        let deltas = g.transpose(next)?;
        Ok(IterateOutput { features, deltas, grad_p, beta, attention })
    }

    /// Runs `iterations` optimizer steps from the given meta features and
    /// deltas and accumulates each iterate into global poses.
    pub fn ngo_forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamSet<S>,
        meta_features: Var,
        meta_deltas: Var,
        iterations: usize,
        trainable: bool,
    ) -> Result<GlobalOutput> {
        if iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        let mut f = meta_features;
        let mut d = meta_deltas;
        let mut iterates = Vec::with_capacity(iterations);
        let mut iterate_poses = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let it = self.ngo_iterate(g, params, f, d, trainable)?;
            f = it.features;
            d = it.deltas;
            iterate_poses.push(r2g_tensor(g, d)?);
            iterates.push(it);
        }
        Ok(GlobalOutput { meta_features, meta_deltas, iterates, iterate_poses })
    }

    /// Aggregation then the optimizer. `features` is `[in_dim, T0]`,
    /// `deltas` is `[T0, 3]`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamSet<S>,
        features: Var,
        deltas: Var,
        iterations: usize,
        trainable: bool,
    ) -> Result<GlobalOutput> {
        let (mf, md) = self.aggregate(g, params, features, deltas, trainable)?;
        self.ngo_forward(g, params, mf, md, iterations, trainable)
    }

    /// Convenience for inference on plain buffers: `features` is row-major
    /// `[T0, in_dim]` (one row per step) and `deltas` `[T0, 3]`.
    pub fn infer(
        &self,
        params: &ParamSet<f32>,
        features: &[f32],
        deltas: &[f32],
        iterations: usize,
    ) -> Result<(Vec<f32>, AttentionTrace, Vec<f32>)> {
        let t0 = deltas.len() / 3;
        let mut g = Graph::<f32>::new();
        let rows = g.constant(Tensor::new(&[t0, self.config.in_dim], features.to_vec())?);
        let fv = g.transpose(rows)?;
        let dv = g.constant(Tensor::new(&[t0, 3], deltas.to_vec())?);
        let out = self.forward(&mut g, params, fv, dv, iterations, false)?;
        let trace = AttentionTrace::collect(&g, &out);
        Ok((g.value(out.poses()).to_vec(), trace, g.value(out.meta_deltas).to_vec()))
    }
}

/// Zeroes the correction rows (∇P) of the last optimizer layer so every
/// iteration leaves the deltas unchanged.
pub fn zero_update_head<S: Scalar>(params: &mut ParamSet<S>, net: &GlobalNet) -> Result<()> {
    let name = net.last_layer();
    let d_f = net.config.d_f;
    let w = params.get_mut(&format!("{name}.w"))?;
    let row = w.shape()[1] * w.shape()[2];
    w.data_mut()[d_f * row..(d_f + 3) * row].iter_mut().for_each(|v| *v = S::zero());
    params.get_mut(&format!("{name}.b"))?.data_mut()[d_f..d_f + 3].iter_mut().for_each(|v| *v = S::zero());
    Ok(())
}

/// Sets the step-size pre-activation bias, e.g. a large negative value to
/// close the update gate.
pub fn set_beta_bias<S: Scalar>(params: &mut ParamSet<S>, net: &GlobalNet, value: f64) -> Result<()> {
    let name = format!("{}.b", net.last_layer());
    params.get_mut(&name)?.data_mut()[net.config.d_f + 3] = S::from_f64(value);
    Ok(())
}

/// Parameters a [`GlobalNet`] expects, checked before use so a mismatched
/// checkpoint fails with the offending tensor's name.
pub fn check_shapes<S: Scalar>(expected: &ParamSet<S>, actual: &ParamSet<S>) -> Result<()> {
    for (name, t) in expected.iter() {
        let got = actual.get(name).map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    if let Some(extra) = actual.names().find(|n| expected.get(n).is_err()) {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok(())
}
