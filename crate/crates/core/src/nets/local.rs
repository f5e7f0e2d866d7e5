use ngo_tensor::{Graph, ParamSet, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::init::{add_conv, add_linear, conv, linear};
use crate::geometry::RelPose2;
use crate::mazeworld::{Action, Observation, N_RAYS, RAY_CHANNELS};
use crate::{Error, Result};

/// Input channels: two stacked frames of (r, g, b, depth).
pub const PAIR_CHANNELS: usize = 2 * RAY_CHANNELS;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalNetConfig {
    pub n_rays: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub feature_dim: usize,
    pub use_action: bool,
}

impl Default for LocalNetConfig {
    fn default() -> Self {
        LocalNetConfig {
            n_rays: N_RAYS,
            channels: vec![32, 64, 96, 128],
            kernels: vec![7, 5, 5, 3],
            feature_dim: 256,
            use_action: true,
        }
    }
}

/// Odometry network over a pair of ray scans: strided conv stack, one
/// shared hidden layer (the pose feature) and separate translation and
/// rotation heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPoseNet {
    config: LocalNetConfig,
}

/// Per-pair outputs: `delta` is `[N, 3]` as (dx, dy, dθ), `feature` is `[N, D]`.
#[derive(Debug, Clone, Copy)]
pub struct LocalOutput {
    pub delta: Var,
    pub feature: Var,
}

impl LocalPoseNet {
    pub fn new(config: LocalNetConfig) -> Result<Self> {
        if config.channels.is_empty() || config.channels.len() != config.kernels.len() {
            return Err(Error::config("local.channels", "needs one kernel size per conv layer"));
        }
        if config.kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::config("local.kernels", "kernel sizes must be odd"));
        }
        if config.channels.contains(&0) || config.feature_dim == 0 || config.n_rays == 0 {
            return Err(Error::config("local", "layer sizes must be positive"));
        }
        Ok(LocalPoseNet { config })
    }

    pub fn config(&self) -> &LocalNetConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Length of the scan after each stride-2 layer.
    pub fn conv_lengths(&self) -> Vec<usize> {
        let mut t = self.config.n_rays;
        self.config
            .kernels
            .iter()
            .map(|&k| {
                t = (t + 2 * (k / 2) - k) / 2 + 1;
                t
            })
            .collect()
    }

    pub fn flat_dim(&self) -> usize {
        self.config.channels.last().unwrap() * self.conv_lengths().last().unwrap()
    }

    fn head_in(&self) -> usize {
        self.config.feature_dim + if self.config.use_action { 3 } else { 0 }
    }

    /// Fresh parameters; the two output heads start at zero so an untrained
    /// net predicts no motion.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> ParamSet<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut c_in = PAIR_CHANNELS;
        for (i, (&c, &k)) in self.config.channels.iter().zip(&self.config.kernels).enumerate() {
            add_conv(&mut p, &mut rng, &format!("local.conv{i}"), c, c_in, k, 2.0).expect("unique names");
            c_in = c;
        }
        add_linear(&mut p, &mut rng, "local.fc", self.flat_dim(), self.config.feature_dim, 2.0).expect("unique names");
        let h = self.head_in();
        p.insert("local.trans.w", Tensor::zeros(&[h, 2])).expect("unique names");
        p.insert("local.trans.b", Tensor::zeros(&[2])).expect("unique names");
        p.insert("local.rot.w", Tensor::zeros(&[h, 1])).expect("unique names");
        p.insert("local.rot.b", Tensor::zeros(&[1])).expect("unique names");
        p
    }

    /// `input` is `[N, 8, n_rays]`; `actions` is a `[N, 3]` one-hot, required
    /// when the config uses actions and ignored otherwise.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamSet<S>,
        input: Var,
        actions: Option<Var>,
        trainable: bool,
    ) -> Result<LocalOutput> {
        let shape = g.shape(input).to_vec();
        if shape.len() != 3 || shape[1] != PAIR_CHANNELS || shape[2] != self.config.n_rays {
            return Err(Error::LengthMismatch {
                what: "local net input [N, 8, rays]",
                left: shape.iter().product(),
                right: PAIR_CHANNELS * self.config.n_rays,
            });
        }
        let n = shape[0];
        let mut x = input;
        for (i, &k) in self.config.kernels.iter().enumerate() {
            x = conv(g, params, &format!("local.conv{i}"), x, 2, k / 2, trainable)?;
            x = g.relu(x);
        }
        let flat = g.reshape(x, &[n, self.flat_dim()])?;
        let hidden = linear(g, params, "local.fc", flat, trainable)?;
        let feature = g.relu(hidden);
        let head_in = if self.config.use_action {
            let a = actions.ok_or_else(|| Error::config("local.use_action", "actions required"))?;
            if g.shape(a) != [n, 3] {
                return Err(Error::LengthMismatch {
                    what: "local net actions [N, 3]",
                    left: g.shape(a).iter().product(),
                    right: n * 3,
                });
            }
            g.concat(&[feature, a], 1)?
        } else {
            feature
        };
        let trans = linear(g, params, "local.trans", head_in, trainable)?;
        let rot = linear(g, params, "local.rot", head_in, trainable)?;
        let rot = g.wrap_angle(rot);
        let delta = g.concat(&[trans, rot], 1)?;
        Ok(LocalOutput { delta, feature })
    }

    /// Runs the net on a batch of encoded pairs without recording gradients.
    /// Returns `([N·3] deltas, [N·D] features)`.
    pub fn infer(&self, params: &ParamSet<f32>, input: &[f32], actions: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let per = PAIR_CHANNELS * self.config.n_rays;
        if per == 0 || input.len() % per != 0 {
            return Err(Error::LengthMismatch { what: "local net input", left: input.len(), right: per });
        }
        let n = input.len() / per;
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[n, PAIR_CHANNELS, self.config.n_rays], input.to_vec())?);
        let a = if self.config.use_action { Some(g.constant(Tensor::new(&[n, 3], actions.to_vec())?)) } else { None };
        let out = self.forward(&mut g, params, x, a, false)?;
        Ok((g.value(out.delta).to_vec(), g.value(out.feature).to_vec()))
    }

    /// Single-pair prediction: relative pose and the `[D]` feature.
    pub fn predict_pair(
        &self,
        params: &ParamSet<f32>,
        a: &Observation,
        b: &Observation,
        action: Action,
        max_range: f32,
    ) -> Result<(RelPose2, Vec<f32>)> {
        let mut input = Vec::new();
        encode_pair(a, b, max_range, self.config.n_rays, &mut input)?;
        let (d, f) = self.infer(params, &input, &action.one_hot())?;
        Ok((RelPose2 { dx: d[0] as f64, dy: d[1] as f64, dtheta: d[2] as f64 }, f))
    }
}

/// Appends the channels-first `[8, n_rays]` encoding of a frame pair to
/// `out`: (r, g, b, depth / max_range) of `a`, then of `b`.
pub fn encode_pair(a: &Observation, b: &Observation, max_range: f32, n_rays: usize, out: &mut Vec<f32>) -> Result<()> {
    for obs in [a, b] {
        if obs.rays.len() != n_rays {
            return Err(Error::LengthMismatch { what: "observation rays", left: obs.rays.len(), right: n_rays });
        }
    }
    for obs in [a, b] {
        for ch in 0..RAY_CHANNELS {
            let scale = if ch == 3 { 1.0 / max_range } else { 1.0 };
            out.extend(obs.rays.iter().map(|r| r[ch] * scale));
        }
    }
    Ok(())
}
