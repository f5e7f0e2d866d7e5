use ngo_tensor::{Graph, ParamSet, Scalar, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Uniform initialization with variance `gain / fan_in` (He for gain 2,
/// LeCun for gain 1).
pub(crate) fn uniform_init<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<S> {
    let bound = (3.0 * gain / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches data")
}

pub(crate) fn add_conv<S: Scalar>(
    params: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
) -> Result<()> {
    params.insert(format!("{name}.w"), uniform_init(rng, &[c_out, c_in, k], c_in * k, gain))?;
    params.insert(format!("{name}.b"), Tensor::zeros(&[c_out]))?;
    Ok(())
}

pub(crate) fn add_linear<S: Scalar>(
    params: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
    gain: f64,
) -> Result<()> {
    params.insert(format!("{name}.w"), uniform_init(rng, &[d_in, d_out], d_in, gain))?;
    params.insert(format!("{name}.b"), Tensor::zeros(&[d_out]))?;
    Ok(())
}

/// Binds a parameter either as a trainable leaf or as a constant.
pub(crate) fn bind<S: Scalar>(g: &mut Graph<S>, params: &ParamSet<S>, name: &str, trainable: bool) -> Result<Var> {
    Ok(if trainable { g.param(params, name)? } else { g.frozen(params, name)? })
}

pub(crate) fn conv<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamSet<S>,
    name: &str,
    x: Var,
    stride: usize,
    pad: usize,
    trainable: bool,
) -> Result<Var> {
    let w = bind(g, params, &format!("{name}.w"), trainable)?;
    let b = bind(g, params, &format!("{name}.b"), trainable)?;
    Ok(g.conv1d(x, w, b, stride, pad)?)
}

pub(crate) fn linear<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamSet<S>,
    name: &str,
    x: Var,
    trainable: bool,
) -> Result<Var> {
    let w = bind(g, params, &format!("{name}.w"), trainable)?;
    let b = bind(g, params, &format!("{name}.b"), trainable)?;
    Ok(g.linear(x, w, b)?)
}
