//! Finite-difference checks for every differentiable op, shared by the test
//! suite and the `grad-check` command.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{grad_check, GradCheckReport, Graph, ParamSet, Result, Scalar, Tensor, Var};

/// Outcome of checking one op.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

/// Names of all ops covered by [`check_op`].
pub const OPS: &[&str] = &[
    "linear",
    "matmul",
    "transpose",
    "conv1d",
    "conv1d_strided_batched",
    "maxpool1d",
    "relu",
    "sigmoid",
    "tanh",
    "add",
    "sub",
    "mul",
    "scale",
    "square",
    "concat",
    "narrow",
    "reshape",
    "select_rows",
    "sum",
    "mean",
    "dot",
    "softmax",
    "row_normalize",
    "wrap_angle",
    "se2_accumulate",
];

struct Mix(ChaCha8Rng);

impl Mix {
    fn next(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.0.gen_range(lo..=hi)
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform(-1.0, 1.0)).collect()
    }

    /// Values bounded away from zero, for kinked ops.
    fn away_from_zero(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let m = self.uniform(0.1, 1.0);
                if self.next() & 1 == 0 {
                    m
                } else {
                    -m
                }
            })
            .collect()
    }
}

struct Case<S> {
    params: ParamSet<S>,
    projection: Vec<f64>,
}

fn tensor<S: Scalar>(shape: &[usize], data: &[f64]) -> Tensor<S> {
    Tensor::from_f64(shape, data).expect("check fixtures are well formed")
}

/// Scalarizes `out` as `⟨out, R⟩` with fixed random `R`, so that every
/// output element contributes a distinct weight.
fn project<S: Scalar>(g: &mut Graph<S>, out: Var, projection: &[f64]) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let r = g.constant(tensor(&shape, &projection[..n]));
    g.dot(out, r)
}

fn build<S: Scalar>(op: &str, rng: &mut Mix) -> Case<S> {
    let mut params = ParamSet::new();
    let mut add = |name: &str, shape: &[usize], data: Vec<f64>| {
        params.insert(name, tensor(shape, &data)).expect("unique fixture names");
    };
    let (a, b, c) = (rng.dim(1, 4), rng.dim(1, 4), rng.dim(1, 4));
    match op {
        "linear" => {
            add("x", &[a, b], rng.vec(a * b));
            add("w", &[b, c], rng.vec(b * c));
            add("b", &[c], rng.vec(c));
        }
        "matmul" => {
            add("a", &[a, b], rng.vec(a * b));
            add("b", &[b, c], rng.vec(b * c));
        }
        "conv1d" => {
            let t = rng.dim(3, 9);
            add("x", &[a, t], rng.vec(a * t));
            add("w", &[b, a, 3], rng.vec(b * a * 3));
            add("b", &[b], rng.vec(b));
        }
        "conv1d_strided_batched" => {
            let t = rng.dim(5, 12);
            add("x", &[2, a, t], rng.vec(2 * a * t));
            add("w", &[b, a, 5], rng.vec(b * a * 5));
            add("b", &[b], rng.vec(b));
        }
        "maxpool1d" => {
            let t = 2 * rng.dim(1, 4);
            // pairs separated by at least 0.2 so the argmax is stable under ε
            let mut v = Vec::with_capacity(a * t);
            for _ in 0..a * t / 2 {
                let base = rng.uniform(-1.0, 1.0);
                let gap = rng.uniform(0.2, 0.6);
                if rng.next() & 1 == 0 {
                    v.extend([base, base + gap]);
                } else {
                    v.extend([base + gap, base]);
                }
            }
            add("x", &[a, t], v);
        }
        "relu" => add("x", &[a, b], rng.away_from_zero(a * b)),
        "add" | "sub" | "mul" | "dot" => {
            add("a", &[a, b], rng.vec(a * b));
            add("b", &[a, b], rng.vec(a * b));
        }
        "concat" => {
            add("a", &[a, b], rng.vec(a * b));
            add("b", &[a, c], rng.vec(a * c));
        }
        "narrow" | "select_rows" => {
            let rows = rng.dim(2, 5);
            add("x", &[rows, b], rng.vec(rows * b));
        }
        "softmax" => add("x", &[a, b + 1], rng.vec(a * (b + 1)).iter().map(|v| 3.0 * v).collect()),
        "row_normalize" => {
            let v = (0..a * (b + 1)).map(|_| rng.uniform(0.5, 1.5)).collect();
            add("x", &[a, b + 1], v);
        }
        "wrap_angle" => {
            let v = (0..a * b)
                .map(|_| {
                    let k = (rng.next() % 5) as f64 - 2.0;
                    rng.uniform(-3.0, 3.0) + k * std::f64::consts::TAU
                })
                .collect();
            add("x", &[a, b], v);
        }
        "se2_accumulate" => {
            let t = rng.dim(1, 8);
            add("x", &[t, 3], rng.vec(3 * t));
        }
        _ => add("x", &[a, b], rng.vec(a * b)),
    }
    let projection = rng.vec(512);
    Case { params, projection }
}

fn forward<S: Scalar>(op: &str, g: &mut Graph<S>, p: &ParamSet<S>, segment: usize) -> Result<Var> {
    let x = |g: &mut Graph<S>, n: &str| g.param(p, n);
    Ok(match op {
        "linear" => {
            let (xv, w, b) = (x(g, "x")?, x(g, "w")?, x(g, "b")?);
            g.linear(xv, w, b)?
        }
        "matmul" => {
            let (a, b) = (x(g, "a")?, x(g, "b")?);
            g.matmul(a, b)?
        }
        "transpose" => {
            let v = x(g, "x")?;
            g.transpose(v)?
        }
        "conv1d" => {
            let (xv, w, b) = (x(g, "x")?, x(g, "w")?, x(g, "b")?);
            g.conv1d(xv, w, b, 1, 1)?
        }
        "conv1d_strided_batched" => {
            let (xv, w, b) = (x(g, "x")?, x(g, "w")?, x(g, "b")?);
            g.conv1d(xv, w, b, 2, 2)?
        }
        "maxpool1d" => {
            let v = x(g, "x")?;
            g.maxpool1d(v)?
        }
        "relu" => {
            let v = x(g, "x")?;
            g.relu(v)
        }
        "sigmoid" => {
            let v = x(g, "x")?;
            g.sigmoid(v)
        }
        "tanh" => {
            let v = x(g, "x")?;
            g.tanh(v)
        }
        "add" => {
            let (a, b) = (x(g, "a")?, x(g, "b")?);
            g.add(a, b)?
        }
        "sub" => {
            let (a, b) = (x(g, "a")?, x(g, "b")?);
            g.sub(a, b)?
        }
        "mul" => {
            let (a, b) = (x(g, "a")?, x(g, "b")?);
            g.mul(a, b)?
        }
        "scale" => {
            let v = x(g, "x")?;
            g.scale(v, S::from_f64(-1.7))
        }
        "square" => {
            let v = x(g, "x")?;
            g.square(v)
        }
        "concat" => {
            let (a, b) = (x(g, "a")?, x(g, "b")?);
            g.concat(&[a, b, a], 1)?
        }
        "narrow" => {
            let v = x(g, "x")?;
            let rows = g.shape(v)[0];
            g.narrow(v, 0, 1, rows - 1)?
        }
        "reshape" => {
            let v = x(g, "x")?;
            let n = g.value(v).len();
            g.reshape(v, &[n])?
        }
        "select_rows" => {
            let v = x(g, "x")?;
            let rows = g.shape(v)[0];
            g.select_rows(v, &[rows - 1, 0, rows - 1])?
        }
        "sum" => {
            let v = x(g, "x")?;
            let sq = g.square(v);
            g.sum(sq)
        }
        "mean" => {
            let v = x(g, "x")?;
            let sq = g.square(v);
            g.mean(sq)
        }
        "dot" => {
            let (a, b) = (x(g, "a")?, x(g, "b")?);
            let d = g.dot(a, b)?;
            g.square(d)
        }
        "softmax" => {
            let v = x(g, "x")?;
            g.softmax(v)?
        }
        "row_normalize" => {
            let v = x(g, "x")?;
            g.row_normalize(v, S::from_f64(1e-6))?
        }
        "wrap_angle" => {
            let v = x(g, "x")?;
            g.wrap_angle(v)
        }
        "se2_accumulate" => {
            let v = x(g, "x")?;
            g.se2_accumulate(v, segment)?
        }
        other => return Err(crate::TensorError::invalid("check", format!("unknown op `{other}`"))),
    })
}

/// Finite-difference check of one op on a random fixture derived from `seed`.
pub fn check_op<S: Scalar>(op: &'static str, seed: u64, eps: f64) -> Result<OpCheck> {
    let op_index = OPS.iter().position(|&o| o == op).unwrap_or(OPS.len()) as u64;
    let mut rng = Mix(ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(op_index)));
    let case = build::<S>(op, &mut rng);
    let segment = rng.dim(1, 4);
    let projection = case.projection;
    let mut params = case.params;
    let report = grad_check(
        |g, p| {
            let out = forward(op, g, p, segment)?;
            project(g, out, &projection)
        },
        &mut params,
        eps,
    )?;
    Ok(OpCheck { op, report })
}

/// Checks the analytic gradient computed in precision `S` against central
/// differences evaluated in `f64` on the same fixture. This isolates the
/// error of the `S` backward pass from the rounding noise a finite
/// difference taken in `S` would add.
pub fn check_op_against_f64<S: Scalar>(op: &'static str, seed: u64, eps: f64) -> Result<OpCheck> {
    let op_index = OPS.iter().position(|&o| o == op).unwrap_or(OPS.len()) as u64;
    let mut rng = Mix(ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(op_index)));
    let case = build::<S>(op, &mut rng);
    let segment = rng.dim(1, 4);
    let projection = case.projection;
    let mut low = case.params;
    let mut high: ParamSet<f64> = low.cast();

    low.zero_grad();
    let mut g = Graph::<S>::new();
    let out = forward(op, &mut g, &low, segment)?;
    let loss = project(&mut g, out, &projection)?;
    g.backward(loss, &mut low)?;

    let numeric = numeric_gradients(&mut high, eps, |g, p| {
        let out = forward(op, g, p, segment)?;
        project(g, out, &projection)
    })?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, num) in numeric.iter().enumerate() {
        let (name, t) = low.by_index(pi);
        for (e, (&a, &n)) in t.grad().expect("filled by backward").iter().zip(num).enumerate() {
            let err = crate::rel_err(a.as_f64(), n);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = name.to_string();
                report.worst_index = e;
                report.analytic = a.as_f64();
                report.numeric = n;
            }
        }
    }
    Ok(OpCheck { op, report })
}

fn numeric_gradients(
    params: &mut ParamSet<f64>,
    eps: f64,
    mut f: impl FnMut(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
) -> Result<Vec<Vec<f64>>> {
    let mut eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, p)?;
        Ok(g.value(l)[0])
    };
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let len = params.by_index(pi).1.len();
        let mut grads = Vec::with_capacity(len);
        for e in 0..len {
            let orig = params.by_index(pi).1.data()[e];
            params.by_index_mut(pi).1.data_mut()[e] = orig + eps;
            let plus = eval(params)?;
            params.by_index_mut(pi).1.data_mut()[e] = orig - eps;
            let minus = eval(params)?;
            params.by_index_mut(pi).1.data_mut()[e] = orig;
            grads.push((plus - minus) / (2.0 * eps));
        }
        out.push(grads);
    }
    Ok(out)
}

/// Runs [`check_op`] for every op in [`OPS`].
pub fn check_all_ops<S: Scalar>(seed: u64, eps: f64) -> Result<Vec<OpCheck>> {
    OPS.iter().map(|op| check_op::<S>(op, seed, eps)).collect()
}

/// A deliberately broken gradient: the loss reads `w` twice but one read
/// is detached, so the analytic gradient is half the true one. Used as a
/// negative control for the checker.
pub fn broken_backward_fixture<S: Scalar>(eps: f64) -> Result<GradCheckReport> {
    let mut params = ParamSet::new();
    params.insert("w", tensor::<S>(&[3], &[0.4, -0.8, 1.1]))?;
    grad_check(
        |g, p| {
            let w = g.param(p, "w")?;
            let detached = g.frozen(p, "w")?;
            let prod = g.mul(w, detached)?;
            Ok(g.sum(prod))
        },
        &mut params,
        eps,
    )
}
