use crate::{Graph, ParamSet, Result, Scalar, Var};

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error used by the checker: `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the gradients of the scalar built by `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter element.
/// `params` is left unchanged apart from its gradient buffers.
pub fn grad_check<S, F>(mut f: F, params: &mut ParamSet<S>, eps: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &ParamSet<S>) -> Result<Var>,
{
    params.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    g.backward(loss, params)?;

    let mut eval = |p: &ParamSet<S>| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, p)?;
        Ok(g.value(l)[0].as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..params.len() {
        let len = params.by_index(pi).1.len();
        for e in 0..len {
            let (name, t) = params.by_index(pi);
            let name = name.to_string();
            let analytic = t.grad().expect("filled by backward")[e].as_f64();
            let orig = t.data()[e];
            let hi = orig + S::from_f64(eps);
            let lo = orig - S::from_f64(eps);
            params.by_index_mut(pi).1.data_mut()[e] = hi;
            let plus = eval(params)?;
            params.by_index_mut(pi).1.data_mut()[e] = lo;
            let minus = eval(params)?;
            params.by_index_mut(pi).1.data_mut()[e] = orig;
            // divide by the representable step, not the requested one
            let numeric = (plus - minus) / (hi - lo).as_f64();
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report = GradCheckReport {
                    max_rel_err: err,
                    worst_param: name,
                    worst_index: e,
                    analytic,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}

/// A scalar objective that can be built in any precision, so one model
/// definition serves both the analytic pass and the `f64` reference.
pub trait Objective {
    fn build<S: Scalar>(&mut self, g: &mut Graph<S>, params: &ParamSet<S>) -> Result<Var>;
}

/// Which parameter elements a check perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    All,
    /// At most `count` elements per tensor, chosen with a seeded generator.
    PerTensor {
        count: usize,
        seed: u64,
    },
}

fn sample_indices(len: usize, sampling: Sampling, tensor_index: usize) -> Vec<usize> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    match sampling {
        Sampling::All => (0..len).collect(),
        Sampling::PerTensor { count, .. } if count >= len => (0..len).collect(),
        Sampling::PerTensor { count, seed } => {
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (tensor_index as u64).wrapping_mul(0x9e37_79b9));
            let mut idx = sample(&mut rng, len, count).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// Analytic gradients computed in precision `S` against central differences
/// evaluated in `f64`. `params` holds the reference values; the `S` copy is
/// cast from it.
pub fn grad_check_mixed<S, O>(
    obj: &mut O,
    params: &ParamSet<f64>,
    eps: f64,
    sampling: Sampling,
) -> Result<GradCheckReport>
where
    S: Scalar,
    O: Objective,
{
    let mut low: ParamSet<S> = params.cast();
    low.zero_grad();
    let mut g = Graph::<S>::new();
    let loss = obj.build(&mut g, &low)?;
    g.backward(loss, &mut low)?;

    let mut high = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..high.len() {
        let len = high.by_index(pi).1.len();
        for e in sample_indices(len, sampling, pi) {
            let orig = high.by_index(pi).1.data()[e];
            high.by_index_mut(pi).1.data_mut()[e] = orig + eps;
            let mut gp = Graph::<f64>::new();
            let l = obj.build(&mut gp, &high)?;
            let plus = gp.value(l)[0];
            high.by_index_mut(pi).1.data_mut()[e] = orig - eps;
            let mut gm = Graph::<f64>::new();
            let l = obj.build(&mut gm, &high)?;
            let minus = gm.value(l)[0];
            high.by_index_mut(pi).1.data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let (name, t) = low.by_index(pi);
            let analytic = t.grad().expect("filled by backward")[e].as_f64();
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = name.to_string();
                report.worst_index = e;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
