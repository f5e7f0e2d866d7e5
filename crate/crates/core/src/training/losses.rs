use ngo_tensor::{Graph, Scalar, Var};

use crate::{Error, Result};

/// Sum over rows of `dx² + dy² + λ_rot·wrap(dθ)²` for two `[N, 3]` tensors.
fn pose_sq_error<S: Scalar>(g: &mut Graph<S>, pred: Var, gt: Var, lambda_rot: f64) -> Result<Var> {
    let ps = g.shape(pred).to_vec();
    let gs = g.shape(gt).to_vec();
    if ps.len() != 2 || ps[1] != 3 || ps != gs {
        return Err(Error::LengthMismatch { what: "pose loss rows", left: ps[0], right: gs[0] });
    }
    let diff = g.sub(pred, gt)?;
    let xy = g.narrow(diff, 1, 0, 2)?;
    let th = g.narrow(diff, 1, 2, 1)?;
    let th = g.wrap_angle(th);
    let xy2 = g.square(xy);
    let th2 = g.square(th);
    let pos = g.sum(xy2);
    let rot = g.sum(th2);
    let rot = g.scale(rot, S::from_f64(lambda_rot));
    Ok(g.add(pos, rot)?)
}

/// Mean over the batch of the squared relative-pose error. `pred` and `gt`
/// are `[N, 3]`.
pub fn local_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, gt: Var, lambda_rot: f64) -> Result<Var> {
    let n = g.shape(pred)[0];
    let total = pose_sq_error(g, pred, gt, lambda_rot)?;
    Ok(g.scale(total, S::from_f64(1.0 / n as f64)))
}

/// Sum over iterations of the mean squared global-pose error. Each entry
/// of `iterate_poses` and `gt` is `[T, 3]`; `final_only` keeps just the
/// last iteration.
pub fn global_loss<S: Scalar>(
    g: &mut Graph<S>,
    iterate_poses: &[Var],
    gt: Var,
    lambda_rot: f64,
    final_only: bool,
) -> Result<Var> {
    let Some(&last) = iterate_poses.last() else {
        return Err(Error::EmptySequence("global loss iterates"));
    };
    let used: &[Var] = if final_only { std::slice::from_ref(&last) } else { iterate_poses };
    let t = g.shape(gt)[0];
    let mut total: Option<Var> = None;
    for &p in used {
        if g.shape(p) != g.shape(gt) {
            return Err(Error::LengthMismatch {
                what: "global loss poses vs ground truth",
                left: g.shape(p)[0],
                right: t,
            });
        }
        let e = pose_sq_error(g, p, gt, lambda_rot)?;
        let e = g.scale(e, S::from_f64(1.0 / t as f64));
        total = Some(match total {
            Some(acc) => g.add(acc, e)?,
            None => e,
        });
    }
    Ok(total.expect("at least one iterate"))
}
