//! Raw forward/backward kernels on flat slices. The graph in `graph.rs`
//! handles shapes and bookkeeping; everything here assumes validated sizes.

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub t_out: usize,
}

impl ConvDims {
    fn rows(&self) -> usize {
        self.c_in * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.t_out
    }
}

/// Unfolds `x: [batch, c_in, t_in]` into `[c_in * k, batch * t_out]`.
pub(crate) fn im2col<S: Scalar>(x: &[S], d: &ConvDims) -> Vec<S> {
    let cols = d.cols();
    let mut out = vec![S::zero(); d.rows() * cols];
    for ci in 0..d.c_in {
        for kk in 0..d.k {
            let row = &mut out[(ci * d.k + kk) * cols..(ci * d.k + kk + 1) * cols];
            for n in 0..d.batch {
                let src = &x[(n * d.c_in + ci) * d.t_in..(n * d.c_in + ci + 1) * d.t_in];
                let dst = &mut row[n * d.t_out..(n + 1) * d.t_out];
                for (to, v) in dst.iter_mut().enumerate() {
                    let ti = (to * d.stride + kk) as isize - d.pad as isize;
                    if ti >= 0 && (ti as usize) < d.t_in {
                        *v = src[ti as usize];
                    }
                }
            }
        }
    }
    out
}

fn col2im_add<S: Scalar>(dcols: &[S], d: &ConvDims, dx: &mut [S]) {
    let cols = d.cols();
    for ci in 0..d.c_in {
        for kk in 0..d.k {
            let row = &dcols[(ci * d.k + kk) * cols..(ci * d.k + kk + 1) * cols];
            for n in 0..d.batch {
                let dst = &mut dx[(n * d.c_in + ci) * d.t_in..(n * d.c_in + ci + 1) * d.t_in];
                let src = &row[n * d.t_out..(n + 1) * d.t_out];
                for (to, &g) in src.iter().enumerate() {
                    let ti = (to * d.stride + kk) as isize - d.pad as isize;
                    if ti >= 0 && (ti as usize) < d.t_in {
                        dst[ti as usize] += g;
                    }
                }
            }
        }
    }
}

/// Returns `(out: [batch, c_out, t_out], cols)`.
pub(crate) fn conv1d_forward<S: Scalar>(x: &[S], w: &[S], b: &[S], d: &ConvDims) -> (Vec<S>, Vec<S>) {
    let cols = im2col(x, d);
    let ncols = d.cols();
    let rows = d.rows();
    let mut tmp = vec![S::zero(); d.c_out * ncols];
    S::gemm(d.c_out, rows, ncols, S::one(), w, (rows as isize, 1), &cols, (ncols as isize, 1), S::zero(), &mut tmp);
    let mut out = vec![S::zero(); d.batch * d.c_out * d.t_out];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let src = &tmp[co * ncols + n * d.t_out..co * ncols + (n + 1) * d.t_out];
            let dst = &mut out[(n * d.c_out + co) * d.t_out..(n * d.c_out + co + 1) * d.t_out];
            for (o, &s) in dst.iter_mut().zip(src) {
                *o = s + b[co];
            }
        }
    }
    (out, cols)
}

pub(crate) struct ConvGrads<S> {
    pub dx: Option<Vec<S>>,
    pub dw: Vec<S>,
    pub db: Vec<S>,
}

pub(crate) fn conv1d_backward<S: Scalar>(dout: &[S], w: &[S], cols: &[S], d: &ConvDims, want_dx: bool) -> ConvGrads<S> {
    let ncols = d.cols();
    let rows = d.rows();
    let mut dtmp = vec![S::zero(); d.c_out * ncols];
    let mut db = vec![S::zero(); d.c_out];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let src = &dout[(n * d.c_out + co) * d.t_out..(n * d.c_out + co + 1) * d.t_out];
            let dst = &mut dtmp[co * ncols + n * d.t_out..co * ncols + (n + 1) * d.t_out];
            dst.copy_from_slice(src);
            db[co] += src.iter().copied().sum::<S>();
        }
    }
    let mut dw = vec![S::zero(); d.c_out * rows];
    // dW = dtmp · colsᵀ
    S::gemm(d.c_out, ncols, rows, S::one(), &dtmp, (ncols as isize, 1), cols, (1, ncols as isize), S::zero(), &mut dw);
    let dx = want_dx.then(|| {
        let mut dcols = vec![S::zero(); rows * ncols];
        // dcols = Wᵀ · dtmp
        S::gemm(
            rows,
            d.c_out,
            ncols,
            S::one(),
            w,
            (1, rows as isize),
            &dtmp,
            (ncols as isize, 1),
            S::zero(),
            &mut dcols,
        );
        let mut dx = vec![S::zero(); d.batch * d.c_in * d.t_in];
        col2im_add(&dcols, d, &mut dx);
        dx
    });
    ConvGrads { dx, dw, db }
}

/// Max pooling with window 2 and stride 2 along the last axis.
/// Ties resolve to the lower index. Returns `(out, argmax)`.
pub(crate) fn maxpool2_forward<S: Scalar>(x: &[S], rows: usize, t: usize) -> (Vec<S>, Vec<u32>) {
    let half = t / 2;
    let mut out = Vec::with_capacity(rows * half);
    let mut arg = Vec::with_capacity(rows * half);
    for r in 0..rows {
        let row = &x[r * t..(r + 1) * t];
        for j in 0..half {
            let (a, b) = (row[2 * j], row[2 * j + 1]);
            if b > a {
                out.push(b);
                arg.push((r * t + 2 * j + 1) as u32);
            } else {
                out.push(a);
                arg.push((r * t + 2 * j) as u32);
            }
        }
    }
    (out, arg)
}

/// Cumulative planar pose composition over rows of `[T, 3]` (dx, dy, dθ),
/// restarting from the identity every `segment` rows.
pub(crate) fn se2_accumulate_forward<S: Scalar>(x: &[S], t: usize, segment: usize) -> Vec<S> {
    let mut out = vec![S::zero(); t * 3];
    for r in 0..t {
        let (px, py, pth) = if r % segment == 0 {
            (S::zero(), S::zero(), S::zero())
        } else {
            (out[3 * (r - 1)], out[3 * (r - 1) + 1], out[3 * (r - 1) + 2])
        };
        let (dx, dy, dth) = (x[3 * r], x[3 * r + 1], x[3 * r + 2]);
        let (s, c) = pth.sin_cos();
        out[3 * r] = px + dx * c - dy * s;
        out[3 * r + 1] = py + dx * s + dy * c;
        out[3 * r + 2] = wrap(pth + dth);
    }
    out
}

pub(crate) fn se2_accumulate_backward<S: Scalar>(x: &[S], out: &[S], dout: &[S], t: usize, segment: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); t * 3];
    let (mut cx, mut cy, mut cth) = (S::zero(), S::zero(), S::zero());
    for r in (0..t).rev() {
        // adjoint of out[r], including what flowed back from out[r + 1]
        let gx = dout[3 * r] + cx;
        let gy = dout[3 * r + 1] + cy;
        let gth = dout[3 * r + 2] + cth;
        let prev_th = if r % segment == 0 { S::zero() } else { out[3 * (r - 1) + 2] };
        let (s, c) = prev_th.sin_cos();
        let (ddx, ddy) = (x[3 * r], x[3 * r + 1]);
        dx[3 * r] = gx * c + gy * s;
        dx[3 * r + 1] = -gx * s + gy * c;
        dx[3 * r + 2] = gth;
        if r % segment == 0 {
            cx = S::zero();
            cy = S::zero();
            cth = S::zero();
        } else {
            cx = gx;
            cy = gy;
            cth = gth + gx * (-ddx * s - ddy * c) + gy * (ddx * c - ddy * s);
        }
    }
    dx
}

/// Wraps an angle into (−π, π]. Values already inside the interval are
/// returned unchanged.
pub fn wrap<S: Scalar>(a: S) -> S {
    let pi = S::from_f64(std::f64::consts::PI);
    if a > -pi && a <= pi {
        return a;
    }
    let two_pi = pi + pi;
    let mut r = a % two_pi;
    if r <= -pi {
        r += two_pi;
    } else if r > pi {
        r -= two_pi;
    }
    r
}
