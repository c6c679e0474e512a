//! Single-image kernels for convolution, pooling and dense layers.
//!
//! 1D layers run through the 2D kernels with a unit height. Every sum is
//! carried in `f64` and visited in a fixed order, so results do not depend
//! on how callers batch the work.

use crate::layer::Activation;
use crate::real::Real;

const LANES: usize = 8;

/// Dot product with a fixed eight-lane summation order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[f64]) -> f64 {
    let mut lanes = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            lanes[l] += xa[l].as_f64() * xb[l];
        }
    }
    let mut s = lanes.iter().sum::<f64>();
    for (x, y) in ra.iter().zip(rb) {
        s += x.as_f64() * y;
    }
    s
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn ow(&self) -> usize {
        self.w - self.kw + 1
    }
    pub fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }
    pub fn out_len(&self) -> usize {
        self.oh() * self.ow() * self.cout
    }
    pub fn k_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

pub(crate) fn conv_forward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: &[T],
    act: Activation,
    y: &mut [T],
) {
    let (oh, ow, cin, cout) = (g.oh(), g.ow(), g.cin, g.cout);
    let mut acc = vec![0f64; cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for (a, b) in acc.iter_mut().zip(bias) {
                *a = b.as_f64();
            }
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let base = ((oy + ky) * g.w + ox + kx) * cin;
                    let xrow = &x[base..base + cin];
                    let wblock = &weight[(ky * g.kw + kx) * cin * cout..][..cin * cout];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let xv = xv.as_f64();
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &wblock[ci * cout..(ci + 1) * cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv.as_f64();
                        }
                    }
                }
            }
            let out = &mut y[(oy * ow + ox) * cout..][..cout];
            for (o, &a) in out.iter_mut().zip(&acc) {
                *o = T::of_f64(act.apply(a));
            }
        }
    }
}

/// Accumulates weight and bias gradients for one image into `dw`/`db` and,
/// when requested, writes the input gradient into `dx`.
///
/// `dz` is the gradient with respect to the pre-activation output.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (ow, cin, cout) = (g.ow(), g.cin, g.cout);
    for oy in 0..g.oh() {
        for ox in 0..ow {
            let dzrow = &dz[(oy * ow + ox) * cout..][..cout];
            if dzrow.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, &d) in db.iter_mut().zip(dzrow) {
                *b += d;
            }
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let base = ((oy + ky) * g.w + ox + kx) * cin;
                    let koff = (ky * g.kw + kx) * cin;
                    for ci in 0..cin {
                        let k = koff + ci;
                        let xv = x[base + ci].as_f64();
                        if xv != 0.0 {
                            let dwrow = &mut dw[k * cout..(k + 1) * cout];
                            for (a, &d) in dwrow.iter_mut().zip(dzrow) {
                                *a += xv * d;
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[base + ci] += dot(&weight[k * cout..(k + 1) * cout], dzrow);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PoolGeom {
    pub fn oh(&self) -> usize {
        self.h / self.ph
    }
    pub fn ow(&self) -> usize {
        self.w / self.pw
    }
    pub fn in_len(&self) -> usize {
        self.h * self.w * self.c
    }
    pub fn out_len(&self) -> usize {
        self.oh() * self.ow() * self.c
    }

    /// Index of the first maximal input inside window `(oy, ox)` for channel `c`.
    #[inline]
    fn argmax<T: Real>(&self, x: &[T], oy: usize, ox: usize, c: usize) -> usize {
        let mut best = ((oy * self.ph) * self.w + ox * self.pw) * self.c + c;
        for dy in 0..self.ph {
            for dx in 0..self.pw {
                let idx = ((oy * self.ph + dy) * self.w + ox * self.pw + dx) * self.c + c;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
        }
        best
    }
}

pub(crate) fn pool_forward<T: Real>(g: &PoolGeom, x: &[T], y: &mut [T]) {
    for oy in 0..g.oh() {
        for ox in 0..g.ow() {
            for c in 0..g.c {
                y[(oy * g.ow() + ox) * g.c + c] = x[g.argmax(x, oy, ox, c)];
            }
        }
    }
}

pub(crate) fn pool_backward<T: Real>(g: &PoolGeom, x: &[T], dy: &[f64], dx: &mut [f64]) {
    for oy in 0..g.oh() {
        for ox in 0..g.ow() {
            for c in 0..g.c {
                dx[g.argmax(x, oy, ox, c)] += dy[(oy * g.ow() + ox) * g.c + c];
            }
        }
    }
}

/// `y[b] = act(bias + x[b] · W)` for a whole batch; `W` is `[n_in, n_out]`.
pub(crate) fn dense_forward<T: Real>(
    n_in: usize,
    n_out: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
    act: Activation,
    y: &mut [T],
) {
    let batch = x.len() / n_in;
    let mut acc = vec![0f64; n_out];
    for b in 0..batch {
        for (a, bv) in acc.iter_mut().zip(bias) {
            *a = bv.as_f64();
        }
        for (i, &xv) in x[b * n_in..(b + 1) * n_in].iter().enumerate() {
            let xv = xv.as_f64();
            if xv == 0.0 {
                continue;
            }
            let wrow = &weight[i * n_out..(i + 1) * n_out];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv.as_f64();
            }
        }
        for (o, &a) in y[b * n_out..(b + 1) * n_out].iter_mut().zip(&acc) {
            *o = T::of_f64(act.apply(a));
        }
    }
}

/// Weight/bias gradients (written, not accumulated) and optional input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    n_in: usize,
    n_out: usize,
    x: &[T],
    weight: &[T],
    dz: &[f64],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [f64]>,
) {
    let batch = x.len() / n_in;
    let mut row = vec![0f64; n_out];
    for (o, d) in db.iter_mut().enumerate() {
        let mut s = 0.0;
        for b in 0..batch {
            s += dz[b * n_out + o];
        }
        *d = T::of_f64(s);
    }
    for i in 0..n_in {
        row.iter_mut().for_each(|r| *r = 0.0);
        for b in 0..batch {
            let xv = x[b * n_in + i].as_f64();
            if xv == 0.0 {
                continue;
            }
            for (r, &d) in row.iter_mut().zip(&dz[b * n_out..(b + 1) * n_out]) {
                *r += xv * d;
            }
        }
        for (w, &r) in dw[i * n_out..(i + 1) * n_out].iter_mut().zip(&row) {
            *w = T::of_f64(r);
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dzb = &dz[b * n_out..(b + 1) * n_out];
            for i in 0..n_in {
                dx[b * n_in + i] = dot(&weight[i * n_out..(i + 1) * n_out], dzb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_sum() {
        // 1 channel 3x3 input, 2x2 kernel, 1 filter.
        let g = ConvGeom {
            h: 3,
            w: 3,
            cin: 1,
            kh: 2,
            kw: 2,
            cout: 1,
        };
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let w = vec![1.0, 0.0, 0.0, -1.0];
        let mut y = vec![0.0; 4];
        conv_forward(&g, &x, &w, &[0.5], Activation::None, &mut y);
        // x[i][j] - x[i+1][j+1] = -4 everywhere
        assert_eq!(y, vec![-3.5; 4]);
    }

    #[test]
    fn pool_picks_first_max() {
        let g = PoolGeom {
            h: 2,
            w: 2,
            c: 1,
            ph: 2,
            pw: 2,
        };
        let x = vec![3.0f64, 3.0, 1.0, 2.0];
        let mut y = vec![0.0];
        pool_forward(&g, &x, &mut y);
        assert_eq!(y, vec![3.0]);
        let mut dx = vec![0.0; 4];
        pool_backward(&g, &x, &[1.0], &mut dx);
        assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    }
}
