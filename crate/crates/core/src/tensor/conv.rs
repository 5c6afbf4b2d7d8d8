use super::linalg::{matmul, MatLayout};
use super::{Real, Tape, Var};

/// Index map shared by strided convolution and its transpose: output
/// position `t`, tap `k` reads signal sample `t * stride + k - pad_left`,
/// with reads outside `[0, signal_len)` contributing zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub signal_len: usize,
    pub positions: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    /// Geometry of a strided convolution with explicit left/right padding.
    pub fn strided(signal_len: usize, kernel: usize, stride: usize, pad_left: usize, pad_right: usize) -> Self {
        let padded = signal_len + pad_left + pad_right;
        assert!(padded >= kernel, "conv: input shorter than kernel");
        Self {
            signal_len,
            positions: (padded - kernel) / stride + 1,
            kernel,
            stride,
            pad_left,
        }
    }

    /// Unfolds `x` (`[channels, signal_len]`) into `[channels * kernel, positions]`.
    fn im2col<F: Real>(&self, x: &[F], channels: usize, cols: &mut [F]) {
        let (len, pos) = (self.signal_len, self.positions);
        for c in 0..channels {
            let src = &x[c * len..(c + 1) * len];
            for k in 0..self.kernel {
                let row = &mut cols[(c * self.kernel + k) * pos..(c * self.kernel + k + 1) * pos];
                for (t, v) in row.iter_mut().enumerate() {
                    let idx = (t * self.stride + k) as isize - self.pad_left as isize;
                    *v = if idx >= 0 && (idx as usize) < len {
                        src[idx as usize]
                    } else {
                        F::zero()
                    };
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds columns back onto the signal.
    fn col2im<F: Real>(&self, cols: &[F], channels: usize, x: &mut [F]) {
        let (len, pos) = (self.signal_len, self.positions);
        for c in 0..channels {
            let dst = &mut x[c * len..(c + 1) * len];
            for k in 0..self.kernel {
                let row = &cols[(c * self.kernel + k) * pos..(c * self.kernel + k + 1) * pos];
                for (t, &v) in row.iter().enumerate() {
                    let idx = (t * self.stride + k) as isize - self.pad_left as isize;
                    if idx >= 0 && (idx as usize) < len {
                        dst[idx as usize] += v;
                    }
                }
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// 1-D convolution. `x`: `[batch, c_in, len]`, `w`: `[c_out, c_in, kernel]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv1d: input must be [batch, channels, length]");
        assert_eq!(ws.len(), 3, "conv1d: weight must be [out, in, kernel]");
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[0], ws[2]);
        assert_eq!(ws[1], c_in, "conv1d: channel mismatch");
        let geo = ConvGeometry::strided(len, kernel, stride, pad_left, pad_right);
        let pos = geo.positions;
        let ck = c_in * kernel;

        let mut y = vec![F::zero(); batch * c_out * pos];
        let mut cols = vec![F::zero(); ck * pos];
        let xv = self.value(x);
        let wv = self.value(w);
        for b in 0..batch {
            geo.im2col(&xv[b * c_in * len..(b + 1) * c_in * len], c_in, &mut cols);
            matmul(
                &mut y[b * c_out * pos..(b + 1) * c_out * pos],
                wv,
                MatLayout::Normal,
                &cols,
                MatLayout::Normal,
                c_out,
                ck,
                pos,
                false,
            );
        }
        if let Some(bias) = bias {
            add_channel_bias(&mut y, self.value(bias), c_out, pos);
        }
        let inputs: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        self.push_op(y, vec![batch, c_out, pos], &inputs, move |vals, g, acc| {
            let xv = vals.get(x);
            let wv = vals.get(w);
            let mut cols = vec![F::zero(); ck * pos];
            if acc.wants(w) {
                let dw = acc.slot(w).unwrap();
                for b in 0..batch {
                    geo.im2col(&xv[b * c_in * len..(b + 1) * c_in * len], c_in, &mut cols);
                    matmul(
                        dw,
                        &g[b * c_out * pos..(b + 1) * c_out * pos],
                        MatLayout::Normal,
                        &cols,
                        MatLayout::Transposed,
                        c_out,
                        pos,
                        ck,
                        true,
                    );
                }
            }
            if let Some(dx) = acc.slot(x) {
                for b in 0..batch {
                    matmul(
                        &mut cols,
                        wv,
                        MatLayout::Transposed,
                        &g[b * c_out * pos..(b + 1) * c_out * pos],
                        MatLayout::Normal,
                        ck,
                        c_out,
                        pos,
                        false,
                    );
                    geo.col2im(&cols, c_in, &mut dx[b * c_in * len..(b + 1) * c_in * len]);
                }
            }
            if let Some(bias) = bias {
                if let Some(db) = acc.slot(bias) {
                    channel_bias_grad(db, g, c_out, pos);
                }
            }
        })
    }

    /// Transposed 1-D convolution, the adjoint of [`Tape::conv1d`] with the
    /// same stride and left padding. `x`: `[batch, c_in, len]`,
    /// `w`: `[c_in, c_out, kernel]`; the output is cropped to `out_len`
    /// samples starting `crop_left` samples into the full-length result.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        crop_left: usize,
        out_len: usize,
    ) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv_transpose1d: input must be [batch, channels, length]");
        assert_eq!(ws.len(), 3, "conv_transpose1d: weight must be [in, out, kernel]");
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[1], ws[2]);
        assert_eq!(ws[0], c_in, "conv_transpose1d: channel mismatch");
        let geo = ConvGeometry {
            signal_len: out_len,
            positions: len,
            kernel,
            stride,
            pad_left: crop_left,
        };
        let ck = c_out * kernel;

        let mut y = vec![F::zero(); batch * c_out * out_len];
        let mut cols = vec![F::zero(); ck * len];
        let xv = self.value(x);
        let wv = self.value(w);
        for b in 0..batch {
            matmul(
                &mut cols,
                wv,
                MatLayout::Transposed,
                &xv[b * c_in * len..(b + 1) * c_in * len],
                MatLayout::Normal,
                ck,
                c_in,
                len,
                false,
            );
            geo.col2im(&cols, c_out, &mut y[b * c_out * out_len..(b + 1) * c_out * out_len]);
        }
        if let Some(bias) = bias {
            add_channel_bias(&mut y, self.value(bias), c_out, out_len);
        }
        let inputs: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        self.push_op(y, vec![batch, c_out, out_len], &inputs, move |vals, g, acc| {
            let xv = vals.get(x);
            let wv = vals.get(w);
            let wants_x = acc.wants(x);
            let wants_w = acc.wants(w);
            let mut cols = vec![F::zero(); ck * len];
            for b in 0..batch {
                geo.im2col(&g[b * c_out * out_len..(b + 1) * c_out * out_len], c_out, &mut cols);
                if wants_x {
                    let dx = acc.slot(x).unwrap();
                    matmul(
                        &mut dx[b * c_in * len..(b + 1) * c_in * len],
                        wv,
                        MatLayout::Normal,
                        &cols,
                        MatLayout::Normal,
                        c_in,
                        ck,
                        len,
                        true,
                    );
                }
                if wants_w {
                    let dw = acc.slot(w).unwrap();
                    matmul(
                        dw,
                        &xv[b * c_in * len..(b + 1) * c_in * len],
                        MatLayout::Normal,
                        &cols,
                        MatLayout::Transposed,
                        c_in,
                        len,
                        ck,
                        true,
                    );
                }
            }
            if let Some(bias) = bias {
                if let Some(db) = acc.slot(bias) {
                    channel_bias_grad(db, g, c_out, out_len);
                }
            }
        })
    }
}

fn add_channel_bias<F: Real>(y: &mut [F], bias: &[F], channels: usize, len: usize) {
    for (i, row) in y.chunks_mut(len).enumerate() {
        let b = bias[i % channels];
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_bias_grad<F: Real>(db: &mut [F], g: &[F], channels: usize, len: usize) {
    for (i, row) in g.chunks(len).enumerate() {
        db[i % channels] += row.iter().copied().sum::<F>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_grad, seeded};

    fn naive_conv(x: &[f64], w: &[f64], c_in: usize, len: usize, c_out: usize, k: usize, s: usize, pl: usize, pr: usize) -> Vec<f64> {
        let pos = (len + pl + pr - k) / s + 1;
        let mut y = vec![0.0; c_out * pos];
        for o in 0..c_out {
            for t in 0..pos {
                for c in 0..c_in {
                    for j in 0..k {
                        let idx = (t * s + j) as isize - pl as isize;
                        if idx >= 0 && (idx as usize) < len {
                            y[o * pos + t] += w[(o * c_in + c) * k + j] * x[c * len + idx as usize];
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv1d_matches_direct_summation() {
        let (c_in, len, c_out, k, s) = (3, 20, 4, 7, 5);
        let x = seeded(c_in * len, 1);
        let w = seeded(c_out * c_in * k, 2);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x.clone(), &[1, c_in, len]);
        let wv = t.constant(w.clone(), &[c_out, c_in, k]);
        let y = t.conv1d(xv, wv, None, s, 1, 1);
        assert_eq!(t.shape(y), &[1, c_out, 4]);
        let naive = naive_conv(&x, &w, c_in, len, c_out, k, s, 1, 1);
        for (a, b) in t.value(y).iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_the_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for matching geometry.
        let (c_in, len, c_out, k, s, pl) = (2, 12, 3, 5, 4, 0);
        let x = seeded(c_in * len, 3);
        let w = seeded(c_out * c_in * k, 4);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x.clone(), &[1, c_in, len]);
        let wv = t.constant(w.clone(), &[c_out, c_in, k]);
        let y = t.conv1d(xv, wv, None, s, pl, 1);
        let pos = t.shape(y)[2];
        let probe = seeded(c_out * pos, 5);
        let lhs: f64 = t.value(y).iter().zip(&probe).map(|(a, b)| a * b).sum();
        // conv weight [c_out, c_in, k] doubles as transpose weight [in=c_out, out=c_in, k].
        let pv = t.constant(probe, &[1, c_out, pos]);
        let back = t.conv_transpose1d(pv, wv, None, s, pl, len);
        let rhs: f64 = t.value(back).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let w0 = seeded(4 * 2 * 3, 7);
        let b0 = seeded(4, 8);
        let err = check_grad(&seeded(2 * 2 * 11, 9), &[2, 2, 11], |t, x| {
            let w = t.leaf(w0.clone(), &[4, 2, 3]);
            let b = t.leaf(b0.clone(), &[4]);
            let y = t.conv1d(x, w, Some(b), 2, 1, 0);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-5, "input grad error {err}");
        let x0 = seeded(2 * 2 * 11, 9);
        let err = check_grad(&w0, &[4, 2, 3], |t, w| {
            let x = t.constant(x0.clone(), &[2, 2, 11]);
            let y = t.conv1d(x, w, None, 2, 1, 0);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-6, "weight grad error {err}");
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        let w0 = seeded(3 * 2 * 5, 10);
        let x0 = seeded(2 * 3 * 4, 11);
        let err = check_grad(&x0, &[2, 3, 4], |t, x| {
            let w = t.constant(w0.clone(), &[3, 2, 5]);
            let b = t.constant(vec![0.1, -0.2], &[2]);
            let y = t.conv_transpose1d(x, w, Some(b), 3, 1, 12);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-6, "input grad error {err}");
        let err = check_grad(&w0, &[3, 2, 5], |t, w| {
            let x = t.constant(x0.clone(), &[2, 3, 4]);
            let y = t.conv_transpose1d(x, w, None, 3, 1, 12);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-6, "weight grad error {err}");
    }
}
