use super::elementwise::softmax_in_place;
use super::linalg::{matmul, MatLayout};
use super::{cast, Real, Tape, Var};

/// Which key positions a query may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    /// Position `i` sees positions `0..=i`.
    Causal,
    /// Every position sees every other one. Only useful as a leaking fixture.
    Full,
}

/// Copies one head's `[steps, head_dim]` block out of a packed row layout.
fn gather_head<F: Real>(src: &[F], steps: usize, row_stride: usize, offset: usize, head_dim: usize, dst: &mut [F]) {
    for t in 0..steps {
        dst[t * head_dim..(t + 1) * head_dim]
            .copy_from_slice(&src[t * row_stride + offset..t * row_stride + offset + head_dim]);
    }
}

fn scatter_head<F: Real>(dst: &mut [F], steps: usize, row_stride: usize, offset: usize, head_dim: usize, src: &[F]) {
    for t in 0..steps {
        for (d, &s) in dst[t * row_stride + offset..t * row_stride + offset + head_dim]
            .iter_mut()
            .zip(&src[t * head_dim..(t + 1) * head_dim])
        {
            *d += s;
        }
    }
}

impl<F: Real> Tape<F> {
    /// Multi-head scaled dot-product self-attention. `qkv`: `[n, steps, 3 * width]`
    /// holding queries, keys and values side by side; output `[n, steps, width]`.
    pub fn self_attention(&mut self, qkv: Var, heads: usize, mask: AttnMask) -> Var {
        let s = self.shape(qkv).to_vec();
        assert_eq!(s.len(), 3, "self_attention: expected [n, steps, 3*width]");
        let (n, steps, w3) = (s[0], s[1], s[2]);
        assert_eq!(w3 % 3, 0, "self_attention: packed width must be 3*width");
        let width = w3 / 3;
        assert_eq!(width % heads, 0, "self_attention: width not divisible by heads");
        let hd = width / heads;
        let scale: F = cast(1.0 / (hd as f64).sqrt());

        let src = self.value(qkv);
        let mut out = vec![F::zero(); n * steps * width];
        let mut probs = vec![F::zero(); n * heads * steps * steps];
        let mut q = vec![F::zero(); steps * hd];
        let mut k = vec![F::zero(); steps * hd];
        let mut v = vec![F::zero(); steps * hd];
        let mut o = vec![F::zero(); steps * hd];
        for b in 0..n {
            let block = &src[b * steps * w3..(b + 1) * steps * w3];
            for h in 0..heads {
                gather_head(block, steps, w3, h * hd, hd, &mut q);
                gather_head(block, steps, w3, width + h * hd, hd, &mut k);
                gather_head(block, steps, w3, 2 * width + h * hd, hd, &mut v);
                let p = &mut probs[(b * heads + h) * steps * steps..(b * heads + h + 1) * steps * steps];
                matmul(p, &q, MatLayout::Normal, &k, MatLayout::Transposed, steps, hd, steps, false);
                for (i, row) in p.chunks_mut(steps).enumerate() {
                    let visible = match mask {
                        AttnMask::Causal => i + 1,
                        AttnMask::Full => steps,
                    };
                    row[..visible].iter_mut().for_each(|x| *x *= scale);
                    softmax_in_place(&mut row[..visible]);
                    row[visible..].iter_mut().for_each(|x| *x = F::zero());
                }
                matmul(&mut o, p, MatLayout::Normal, &v, MatLayout::Normal, steps, steps, hd, false);
                let dst = &mut out[b * steps * width..(b + 1) * steps * width];
                for t in 0..steps {
                    dst[t * width + h * hd..t * width + (h + 1) * hd].copy_from_slice(&o[t * hd..(t + 1) * hd]);
                }
            }
        }

        self.push_op(out, vec![n, steps, width], &[qkv], move |vals, g, acc| {
            let Some(dqkv) = acc.slot(qkv) else { return };
            let src = vals.get(qkv);
            let mut q = vec![F::zero(); steps * hd];
            let mut k = vec![F::zero(); steps * hd];
            let mut v = vec![F::zero(); steps * hd];
            let mut go = vec![F::zero(); steps * hd];
            let mut dp = vec![F::zero(); steps * steps];
            let mut dq = vec![F::zero(); steps * hd];
            let mut dk = vec![F::zero(); steps * hd];
            let mut dv = vec![F::zero(); steps * hd];
            for b in 0..n {
                let block = &src[b * steps * w3..(b + 1) * steps * w3];
                let gblock = &g[b * steps * width..(b + 1) * steps * width];
                for h in 0..heads {
                    gather_head(block, steps, w3, h * hd, hd, &mut q);
                    gather_head(block, steps, w3, width + h * hd, hd, &mut k);
                    gather_head(block, steps, w3, 2 * width + h * hd, hd, &mut v);
                    gather_head(gblock, steps, width, h * hd, hd, &mut go);
                    let p = &probs[(b * heads + h) * steps * steps..(b * heads + h + 1) * steps * steps];
                    matmul(&mut dv, p, MatLayout::Transposed, &go, MatLayout::Normal, steps, steps, hd, false);
                    matmul(&mut dp, &go, MatLayout::Normal, &v, MatLayout::Transposed, steps, hd, steps, false);
                    for (dprow, prow) in dp.chunks_mut(steps).zip(p.chunks(steps)) {
                        let dot: F = dprow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                        for (d, &pv) in dprow.iter_mut().zip(prow) {
                            *d = pv * (*d - dot) * scale;
                        }
                    }
                    matmul(&mut dq, &dp, MatLayout::Normal, &k, MatLayout::Normal, steps, steps, hd, false);
                    matmul(&mut dk, &dp, MatLayout::Transposed, &q, MatLayout::Normal, steps, steps, hd, false);
                    let dst = &mut dqkv[b * steps * w3..(b + 1) * steps * w3];
                    scatter_head(dst, steps, w3, h * hd, hd, &dq);
                    scatter_head(dst, steps, w3, width + h * hd, hd, &dk);
                    scatter_head(dst, steps, w3, 2 * width + h * hd, hd, &dv);
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_grad, seeded};

    #[test]
    fn attention_gradients_match_finite_differences() {
        for mask in [AttnMask::Causal, AttnMask::Full] {
            let err = check_grad(&seeded(2 * 5 * 12, 1), &[2, 5, 12], |t, x| {
                let y = t.self_attention(x, 2, mask);
                let y = t.tanh(y);
                t.sqr_sum(y)
            });
            assert!(err < 1e-5, "{mask:?}: {err}");
        }
    }

    #[test]
    fn causal_output_ignores_future_positions() {
        let x = seeded(6 * 12, 2);
        let mut x2 = x.clone();
        for v in &mut x2[4 * 12..] {
            *v += 0.5;
        }
        let mut t = Tape::<f64>::new();
        let a = t.constant(x, &[1, 6, 12]);
        let b = t.constant(x2, &[1, 6, 12]);
        let ya = t.self_attention(a, 2, AttnMask::Causal);
        let yb = t.self_attention(b, 2, AttnMask::Causal);
        assert_eq!(t.value(ya)[..4 * 4], t.value(yb)[..4 * 4]);
    }
}
