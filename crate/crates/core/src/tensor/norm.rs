use super::{cast, Real, Tape, Var};

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased variance (divides by the element count).
    pub var: Vec<F>,
    pub count: usize,
}

impl<F: Real> Tape<F> {
    /// Batch normalization over `[batch, channels, length]` using the batch's
    /// own statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> (Var, BatchStats<F>) {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "batch_norm: expected [batch, channels, length]");
        let (batch, channels, len) = (s[0], s[1], s[2]);
        let n = batch * len;
        let nf: F = cast(n as f64);
        let xv = self.value(x);
        let mut mean = vec![F::zero(); channels];
        let mut var = vec![F::zero(); channels];
        for (i, row) in xv.chunks(len).enumerate() {
            mean[i % channels] += row.iter().copied().sum::<F>();
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        for (i, row) in xv.chunks(len).enumerate() {
            let m = mean[i % channels];
            var[i % channels] += row.iter().map(|&v| (v - m) * (v - m)).sum::<F>();
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();

        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![F::zero(); xv.len()];
        let mut y = vec![F::zero(); xv.len()];
        for (i, ((hrow, yrow), xrow)) in xhat
            .chunks_mut(len)
            .zip(y.chunks_mut(len))
            .zip(xv.chunks(len))
            .enumerate()
        {
            let c = i % channels;
            for ((h, o), &v) in hrow.iter_mut().zip(yrow.iter_mut()).zip(xrow) {
                *h = (v - mean[c]) * inv_std[c];
                *o = gv[c] * *h + bv[c];
            }
        }
        let stats = BatchStats {
            mean,
            var,
            count: n,
        };
        let out = self.push_op(y, s, &[x, gamma, beta], move |vals, g, acc| {
            let mut sum_g = vec![F::zero(); channels];
            let mut sum_gh = vec![F::zero(); channels];
            for (i, (grow, hrow)) in g.chunks(len).zip(xhat.chunks(len)).enumerate() {
                let c = i % channels;
                for (&gi, &hi) in grow.iter().zip(hrow) {
                    sum_g[c] += gi;
                    sum_gh[c] += gi * hi;
                }
            }
            if let Some(dg) = acc.slot(gamma) {
                for (d, &v) in dg.iter_mut().zip(&sum_gh) {
                    *d += v;
                }
            }
            if let Some(db) = acc.slot(beta) {
                for (d, &v) in db.iter_mut().zip(&sum_g) {
                    *d += v;
                }
            }
            if let Some(dx) = acc.slot(x) {
                let gamma_v = vals.get(gamma);
                for (i, ((drow, grow), hrow)) in dx
                    .chunks_mut(len)
                    .zip(g.chunks(len))
                    .zip(xhat.chunks(len))
                    .enumerate()
                {
                    let c = i % channels;
                    let k = gamma_v[c] * inv_std[c] / nf;
                    for ((d, &gi), &hi) in drow.iter_mut().zip(grow).zip(hrow) {
                        *d += k * (nf * gi - sum_g[c] - hi * sum_gh[c]);
                    }
                }
            }
        });
        (out, stats)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        eps: F,
    ) -> Var {
        let s = self.shape(x).to_vec();
        let (channels, len) = (s[1], s[2]);
        let scale: Vec<F> = running_var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut y = self.value(x).to_vec();
        for (i, row) in y.chunks_mut(len).enumerate() {
            let c = i % channels;
            for v in row.iter_mut() {
                *v = gv[c] * (*v - mean[c]) * scale[c] + bv[c];
            }
        }
        self.push_op(y, s, &[x, gamma, beta], move |vals, g, acc| {
            let xv = vals.get(x);
            let gamma_v = vals.get(gamma);
            if let Some(dx) = acc.slot(x) {
                for (i, (drow, grow)) in dx.chunks_mut(len).zip(g.chunks(len)).enumerate() {
                    let k = gamma_v[i % channels] * scale[i % channels];
                    for (d, &gi) in drow.iter_mut().zip(grow) {
                        *d += k * gi;
                    }
                }
            }
            if let Some(dg) = acc.slot(gamma) {
                for (i, (grow, xrow)) in g.chunks(len).zip(xv.chunks(len)).enumerate() {
                    let c = i % channels;
                    for (&gi, &xi) in grow.iter().zip(xrow) {
                        dg[c] += gi * (xi - mean[c]) * scale[c];
                    }
                }
            }
            if let Some(db) = acc.slot(beta) {
                for (i, grow) in g.chunks(len).enumerate() {
                    db[i % channels] += grow.iter().copied().sum::<F>();
                }
            }
        })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let s = self.shape(x).to_vec();
        let width = *s.last().unwrap();
        let wf: F = cast(width as f64);
        let xv = self.value(x);
        let rows = xv.len() / width;
        let mut xhat = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); rows];
        for (r, (hrow, xrow)) in xhat.chunks_mut(width).zip(xv.chunks(width)).enumerate() {
            let m = xrow.iter().copied().sum::<F>() / wf;
            let v = xrow.iter().map(|&a| (a - m) * (a - m)).sum::<F>() / wf;
            let is = F::one() / (v + eps).sqrt();
            inv_std[r] = is;
            for (h, &a) in hrow.iter_mut().zip(xrow) {
                *h = (a - m) * is;
            }
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let y: Vec<F> = xhat
            .chunks(width)
            .flat_map(|row| row.iter().zip(gv).zip(bv).map(|((&h, &g), &b)| g * h + b))
            .collect();
        self.push_op(y, s, &[x, gamma, beta], move |vals, g, acc| {
            let gamma_v = vals.get(gamma);
            if let Some(dg) = acc.slot(gamma) {
                for (grow, hrow) in g.chunks(width).zip(xhat.chunks(width)) {
                    for ((d, &gi), &hi) in dg.iter_mut().zip(grow).zip(hrow) {
                        *d += gi * hi;
                    }
                }
            }
            if let Some(db) = acc.slot(beta) {
                for grow in g.chunks(width) {
                    for (d, &gi) in db.iter_mut().zip(grow) {
                        *d += gi;
                    }
                }
            }
            if let Some(dx) = acc.slot(x) {
                for (r, ((drow, grow), hrow)) in dx
                    .chunks_mut(width)
                    .zip(g.chunks(width))
                    .zip(xhat.chunks(width))
                    .enumerate()
                {
                    let mut sum_g = F::zero();
                    let mut sum_gh = F::zero();
                    for ((&gi, &hi), &ga) in grow.iter().zip(hrow).zip(gamma_v) {
                        sum_g += gi * ga;
                        sum_gh += gi * ga * hi;
                    }
                    let k = inv_std[r] / wf;
                    for (((d, &gi), &hi), &ga) in drow.iter_mut().zip(grow).zip(hrow).zip(gamma_v) {
                        *d += k * (wf * gi * ga - sum_g - hi * sum_gh);
                    }
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
    fn batch_norm_normalizes_each_channel() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(seeded(2 * 3 * 8, 1), &[2, 3, 8]);
        let g = t.constant(vec![1.0; 3], &[3]);
        let b = t.constant(vec![0.0; 3], &[3]);
        let (y, stats) = t.batch_norm_train(x, g, b, 1e-5);
        assert_eq!(stats.count, 16);
        let yv = t.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|b| yv[(b * 3 + c) * 8..(b * 3 + c + 1) * 8].to_vec()).collect();
            let m: f64 = vals.iter().sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_gradients() {
        let g0 = seeded(3, 2);
        let err = check_grad(&seeded(2 * 3 * 5, 3), &[2, 3, 5], |t, x| {
            let g = t.constant(g0.clone(), &[3]);
            let b = t.constant(vec![0.1, 0.2, 0.3], &[3]);
            let (y, _) = t.batch_norm_train(x, g, b, 1e-5);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-5, "{err}");
        let x0 = seeded(2 * 3 * 5, 3);
        let err = check_grad(&g0, &[3], |t, g| {
            let x = t.constant(x0.clone(), &[2, 3, 5]);
            let b = t.constant(vec![0.1, 0.2, 0.3], &[3]);
            let (y, _) = t.batch_norm_train(x, g, b, 1e-5);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn layer_norm_gradients() {
        let g0 = seeded(6, 4);
        let err = check_grad(&seeded(4 * 6, 5), &[4, 6], |t, x| {
            let g = t.constant(g0.clone(), &[6]);
            let b = t.constant(seeded(6, 6), &[6]);
            let y = t.layer_norm(x, g, b, 1e-5);
            let y = t.tanh(y);
            t.sqr_sum(y)
        });
        assert!(err < 1e-5, "{err}");
    }
}
