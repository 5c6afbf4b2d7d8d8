use super::{Real, Tape, Var};

/// Storage orientation of a matrix operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatLayout {
    /// Stored as written (`rows × cols`, row-major).
    Normal,
    /// Stored transposed; the logical `rows × cols` matrix is read from a
    /// `cols × rows` row-major buffer.
    Transposed,
}

/// `c[m×n] (+)= op(a)[m×k] · op(b)[k×n]`, all buffers row-major.
#[allow(clippy::too_many_arguments)]
pub fn matmul<F: Real>(
    c: &mut [F],
    a: &[F],
    a_layout: MatLayout,
    b: &[F],
    b_layout: MatLayout,
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert!(c.len() >= m * n, "matmul: output buffer too small");
    assert!(a.len() >= m * k, "matmul: lhs buffer too small");
    assert!(b.len() >= k * n, "matmul: rhs buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let (rsa, csa) = match a_layout {
        MatLayout::Normal => (k as isize, 1),
        MatLayout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        MatLayout::Normal => (n as isize, 1),
        MatLayout::Transposed => (1, k as isize),
    };
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: the asserts above bound every access for both layouts.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<F: Real> Tape<F> {
    /// Affine map over the last axis: `y = x · wᵀ + b` with `w` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(ws.len(), 2, "linear: weight must be 2-D");
        let (out_dim, in_dim) = (ws[0], ws[1]);
        assert_eq!(*xs.last().unwrap(), in_dim, "linear: input width mismatch");
        let rows = xs.iter().product::<usize>() / in_dim;
        let mut y = vec![F::zero(); rows * out_dim];
        matmul(
            &mut y,
            self.value(x),
            MatLayout::Normal,
            self.value(w),
            MatLayout::Transposed,
            rows,
            in_dim,
            out_dim,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b);
            assert_eq!(bias.len(), out_dim, "linear: bias length mismatch");
            for row in y.chunks_mut(out_dim) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_dim;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push_op(y, shape, &inputs, move |vals, g, acc| {
            if let Some(dx) = acc.slot(x) {
                matmul(
                    dx,
                    g,
                    MatLayout::Normal,
                    vals.get(w),
                    MatLayout::Normal,
                    rows,
                    out_dim,
                    in_dim,
                    true,
                );
            }
            if let Some(dw) = acc.slot(w) {
                matmul(
                    dw,
                    g,
                    MatLayout::Transposed,
                    vals.get(x),
                    MatLayout::Normal,
                    out_dim,
                    rows,
                    in_dim,
                    true,
                );
            }
            if let Some(b) = b {
                if let Some(db) = acc.slot(b) {
                    for row in g.chunks(out_dim) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
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
    fn matmul_layouts_agree_with_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a = seeded(m * k, 1);
        let b = seeded(k * n, 2);
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    naive[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        matmul(&mut c, &at, MatLayout::Transposed, &bt, MatLayout::Transposed, m, k, n, false);
        for (x, y) in c.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let w0 = seeded(12, 3);
        let b0 = seeded(4, 4);
        let err = check_grad(&seeded(6, 5), &[2, 3], |t, x| {
            let w = t.leaf(w0.clone(), &[4, 3]);
            let b = t.leaf(b0.clone(), &[4]);
            let y = t.linear(x, w, Some(b));
            t.sqr_sum(y)
        });
        assert!(err < 1e-6, "relative error {err}");
        let x0 = seeded(6, 5);
        let err = check_grad(&w0, &[4, 3], |t, w| {
            let x = t.constant(x0.clone(), &[2, 3]);
            let y = t.linear(x, w, None);
            let y = t.tanh(y);
            t.sum(y)
        });
        assert!(err < 1e-6, "relative error {err}");
    }
}
