use super::{cast, Real, Tape, Var};

impl<F: Real> Tape<F> {
    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let y = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a, b], move |_, g, acc| {
            acc.add(a, g);
            acc.add(b, g);
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let y = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a, b], move |_, g, acc| {
            acc.add(a, g);
            if let Some(db) = acc.slot(b) {
                for (d, &gv) in db.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let y = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a, b], move |vals, g, acc| {
            if let Some(da) = acc.slot(a) {
                for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(vals.get(b)) {
                    *d += gv * bv;
                }
            }
            if let Some(db) = acc.slot(b) {
                for ((d, &gv), &av) in db.iter_mut().zip(g).zip(vals.get(a)) {
                    *d += gv * av;
                }
            }
        })
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let y = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a], move |_, g, acc| {
            if let Some(da) = acc.slot(a) {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv * c;
                }
            }
        })
    }

    /// `x + y` where `y`'s shape is a trailing suffix of `x`'s shape.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ys = self.shape(y).to_vec();
        assert!(
            xs.len() >= ys.len() && xs[xs.len() - ys.len()..] == ys[..],
            "add_broadcast: {ys:?} is not a suffix of {xs:?}"
        );
        let inner = ys.iter().product::<usize>();
        let yv = self.value(y);
        let out: Vec<F> = self
            .value(x)
            .chunks(inner)
            .flat_map(|row| row.iter().zip(yv).map(|(&a, &b)| a + b))
            .collect();
        self.push_op(out, xs, &[x, y], move |_, g, acc| {
            acc.add(x, g);
            if let Some(dy) = acc.slot(y) {
                for row in g.chunks(inner) {
                    for (d, &gv) in dy.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
            }
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push_op(vec![s], vec![1], &[a], move |_, g, acc| {
            if let Some(da) = acc.slot(a) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, F::one() / cast(n as f64))
    }

    /// Sum of squared entries (squared Frobenius norm).
    pub fn sqr_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|&x| x * x).sum();
        self.push_op(vec![s], vec![1], &[a], move |vals, g, acc| {
            if let Some(da) = acc.slot(a) {
                let two = cast::<F>(2.0) * g[0];
                for (d, &x) in da.iter_mut().zip(vals.get(a)) {
                    *d += two * x;
                }
            }
        })
    }

    /// Sum of absolute entries; the subgradient at zero is zero.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x.abs()).sum();
        self.push_op(vec![s], vec![1], &[a], move |vals, g, acc| {
            if let Some(da) = acc.slot(a) {
                for (d, &x) in da.iter_mut().zip(vals.get(a)) {
                    if x > F::zero() {
                        *d += g[0];
                    } else if x < F::zero() {
                        *d -= g[0];
                    }
                }
            }
        })
    }

    /// Euclidean norm of every row along the last axis.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().unwrap();
        let norms: Vec<F> = self
            .value(a)
            .chunks(width)
            .map(|row| row.iter().map(|&x| x * x).sum::<F>().sqrt())
            .collect();
        let out_shape = shape[..shape.len() - 1].to_vec();
        let cached = norms.clone();
        self.push_op(norms, out_shape, &[a], move |vals, g, acc| {
            if let Some(da) = acc.slot(a) {
                for (((drow, row), &n), &gv) in da
                    .chunks_mut(width)
                    .zip(vals.get(a).chunks(width))
                    .zip(&cached)
                    .zip(g)
                {
                    if n > F::zero() {
                        let k = gv / n;
                        for (d, &x) in drow.iter_mut().zip(row) {
                            *d += k * x;
                        }
                    }
                }
            }
        })
    }

    /// Elementwise `ln(max(x, eps))`.
    pub fn log_clamp(&mut self, a: Var, eps: F) -> Var {
        let y = self.value(a).iter().map(|&x| x.max(eps).ln()).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a], move |vals, g, acc| {
            if let Some(da) = acc.slot(a) {
                for ((d, &gv), &x) in da.iter_mut().zip(g).zip(vals.get(a)) {
                    if x > eps {
                        *d += gv / x;
                    }
                }
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y: Vec<F> = self.value(a).iter().map(|x| x.tanh()).collect();
        let cached = y.clone();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a], move |_, g, acc| {
            if let Some(da) = acc.slot(a) {
                for ((d, &gv), &t) in da.iter_mut().zip(g).zip(&cached) {
                    *d += gv * (F::one() - t * t);
                }
            }
        })
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = cast::<F>((2.0 / std::f64::consts::PI).sqrt());
        let k = cast::<F>(0.044715);
        let half = cast::<F>(0.5);
        let y = self
            .value(a)
            .iter()
            .map(|&x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_op(y, shape, &[a], move |vals, g, acc| {
            if let Some(da) = acc.slot(a) {
                let three = cast::<F>(3.0);
                for ((d, &gv), &x) in da.iter_mut().zip(g).zip(vals.get(a)) {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (F::one() - t * t) * c * (F::one() + three * k * x * x);
                    *d += gv * (half * (F::one() + t) + half * x * dt);
                }
            }
        })
    }

    /// Per-channel PReLU on a `[batch, channels, length]` tensor.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "prelu: expected [batch, channels, length]");
        let (channels, len) = (shape[1], shape[2]);
        assert_eq!(self.value(slope).len(), channels, "prelu: slope per channel");
        let a = self.value(slope).to_vec();
        let mut y = self.value(x).to_vec();
        for (i, row) in y.chunks_mut(len).enumerate() {
            let s = a[i % channels];
            for v in row.iter_mut() {
                if *v < F::zero() {
                    *v *= s;
                }
            }
        }
        self.push_op(y, shape, &[x, slope], move |vals, g, acc| {
            let xv = vals.get(x);
            let av = vals.get(slope);
            if let Some(dx) = acc.slot(x) {
                for (i, ((drow, grow), xrow)) in dx
                    .chunks_mut(len)
                    .zip(g.chunks(len))
                    .zip(xv.chunks(len))
                    .enumerate()
                {
                    let s = av[i % channels];
                    for ((d, &gv), &xi) in drow.iter_mut().zip(grow).zip(xrow) {
                        *d += if xi < F::zero() { gv * s } else { gv };
                    }
                }
            }
            if let Some(da) = acc.slot(slope) {
                for (i, (grow, xrow)) in g.chunks(len).zip(xv.chunks(len)).enumerate() {
                    let mut s = F::zero();
                    for (&gv, &xi) in grow.iter().zip(xrow) {
                        if xi < F::zero() {
                            s += gv * xi;
                        }
                    }
                    da[i % channels] += s;
                }
            }
        })
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.value(a).len(),
            "reshape: element count changes"
        );
        let y = self.value(a).to_vec();
        self.push_op(y, shape.to_vec(), &[a], move |_, g, acc| acc.add(a, g))
    }

    /// Swaps the last two axes of a 3-D tensor: `[a, b, c] -> [a, c, b]`.
    pub fn transpose12(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "transpose12: expected a 3-D tensor");
        let (n, r, c) = (s[0], s[1], s[2]);
        let y = transpose_blocks(self.value(x), n, r, c);
        self.push_op(y, vec![n, c, r], &[x], move |_, g, acc| {
            if acc.wants(x) {
                let back = transpose_blocks(g, n, c, r);
                acc.add(x, &back);
            }
        })
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert_eq!(sa[..sa.len() - 1], sb[..sb.len() - 1], "concat_last: leading dims differ");
        let wa = *sa.last().unwrap();
        let wb = *sb.last().unwrap();
        let mut y = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        for (ra, rb) in self.value(a).chunks(wa).zip(self.value(b).chunks(wb)) {
            y.extend_from_slice(ra);
            y.extend_from_slice(rb);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = wa + wb;
        self.push_op(y, shape, &[a, b], move |_, g, acc| {
            if let Some(da) = acc.slot(a) {
                for (drow, grow) in da.chunks_mut(wa).zip(g.chunks(wa + wb)) {
                    for (d, &gv) in drow.iter_mut().zip(&grow[..wa]) {
                        *d += gv;
                    }
                }
            }
            if let Some(db) = acc.slot(b) {
                for (drow, grow) in db.chunks_mut(wb).zip(g.chunks(wa + wb)) {
                    for (d, &gv) in drow.iter_mut().zip(&grow[wa..]) {
                        *d += gv;
                    }
                }
            }
        })
    }

    /// Rows of `table` (`[vocab, width]`) selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let s = self.shape(table).to_vec();
        assert_eq!(s.len(), 2, "gather_rows: table must be 2-D");
        let (vocab, width) = (s[0], s[1]);
        let tv = self.value(table);
        let mut y = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            assert!(i < vocab, "gather_rows: index {i} out of range {vocab}");
            y.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let idx = indices.to_vec();
        self.push_op(y, vec![indices.len(), width], &[table], move |_, g, acc| {
            if let Some(dt) = acc.slot(table) {
                for (&i, grow) in idx.iter().zip(g.chunks(width)) {
                    for (d, &gv) in dt[i * width..(i + 1) * width].iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
            }
        })
    }

    /// Mean softmax cross-entropy of `logits` (`[rows, classes]`) against
    /// integer `targets`, in nats.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let s = self.shape(logits).to_vec();
        let classes = *s.last().unwrap();
        let rows = self.value(logits).len() / classes;
        assert_eq!(rows, targets.len(), "cross_entropy: one target per row");
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0f64;
        for (row, &t) in probs.chunks_mut(classes).zip(targets) {
            assert!(t < classes, "cross_entropy: target {t} out of range");
            let picked = row[t].as_f64();
            total += softmax_in_place(row) - picked;
        }
        let loss = cast::<F>(total / rows.max(1) as f64);
        let tgt = targets.to_vec();
        self.push_op(vec![loss], vec![1], &[logits], move |_, g, acc| {
            if let Some(dl) = acc.slot(logits) {
                let k = g[0] / cast(rows.max(1) as f64);
                for ((drow, prow), &t) in dl.chunks_mut(classes).zip(probs.chunks(classes)).zip(&tgt) {
                    for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                        let onehot = if j == t { F::one() } else { F::zero() };
                        *d += k * (p - onehot);
                    }
                }
            }
        })
    }
}

/// Replaces `row` with its softmax; returns the log-sum-exp of the input.
pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) -> f64 {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut z = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    max.as_f64() + z.as_f64().ln()
}

fn transpose_blocks<F: Real>(data: &[F], n: usize, r: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); data.len()];
    for b in 0..n {
        let src = &data[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}
