use super::linalg::{matmul, MatLayout};
use super::{Real, Tape, Var};

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> Tape<F> {
    /// One direction of an LSTM layer over `[batch, time, input]`, zero initial
    /// state, gate order (input, forget, cell, output). `w_ih`: `[4h, input]`,
    /// `w_hh`: `[4h, h]`, `bias`: `[4h]`. With `reverse` the sequence is read
    /// back to front; outputs stay aligned with their input time step.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "lstm: input must be [batch, time, features]");
        let (batch, steps, input) = (xs[0], xs[1], xs[2]);
        let hs = self.shape(w_hh).to_vec();
        let hidden = hs[1];
        let g4 = 4 * hidden;
        assert_eq!(hs[0], g4, "lstm: recurrent weight must be [4h, h]");
        assert_eq!(self.shape(w_ih), &[g4, input], "lstm: input weight must be [4h, input]");
        assert_eq!(self.value(bias).len(), g4, "lstm: bias must be [4h]");

        let rows = batch * steps;
        let mut pre = vec![F::zero(); rows * g4];
        matmul(
            &mut pre,
            self.value(x),
            MatLayout::Normal,
            self.value(w_ih),
            MatLayout::Transposed,
            rows,
            input,
            g4,
            false,
        );
        let bv = self.value(bias);
        for row in pre.chunks_mut(g4) {
            for (p, &b) in row.iter_mut().zip(bv) {
                *p += b;
            }
        }

        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        let whh = self.value(w_hh);
        // acts[t][b][4h]: activated gates; cells[t][b][h]: cell state.
        let mut acts = vec![F::zero(); steps * batch * g4];
        let mut cells = vec![F::zero(); steps * batch * hidden];
        let mut out = vec![F::zero(); batch * steps * hidden];
        let mut h_prev = vec![F::zero(); batch * hidden];
        let mut c_prev = vec![F::zero(); batch * hidden];
        let mut gates = vec![F::zero(); batch * g4];
        for &t in &order {
            for b in 0..batch {
                gates[b * g4..(b + 1) * g4].copy_from_slice(&pre[(b * steps + t) * g4..(b * steps + t + 1) * g4]);
            }
            matmul(&mut gates, &h_prev, MatLayout::Normal, whh, MatLayout::Transposed, batch, hidden, g4, true);
            let act_t = &mut acts[t * batch * g4..(t + 1) * batch * g4];
            let cell_t = &mut cells[t * batch * hidden..(t + 1) * batch * hidden];
            for b in 0..batch {
                let z = &gates[b * g4..(b + 1) * g4];
                let a = &mut act_t[b * g4..(b + 1) * g4];
                for j in 0..hidden {
                    let i = sigmoid(z[j]);
                    let f = sigmoid(z[hidden + j]);
                    let gg = z[2 * hidden + j].tanh();
                    let o = sigmoid(z[3 * hidden + j]);
                    a[j] = i;
                    a[hidden + j] = f;
                    a[2 * hidden + j] = gg;
                    a[3 * hidden + j] = o;
                    let c = f * c_prev[b * hidden + j] + i * gg;
                    cell_t[b * hidden + j] = c;
                    let h = o * c.tanh();
                    out[(b * steps + t) * hidden + j] = h;
                    h_prev[b * hidden + j] = h;
                    c_prev[b * hidden + j] = c;
                }
            }
        }

        let y_cache = out.clone();
        self.push_op(out, vec![batch, steps, hidden], &[x, w_ih, w_hh, bias], move |vals, g, acc| {
            let whh = vals.get(w_hh);
            let mut dpre = vec![F::zero(); rows * g4];
            let mut dh_next = vec![F::zero(); batch * hidden];
            let mut dc_next = vec![F::zero(); batch * hidden];
            let mut dz = vec![F::zero(); batch * g4];
            let mut h_prev = vec![F::zero(); batch * hidden];
            let mut dwhh = vec![F::zero(); g4 * hidden];
            for (s, &t) in order.iter().enumerate().rev() {
                let prev_t = if s == 0 { None } else { Some(order[s - 1]) };
                let act_t = &acts[t * batch * g4..(t + 1) * batch * g4];
                let cell_t = &cells[t * batch * hidden..(t + 1) * batch * hidden];
                for b in 0..batch {
                    for j in 0..hidden {
                        let a = &act_t[b * g4..(b + 1) * g4];
                        let (i, f, gg, o) = (a[j], a[hidden + j], a[2 * hidden + j], a[3 * hidden + j]);
                        let c = cell_t[b * hidden + j];
                        let tc = c.tanh();
                        let c_before = match prev_t {
                            Some(pt) => cells[pt * batch * hidden + b * hidden + j],
                            None => F::zero(),
                        };
                        let dh = g[(b * steps + t) * hidden + j] + dh_next[b * hidden + j];
                        let d_o = dh * tc;
                        let dc = dh * o * (F::one() - tc * tc) + dc_next[b * hidden + j];
                        let di = dc * gg;
                        let dg = dc * i;
                        let df = dc * c_before;
                        dc_next[b * hidden + j] = dc * f;
                        let z = &mut dz[b * g4..(b + 1) * g4];
                        z[j] = di * i * (F::one() - i);
                        z[hidden + j] = df * f * (F::one() - f);
                        z[2 * hidden + j] = dg * (F::one() - gg * gg);
                        z[3 * hidden + j] = d_o * o * (F::one() - o);
                    }
                    dpre[(b * steps + t) * g4..(b * steps + t + 1) * g4].copy_from_slice(&dz[b * g4..(b + 1) * g4]);
                    for j in 0..hidden {
                        h_prev[b * hidden + j] = match prev_t {
                            Some(pt) => y_cache[(b * steps + pt) * hidden + j],
                            None => F::zero(),
                        };
                    }
                }
                matmul(&mut dwhh, &dz, MatLayout::Transposed, &h_prev, MatLayout::Normal, g4, batch, hidden, true);
                matmul(&mut dh_next, &dz, MatLayout::Normal, whh, MatLayout::Normal, batch, g4, hidden, false);
            }
            acc.add(w_hh, &dwhh);
            if let Some(dx) = acc.slot(x) {
                matmul(dx, &dpre, MatLayout::Normal, vals.get(w_ih), MatLayout::Normal, rows, g4, input, true);
            }
            if let Some(dw) = acc.slot(w_ih) {
                matmul(dw, &dpre, MatLayout::Transposed, vals.get(x), MatLayout::Normal, g4, rows, input, true);
            }
            if let Some(db) = acc.slot(bias) {
                for row in dpre.chunks(g4) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        })
    }
}
