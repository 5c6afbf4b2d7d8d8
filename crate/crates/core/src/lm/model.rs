use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::LmConfig;
use crate::error::{Error, Result};
use crate::rvq::CodeGrid;
use crate::tensor::{AttnMask, ParamSet, Real, Tape, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Block {
    ln1: (usize, usize),
    qkv: (usize, usize),
    proj: (usize, usize),
    ln2: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LmLayout {
    code_emb: Vec<usize>,
    pos_emb: usize,
    depth_emb: usize,
    start: usize,
    spatial: Vec<Block>,
    spatial_ln: (usize, usize),
    depth: Vec<Block>,
    depth_ln: (usize, usize),
    head: (usize, usize),
}

/// Spatial/depth transformer prior over code grids.
#[derive(Debug, Clone, PartialEq)]
pub struct LmModel<F: Real> {
    pub config: LmConfig,
    pub params: ParamSet<F>,
    /// Attention mask of both stacks. Anything but causal leaks the future.
    #[doc(hidden)]
    pub mask: AttnMask,
    pub(crate) layout: LmLayout,
}

fn block<F: Real>(p: &mut ParamSet<F>, prefix: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Block {
    let bd = 1.0 / (d as f64).sqrt();
    let bh = 1.0 / (hidden as f64).sqrt();
    Block {
        ln1: (
            p.push_const(format!("{prefix}.ln1.gamma"), &[d], 1.0),
            p.push_const(format!("{prefix}.ln1.beta"), &[d], 0.0),
        ),
        qkv: (
            p.push_uniform(format!("{prefix}.qkv.weight"), &[3 * d, d], bd, rng),
            p.push_const(format!("{prefix}.qkv.bias"), &[3 * d], 0.0),
        ),
        proj: (
            p.push_uniform(format!("{prefix}.proj.weight"), &[d, d], bd, rng),
            p.push_const(format!("{prefix}.proj.bias"), &[d], 0.0),
        ),
        ln2: (
            p.push_const(format!("{prefix}.ln2.gamma"), &[d], 1.0),
            p.push_const(format!("{prefix}.ln2.beta"), &[d], 0.0),
        ),
        fc1: (
            p.push_uniform(format!("{prefix}.fc1.weight"), &[hidden, d], bd, rng),
            p.push_const(format!("{prefix}.fc1.bias"), &[hidden], 0.0),
        ),
        fc2: (
            p.push_uniform(format!("{prefix}.fc2.weight"), &[d, hidden], bh, rng),
            p.push_const(format!("{prefix}.fc2.bias"), &[d], 0.0),
        ),
    }
}

/// Teacher-forced inputs: codes of every grid, row-major `(b, t, d)`.
struct Batch {
    n: usize,
    t: usize,
    codes: Vec<usize>,
}

impl<F: Real> LmModel<F> {
    pub fn new(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let hidden = d * config.mlp_ratio;
        let mut p = ParamSet::new();
        let emb_bound = 1.0 / (d as f64).sqrt();
        let code_emb = (0..config.q_depth)
            .map(|q| p.push_uniform(format!("code_emb.{q}"), &[config.n_cb, d], emb_bound, &mut rng))
            .collect();
        let pos_emb = p.push_uniform("pos_emb", &[config.max_positions, d], emb_bound, &mut rng);
        let depth_emb = p.push_uniform("depth_emb", &[config.q_depth, d], emb_bound, &mut rng);
        let start = p.push_uniform("start", &[1, d], emb_bound, &mut rng);
        let spatial = (0..config.spatial_layers)
            .map(|i| block(&mut p, &format!("spatial.{i}"), d, hidden, &mut rng))
            .collect();
        let spatial_ln = (p.push_const("spatial.ln.gamma", &[d], 1.0), p.push_const("spatial.ln.beta", &[d], 0.0));
        let depth = (0..config.depth_layers)
            .map(|i| block(&mut p, &format!("depth.{i}"), d, hidden, &mut rng))
            .collect();
        let depth_ln = (p.push_const("depth.ln.gamma", &[d], 1.0), p.push_const("depth.ln.beta", &[d], 0.0));
        let head = (
            p.push_uniform("head.weight", &[config.n_cb, d], emb_bound, &mut rng),
            p.push_const("head.bias", &[config.n_cb], 0.0),
        );
        Ok(Self {
            config,
            params: p,
            mask: AttnMask::Causal,
            layout: LmLayout {
                code_emb,
                pos_emb,
                depth_emb,
                start,
                spatial,
                spatial_ln,
                depth,
                depth_ln,
                head,
            },
        })
    }

    /// Zeroes the output projection so every distribution is uniform.
    pub fn zero_head(&mut self) {
        for i in [self.layout.head.0, self.layout.head.1] {
            self.params.get_mut(i).value.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn cast<G: Real>(&self) -> LmModel<G> {
        LmModel {
            config: self.config.clone(),
            params: self.params.cast(),
            mask: self.mask,
            layout: self.layout.clone(),
        }
    }

    fn check_grid(&self, g: &CodeGrid) -> Result<()> {
        let c = &self.config;
        if g.depth() != c.q_depth {
            return Err(Error::Shape(format!("grid depth {} but the model expects {}", g.depth(), c.q_depth)));
        }
        if g.positions() == 0 || g.positions() > c.max_positions {
            return Err(Error::Shape(format!(
                "grid has {} positions; the model accepts 1..={}",
                g.positions(),
                c.max_positions
            )));
        }
        if let Some(&bad) = g.codes().iter().find(|&&k| k as usize >= c.n_cb) {
            return Err(Error::CodeOutOfRange {
                index: bad as usize,
                size: c.n_cb,
            });
        }
        Ok(())
    }

    fn batch(&self, grids: &[&CodeGrid]) -> Result<Batch> {
        let first = grids.first().ok_or_else(|| Error::InvalidInput("no grids".into()))?;
        let t = first.positions();
        for g in grids {
            self.check_grid(g)?;
            if g.positions() != t {
                return Err(Error::Shape("grids in one batch must have equal length".into()));
            }
        }
        Ok(Batch {
            n: grids.len(),
            t,
            codes: grids.iter().flat_map(|g| g.codes().iter().map(|&k| k as usize)).collect(),
        })
    }

    fn block(&self, tape: &mut Tape<F>, v: &[Var], b: &Block, x: Var) -> Var {
        let eps = F::of_f64(LN_EPS);
        let h = tape.layer_norm(x, v[b.ln1.0], v[b.ln1.1], eps);
        let qkv = tape.linear(h, v[b.qkv.0], Some(v[b.qkv.1]));
        let a = tape.self_attention(qkv, self.config.heads, self.mask);
        let a = tape.linear(a, v[b.proj.0], Some(v[b.proj.1]));
        let x = tape.add(x, a);
        let h = tape.layer_norm(x, v[b.ln2.0], v[b.ln2.1], eps);
        let h = tape.linear(h, v[b.fc1.0], Some(v[b.fc1.1]));
        let h = tape.gelu(h);
        let h = tape.linear(h, v[b.fc2.0], Some(v[b.fc2.1]));
        tape.add(x, h)
    }

    /// Context vectors `u_t` for the first `steps` positions: `[n * steps, D]`.
    /// Only codes at positions `< steps - 1` are read.
    fn spatial(&self, tape: &mut Tape<F>, v: &[Var], batch: &Batch, steps: usize) -> Var {
        let (n, t_all, q, d) = (batch.n, batch.t, self.config.q_depth, self.config.model_dim);
        let rows = n * steps;
        let l = &self.layout;
        let mut x: Option<Var> = None;
        for depth in 0..q {
            let idx: Vec<usize> = (0..rows)
                .map(|r| {
                    let (b, t) = (r / steps, r % steps);
                    if t == 0 {
                        0
                    } else {
                        batch.codes[(b * t_all + t - 1) * q + depth]
                    }
                })
                .collect();
            let e = tape.gather_rows(v[l.code_emb[depth]], &idx);
            x = Some(match x {
                Some(acc) => tape.add(acc, e),
                None => e,
            });
        }
        let not_first: Vec<F> = (0..rows)
            .flat_map(|r| std::iter::repeat_n(if r % steps == 0 { F::zero() } else { F::one() }, d))
            .collect();
        let first: Vec<F> = not_first.iter().map(|&m| F::one() - m).collect();
        let keep = tape.constant(not_first, &[rows, d]);
        let x = tape.mul(x.expect("q_depth > 0"), keep);
        let start = tape.gather_rows(v[l.start], &vec![0; rows]);
        let only_first = tape.constant(first, &[rows, d]);
        let start = tape.mul(start, only_first);
        let x = tape.add(x, start);
        let pos_idx: Vec<usize> = (0..rows).map(|r| r % steps).collect();
        let pos = tape.gather_rows(v[l.pos_emb], &pos_idx);
        let x = tape.add(x, pos);
        let mut h = tape.reshape(x, &[n, steps, d]);
        for b in &l.spatial {
            h = self.block(tape, v, b, h);
        }
        let h = tape.layer_norm(h, v[l.spatial_ln.0], v[l.spatial_ln.1], F::of_f64(LN_EPS));
        tape.reshape(h, &[rows, d])
    }

    /// Logits `[rows * depth_len, N_cb]` of the depth stack for the given
    /// context rows, reading codes `(row, j)` for `j < depth_len - 1`.
    fn depth(&self, tape: &mut Tape<F>, v: &[Var], u: Var, row_codes: &dyn Fn(usize, usize) -> usize, depth_len: usize) -> Var {
        let d = self.config.model_dim;
        let rows = tape.shape(u)[0];
        let l = &self.layout;
        let mut seq = u;
        let mut cum: Option<Var> = None;
        for j in 0..depth_len.saturating_sub(1) {
            let idx: Vec<usize> = (0..rows).map(|r| row_codes(r, j)).collect();
            let e = tape.gather_rows(v[l.code_emb[j]], &idx);
            let c = match cum {
                Some(acc) => tape.add(acc, e),
                None => e,
            };
            cum = Some(c);
            seq = tape.concat_last(seq, c);
        }
        let x = tape.reshape(seq, &[rows, depth_len, d]);
        let de = if depth_len == self.config.q_depth {
            v[l.depth_emb]
        } else {
            let idx: Vec<usize> = (0..depth_len).collect();
            tape.gather_rows(v[l.depth_emb], &idx)
        };
        let mut h = tape.add_broadcast(x, de);
        for b in &l.depth {
            h = self.block(tape, v, b, h);
        }
        let h = tape.layer_norm(h, v[l.depth_ln.0], v[l.depth_ln.1], F::of_f64(LN_EPS));
        let h = tape.reshape(h, &[rows * depth_len, d]);
        tape.linear(h, v[l.head.0], Some(v[l.head.1]))
    }

    /// Teacher-forced logits `[n * T * Q, N_cb]`, rows ordered `(grid, t, d)`.
    pub fn logits_on_tape(&self, tape: &mut Tape<F>, vars: &[Var], grids: &[&CodeGrid]) -> Result<Var> {
        let batch = self.batch(grids)?;
        let u = self.spatial(tape, vars, &batch, batch.t);
        let q = self.config.q_depth;
        let codes = &batch.codes;
        Ok(self.depth(tape, vars, u, &|r, j| codes[r * q + j], q))
    }

    /// Mean teacher-forced negative log-likelihood in nats per code.
    pub fn nll_on_tape(&self, tape: &mut Tape<F>, vars: &[Var], grids: &[&CodeGrid]) -> Result<Var> {
        let logits = self.logits_on_tape(tape, vars, grids)?;
        let targets: Vec<usize> = grids.iter().flat_map(|g| g.codes().iter().map(|&k| k as usize)).collect();
        Ok(tape.cross_entropy(logits, &targets))
    }

    /// Teacher-forced logits of one grid as `[T * Q][N_cb]`.
    pub fn logits(&self, grid: &CodeGrid) -> Result<Vec<Vec<F>>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let l = self.logits_on_tape(&mut tape, &vars, &[grid])?;
        Ok(tape.value(l).chunks(self.config.n_cb).map(<[F]>::to_vec).collect())
    }

    /// Mean NLL of one grid in nats per code.
    pub fn nll(&self, grid: &CodeGrid) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let v = self.nll_on_tape(&mut tape, &vars, &[grid])?;
        Ok(tape.scalar(v).as_f64())
    }

    /// Context vector `u_t` given the codes of positions `< t` (row-major
    /// `[t][Q]`, extra rows ignored). Scratch variables are dropped from `tape`.
    pub(crate) fn context(&self, tape: &mut Tape<F>, vars: &[Var], codes: &[usize], t: usize) -> Vec<F> {
        let mark = tape.len();
        let q = self.config.q_depth;
        let mut prefix = codes[..t * q].to_vec();
        prefix.resize((t + 1) * q, 0);
        let batch = Batch {
            n: 1,
            t: t + 1,
            codes: prefix,
        };
        let u_all = self.spatial(tape, vars, &batch, t + 1);
        let dm = self.config.model_dim;
        let u = tape.value(u_all)[t * dm..(t + 1) * dm].to_vec();
        tape.truncate(mark);
        u
    }

    /// Logits for depth `d` given the context `u_t` and the codes `row[..d]`.
    pub(crate) fn depth_logits(&self, tape: &mut Tape<F>, vars: &[Var], u_t: &[F], row: &[usize], d: usize) -> Vec<F> {
        let mark = tape.len();
        let u = tape.constant(u_t.to_vec(), &[1, self.config.model_dim]);
        let logits = self.depth(tape, vars, u, &|_, j| row[j], d + 1);
        let n = self.config.n_cb;
        let out = tape.value(logits)[d * n..(d + 1) * n].to_vec();
        tape.truncate(mark);
        out
    }
}
