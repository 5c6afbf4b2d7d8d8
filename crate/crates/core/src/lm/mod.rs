//! Autoregressive prior over code grids: a spatial transformer summarizes
//! earlier positions into a context vector, and a depth transformer emits
//! the codes of each position one depth at a time.

mod config;
mod model;

pub use config::LmConfig;
pub use model::LmModel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rvq::CodeGrid;
use crate::tensor::{Real, Tape};

/// Draws a code from `logits`. Temperature 0 is greedy (lowest index wins
/// ties); otherwise the `top_k` largest logits (all if 0) are sampled after
/// division by the temperature.
pub fn sample_code<F: Real>(logits: &[F], temperature: f64, top_k: usize, rng: &mut ChaCha8Rng) -> usize {
    let argmax = || {
        logits
            .iter()
            .enumerate()
            .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    };
    if temperature == 0.0 {
        return argmax();
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    if top_k > 0 {
        order.truncate(top_k);
    }
    let max = logits[order[0]].as_f64();
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((logits[i].as_f64() - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return i;
        }
        u -= w;
    }
    *order.last().expect("non-empty vocabulary")
}

impl<F: Real> LmModel<F> {
    /// Samples an `n_positions × Q` grid starting from the learned start vector.
    pub fn generate(&self, n_positions: usize, seed: u64, temperature: f64, top_k: usize) -> Result<CodeGrid> {
        if n_positions == 0 || n_positions > self.config.max_positions {
            return Err(Error::InvalidInput(format!(
                "cannot generate {n_positions} positions; the model accepts 1..={}",
                self.config.max_positions
            )));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidInput("temperature must be finite and non-negative".into()));
        }
        let q = self.config.q_depth;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let mut codes = vec![0usize; n_positions * q];
        for t in 0..n_positions {
            let u = self.context(&mut tape, &vars, &codes, t);
            for d in 0..q {
                let logits = self.depth_logits(&mut tape, &vars, &u, &codes[t * q..(t + 1) * q], d);
                codes[t * q + d] = sample_code(&logits, temperature, top_k, &mut rng);
            }
        }
        CodeGrid::new(codes.into_iter().map(|c| c as u16).collect(), n_positions, q, self.config.n_cb)
    }

    /// Perturbs every code of `grid` in turn and reports every logit row that
    /// changed although it should only see earlier positions or shallower
    /// depths of the same position.
    pub fn causal_consistency_check(&self, grid: &CodeGrid) -> Result<CausalityReport> {
        let base = self.logits(grid)?;
        let (t_len, q) = grid.shape();
        let n = self.config.n_cb;
        let mut report = CausalityReport::default();
        for tp in 0..t_len {
            for dp in 0..q {
                let mut codes = grid.codes().to_vec();
                codes[tp * q + dp] = ((codes[tp * q + dp] as usize + 1) % n) as u16;
                let g = CodeGrid::new(codes, t_len, q, n)?;
                let pert = self.logits(&g)?;
                report.perturbations += 1;
                for t in 0..=tp {
                    let max_d = if t == tp { dp } else { q - 1 };
                    for d in 0..=max_d {
                        let r = t * q + d;
                        let delta = base[r]
                            .iter()
                            .zip(&pert[r])
                            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                            .fold(0.0, f64::max);
                        if delta > 0.0 {
                            report.violations.push(Violation {
                                perturbed: (tp, dp),
                                affected: (t, d),
                                delta,
                            });
                        }
                    }
                }
            }
        }
        Ok(report)
    }

    /// One Adam step on the mean NLL of `grids`; returns the NLL before the update.
    pub fn train_step(&mut self, opt: &mut Adam<F>, grids: &[&CodeGrid]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, true);
        let loss = self.nll_on_tape(&mut tape, &vars, grids)?;
        let value = tape.scalar(loss).as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite("language-model loss".into()));
        }
        let mut grads = tape.backward(loss);
        let g: Vec<Vec<F>> = vars.iter().map(|&v| grads.take(v)).collect();
        opt.update(self.params.iter_mut().map(|p| p.value.as_mut_slice()), &g);
        Ok(value)
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.value.len()).collect()
    }
}

/// A logit row that depended on a code it must not see.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// `(t, d)` of the perturbed code.
    pub perturbed: (usize, usize),
    /// `(t, d)` of the logit row that changed.
    pub affected: (usize, usize),
    /// Largest absolute logit change.
    pub delta: f64,
}

/// Outcome of [`LmModel::causal_consistency_check`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CausalityReport {
    pub perturbations: usize,
    pub violations: Vec<Violation>,
}

impl CausalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

#[cfg(test)]
mod tests;
