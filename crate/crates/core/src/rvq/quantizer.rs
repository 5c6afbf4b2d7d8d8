use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::codebook::{kmeans_init, Codebook};
use super::grid::CodeGrid;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Hyperparameters of a [`ResidualQuantizer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSettings {
    pub depth: usize,
    pub codebook_size: usize,
    pub dim: usize,
    pub decay: f64,
    pub reinit_threshold: f64,
    pub beta: f64,
}

impl Default for QuantizerSettings {
    fn default() -> Self {
        Self {
            depth: 12,
            codebook_size: 4096,
            dim: 256,
            decay: 0.97,
            reinit_threshold: 2.0,
            beta: 0.25,
        }
    }
}

/// Everything one residual quantization pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<F> {
    /// Sum of the selected vectors over depths, `rows × dim`.
    pub quantized: Array2<F>,
    pub grid: CodeGrid,
    /// Input to each depth: `residuals[0]` is the latent itself.
    pub residuals: Vec<Array2<F>>,
    /// Vector selected at each depth.
    pub selected: Vec<Array2<F>>,
    /// What is left after the last depth.
    pub final_residual: Array2<F>,
}

/// Cascade of codebooks, each quantizing the residual of the one before.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualQuantizer<F> {
    pub codebooks: Vec<Codebook<F>>,
    pub decay: f64,
    pub reinit_threshold: f64,
    pub beta: f64,
}

impl<F: Real> ResidualQuantizer<F> {
    pub fn new(codebooks: Vec<Codebook<F>>, settings: &QuantizerSettings) -> Result<Self> {
        if codebooks.is_empty() {
            return Err(Error::InvalidInput("quantizer needs at least one codebook".into()));
        }
        let dim = codebooks[0].dim();
        if codebooks.iter().any(|c| c.dim() != dim) {
            return Err(Error::Shape("all codebooks must share one vector width".into()));
        }
        if !(settings.decay > 0.0 && settings.decay < 1.0) {
            return Err(Error::InvalidInput(format!("EMA decay {} outside (0, 1)", settings.decay)));
        }
        Ok(Self {
            codebooks,
            decay: settings.decay,
            reinit_threshold: settings.reinit_threshold,
            beta: settings.beta,
        })
    }

    /// Quantizer with codebook rows drawn uniformly from `[-scale, scale]`.
    pub fn random(settings: &QuantizerSettings, scale: f64, rng: &mut impl Rng) -> Self {
        let codebooks = (0..settings.depth)
            .map(|_| {
                let v = Array2::from_shape_fn((settings.codebook_size, settings.dim), |_| {
                    F::of_f64(rng.gen_range(-scale..=scale))
                });
                Codebook::new(v, settings.reinit_threshold)
            })
            .collect();
        Self::new(codebooks, settings).expect("valid settings")
    }

    pub fn depth(&self) -> usize {
        self.codebooks.len()
    }

    pub fn dim(&self) -> usize {
        self.codebooks[0].dim()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebooks[0].size()
    }

    /// Greedy residual quantization of every row of `latent`.
    pub fn quantize(&self, latent: ArrayView2<F>) -> Result<Quantized<F>> {
        let (rows, dim) = latent.dim();
        if dim != self.dim() {
            return Err(Error::Shape(format!(
                "latent width {dim} does not match codebook width {}",
                self.dim()
            )));
        }
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantizer input".into()));
        }
        let depth = self.depth();
        let mut residual = latent.to_owned();
        let mut quantized = Array2::<F>::zeros((rows, dim));
        let mut codes = vec![0u16; rows * depth];
        let mut residuals = Vec::with_capacity(depth);
        let mut selected = Vec::with_capacity(depth);
        for (d, cb) in self.codebooks.iter().enumerate() {
            let idx = cb.nearest(residual.view());
            let mut chosen = Array2::<F>::zeros((rows, dim));
            for (t, &i) in idx.iter().enumerate() {
                codes[t * depth + d] = i as u16;
                chosen.row_mut(t).assign(&cb.vectors.row(i));
            }
            quantized += &chosen;
            let next = &residual - &chosen;
            residuals.push(std::mem::replace(&mut residual, next));
            selected.push(chosen);
        }
        Ok(Quantized {
            quantized,
            grid: CodeGrid::new(codes, rows, depth, self.codebook_size())?,
            residuals,
            selected,
            final_residual: residual,
        })
    }

    /// Sum over depths of the vectors named by `grid`.
    pub fn dequantize(&self, grid: &CodeGrid) -> Result<Array2<F>> {
        if grid.depth() != self.depth() {
            return Err(Error::Shape(format!(
                "grid depth {} does not match quantizer depth {}",
                grid.depth(),
                self.depth()
            )));
        }
        let size = self.codebook_size();
        let mut out = Array2::<F>::zeros((grid.positions(), self.dim()));
        for (d, cb) in self.codebooks.iter().enumerate() {
            for t in 0..grid.positions() {
                let code = grid.get(t, d);
                if code >= size {
                    return Err(Error::CodeOutOfRange { index: code, size });
                }
                let mut row = out.row_mut(t);
                row += &cb.vectors.row(code);
            }
        }
        Ok(out)
    }

    /// Per-depth assignment counts of `grid`.
    pub fn assignment_counts(&self, grid: &CodeGrid) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; self.codebook_size()]; self.depth()];
        for t in 0..grid.positions() {
            for (d, c) in counts.iter_mut().enumerate() {
                c[grid.get(t, d)] += 1;
            }
        }
        counts
    }

    /// `usage <- decay * usage + (1 - decay) * count` for every vector.
    pub fn ema_update(&mut self, grid: &CodeGrid) {
        let counts = self.assignment_counts(grid);
        self.ema_update_counts(&counts);
    }

    pub fn ema_update_counts(&mut self, counts: &[Vec<usize>]) {
        let decay = self.decay;
        for (cb, c) in self.codebooks.iter_mut().zip(counts) {
            for (u, &n) in cb.ema_usage.iter_mut().zip(c) {
                *u = decay * *u + (1.0 - decay) * n as f64;
            }
        }
    }

    /// Replaces every vector whose usage fell below the threshold with a
    /// uniformly drawn row of that depth's input batch and resets its usage to
    /// the threshold. `batches[d]` holds the rows seen by depth `d`; a single
    /// batch is reused for every depth. Returns the number replaced.
    pub fn reinit_dead_codes(&mut self, batches: &[ArrayView2<F>], rng: &mut impl Rng) -> Result<usize> {
        if batches.is_empty() || batches.iter().any(|b| b.nrows() == 0) {
            return Err(Error::InvalidInput("dead-code reinit needs a nonempty batch".into()));
        }
        let threshold = self.reinit_threshold;
        let mut replaced = 0;
        for (d, cb) in self.codebooks.iter_mut().enumerate() {
            let batch = &batches[d.min(batches.len() - 1)];
            if batch.ncols() != cb.dim() {
                return Err(Error::Shape("reinit batch width does not match codebook".into()));
            }
            for i in 0..cb.size() {
                if cb.ema_usage[i] < threshold {
                    let pick = rng.gen_range(0..batch.nrows());
                    cb.vectors.row_mut(i).assign(&batch.row(pick));
                    cb.ema_usage[i] = threshold;
                    replaced += 1;
                }
            }
        }
        Ok(replaced)
    }

    /// Depth-by-depth k-means initialization: codebook `d` is fitted to the
    /// residual left by codebooks `0..d` on the same batch.
    pub fn kmeans_initialize(&mut self, batch: ArrayView2<F>, iters: usize, seed: u64) -> Result<()> {
        let size = self.codebook_size();
        let mut residual = batch.to_owned();
        for d in 0..self.depth() {
            let cb = kmeans_init(residual.view(), size, iters, seed.wrapping_add(d as u64))?;
            let idx = cb.nearest(residual.view());
            for (mut row, &i) in residual.axis_iter_mut(Axis(0)).zip(&idx) {
                row -= &cb.vectors.row(i);
            }
            self.codebooks[d] = cb;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_row_sq_dist<F: Real>(a: &Array2<F>, b: &Array2<F>) -> f64 {
        let rows = a.nrows().max(1) as f64;
        a.iter().zip(b.iter()).map(|(&x, &y)| (x - y).as_f64().powi(2)).sum::<f64>() / rows
    }

    fn settings(depth: usize, size: usize, dim: usize) -> QuantizerSettings {
        QuantizerSettings {
            depth,
            codebook_size: size,
            dim,
            ..Default::default()
        }
    }

    fn single(vectors: Array2<f64>) -> ResidualQuantizer<f64> {
        let s = settings(1, vectors.nrows(), vectors.ncols());
        ResidualQuantizer::new(vec![Codebook::new(vectors, 2.0)], &s).unwrap()
    }

    #[test]
    fn worked_nearest_neighbor_example() {
        let rq = single(array![[0.0, 0.0], [1.0, 1.0]]);
        let q = rq.quantize(array![[0.9, 1.1]].view()).unwrap();
        assert_eq!(q.grid.get(0, 0), 1);
        assert_eq!(q.quantized, array![[1.0, 1.0]]);
        assert!((q.final_residual[[0, 0]] + 0.1).abs() < 1e-12);
        assert!((q.final_residual[[0, 1]] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn exact_codeword_leaves_no_residual() {
        let rq = single(array![[0.0, 0.0], [1.0, 1.0], [-0.5, 2.0]]);
        let q = rq.quantize(array![[-0.5, 2.0]].view()).unwrap();
        assert_eq!(q.quantized, array![[-0.5, 2.0]]);
        assert!(q.final_residual.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dequantize_rebuilds_quantized_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rq = ResidualQuantizer::<f64>::random(&settings(3, 8, 4), 1.0, &mut rng);
        let latent = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 / 7.0 - 0.5);
        let q = rq.quantize(latent.view()).unwrap();
        assert_eq!(rq.dequantize(&q.grid).unwrap(), q.quantized);
        let zero = CodeGrid::new(vec![0; 6 * 3], 6, 3, 8).unwrap();
        let single_depth = ResidualQuantizer::new(vec![rq.codebooks[0].clone()], &settings(1, 8, 4)).unwrap();
        let zero1 = CodeGrid::new(vec![0; 6], 6, 1, 8).unwrap();
        let out = single_depth.dequantize(&zero1).unwrap();
        for row in out.rows() {
            assert_eq!(row, rq.codebooks[0].vectors.row(0));
        }
        assert!(single_depth.dequantize(&zero).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch_and_nan() {
        let rq = single(array![[0.0, 0.0]]);
        assert!(matches!(rq.quantize(array![[1.0, 2.0, 3.0]].view()), Err(Error::Shape(_))));
        assert!(rq.quantize(array![[f64::NAN, 0.0]].view()).is_err());
    }

    #[test]
    fn ema_decays_in_closed_form() {
        let mut rq = single(array![[0.0], [1.0]]);
        rq.codebooks[0].ema_usage = vec![10.0, 0.0];
        let idle = CodeGrid::new(vec![1, 1], 2, 1, 2).unwrap();
        for _ in 0..3 {
            rq.ema_update(&idle);
        }
        assert!((rq.codebooks[0].ema_usage[0] - 10.0 * 0.97f64.powi(3)).abs() < 1e-12);
        // Code 1 received 2 assignments per batch starting from 0.
        let expect = (0..3).fold(0.0, |u, _| 0.97 * u + 0.03 * 2.0);
        assert!((rq.codebooks[0].ema_usage[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn single_batch_assignment_from_zero_usage() {
        let mut rq = single(array![[0.0], [1.0]]);
        rq.codebooks[0].ema_usage = vec![0.0, 0.0];
        let g = CodeGrid::new(vec![1; 5], 5, 1, 2).unwrap();
        rq.ema_update(&g);
        assert!((rq.codebooks[0].ema_usage[1] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn reinit_respects_threshold_and_seed() {
        let batch = array![[5.0, 5.0], [6.0, 6.0], [7.0, 7.0]];
        let mut rq = single(array![[0.0, 0.0], [1.0, 1.0]]);
        rq.codebooks[0].ema_usage = vec![2.0, 3.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = rq.clone();
        assert_eq!(rq.reinit_dead_codes(&[batch.view()], &mut rng).unwrap(), 0);
        assert_eq!(rq, before);

        rq.codebooks[0].ema_usage = vec![1.9, 3.5];
        let mut again = rq.clone();
        let n = rq.reinit_dead_codes(&[batch.view()], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(n, 1);
        let row = rq.codebooks[0].vectors.row(0).to_owned();
        assert!(batch.rows().into_iter().any(|r| r == row));
        assert_eq!(rq.codebooks[0].ema_usage[0], 2.0);
        assert_eq!(rq.codebooks[0].vectors.row(1), array![1.0, 1.0]);
        again.reinit_dead_codes(&[batch.view()], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(again, rq);
        assert!(rq.reinit_dead_codes(&[], &mut rng).is_err());
    }

    #[test]
    fn kmeans_init_beats_random_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = Array2::from_shape_fn((400, 4), |_| rng.gen_range(-1.0..1.0f64));
        let s = settings(2, 16, 4);
        let mut km = ResidualQuantizer::<f64>::random(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
        km.kmeans_initialize(batch.view(), 20, 7).unwrap();
        // Random init: codebook rows drawn from the batch itself.
        let mut pick = ChaCha8Rng::seed_from_u64(8);
        let random_books = (0..2)
            .map(|_| {
                let v = Array2::from_shape_fn((16, 4), |_| 0.0);
                let mut v = v;
                for mut row in v.rows_mut() {
                    row.assign(&batch.row(pick.gen_range(0..400)));
                }
                Codebook::new(v, 2.0)
            })
            .collect();
        let rnd = ResidualQuantizer::new(random_books, &s).unwrap();
        let km_err = mean_row_sq_dist(&batch, &km.quantize(batch.view()).unwrap().quantized);
        let rnd_err = mean_row_sq_dist(&batch, &rnd.quantize(batch.view()).unwrap().quantized);
        assert!(km_err <= rnd_err, "kmeans {km_err} vs random {rnd_err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn zero_augmented_cascade_never_increases_residuals(seed in any::<u64>(), depth in 1usize..5, size in 1usize..9, rows in 1usize..12) {
                let dim = 3;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let books = (0..depth)
                    .map(|_| {
                        let mut v = Array2::from_shape_fn((size + 1, dim), |_| rng.gen_range(-1.0..1.0));
                        v.row_mut(size).fill(0.0);
                        Codebook::new(v, 1.0)
                    })
                    .collect();
                let q = ResidualQuantizer::<f64>::new(books, &settings(depth, size + 1, dim)).unwrap();
                let z = Array2::from_shape_fn((rows, dim), |_| rng.gen_range(-2.0..2.0));
                let out = q.quantize(z.view()).unwrap();
                let norm = |a: &Array2<f64>, r: usize| a.row(r).iter().map(|v| v * v).sum::<f64>();
                for r in 0..rows {
                    for d in 1..depth {
                        prop_assert!(norm(&out.residuals[d], r) <= norm(&out.residuals[d - 1], r));
                    }
                    prop_assert!(norm(&out.final_residual, r) <= norm(&out.residuals[depth - 1], r));
                }
                prop_assert_eq!(q.dequantize(&out.grid).unwrap(), out.quantized);
            }
        }
    }
}
