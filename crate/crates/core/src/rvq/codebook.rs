use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul, MatLayout, Real};

/// One quantization level: `size × dim` vectors plus an exponential moving
/// average of how often each vector is selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<F> {
    pub vectors: Array2<F>,
    pub ema_usage: Vec<f64>,
}

impl<F: Real> Codebook<F> {
    /// Codebook with the given vectors and a uniform usage statistic.
    pub fn new(vectors: Array2<F>, initial_usage: f64) -> Self {
        let n = vectors.nrows();
        Self {
            vectors,
            ema_usage: vec![initial_usage; n],
        }
    }

    pub fn size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Index of the nearest vector to every row of `rows` under squared
    /// Euclidean distance; ties resolve to the lowest index.
    pub fn nearest(&self, rows: ArrayView2<F>) -> Vec<usize> {
        nearest_rows(self.vectors.view(), rows)
    }
}

fn sq_dist<F: Real>(a: ArrayView1<F>, b: ArrayView1<F>) -> F {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Exact nearest-neighbor search. Candidate distances come from a single
/// matrix product; every candidate within a rounding margin of the best is
/// then re-scored with the direct difference so the result equals a brute
/// force scan.
pub(crate) fn nearest_rows<F: Real>(vectors: ArrayView2<F>, rows: ArrayView2<F>) -> Vec<usize> {
    let (n, dim) = vectors.dim();
    let m = rows.nrows();
    if m == 0 {
        return Vec::new();
    }
    assert!(n > 0, "nearest_rows: empty codebook");
    let vec_std = vectors.as_standard_layout();
    let row_std = rows.as_standard_layout();
    let vs = vec_std.as_slice().unwrap();
    let rs = row_std.as_slice().unwrap();
    let norms: Vec<F> = vec_std.rows().into_iter().map(|r| r.iter().map(|&v| v * v).sum()).collect();
    let max_norm = norms.iter().fold(F::zero(), |a, &b| a.max(b));
    let mut dots = vec![F::zero(); m * n];
    matmul(&mut dots, rs, MatLayout::Normal, vs, MatLayout::Transposed, m, dim, n, false);
    let eps = F::epsilon() * F::of_f64(8.0 * (dim as f64 + 4.0));
    let mut out = Vec::with_capacity(m);
    for (i, drow) in dots.chunks(n).enumerate() {
        let r = row_std.row(i);
        let rnorm: F = r.iter().map(|&v| v * v).sum();
        let approx = |j: usize| norms[j] - F::of_f64(2.0) * drow[j];
        let best = (0..n).map(approx).fold(F::infinity(), |a, b| a.min(b));
        let margin = eps * (rnorm + max_norm) * F::of_f64(4.0);
        let mut best_idx = usize::MAX;
        let mut best_d = F::infinity();
        for j in 0..n {
            if approx(j) <= best + margin {
                let d = sq_dist(r, vec_std.row(j));
                if d < best_d {
                    best_d = d;
                    best_idx = j;
                }
            }
        }
        if best_idx == usize::MAX {
            // Non-finite input; fall back to a plain scan.
            best_idx = (0..n)
                .min_by(|&a, &b| {
                    sq_dist(r, vec_std.row(a))
                        .partial_cmp(&sq_dist(r, vec_std.row(b)))
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
        }
        out.push(best_idx);
    }
    out
}

/// Lloyd's k-means with k-means++ seeding on the rows of `batch`.
///
/// The returned usage statistic holds each final cluster's population.
pub fn kmeans_init<F: Real>(batch: ArrayView2<F>, size: usize, iters: usize, seed: u64) -> Result<Codebook<F>> {
    let (m, dim) = batch.dim();
    if size == 0 {
        return Err(Error::InvalidInput("codebook size must be positive".into()));
    }
    if m < size {
        return Err(Error::InitBatchTooSmall { rows: m, needed: size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = batch.as_standard_layout();

    // k-means++ seeding.
    let mut centroids = Array2::<F>::zeros((size, dim));
    let first = rng.gen_range(0..m);
    centroids.row_mut(0).assign(&batch.row(first));
    let mut d2: Vec<f64> = batch
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centroids.row(0)).as_f64())
        .collect();
    for c in 1..size {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..m)
        };
        centroids.row_mut(c).assign(&batch.row(pick));
        for (i, r) in batch.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)).as_f64());
        }
    }

    let mut assign = nearest_rows(centroids.view(), batch.view());
    for _ in 0..iters {
        let mut sums = Array2::<f64>::zeros((size, dim));
        let mut counts = vec![0usize; size];
        for (r, &a) in batch.rows().into_iter().zip(&assign) {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(r.iter()) {
                *s += v.as_f64();
            }
        }
        for c in 0..size {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c).iter()) {
                    *dst = F::of_f64(s * inv);
                }
            }
        }
        let next = nearest_rows(centroids.view(), batch.view());
        let converged = next == assign;
        assign = next;
        if converged {
            break;
        }
    }
    let mut usage = vec![0.0; size];
    for &a in &assign {
        usage[a] += 1.0;
    }
    Ok(Codebook {
        vectors: centroids,
        ema_usage: usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn brute_nearest(v: &Array2<f64>, r: ArrayView1<f64>) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in v.rows().into_iter().enumerate() {
            let d = sq_dist(r, c);
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    }

    #[test]
    fn nearest_matches_brute_force_and_breaks_ties_low() {
        let v = array![[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [-1.0, 0.5]];
        let rows = array![[0.9, 1.1], [0.5, 0.5], [-2.0, 0.0], [1.0, 1.0]];
        let got = nearest_rows(v.view(), rows.view());
        // (0.5,0.5) is equidistant from codes 0, 1 and 2 -> lowest index.
        assert_eq!(got, vec![1, 0, 3, 1]);
        for (r, &g) in rows.rows().into_iter().zip(&got) {
            assert_eq!(brute_nearest(&v, r), g);
        }
    }

    #[test]
    fn kmeans_with_one_point_per_cluster_recovers_the_points() {
        let batch = array![[0.0, 1.0], [3.0, -1.0], [5.0, 5.0], [-4.0, 2.0]];
        let cb = kmeans_init(batch.view(), 4, 20, 11).unwrap();
        let mut got: Vec<Vec<f64>> = cb.vectors.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut want: Vec<Vec<f64>> = batch.rows().into_iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(cb.ema_usage, vec![1.0; 4]);
    }

    #[test]
    fn kmeans_rejects_small_batch() {
        let batch = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            kmeans_init(batch.view(), 4, 5, 0),
            Err(Error::InitBatchTooSmall { rows: 3, needed: 4 })
        ));
    }

    #[test]
    fn kmeans_is_deterministic_for_a_seed() {
        let batch = Array2::from_shape_fn((50, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64 / 17.0);
        let a = kmeans_init(batch.view(), 5, 20, 9).unwrap();
        let b = kmeans_init(batch.view(), 5, 20, 9).unwrap();
        assert_eq!(a, b);
    }
}
