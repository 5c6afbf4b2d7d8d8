//! Residual vector quantization: codebooks, the quantizer cascade, its
//! training losses, and the code grid file format.

mod codebook;
mod grid;
mod quantizer;

pub use codebook::{kmeans_init, Codebook};
pub use grid::{CodeGrid, GRID_MAGIC};
pub use quantizer::{Quantized, QuantizerSettings, ResidualQuantizer};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// Commitment loss of one quantization pass, averaged over rows:
///
/// `Σ_d ‖sg[rᵈ] − z_qᵈ‖² + β‖rᵈ − sg[z_qᵈ]‖² + ‖z_e − sg[z_qᵈ]‖²`
///
/// where `rᵈ` is the input to depth `d` and `z_e` the unquantized latent. The
/// last term is included only when `third_term` is set.
pub fn commitment_loss<F: Real>(
    residuals: &[Array2<F>],
    selected: &[Array2<F>],
    latent: &Array2<F>,
    beta: f64,
    third_term: bool,
) -> Result<f64> {
    if residuals.len() != selected.len() {
        return Err(Error::Shape(format!(
            "{} residual depths but {} quantized depths",
            residuals.len(),
            selected.len()
        )));
    }
    let rows = latent.nrows().max(1) as f64;
    let mut total = 0.0;
    for (r, q) in residuals.iter().zip(selected) {
        if r.dim() != q.dim() || r.dim() != latent.dim() {
            return Err(Error::Shape("commitment loss inputs differ in shape".into()));
        }
        let rq: f64 = r.iter().zip(q).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
        total += (1.0 + beta) * rq;
        if third_term {
            total += latent.iter().zip(q).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>();
        }
    }
    Ok(total / rows)
}

/// Tape form of [`commitment_loss`].
///
/// `latent` is the encoder output `[rows, dim]` on the tape and
/// `codebooks[d]` the depth-`d` vectors as tape variables. Gradients reach the
/// codebooks only through the first term and the latent only through the
/// others.
pub fn commitment_loss_tape<F: Real>(
    tape: &mut Tape<F>,
    latent: Var,
    codebooks: &[Var],
    q: &Quantized<F>,
    beta: f64,
    third_term: bool,
) -> Result<Var> {
    let depth = q.grid.depth();
    if codebooks.len() != depth || q.residuals.len() != depth {
        return Err(Error::Shape(format!(
            "commitment loss over {depth} depths given {} codebooks",
            codebooks.len()
        )));
    }
    let rows = q.grid.positions();
    let dim = q.quantized.ncols();
    let mut cumulative = Array2::<F>::zeros((rows, dim));
    let mut terms = Vec::new();
    for d in 0..depth {
        let idx: Vec<usize> = (0..rows).map(|t| q.grid.get(t, d)).collect();
        let chosen = tape.gather_rows(codebooks[d], &idx);
        let r = tape.constant(std_vec(&q.residuals[d]), &[rows, dim]);
        let diff = tape.sub(r, chosen);
        terms.push(tape.sqr_sum(diff));

        // rᵈ = z_e − Σ_{j<d} sg[z_qʲ], so rᵈ − sg[z_qᵈ] = z_e − Σ_{j≤d} sg[z_qʲ].
        cumulative += &q.selected[d];
        let target = tape.constant(std_vec(&cumulative), &[rows, dim]);
        let diff = tape.sub(latent, target);
        let s = tape.sqr_sum(diff);
        terms.push(tape.scale(s, F::of_f64(beta)));

        if third_term {
            let zq = tape.constant(std_vec(&q.selected[d]), &[rows, dim]);
            let diff = tape.sub(latent, zq);
            terms.push(tape.sqr_sum(diff));
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t);
    }
    Ok(tape.scale(total, F::of_f64(1.0 / rows.max(1) as f64)))
}

/// Straight-through estimator: the value is `quantized`, the gradient flows
/// to `latent` unchanged.
pub fn straight_through<F: Real>(tape: &mut Tape<F>, latent: Var, quantized: &Array2<F>) -> Result<Var> {
    let shape = tape.shape(latent).to_vec();
    if shape.iter().product::<usize>() != quantized.len() {
        return Err(Error::Shape(format!(
            "straight-through latent {shape:?} vs quantized {:?}",
            quantized.dim()
        )));
    }
    Ok(tape.push_op(std_vec(quantized), shape, &[latent], move |_, g, acc| {
        acc.add(latent, g);
    }))
}

fn std_vec<F: Real>(a: &Array2<F>) -> Vec<F> {
    a.as_standard_layout().iter().copied().collect()
}

/// Ratio of the source bit rate to the code bit rate.
pub fn compression_factor(sample_rate: f64, bits_per_sample: f64, latent_rate: f64, depth: usize, codebook_size: usize) -> f64 {
    let bits_per_code = (codebook_size as f64).log2();
    sample_rate * bits_per_sample / (latent_rate * depth as f64 * bits_per_code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn worked_commitment_example() {
        let r = vec![array![[1.0, 0.0]]];
        let q = vec![array![[0.0, 0.0]]];
        let v = commitment_loss(&r, &q, &array![[1.0, 0.0]], 0.25, true).unwrap();
        assert!((v - 2.25).abs() < 1e-15);
        let v = commitment_loss(&r, &q, &array![[1.0, 0.0]], 0.25, false).unwrap();
        assert!((v - 1.25).abs() < 1e-15);
        assert_eq!(commitment_loss(&r, &r, &array![[1.0, 0.0]], 0.25, true).unwrap(), 0.0);
        assert!(commitment_loss(&r, &[], &array![[1.0, 0.0]], 0.25, true).is_err());
    }

    fn setup() -> (ResidualQuantizer<f64>, Array2<f64>) {
        let s = QuantizerSettings {
            depth: 2,
            codebook_size: 3,
            dim: 2,
            ..Default::default()
        };
        let books = vec![
            Codebook::new(array![[0.0, 0.0], [1.0, 0.5], [-1.0, 1.0]], 2.0),
            Codebook::new(array![[0.1, 0.0], [0.0, -0.2], [0.3, 0.3]], 2.0),
        ];
        let rq = ResidualQuantizer::new(books, &s).unwrap();
        (rq, array![[0.9, 0.7], [-0.8, 1.1], [0.2, -0.1]])
    }

    #[test]
    fn tape_commitment_matches_value_and_stop_gradients() {
        let (rq, z) = setup();
        let q = rq.quantize(z.view()).unwrap();
        let want = commitment_loss(&q.residuals, &q.selected, &z, 0.25, true).unwrap();

        let mut tape = Tape::<f64>::new();
        let lat = tape.leaf(z.iter().copied().collect(), &[3, 2]);
        let books: Vec<Var> = rq
            .codebooks
            .iter()
            .map(|c| tape.leaf(c.vectors.iter().copied().collect(), &[3, 2]))
            .collect();
        let loss = commitment_loss_tape(&mut tape, lat, &books, &q, 0.25, true).unwrap();
        assert!((tape.scalar(loss) - want).abs() < 1e-12);
        let g = tape.backward(loss);

        // Latent gradient: only the β term and the third term, both with
        // stopped quantized values.
        let mut cum = Array2::<f64>::zeros((3, 2));
        let mut expect = Array2::<f64>::zeros((3, 2));
        for d in 0..2 {
            cum += &q.selected[d];
            expect = expect + (&z - &cum) * (2.0 * 0.25 / 3.0) + (&z - &q.selected[d]) * (2.0 / 3.0);
        }
        for (a, b) in g.get(lat).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Codebook gradient: only the first term, for selected rows.
        for d in 0..2 {
            let mut expect = Array2::<f64>::zeros((3, 2));
            for t in 0..3 {
                let i = q.grid.get(t, d);
                let diff = (&q.selected[d].row(t) - &q.residuals[d].row(t)) * (2.0 / 3.0);
                let mut row = expect.row_mut(i);
                row += &diff;
            }
            for (a, b) in g.get(books[d]).iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn straight_through_forwards_quantized_and_passes_gradient() {
        let mut tape = Tape::<f64>::new();
        let lat = tape.leaf(vec![0.3, -0.2, 1.7, 0.1], &[2, 2]);
        let q = array![[0.25, -0.125], [1.5, 0.0]];
        let st = straight_through(&mut tape, lat, &q).unwrap();
        assert_eq!(tape.value(st), &[0.25, -0.125, 1.5, 0.0]);
        let w = tape.constant(vec![1.0, -2.0, 3.0, 0.5], &[2, 2]);
        let y = tape.mul(st, w);
        let l = tape.sum(y);
        assert_eq!(tape.backward(l).get(lat), vec![1.0, -2.0, 3.0, 0.5]);
        assert!(straight_through(&mut tape, lat, &array![[1.0]]).is_err());
    }

    #[test]
    fn default_compression_factor() {
        let f = compression_factor(22050.0, 16.0, 110.0, 12, 4096);
        assert!((f - 22.27).abs() < 0.01, "{f}");
    }
}
