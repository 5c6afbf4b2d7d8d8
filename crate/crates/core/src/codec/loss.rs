use std::sync::Arc;

use ndarray::Array3;

use super::config::LossConfig;
use crate::dsp::MelAnalyzer;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

/// Per-term values of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub spectral: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    /// `w_spec·spectral + w_rec·reconstruction + w_comm·commitment`.
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(spectral: f64, reconstruction: f64, commitment: f64, cfg: &LossConfig) -> Self {
        Self {
            spectral,
            reconstruction,
            commitment,
            total: cfg.w_spec * spectral + cfg.w_rec * reconstruction + cfg.w_comm * commitment,
        }
    }
}

/// Multi-scale mel analysis shared by every evaluation of the spectral loss.
#[derive(Debug, Clone)]
pub struct SpectralLoss<F: Real> {
    analyzers: Vec<Arc<MelAnalyzer<F>>>,
    alpha: f64,
    eps: f64,
}

impl<F: Real> SpectralLoss<F> {
    pub fn new(sample_rate: u32, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        let analyzers = cfg
            .scales
            .iter()
            .map(|&s| MelAnalyzer::new(sample_rate, s).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(Self {
            analyzers,
            alpha: cfg.alpha,
            eps: cfg.log_eps,
        })
    }

    pub fn max_scale(&self) -> usize {
        self.analyzers.iter().map(|a| a.scale()).max().unwrap_or(0)
    }

    /// Spectral loss of `estimates` against `targets`, both `[rows, len]`
    /// with one row per (clip, source). Per row and scale the frame-mean of
    /// `‖S_t(x) − S_t(x̂)‖₁ + α‖log S_t(x) − log S_t(x̂)‖₂` is taken; scales
    /// are averaged, rows summed, and the result divided by `clips`.
    pub fn on_tape(&self, tape: &mut Tape<F>, targets: Var, estimates: Var, clips: usize) -> Result<Var> {
        let shape = tape.shape(estimates).to_vec();
        if tape.shape(targets) != shape.as_slice() || shape.len() != 2 {
            return Err(Error::Shape(format!(
                "spectral loss inputs {:?} vs {:?}",
                tape.shape(targets),
                shape
            )));
        }
        let len = shape[1];
        if len < self.max_scale() {
            return Err(Error::TooShort {
                needed: self.max_scale(),
                got: len,
            });
        }
        let eps = F::of_f64(self.eps);
        let mut acc: Option<Var> = None;
        for a in &self.analyzers {
            let frames = a.num_frames(len).expect("length checked");
            let mt = tape.mel_power(targets, a)?;
            let me = tape.mel_power(estimates, a)?;
            let diff = tape.sub(mt, me);
            let l1 = tape.abs_sum(diff);
            let lt = tape.log_clamp(mt, eps);
            let le = tape.log_clamp(me, eps);
            let ld = tape.sub(lt, le);
            let norms = tape.row_norms(ld);
            let l2 = tape.sum(norms);
            let l2 = tape.scale(l2, F::of_f64(self.alpha));
            let term = tape.add(l1, l2);
            let term = tape.scale(term, F::of_f64(1.0 / frames as f64));
            acc = Some(match acc {
                Some(v) => tape.add(v, term),
                None => term,
            });
        }
        let norm = 1.0 / (self.analyzers.len() as f64 * clips.max(1) as f64);
        Ok(tape.scale(acc.expect("at least one scale"), F::of_f64(norm)))
    }

    /// Value of the spectral loss for `[clips, sources, len]` arrays.
    pub fn value(&self, targets: &Array3<F>, estimates: &Array3<F>) -> Result<f64> {
        let (clips, rows, len) = check_pair(targets, estimates)?;
        let mut tape = Tape::new();
        let t = tape.constant(flat(targets), &[clips * rows, len]);
        let e = tape.constant(flat(estimates), &[clips * rows, len]);
        let v = self.on_tape(&mut tape, t, e, clips)?;
        Ok(tape.scalar(v).as_f64())
    }
}

/// `Σ_sources (1/T) Σ_t (x_t − x̂_t)²`, averaged over clips. Inputs are
/// `[rows, len]` tape variables with `rows = clips × sources`.
pub fn reconstruction_loss_tape<F: Real>(tape: &mut Tape<F>, targets: Var, estimates: Var, clips: usize) -> Result<Var> {
    let shape = tape.shape(estimates).to_vec();
    if tape.shape(targets) != shape.as_slice() {
        return Err(Error::Shape(format!(
            "reconstruction loss inputs {:?} vs {:?}",
            tape.shape(targets),
            shape
        )));
    }
    let len = *shape.last().unwrap_or(&1);
    let d = tape.sub(targets, estimates);
    let s = tape.sqr_sum(d);
    Ok(tape.scale(s, F::of_f64(1.0 / (len.max(1) * clips.max(1)) as f64)))
}

/// Value of the reconstruction loss for `[clips, sources, len]` arrays.
pub fn reconstruction_loss<F: Real>(targets: &Array3<F>, estimates: &Array3<F>) -> Result<f64> {
    let (clips, _, len) = check_pair(targets, estimates)?;
    let s: f64 = targets
        .iter()
        .zip(estimates.iter())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum();
    Ok(s / (len.max(1) * clips.max(1)) as f64)
}

fn check_pair<F: Real>(a: &Array3<F>, b: &Array3<F>) -> Result<(usize, usize, usize)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("targets {:?} vs estimates {:?}", a.dim(), b.dim())));
    }
    Ok(a.dim())
}

pub(crate) fn flat<F: Real, D: ndarray::Dimension>(a: &ndarray::Array<F, D>) -> Vec<F> {
    a.as_standard_layout().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::seeded;

    fn small() -> LossConfig {
        LossConfig {
            scales: vec![64, 128, 256],
            ..Default::default()
        }
    }

    #[test]
    fn identical_and_silent_inputs_give_zero() {
        let sl = SpectralLoss::<f64>::new(22050, &small()).unwrap();
        let x = Array3::from_shape_vec((1, 2, 300), seeded(600, 1)).unwrap();
        assert_eq!(sl.value(&x, &x).unwrap(), 0.0);
        let z = Array3::<f64>::zeros((1, 2, 300));
        assert_eq!(sl.value(&z, &z).unwrap(), 0.0);
        assert!(matches!(
            sl.value(&Array3::zeros((1, 1, 100)), &Array3::zeros((1, 1, 100))),
            Err(Error::TooShort { needed: 256, .. })
        ));
    }

    #[test]
    fn reconstruction_offsets_sum_over_sources() {
        let t = Array3::<f64>::zeros((1, 4, 50));
        let one = t.clone().slice_move(ndarray::s![.., 0..1, ..]).to_owned();
        let e1 = one.mapv(|v| v + 0.1);
        assert!((reconstruction_loss(&one, &e1).unwrap() - 0.01).abs() < 1e-12);
        let e = t.mapv(|v| v + 0.1);
        assert!((reconstruction_loss(&t, &e).unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn spectral_gradient_matches_finite_differences() {
        let sl = SpectralLoss::<f64>::new(8000, &small()).unwrap();
        let target = seeded(2 * 300, 3);
        let err = crate::tensor::testutil::check_grad(&seeded(2 * 300, 4), &[2, 300], |t, x| {
            let tg = t.constant(target.clone(), &[2, 300]);
            sl.on_tape(t, tg, x, 1).unwrap()
        });
        assert!(err < 1e-4, "{err}");
    }
}
