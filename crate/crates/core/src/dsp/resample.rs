use super::Waveform;
use crate::error::{Error, Result};

/// Linear-interpolation resampler. Output length is
/// `round(len * target_rate / source_rate)`; output sample `i` reads the
/// input at fractional position `i * source_rate / target_rate`, clamped to
/// the last input sample.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target sample rate must be positive".into()));
    }
    if let Some(i) = w.samples().iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("resample input sample {i}")));
    }
    let source_rate = w.sample_rate();
    if source_rate == target_rate {
        return Ok(w.clone());
    }
    let src = w.samples();
    let out_len = (src.len() as f64 * target_rate as f64 / source_rate as f64).round() as usize;
    if src.is_empty() {
        return Waveform::new(Vec::new(), target_rate);
    }
    let last = src.len() - 1;
    let step = source_rate as f64 / target_rate as f64;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = (pos - lo as f64).clamp(0.0, 1.0);
            (src[lo] as f64 * (1.0 - frac) + src[hi] as f64 * frac) as f32
        })
        .collect();
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_length_from_44100_to_22050() {
        let w = Waveform::zeros(4 * 44100, 44100);
        let r = resample(&w, 22050).unwrap();
        assert_eq!(r.len(), 88200);
        assert_eq!(r.sample_rate(), 22050);
    }

    #[test]
    fn identity_when_rates_match() {
        let w = Waveform::new(vec![0.1, -0.4, 0.9], 8000).unwrap();
        assert_eq!(resample(&w, 8000).unwrap(), w);
    }

    #[test]
    fn constant_stays_constant() {
        for (from, to) in [(44100, 22050), (22050, 44100), (8000, 11025), (48000, 22050)] {
            let w = Waveform::new(vec![0.5; 1000], from).unwrap();
            let r = resample(&w, to).unwrap();
            assert!(r.samples().iter().all(|&s| s == 0.5), "{from}->{to}");
        }
    }

    #[test]
    fn rejects_zero_target() {
        let w = Waveform::new(vec![0.0; 4], 8000).unwrap();
        assert!(resample(&w, 0).is_err());
    }
}
