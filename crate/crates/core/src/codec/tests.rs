use super::*;
use crate::rvq::QuantizerSettings;
use crate::tensor::testutil::seeded;

fn micro(use_skips: bool) -> (CodecModel<f64>, LossConfig) {
    let cfg = CodecConfig {
        base_channels: 2,
        latent_channels: 32,
        sample_rate: 8000,
        context_seconds: 0.1,
        use_skips,
        ..Default::default()
    };
    let q = QuantizerSettings {
        depth: 2,
        codebook_size: 8,
        ..Default::default()
    };
    let loss = LossConfig {
        scales: vec![64, 128, 256, 512],
        ..Default::default()
    };
    (CodecModel::new(cfg, &q, 3).unwrap(), loss)
}

fn batch(clips: usize, len: usize, n: usize) -> (Array2<f64>, Array3<f64>) {
    let t = Array3::from_shape_vec((clips, n, len), seeded(clips * n * len, 11))
        .unwrap()
        .mapv(|v| 0.3 * v);
    let m = t.sum_axis(ndarray::Axis(1));
    (m, t)
}

#[test]
fn default_config_latent_length_and_output_shape() {
    let q = QuantizerSettings {
        codebook_size: 16,
        ..Default::default()
    };
    let model = CodecModel::<f32>::new(CodecConfig::default(), &q, 0).unwrap();
    let x = vec![0.0f32; 88200];
    let e = model.encode(&x).unwrap();
    assert_eq!(e.latent.dim(), (441, 256));
    assert!(e.latent.iter().all(|v| v.is_finite()));
    let g = model.quantizer.quantize(e.latent.view()).unwrap().grid;
    assert_eq!(g.shape(), (441, 12));
    let out = model.decode(&model.quantizer.dequantize(&g).unwrap(), Some(&e.skips)).unwrap();
    assert_eq!(out.dim(), (4, 88200));
}

#[test]
fn round_trip_length_for_several_folds() {
    for strides in [vec![5, 5, 4, 2], vec![5, 5, 4, 3], vec![5, 5, 5, 3]] {
        let cfg = CodecConfig {
            strides,
            kernels: vec![7, 7, 7, 5],
            base_channels: 1,
            latent_channels: 16,
            context_seconds: 3.0,
            sample_rate: 1000,
            ..Default::default()
        };
        let f = cfg.fold();
        let q = QuantizerSettings {
            depth: 2,
            codebook_size: 4,
            ..Default::default()
        };
        let model = CodecModel::<f64>::new(cfg, &q, 1).unwrap();
        let x = seeded(3 * f, 2);
        let e = model.encode(&x).unwrap();
        assert_eq!(e.latent.nrows(), 3);
        let out = model.decode(&e.latent, Some(&e.skips)).unwrap();
        assert_eq!(out.ncols(), 3 * f);
    }
}

#[test]
fn skips_off_ignores_skip_activations() {
    let (mut model, _) = micro(true);
    let x = seeded(800, 4);
    let e = model.encode(&x).unwrap();
    let zeros: Vec<Array2<f64>> = e.skips.iter().map(|s| Array2::zeros(s.dim())).collect();
    let with_zero = model.decode(&e.latent, Some(&zeros)).unwrap();
    let none = model.decode(&e.latent, None).unwrap();
    assert_eq!(with_zero, none);

    model.config.use_skips = false;
    let a = model.decode(&e.latent, Some(&e.skips)).unwrap();
    let noisy: Vec<Array2<f64>> = e.skips.iter().map(|s| s.mapv(|v| v + 1.0)).collect();
    let b = model.decode(&e.latent, Some(&noisy)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, none);
}

#[test]
fn rejects_lengths_off_the_fold_grid() {
    let (model, _) = micro(true);
    assert!(matches!(model.encode(&[0.0; 801]), Err(Error::InvalidInput(_))));
}

#[test]
fn weights_reassemble_the_total() {
    let (model, mut loss) = micro(true);
    let (m, t) = batch(2, 800, 4);
    for w in [(1.0, 10.0, 1.0), (0.0, 1.0, 0.0), (0.3, 0.0, 2.0)] {
        (loss.w_spec, loss.w_rec, loss.w_comm) = w;
        let sl = SpectralLoss::new(8000, &loss).unwrap();
        let mut tape = Tape::new();
        let mut b = Bound::new(&mut tape, &model, BnMode::Train, true);
        let out = model.forward(&mut tape, &mut b, &m, &t, &loss, &sl, Quantization::Live).unwrap();
        let br = out.breakdown;
        let want = w.0 * br.spectral + w.1 * br.reconstruction + w.2 * br.commitment;
        assert!((tape.scalar(out.total) - want).abs() <= 1e-12 * want.abs().max(1.0));
        assert_eq!(br.total, want);
        if w == (0.0, 1.0, 0.0) {
            assert_eq!(tape.scalar(out.total), br.reconstruction);
        }
    }
}

#[test]
fn perfect_estimates_zero_the_signal_losses() {
    let (_, loss) = micro(true);
    let sl = SpectralLoss::<f64>::new(8000, &loss).unwrap();
    let (_, t) = batch(2, 800, 4);
    assert_eq!(sl.value(&t, &t).unwrap(), 0.0);
    assert_eq!(reconstruction_loss(&t, &t).unwrap(), 0.0);
}

#[test]
fn frozen_quantization_gradient_matches_finite_differences() {
    // Spot check on a handful of coordinates; the full per-group sweep lives
    // in the acceptance suite.
    let (model, loss) = micro(true);
    let sl = SpectralLoss::new(8000, &loss).unwrap();
    let (m, t) = batch(2, 800, 4);
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model, BnMode::Train, true);
    let out = model.forward(&mut tape, &mut b, &m, &t, &loss, &sl, Quantization::Live).unwrap();
    let q0 = out.quantized.clone();
    let grads = tape.backward(out.total);
    let eval = |mm: &CodecModel<f64>| {
        let mut tape = Tape::new();
        let mut b = Bound::new(&mut tape, mm, BnMode::Train, false);
        let o = mm.forward(&mut tape, &mut b, &m, &t, &loss, &sl, Quantization::Frozen(&q0)).unwrap();
        tape.scalar(o.total)
    };
    // PReLU kinks make wider steps unreliable.
    let h = 1e-7;
    for (pi, var) in [(0usize, b.vars[0]), (model.layout.out_weight, b.vars[model.layout.out_weight])] {
        let g = grads.get(var);
        for j in [0, g.len() / 2, g.len() - 1] {
            let mut plus = model.clone();
            plus.params.get_mut(pi).value[j] += h;
            let mut minus = model.clone();
            minus.params.get_mut(pi).value[j] -= h;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let rel = (num - g[j]).abs() / num.abs().max(g[j].abs()).max(1e-8);
            assert!(rel < 1e-3, "param {pi}[{j}]: numeric {num} analytic {}", g[j]);
        }
    }
}

#[test]
fn bn_running_update_moves_toward_batch() {
    let (mut model, loss) = micro(true);
    let sl = SpectralLoss::new(8000, &loss).unwrap();
    let (m, t) = batch(2, 800, 4);
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model, BnMode::Train, true);
    model.forward(&mut tape, &mut b, &m, &t, &loss, &sl, Quantization::Live).unwrap();
    let stats = b.take_stats();
    let before = model.bn[0].clone();
    model.update_bn(&stats);
    let n = stats[0].count as f64;
    for c in 0..before.mean.len() {
        assert!((model.bn[0].mean[c] - 0.1 * stats[0].mean[c]).abs() < 1e-12);
        let want = 0.9 + 0.1 * stats[0].var[c] * n / (n - 1.0);
        assert!((model.bn[0].var[c] - want).abs() < 1e-12);
    }
}
