use super::*;
use crate::optim::AdamConfig;
use crate::tensor::AttnMask;

fn tiny(n_cb: usize, q: usize) -> LmConfig {
    LmConfig {
        n_cb,
        q_depth: q,
        model_dim: 16,
        spatial_layers: 2,
        depth_layers: 2,
        heads: 4,
        max_positions: 16,
        mlp_ratio: 2,
        ..Default::default()
    }
}

fn grid(t: usize, q: usize, n: usize, seed: u64) -> CodeGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CodeGrid::new((0..t * q).map(|_| rng.gen_range(0..n) as u16).collect(), t, q, n).unwrap()
}

#[test]
fn zero_head_gives_uniform_nll() {
    let mut m = LmModel::<f64>::new(tiny(4096, 12), 0).unwrap();
    m.zero_head();
    let nll = m.nll(&grid(3, 12, 4096, 1)).unwrap();
    assert!((nll - 4096f64.ln()).abs() < 1e-4, "{nll}");
}

#[test]
fn single_code_vocabulary_has_zero_nll() {
    let m = LmModel::<f64>::new(tiny(1, 3), 0).unwrap();
    assert_eq!(m.nll(&grid(4, 3, 1, 0)).unwrap(), 0.0);
}

#[test]
fn rejects_bad_grids() {
    let m = LmModel::<f64>::new(tiny(8, 3), 0).unwrap();
    assert!(matches!(m.nll(&grid(4, 2, 8, 0)), Err(Error::Shape(_))));
    let big = CodeGrid::new(vec![8; 3], 1, 3, 16).unwrap();
    assert!(matches!(m.nll(&big), Err(Error::CodeOutOfRange { index: 8, size: 8 })));
    assert!(m.nll(&grid(17, 3, 8, 0)).is_err());
    assert!(LmModel::<f64>::new(LmConfig { model_dim: 10, ..tiny(8, 3) }, 0).is_err());
}

#[test]
fn causal_check_passes_and_catches_a_leaking_mask() {
    let mut m = LmModel::<f64>::new(tiny(8, 3), 2).unwrap();
    let g = grid(6, 3, 8, 3);
    let r = m.causal_consistency_check(&g).unwrap();
    assert_eq!(r.perturbations, 18);
    assert!(r.passed(), "{:?}", r.first_violation());
    m.mask = AttnMask::Full;
    let r = m.causal_consistency_check(&g).unwrap();
    let v = r.first_violation().expect("leak detected");
    assert_eq!((v.perturbed, v.affected), ((0, 0), (0, 0)));
}

#[test]
fn probabilities_follow_the_chain_rule() {
    // Every 4x3 grid over two codes: the joint probabilities must sum to 1.
    let m = LmModel::<f64>::new(tiny(2, 3), 5).unwrap();
    let (t, q) = (4, 3);
    let mut total = 0.0;
    for bits in 0u32..(1 << (t * q)) {
        let codes = (0..t * q).map(|i| ((bits >> i) & 1) as u16).collect();
        let g = CodeGrid::new(codes, t, q, 2).unwrap();
        let logits = m.logits(&g).unwrap();
        let mut logp = 0.0;
        for (row, &c) in logits.iter().zip(g.codes()) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            logp += row[c as usize] - max - z.ln();
        }
        assert!((-logp / (t * q) as f64 - m.nll(&g).unwrap()).abs() < 1e-12);
        total += logp.exp();
    }
    assert!((total - 1.0).abs() < 1e-9, "{total}");
}

#[test]
fn generation_is_reproducible_and_greedy_matches_teacher_forcing() {
    let m = LmModel::<f64>::new(tiny(8, 3), 7).unwrap();
    let a = m.generate(6, 11, 1.0, 4).unwrap();
    assert_eq!(a, m.generate(6, 11, 1.0, 4).unwrap());
    assert_eq!(a.shape(), (6, 3));
    assert!(a.codes().iter().all(|&c| c < 8));
    let g = m.generate(6, 0, 0.0, 0).unwrap();
    let logits = m.logits(&g).unwrap();
    for (row, &c) in logits.iter().zip(g.codes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_code(row, 0.0, 0, &mut rng), c as usize);
    }
    assert!(m.generate(17, 0, 1.0, 0).is_err());
}

#[test]
fn top_k_restricts_sampling() {
    let logits = [0.0f64, 5.0, 4.0, -1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let c = sample_code(&logits, 1.0, 2, &mut rng);
        assert!(c == 1 || c == 2);
    }
    assert_eq!(sample_code(&[1.0f64, 1.0], 0.0, 0, &mut rng), 0);
}

#[test]
fn memorizes_a_small_grid() {
    let cfg = LmConfig {
        model_dim: 32,
        ..tiny(16, 4)
    };
    let mut m = LmModel::<f32>::new(cfg, 1).unwrap();
    let g = grid(8, 4, 16, 9);
    let mut opt = Adam::new(AdamConfig { learning_rate: 3e-3, ..Default::default() }, &m.param_sizes());
    let mut first = None;
    for _ in 0..200 {
        let l = m.train_step(&mut opt, &[&g]).unwrap();
        first.get_or_insert(l);
    }
    let end = m.nll(&g).unwrap();
    assert!(end < 0.1, "start {first:?} end {end}");
}
