use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{ArrayData, Checkpoint};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tensor::ParamSet;

pub(crate) fn save_rng(ck: &mut Checkpoint, rng: &ChaCha8Rng) {
    let seed = rng.get_seed();
    let mut v: Vec<u64> = seed.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let wp = rng.get_word_pos();
    v.push(rng.get_stream());
    v.push(wp as u64);
    v.push((wp >> 64) as u64);
    ck.push("rng", &[v.len()], ArrayData::U64(v));
}

pub(crate) fn load_rng(ck: &Checkpoint) -> Result<ChaCha8Rng> {
    let v = ck.u64("rng")?;
    if v.len() != 7 {
        return Err(Error::Checkpoint("rng state must hold 7 words".into()));
    }
    let mut seed = [0u8; 32];
    for (i, w) in v[..4].iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(v[4]);
    rng.set_word_pos(v[5] as u128 | ((v[6] as u128) << 64));
    Ok(rng)
}

pub(crate) fn save_params(ck: &mut Checkpoint, prefix: &str, params: &ParamSet<f32>) {
    for p in params.iter() {
        ck.push(format!("{prefix}/{}", p.name), &p.shape, ArrayData::F32(p.value.clone()));
    }
}

pub(crate) fn load_params(ck: &Checkpoint, prefix: &str, params: &mut ParamSet<f32>) -> Result<()> {
    for p in params.iter_mut() {
        let name = format!("{prefix}/{}", p.name);
        let a = ck.get(&name)?;
        if a.shape != p.shape {
            return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {:?}", a.shape, p.shape)));
        }
        let n = p.value.len();
        p.value.copy_from_slice(ck.f32(&name, n)?);
    }
    Ok(())
}

/// Adam moments are stored under `adam.m/<name>` and `adam.v/<name>`.
pub(crate) fn save_adam(ck: &mut Checkpoint, opt: &Adam<f32>, names: &[String]) {
    ck.push("adam.step", &[1], ArrayData::U64(vec![opt.step]));
    for (i, n) in names.iter().enumerate() {
        ck.push(format!("adam.m/{n}"), &[opt.m[i].len()], ArrayData::F32(opt.m[i].clone()));
        ck.push(format!("adam.v/{n}"), &[opt.v[i].len()], ArrayData::F32(opt.v[i].clone()));
    }
}

pub(crate) fn load_adam(ck: &Checkpoint, opt: &mut Adam<f32>, names: &[String]) -> Result<()> {
    opt.step = *ck.u64("adam.step")?.first().ok_or_else(|| Error::Checkpoint("empty adam.step".into()))?;
    for (i, n) in names.iter().enumerate() {
        let len = opt.m[i].len();
        opt.m[i].copy_from_slice(ck.f32(&format!("adam.m/{n}"), len)?);
        opt.v[i].copy_from_slice(ck.f32(&format!("adam.v/{n}"), len)?);
    }
    Ok(())
}

pub(crate) fn counters(ck: &Checkpoint, name: &str, n: usize) -> Result<Vec<u64>> {
    let v = ck.u64(name)?;
    if v.len() != n {
        return Err(Error::Checkpoint(format!("`{name}` must hold {n} values")));
    }
    Ok(v.to_vec())
}
