//! Minimal reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Values live in the
//! tape and are addressed by [`Var`] handles; [`Tape::backward`] walks the
//! recording in reverse and returns the accumulated [`Grads`]. Operations are
//! coarse (a whole convolution, a whole LSTM direction) and carry hand-written
//! backward kernels, so the tape stays short even for long sequences.

mod attention;
mod conv;
mod elementwise;
mod linalg;
mod norm;
mod params;
mod rnn;
mod spectral;

pub use conv::ConvGeometry;
pub use linalg::{matmul, MatLayout};
pub use attention::AttnMask;
pub use norm::BatchStats;
pub use params::{Param, ParamSet};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type usable on the tape.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + rustfft::FftNum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    /// Tag written into checkpoints.
    const DTYPE: DType;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with arbitrary element strides.
    ///
    /// # Safety
    /// Every strided access implied by the dimensions must stay inside the
    /// allocations behind the pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

/// Element type of a stored array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[inline]
pub(crate) fn cast<F: Real>(v: f64) -> F {
    F::of_f64(v)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<F> = Box<dyn Fn(&Values<'_, F>, &[F], &mut GradAcc<F>)>;

struct Node<F> {
    value: Vec<F>,
    shape: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<F>>,
}

/// Read-only view of recorded values handed to backward kernels.
pub struct Values<'a, F>(&'a [Node<F>]);

impl<'a, F: Real> Values<'a, F> {
    pub fn get(&self, v: Var) -> &'a [F] {
        &self.0[v.0].value
    }

    pub fn shape(&self, v: Var) -> &'a [usize] {
        &self.0[v.0].shape
    }
}

/// Gradient accumulator used during the reverse sweep.
pub struct GradAcc<F> {
    grads: Vec<Option<Vec<F>>>,
    requires: Vec<bool>,
    lens: Vec<usize>,
}

impl<F: Real> GradAcc<F> {
    /// Mutable gradient buffer for `v`, zero-initialized on first touch.
    /// `None` when `v` does not participate in differentiation.
    pub fn slot(&mut self, v: Var) -> Option<&mut [F]> {
        if !self.requires[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn add(&mut self, v: Var, g: &[F]) {
        if let Some(slot) = self.slot(v) {
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<F> {
    grads: Vec<Option<Vec<F>>>,
    lens: Vec<usize>,
}

impl<F: Real> Grads<F> {
    /// Gradient of the loss with respect to `v` (zeros if it was unreachable).
    pub fn get(&self, v: Var) -> Vec<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![F::zero(); self.lens[v.0]],
        }
    }

    pub fn take(&mut self, v: Var) -> Vec<F> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![F::zero(); self.lens[v.0]])
    }
}

/// Recording of one differentiable computation.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every variable recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Trainable input. Its gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Vec<F>, shape: &[usize]) -> Var {
        self.push_raw(value, shape.to_vec(), true, None)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Vec<F>, shape: &[usize]) -> Var {
        self.push_raw(value, shape.to_vec(), false, None)
    }

    /// Stop-gradient: same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).to_vec();
        let shape = self.shape(v).to_vec();
        self.push_raw(value, shape, false, None)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a single-element variable.
    pub fn scalar(&self, v: Var) -> F {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar() on a non-scalar variable");
        value[0]
    }

    fn push_raw(
        &mut self,
        value: Vec<F>,
        shape: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<F>>,
    ) -> Var {
        debug_assert_eq!(
            value.len(),
            shape.iter().product::<usize>(),
            "value length does not match shape {shape:?}"
        );
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of an operation over `inputs`.
    pub(crate) fn push_op(
        &mut self,
        value: Vec<F>,
        shape: Vec<usize>,
        inputs: &[Var],
        backward: impl Fn(&Values<'_, F>, &[F], &mut GradAcc<F>) + 'static,
    ) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, shape, requires, Some(Box::new(backward)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads<F> {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar loss");
        let n = self.nodes.len();
        let mut acc = GradAcc {
            grads: (0..n).map(|_| None).collect(),
            requires: self.nodes.iter().map(|n| n.requires_grad).collect(),
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
        };
        if let Some(slot) = acc.slot(loss) {
            slot[0] = F::one();
        }
        let values = Values(&self.nodes);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad_out) = acc.grads[idx].take() else {
                continue;
            };
            backward(&values, &grad_out, &mut acc);
            acc.grads[idx] = Some(grad_out);
        }
        Grads {
            grads: acc.grads,
            lens: acc.lens,
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Central-difference check of `f` around `x0` against the tape gradient.
    /// Returns the maximum relative error over all coordinates; coordinates
    /// with tiny gradients are measured against a floor tied to the largest.
    pub fn check_grad(
        x0: &[f64],
        shape: &[usize],
        build: impl Fn(&mut Tape<f64>, Var) -> Var,
    ) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.to_vec(), shape);
        let loss = build(&mut tape, x);
        let analytic = tape.backward(loss).get(x);
        let h = 1e-6;
        let floor = 1e-4 * analytic.iter().fold(1e-2f64, |m, g| m.max(g.abs()));
        let mut worst: f64 = 0.0;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xs = x0.to_vec();
                xs[i] += delta;
                let mut t = Tape::new();
                let x = t.leaf(xs, shape);
                let l = build(&mut t, x);
                t.scalar(l)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = numeric.abs().max(analytic[i].abs()).max(floor);
            worst = worst.max((numeric - analytic[i]).abs() / denom);
        }
        worst
    }

    pub fn seeded(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}
