//! Parameter storage, initialization, and the recurrent building blocks
//! shared by the encoder and both decoders.

use crate::autodiff::{Scalar, Tape, Var};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Identifier of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named trainable tensors. The store owns the master copy of every
/// parameter; forward passes lease values onto a [`Tape`].
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<ArrayD<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Lease a parameter onto the tape as a gradient-tracked leaf.
    pub fn leaf(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        tape.param_leaf(id.0, self.values[id.0].clone())
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Uniform Glorot initialization over `[-√(6/(fan_in+fan_out)), +…]`.
pub fn glorot<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> ArrayD<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        T::from_f64(rng.gen_range(-bound..bound))
    })
}

/// Uniform init in `[-bound, bound]`.
pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> ArrayD<T> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        T::from_f64(rng.gen_range(-bound..bound))
    })
}

pub fn zeros<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

/// A dense layer `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, &[d_in, d_out], d_in, d_out));
        let b = store.add(format!("{name}.b"), zeros(&[d_out]));
        Linear { w, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = store.leaf(tape, self.w);
        let b = store.leaf(tape, self.b);
        let y = tape.linear(x, w);
        tape.add_bias(y, b)
    }
}

/// Parameters of a single LSTM direction: input and recurrent projections
/// of the four gates stored as `[d_in × 4H]` and `[H × 4H]` blocks in
/// i, f, g, o order.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        hidden: usize,
    ) -> Self {
        let w_x = store.add(
            format!("{name}.w_x"),
            glorot(rng, &[d_in, 4 * hidden], d_in, hidden),
        );
        let w_h = store.add(
            format!("{name}.w_h"),
            glorot(rng, &[hidden, 4 * hidden], hidden, hidden),
        );
        // forget-gate bias starts at 1
        let mut b = zeros::<T>(&[4 * hidden]);
        for i in hidden..2 * hidden {
            b[i] = T::one();
        }
        let bias = store.add(format!("{name}.b"), b);
        LstmCell {
            w_x,
            w_h,
            bias,
            hidden,
        }
    }

    /// One step: `x_proj_t` is the precomputed `x_t·W_x + b` slice `[B×4H]`.
    /// Returns `(h, c)`.
    fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        w_h: Var,
        x_proj_t: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> (Var, Var) {
        let h = self.hidden;
        let rec = tape.linear(h_prev, w_h);
        let pre = tape.add(x_proj_t, rec);
        let i = tape.narrow_last(pre, 0, h);
        let f = tape.narrow_last(pre, h, h);
        let g = tape.narrow_last(pre, 2 * h, h);
        let o = tape.narrow_last(pre, 3 * h, h);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh_act(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c_prev);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh_act(c);
        let h_out = tape.mul(o, tc);
        (h_out, c)
    }
}

/// Direction of a recurrent pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Run one LSTM direction over a padded batch with mask gating: at padded
/// steps the hidden and cell states carry over unchanged, so padding never
/// leaks into the states seen by real positions. Returns `[B×n×H]`.
pub fn lstm_direction<T: Scalar>(
    cell: &LstmCell,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    mask: &Array2<bool>,
    dir: Direction,
) -> Var {
    let (bsz, n) = (mask.shape()[0], mask.shape()[1]);
    debug_assert_eq!(tape.value(x).shape()[0], bsz);
    debug_assert_eq!(tape.value(x).shape()[1], n);
    let w_x = store.leaf(tape, cell.w_x);
    let w_h = store.leaf(tape, cell.w_h);
    let b = store.leaf(tape, cell.bias);
    let xp = tape.linear(x, w_x);
    let x_proj = tape.add_bias(xp, b); // [B×n×4H]

    let mut h = tape.zeros(&[bsz, cell.hidden]);
    let mut c = tape.zeros(&[bsz, cell.hidden]);
    let mut outputs: Vec<Var> = vec![h; n];
    let steps: Vec<usize> = match dir {
        Direction::Forward => (0..n).collect(),
        Direction::Backward => (0..n).rev().collect(),
    };
    for t in steps {
        let xp_t = tape.index_axis1(x_proj, t);
        let (h_new, c_new) = cell.step(tape, w_h, xp_t, h, c);
        // gate by the step mask: padded rows keep the previous state
        let m = step_mask::<T>(mask, t);
        let dh = tape.sub(h_new, h);
        let dh = tape.mul_const(dh, m.clone());
        h = tape.add(h, dh);
        let dc = tape.sub(c_new, c);
        let dc = tape.mul_const(dc, m);
        c = tape.add(c, dc);
        outputs[t] = h;
    }
    tape.stack_axis1(&outputs)
}

fn step_mask<T: Scalar>(mask: &Array2<bool>, t: usize) -> ArrayD<T> {
    let bsz = mask.shape()[0];
    let mut m = ArrayD::zeros(IxDyn(&[bsz, 1]));
    for b in 0..bsz {
        if mask[(b, t)] {
            m[[b, 0]] = T::one();
        }
    }
    m
}

/// Bidirectional LSTM: concatenated forward and backward passes, `[B×n×2H]`.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fw: LstmCell,
    pub bw: LstmCell,
}

impl BiLstm {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        hidden: usize,
    ) -> Self {
        BiLstm {
            fw: LstmCell::init(store, rng, &format!("{name}.fw"), d_in, hidden),
            bw: LstmCell::init(store, rng, &format!("{name}.bw"), d_in, hidden),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &Array2<bool>,
    ) -> Var {
        let f = lstm_direction(&self.fw, tape, store, x, mask, Direction::Forward);
        let b = lstm_direction(&self.bw, tape, store, x, mask, Direction::Backward);
        tape.concat_last(f, b)
    }

    pub fn output_width(&self) -> usize {
        self.fw.hidden + self.bw.hidden
    }
}

/// Inverted-dropout mask scaled by `1/(1-rate)`; multiply node values by
/// this during training only.
pub fn dropout_mask<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    rate: f64,
) -> ArrayD<T> {
    let keep = 1.0 - rate;
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        if rng.gen_range(0.0..1.0) < keep {
            T::from_f64(1.0 / keep)
        } else {
            T::zero()
        }
    })
}

/// Central finite-difference verification of analytic gradients.
///
/// Runs in `f64`; used by the test suites to validate every backward pass
/// against `(L(θ+h) − L(θ−h)) / 2h`.
pub mod gradcheck {
    use super::ParamStore;
    use ndarray::ArrayD;

    /// Worst relative error over all checked parameter elements.
    #[derive(Debug, Clone, Copy)]
    pub struct GradReport {
        pub max_rel_err: f64,
        pub checked: usize,
    }

    /// Compare `analytic` (indexed by param id) against central differences
    /// of `loss`. Elements where both gradients are below `1e-10` are
    /// counted as exact. `loss` must be a pure function of the store.
    pub fn compare(
        store: &mut ParamStore<f64>,
        mut loss: impl FnMut(&ParamStore<f64>) -> f64,
        analytic: &[Option<ArrayD<f64>>],
        step: f64,
    ) -> GradReport {
        let mut max_rel_err: f64 = 0.0;
        let mut checked = 0usize;
        for pid in 0..store.len() {
            let n = store.values[pid].len();
            for i in 0..n {
                let orig = store.values[pid].as_slice().unwrap()[i];
                store.values[pid].as_slice_mut().unwrap()[i] = orig + step;
                let up = loss(store);
                store.values[pid].as_slice_mut().unwrap()[i] = orig - step;
                let down = loss(store);
                store.values[pid].as_slice_mut().unwrap()[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic[pid]
                    .as_ref()
                    .map(|g| g.as_slice().unwrap()[i])
                    .unwrap_or(0.0);
                checked += 1;
                if a.abs() < 1e-10 && numeric.abs() < 1e-10 {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if rel > max_rel_err {
                    max_rel_err = rel;
                }
            }
        }
        GradReport {
            max_rel_err,
            checked,
        }
    }
}
