//! Reverse-mode automatic differentiation over `ndarray` arrays.
//!
//! A [`Tape`] records each forward operation together with a backward
//! closure; [`Tape::backward`] walks the recording in reverse and
//! accumulates gradients for every node. Everything is generic over
//! [`Scalar`] so the same model code runs in `f32` for speed and in `f64`
//! for finite-difference gradient checks.
//!
//! The op set is deliberately small: linear maps over the last axis,
//! batched matrix products, element-wise nonlinearities, a masked row
//! softmax, gathers, concatenation/slicing along the last axis, and the
//! reductions needed by the losses. Forward values are computed eagerly.

use ndarray::{ArrayD, Axis, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::Float;
use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type the tape can differentiate through.
pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type Grads<T> = Vec<Option<ArrayD<T>>>;

/// Backward closure: receives the output gradient, the forward values of
/// all nodes, and the gradient accumulator.
type Backward<T> = Box<dyn Fn(&ArrayD<T>, &[ArrayD<T>], &mut Grads<T>)>;

/// Recording of a forward computation.
pub struct Tape<T: Scalar> {
    values: Vec<ArrayD<T>>,
    backwards: Vec<Option<Backward<T>>>,
    /// (param id, node) pairs for leaves bound to a parameter store.
    bindings: Vec<(usize, usize)>,
}

fn accumulate<T: Scalar>(grads: &mut Grads<T>, idx: usize, g: ArrayD<T>) {
    match &mut grads[idx] {
        Some(acc) => *acc += &g,
        None => grads[idx] = Some(g),
    }
}

/// Flatten all leading axes so the array is `[rows × last]`.
fn as_matrix<T: Scalar>(a: &ArrayD<T>) -> ndarray::ArrayView2<'_, T> {
    let last = *a.shape().last().expect("as_matrix: scalar input");
    let rows = a.len() / last.max(1);
    a.view()
        .into_shape_with_order((rows, last))
        .expect("as_matrix: non-contiguous input")
}

fn matmul2<T: Scalar>(
    a: ndarray::ArrayView2<'_, T>,
    b: ndarray::ArrayView2<'_, T>,
) -> ndarray::Array2<T> {
    a.dot(&b)
}

/// Reshape into a dyn array, normalizing layout first: `dot` with a
/// transposed operand can hand back column-major output.
fn into_dyn_shape<T: Scalar>(a: ndarray::Array2<T>, shape: &[usize]) -> ArrayD<T> {
    let a = if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    };
    a.into_shape_with_order(IxDyn(shape)).unwrap()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backwards: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.values[v.0]
    }

    fn push(&mut self, value: ArrayD<T>, backward: Option<Backward<T>>) -> Var {
        // keep every node in standard layout so flattening views are cheap
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.values.push(value);
        self.backwards.push(backward);
        Var(self.values.len() - 1)
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, None)
    }

    /// Leaf bound to parameter `pid`; its gradient is collected by
    /// [`Tape::backward`] under that id.
    pub fn param_leaf(&mut self, pid: usize, value: ArrayD<T>) -> Var {
        let v = self.push(value, None);
        self.bindings.push((pid, v.0));
        v
    }

    /// Cut the gradient flow: same value, no backward edge.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.values[a.0].clone();
        self.push(value, None)
    }

    /// Zeros of the given shape (constant).
    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(ArrayD::zeros(IxDyn(shape)))
    }

    // ---- linear algebra ----

    /// `a · w` applied over the last axis: `a: [.. × C]`, `w: [C × P]`.
    pub fn linear(&mut self, a: Var, w: Var) -> Var {
        let (ai, wi) = (a.0, w.0);
        let av = &self.values[ai];
        let wv = &self.values[wi];
        let w2 = as_matrix(wv);
        debug_assert_eq!(av.shape().last(), Some(&w2.shape()[0]));
        let out2 = matmul2(as_matrix(av), w2);
        let mut out_shape: Vec<usize> = av.shape().to_vec();
        *out_shape.last_mut().unwrap() = w2.shape()[1];
        let out = into_dyn_shape(out2, &out_shape);
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let g2 = as_matrix(g);
                let a2 = as_matrix(&vals[ai]);
                let w2 = as_matrix(&vals[wi]);
                let da = into_dyn_shape(matmul2(g2, w2.t()), vals[ai].shape());
                let dw = into_dyn_shape(matmul2(a2.t(), g2), vals[wi].shape());
                accumulate(grads, ai, da);
                accumulate(grads, wi, dw);
            })),
        )
    }

    /// Batched matrix product `a · b`: `a: [B×N×M]`, `b: [B×M×P]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        self.bmm_impl(a, b, false)
    }

    /// Batched product with the second operand transposed:
    /// `a: [B×N×D]`, `b: [B×M×D]` → `[B×N×M]`.
    pub fn bmm_bt(&mut self, a: Var, b: Var) -> Var {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Var {
        let (ai, bi) = (a.0, b.0);
        let av = &self.values[ai];
        let bv = &self.values[bi];
        assert_eq!(av.ndim(), 3, "bmm: lhs must be 3-d");
        assert_eq!(bv.ndim(), 3, "bmm: rhs must be 3-d");
        let (bsz, n) = (av.shape()[0], av.shape()[1]);
        let p = if b_transposed {
            bv.shape()[1]
        } else {
            bv.shape()[2]
        };
        let mut out = ArrayD::zeros(IxDyn(&[bsz, n, p]));
        for ex in 0..bsz {
            let a2 = av
                .index_axis(Axis(0), ex)
              .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let b2 = bv
                .index_axis(Axis(0), ex)
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let r = if b_transposed {
                a2.dot(&b2.t())
            } else {
                a2.dot(&b2)
            };
            out.index_axis_mut(Axis(0), ex).assign(&r);
        }
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let (av, bv) = (&vals[ai], &vals[bi]);
                let bsz = av.shape()[0];
                let mut da = ArrayD::zeros(IxDyn(av.shape()));
                let mut db = ArrayD::zeros(IxDyn(bv.shape()));
                for ex in 0..bsz {
                    let g2 = g
                        .index_axis(Axis(0), ex)
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap();
                    let a2 = av
                        .index_axis(Axis(0), ex)
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap();
                    let b2 = bv
                        .index_axis(Axis(0), ex)
                        .into_dimensionality::<ndarray::Ix2>()
                        .unwrap();
                    if b_transposed {
                        // out = a·bᵀ  ⇒  da = g·b, db = gᵀ·a
                        da.index_axis_mut(Axis(0), ex).assign(&g2.dot(&b2));
                        db.index_axis_mut(Axis(0), ex).assign(&g2.t().dot(&a2));
                    } else {
                        da.index_axis_mut(Axis(0), ex).assign(&g2.dot(&b2.t()));
                        db.index_axis_mut(Axis(0), ex).assign(&a2.t().dot(&g2));
                    }
                }
                accumulate(grads, ai, da);
                accumulate(grads, bi, db);
            })),
        )
    }

    // ---- element-wise arithmetic ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        assert_eq!(self.values[ai].shape(), self.values[bi].shape());
        let out = &self.values[ai] + &self.values[bi];
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, ai, g.clone());
                accumulate(grads, bi, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        assert_eq!(self.values[ai].shape(), self.values[bi].shape());
        let out = &self.values[ai] - &self.values[bi];
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, ai, g.clone());
                accumulate(grads, bi, -g.clone());
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        assert_eq!(self.values[ai].shape(), self.values[bi].shape());
        let out = &self.values[ai] * &self.values[bi];
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                accumulate(grads, ai, g * &vals[bi]);
                accumulate(grads, bi, g * &vals[ai]);
            })),
        )
    }

    /// Broadcast-add a bias vector over the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (ai, bi) = (a.0, bias.0);
        let bv = &self.values[bi];
        assert_eq!(bv.ndim(), 1, "add_bias: bias must be 1-d");
        let blen = bv.len();
        assert_eq!(self.values[ai].shape().last(), Some(&blen));
        let mut out = self.values[ai].clone();
        let rows = out.len() / blen;
        {
            let b1 = self.values[bi].view().into_shape_with_order(blen).unwrap();
            let mut m = out
                .view_mut()
                .into_shape_with_order((rows, blen))
                .unwrap();
            m += &b1;
        }
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let g2 = as_matrix(g);
                let db = g2.sum_axis(Axis(0)).into_dyn();
                accumulate(grads, ai, g.clone());
                accumulate(grads, bi, db);
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ai = a.0;
        let out = self.values[ai].mapv(|x| x * c);
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, ai, g.mapv(|x| x * c));
            })),
        )
    }

    /// Element-wise multiply by a constant array broadcastable to `a`'s shape.
    pub fn mul_const(&mut self, a: Var, c: ArrayD<T>) -> Var {
        let ai = a.0;
        let cb = c
            .broadcast(IxDyn(self.values[ai].shape()))
            .expect("mul_const: shape not broadcastable")
            .to_owned();
        let out = &self.values[ai] * &cb;
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                accumulate(grads, ai, g * &cb);
            })),
        )
    }

    // ---- nonlinearities ----

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ai = a.0;
        let one = T::one();
        let out = self.values[ai].mapv(|x| one / (one + (-x).exp()));
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let one = T::one();
                let dg = g * &y.mapv(|s| s * (one - s));
                accumulate(grads, ai, dg);
            })),
        )
    }

    pub fn tanh_act(&mut self, a: Var) -> Var {
        let ai = a.0;
        let out = self.values[ai].mapv(|x| x.tanh());
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let one = T::one();
                let dg = g * &y.mapv(|t| one - t * t);
                accumulate(grads, ai, dg);
            })),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let ai = a.0;
        let out = self.values[ai].mapv(|x| if x > T::zero() { x } else { x * slope });
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let mask = vals[ai].mapv(|x| if x > T::zero() { T::one() } else { slope });
                accumulate(grads, ai, g * &mask);
            })),
        )
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let ai = a.0;
        let one = T::one();
        let out = self.values[ai].mapv(|x| if x > T::zero() { x } else { x.exp() - one });
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let one = T::one();
                let mut d = ArrayD::zeros(IxDyn(vals[ai].shape()));
                ndarray::Zip::from(&mut d)
                    .and(&vals[ai])
                    .and(&y)
                    .for_each(|di, &x, &yi| {
                        *di = if x > T::zero() { one } else { yi + one };
                    });
                accumulate(grads, ai, g * &d);
            })),
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let ai = a.0;
        let out = self.values[ai].mapv(|x| x.ln());
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                accumulate(grads, ai, g / &vals[ai]);
            })),
        )
    }

    /// Clamp into `[lo, hi]`; gradient passes through strictly inside the range.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let ai = a.0;
        let out = self.values[ai].mapv(|x| if x < lo { lo } else if x > hi { hi } else { x });
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let mask = vals[ai].mapv(|x| {
                    if x < lo || x > hi {
                        T::zero()
                    } else {
                        T::one()
                    }
                });
                accumulate(grads, ai, g * &mask);
            })),
        )
    }

    // ---- softmax ----

    /// Row softmax over the last axis with boolean masking: masked entries
    /// get zero probability, rows with no unmasked entry come out all-zero.
    ///
    /// Equivalent to adding a large negative constant to masked logits
    /// before a standard softmax, minus the NaN hazard.
    pub fn row_softmax_masked(&mut self, a: Var, mask: &ArrayD<bool>) -> Var {
        let ai = a.0;
        assert_eq!(self.values[ai].shape(), mask.shape());
        let last = *mask.shape().last().unwrap();
        let rows = mask.len() / last;
        let m2 = mask
            .view()
            .into_shape_with_order((rows, last))
            .unwrap()
            .to_owned();
        let x2 = as_matrix(&self.values[ai]);
        let mut out2 = ndarray::Array2::<T>::zeros((rows, last));
        for r in 0..rows {
            let mut maxv = T::neg_infinity();
            for c in 0..last {
                if m2[(r, c)] && x2[(r, c)] > maxv {
                    maxv = x2[(r, c)];
                }
            }
            if maxv == T::neg_infinity() {
                continue; // fully masked row stays zero
            }
            let mut sum = T::zero();
            for c in 0..last {
                if m2[(r, c)] {
                    let e = (x2[(r, c)] - maxv).exp();
                    out2[(r, c)] = e;
                    sum = sum + e;
                }
            }
            for c in 0..last {
                out2[(r, c)] = out2[(r, c)] / sum;
            }
        }
        let shape = self.values[ai].shape().to_vec();
        let out = out2.into_shape_with_order(IxDyn(&shape)).unwrap();
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                // dx = y ⊙ (g − Σ_c g·y) per row; masked entries have y = 0.
                let last = *g.shape().last().unwrap();
                let rows = g.len() / last;
                let g2 = as_matrix(g);
                let y2 = y.view().into_shape_with_order((rows, last)).unwrap();
                let mut dx = ndarray::Array2::<T>::zeros((rows, last));
                for r in 0..rows {
                    let mut dot = T::zero();
                    for c in 0..last {
                        dot = dot + g2[(r, c)] * y2[(r, c)];
                    }
                    for c in 0..last {
                        dx[(r, c)] = y2[(r, c)] * (g2[(r, c)] - dot);
                    }
                }
                let dx = dx.into_shape_with_order(IxDyn(g.shape())).unwrap();
                accumulate(grads, ai, dx);
            })),
        )
    }

    /// Pairwise sums for attention logits: `a, b: [B×N×1]` →
    /// `out[b,i,j] = a[b,i,0] + b[b,j,0]`, shape `[B×N×N]`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        let (av, bv) = (&self.values[ai], &self.values[bi]);
        assert_eq!(av.shape(), bv.shape());
        assert_eq!(av.ndim(), 3);
        assert_eq!(av.shape()[2], 1);
        let (bsz, n) = (av.shape()[0], av.shape()[1]);
        let mut out = ArrayD::zeros(IxDyn(&[bsz, n, n]));
        for ex in 0..bsz {
            for i in 0..n {
                for j in 0..n {
                    out[[ex, i, j]] = av[[ex, i, 0]] + bv[[ex, j, 0]];
                }
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let shape = vals[ai].shape();
                let (bsz, n) = (shape[0], shape[1]);
                let mut da = ArrayD::zeros(IxDyn(shape));
                let mut db = ArrayD::zeros(IxDyn(shape));
                for ex in 0..bsz {
                    for i in 0..n {
                        for j in 0..n {
                            let gv = g[[ex, i, j]];
                            da[[ex, i, 0]] += gv;
                            db[[ex, j, 0]] += gv;
                        }
                    }
                }
                accumulate(grads, ai, da);
                accumulate(grads, bi, db);
            })),
        )
    }

    // ---- shape ops ----

    /// Reshape to a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let ai = a.0;
        let out = self.values[ai]
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible shape");
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let da = g
                    .clone()
                    .into_shape_with_order(IxDyn(vals[ai].shape()))
                    .unwrap();
                accumulate(grads, ai, da);
            })),
        )
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        let (av, bv) = (&self.values[ai], &self.values[bi]);
        assert_eq!(av.ndim(), bv.ndim());
        let axis = Axis(av.ndim() - 1);
        let wa = av.shape()[av.ndim() - 1];
        let out = ndarray::concatenate(axis, &[av.view(), bv.view()]).unwrap();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                let axis = Axis(g.ndim() - 1);
                let da = g.slice_axis(axis, ndarray::Slice::from(0..wa)).to_owned();
                let db = g.slice_axis(axis, ndarray::Slice::from(wa..)).to_owned();
                accumulate(grads, ai, da);
                accumulate(grads, bi, db);
            })),
        )
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn narrow_last(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ai = a.0;
        let av = &self.values[ai];
        let axis = Axis(av.ndim() - 1);
        let out = av
            .slice_axis(axis, ndarray::Slice::from(start..start + len))
            .to_owned();
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let mut da = ArrayD::zeros(IxDyn(vals[ai].shape()));
                let axis = Axis(da.ndim() - 1);
                da.slice_axis_mut(axis, ndarray::Slice::from(start..start + len))
                    .assign(g);
                accumulate(grads, ai, da);
            })),
        )
    }

    /// Select step `t` of axis 1: `[B×S×D] → [B×D]`.
    pub fn index_axis1(&mut self, a: Var, t: usize) -> Var {
        let ai = a.0;
        let out = self.values[ai].index_axis(Axis(1), t).to_owned();
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let mut da = ArrayD::zeros(IxDyn(vals[ai].shape()));
                da.index_axis_mut(Axis(1), t).assign(g);
                accumulate(grads, ai, da);
            })),
        )
    }

    /// Stack per-step `[B×D]` nodes into `[B×S×D]`.
    pub fn stack_axis1(&mut self, steps: &[Var]) -> Var {
        assert!(!steps.is_empty());
        let ids: Vec<usize> = steps.iter().map(|v| v.0).collect();
        let first = &self.values[ids[0]];
        let (bsz, d) = (first.shape()[0], first.shape()[1]);
        let mut out = ArrayD::zeros(IxDyn(&[bsz, ids.len(), d]));
        for (t, &id) in ids.iter().enumerate() {
            out.index_axis_mut(Axis(1), t).assign(&self.values[id]);
        }
        let ids_b = ids.clone();
        self.push(
            out,
            Some(Box::new(move |g, _, grads| {
                for (t, &id) in ids_b.iter().enumerate() {
                    accumulate(grads, id, g.index_axis(Axis(1), t).to_owned());
                }
            })),
        )
    }

    /// Embedding lookup: `table: [V×D]`, `ids: [B×S]` → `[B×S×D]`.
    /// Ids are captured as constants; the gradient scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, ids: &ndarray::Array2<usize>) -> Var {
        let ti = table.0;
        let tv = &self.values[ti];
        assert_eq!(tv.ndim(), 2);
        let d = tv.shape()[1];
        let (bsz, n) = (ids.shape()[0], ids.shape()[1]);
        let mut out = ArrayD::zeros(IxDyn(&[bsz, n, d]));
        for b in 0..bsz {
            for t in 0..n {
                out.index_axis_mut(Axis(0), b)
                    .index_axis_mut(Axis(0), t)
                    .assign(&tv.index_axis(Axis(0), ids[(b, t)]));
            }
        }
        let ids_b = ids.clone();
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let mut dt = ArrayD::zeros(IxDyn(vals[ti].shape()));
                let (bsz, n) = (ids_b.shape()[0], ids_b.shape()[1]);
                for b in 0..bsz {
                    for t in 0..n {
                        let gr = g.index_axis(Axis(0), b);
                        let gr = gr.index_axis(Axis(0), t);
                        let mut row = dt.index_axis_mut(Axis(0), ids_b[(b, t)]);
                        row += &gr;
                    }
                }
                accumulate(grads, ti, dt);
            })),
        )
    }

    /// Gather a 1-d id list into `[m×D]` (used for intent node features).
    pub fn gather_rows1(&mut self, table: Var, ids: &[usize]) -> Var {
        let ti = table.0;
        let tv = &self.values[ti];
        let d = tv.shape()[1];
        let mut out = ArrayD::zeros(IxDyn(&[ids.len(), d]));
        for (r, &id) in ids.iter().enumerate() {
            out.index_axis_mut(Axis(0), r)
                .assign(&tv.index_axis(Axis(0), id));
        }
        let ids_b: Vec<usize> = ids.to_vec();
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let mut dt = ArrayD::zeros(IxDyn(vals[ti].shape()));
                for (r, &id) in ids_b.iter().enumerate() {
                    let mut row = dt.index_axis_mut(Axis(0), id);
                    row += &g.index_axis(Axis(0), r);
                }
                accumulate(grads, ti, dt);
            })),
        )
    }

    // ---- reductions ----

    /// Sum of all elements, producing a 0-d node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let ai = a.0;
        let s = self.values[ai].sum();
        let out = ArrayD::from_elem(IxDyn(&[]), s);
        self.push(
            out,
            Some(Box::new(move |g, vals, grads| {
                let gs = *g.first().unwrap();
                accumulate(grads, ai, ArrayD::from_elem(IxDyn(vals[ai].shape()), gs));
            })),
        )
    }

    /// Scalar value of a 0-d node.
    pub fn scalar(&self, v: Var) -> T {
        *self.values[v.0].first().unwrap()
    }

    // ---- backward ----

    /// Run backpropagation from a 0-d `root` node. Returns the gradient of
    /// every bound parameter, keyed by parameter id (ids not reached get
    /// `None`).
    pub fn backward(&self, root: Var, n_params: usize) -> Vec<Option<ArrayD<T>>> {
        assert_eq!(
            self.values[root.0].ndim(),
            0,
            "backward: root must be a scalar node"
        );
        let mut grads: Grads<T> = (0..self.values.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::from_elem(IxDyn(&[]), T::one()));
        for i in (0..=root.0).rev() {
            let g = grads[i].take();
            if let Some(g) = g {
                if let Some(f) = &self.backwards[i] {
                    f(&g, &self.values, &mut grads);
                }
                grads[i] = Some(g);
            }
        }
        let mut by_param: Vec<Option<ArrayD<T>>> = (0..n_params).map(|_| None).collect();
        for &(pid, node) in &self.bindings {
            if let Some(g) = &grads[node] {
                match &mut by_param[pid] {
                    Some(acc) => *acc += g,
                    None => by_param[pid] = Some(g.clone()),
                }
            }
        }
        by_param
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Convenience: view an `ArrayD` as 2-d.
pub fn view2<T: Scalar>(a: &ArrayD<T>) -> ndarray::ArrayView2<'_, T> {
    a.view().into_dimensionality::<ndarray::Ix2>().unwrap()
}

/// Convenience: view an `ArrayD` as 3-d.
pub fn view3<T: Scalar>(a: &ArrayD<T>) -> ndarray::ArrayView3<'_, T> {
    a.view().into_dimensionality::<ndarray::Ix3>().unwrap()
}
