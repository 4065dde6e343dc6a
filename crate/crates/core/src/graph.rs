//! Multi-head graph attention kernel shared by the local slot graph and
//! the global intent-slot graph.
//!
//! Attention logits use a LeakyReLU over `aᵀ[W·h_i ‖ W·h_j]`, normalized
//! by a softmax restricted to each node's neighborhood (self-loops
//! included); the per-head nonlinearity is an ELU. Batches of graphs with
//! different sizes run as masked dense attention: padding nodes carry an
//! empty neighborhood and produce all-zero features.

use crate::autodiff::{Scalar, Tape, Var};
use crate::nn::{glorot, uniform, ParamId, ParamStore};
use ndarray::{Array2, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {0} has an empty neighborhood")]
    EmptyNeighborhood(usize),
    #[error("adjacency is not square: {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("layer {layer} expects input width {expected}, got {got}")]
    DimMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
}

/// Boolean neighborhood structure for one graph. Row `i` marks the
/// neighbors of node `i`; every node is its own neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    dense: Array2<bool>,
}

impl Adjacency {
    /// Build from a dense boolean matrix; self-loops are enforced.
    pub fn new(mut dense: Array2<bool>) -> Result<Self, GraphError> {
        let (rows, cols) = (dense.shape()[0], dense.shape()[1]);
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            dense[(i, i)] = true;
        }
        Ok(Adjacency { dense })
    }

    /// Graph with only self-loops.
    pub fn identity(n: usize) -> Self {
        let mut dense = Array2::from_elem((n, n), false);
        for i in 0..n {
            dense[(i, i)] = true;
        }
        Adjacency { dense }
    }

    pub fn len(&self) -> usize {
        self.dense.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.dense[(i, j)]
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        self.dense[(i, j)] = true;
        self.dense[(j, i)] = true;
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = self.dense.row(i);
        (0..self.len()).filter(move |&j| row[j])
    }

    pub fn dense(&self) -> &Array2<bool> {
        &self.dense
    }

    /// Count undirected edges excluding self-loops.
    pub fn undirected_edge_count(&self) -> usize {
        let n = self.len();
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.dense[(i, j)] {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn self_loop_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.dense[(i, i)]).count()
    }
}

/// Pack per-example adjacencies into a `[B×N×N]` mask. Padding nodes get
/// an all-false row, which the masked softmax turns into zero output.
pub fn batch_adjacency(graphs: &[&Adjacency], n_max: usize) -> ArrayD<bool> {
    let bsz = graphs.len();
    let mut mask = ArrayD::from_elem(IxDyn(&[bsz, n_max, n_max]), false);
    for (b, g) in graphs.iter().enumerate() {
        let n = g.len();
        debug_assert!(n <= n_max);
        for i in 0..n {
            for j in 0..n {
                if g.contains(i, j) {
                    mask[[b, i, j]] = true;
                }
            }
        }
    }
    mask
}

/// One multi-head GAT layer: per-head projection `w[k]: [F×F']` and
/// attention vector `a[k]: [2F']`.
#[derive(Debug, Clone)]
pub struct GatLayerParams {
    pub w: Vec<ParamId>,
    pub a: Vec<ParamId>,
    pub f_in: usize,
    pub f_out: usize,
    pub leaky_slope: f64,
}

impl GatLayerParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        f_in: usize,
        f_out: usize,
        heads: usize,
        leaky_slope: f64,
    ) -> Self {
        assert!(heads >= 1, "GAT layer needs at least one head");
        let mut w = Vec::with_capacity(heads);
        let mut a = Vec::with_capacity(heads);
        for k in 0..heads {
            w.push(store.add(
                format!("{name}.h{k}.w"),
                glorot(rng, &[f_in, f_out], f_in, f_out),
            ));
            let bound = (6.0 / (2 * f_out + 1) as f64).sqrt();
            a.push(store.add(format!("{name}.h{k}.a"), uniform(rng, &[2 * f_out], bound)));
        }
        GatLayerParams {
            w,
            a,
            f_in,
            f_out,
            leaky_slope,
        }
    }

    pub fn heads(&self) -> usize {
        self.w.len()
    }

    pub fn output_width(&self, concat_heads: bool) -> usize {
        if concat_heads {
            self.f_out * self.heads()
        } else {
            self.f_out
        }
    }
}

/// One GAT layer over a batch of graphs.
///
/// `features: [B×N×F]`, `adj: [B×N×N]` boolean neighbor mask. With
/// `concat_heads` the per-head ELU outputs are concatenated (width
/// `K·F'`), otherwise they are averaged (width `F'`).
pub fn gat_layer<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    features: Var,
    adj: &ArrayD<bool>,
    params: &GatLayerParams,
    concat_heads: bool,
) -> Var {
    let shape = tape.value(features).shape().to_vec();
    assert_eq!(shape.len(), 3, "gat_layer expects [B×N×F] features");
    assert_eq!(adj.shape(), &[shape[0], shape[1], shape[1]]);
    assert_eq!(shape[2], params.f_in, "feature width mismatch");
    let (bsz, n) = (shape[0], shape[1]);
    let fp = params.f_out;
    let slope = T::from_f64(params.leaky_slope);

    let mut head_outputs = Vec::with_capacity(params.heads());
    for k in 0..params.heads() {
        let w = store.leaf(tape, params.w[k]);
        let a = store.leaf(tape, params.a[k]);
        let proj = tape.linear(features, w); // [B×N×F']
        let a_src = tape.narrow_last(a, 0, fp);
        let a_dst = tape.narrow_last(a, fp, fp);
        let a_src = tape.reshape(a_src, &[fp, 1]);
        let a_dst = tape.reshape(a_dst, &[fp, 1]);
        let e_src = tape.linear(proj, a_src); // [B×N×1]
        let e_dst = tape.linear(proj, a_dst); // [B×N×1]
        let logits = tape.outer_add(e_src, e_dst); // [B×N×N]
        let logits = tape.leaky_relu(logits, slope);
        let alpha = tape.row_softmax_masked(logits, adj);
        let mixed = tape.bmm(alpha, proj); // [B×N×F']
        head_outputs.push(tape.elu(mixed));
    }

    let _ = (bsz, n);
    if concat_heads {
        let mut out = head_outputs[0];
        for &h in &head_outputs[1..] {
            out = tape.concat_last(out, h);
        }
        out
    } else {
        let mut out = head_outputs[0];
        for &h in &head_outputs[1..] {
            out = tape.add(out, h);
        }
        tape.scale(out, T::from_f64(1.0 / params.heads() as f64))
    }
}

/// Single-graph convenience wrapper: `features: [N×F]` plus an
/// [`Adjacency`]; used by tests and per-example processing.
pub fn gat_layer_single<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    features: Var,
    adj: &Adjacency,
    params: &GatLayerParams,
    concat_heads: bool,
) -> Result<Var, GraphError> {
    for i in 0..adj.len() {
        if adj.neighbors(i).next().is_none() {
            return Err(GraphError::EmptyNeighborhood(i));
        }
    }
    let shape = tape.value(features).shape().to_vec();
    assert_eq!(shape.len(), 2);
    let feats3 = tape.reshape(features, &[1, shape[0], shape[1]]);
    let mask = batch_adjacency(&[adj], adj.len());
    let out = gat_layer(tape, store, feats3, &mask, params, concat_heads);
    let out_w = params.output_width(concat_heads);
    Ok(tape.reshape(out, &[shape[0], out_w]))
}

/// A stack of GAT layers: inner layers concatenate heads, the final layer
/// averages them, so the stack maps width `f_in` to `f_out`.
#[derive(Debug, Clone)]
pub struct GatStack {
    pub layers: Vec<GatLayerParams>,
}

impl GatStack {
    /// `f_out` must be divisible by `heads` when `n_layers > 1` so the
    /// concatenated inner width stays `f_out`.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        f_in: usize,
        f_out: usize,
        n_layers: usize,
        heads: usize,
        leaky_slope: f64,
    ) -> Self {
        assert!(n_layers >= 1);
        if n_layers > 1 {
            assert!(
                f_out % heads == 0,
                "hidden width {f_out} not divisible by {heads} heads"
            );
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut width = f_in;
        for l in 0..n_layers {
            let last = l + 1 == n_layers;
            let per_head = if last { f_out } else { f_out / heads };
            layers.push(GatLayerParams::init(
                store,
                rng,
                &format!("{name}.l{l}"),
                width,
                per_head,
                heads,
                leaky_slope,
            ));
            width = if last { f_out } else { f_out };
        }
        GatStack { layers }
    }

    /// Sequential application over a batch of graphs.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: Var,
        adj: &ArrayD<bool>,
    ) -> Var {
        let mut h = features;
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let concat = l + 1 != n_layers;
            h = gat_layer(tape, store, h, adj, layer, concat);
        }
        h
    }
}

/// Apply a pre-built layer sequence to one graph, validating that widths
/// chain correctly.
pub fn stack_gat<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    features: Var,
    adj: &Adjacency,
    layers: &[GatLayerParams],
) -> Result<Var, GraphError> {
    let mut h = features;
    let n_layers = layers.len();
    for (l, layer) in layers.iter().enumerate() {
        let got = *tape.value(h).shape().last().unwrap();
        if got != layer.f_in {
            return Err(GraphError::DimMismatch {
                layer: l,
                expected: layer.f_in,
                got,
            });
        }
        let concat = l + 1 != n_layers;
        h = gat_layer_single(tape, store, h, adj, layer, concat)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use ndarray::Array2 as A2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Double-loop reference implementation of one GAT layer on one graph.
    fn gat_oracle(
        feats: &A2<f64>,
        adj: &Adjacency,
        w: &[A2<f64>],
        a: &[Vec<f64>],
        slope: f64,
        concat: bool,
    ) -> A2<f64> {
        let n = feats.shape()[0];
        let heads = w.len();
        let fp = w[0].shape()[1];
        let elu = |x: f64| if x > 0.0 { x } else { x.exp() - 1.0 };
        let lrelu = |x: f64| if x > 0.0 { x } else { slope * x };
        let width = if concat { heads * fp } else { fp };
        let mut out = A2::<f64>::zeros((n, width));
        for k in 0..heads {
            // projections
            let mut proj = A2::<f64>::zeros((n, fp));
            for i in 0..n {
                for c in 0..fp {
                    let mut s = 0.0;
                    for f in 0..feats.shape()[1] {
                        s += feats[(i, f)] * w[k][(f, c)];
                    }
                    proj[(i, c)] = s;
                }
            }
            for i in 0..n {
                let neigh: Vec<usize> = adj.neighbors(i).collect();
                // attention logits over the neighborhood
                let mut logits = Vec::with_capacity(neigh.len());
                for &j in &neigh {
                    let mut s = 0.0;
                    for c in 0..fp {
                        s += a[k][c] * proj[(i, c)];
                        s += a[k][fp + c] * proj[(j, c)];
                    }
                    logits.push(lrelu(s));
                }
                let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|&l| (l - maxv).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..fp {
                    let mut s = 0.0;
                    for (ni, &j) in neigh.iter().enumerate() {
                        s += exps[ni] / z * proj[(j, c)];
                    }
                    let v = elu(s);
                    if concat {
                        out[(i, k * fp + c)] = v;
                    } else {
                        out[(i, c)] += v / heads as f64;
                    }
                }
            }
        }
        out
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Adjacency {
        let mut adj = Adjacency::identity(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.5) {
                    adj.add_edge(i, j);
                }
            }
        }
        adj
    }

    fn layer_values(
        store: &ParamStore<f64>,
        params: &GatLayerParams,
    ) -> (Vec<A2<f64>>, Vec<Vec<f64>>) {
        let w: Vec<A2<f64>> = params
            .w
            .iter()
            .map(|&id| {
                store
                    .value(id)
                    .clone()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
            })
            .collect();
        let a: Vec<Vec<f64>> = params
            .a
            .iter()
            .map(|&id| store.value(id).iter().cloned().collect())
            .collect();
        (w, a)
    }

    #[test]
    fn single_node_self_loop_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::init(&mut store, &mut rng, "g", 3, 2, 2, 0.2);
        let mut tape = Tape::new();
        let feats = tape.constant(
            A2::from_shape_vec((1, 3), vec![0.3, -0.4, 0.9])
                .unwrap()
                .into_dyn(),
        );
        let adj = Adjacency::identity(1);
        let out = gat_layer_single(&mut tape, &mut store, feats, &adj, &params, true)
            .map(|v| tape.value(v).clone())
            .unwrap();
        // α₁₁ = 1 ⇒ output is ELU(W·h) per head
        let (w, _) = layer_values(&store, &params);
        let elu = |x: f64| if x > 0.0 { x } else { x.exp() - 1.0 };
        for k in 0..2 {
            for c in 0..2 {
                let mut s = 0.0;
                for f in 0..3 {
                    s += [0.3, -0.4, 0.9][f] * w[k][(f, c)];
                }
                assert!((out[[0, k * 2 + c]] - elu(s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_neighbors_get_equal_attention() {
        // node 0 linked to nodes 1 and 2 which carry the same feature
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::init(&mut store, &mut rng, "g", 2, 3, 1, 0.2);
        let feats =
            A2::from_shape_vec((3, 2), vec![0.5, -1.0, 0.7, 0.2, 0.7, 0.2]).unwrap();
        let mut adj = Adjacency::identity(3);
        adj.add_edge(0, 1);
        adj.add_edge(0, 2);

        // with identical neighbor features the aggregation must equal the
        // oracle where both neighbors share one weight
        let (w, a) = layer_values(&store, &params);
        let want = gat_oracle(&feats, &adj, &w, &a, 0.2, false);
        let mut tape = Tape::new();
        let f = tape.constant(feats.into_dyn());
        let got = gat_layer_single(&mut tape, &mut store, f, &adj, &params, false).unwrap();
        let got = tape.value(got);
        for i in 0..3 {
            for c in 0..3 {
                assert!((got[[i, c]] - want[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_loop_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..25 {
            let n = rng.gen_range(1..=6);
            let f_in = rng.gen_range(1..=5);
            let fp = rng.gen_range(1..=4);
            let heads = rng.gen_range(1..=3);
            let concat = rng.gen_bool(0.5);
            let mut store = ParamStore::<f64>::new();
            let params =
                GatLayerParams::init(&mut store, &mut rng, "g", f_in, fp, heads, 0.2);
            let adj = random_graph(&mut rng, n);
            let feats = A2::from_shape_fn((n, f_in), |_| rng.gen_range(-1.0..1.0));
            let (w, a) = layer_values(&store, &params);
            let want = gat_oracle(&feats, &adj, &w, &a, 0.2, concat);
            let mut tape = Tape::new();
            let f = tape.constant(feats.into_dyn());
            let got =
                gat_layer_single(&mut tape, &mut store, f, &adj, &params, concat).unwrap();
            let got = tape.value(got);
            for i in 0..n {
                for c in 0..want.shape()[1] {
                    assert!(
                        (got[[i, c]] - want[(i, c)]).abs() < 1e-9,
                        "trial {trial}: mismatch at node {i} col {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn stack_of_one_equals_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::<f64>::new();
        let stack = GatStack::init(&mut store, &mut rng, "s", 4, 6, 1, 2, 0.2);
        let adj = random_graph(&mut rng, 4);
        let feats = A2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));

        let mut t1 = Tape::new();
        let f1 = t1.constant(feats.clone().into_dyn());
        let a = stack_gat(&mut t1, &store, f1, &adj, &stack.layers).unwrap();

        let mut t2 = Tape::new();
        let f2 = t2.constant(feats.into_dyn());
        let b = gat_layer_single(&mut t2, &store, f2, &adj, &stack.layers[0], false).unwrap();

        assert_eq!(t1.value(a), t2.value(b));
    }

    #[test]
    fn two_layer_stack_equals_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::<f64>::new();
        let stack = GatStack::init(&mut store, &mut rng, "s", 4, 6, 2, 2, 0.2);
        let adj = random_graph(&mut rng, 5);
        let feats = A2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));

        let mut t1 = Tape::new();
        let f1 = t1.constant(feats.clone().into_dyn());
        let a = stack_gat(&mut t1, &store, f1, &adj, &stack.layers).unwrap();

        let mut t2 = Tape::new();
        let f2 = t2.constant(feats.into_dyn());
        let mid = gat_layer_single(&mut t2, &store, f2, &adj, &stack.layers[0], true).unwrap();
        let b = gat_layer_single(&mut t2, &store, mid, &adj, &stack.layers[1], false).unwrap();

        assert_eq!(t1.value(a), t2.value(b));
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::init(&mut store, &mut rng, "g", 4, 2, 1, 0.2);
        let adj = Adjacency::identity(3);
        let mut tape = Tape::new();
        let feats = tape.constant(A2::<f64>::zeros((3, 5)).into_dyn());
        let got = stack_gat(&mut tape, &store, feats, &adj, &[params]);
        assert!(matches!(got, Err(GraphError::DimMismatch { .. })));
    }

    #[test]
    fn changing_a_non_neighbor_leaves_output_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::init(&mut store, &mut rng, "g", 3, 3, 2, 0.2);
        // path graph 0-1-2-3: node 0 does not neighbor node 3
        let mut adj = Adjacency::identity(4);
        adj.add_edge(0, 1);
        adj.add_edge(1, 2);
        adj.add_edge(2, 3);
        let feats = A2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let mut moved = feats.clone();
        moved[(3, 0)] += 5.0;
        moved[(3, 2)] -= 2.0;

        let run = |f: &A2<f64>, store: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let fv = tape.constant(f.clone().into_dyn());
            let out = gat_layer_single(&mut tape, store, fv, &adj, &params, true).unwrap();
            tape.value(out).clone()
        };
        let a = run(&feats, &store);
        let b = run(&moved, &store);
        for c in 0..a.shape()[1] {
            assert_eq!(a[[0, c]], b[[0, c]], "node 0 must not see node 3");
        }
        assert_ne!(a, b, "node 3 itself must change");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::init(&mut store, &mut rng, "g", 3, 2, 2, 0.2);
        let feats_id = store.add("feats", crate::nn::uniform(&mut rng, &[4, 3], 1.0));
        let mut adj = Adjacency::identity(4);
        adj.add_edge(0, 1);
        adj.add_edge(1, 2);
        adj.add_edge(0, 3);
        let weight = crate::nn::uniform::<f64>(&mut rng, &[4, 4], 1.0);

        let build = |tape: &mut Tape<f64>, store: &ParamStore<f64>| {
            let f = store.leaf(tape, feats_id);
            let out = gat_layer_single(tape, store, f, &adj, &params, true).unwrap();
            let weighted = tape.mul_const(out, weight.clone());
            tape.sum_all(weighted)
        };
        let n = store.len();
        let mut tape = Tape::new();
        let root = build(&mut tape, &store);
        let analytic = tape.backward(root, n);
        let report = gradcheck::compare(
            &mut store,
            |s| {
                let mut t = Tape::new();
                let r = build(&mut t, s);
                t.scalar(r)
            },
            &analytic,
            1e-5,
        );
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn batched_equals_per_example_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::init(&mut store, &mut rng, "g", 3, 2, 2, 0.2);
        let g1 = random_graph(&mut rng, 5);
        let g2 = random_graph(&mut rng, 3);
        let f1 = A2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let f2 = A2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));

        let mut batch = ArrayD::<f64>::zeros(IxDyn(&[2, 5, 3]));
        for i in 0..5 {
            for c in 0..3 {
                batch[[0, i, c]] = f1[(i, c)];
            }
        }
        for i in 0..3 {
            for c in 0..3 {
                batch[[1, i, c]] = f2[(i, c)];
            }
        }
        // junk in the padded node features must not leak
        for i in 3..5 {
            for c in 0..3 {
                batch[[1, i, c]] = 7.0;
            }
        }
        let mask = batch_adjacency(&[&g1, &g2], 5);
        let mut tb = Tape::new();
        let fb = tb.constant(batch);
        let ob = gat_layer(&mut tb, &store, fb, &mask, &params, true);
        let got = tb.value(ob).clone();

        for (ex, g, f, n) in [(0usize, &g1, &f1, 5usize), (1, &g2, &f2, 3)] {
            let mut ts = Tape::new();
            let fs = ts.constant(f.clone().into_dyn());
            let os = gat_layer_single(&mut ts, &store, fs, g, &params, true).unwrap();
            let want = ts.value(os);
            for i in 0..n {
                for c in 0..4 {
                    assert!(
                        (got[[ex, i, c]] - want[[i, c]]).abs() < 1e-12,
                        "ex {ex} node {i}"
                    );
                }
            }
        }
        // padded nodes come out all-zero
        for i in 3..5 {
            for c in 0..4 {
                assert_eq!(got[[1, i, c]], 0.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn attention_rows_form_a_simplex(seed in 0u64..1000) {
            // verified through the output: recompute α by the oracle path
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=5);
            let mut store = ParamStore::<f64>::new();
            let params = GatLayerParams::init(&mut store, &mut rng, "g", 2, 2, 2, 0.2);
            let adj = random_graph(&mut rng, n);
            let feats = A2::from_shape_fn((n, 2), |_| rng.gen_range(-2.0..2.0));
            let (w, a) = layer_values(&store, &params);
            // α from the oracle construction must sum to one per node/head
            let fp = 2;
            for k in 0..2 {
                let mut proj = A2::<f64>::zeros((n, fp));
                for i in 0..n {
                    for c in 0..fp {
                        let mut s = 0.0;
                        for f in 0..2 {
                            s += feats[(i, f)] * w[k][(f, c)];
                        }
                        proj[(i, c)] = s;
                    }
                }
                for i in 0..n {
                    let neigh: Vec<usize> = adj.neighbors(i).collect();
                    prop_assert!(!neigh.is_empty());
                    let mut logits = Vec::new();
                    for &j in &neigh {
                        let mut s = 0.0;
                        for c in 0..fp {
                            s += a[k][c] * proj[(i, c)] + a[k][fp + c] * proj[(j, c)];
                        }
                        logits.push(if s > 0.0 { s } else { 0.2 * s });
                    }
                    let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|&l| (l - maxv).exp()).sum();
                    let total: f64 = logits.iter().map(|&l| (l - maxv).exp() / z).sum();
                    prop_assert!((total - 1.0).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn permutation_equivariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..=5);
            let mut store = ParamStore::<f64>::new();
            let params = GatLayerParams::init(&mut store, &mut rng, "g", 3, 2, 2, 0.2);
            let adj = random_graph(&mut rng, n);
            let feats = A2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));

            // build a permutation
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);

            let mut pf = A2::<f64>::zeros((n, 3));
            let mut pd = Array2::from_elem((n, n), false);
            for i in 0..n {
                for c in 0..3 {
                    pf[(i, c)] = feats[(perm[i], c)];
                }
                for j in 0..n {
                    pd[(i, j)] = adj.contains(perm[i], perm[j]);
                }
            }
            let padj = Adjacency::new(pd).unwrap();

            let run = |f: &A2<f64>, g: &Adjacency| {
                let mut tape = Tape::new();
                let fv = tape.constant(f.clone().into_dyn());
                let out = gat_layer_single(&mut tape, &store, fv, g, &params, true).unwrap();
                tape.value(out).clone()
            };
            let base = run(&feats, &adj);
            let permuted = run(&pf, &padj);
            for i in 0..n {
                for c in 0..base.shape()[1] {
                    prop_assert!((permuted[[i, c]] - base[[perm[i], c]]).abs() < 1e-10);
                }
            }
        }
    }
}
