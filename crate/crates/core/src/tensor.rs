//! Reverse-mode autodiff over `ndarray` matrices.
//!
//! Every differentiable value in the crate is a node in a [`Graph`]: a dense
//! `f64` matrix plus the op that produced it. Graphs are built per training
//! phase, run backward once, and dropped. All tensors are two-dimensional;
//! vectors are `[1, n]` rows and scalars are `[1, 1]`.
//!
//! Gradients are retained only for leaves created with `requires_grad =
//! true`. Nodes are appended in topological order, so the backward sweep is a
//! single reverse pass over the arena. Everything here is deterministic:
//! same inputs, same node order, same bits.

use ndarray::{s, Array2};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Elementwise sum of two same-shape matrices.
    Add(Var, Var),
    /// `[m, n] + [1, n]` row broadcast.
    AddBias(Var, Var),
    Sub(Var, Var),
    /// Elementwise product of two same-shape matrices.
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    /// Row-wise concatenation.
    VStack(Var, Var),
    /// Column slice `[start, end)`.
    SliceCols(Var, usize, usize),
    SumAll(Var),
    MeanAll(Var),
    /// Row gather from an embedding table; backward scatter-adds.
    GatherRows(Var, Vec<usize>),
    /// `sum_i mask[i] * cross_entropy(softmax(logits[i]), targets[i])`.
    SoftmaxCeSum {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<f64>,
    },
    /// Mean over all entries of the stable binary cross entropy with logits.
    BceWithLogitsMean { logits: Var, targets: Array2<f64> },
    /// Multi-positive contrastive loss over a pairwise score matrix.
    ///
    /// Anchors are rows `0..pos_sets.len()`. In the literal form the loss per
    /// anchor is `-(1/|P|) * log(sum_{j in P} e^{s_ij} / sum_{k != i} e^{s_ik})`;
    /// the `supcon` form averages the per-positive log-ratios instead.
    ContrastiveScores {
        scores: Var,
        pos_sets: Vec<Vec<usize>>,
        supcon: bool,
    },
    /// Rows scaled to unit L2 norm (zero rows stay zero).
    NormalizeRows(Var),
    /// WGAN-GP penalty `mean_r (|∇_z critic(z_r)| - 1)^2` for the two-layer
    /// leaky-ReLU critic, with the piecewise-constant activation derivative
    /// treated as locally constant (so `b1` receives a zero gradient).
    GradientPenalty {
        w1: Var,
        b1: Var,
        w2: Var,
        slope: f64,
        z_hat: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Arena of computation nodes for one forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], nodes: &[Node], var: Var, delta: Array2<f64>) {
    if !nodes[var.0].requires_grad {
        return;
    }
    match &mut grads[var.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never accumulates a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[[0, 0]]
    }

    /// Gradient accumulated at a leaf by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Add(a, b))
    }

    /// `[m, n] + [1, n]` with the bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.value(bias).nrows(), 1, "add_bias: bias must be [1, n]");
        assert_eq!(self.value(a).ncols(), self.value(bias).ncols(), "add_bias: width mismatch");
        let value = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, rg, Op::AddBias(a, bias))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub: shape mismatch");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul: shape mismatch");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        let rg = self.rg(a);
        self.push(value, rg, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).ncols(),
            self.value(b).nrows(),
            "matmul: inner dimension mismatch"
        );
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        let rg = self.rg(a);
        self.push(value, rg, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, rg, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, rg, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(value, rg, Op::LeakyRelu(a, slope))
    }

    pub fn vstack(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).ncols(), self.value(b).ncols(), "vstack: width mismatch");
        let value = ndarray::concatenate(
            ndarray::Axis(0),
            &[self.nodes[a.0].value.view(), self.nodes[b.0].value.view()],
        )
        .expect("vstack");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::VStack(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(end <= self.value(a).ncols() && start < end, "slice_cols: bad range");
        let value = self.nodes[a.0].value.slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(value, rg, Op::SliceCols(a, start, end))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        let rg = self.rg(a);
        self.push(value, rg, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let val = &self.nodes[a.0].value;
        let value = Array2::from_elem((1, 1), val.sum() / val.len() as f64);
        let rg = self.rg(a);
        self.push(value, rg, Op::MeanAll(a))
    }

    /// Gather `ids` as rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tab = &self.nodes[table.0].value;
        let mut value = Array2::zeros((ids.len(), tab.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).assign(&tab.row(id));
        }
        let rg = self.rg(table);
        self.push(value, rg, Op::GatherRows(table, ids.to_vec()))
    }

    /// Masked sum of per-row softmax cross entropies: `sum_i mask[i] * ce_i`.
    pub fn softmax_ce_sum(&mut self, logits: Var, targets: &[usize], mask: &[f64]) -> Var {
        let l = &self.nodes[logits.0].value;
        assert_eq!(l.nrows(), targets.len(), "softmax_ce_sum: target count");
        assert_eq!(l.nrows(), mask.len(), "softmax_ce_sum: mask count");
        let mut total = 0.0;
        for (i, row) in l.rows().into_iter().enumerate() {
            if mask[i] == 0.0 {
                continue;
            }
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += mask[i] * (lse - row[targets[i]]);
        }
        let rg = self.rg(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            rg,
            Op::SoftmaxCeSum {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        )
    }

    /// Mean binary cross entropy with logits, computed in log-sigmoid form.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: Array2<f64>) -> Var {
        let l = &self.nodes[logits.0].value;
        assert_eq!(l.dim(), targets.dim(), "bce_with_logits_mean: shape mismatch");
        let mut total = 0.0;
        for (&x, &y) in l.iter().zip(targets.iter()) {
            total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        }
        let value = Array2::from_elem((1, 1), total / l.len() as f64);
        let rg = self.rg(logits);
        self.push(value, rg, Op::BceWithLogitsMean { logits, targets })
    }

    /// Contrastive loss over pairwise scores; anchors are rows
    /// `0..pos_sets.len()` and every positive index must differ from its
    /// anchor. Positive sets may contain repeats (with-replacement mining).
    pub fn contrastive_from_scores(&mut self, scores: Var, pos_sets: &[Vec<usize>], supcon: bool) -> Var {
        let sc = &self.nodes[scores.0].value;
        let n = sc.nrows();
        assert_eq!(n, sc.ncols(), "contrastive: scores must be square");
        assert!(pos_sets.len() <= n, "contrastive: more anchors than rows");
        let mut total = 0.0;
        for (i, pos) in pos_sets.iter().enumerate() {
            assert!(!pos.is_empty(), "contrastive: empty positive set");
            let row = sc.row(i);
            let all_max = (0..n)
                .filter(|&k| k != i)
                .fold(f64::NEG_INFINITY, |a, k| a.max(row[k]));
            let all_lse = all_max
                + (0..n)
                    .filter(|&k| k != i)
                    .map(|k| (row[k] - all_max).exp())
                    .sum::<f64>()
                    .ln();
            let inv_p = 1.0 / pos.len() as f64;
            if supcon {
                for &j in pos {
                    assert_ne!(j, i, "contrastive: anchor listed as its own positive");
                    total += -inv_p * (row[j] - all_lse);
                }
            } else {
                let pos_max = pos.iter().fold(f64::NEG_INFINITY, |a, &j| a.max(row[j]));
                let pos_lse = pos_max
                    + pos.iter().map(|&j| (row[j] - pos_max).exp()).sum::<f64>().ln();
                total += -inv_p * (pos_lse - all_lse);
            }
        }
        let value = Array2::from_elem((1, 1), total / pos_sets.len() as f64);
        let rg = self.rg(scores);
        self.push(
            value,
            rg,
            Op::ContrastiveScores {
                scores,
                pos_sets: pos_sets.to_vec(),
                supcon,
            },
        )
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let mut value = v.clone();
        for mut row in value.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|x| x / norm);
            }
        }
        let rg = self.rg(a);
        self.push(value, rg, Op::NormalizeRows(a))
    }

    /// Gradient penalty of the two-layer critic `w2^T lrelu(z W1 + b1) + b2`
    /// evaluated at the interpolates `z_hat`. The output bias never enters.
    pub fn gradient_penalty(&mut self, w1: Var, b1: Var, w2: Var, slope: f64, z_hat: Array2<f64>) -> Var {
        let (value, _, _) = gp_forward(
            &self.nodes[w1.0].value,
            &self.nodes[b1.0].value,
            &self.nodes[w2.0].value,
            slope,
            &z_hat,
        );
        let rg = self.rg(w1) || self.rg(b1) || self.rg(w2);
        self.push(
            Array2::from_elem((1, 1), value),
            rg,
            Op::GradientPenalty { w1, b1, w2, slope, z_hat },
        )
    }

    /// Backpropagate from a scalar node, accumulating gradients at leaves.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).dim(), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Array2::ones((1, 1)));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            match &nodes[id].op {
                Op::Leaf => {
                    // retained below
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, nodes, *a, g.clone());
                    accumulate(&mut grads, nodes, *b, g.clone());
                }
                Op::AddBias(a, bias) => {
                    let gb = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                    accumulate(&mut grads, nodes, *a, g.clone());
                    accumulate(&mut grads, nodes, *bias, gb);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, nodes, *a, g.clone());
                    accumulate(&mut grads, nodes, *b, -&g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &nodes[b.0].value;
                    let gb = &g * &nodes[a.0].value;
                    accumulate(&mut grads, nodes, *a, ga);
                    accumulate(&mut grads, nodes, *b, gb);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, nodes, *a, &g * *c);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&nodes[b.0].value.t());
                    let gb = nodes[a.0].value.t().dot(&g);
                    accumulate(&mut grads, nodes, *a, ga);
                    accumulate(&mut grads, nodes, *b, gb);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, nodes, *a, g.t().to_owned());
                }
                Op::Sigmoid(a) => {
                    let y = &nodes[id].value;
                    let ga = &g * &(y * &(1.0 - y));
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &nodes[id].value;
                    let ga = &g * &(1.0 - y * y);
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &nodes[a.0].value;
                    let ga = ndarray::Zip::from(&g).and(x).map_collect(|&gi, &xi| {
                        if xi > 0.0 {
                            gi
                        } else {
                            gi * slope
                        }
                    });
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::VStack(a, b) => {
                    let ra = nodes[a.0].value.nrows();
                    let ga = g.slice(s![..ra, ..]).to_owned();
                    let gb = g.slice(s![ra.., ..]).to_owned();
                    accumulate(&mut grads, nodes, *a, ga);
                    accumulate(&mut grads, nodes, *b, gb);
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(nodes[a.0].value.dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(nodes[a.0].value.dim(), g[[0, 0]]);
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::MeanAll(a) => {
                    let len = nodes[a.0].value.len() as f64;
                    let ga = Array2::from_elem(nodes[a.0].value.dim(), g[[0, 0]] / len);
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::GatherRows(table, ids) => {
                    let mut gt = Array2::zeros(nodes[table.0].value.dim());
                    for (r, &id_) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id_);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, nodes, *table, gt);
                }
                Op::SoftmaxCeSum { logits, targets, mask } => {
                    let u = g[[0, 0]];
                    let l = &nodes[logits.0].value;
                    let mut gl = Array2::zeros(l.dim());
                    for (i, row) in l.rows().into_iter().enumerate() {
                        if mask[i] == 0.0 {
                            continue;
                        }
                        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                        for (j, &x) in row.iter().enumerate() {
                            let p = (x - max).exp() / denom;
                            let delta = if j == targets[i] { 1.0 } else { 0.0 };
                            gl[[i, j]] = u * mask[i] * (p - delta);
                        }
                    }
                    accumulate(&mut grads, nodes, *logits, gl);
                }
                Op::BceWithLogitsMean { logits, targets } => {
                    let u = g[[0, 0]] / nodes[logits.0].value.len() as f64;
                    let l = &nodes[logits.0].value;
                    let gl = ndarray::Zip::from(l)
                        .and(targets)
                        .map_collect(|&x, &y| u * (sigmoid(x) - y));
                    accumulate(&mut grads, nodes, *logits, gl);
                }
                Op::ContrastiveScores { scores, pos_sets, supcon } => {
                    let u = g[[0, 0]] / pos_sets.len() as f64;
                    let sc = &nodes[scores.0].value;
                    let n = sc.nrows();
                    let mut gs = Array2::zeros(sc.dim());
                    for (i, pos) in pos_sets.iter().enumerate() {
                        let row = sc.row(i);
                        let all_max = (0..n)
                            .filter(|&k| k != i)
                            .fold(f64::NEG_INFINITY, |a, k| a.max(row[k]));
                        let denom: f64 = (0..n)
                            .filter(|&k| k != i)
                            .map(|k| (row[k] - all_max).exp())
                            .sum();
                        let inv_p = 1.0 / pos.len() as f64;
                        // Pull toward the full-batch softmax for every non-anchor column.
                        for k in 0..n {
                            if k == i {
                                continue;
                            }
                            let p_all = (row[k] - all_max).exp() / denom;
                            gs[[i, k]] += u * p_all;
                        }
                        if *supcon {
                            for &j in pos {
                                gs[[i, j]] -= u * inv_p;
                            }
                        } else {
                            let pos_max = pos.iter().fold(f64::NEG_INFINITY, |a, &j| a.max(row[j]));
                            let pos_denom: f64 =
                                pos.iter().map(|&j| (row[j] - pos_max).exp()).sum();
                            for &j in pos {
                                let p_pos = (row[j] - pos_max).exp() / pos_denom;
                                gs[[i, j]] -= u * p_pos;
                            }
                        }
                    }
                    accumulate(&mut grads, nodes, *scores, gs);
                }
                Op::NormalizeRows(a) => {
                    let x = &nodes[a.0].value;
                    let y = &nodes[id].value;
                    let mut ga = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let norm = x.row(i).dot(&x.row(i)).sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let dot = g.row(i).dot(&y.row(i));
                        for j in 0..x.ncols() {
                            ga[[i, j]] = (g[[i, j]] - dot * y[[i, j]]) / norm;
                        }
                    }
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::GradientPenalty { w1, b1, w2, slope, z_hat } => {
                    let u = g[[0, 0]];
                    let (_, q, m) = gp_forward(
                        &nodes[w1.0].value,
                        &nodes[b1.0].value,
                        &nodes[w2.0].value,
                        *slope,
                        z_hat,
                    );
                    // v = m ⊙ w2ᵀ rows; grads: dW1 = Qᵀ V, dw2 = sum_r m_r ⊙ (Q W1)_r.
                    let w2_row = nodes[w2.0].value.t().to_owned(); // [1, h]
                    let v = &m * &w2_row;
                    let gw1 = q.t().dot(&v) * u;
                    let qw1 = q.dot(&nodes[w1.0].value); // [B, h]
                    let gw2_row = (&m * &qw1).sum_axis(ndarray::Axis(0)) * u;
                    let gw2 = gw2_row.insert_axis(ndarray::Axis(1));
                    let gb1 = Array2::zeros(nodes[b1.0].value.dim());
                    accumulate(&mut grads, nodes, *w1, gw1);
                    accumulate(&mut grads, nodes, *b1, gb1);
                    accumulate(&mut grads, nodes, *w2, gw2);
                }
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                self.nodes[id].grad = Some(g);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared forward of the gradient penalty. Returns the penalty value, the
/// per-row outer derivative `q_r = (2/B)(|g_r|-1) g_r/|g_r|` and the
/// activation-derivative mask `m`.
fn gp_forward(
    w1: &Array2<f64>,
    b1: &Array2<f64>,
    w2: &Array2<f64>,
    slope: f64,
    z_hat: &Array2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let batch = z_hat.nrows();
    let u = z_hat.dot(w1) + b1;
    let m = u.mapv(|x| if x > 0.0 { 1.0 } else { slope });
    let w2_row = w2.t().to_owned(); // [1, h]
    let v = &m * &w2_row; // [B, h]
    let grad_z = v.dot(&w1.t()); // [B, d]
    let mut value = 0.0;
    let mut q = Array2::zeros(grad_z.dim());
    for r in 0..batch {
        let norm = grad_z.row(r).dot(&grad_z.row(r)).sqrt();
        value += (norm - 1.0) * (norm - 1.0);
        if norm > 0.0 {
            let coef = 2.0 / batch as f64 * (norm - 1.0) / norm;
            for j in 0..grad_z.ncols() {
                q[[r, j]] = coef * grad_z[[r, j]];
            }
        }
    }
    (value / batch as f64, q, m)
}


#[cfg(test)]
mod tests {
    use super::fdcheck::assert_grads_match;
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_forward_and_backward() {
        let mut g = Graph::new();
        let a = g.leaf(array![[1.0, 2.0], [3.0, 4.0]], true);
        let b = g.leaf(array![[1.0], [1.0]], true);
        let c = g.matmul(a, b);
        assert_eq!(g.value(c), &array![[3.0], [7.0]]);
        let s = g.sum_all(c);
        g.backward(s);
        assert_eq!(g.grad(a).unwrap(), &array![[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(g.grad(b).unwrap(), &array![[4.0], [6.0]]);
    }

    #[test]
    fn no_grad_leaves_stay_clean() {
        let mut g = Graph::new();
        let a = g.leaf(array![[2.0]], true);
        let c = g.constant(array![[3.0]]);
        let p = g.mul(a, c);
        g.backward(p);
        assert_eq!(g.grad(a).unwrap(), &array![[3.0]]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = vec![randn(&mut rng, 3, 4), randn(&mut rng, 4, 2), randn(&mut rng, 1, 2)];
        assert_grads_match(
            |ps| {
                let mut g = Graph::new();
                let x = g.leaf(ps[0].clone(), true);
                let w = g.leaf(ps[1].clone(), true);
                let b = g.leaf(ps[2].clone(), true);
                let xw = g.matmul(x, w);
                let pre = g.add_bias(xw, b);
                let t = g.tanh(pre);
                let sg = g.sigmoid(pre);
                let m = g.mul(t, sg);
                let lr = g.leaky_relu(m, 0.2);
                let loss = g.mean_all(lr);
                g.backward(loss);
                (g.scalar(loss), vec![
                    g.grad(x).cloned(),
                    g.grad(w).cloned(),
                    g.grad(b).cloned(),
                ])
            },
            &params,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn slice_vstack_transpose_roundtrip_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = vec![randn(&mut rng, 2, 6), randn(&mut rng, 3, 6)];
        assert_grads_match(
            |ps| {
                let mut g = Graph::new();
                let a = g.leaf(ps[0].clone(), true);
                let b = g.leaf(ps[1].clone(), true);
                let st = g.vstack(a, b);
                let left = g.slice_cols(st, 0, 3);
                let right = g.slice_cols(st, 3, 6);
                let rt = g.transpose(right);
                let prod = g.matmul(left, rt);
                let loss = g.sum_all(prod);
                g.backward(loss);
                (g.scalar(loss), vec![g.grad(a).cloned(), g.grad(b).cloned()])
            },
            &params,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn gather_rows_scatter_adds() {
        let mut g = Graph::new();
        let table = g.leaf(array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]], true);
        let rows = g.gather_rows(table, &[2, 0, 2]);
        assert_eq!(g.value(rows).nrows(), 3);
        let s = g.sum_all(rows);
        g.backward(s);
        // Row 2 was gathered twice.
        assert_eq!(g.grad(table).unwrap(), &array![[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]]);
    }

    #[test]
    fn softmax_ce_uniform_logits_give_ln_v() {
        let mut g = Graph::new();
        let logits = g.leaf(Array2::zeros((2, 7)), true);
        let loss = g.softmax_ce_sum(logits, &[3, 5], &[1.0, 1.0]);
        let expected = 2.0 * (7.0_f64).ln();
        assert!((g.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn normalize_rows_unit_norm_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![randn(&mut rng, 4, 3)];
        assert_grads_match(
            |ps| {
                let mut g = Graph::new();
                let x = g.leaf(ps[0].clone(), true);
                let y = g.normalize_rows(x);
                for i in 0..4 {
                    let n: f64 = g.value(y).row(i).dot(&g.value(y).row(i));
                    assert!((n - 1.0).abs() < 1e-9);
                }
                let w = g.constant(randn(&mut ChaCha8Rng::seed_from_u64(5), 4, 3));
                let m = g.mul(y, w);
                let loss = g.sum_all(m);
                g.backward(loss);
                (g.scalar(loss), vec![g.grad(x).cloned()])
            },
            &params,
            1e-6,
            1e-5,
        );
    }
}
