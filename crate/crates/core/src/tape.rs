//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records a forward computation as a list of nodes in creation
//! order; [`Tape::backward`] walks it in reverse accumulating vector-Jacobian
//! products. Leaves are either tracked ([`Tape::param`]) or constant
//! ([`Tape::constant`]); gradients never flow into constants or into any
//! node computed purely from constants, which is how parameters are frozen.
//!
//! Everything is a 2-D `f64` array; scalars are `1 x 1`.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x . w^T + b`
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    /// Matrix times a `1 x 1` node.
    MulScalar(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    /// `E x D` rows scaled by an `E x 1` column.
    RowScale(Var, Var),
    Relu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    SliceCols(Var, usize),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanOf(Vec<Var>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Mean(Var),
    CrossEntropy(Var, Arc<[Option<usize>]>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every tracked node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>, tracked: bool) -> Var {
        if tracked {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut y = self.value(x).dot(&self.value(w).t());
        if let Some(b) = b {
            y += self.value(b);
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(y, Op::Linear { x, w, b }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn mul_scalar(&mut self, x: Var, c: Var) -> Var {
        let y = self.value(x) * self.scalar(c);
        self.push(y, Op::MulScalar(x, c), &[x, c])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x) * c;
        self.push(y, Op::Scale(x, c), &[x])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Hadamard(a, b), &[a, b])
    }

    pub fn row_scale(&mut self, x: Var, s: Var) -> Var {
        let y = self.value(x) * self.value(s);
        self.push(y, Op::RowScale(x, s), &[x, s])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| if v > 0.0 { v } else { v.exp_m1() });
        self.push(y, Op::Elu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(y, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(y, Op::SliceCols(x, start), &[x])
    }

    /// Row `i` of the output is row `idx[i]` of `x`.
    pub fn gather(&mut self, x: Var, idx: Arc<[usize]>) -> Var {
        let y = self.value(x).select(Axis(0), &idx);
        self.push(y, Op::Gather(x, idx), &[x])
    }

    /// Output has `rows` rows; row `idx[i]` accumulates row `i` of `x`.
    pub fn scatter_add(&mut self, x: Var, idx: Arc<[usize]>, rows: usize) -> Var {
        let xv = self.value(x);
        let mut y = Array2::zeros((rows, xv.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            let mut dst = y.row_mut(r);
            dst += &xv.row(i);
        }
        self.push(y, Op::ScatterAdd(x, idx), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(y, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(y, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Element-wise average of same-shaped nodes.
    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        let mut y = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            y += self.value(p);
        }
        y /= parts.len() as f64;
        self.push(y, Op::MeanOf(parts.to_vec()), parts)
    }

    /// Softmax of an `E x 1` column within groups sharing the same
    /// `segment[e]`. Every group must be non-empty where used.
    pub fn segment_softmax(&mut self, x: Var, segment: Arc<[usize]>, groups: usize) -> Var {
        let col = self.value(x).column(0).to_vec();
        let y = segment_softmax(&col, &segment, groups);
        let y = Array2::from_shape_vec((y.len(), 1), y).expect("column shape");
        self.push(y, Op::SegmentSoftmax(x, segment), &[x])
    }

    /// Mean over all entries, as `1 x 1`.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(y, Op::Mean(x), &[x])
    }

    /// Mean negative log-softmax of the labelled rows of `logits`.
    /// The caller guarantees at least one labelled row.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[Option<usize>]>) -> Var {
        let lv = self.value(logits);
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, y) in lv.rows().into_iter().zip(labels.iter()) {
            if let Some(y) = *y {
                let lse = log_sum_exp(row.iter().copied());
                total += lse - row[y];
                count += 1;
            }
        }
        let y = Array2::from_elem((1, 1), total / count.max(1) as f64);
        self.push(y, Op::CrossEntropy(logits, labels), &[logits])
    }

    /// Gradients of the scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        let shape = self.value(out).dim();
        assert_eq!(shape, (1, 1), "backward() needs a scalar output");
        self.backward_with_seed(out, Array2::ones((1, 1)))
    }

    /// Vector-Jacobian product: adjoints of every node given `seed` as the
    /// adjoint of `out`.
    pub fn backward_with_seed(&self, out: Var, seed: Array2<f64>) -> Gradients {
        assert_eq!(seed.dim(), self.value(out).dim(), "seed shape");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let tracked = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if tracked(*x) {
                    accumulate(&mut grads[x.0], g.dot(self.value(*w)));
                }
                if tracked(*w) {
                    accumulate(&mut grads[w.0], g.t().dot(self.value(*x)));
                }
                if let Some(b) = b {
                    if tracked(*b) {
                        accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if tracked(*v) {
                        accumulate(&mut grads[v.0], g.clone());
                    }
                }
            }
            Op::MulScalar(x, c) => {
                if tracked(*x) {
                    accumulate(&mut grads[x.0], g * self.scalar(*c));
                }
                if tracked(*c) {
                    let dc = (g * self.value(*x)).sum();
                    accumulate(&mut grads[c.0], Array2::from_elem((1, 1), dc));
                }
            }
            Op::Scale(x, c) => {
                if tracked(*x) {
                    accumulate(&mut grads[x.0], g * *c);
                }
            }
            Op::Hadamard(a, b) => {
                if tracked(*a) {
                    accumulate(&mut grads[a.0], g * self.value(*b));
                }
                if tracked(*b) {
                    accumulate(&mut grads[b.0], g * self.value(*a));
                }
            }
            Op::RowScale(x, s) => {
                if tracked(*x) {
                    accumulate(&mut grads[x.0], g * self.value(*s));
                }
                if tracked(*s) {
                    let ds = (g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads[s.0], ds);
                }
            }
            Op::Relu(x) => {
                if tracked(*x) {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Elu(x) => {
                if tracked(*x) {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d *= v.exp()
                        }
                    });
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::LeakyRelu(x, slope) => {
                if tracked(*x) {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d *= *slope
                        }
                    });
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Sigmoid(x) => {
                if tracked(*x) {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::SliceCols(x, start) => {
                if tracked(*x) {
                    let xv = self.value(*x);
                    let mut d = Array2::zeros(xv.dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Gather(x, idx) => {
                if tracked(*x) {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    for (i, &r) in idx.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(i);
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::ScatterAdd(x, idx) => {
                if tracked(*x) {
                    accumulate(&mut grads[x.0], g.select(Axis(0), idx));
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if tracked(*p) {
                        accumulate(&mut grads[p.0], g.slice(s![.., at..at + w]).to_owned());
                    }
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if tracked(*p) {
                        accumulate(&mut grads[p.0], g.slice(s![at..at + h, ..]).to_owned());
                    }
                    at += h;
                }
            }
            Op::MeanOf(parts) => {
                let share = g / parts.len() as f64;
                for p in parts {
                    if tracked(*p) {
                        accumulate(&mut grads[p.0], share.clone());
                    }
                }
            }
            Op::SegmentSoftmax(x, segment) => {
                if tracked(*x) {
                    let y = &node.value;
                    let groups = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; groups];
                    for (e, &sg) in segment.iter().enumerate() {
                        dot[sg] += y[[e, 0]] * g[[e, 0]];
                    }
                    let d = Array2::from_shape_fn(y.dim(), |(e, _)| {
                        y[[e, 0]] * (g[[e, 0]] - dot[segment[e]])
                    });
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Mean(x) => {
                if tracked(*x) {
                    let xv = self.value(*x);
                    let share = g[[0, 0]] / xv.len() as f64;
                    accumulate(&mut grads[x.0], Array2::from_elem(xv.dim(), share));
                }
            }
            Op::CrossEntropy(logits, labels) => {
                if tracked(*logits) {
                    let lv = self.value(*logits);
                    let count = labels.iter().flatten().count().max(1) as f64;
                    let scale = g[[0, 0]] / count;
                    let mut d = Array2::zeros(lv.dim());
                    for (r, y) in labels.iter().enumerate() {
                        if let Some(y) = *y {
                            let row = lv.row(r);
                            let lse = log_sum_exp(row.iter().copied());
                            for c in 0..lv.ncols() {
                                d[[r, c]] = scale * (row[c] - lse).exp();
                            }
                            d[[r, y]] -= scale;
                        }
                    }
                    accumulate(&mut grads[logits.0], d);
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax within segments, stabilised by the per-segment maximum.
pub fn segment_softmax(x: &[f64], segment: &[usize], groups: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; groups];
    for (&v, &sg) in x.iter().zip(segment) {
        max[sg] = max[sg].max(v);
    }
    let mut y: Vec<f64> = x
        .iter()
        .zip(segment)
        .map(|(&v, &sg)| (v - max[sg]).exp())
        .collect();
    let mut sum = vec![0.0; groups];
    for (&v, &sg) in y.iter().zip(segment) {
        sum[sg] += v;
    }
    for (v, &sg) in y.iter_mut().zip(segment) {
        *v /= sum[sg];
    }
    y
}
