//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Vectors are represented as `1 × d` rows. Parameters live in a
//! [`ParamStore`] and are referenced by the tape without copying.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Σ‖θ‖² over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    /// Stores 1/σ per row; the output holds the normalized values.
    LayerNorm(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    Rows(Var, usize),
    Cols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    SqNorm(Var),
    /// Scalar node with a precomputed gradient with respect to its input.
    Custom(Var, Mat),
    /// −Σ y log max(p, ε); labels stored.
    CrossEntropy(Var, Mat),
}

struct Node {
    op: Op,
    value: Option<Mat>,
}

pub const CE_EPSILON: f64 = 1e-12;

/// Records operations for one forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    clamped: usize,
}

/// Gradients of a scalar output.
pub struct Gradients {
    params: Vec<Option<Mat>>,
    nodes: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params[id.0].as_ref()
    }

    pub fn var(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    /// Dense gradients for every parameter, zeros where untouched.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Mat> {
        self.params
            .into_iter()
            .zip(store.ids())
            .map(|(g, id)| g.unwrap_or_else(|| Mat::zeros(store.get(id).raw_dim())))
            .collect()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            clamped: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// How many cross-entropy terms hit the probability floor.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match (&self.nodes[v.0].op, &self.nodes[v.0].value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(value)) => value,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row"))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulBt(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(Op::MulRow(a, row), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(&self.value(a).view());
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        self.push(Op::LayerNorm(a, inv_std), out)
    }

    /// Selects rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros((ids.len(), t.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(i));
        }
        self.push(Op::Gather(table, ids.to_vec()), out)
    }

    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(Op::Rows(a, start), v)
    }

    pub fn cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::Cols(a, start), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / x.nrows() as f64;
        self.push(Op::MeanRows(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn sq_norm(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        self.push(Op::SqNorm(a), v)
    }

    /// A scalar function of `input` whose value and gradient were computed
    /// outside the tape.
    pub fn custom_scalar(&mut self, input: Var, value: f64, grad: Mat) -> Var {
        assert_eq!(grad.raw_dim(), self.value(input).raw_dim());
        self.push(Op::Custom(input, grad), Mat::from_elem((1, 1), value))
    }

    /// Summed cross-entropy −Σ y log p with p floored at [`CE_EPSILON`].
    pub fn cross_entropy(&mut self, probs: Var, labels: Mat) -> Var {
        let p = self.value(probs);
        assert_eq!(p.raw_dim(), labels.raw_dim());
        let mut loss = 0.0;
        let mut clamped = 0;
        for (pv, yv) in p.iter().zip(labels.iter()) {
            if *yv != 0.0 {
                if *pv < CE_EPSILON {
                    clamped += 1;
                }
                loss -= yv * pv.max(CE_EPSILON).ln();
            }
        }
        self.clamped += clamped;
        self.push(Op::CrossEntropy(probs, labels), Mat::from_elem((1, 1), loss))
    }

    /// Back-propagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Mat>> = (0..self.params.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let send = |v: Var, delta: Mat, grads: &mut Vec<Option<Mat>>| {
                accumulate(&mut grads[v.0], delta);
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => accumulate(&mut param_grads[id.0], g.clone()),
                Op::MatMul(a, b) => {
                    send(*a, g.dot(&self.value(*b).t()), &mut grads);
                    send(*b, self.value(*a).t().dot(&g), &mut grads);
                }
                Op::MatMulBt(a, b) => {
                    send(*a, g.dot(self.value(*b)), &mut grads);
                    send(*b, g.t().dot(self.value(*a)), &mut grads);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.clone(), &mut grads);
                }
                Op::AddRow(a, row) => {
                    send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    send(*a, g.clone(), &mut grads);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*a, &g * self.value(*row), &mut grads);
                    send(*row, gr, &mut grads);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b), &mut grads);
                    send(*b, &g * self.value(*a), &mut grads);
                }
                Op::Scale(a, c) => send(*a, &g * *c, &mut grads),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    send(*a, &g * &mask, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, y * &(&g - &dot), &mut grads);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = node.value.as_ref().expect("layer norm value");
                    let n = y.ncols() as f64;
                    let mut dx = Mat::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let gy = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gy.sum() / n;
                        let mean_gy = gy.dot(&yr) / n;
                        for c in 0..y.ncols() {
                            dx[[r, c]] = inv_std[r] * (gy[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                    send(*a, dx, &mut grads);
                }
                Op::Gather(table, ids) => {
                    // Scatter straight into the parameter gradient when possible.
                    let target = match self.nodes[table.0].op {
                        Op::Param(id) => &mut param_grads[id.0],
                        _ => &mut grads[table.0],
                    };
                    let shape = self.value(*table).raw_dim();
                    let acc = target.get_or_insert_with(|| Mat::zeros(shape));
                    for (r, &row) in ids.iter().enumerate() {
                        let mut dst = acc.row_mut(row);
                        dst += &g.row(r);
                    }
                }
                Op::Rows(a, start) => {
                    let mut full = Mat::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    send(*a, full, &mut grads);
                }
                Op::Cols(a, start) => {
                    let mut full = Mat::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(*a, full, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        send(*p, g.slice(s![.., at..at + w]).to_owned(), &mut grads);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        send(*p, g.slice(s![at..at + h, ..]).to_owned(), &mut grads);
                        at += h;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let row = &g / n as f64;
                    let full = Mat::from_shape_fn((n, g.ncols()), |(_, c)| row[[0, c]]);
                    send(*a, full, &mut grads);
                }
                Op::Sum(a) => {
                    send(*a, Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]), &mut grads)
                }
                Op::SqNorm(a) => send(*a, self.value(*a) * (2.0 * g[[0, 0]]), &mut grads),
                Op::Custom(a, local) => send(*a, local * g[[0, 0]], &mut grads),
                Op::CrossEntropy(p, labels) => {
                    let pv = self.value(*p);
                    let scale = g[[0, 0]];
                    let d = Mat::from_shape_fn(pv.raw_dim(), |ix| {
                        let y = labels[ix];
                        if y == 0.0 || pv[ix] < CE_EPSILON {
                            0.0
                        } else {
                            -scale * y / pv[ix]
                        }
                    });
                    send(*p, d, &mut grads);
                }
            }
            grads[i] = Some(g);
        }
        Gradients {
            params: param_grads,
            nodes: grads,
        }
    }
}

fn accumulate(slot: &mut Option<Mat>, delta: Mat) {
    match slot {
        Some(existing) => *existing += &delta,
        None => *slot = Some(delta),
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &ArrayView2<f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
