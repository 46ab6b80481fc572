use crate::error::{Error, Result};

use super::kernels;
use super::{Array, ParamId, ParamStore, Real};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Const,
    Param(ParamId),
    Embed { table: ParamId, row: usize },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, m: usize, k: usize, n: usize, transposed: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, means: Vec<F>, rstds: Vec<F> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<F> },
    Softmax(Var),
    LogSoftmax(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Stack(Vec<Var>),
    Rows { x: Var, start: usize, count: usize },
    Reshape(Var),
    Sum(Var),
    Pick { x: Var, index: usize },
    StMix { cands: Vec<Var>, logits: Var, soft: Vec<F>, hard: usize, straight_through: bool },
}

struct Node<F> {
    op: Op<F>,
    value: Option<Array<F>>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already a topological order of the graph.
///
/// Parameters are borrowed from a [`ParamStore`] rather than copied; their
/// gradients are collected per [`ParamId`].
pub struct Tape<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

/// Result of [`Tape::backward`].
pub struct Gradients<F> {
    nodes: Vec<Option<Array<F>>>,
    params: Vec<Array<F>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to a recorded value (zeros if the
    /// value does not reach the loss).
    pub fn wrt(&self, var: Var, shape: &[usize]) -> Array<F> {
        self.nodes
            .get(var.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Array::zeros(shape))
    }

    pub fn param(&self, id: ParamId) -> &Array<F> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Array<F>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Array<F>> {
        self.params
    }
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        _ => (shape[..shape.len() - 1].iter().product(), *shape.last().unwrap()),
    }
}

fn lead_shape(shape: &[usize], last: usize) -> Vec<usize> {
    let mut out = shape.to_vec();
    *out.last_mut().unwrap() = last;
    out
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self { params, nodes: Vec::with_capacity(1024) }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array<F> {
        let node = &self.nodes[var.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter node carries a value"),
        }
    }

    pub fn scalar(&self, var: Var) -> F {
        self.value(var).item()
    }

    fn push(&mut self, op: Op<F>, value: Array<F>) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array<F>) -> Var {
        self.push(Op::Const, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None });
        Var(self.nodes.len() - 1)
    }

    /// Row `row` of a `[rows×d]` parameter table, as a `[d]` vector.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.params.get(table);
        if t.shape().len() != 2 || row >= t.shape()[0] {
            return Err(Error::Vocabulary(format!(
                "row {row} outside embedding table {:?}",
                t.shape()
            )));
        }
        let value = Array::from_parts(vec![t.cols()], t.row(row).to_vec());
        Ok(self.push(Op::Embed { table, row }, value))
    }

    /// Matrix product; a vector left operand is treated as a single row and
    /// the result is then a vector.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sb.len() != 2 || sa.len() > 2 {
            return Err(Error::Dimension(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k) = matrix_dims(&sa);
        let n = sb[1];
        if sb[0] != k {
            return Err(Error::Dimension(format!("matmul inner dims {sa:?} × {sb:?}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let shape = if sa.len() == 1 { vec![n] } else { vec![m, n] };
        Ok(self.push(Op::MatMul { a, b, m, k, n }, Array::from_parts(shape, out)))
    }

    fn linear_impl(&mut self, x: Var, w: Var, b: Option<Var>, transposed: bool) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sw.len() != 2 {
            return Err(Error::Dimension(format!("linear weight must be 2-D, got {sw:?}")));
        }
        let (m, k) = matrix_dims(&sx);
        let (wk, n) = if transposed { (sw[1], sw[0]) } else { (sw[0], sw[1]) };
        if wk != k {
            return Err(Error::Dimension(format!("linear input {sx:?} vs weight {sw:?}")));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = if transposed {
            kernels::matmul_bt(xv, wv, m, k, n)
        } else {
            kernels::matmul(xv, wv, m, k, n)
        };
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n {
                return Err(Error::Dimension(format!("bias {:?} for width {n}", bv.shape())));
            }
            for r in 0..m {
                for (o, &bb) in out[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                    *o = *o + bb;
                }
            }
        }
        let value = Array::from_parts(lead_shape(&sx, n), out);
        Ok(self.push(Op::Linear { x, w, b, m, k, n, transposed }, value))
    }

    /// `x · w + b` applied to each row of `x`, with `w` of shape `[in×out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.linear_impl(x, w, b, false)
    }

    /// `x · wᵀ + b` with `w` of shape `[out×in]`.
    pub fn linear_t(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.linear_impl(x, w, b, true)
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Array::from_parts(va.shape().to_vec(), data);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Array::from_parts(va.shape().to_vec(), data);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let va = self.value(a);
        let value =
            Array::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| x * factor).collect());
        self.push(Op::Scale(a, factor), value)
    }

    fn map(&mut self, a: Var, f: impl Fn(F) -> F) -> Array<F> {
        let va = self.value(a);
        Array::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect())
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.map(a, kernels::gelu);
        self.push(Op::Gelu(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, kernels::sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, kernels::log_sigmoid);
        self.push(Op::LogSigmoid(a), value)
    }

    /// Row-wise layer norm over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = matrix_dims(vx.shape());
        if cols < 2 || self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::Dimension(format!("layer_norm over width {cols}")));
        }
        let (out, means, rstds) = kernels::layer_norm(
            vx.data(),
            self.value(gain).data(),
            self.value(bias).data(),
            rows,
            cols,
        );
        let value = Array::from_parts(vx.shape().to_vec(), out);
        Ok(self.push(Op::LayerNorm { x, gain, bias, means, rstds }, value))
    }

    /// Multi-head self-attention core over `[len×dim]` query/key/value rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let sq = self.value(q).shape().to_vec();
        if sq.len() != 2
            || self.value(k).shape() != sq.as_slice()
            || self.value(v).shape() != sq.as_slice()
            || heads == 0
            || !sq[1].is_multiple_of(heads)
        {
            return Err(Error::Dimension(format!("attention over {sq:?} with {heads} heads")));
        }
        let (len, dim) = (sq[0], sq[1]);
        let (out, probs) = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            len,
            dim,
            heads,
        );
        Ok(self.push(Op::Attention { q, k, v, heads, probs }, Array::from_parts(sq, out)))
    }

    fn rowwise(&self, a: Var, f: impl Fn(&[F]) -> Vec<F>) -> Result<Array<F>> {
        let va = self.value(a);
        let (rows, cols) = matrix_dims(va.shape());
        if cols == 0 {
            return Err(Error::Dimension("softmax over empty input".into()));
        }
        let mut out = Vec::with_capacity(va.len());
        for r in 0..rows {
            out.extend(f(&va.data()[r * cols..(r + 1) * cols]));
        }
        Ok(Array::from_parts(va.shape().to_vec(), out))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.rowwise(a, kernels::softmax)?;
        Ok(self.push(Op::Softmax(a), value))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.rowwise(a, kernels::log_softmax)?;
        Ok(self.push(Op::LogSoftmax(a), value))
    }

    /// Stacks equally sized values into the rows of a `[k×len]` matrix.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Dimension("stack of nothing".into()));
        };
        let width = self.value(first).len();
        let mut data = Vec::with_capacity(width * parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.len() != width {
                return Err(Error::Dimension(format!("stack width {} vs {width}", v.len())));
            }
            data.extend_from_slice(v.data());
        }
        let value = Array::from_parts(vec![parts.len(), width], data);
        Ok(self.push(Op::Stack(parts.to_vec()), value))
    }

    /// Rows `start..start+count` of a matrix.
    pub fn rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = matrix_dims(vx.shape());
        if count == 0 || start + count > rows {
            return Err(Error::Dimension(format!("rows {start}+{count} of {rows}")));
        }
        let data = vx.data()[start * cols..(start + count) * cols].to_vec();
        Ok(self.push(Op::Rows { x, start, count }, Array::from_parts(vec![count, cols], data)))
    }

    /// A single row, as a vector.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let m = self.rows(x, r, 1)?;
        let cols = self.value(m).cols();
        self.reshape(m, &[cols])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().fold(F::zero(), |a, b| a + b);
        self.push(Op::Sum(x), Array::scalar(total))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let vx = self.value(x);
        if index >= vx.len() {
            return Err(Error::Dimension(format!("pick {index} of {}", vx.len())));
        }
        let value = Array::scalar(vx.data()[index]);
        Ok(self.push(Op::Pick { x, index }, value))
    }

    /// Straight-through selection among candidate vectors.
    ///
    /// The forward value is exactly `cands[hard]`. Backward routes the
    /// incoming gradient to the selected candidate only, and, when
    /// `straight_through` is set, to `logits` through the relaxed
    /// distribution `soft`: `∂/∂logit_k = soft_k (⟨g, c_k⟩ − Σ_j soft_j ⟨g, c_j⟩)`.
    pub fn st_mix(
        &mut self,
        cands: &[Var],
        logits: Var,
        soft: Vec<F>,
        hard: usize,
        straight_through: bool,
    ) -> Result<Var> {
        if cands.is_empty() || hard >= cands.len() || soft.len() != cands.len() {
            return Err(Error::Contract(format!(
                "st_mix with {} candidates, selection {hard}",
                cands.len()
            )));
        }
        if self.value(logits).len() != cands.len() {
            return Err(Error::Dimension("st_mix logits length".into()));
        }
        let width = self.value(cands[0]).len();
        if cands.iter().any(|&c| self.value(c).len() != width) {
            return Err(Error::Dimension("st_mix candidates differ in width".into()));
        }
        let value = self.value(cands[hard]).clone();
        Ok(self.push(
            Op::StMix { cands: cands.to_vec(), logits, soft, hard, straight_through },
            value,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Array<F>>> = (0..self.params.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(self.value(loss).shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads, &mut pgrads);
            grads[idx] = Some(g);
        }

        let params = pgrads
            .into_iter()
            .zip(self.params.tensors())
            .map(|(g, t)| g.unwrap_or_else(|| Array::zeros(t.value.shape())))
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &Array<F>,
        grads: &mut [Option<Array<F>>],
        pgrads: &mut [Option<Array<F>>],
    ) {
        let mut acc = |var: Var, data: Vec<F>| {
            let shape = self.value(var).shape();
            match &mut grads[var.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(data) {
                        *e = *e + d;
                    }
                }
                slot @ None => *slot = Some(Array::from_parts(shape.to_vec(), data)),
            }
        };
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Const => {}
            Op::Param(id) => {
                let slot = pgrads[id.0].get_or_insert_with(|| Array::zeros(g.shape()));
                slot.add_assign(g);
            }
            Op::Embed { table, row } => {
                let shape = self.params.get(*table).shape();
                let slot = pgrads[table.0].get_or_insert_with(|| Array::zeros(shape));
                let cols = shape[1];
                let dst = &mut slot.data_mut()[row * cols..(row + 1) * cols];
                for (d, &s) in dst.iter_mut().zip(gd) {
                    *d = *d + s;
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, kernels::matmul_bt(gd, vb, *m, *n, *k));
                acc(*b, kernels::matmul_at(va, gd, *m, *k, *n));
            }
            Op::Linear { x, w, b, m, k, n, transposed } => {
                let (vx, vw) = (self.value(*x).data(), self.value(*w).data());
                if *transposed {
                    // y = x wᵀ, w: [n×k]
                    acc(*x, kernels::matmul(gd, vw, *m, *n, *k));
                    acc(*w, kernels::matmul_at(gd, vx, *m, *n, *k));
                } else {
                    acc(*x, kernels::matmul_bt(gd, vw, *m, *n, *k));
                    acc(*w, kernels::matmul_at(vx, gd, *m, *k, *n));
                }
                if let Some(b) = b {
                    let mut db = vec![F::zero(); *n];
                    for r in 0..*m {
                        for (d, &s) in db.iter_mut().zip(&gd[r * n..(r + 1) * n]) {
                            *d = *d + s;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                acc(*b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(a, f) => acc(*a, gd.iter().map(|&g| g * *f).collect()),
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                acc(*a, gd.iter().zip(va).map(|(&g, &x)| g * kernels::gelu_grad(x)).collect());
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.as_ref().unwrap().data();
                acc(*a, gd.iter().zip(y).map(|(&g, &s)| g * s * (F::one() - s)).collect());
            }
            Op::LogSigmoid(a) => {
                // d/dx ln σ(x) = σ(−x)
                let va = self.value(*a).data();
                acc(*a, gd.iter().zip(va).map(|(&g, &x)| g * kernels::sigmoid(-x)).collect());
            }
            Op::LayerNorm { x, gain, bias, means, rstds } => {
                let vx = self.value(*x);
                let (rows, cols) = matrix_dims(vx.shape());
                let (dx, dg, db) = kernels::layer_norm_backward(
                    vx.data(),
                    self.value(*gain).data(),
                    means,
                    rstds,
                    gd,
                    rows,
                    cols,
                );
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, db);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let sq = self.value(*q).shape();
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    gd,
                    sq[0],
                    sq[1],
                    *heads,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Softmax(a) => {
                let y = self.nodes[idx].value.as_ref().unwrap();
                let (rows, cols) = matrix_dims(y.shape());
                let mut dx = Vec::with_capacity(y.len());
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    dx.extend(kernels::softmax_backward(&y.data()[span.clone()], &gd[span]));
                }
                acc(*a, dx);
            }
            Op::LogSoftmax(a) => {
                let y = self.nodes[idx].value.as_ref().unwrap();
                let (rows, cols) = matrix_dims(y.shape());
                let mut dx = Vec::with_capacity(y.len());
                for r in 0..rows {
                    let gs = &gd[r * cols..(r + 1) * cols];
                    let total = gs.iter().copied().fold(F::zero(), |a, b| a + b);
                    for (c, &gv) in gs.iter().enumerate() {
                        dx.push(gv - y.data()[r * cols + c].exp() * total);
                    }
                }
                acc(*a, dx);
            }
            Op::Stack(parts) => {
                let width = gd.len() / parts.len();
                for (r, &p) in parts.iter().enumerate() {
                    acc(p, gd[r * width..(r + 1) * width].to_vec());
                }
            }
            Op::Rows { x, start, count } => {
                let vx = self.value(*x);
                let cols = vx.cols();
                let mut dx = vec![F::zero(); vx.len()];
                dx[start * cols..(start + count) * cols].copy_from_slice(gd);
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![gd[0]; n]);
            }
            Op::Pick { x, index } => {
                let mut dx = vec![F::zero(); self.value(*x).len()];
                dx[*index] = gd[0];
                acc(*x, dx);
            }
            Op::StMix { cands, logits, soft, hard, straight_through } => {
                acc(cands[*hard], gd.to_vec());
                if *straight_through {
                    let dsoft: Vec<F> =
                        cands.iter().map(|&c| kernels::dot(gd, self.value(c).data())).collect();
                    acc(*logits, kernels::softmax_backward(soft, &dsoft));
                }
            }
        }
    }
}
