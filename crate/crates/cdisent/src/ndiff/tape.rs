use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use super::{NdiffError, Result, DOMAIN_CLAMP};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    /// Leaf value (input constant or bound parameter).
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[m,n] + [n]` broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[m,n] + [m]` broadcast over columns.
    AddCol(NodeId, NodeId),
    /// `[m,n] * [m]` broadcast over columns.
    MulCol(NodeId, NodeId),
    /// `[m,n] / [n]`, denominator clamped at `DOMAIN_CLAMP`.
    DivRow(NodeId, NodeId),
    /// `[m,n] / [m]`, denominator clamped at `DOMAIN_CLAMP`.
    DivCol(NodeId, NodeId),
    Scale(NodeId, T),
    AddConst(NodeId, T),
    Exp(NodeId),
    /// `ln(max(x, DOMAIN_CLAMP))`.
    Log(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// `sqrt(max(x, 0))`.
    Sqrt(NodeId),
    Clamp(NodeId, T, T),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis0(NodeId),
    SumAxis1(NodeId),
    MeanAxis0(NodeId),
    MaxAxis0(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(NodeId, NodeId),
    /// `out[b] = in[b, idx[b]]`.
    PickCols(NodeId, Vec<usize>),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Wengert tape: records the forward computation, replays it in reverse for
/// gradients. Nodes are stored in creation order, which is already a
/// topological order of the graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Parameter leaves bound onto a tape, aligned with the originating
/// [`ParamSet`] order.
pub struct BoundParams {
    pub(crate) ids: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .ok_or_else(|| NdiffError::UnknownParam(name.to_string()))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Record a constant leaf (inputs, noise draws, one-hot labels).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_unchecked(Op::Leaf, value)
    }

    /// Record one leaf per parameter, in `ParamSet` order.
    pub fn bind_params(&mut self, params: &ParamSet<T>) -> BoundParams {
        let ids = params
            .iter()
            .map(|p| {
                let id = self.push_unchecked(Op::Leaf, p.value.clone());
                (p.name.clone(), id)
            })
            .collect();
        BoundParams { ids }
    }

    fn push_unchecked(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, name: &'static str) -> Result<NodeId> {
        value.check_finite(name)?;
        Ok(self.push_unchecked(op, value))
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn want2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[id.0].value.dims2().map_err(|_| NdiffError::ShapeMismatch {
            op,
            detail: format!("expected rank-2 operand, got {:?}", self.shape(id)),
        })
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(NdiffError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            })
        }
    }

    // ── binary ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.want2(a, "matmul")?;
        let (kb, n) = self.want2(b, "matmul")?;
        if ka != kb {
            return Err(NdiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims {ka} vs {kb}"),
            });
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![T::zero(); m * n];
        // i-k-j loop order keeps the inner loop contiguous in b and out.
        for i in 0..m {
            for k in 0..ka {
                let aik = av[i * ka + k];
                let brow = &bv[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v, "mul")
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let data = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("zip preserves shape")
    }

    fn rowcol_check(
        &self,
        a: NodeId,
        v: NodeId,
        along_rows: bool,
        op: &'static str,
    ) -> Result<(usize, usize)> {
        let (m, n) = self.want2(a, op)?;
        let want = if along_rows { n } else { m };
        if self.shape(v) != [want] {
            return Err(NdiffError::ShapeMismatch {
                op,
                detail: format!("[{m},{n}] with {:?}", self.shape(v)),
            });
        }
        Ok((m, n))
    }

    fn broadcast(
        &self,
        a: NodeId,
        v: NodeId,
        m: usize,
        n: usize,
        along_rows: bool,
        f: impl Fn(T, T) -> T,
    ) -> Tensor<T> {
        let av = self.nodes[a.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let b = if along_rows { vv[j] } else { vv[i] };
                out.push(f(av[i * n + j], b));
            }
        }
        Tensor::new(vec![m, n], out).expect("broadcast shape")
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.rowcol_check(a, row, true, "add_row")?;
        let v = self.broadcast(a, row, m, n, true, |x, y| x + y);
        self.push(Op::AddRow(a, row), v, "add_row")
    }

    pub fn add_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (m, n) = self.rowcol_check(a, col, false, "add_col")?;
        let v = self.broadcast(a, col, m, n, false, |x, y| x + y);
        self.push(Op::AddCol(a, col), v, "add_col")
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (m, n) = self.rowcol_check(a, col, false, "mul_col")?;
        let v = self.broadcast(a, col, m, n, false, |x, y| x * y);
        self.push(Op::MulCol(a, col), v, "mul_col")
    }

    pub fn div_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.rowcol_check(a, row, true, "div_row")?;
        let lo = T::c(DOMAIN_CLAMP);
        let v = self.broadcast(a, row, m, n, true, |x, y| x / y.max(lo));
        self.push(Op::DivRow(a, row), v, "div_row")
    }

    pub fn div_col(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (m, n) = self.rowcol_check(a, col, false, "div_col")?;
        let lo = T::c(DOMAIN_CLAMP);
        let v = self.broadcast(a, col, m, n, false, |x, y| x / y.max(lo));
        self.push(Op::DivCol(a, col), v, "div_col")
    }

    // ── unary ops ───────────────────────────────────────────────────

    pub fn scale(&mut self, a: NodeId, k: T) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(|x| x * k);
        self.push(Op::Scale(a, k), v, "scale")
    }

    pub fn add_const(&mut self, a: NodeId, k: T) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(|x| x + k);
        self.push(Op::AddConst(a, k), v, "add_const")
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -T::one())
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(|x| x.exp());
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let lo = T::c(DOMAIN_CLAMP);
        let v = self.nodes[a.0].value.map(|x| x.max(lo).ln());
        self.push(Op::Log(a), v, "log")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(|x| x.tanh());
        self.push(Op::Tanh(a), v, "tanh")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(|x| x.max(T::zero()));
        self.push(Op::Relu(a), v, "relu")
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(|x| x.max(T::zero()).sqrt());
        self.push(Op::Sqrt(a), v, "sqrt")
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId> {
        if lo > hi {
            return Err(NdiffError::InvalidArgument("clamp lo > hi".into()));
        }
        let v = self.nodes[a.0].value.map(|x| x.max(lo).min(hi));
        self.push(Op::Clamp(a, lo, hi), v, "clamp")
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.mul(a, a)
    }

    /// Numerically stable row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.want2(a, "softmax_rows")?;
        let av = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().fold(row[0], |acc, &x| acc.max(x));
            let mut s = T::zero();
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                s += e;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] / s;
            }
        }
        self.push(Op::SoftmaxRows(a), Tensor::new(vec![m, n], out)?, "softmax_rows")
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.data().iter().copied().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s)?, "sum_all")
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let len = self.nodes[a.0].value.len();
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let v = s / T::c(len as f64);
        self.push(Op::MeanAll(a), Tensor::scalar(v)?, "mean_all")
    }

    fn reduce_axis0(&self, a: NodeId, m: usize, n: usize, mean: bool) -> Tensor<T> {
        let av = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av[i * n + j];
            }
        }
        if mean {
            let inv = T::one() / T::c(m as f64);
            for o in &mut out {
                *o = *o * inv;
            }
        }
        Tensor::new(vec![n], out).expect("axis0 shape")
    }

    pub fn sum_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.want2(a, "sum_axis0")?;
        let v = self.reduce_axis0(a, m, n, false);
        self.push(Op::SumAxis0(a), v, "sum_axis0")
    }

    pub fn mean_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.want2(a, "mean_axis0")?;
        let v = self.reduce_axis0(a, m, n, true);
        self.push(Op::MeanAxis0(a), v, "mean_axis0")
    }

    pub fn sum_axis1(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.want2(a, "sum_axis1")?;
        let av = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); m];
        for i in 0..m {
            for j in 0..n {
                out[i] += av[i * n + j];
            }
        }
        self.push(Op::SumAxis1(a), Tensor::new(vec![m], out)?, "sum_axis1")
    }

    /// Column-wise maximum of a rank-2 tensor. Gradient routes to the first
    /// maximal entry of each column.
    pub fn max_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.want2(a, "max_axis0")?;
        let av = self.nodes[a.0].value.data();
        let mut out = vec![T::neg_infinity(); n];
        for i in 0..m {
            for j in 0..n {
                if av[i * n + j] > out[j] {
                    out[j] = av[i * n + j];
                }
            }
        }
        self.push(Op::MaxAxis0(a), Tensor::new(vec![n], out)?, "max_axis0")
    }

    // ── structural ops ──────────────────────────────────────────────

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.want2(a, "slice_cols")?;
        if start + len > n {
            return Err(NdiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols [{start},{}) of {n}", start + len),
            });
        }
        let av = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push(Op::SliceCols(a, start, len), Tensor::new(vec![m, len], out)?, "slice_cols")
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, na) = self.want2(a, "concat_cols")?;
        let (mb, nb) = self.want2(b, "concat_cols")?;
        if ma != mb {
            return Err(NdiffError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("row counts {ma} vs {mb}"),
            });
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(ma * (na + nb));
        for i in 0..ma {
            out.extend_from_slice(&av[i * na..(i + 1) * na]);
            out.extend_from_slice(&bv[i * nb..(i + 1) * nb]);
        }
        self.push(Op::ConcatCols(a, b), Tensor::new(vec![ma, na + nb], out)?, "concat_cols")
    }

    /// Gather one column entry per row: `out[i] = a[i, idx[i]]`.
    pub fn pick_cols(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let (m, n) = self.want2(a, "pick_cols")?;
        if idx.len() != m {
            return Err(NdiffError::ShapeMismatch {
                op: "pick_cols",
                detail: format!("{} indices for {m} rows", idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(NdiffError::InvalidArgument(format!(
                "pick_cols index {bad} out of range 0..{n}"
            )));
        }
        let av = self.nodes[a.0].value.data();
        let out: Vec<T> = idx.iter().enumerate().map(|(i, &j)| av[i * n + j]).collect();
        self.push(Op::PickCols(a, idx), Tensor::new(vec![m], out)?, "pick_cols")
    }

    // ── reverse pass ────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar `loss` node. Returns one gradient
    /// tensor per node; callers usually read only the parameter leaves via
    /// [`backward`].
    pub fn gradients(&self, loss: NodeId) -> Result<Vec<Option<Tensor<T>>>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NdiffError::NonScalarLoss(self.nodes[loss.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.vjp(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            g.check_finite("backward")?;
        }
        Ok(grads)
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            None => grads[id.0] = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn vjp(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let lo = T::c(DOMAIN_CLAMP);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2()?;
                let (_, n) = self.nodes[b.0].value.dims2()?;
                let gv = g.data();
                let av = val(*a);
                let bv = val(*b);
                // dA = G B^T
                let mut da = vec![T::zero(); m * k];
                for i2 in 0..m {
                    for j in 0..n {
                        let gij = gv[i2 * n + j];
                        for k2 in 0..k {
                            da[i2 * k + k2] += gij * bv[k2 * n + j];
                        }
                    }
                }
                // dB = A^T G
                let mut db = vec![T::zero(); k * n];
                for i2 in 0..m {
                    for k2 in 0..k {
                        let aik = av[i2 * k + k2];
                        for j in 0..n {
                            db[k2 * n + j] += aik * gv[i2 * n + j];
                        }
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                Self::accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(val(*b)).map(|(&gx, &bx)| gx * bx).collect(),
                )?;
                let db = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(val(*a)).map(|(&gx, &ax)| gx * ax).collect(),
                )?;
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::AddRow(a, row) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                Self::accumulate(grads, *a, g.clone());
                let gv = g.data();
                let mut dr = vec![T::zero(); n];
                for i2 in 0..m {
                    for j in 0..n {
                        dr[j] += gv[i2 * n + j];
                    }
                }
                Self::accumulate(grads, *row, Tensor::new(vec![n], dr)?);
            }
            Op::AddCol(a, col) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                Self::accumulate(grads, *a, g.clone());
                let gv = g.data();
                let mut dc = vec![T::zero(); m];
                for i2 in 0..m {
                    for j in 0..n {
                        dc[i2] += gv[i2 * n + j];
                    }
                }
                Self::accumulate(grads, *col, Tensor::new(vec![m], dc)?);
            }
            Op::MulCol(a, col) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let gv = g.data();
                let cv = val(*col);
                let av = val(*a);
                let mut da = vec![T::zero(); m * n];
                let mut dc = vec![T::zero(); m];
                for i2 in 0..m {
                    for j in 0..n {
                        da[i2 * n + j] = gv[i2 * n + j] * cv[i2];
                        dc[i2] += gv[i2 * n + j] * av[i2 * n + j];
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
                Self::accumulate(grads, *col, Tensor::new(vec![m], dc)?);
            }
            Op::DivRow(a, row) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let gv = g.data();
                let rv = val(*row);
                let av = val(*a);
                let mut da = vec![T::zero(); m * n];
                let mut dr = vec![T::zero(); n];
                for j in 0..n {
                    let clamped = rv[j] < lo;
                    let d = rv[j].max(lo);
                    for i2 in 0..m {
                        da[i2 * n + j] = gv[i2 * n + j] / d;
                        if !clamped {
                            dr[j] -= gv[i2 * n + j] * av[i2 * n + j] / (d * d);
                        }
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
                Self::accumulate(grads, *row, Tensor::new(vec![n], dr)?);
            }
            Op::DivCol(a, col) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let gv = g.data();
                let cv = val(*col);
                let av = val(*a);
                let mut da = vec![T::zero(); m * n];
                let mut dc = vec![T::zero(); m];
                for i2 in 0..m {
                    let clamped = cv[i2] < lo;
                    let d = cv[i2].max(lo);
                    for j in 0..n {
                        da[i2 * n + j] = gv[i2 * n + j] / d;
                        if !clamped {
                            dc[i2] -= gv[i2 * n + j] * av[i2 * n + j] / (d * d);
                        }
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
                Self::accumulate(grads, *col, Tensor::new(vec![m], dc)?);
            }
            Op::Scale(a, k) => {
                Self::accumulate(grads, *a, g.map(|x| x * *k));
            }
            Op::AddConst(a, _) => {
                Self::accumulate(grads, *a, g.clone());
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.data();
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(y).map(|(&gx, &yx)| gx * yx).collect(),
                )?;
                Self::accumulate(grads, *a, da);
            }
            Op::Log(a) => {
                let xv = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv)
                        .map(|(&gx, &x)| if x < lo { T::zero() } else { gx / x })
                        .collect(),
                )?;
                Self::accumulate(grads, *a, da);
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y)
                        .map(|(&gx, &yx)| gx * (T::one() - yx * yx))
                        .collect(),
                )?;
                Self::accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let xv = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv)
                        .map(|(&gx, &x)| if x > T::zero() { gx } else { T::zero() })
                        .collect(),
                )?;
                Self::accumulate(grads, *a, da);
            }
            Op::Sqrt(a) => {
                let xv = val(*a);
                let y = self.nodes[i].value.data();
                let half = T::c(0.5);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv.iter().zip(y))
                        .map(|(&gx, (&x, &yx))| {
                            if x > T::zero() {
                                gx * half / yx.max(lo)
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                )?;
                Self::accumulate(grads, *a, da);
            }
            Op::Clamp(a, clo, chi) => {
                let xv = val(*a);
                let da = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(xv)
                        .map(|(&gx, &x)| if x >= *clo && x <= *chi { gx } else { T::zero() })
                        .collect(),
                )?;
                Self::accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let y = self.nodes[i].value.data();
                let gv = g.data();
                let mut da = vec![T::zero(); m * n];
                for i2 in 0..m {
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot += gv[i2 * n + j] * y[i2 * n + j];
                    }
                    for j in 0..n {
                        da[i2 * n + j] = (gv[i2 * n + j] - dot) * y[i2 * n + j];
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::SumAll(a) => {
                let gs = g.data()[0];
                let shape = self.nodes[a.0].value.shape().to_vec();
                Self::accumulate(grads, *a, Tensor::full(shape, gs));
            }
            Op::MeanAll(a) => {
                let len = self.nodes[a.0].value.len();
                let gs = g.data()[0] / T::c(len as f64);
                let shape = self.nodes[a.0].value.shape().to_vec();
                Self::accumulate(grads, *a, Tensor::full(shape, gs));
            }
            Op::SumAxis0(a) | Op::MeanAxis0(a) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let mean = matches!(self.nodes[i].op, Op::MeanAxis0(_));
                let inv = if mean { T::one() / T::c(m as f64) } else { T::one() };
                let gv = g.data();
                let mut da = vec![T::zero(); m * n];
                for i2 in 0..m {
                    for j in 0..n {
                        da[i2 * n + j] = gv[j] * inv;
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::SumAxis1(a) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let gv = g.data();
                let mut da = vec![T::zero(); m * n];
                for i2 in 0..m {
                    for j in 0..n {
                        da[i2 * n + j] = gv[i2];
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::MaxAxis0(a) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let xv = val(*a);
                let gv = g.data();
                let mut da = vec![T::zero(); m * n];
                for j in 0..n {
                    let mut best = 0usize;
                    for i2 in 1..m {
                        if xv[i2 * n + j] > xv[best * n + j] {
                            best = i2;
                        }
                    }
                    da[best * n + j] = gv[j];
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let gv = g.data();
                let mut da = vec![T::zero(); m * n];
                for i2 in 0..m {
                    for j in 0..*len {
                        da[i2 * n + start + j] = gv[i2 * len + j];
                    }
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::ConcatCols(a, b) => {
                let (m, na) = self.nodes[a.0].value.dims2()?;
                let (_, nb) = self.nodes[b.0].value.dims2()?;
                let gv = g.data();
                let mut da = vec![T::zero(); m * na];
                let mut db = vec![T::zero(); m * nb];
                let n = na + nb;
                for i2 in 0..m {
                    da[i2 * na..(i2 + 1) * na].copy_from_slice(&gv[i2 * n..i2 * n + na]);
                    db[i2 * nb..(i2 + 1) * nb].copy_from_slice(&gv[i2 * n + na..(i2 + 1) * n]);
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, na], da)?);
                Self::accumulate(grads, *b, Tensor::new(vec![m, nb], db)?);
            }
            Op::PickCols(a, idx) => {
                let (m, n) = self.nodes[a.0].value.dims2()?;
                let gv = g.data();
                let mut da = vec![T::zero(); m * n];
                for (i2, &j) in idx.iter().enumerate() {
                    da[i2 * n + j] = gv[i2];
                }
                Self::accumulate(grads, *a, Tensor::new(vec![m, n], da)?);
            }
        }
        Ok(())
    }
}

/// Run the reverse pass from `loss` and fill the gradient buffers of
/// `params`. Parameters not reachable from the loss get zero gradients.
pub fn backward<T: Scalar>(
    tape: &Tape<T>,
    loss: NodeId,
    bound: &BoundParams,
    params: &mut ParamSet<T>,
) -> Result<()> {
    let grads = tape.gradients(loss)?;
    for (name, id) in &bound.ids {
        let g = match &grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(*id).shape().to_vec()),
        };
        params.set_grad(name, g)?;
    }
    Ok(())
}
