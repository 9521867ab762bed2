//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every operation evaluates eagerly and records enough to replay its
//! vector-Jacobian product. Values are always `rows x cols` row-major.
//! Parameters enter through [`Tape::param`] and receive gradients in
//! [`Tape::backward`].

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Norms below this are treated as zero by the guarded cosine.
pub const COSINE_EPS: f64 = 1e-12;
/// Degrees below this are treated as isolated by the guarded inverse square root.
pub const DEGREE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Square(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    InvSqrtGuarded(Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    ColSlice(Var, usize),
    HConcat(Vec<Var>),
    RowCosine(Var, Var),
    RowCosineVec(Var, Var),
    RowDot(Var, Var),
    SoftmaxRows(Var, f64),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// A recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn guarded_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = guarded_norm(a);
    let nb = guarded_norm(b);
    if na < COSINE_EPS || nb < COSINE_EPS {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Accumulates d cos(a,b) / da scaled by `g` into `out`.
fn cosine_grad_into(a: &[f64], b: &[f64], g: f64, out: &mut [f64]) {
    let na = guarded_norm(a);
    let nb = guarded_norm(b);
    if na < COSINE_EPS || nb < COSINE_EPS {
        return;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let inv = 1.0 / (na * nb);
    let na2 = na * na;
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += g * (bi * inv - cos * ai / na2);
    }
}

fn softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = ((l - max) / tau).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Temperature softmax of a plain vector.
pub fn softmax_t(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, tau, &mut out);
    Ok(out)
}

/// Cosine similarity, 0 when either norm is below [`COSINE_EPS`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "scalar_value on {}x{}", n.rows, n.cols);
        n.value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone())
    }

    /// Constant input with no gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(
            rows * cols,
            value.len(),
            "constant {rows}x{cols} size mismatch"
        );
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Var {
        self.constant(t.rows(), t.cols(), t.data().to_vec())
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(1, 1, vec![value])
    }

    pub fn full(&mut self, rows: usize, cols: usize, fill: f64) -> Var {
        self.constant(rows, cols, vec![fill; rows * cols])
    }

    /// Load a stored parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.value(name)?;
        let v = self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names of parameters loaded on this tape.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    /// `a[n x m] * b[m x p]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.shape(a);
        let (m2, p) = self.shape(b);
        assert_eq!(m, m2, "matmul inner dims {m} vs {m2}");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let aik = av[i * m + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * p..(k + 1) * p];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        self.push(n, p, out, Op::MatMul(a, b))
    }

    /// `a[n x m] * b[p x m]^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.shape(a);
        let (p, m2) = self.shape(b);
        assert_eq!(m, m2, "matmul_bt inner dims {m} vs {m2}");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let arow = &av[i * m..(i + 1) * m];
            for j in 0..p {
                let brow = &bv[j * m..(j + 1) * m];
                out[i * p + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        self.push(n, p, out, Op::MatMulBT(a, b))
    }

    /// `a[n x p] + bias[1 x p]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (n, p) = self.shape(a);
        assert_eq!(self.nodes[bias.0].value.len(), p, "add_row bias length");
        let bv = &self.nodes[bias.0].value;
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_mut(p.max(1)) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        self.push(n, p, out, Op::AddRow(a, bias))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (n, p) = self.shape(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(n, p, out, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (n, p) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(n, p, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Scale each row of `a[n x p]` by `col[n x 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, p) = self.shape(a);
        assert_eq!(self.shape(col), (n, 1), "mul_col column shape");
        let cv = &self.nodes[col.0].value;
        let mut out = self.nodes[a.0].value.clone();
        for (i, row) in out.chunks_mut(p.max(1)).enumerate().take(n) {
            for o in row.iter_mut() {
                *o *= cv[i];
            }
        }
        self.push(n, p, out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(
            a,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(a),
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// `x^{-1/2}`, or 0 with zero gradient when `x` is below [`DEGREE_EPS`].
    pub fn inv_sqrt_guarded(&mut self, a: Var) -> Var {
        self.map(
            a,
            |x| if x < DEGREE_EPS { 0.0 } else { 1.0 / x.sqrt() },
            Op::InvSqrtGuarded(a),
        )
    }

    /// Rows of `a` selected by `idx` (with repetition).
    pub fn gather(&mut self, a: Var, idx: &Rc<[usize]>) -> Var {
        let p = self.cols(a);
        let n_src = self.rows(a);
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(idx.len() * p);
        for &i in idx.iter() {
            assert!(i < n_src, "gather index {i} out of {n_src} rows");
            out.extend_from_slice(&av[i * p..(i + 1) * p]);
        }
        self.push(idx.len(), p, out, Op::Gather(a, Rc::clone(idx)))
    }

    /// Sum row `r` of `a` into output row `idx[r]`; output has `out_rows` rows.
    pub fn scatter_add(&mut self, a: Var, idx: &Rc<[usize]>, out_rows: usize) -> Var {
        let (n, p) = self.shape(a);
        assert_eq!(n, idx.len(), "scatter_add index length");
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; out_rows * p];
        for (r, &t) in idx.iter().enumerate() {
            assert!(t < out_rows, "scatter index {t} out of {out_rows} rows");
            let dst = &mut out[t * p..(t + 1) * p];
            for (o, &v) in dst.iter_mut().zip(&av[r * p..(r + 1) * p]) {
                *o += v;
            }
        }
        self.push(out_rows, p, out, Op::ScatterAdd(a, Rc::clone(idx)))
    }

    /// Columns `[start, start + width)` of `a`.
    pub fn col_slice(&mut self, a: Var, start: usize, width: usize) -> Var {
        let (n, p) = self.shape(a);
        assert!(start + width <= p, "col_slice {start}+{width} > {p}");
        let av = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            out.extend_from_slice(&av[i * p + start..i * p + start + width]);
        }
        self.push(n, width, out, Op::ColSlice(a, start))
    }

    /// Concatenate along columns; all parts share the row count.
    pub fn hconcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hconcat of nothing");
        let n = self.rows(parts[0]);
        let widths: Vec<usize> = parts
            .iter()
            .map(|&v| {
                assert_eq!(self.rows(v), n, "hconcat row mismatch");
                self.cols(v)
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&v, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[v.0].value[i * w..(i + 1) * w]);
            }
        }
        self.push(n, total, out, Op::HConcat(parts.to_vec()))
    }

    /// Row-wise guarded cosine similarity of two `n x p` matrices, giving `n x 1`.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "row_cosine");
        let (n, p) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out = (0..n)
            .map(|i| cosine(&av[i * p..(i + 1) * p], &bv[i * p..(i + 1) * p]))
            .collect();
        self.push(n, 1, out, Op::RowCosine(a, b))
    }

    /// Guarded cosine of every row of `a[n x p]` against a single vector of length `p`.
    pub fn row_cosine_vec(&mut self, a: Var, c: Var) -> Var {
        let (n, p) = self.shape(a);
        assert_eq!(self.nodes[c.0].value.len(), p, "row_cosine_vec length");
        let av = &self.nodes[a.0].value;
        let cv = &self.nodes[c.0].value;
        let out = (0..n)
            .map(|i| cosine(&av[i * p..(i + 1) * p], cv))
            .collect();
        self.push(n, 1, out, Op::RowCosineVec(a, c))
    }

    /// Row-wise inner product, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "row_dot");
        let (n, p) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out = (0..n)
            .map(|i| {
                av[i * p..(i + 1) * p]
                    .iter()
                    .zip(&bv[i * p..(i + 1) * p])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        self.push(n, 1, out, Op::RowDot(a, b))
    }

    /// Row-wise `softmax(x / tau)` with max subtraction.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Var {
        assert!(tau > 0.0, "softmax temperature must be positive");
        let (n, p) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            softmax_into(&av[i * p..(i + 1) * p], tau, &mut out[i * p..(i + 1) * p]);
        }
        self.push(n, p, out, Op::SoftmaxRows(a, tau))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (n, p) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let out = (0..n)
            .map(|i| av[i * p..(i + 1) * p].iter().sum())
            .collect();
        self.push(n, 1, out, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Mean of all entries; 0 for an empty matrix.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        // shifted by the first element so a constant input averages to
        // itself exactly
        let m = match v.first() {
            None => 0.0,
            Some(&x0) => x0 + v.iter().map(|x| x - x0).sum::<f64>() / v.len() as f64,
        };
        self.push(1, 1, vec![m], Op::Mean(a))
    }

    /// Gradients of the scalar `loss` for every node.
    fn node_grads(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                ln.rows, ln.cols
            )));
        }
        if !ln.value[0].is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", ln.value[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            let len = nodes[v.0].value.len();
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (n, p) = (node.rows, node.cols);
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let m = nodes[a.0].cols;
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        // dA = G * B^T
                        let ga = acc(&mut grads, nodes, *a);
                        for i in 0..n {
                            let grow = &g[i * p..(i + 1) * p];
                            for k in 0..m {
                                let brow = &bv[k * p..(k + 1) * p];
                                ga[i * m + k] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    {
                        // dB = A^T * G
                        let gb = acc(&mut grads, nodes, *b);
                        for i in 0..n {
                            let grow = &g[i * p..(i + 1) * p];
                            for k in 0..m {
                                let aik = av[i * m + k];
                                if aik == 0.0 {
                                    continue;
                                }
                                for (o, &gij) in gb[k * p..(k + 1) * p].iter_mut().zip(grow) {
                                    *o += aik * gij;
                                }
                            }
                        }
                    }
                }
                Op::MatMulBT(a, b) => {
                    // out[i,j] = sum_k a[i,k] b[j,k]
                    let m = nodes[a.0].cols;
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for i in 0..n {
                            for j in 0..p {
                                let gij = g[i * p + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for (o, &bjk) in ga[i * m..(i + 1) * m]
                                    .iter_mut()
                                    .zip(&bv[j * m..(j + 1) * m])
                                {
                                    *o += gij * bjk;
                                }
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, nodes, *b);
                        for i in 0..n {
                            for j in 0..p {
                                let gij = g[i * p + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for (o, &aik) in gb[j * m..(j + 1) * m]
                                    .iter_mut()
                                    .zip(&av[i * m..(i + 1) * m])
                                {
                                    *o += gij * aik;
                                }
                            }
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for (o, &x) in ga.iter_mut().zip(&g) {
                            *o += x;
                        }
                    }
                    let gb = acc(&mut grads, nodes, *bias);
                    for row in g.chunks(p.max(1)).take(n) {
                        for (o, &x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let gv = acc(&mut grads, nodes, *v);
                        for (o, &x) in gv.iter_mut().zip(&g) {
                            *o += x;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for (o, &x) in ga.iter_mut().zip(&g) {
                            *o += x;
                        }
                    }
                    let gb = acc(&mut grads, nodes, *b);
                    for (o, &x) in gb.iter_mut().zip(&g) {
                        *o -= x;
                    }
                }
                Op::Mul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += x * y;
                        }
                    }
                    let gb = acc(&mut grads, nodes, *b);
                    for ((o, &x), &y) in gb.iter_mut().zip(&g).zip(av) {
                        *o += x * y;
                    }
                }
                Op::MulCol(a, col) => {
                    let av = &nodes[a.0].value;
                    let cv = &nodes[col.0].value;
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for i in 0..n {
                            for j in 0..p {
                                ga[i * p + j] += g[i * p + j] * cv[i];
                            }
                        }
                    }
                    let gc = acc(&mut grads, nodes, *col);
                    for i in 0..n {
                        gc[i] += (0..p).map(|j| g[i * p + j] * av[i * p + j]).sum::<f64>();
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, nodes, *a);
                    for (o, &x) in ga.iter_mut().zip(&g) {
                        *o += x * s;
                    }
                }
                Op::AddScalar(a) => {
                    let ga = acc(&mut grads, nodes, *a);
                    for (o, &x) in ga.iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                Op::Relu(a) => {
                    let av = &nodes[a.0].value;
                    let ga = acc(&mut grads, nodes, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(av) {
                        if y > 0.0 {
                            *o += x;
                        }
                    }
                }
                Op::Square(a) => {
                    let av = &nodes[a.0].value;
                    let ga = acc(&mut grads, nodes, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(av) {
                        *o += 2.0 * x * y;
                    }
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    let ga = acc(&mut grads, nodes, *a);
                    for ((o, &x), &s) in ga.iter_mut().zip(&g).zip(out) {
                        *o += x * s * (1.0 - s);
                    }
                }
                Op::Log(a) => {
                    let av = &nodes[a.0].value;
                    let ga = acc(&mut grads, nodes, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(av) {
                        *o += x / y;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &nodes[a.0].value;
                    let ga = acc(&mut grads, nodes, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(av) {
                        if y > *lo && y < *hi {
                            *o += x;
                        }
                    }
                }
                Op::InvSqrtGuarded(a) => {
                    let av = &nodes[a.0].value;
                    let ga = acc(&mut grads, nodes, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(av) {
                        if y >= DEGREE_EPS {
                            *o += -0.5 * x * y.powf(-1.5);
                        }
                    }
                }
                Op::Gather(a, idx) => {
                    let ga = acc(&mut grads, nodes, *a);
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, &x) in ga[src * p..(src + 1) * p]
                            .iter_mut()
                            .zip(&g[r * p..(r + 1) * p])
                        {
                            *o += x;
                        }
                    }
                }
                Op::ScatterAdd(a, idx) => {
                    let ga = acc(&mut grads, nodes, *a);
                    for (r, &dst) in idx.iter().enumerate() {
                        for (o, &x) in ga[r * p..(r + 1) * p]
                            .iter_mut()
                            .zip(&g[dst * p..(dst + 1) * p])
                        {
                            *o += x;
                        }
                    }
                }
                Op::ColSlice(a, start) => {
                    let src_cols = nodes[a.0].cols;
                    let ga = acc(&mut grads, nodes, *a);
                    for i in 0..n {
                        for j in 0..p {
                            ga[i * src_cols + start + j] += g[i * p + j];
                        }
                    }
                }
                Op::HConcat(parts) => {
                    let mut offset = 0;
                    for v in parts {
                        let w = nodes[v.0].cols;
                        let gv = acc(&mut grads, nodes, *v);
                        for i in 0..n {
                            for j in 0..w {
                                gv[i * w + j] += g[i * p + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::RowCosine(a, b) => {
                    let w = nodes[a.0].cols;
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for i in 0..n {
                            let r = i * w..(i + 1) * w;
                            cosine_grad_into(&av[r.clone()], &bv[r.clone()], g[i], &mut ga[r]);
                        }
                    }
                    let gb = acc(&mut grads, nodes, *b);
                    for i in 0..n {
                        let r = i * w..(i + 1) * w;
                        cosine_grad_into(&bv[r.clone()], &av[r.clone()], g[i], &mut gb[r]);
                    }
                }
                Op::RowCosineVec(a, c) => {
                    let w = nodes[a.0].cols;
                    let av = &nodes[a.0].value;
                    let cv = &nodes[c.0].value;
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for i in 0..n {
                            let r = i * w..(i + 1) * w;
                            cosine_grad_into(&av[r.clone()], cv, g[i], &mut ga[r]);
                        }
                    }
                    let gc = acc(&mut grads, nodes, *c);
                    for i in 0..n {
                        cosine_grad_into(cv, &av[i * w..(i + 1) * w], g[i], gc);
                    }
                }
                Op::RowDot(a, b) => {
                    let w = nodes[a.0].cols;
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        let ga = acc(&mut grads, nodes, *a);
                        for i in 0..n {
                            for j in 0..w {
                                ga[i * w + j] += g[i] * bv[i * w + j];
                            }
                        }
                    }
                    let gb = acc(&mut grads, nodes, *b);
                    for i in 0..n {
                        for j in 0..w {
                            gb[i * w + j] += g[i] * av[i * w + j];
                        }
                    }
                }
                Op::SoftmaxRows(a, tau) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, nodes, *a);
                    for i in 0..n {
                        let r = i * p..(i + 1) * p;
                        let dot: f64 = g[r.clone()]
                            .iter()
                            .zip(&y[r.clone()])
                            .map(|(x, s)| x * s)
                            .sum();
                        for j in r {
                            ga[j] += y[j] * (g[j] - dot) / tau;
                        }
                    }
                }
                Op::RowSum(a) => {
                    let w = nodes[a.0].cols;
                    let ga = acc(&mut grads, nodes, *a);
                    for i in 0..n {
                        for o in &mut ga[i * w..(i + 1) * w] {
                            *o += g[i];
                        }
                    }
                }
                Op::Sum(a) => {
                    let ga = acc(&mut grads, nodes, *a);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
                Op::Mean(a) => {
                    let ga = acc(&mut grads, nodes, *a);
                    if !ga.is_empty() {
                        let s = g[0] / ga.len() as f64;
                        for o in ga.iter_mut() {
                            *o += s;
                        }
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Accumulate d`loss`/d`param` into every parameter loaded on this tape.
    ///
    /// Parameters not on the tape are left untouched (their gradient
    /// contribution is zero). Fails before writing anything if the loss is
    /// not finite.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.node_grads(loss)?;
        for (name, v) in &self.params {
            let Some(Some(g)) = grads.get(v.0) else {
                continue;
            };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        let mut names: Vec<(&String, &Var)> = self.params.iter().collect();
        names.sort();
        for (name, v) in names {
            if let Some(Some(g)) = grads.get(v.0) {
                let p = store.get_mut(name)?;
                for (o, &x) in p.grad.data_mut().iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to an arbitrary node (testing aid).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<f64>> {
        let grads = self.node_grads(loss)?;
        Ok(grads
            .get(wrt.0)
            .cloned()
            .flatten()
            .unwrap_or_else(|| vec![0.0; self.nodes[wrt.0].value.len()]))
    }
}
