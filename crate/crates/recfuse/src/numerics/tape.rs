use super::optim::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;
use std::collections::BTreeMap;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type Sink<'a> = dyn FnMut(usize, Tensor) + 'a;
type BackFn = Box<dyn Fn(&Tape, &Tensor, &mut Sink<'_>)>;

struct Node {
    value: Tensor,
    backward: Option<BackFn>,
}

/// Single-use computation graph. One tape per forward pass; parameters are
/// copied in as leaves and their gradients collected by name after
/// `backward`. Distinct tapes share no state, so independent samples may be
/// processed on distinct threads.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, String)>,
}

fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] * b[n×k]^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[k×n] += a[m×k]^T * b[m×n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, backward: Option<BackFn>) -> Var {
        self.nodes.push(Node { value, backward });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, None)
    }

    /// Copy a named parameter onto the tape; its gradient will be reported
    /// under that name by [`Tape::param_grads`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NumericsError> {
        let t = store.get(name)?.clone();
        let v = self.push(t, None);
        self.params.push((v.0, name.to_string()));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                sink(a.0, g.clone());
                sink(b.0, g.clone());
            })),
        ))
    }

    pub fn add_many(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        let mut it = vars.iter();
        let first = *it.next().ok_or(NumericsError::EmptyInput { op: "add_many" })?;
        let mut acc = first;
        for &v in it {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Add a bias row vector to every row of a matrix.
    pub fn add_bias(&mut self, mat: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tm, tb) = (self.value(mat), self.value(bias));
        if tm.shape().len() != 2 || tb.shape() != [tm.cols()] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: tm.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let n = tm.cols();
        let mut data = tm.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(tm.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                sink(mat.0, g.clone());
                let n = g.shape()[1];
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                sink(bias.0, Tensor::vector(gb));
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(t.value(b).data())
                    .map(|(g, y)| g * y)
                    .collect();
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(t.value(a).data())
                    .map(|(g, x)| g * x)
                    .collect();
                let shape = g.shape().to_vec();
                sink(a.0, Tensor::new(shape.clone(), ga).unwrap());
                sink(b.0, Tensor::new(shape, gb).unwrap());
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                let gd = g.data().iter().map(|x| x * c).collect();
                sink(a.0, Tensor::new(g.shape().to_vec(), gd).unwrap());
            })),
        )
    }

    /// Multiply every element of `a` by a 1-element scalar variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let ts = self.value(s);
        if ts.numel() != 1 {
            return Err(NumericsError::BadShape {
                op: "scale_by",
                expected: "scalar",
                got: ts.shape().to_vec(),
            });
        }
        let sv = ts.item();
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * sv).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let sv = t.value(s).item();
                let ga = g.data().iter().map(|x| x * sv).collect();
                sink(a.0, Tensor::new(g.shape().to_vec(), ga).unwrap());
                let gs: f64 = g.data().iter().zip(t.value(a).data()).map(|(g, x)| g * x).sum();
                sink(s.0, Tensor::scalar(gs));
            })),
        ))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(t.value(a).data())
                    .map(|(g, &x)| g * df(x))
                    .collect();
                sink(a.0, Tensor::new(g.shape().to_vec(), ga).unwrap());
            })),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// ELU with alpha 1: smooth for x<0, identity for x>=0.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x >= 0.0 { x } else { x.exp() - 1.0 },
            |x| if x >= 0.0 { 1.0 } else { x.exp() },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_scalar, |x| {
            let s = sigmoid_scalar(x);
            s * (1.0 - s)
        })
    }

    // ---- matrix ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = vec![0.0; m * n];
        mm_nn(ta.data(), tb.data(), m, k, n, &mut data);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let (ta, tb) = (t.value(a), t.value(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut ga = vec![0.0; m * k];
                mm_nt(g.data(), tb.data(), m, n, k, &mut ga);
                let mut gb = vec![0.0; k * n];
                mm_tn(ta.data(), g.data(), m, k, n, &mut gb);
                sink(a.0, Tensor::new(vec![m, k], ga).unwrap());
                sink(b.0, Tensor::new(vec![k, n], gb).unwrap());
            })),
        ))
    }

    /// a[m×k] @ b[n×k]^T -> [m×n]
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut data = vec![0.0; m * n];
        mm_nt(ta.data(), tb.data(), m, k, n, &mut data);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let (ta, tb) = (t.value(a), t.value(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                // dA = G @ B, dB = G^T @ A
                let mut ga = vec![0.0; m * k];
                mm_nn(g.data(), tb.data(), m, n, k, &mut ga);
                let mut gb = vec![0.0; n * k];
                mm_tn(g.data(), ta.data(), m, n, k, &mut gb);
                sink(a.0, Tensor::new(vec![m, k], ga).unwrap());
                sink(b.0, Tensor::new(vec![n, k], gb).unwrap());
            })),
        ))
    }

    /// W[m×n] @ x[n] -> [m]
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumericsError> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.shape().len() != 2 || tx.shape() != [tw.cols()] {
            return Err(NumericsError::ShapeMismatch {
                op: "matvec",
                lhs: tw.shape().to_vec(),
                rhs: tx.shape().to_vec(),
            });
        }
        let (m, n) = (tw.rows(), tw.cols());
        let mut data = vec![0.0; m];
        for i in 0..m {
            let row = &tw.data()[i * n..(i + 1) * n];
            data[i] = row.iter().zip(tx.data()).map(|(a, b)| a * b).sum();
        }
        let out = Tensor::vector(data);
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let (tw, tx) = (t.value(w), t.value(x));
                let (m, n) = (tw.rows(), tw.cols());
                let mut gw = vec![0.0; m * n];
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi != 0.0 {
                        for (o, &xv) in gw[i * n..(i + 1) * n].iter_mut().zip(tx.data()) {
                            *o += gi * xv;
                        }
                    }
                }
                let mut gx = vec![0.0; n];
                for i in 0..m {
                    let gi = g.data()[i];
                    if gi != 0.0 {
                        for (o, &wv) in gx.iter_mut().zip(&tw.data()[i * n..(i + 1) * n]) {
                            *o += gi * wv;
                        }
                    }
                }
                sink(w.0, Tensor::new(vec![m, n], gw).unwrap());
                sink(x.0, Tensor::vector(gx));
            })),
        ))
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(NumericsError::BadShape {
                op: "reshape",
                expected: "same element count",
                got: shape,
            });
        }
        let old_shape = ta.shape().to_vec();
        let out = Tensor::new(shape, ta.data().to_vec())?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                sink(a.0, Tensor::new(old_shape.clone(), g.data().to_vec()).unwrap());
            })),
        ))
    }

    /// Concatenate 1-D vectors.
    pub fn concat(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput { op: "concat" });
        }
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(vars.len());
        for &v in vars {
            let t = self.value(v);
            if t.shape().len() != 1 {
                return Err(NumericsError::BadShape {
                    op: "concat",
                    expected: "1-D vectors",
                    got: t.shape().to_vec(),
                });
            }
            lens.push(t.numel());
            data.extend_from_slice(t.data());
        }
        let ids: Vec<usize> = vars.iter().map(|v| v.0).collect();
        let out = Tensor::vector(data);
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                let mut off = 0;
                for (&id, &len) in ids.iter().zip(&lens) {
                    sink(id, Tensor::vector(g.data()[off..off + len].to_vec()));
                    off += len;
                }
            })),
        ))
    }

    /// Stack equal-length 1-D vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput { op: "stack_rows" });
        }
        let n = self.value(vars[0]).numel();
        let mut data = Vec::with_capacity(vars.len() * n);
        for &v in vars {
            let t = self.value(v);
            if t.shape() != [n] {
                return Err(NumericsError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![n],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let ids: Vec<usize> = vars.iter().map(|v| v.0).collect();
        let out = Tensor::new(vec![vars.len(), n], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                let n = g.shape()[1];
                for (i, &id) in ids.iter().enumerate() {
                    sink(id, Tensor::vector(g.data()[i * n..(i + 1) * n].to_vec()));
                }
            })),
        ))
    }

    /// Stack 1-element scalars into a vector.
    pub fn stack_scalars(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput { op: "stack_scalars" });
        }
        let mut data = Vec::with_capacity(vars.len());
        for &v in vars {
            let t = self.value(v);
            if t.numel() != 1 {
                return Err(NumericsError::BadShape {
                    op: "stack_scalars",
                    expected: "scalar",
                    got: t.shape().to_vec(),
                });
            }
            data.push(t.item());
        }
        let ids: Vec<usize> = vars.iter().map(|v| v.0).collect();
        let out = Tensor::vector(data);
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                for (i, &id) in ids.iter().enumerate() {
                    sink(id, Tensor::scalar(g.data()[i]));
                }
            })),
        ))
    }

    pub fn index(&mut self, v: Var, i: usize) -> Result<Var, NumericsError> {
        let t = self.value(v);
        if t.shape().len() != 1 || i >= t.numel() {
            return Err(NumericsError::IndexOutOfBounds {
                op: "index",
                index: i,
                size: t.numel(),
            });
        }
        let out = Tensor::scalar(t.data()[i]);
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let n = t.value(v).numel();
                let mut gd = vec![0.0; n];
                gd[i] = g.item();
                sink(v.0, Tensor::vector(gd));
            })),
        ))
    }

    /// Row i of a matrix as a 1-D vector.
    pub fn slice_row(&mut self, mat: Var, i: usize) -> Result<Var, NumericsError> {
        let t = self.value(mat);
        if t.shape().len() != 2 || i >= t.rows() {
            return Err(NumericsError::IndexOutOfBounds {
                op: "slice_row",
                index: i,
                size: t.shape().first().copied().unwrap_or(0),
            });
        }
        let n = t.cols();
        let out = Tensor::vector(t.data()[i * n..(i + 1) * n].to_vec());
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let (m, n) = (t.value(mat).rows(), t.value(mat).cols());
                let mut gd = vec![0.0; m * n];
                gd[i * n..(i + 1) * n].copy_from_slice(g.data());
                sink(mat.0, Tensor::new(vec![m, n], gd).unwrap());
            })),
        ))
    }

    /// Columns [start, end) of a matrix.
    pub fn slice_cols(&mut self, mat: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let t = self.value(mat);
        if t.shape().len() != 2 || end > t.cols() || start >= end {
            return Err(NumericsError::IndexOutOfBounds {
                op: "slice_cols",
                index: end,
                size: if t.shape().len() == 2 { t.cols() } else { 0 },
            });
        }
        let (m, n) = (t.rows(), t.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&t.data()[i * n + start..i * n + end]);
        }
        let out = Tensor::new(vec![m, w], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let (m, n) = (t.value(mat).rows(), t.value(mat).cols());
                let w = end - start;
                let mut gd = vec![0.0; m * n];
                for i in 0..m {
                    gd[i * n + start..i * n + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                sink(mat.0, Tensor::new(vec![m, n], gd).unwrap());
            })),
        ))
    }

    /// Horizontally concatenate matrices with equal row counts.
    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput { op: "concat_cols" });
        }
        let m = self.value(vars[0]).rows();
        let widths: Vec<usize> = vars.iter().map(|&v| self.value(v).cols()).collect();
        for &v in vars {
            if self.value(v).rows() != m {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![m],
                    rhs: self.value(v).shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &v in vars {
                let t = self.value(v);
                let w = t.cols();
                data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
        }
        let ids: Vec<usize> = vars.iter().map(|v| v.0).collect();
        let out = Tensor::new(vec![m, total], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                let m = g.rows();
                let total = g.cols();
                let mut off = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    let mut gd = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gd.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    sink(id, Tensor::new(vec![m, w], gd).unwrap());
                    off += w;
                }
            })),
        ))
    }

    /// Copy of `mat` with row i replaced by `row`.
    pub fn set_row(&mut self, mat: Var, i: usize, row: Var) -> Result<Var, NumericsError> {
        let (tm, tr) = (self.value(mat), self.value(row));
        if tm.shape().len() != 2 || i >= tm.rows() || tr.shape() != [tm.cols()] {
            return Err(NumericsError::ShapeMismatch {
                op: "set_row",
                lhs: tm.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let n = tm.cols();
        let mut data = tm.data().to_vec();
        data[i * n..(i + 1) * n].copy_from_slice(tr.data());
        let out = Tensor::new(tm.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                let n = g.cols();
                let mut gm = g.data().to_vec();
                let grow = gm[i * n..(i + 1) * n].to_vec();
                for x in &mut gm[i * n..(i + 1) * n] {
                    *x = 0.0;
                }
                sink(mat.0, Tensor::new(g.shape().to_vec(), gm).unwrap());
                sink(row.0, Tensor::vector(grow));
            })),
        ))
    }

    /// Gather rows of an embedding table; backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(NumericsError::BadShape {
                op: "gather_rows",
                expected: "2-D table",
                got: t.shape().to_vec(),
            });
        }
        let (m, n) = (t.rows(), t.cols());
        if indices.is_empty() {
            return Err(NumericsError::EmptyInput { op: "gather_rows" });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(NumericsError::IndexOutOfBounds {
                op: "gather_rows",
                index: bad,
                size: m,
            });
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
        }
        let idx = indices.to_vec();
        let out = Tensor::new(vec![indices.len(), n], data)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let (m, n) = (t.value(table).rows(), t.value(table).cols());
                let mut gt = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &gv) in gt[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g.data()[r * n..(r + 1) * n])
                    {
                        *o += gv;
                    }
                }
                sink(table.0, Tensor::new(vec![m, n], gt).unwrap());
            })),
        ))
    }

    /// Single embedding lookup, returned as a 1-D vector.
    pub fn row(&mut self, table: Var, i: usize) -> Result<Var, NumericsError> {
        let g = self.gather_rows(table, &[i])?;
        let n = self.value(g).cols();
        self.reshape(g, vec![n])
    }

    // ---- reductions & nonlinear heads ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |t, g, sink| {
                let shape = t.value(a).shape().to_vec();
                sink(a.0, Tensor::filled(&shape, g.item()));
            })),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Some(Box::new(move |t, g, sink| {
                let gv = g.item();
                let ga: Vec<f64> = t.value(b).data().iter().map(|y| gv * y).collect();
                let gb: Vec<f64> = t.value(a).data().iter().map(|x| gv * x).collect();
                sink(a.0, Tensor::new(t.value(a).shape().to_vec(), ga).unwrap());
                sink(b.0, Tensor::new(t.value(b).shape().to_vec(), gb).unwrap());
            })),
        ))
    }

    /// Cosine similarity of two 1-D vectors.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || ta.shape().len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "cosine",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let na = ta.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = tb.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(NumericsError::ZeroNorm { op: "cosine" });
        }
        let d: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let cos = d / (na * nb);
        Ok(self.push(
            Tensor::scalar(cos),
            Some(Box::new(move |t, g, sink| {
                let (ta, tb) = (t.value(a), t.value(b));
                let na = ta.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = tb.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                let d: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
                let cos = d / (na * nb);
                let gv = g.item();
                let ga: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&x, &y)| gv * (y / (na * nb) - cos * x / (na * na)))
                    .collect();
                let gb: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&x, &y)| gv * (x / (na * nb) - cos * y / (nb * nb)))
                    .collect();
                sink(a.0, Tensor::vector(ga));
                sink(b.0, Tensor::vector(gb));
            })),
        ))
    }

    /// Numerically stable softmax over a 1-D vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if ta.shape().len() != 1 || ta.numel() == 0 {
            return Err(NumericsError::EmptyInput { op: "softmax" });
        }
        let p = softmax_slice(ta.data());
        Ok(self.push(
            Tensor::vector(p.clone()),
            Some(Box::new(move |_t, g, sink| {
                let dot: f64 = g.data().iter().zip(&p).map(|(g, p)| g * p).sum();
                let ga: Vec<f64> = g.data().iter().zip(&p).map(|(g, p)| p * (g - dot)).collect();
                sink(a.0, Tensor::vector(ga));
            })),
        ))
    }

    /// Row-wise softmax over the causal prefix: row i is normalized over
    /// columns 0..=i, columns above the diagonal are zero.
    pub fn causal_row_softmax(&mut self, scores: Var) -> Result<Var, NumericsError> {
        let t = self.value(scores);
        if t.shape().len() != 2 || t.rows() != t.cols() {
            return Err(NumericsError::BadShape {
                op: "causal_row_softmax",
                expected: "square matrix",
                got: t.shape().to_vec(),
            });
        }
        let n = t.rows();
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            let row = &t.data()[i * n..i * n + i + 1];
            let p = softmax_slice(row);
            probs[i * n..i * n + i + 1].copy_from_slice(&p);
        }
        let probs_saved = probs.clone();
        let out = Tensor::new(vec![n, n], probs)?;
        Ok(self.push(
            out,
            Some(Box::new(move |_t, g, sink| {
                let n = g.rows();
                let mut gs = vec![0.0; n * n];
                for i in 0..n {
                    let p = &probs_saved[i * n..i * n + i + 1];
                    let grow = &g.data()[i * n..i * n + i + 1];
                    let dot: f64 = grow.iter().zip(p).map(|(g, p)| g * p).sum();
                    for (o, (&gv, &pv)) in gs[i * n..i * n + i + 1]
                        .iter_mut()
                        .zip(grow.iter().zip(p))
                    {
                        *o = pv * (gv - dot);
                    }
                }
                sink(scores.0, Tensor::new(vec![n, n], gs).unwrap());
            })),
        ))
    }

    /// Layer normalization applied to each row, with learnable gain and bias.
    pub fn layer_norm_rows(
        &mut self,
        mat: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (tm, tg, tb) = (self.value(mat), self.value(gain), self.value(bias));
        if tm.shape().len() != 2 || tg.shape() != [tm.cols()] || tb.shape() != [tm.cols()] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm_rows",
                lhs: tm.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let (m, n) = (tm.rows(), tm.cols());
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &tm.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                let h = (row[j] - mean) * istd;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            out,
            Some(Box::new(move |t, g, sink| {
                let tg = t.value(gain);
                let (m, n) = (g.rows(), g.cols());
                let nf = n as f64;
                let mut gm = vec![0.0; m * n];
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    let hrow = &xhat[i * n..(i + 1) * n];
                    let istd = inv_std[i];
                    // dxhat = g * gain
                    let dxhat: Vec<f64> = grow
                        .iter()
                        .zip(tg.data())
                        .map(|(g, w)| g * w)
                        .collect();
                    let sum_dx: f64 = dxhat.iter().sum();
                    let sum_dxh: f64 = dxhat.iter().zip(hrow).map(|(d, h)| d * h).sum();
                    for j in 0..n {
                        gm[i * n + j] =
                            istd * (dxhat[j] - sum_dx / nf - hrow[j] * sum_dxh / nf);
                        gg[j] += grow[j] * hrow[j];
                        gb[j] += grow[j];
                    }
                }
                sink(mat.0, Tensor::new(vec![m, n], gm).unwrap());
                sink(gain.0, Tensor::vector(gg));
                sink(bias.0, Tensor::vector(gb));
            })),
        ))
    }

    /// Cross entropy of a logits vector against a target class index.
    pub fn cross_entropy_row(&mut self, logits: Var, target: usize) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if t.shape().len() != 1 || target >= t.numel() {
            return Err(NumericsError::IndexOutOfBounds {
                op: "cross_entropy_row",
                index: target,
                size: t.numel(),
            });
        }
        let p = softmax_slice(t.data());
        let loss = -p[target].max(1e-300).ln();
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |_t, g, sink| {
                let gv = g.item();
                let mut gd: Vec<f64> = p.iter().map(|&pi| gv * pi).collect();
                gd[target] -= gv;
                sink(logits.0, Tensor::vector(gd));
            })),
        ))
    }

    /// Binary cross entropy of a predicted probability against a {0,1} label.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var, NumericsError> {
        let tp = self.value(p);
        if tp.numel() != 1 {
            return Err(NumericsError::BadShape {
                op: "bce",
                expected: "scalar probability",
                got: tp.shape().to_vec(),
            });
        }
        let pv = tp.item().clamp(1e-12, 1.0 - 1e-12);
        let loss = -(label * pv.ln() + (1.0 - label) * (1.0 - pv).ln());
        Ok(self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |t, g, sink| {
                let pv = t.value(p).item().clamp(1e-12, 1.0 - 1e-12);
                let d = -label / pv + (1.0 - label) / (1.0 - pv);
                sink(p.0, Tensor::scalar(g.item() * d));
            })),
        ))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss; returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor>>, NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::BadShape {
                op: "backward",
                expected: "scalar loss",
                got: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &self.nodes[id].backward {
                let mut sink = |pid: usize, contrib: Tensor| {
                    match &mut grads[pid] {
                        Some(acc) => {
                            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                                *a += c;
                            }
                        }
                        slot => *slot = Some(contrib),
                    }
                };
                back(self, &g, &mut sink);
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    /// Run backward and collect gradients of the named parameters,
    /// accumulating across repeated uses of the same parameter.
    pub fn param_grads(&self, loss: Var) -> Result<BTreeMap<String, Tensor>, NumericsError> {
        let grads = self.backward(loss)?;
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (id, name) in &self.params {
            let g = match &grads[*id] {
                Some(g) => g.clone(),
                None => Tensor::zeros(self.nodes[*id].value.shape()),
            };
            match out.get_mut(name) {
                Some(acc) => {
                    for (a, c) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += c;
                    }
                }
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a slice.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_identity_exact() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let i = t.constant(Tensor::eye(2));
        let out = t.matmul(a, i).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
        let out2 = t.matmul(i, a).unwrap();
        assert_eq!(t.value(out2).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero_and_hand_expansion() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let z = t.constant(Tensor::new(vec![2, 1], vec![0.0, 0.0]).unwrap());
        let out = t.matmul(a, z).unwrap();
        assert_eq!(t.value(out).data(), &[0.0]);

        let b = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = t.constant(Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap());
        let out = t.matmul(b, c).unwrap();
        assert_eq!(t.value(out).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let msg = t.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let single = t.constant(Tensor::vector(vec![42.0]));
        let s = t.softmax(single).unwrap();
        assert_eq!(t.value(s).data(), &[1.0]);

        let sym = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let s = t.softmax(sym).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);

        let v = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = t.softmax(v).unwrap();
        let p = t.value(s).data();
        approx(p[0], 0.09003057317038046, 1e-12);
        approx(p[1], 0.24472847105479767, 1e-12);
        approx(p[2], 0.6652409557748219, 1e-12);
        approx(p.iter().sum::<f64>(), 1.0, 1e-12);
    }

    #[test]
    fn softmax_empty_is_error() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::vector(vec![]));
        assert!(t.softmax(v).is_err());
    }

    #[test]
    fn leaky_relu_examples() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::vector(vec![1.0, 0.0, -1.0]));
        let out = t.leaky_relu(v, 0.2);
        assert_eq!(t.value(out).data(), &[1.0, 0.0, -0.2]);
    }

    #[test]
    fn sigmoid_examples() {
        approx(sigmoid_scalar(0.0), 0.5, 1e-15);
        approx(sigmoid_scalar(1.0), 0.7310585786300049, 1e-12);
        approx(sigmoid_scalar(-1.0), 0.2689414213699951, 1e-12);
        approx(sigmoid_scalar(1.0) + sigmoid_scalar(-1.0), 1.0, 1e-15);
    }

    #[test]
    fn backward_accumulates_through_shared_input() {
        // y = sum(x * x) => dy/dx = 2x
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads[0].as_ref().unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn causal_softmax_rows_normalize_over_prefix() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::new(vec![3, 3], vec![1.0, 9.0, 9.0, 0.5, 0.5, 9.0, 1.0, 2.0, 3.0]).unwrap());
        let p = t.causal_row_softmax(s).unwrap();
        let pv = t.value(p);
        assert_eq!(pv.at2(0, 0), 1.0);
        assert_eq!(pv.at2(0, 1), 0.0);
        approx(pv.at2(1, 0) + pv.at2(1, 1), 1.0, 1e-12);
        assert_eq!(pv.at2(1, 2), 0.0);
        approx(pv.at2(2, 0) + pv.at2(2, 1) + pv.at2(2, 2), 1.0, 1e-12);
    }

    #[test]
    fn cosine_self_is_one() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0, -3.0]));
        let c = t.cosine(a, a).unwrap();
        approx(t.value(c).item(), 1.0, 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let b = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(t.cosine(a, b).is_err());
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::scalar(0.5));
        let l = t.bce(p, 1.0).unwrap();
        approx(t.value(l).item(), std::f64::consts::LN_2, 1e-12);
    }
}
