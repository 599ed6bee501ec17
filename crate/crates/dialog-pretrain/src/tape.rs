//! Reverse-mode automatic differentiation over a linear trace.
//!
//! Forward calls record primitive applications in order; `backward` replays
//! the trace once in reverse, accumulating vector-Jacobian products. The
//! primitive set is exactly what the dialog models need: matrix products,
//! elementwise arithmetic, activations, (log-)softmax, embedding lookup,
//! dropout, reductions, slicing.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Real};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// Handle to a value produced on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Primitive operations the tape understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    Multiply,
    Concat,
    Tanh,
    Sigmoid,
    Softmax,
    LogSoftmax,
    EmbeddingLookup,
    Dropout,
    Sum,
    Mean,
    Slice,
    Reshape,
    Scale,
}

struct Node<F> {
    values: Vec<F>,
    shape: Vec<usize>,
    needs_grad: bool,
}

enum Record<F> {
    Matmul {
        a: usize,
        b: usize,
        out: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
        out: usize,
    },
    Multiply {
        a: usize,
        b: usize,
        out: usize,
    },
    Concat {
        inputs: Vec<usize>,
        out: usize,
    },
    Tanh {
        x: usize,
        out: usize,
    },
    Sigmoid {
        x: usize,
        out: usize,
    },
    Softmax {
        x: usize,
        out: usize,
    },
    LogSoftmax {
        x: usize,
        out: usize,
    },
    EmbeddingLookup {
        table: usize,
        indices: Vec<usize>,
        out: usize,
        width: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<F>,
        out: usize,
    },
    Sum {
        x: usize,
        out: usize,
    },
    Mean {
        x: usize,
        out: usize,
    },
    Slice {
        x: usize,
        offset: usize,
        out: usize,
    },
    Reshape {
        x: usize,
        out: usize,
    },
    Scale {
        x: usize,
        factor: F,
        out: usize,
    },
}

/// Recording trace plus value arena.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    records: Vec<Record<F>>,
    grads: Vec<Option<Vec<F>>>,
    param_vars: BTreeMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// Evaluation-only tape: computes values, records nothing.
    pub fn no_grad() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            records: Vec::new(),
            grads: Vec::new(),
            param_vars: BTreeMap::new(),
            grad_enabled,
        }
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    fn push(&mut self, values: Vec<F>, shape: Vec<usize>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            values,
            shape,
            needs_grad: needs_grad && self.grad_enabled,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn values(&self, v: Var) -> &[F] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> F {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Put a parameter on the tape as a leaf. Repeated calls for the same
    /// parameter return the same leaf so gradients from all uses accumulate.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(t.values.clone(), t.shape.clone(), t.requires_grad);
        self.param_vars.insert(id, v);
        v
    }

    /// Constant leaf (never receives gradient).
    pub fn constant(&mut self, values: Vec<F>, shape: Vec<usize>) -> Var {
        self.push(values, shape, false)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.constant(vec![F::zero(); len], vec![len])
    }

    // ── primitives ──────────────────────────────────────────────────

    /// `a` is (m×k). `b` is (k×n) giving an (m×n) result, or a length-k
    /// vector giving a length-m result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() != 2 {
            return Err(Error::BadShape {
                op: "matmul",
                expected: "2-d lhs",
                got: ash,
            });
        }
        let (m, k) = (ash[0], ash[1]);
        let (n, vec_rhs) = match bsh.len() {
            1 => (1, true),
            2 => (bsh[1], false),
            _ => {
                return Err(Error::BadShape {
                    op: "matmul",
                    expected: "1-d or 2-d rhs",
                    got: bsh,
                })
            }
        };
        if bsh[0] != k {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ash,
                rhs: bsh,
            });
        }
        let mut out = vec![F::zero(); m * n];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for i in 0..m {
                for kk in 0..k {
                    let aik = av[i * k + kk];
                    if n == 1 {
                        out[i] = out[i] + aik * bv[kk];
                    } else {
                        let row = kk * n;
                        let orow = i * n;
                        for j in 0..n {
                            out[orow + j] = out[orow + j] + aik * bv[row + j];
                        }
                    }
                }
            }
        }
        let shape = if vec_rhs { vec![m] } else { vec![m, n] };
        let needs = self.needs(a) || self.needs(b);
        let o = self.push(out, shape, needs);
        if needs {
            self.records.push(Record::Matmul {
                a: a.0,
                b: b.0,
                out: o.0,
                m,
                k,
                n,
            });
        }
        Ok(o)
    }

    fn elementwise2(&mut self, op: OpKind, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: match op {
                    OpKind::Add => "add",
                    _ => "multiply",
                },
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| match op {
                OpKind::Add => x + y,
                _ => x * y,
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        let o = self.push(values, shape, needs);
        if needs {
            let rec = match op {
                OpKind::Add => Record::Add {
                    a: a.0,
                    b: b.0,
                    out: o.0,
                },
                _ => Record::Multiply {
                    a: a.0,
                    b: b.0,
                    out: o.0,
                },
            };
            self.records.push(rec);
        }
        Ok(o)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(OpKind::Add, a, b)
    }

    pub fn multiply(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2(OpKind::Multiply, a, b)
    }

    /// Concatenate 1-d vectors.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::BadShape {
                op: "concat",
                expected: "at least one input",
                got: vec![],
            });
        }
        let mut values = Vec::new();
        let mut needs = false;
        for &v in inputs {
            if self.shape(v).len() != 1 {
                return Err(Error::BadShape {
                    op: "concat",
                    expected: "1-d inputs",
                    got: self.shape(v).to_vec(),
                });
            }
            values.extend_from_slice(&self.nodes[v.0].values);
            needs |= self.needs(v);
        }
        let len = values.len();
        let o = self.push(values, vec![len], needs);
        if needs {
            self.records.push(Record::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
                out: o.0,
            });
        }
        Ok(o)
    }

    fn unary(&mut self, op: OpKind, x: Var) -> Var {
        let values: Vec<F> = match op {
            OpKind::Tanh => self.nodes[x.0].values.iter().map(|v| v.tanh()).collect(),
            OpKind::Sigmoid => self.nodes[x.0]
                .values
                .iter()
                .map(|&v| stable_sigmoid(v))
                .collect(),
            _ => unreachable!(),
        };
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        let o = self.push(values, shape, needs);
        if needs {
            let rec = match op {
                OpKind::Tanh => Record::Tanh { x: x.0, out: o.0 },
                _ => Record::Sigmoid { x: x.0, out: o.0 },
            };
            self.records.push(rec);
        }
        o
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(OpKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(OpKind::Sigmoid, x)
    }

    fn check_1d(&self, op: &'static str, x: Var) -> Result<()> {
        if self.shape(x).len() != 1 {
            return Err(Error::BadShape {
                op,
                expected: "1-d input",
                got: self.shape(x).to_vec(),
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_1d("softmax", x)?;
        let values = softmax_values(&self.nodes[x.0].values);
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        let o = self.push(values, shape, needs);
        if needs {
            self.records.push(Record::Softmax { x: x.0, out: o.0 });
        }
        Ok(o)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_1d("log_softmax", x)?;
        let xs = &self.nodes[x.0].values;
        let max = xs.iter().cloned().fold(F::neg_infinity(), F::max);
        let log_sum = xs
            .iter()
            .map(|&v| (v - max).exp())
            .fold(F::zero(), |a, b| a + b)
            .ln();
        let values: Vec<F> = xs.iter().map(|&v| v - max - log_sum).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        let o = self.push(values, shape, needs);
        if needs {
            self.records.push(Record::LogSoftmax { x: x.0, out: o.0 });
        }
        Ok(o)
    }

    /// Gather rows of a (V×E) table; output is (N×E).
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tsh = self.shape(table).to_vec();
        if tsh.len() != 2 {
            return Err(Error::BadShape {
                op: "embedding_lookup",
                expected: "2-d table",
                got: tsh,
            });
        }
        let (vocab, width) = (tsh[0], tsh[1]);
        let mut values = Vec::with_capacity(indices.len() * width);
        for &idx in indices {
            if idx >= vocab {
                return Err(Error::InvalidArgument(format!(
                    "embedding index {idx} out of range for table of {vocab} rows"
                )));
            }
            values.extend_from_slice(&self.nodes[table.0].values[idx * width..(idx + 1) * width]);
        }
        let needs = self.needs(table);
        let o = self.push(values, vec![indices.len(), width], needs);
        if needs {
            self.records.push(Record::EmbeddingLookup {
                table: table.0,
                indices: indices.to_vec(),
                out: o.0,
                width,
            });
        }
        Ok(o)
    }

    /// Inverted dropout. In eval mode (or rate 0) this is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, rng: &mut ChaCha20Rng) -> Var {
        if !train || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let scale = F::from_f64c(1.0 / keep);
        let mask: Vec<F> = (0..self.nodes[x.0].values.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    F::zero()
                }
            })
            .collect();
        let values: Vec<F> = self.nodes[x.0]
            .values
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        let o = self.push(values, shape, needs);
        if needs {
            self.records.push(Record::Dropout {
                x: x.0,
                mask,
                out: o.0,
            });
        }
        o
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0]
            .values
            .iter()
            .fold(F::zero(), |a, &b| a + b);
        let needs = self.needs(x);
        let o = self.push(vec![total], vec![1], needs);
        if needs {
            self.records.push(Record::Sum { x: x.0, out: o.0 });
        }
        o
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = F::from_f64c(self.nodes[x.0].values.len() as f64);
        let total = self.nodes[x.0]
            .values
            .iter()
            .fold(F::zero(), |a, &b| a + b);
        let needs = self.needs(x);
        let o = self.push(vec![total / n], vec![1], needs);
        if needs {
            self.records.push(Record::Mean { x: x.0, out: o.0 });
        }
        o
    }

    /// Contiguous slice of the flattened input; result is 1-d.
    pub fn slice(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        let total = self.nodes[x.0].values.len();
        if offset + len > total {
            return Err(Error::InvalidArgument(format!(
                "slice [{offset}, {}) out of range for {total} elements",
                offset + len
            )));
        }
        let values = self.nodes[x.0].values[offset..offset + len].to_vec();
        let needs = self.needs(x);
        let o = self.push(values, vec![len], needs);
        if needs {
            self.records.push(Record::Slice {
                x: x.0,
                offset,
                out: o.0,
            });
        }
        Ok(o)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.nodes[x.0].values.len() {
            return Err(Error::BadShape {
                op: "reshape",
                expected: "matching element count",
                got: shape,
            });
        }
        let values = self.nodes[x.0].values.clone();
        let needs = self.needs(x);
        let o = self.push(values, shape, needs);
        if needs {
            self.records.push(Record::Reshape { x: x.0, out: o.0 });
        }
        Ok(o)
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let values: Vec<F> = self.nodes[x.0].values.iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        let o = self.push(values, shape, needs);
        if needs {
            self.records.push(Record::Scale {
                x: x.0,
                factor,
                out: o.0,
            });
        }
        o
    }

    /// Dot product of two equal-length vectors; scalar result.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.nodes[a.0].values.len();
        let row = self.reshape(a, vec![1, n])?;
        self.matmul(row, b)
    }

    // ── backward ────────────────────────────────────────────────────

    fn accum(&mut self, node: usize, grad: &[F]) {
        if !self.nodes[node].needs_grad {
            return;
        }
        match &mut self.grads[node] {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(grad) {
                    *gi = *gi + d;
                }
            }
            None => self.grads[node] = Some(grad.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. Every recorded application is
    /// visited exactly once, in reverse order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::LossNotScalar(self.shape(loss).to_vec()));
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for ri in (0..self.records.len()).rev() {
            self.step_backward(ri);
        }
        Ok(())
    }

    fn step_backward(&mut self, ri: usize) {
        macro_rules! out_grad {
            ($out:expr) => {
                match self.grads[$out].clone() {
                    Some(g) => g,
                    None => return,
                }
            };
        }
        // Records are taken apart by index to keep borrows local.
        match &self.records[ri] {
            &Record::Matmul { a, b, out, m, k, n } => {
                let dy = out_grad!(out);
                if self.nodes[a].needs_grad {
                    let bv = &self.nodes[b].values;
                    let mut da = vec![F::zero(); m * k];
                    for i in 0..m {
                        for j in 0..k {
                            let mut acc = F::zero();
                            for c in 0..n {
                                acc = acc + dy[i * n + c] * bv[j * n + c];
                            }
                            da[i * k + j] = acc;
                        }
                    }
                    self.accum(a, &da);
                }
                if self.nodes[b].needs_grad {
                    let av = &self.nodes[a].values;
                    let mut db = vec![F::zero(); k * n];
                    for j in 0..k {
                        for c in 0..n {
                            let mut acc = F::zero();
                            for i in 0..m {
                                acc = acc + av[i * k + j] * dy[i * n + c];
                            }
                            db[j * n + c] = acc;
                        }
                    }
                    self.accum(b, &db);
                }
            }
            &Record::Add { a, b, out } => {
                let dy = out_grad!(out);
                self.accum(a, &dy);
                self.accum(b, &dy);
            }
            &Record::Multiply { a, b, out } => {
                let dy = out_grad!(out);
                if self.nodes[a].needs_grad {
                    let da: Vec<F> = dy
                        .iter()
                        .zip(&self.nodes[b].values)
                        .map(|(&d, &v)| d * v)
                        .collect();
                    self.accum(a, &da);
                }
                if self.nodes[b].needs_grad {
                    let db: Vec<F> = dy
                        .iter()
                        .zip(&self.nodes[a].values)
                        .map(|(&d, &v)| d * v)
                        .collect();
                    self.accum(b, &db);
                }
            }
            Record::Concat { inputs, out } => {
                let inputs = inputs.clone();
                let dy = out_grad!(*out);
                let mut off = 0;
                for inp in inputs {
                    let len = self.nodes[inp].values.len();
                    let piece: Vec<F> = dy[off..off + len].to_vec();
                    self.accum(inp, &piece);
                    off += len;
                }
            }
            &Record::Tanh { x, out } => {
                let dy = out_grad!(out);
                let dx: Vec<F> = dy
                    .iter()
                    .zip(&self.nodes[out].values)
                    .map(|(&d, &y)| d * (F::one() - y * y))
                    .collect();
                self.accum(x, &dx);
            }
            &Record::Sigmoid { x, out } => {
                let dy = out_grad!(out);
                let dx: Vec<F> = dy
                    .iter()
                    .zip(&self.nodes[out].values)
                    .map(|(&d, &y)| d * y * (F::one() - y))
                    .collect();
                self.accum(x, &dx);
            }
            &Record::Softmax { x, out } => {
                let dy = out_grad!(out);
                let y = &self.nodes[out].values;
                let inner = dy
                    .iter()
                    .zip(y)
                    .map(|(&d, &yi)| d * yi)
                    .fold(F::zero(), |a, b| a + b);
                let dx: Vec<F> = dy
                    .iter()
                    .zip(y)
                    .map(|(&d, &yi)| yi * (d - inner))
                    .collect();
                self.accum(x, &dx);
            }
            &Record::LogSoftmax { x, out } => {
                let dy = out_grad!(out);
                let total = dy.iter().fold(F::zero(), |a, &b| a + b);
                let dx: Vec<F> = dy
                    .iter()
                    .zip(&self.nodes[out].values)
                    .map(|(&d, &ly)| d - ly.exp() * total)
                    .collect();
                self.accum(x, &dx);
            }
            Record::EmbeddingLookup {
                table,
                indices,
                out,
                width,
            } => {
                let (table, width) = (*table, *width);
                let indices = indices.clone();
                let dy = out_grad!(*out);
                let mut dt = vec![F::zero(); self.nodes[table].values.len()];
                for (row, &idx) in indices.iter().enumerate() {
                    for c in 0..width {
                        dt[idx * width + c] = dt[idx * width + c] + dy[row * width + c];
                    }
                }
                self.accum(table, &dt);
            }
            Record::Dropout { x, mask, out } => {
                let x = *x;
                let mask = mask.clone();
                let dy = out_grad!(*out);
                let dx: Vec<F> = dy.iter().zip(&mask).map(|(&d, &m)| d * m).collect();
                self.accum(x, &dx);
            }
            &Record::Sum { x, out } => {
                let dy = out_grad!(out);
                let dx = vec![dy[0]; self.nodes[x].values.len()];
                self.accum(x, &dx);
            }
            &Record::Mean { x, out } => {
                let dy = out_grad!(out);
                let n = F::from_f64c(self.nodes[x].values.len() as f64);
                let dx = vec![dy[0] / n; self.nodes[x].values.len()];
                self.accum(x, &dx);
            }
            &Record::Slice { x, offset, out } => {
                let dy = out_grad!(out);
                let mut dx = vec![F::zero(); self.nodes[x].values.len()];
                dx[offset..offset + dy.len()].copy_from_slice(&dy);
                self.accum(x, &dx);
            }
            &Record::Reshape { x, out } => {
                let dy = out_grad!(out);
                self.accum(x, &dy);
            }
            &Record::Scale { x, factor, out } => {
                let dy = out_grad!(out);
                let dx: Vec<F> = dy.iter().map(|&d| d * factor).collect();
                self.accum(x, &dx);
            }
        }
    }

    /// Gradient of a tape value after `backward`; zeros if nothing flowed.
    pub fn grad(&self, v: Var) -> Vec<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![F::zero(); self.nodes[v.0].values.len()],
        }
    }

    /// Write accumulated gradients into the store's grad slots. Parameters
    /// used on this tape but unreachable from the loss get explicit zeros.
    pub fn write_param_grads(&self, store: &mut ParamStore<F>) {
        for (&pid, &var) in &self.param_vars {
            if !store.get(pid).requires_grad {
                continue;
            }
            let g = self.grad(var);
            let slot = &mut store.get_mut(pid).grad;
            match slot {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(&g) {
                        *e = *e + *v;
                    }
                }
                None => *slot = Some(g),
            }
        }
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn stable_sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softmax_values<F: Real>(xs: &[F]) -> Vec<F> {
    let max = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = xs.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}
