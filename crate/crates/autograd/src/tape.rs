//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Tape`]; nodes are therefore in
//! topological order and `backward` is a single reverse sweep. All values are
//! treated as matrices (`rows x cols`); rank-1 leaves behave as row vectors.

use crate::error::TensorError;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// BCE probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
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
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Concat {
        parts: Vec<Var>,
    },
    Transpose {
        a: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        // activated gates, rows of [i | f | g | o]
        gates: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    Narrow {
        src: Var,
        start: usize,
    },
    Sigmoid {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Softmax {
        a: Var,
        mask: Option<Vec<bool>>,
    },
    Bce {
        p: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    rows: usize,
    cols: usize,
    requires_grad: bool,
    op: Op,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Result<Var, TensorError> {
        let (rows, cols) = value.dims2()?;
        self.nodes.push(Node {
            value,
            rows,
            cols,
            requires_grad,
            op,
        });
        self.grads.push(Vec::new());
        Ok(Var(self.nodes.len() - 1))
    }

    /// Inserts a leaf. Leaves with `requires_grad` receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var, TensorError> {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Accumulated gradient of leaf `v`, shaped like its value. `None` when no
    /// gradient reached the node.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        Tensor::new(shape, g.clone()).ok()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: vec![self.nodes[a.0].rows, self.nodes[a.0].cols],
            rhs: vec![self.nodes[b.0].rows, self.nodes[b.0].cols],
        }
    }

    /// `x * w^T + b` with `x: B x In`, `w: Out x In`, `b: Out` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (batch, fan_in) = self.dims(x);
        let (out, w_in) = self.dims(w);
        if w_in != fan_in {
            return Err(self.mismatch("linear", x, w));
        }
        let mut y = vec![0.0; batch * out];
        if let Some(b) = b {
            let (br, bc) = self.dims(b);
            if br != 1 || bc != out {
                return Err(self.mismatch("linear bias", w, b));
            }
            let bias = self.value(b).data();
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        gemm_nt(
            self.value(x).data(),
            self.value(w).data(),
            &mut y,
            batch,
            fan_in,
            out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::matrix(batch, out, y)?, rg, Op::Linear { x, w, b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut y = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut y, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, y)?, rg, Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("add", a, b));
        }
        let (r, c) = self.dims(a);
        let y = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, y)?, rg, Op::Add { a, b })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let (r, c) = self.dims(a);
        let y = self.value(a).data().iter().map(|x| x * factor).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, y)?, rg, Op::Scale { a, factor })
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let rows = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut y = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                y.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::matrix(rows, cols, y)?,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims(a);
        let src = self.value(a).data();
        let mut y = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                y[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(c, r, y)?, rg, Op::Transpose { a })
    }

    /// Gathers rows `ids` of `table` into a `ids.len() x cols` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (vocab, dim) = self.dims(table);
        let src = self.value(table);
        let mut y = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    index: id,
                    len: vocab,
                });
            }
            y.extend_from_slice(src.row_slice(id));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::matrix(ids.len(), dim, y)?,
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// One LSTM step over a batch, gate order `i, f, g, o`.
    ///
    /// Shapes: `x: B x In`, `h, c: B x H`, `w_ih: 4H x In`, `w_hh: 4H x H`,
    /// `b: 4H`. Returns `(h', c')`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<(Var, Var), TensorError> {
        let (batch, fan_in) = self.dims(x);
        let (hb, hidden) = self.dims(h);
        if hb != batch {
            return Err(self.mismatch("lstm_cell h", x, h));
        }
        if self.dims(c) != (batch, hidden) {
            return Err(self.mismatch("lstm_cell c", h, c));
        }
        if self.dims(w_ih) != (4 * hidden, fan_in) {
            return Err(self.mismatch("lstm_cell w_ih", x, w_ih));
        }
        if self.dims(w_hh) != (4 * hidden, hidden) {
            return Err(self.mismatch("lstm_cell w_hh", h, w_hh));
        }
        if self.dims(b) != (1, 4 * hidden) {
            return Err(self.mismatch("lstm_cell b", w_hh, b));
        }
        let g4 = 4 * hidden;
        let mut z = vec![0.0; batch * g4];
        let bias = self.value(b).data();
        for row in z.chunks_mut(g4) {
            row.copy_from_slice(bias);
        }
        gemm_nt(self.value(x).data(), self.value(w_ih).data(), &mut z, batch, fan_in, g4);
        gemm_nt(self.value(h).data(), self.value(w_hh).data(), &mut z, batch, hidden, g4);

        let c_prev = self.value(c).data();
        let mut out = vec![0.0; batch * 2 * hidden];
        let mut tanh_c = vec![0.0; batch * hidden];
        for r in 0..batch {
            let zr = &mut z[r * g4..(r + 1) * g4];
            for (k, v) in zr.iter_mut().enumerate() {
                *v = if (2 * hidden..3 * hidden).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
            for j in 0..hidden {
                let (i, f, g, o) = (zr[j], zr[hidden + j], zr[2 * hidden + j], zr[3 * hidden + j]);
                let cn = f * c_prev[r * hidden + j] + i * g;
                let tc = cn.tanh();
                tanh_c[r * hidden + j] = tc;
                out[r * 2 * hidden + j] = o * tc;
                out[r * 2 * hidden + hidden + j] = cn;
            }
        }
        let rg = [x, h, c, w_ih, w_hh, b].iter().any(|&v| self.rg(v));
        let cell = self.push(
            Tensor::matrix(batch, 2 * hidden, out)?,
            rg,
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                gates: z,
                tanh_c,
            },
        )?;
        let h_new = self.narrow(cell, 0, hidden)?;
        let c_new = self.narrow(cell, hidden, hidden)?;
        Ok((h_new, c_new))
    }

    /// Columns `start..start + len` of `src`.
    pub fn narrow(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims(src);
        if start + len > cols {
            return Err(TensorError::ShapeMismatch {
                op: "narrow",
                lhs: vec![rows, cols],
                rhs: vec![start, len],
            });
        }
        let v = self.value(src);
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&v.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(src);
        self.push(Tensor::matrix(rows, len, y)?, rg, Op::Narrow { src, start })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims(a);
        let y = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, y)?, rg, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims(a);
        let y = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, y)?, rg, Op::Tanh { a })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.softmax_impl(a, None)
    }

    /// Row-wise softmax where columns with `valid[j] == false` score `-inf`.
    /// A row with no valid column falls back to uniform weights, which carry
    /// no gradient.
    pub fn masked_softmax(&mut self, a: Var, valid: &[bool]) -> Result<Var, TensorError> {
        let (r, c) = self.dims(a);
        if valid.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                lhs: vec![r, c],
                rhs: vec![valid.len()],
            });
        }
        self.softmax_impl(a, Some(valid.to_vec()))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims(a);
        let src = self.value(a).data();
        let mut y = vec![0.0; rows * cols];
        let valid = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
        for r in 0..rows {
            let s = &src[r * cols..(r + 1) * cols];
            let out = &mut y[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&j| valid(j))
                .map(|j| s[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                out.iter_mut().for_each(|v| *v = 1.0 / cols as f64);
                continue;
            }
            let mut total = 0.0;
            for j in 0..cols {
                if valid(j) {
                    let e = (s[j] - max).exp();
                    out[j] = e;
                    total += e;
                }
            }
            out.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(rows, cols, y)?, rg, Op::Softmax { a, mask })
    }

    /// Mean binary cross-entropy of probabilities `p` against `targets`.
    pub fn bce_loss(&mut self, p: Var, targets: &[f64]) -> Result<Var, TensorError> {
        let (r, c) = self.dims(p);
        if targets.len() != r * c {
            return Err(TensorError::ShapeMismatch {
                op: "bce_loss",
                lhs: vec![r, c],
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss: f64 = self
            .value(p)
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        self.push(
            Tensor::scalar(loss),
            rg,
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
        )
    }

    /// Seeds `d loss / d loss = 1` and propagates to every leaf that requires
    /// a gradient. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarOutput(vec![r, c]));
        }
        self.backward_with(loss, &[1.0])
    }

    /// Propagates an explicit upstream gradient `seed` (shaped like `out`).
    pub fn backward_with(&mut self, out: Var, seed: &[f64]) -> Result<(), TensorError> {
        let n = self.nodes[out.0].value.len();
        if seed.len() != n {
            return Err(TensorError::DataLength {
                shape: self.nodes[out.0].value.shape().to_vec(),
                len: seed.len(),
            });
        }
        accumulate(&mut self.grads[out.0], n, |g| {
            g.iter_mut().zip(seed).for_each(|(g, s)| *g += s)
        });
        for i in (0..=out.0).rev() {
            if self.grads[i].is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            // the node's own gradient is complete once all later nodes ran
            let dy = std::mem::take(&mut self.grads[i]);
            self.propagate(i, &dy);
            // only leaves keep their gradient, so repeated calls accumulate cleanly
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = dy;
            }
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, dy: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let needs = |v: Var| nodes[v.0].requires_grad;
        let size = |v: Var| nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (batch, fan_in) = (nodes[x.0].rows, nodes[x.0].cols);
                let out = nodes[w.0].rows;
                if needs(*x) {
                    accumulate(&mut grads[x.0], size(*x), |g| {
                        gemm_nn(dy, nodes[w.0].value.data(), g, batch, out, fan_in)
                    });
                }
                if needs(*w) {
                    accumulate(&mut grads[w.0], size(*w), |g| {
                        gemm_tn(dy, nodes[x.0].value.data(), g, batch, out, fan_in)
                    });
                }
                if let Some(b) = b.filter(|&b| needs(b)) {
                    accumulate(&mut grads[b.0], out, |g| {
                        for row in dy.chunks(out) {
                            g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                        }
                    });
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                if needs(*a) {
                    accumulate(&mut grads[a.0], size(*a), |g| {
                        gemm_nt(dy, nodes[b.0].value.data(), g, m, n, k)
                    });
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], size(*b), |g| {
                        gemm_tn(nodes[a.0].value.data(), dy, g, m, k, n)
                    });
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if needs(*v) {
                        accumulate(&mut grads[v.0], dy.len(), |g| {
                            g.iter_mut().zip(dy).for_each(|(g, d)| *g += d)
                        });
                    }
                }
            }
            Op::Scale { a, factor } => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], dy.len(), |g| {
                        g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * factor)
                    });
                }
            }
            Op::Concat { parts } => {
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let (rows, cols) = (nodes[p.0].rows, nodes[p.0].cols);
                    if needs(*p) {
                        accumulate(&mut grads[p.0], rows * cols, |g| {
                            for r in 0..rows {
                                let src = &dy[r * total + offset..r * total + offset + cols];
                                g[r * cols..(r + 1) * cols]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(g, d)| *g += d);
                            }
                        });
                    }
                    offset += cols;
                }
            }
            Op::Transpose { a } => {
                if needs(*a) {
                    let (r, c) = (nodes[a.0].rows, nodes[a.0].cols);
                    accumulate(&mut grads[a.0], r * c, |g| {
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += dy[j * r + i];
                            }
                        }
                    });
                }
            }
            Op::Embedding { table, ids } => {
                if needs(*table) {
                    let dim = nodes[table.0].cols;
                    accumulate(&mut grads[table.0], size(*table), |g| {
                        for (row, &id) in ids.iter().enumerate() {
                            g[id * dim..(id + 1) * dim]
                                .iter_mut()
                                .zip(&dy[row * dim..(row + 1) * dim])
                                .for_each(|(g, d)| *g += d);
                        }
                    });
                }
            }
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                gates,
                tanh_c,
            } => {
                let (batch, fan_in) = (nodes[x.0].rows, nodes[x.0].cols);
                let hidden = nodes[h.0].cols;
                let g4 = 4 * hidden;
                let c_prev = nodes[c.0].value.data();
                let mut dz = vec![0.0; batch * g4];
                let mut dc_prev = vec![0.0; batch * hidden];
                for r in 0..batch {
                    let gr = &gates[r * g4..(r + 1) * g4];
                    let dzr = &mut dz[r * g4..(r + 1) * g4];
                    for j in 0..hidden {
                        let (ig, fg, gg, og) =
                            (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                        let tc = tanh_c[r * hidden + j];
                        let dh = dy[r * 2 * hidden + j];
                        let dc = dy[r * 2 * hidden + hidden + j] + dh * og * (1.0 - tc * tc);
                        dzr[j] = dc * gg * ig * (1.0 - ig);
                        dzr[hidden + j] = dc * c_prev[r * hidden + j] * fg * (1.0 - fg);
                        dzr[2 * hidden + j] = dc * ig * (1.0 - gg * gg);
                        dzr[3 * hidden + j] = dh * tc * og * (1.0 - og);
                        dc_prev[r * hidden + j] = dc * fg;
                    }
                }
                if needs(*x) {
                    accumulate(&mut grads[x.0], batch * fan_in, |g| {
                        gemm_nn(&dz, nodes[w_ih.0].value.data(), g, batch, g4, fan_in)
                    });
                }
                if needs(*h) {
                    accumulate(&mut grads[h.0], batch * hidden, |g| {
                        gemm_nn(&dz, nodes[w_hh.0].value.data(), g, batch, g4, hidden)
                    });
                }
                if needs(*c) {
                    accumulate(&mut grads[c.0], batch * hidden, |g| {
                        g.iter_mut().zip(&dc_prev).for_each(|(g, d)| *g += d)
                    });
                }
                if needs(*w_ih) {
                    accumulate(&mut grads[w_ih.0], g4 * fan_in, |g| {
                        gemm_tn(&dz, nodes[x.0].value.data(), g, batch, g4, fan_in)
                    });
                }
                if needs(*w_hh) {
                    accumulate(&mut grads[w_hh.0], g4 * hidden, |g| {
                        gemm_tn(&dz, nodes[h.0].value.data(), g, batch, g4, hidden)
                    });
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], g4, |g| {
                        for row in dz.chunks(g4) {
                            g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                        }
                    });
                }
            }
            Op::Narrow { src, start } => {
                if needs(*src) {
                    let (rows, cols) = (nodes[src.0].rows, nodes[src.0].cols);
                    let len = node.cols;
                    accumulate(&mut grads[src.0], rows * cols, |g| {
                        for r in 0..rows {
                            g[r * cols + start..r * cols + start + len]
                                .iter_mut()
                                .zip(&dy[r * len..(r + 1) * len])
                                .for_each(|(g, d)| *g += d);
                        }
                    });
                }
            }
            Op::Sigmoid { a } => {
                if needs(*a) {
                    let y = node.value.data();
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                            *g += d * y * (1.0 - y);
                        }
                    });
                }
            }
            Op::Tanh { a } => {
                if needs(*a) {
                    let y = node.value.data();
                    accumulate(&mut grads[a.0], y.len(), |g| {
                        for ((g, d), y) in g.iter_mut().zip(dy).zip(y) {
                            *g += d * (1.0 - y * y);
                        }
                    });
                }
            }
            Op::Softmax { a, mask } => {
                if needs(*a) {
                    let (rows, cols) = (node.rows, node.cols);
                    let y = node.value.data();
                    let valid = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
                    let fallback = mask.as_ref().is_some_and(|m| !m.iter().any(|&v| v));
                    if !fallback {
                        accumulate(&mut grads[a.0], rows * cols, |g| {
                            for r in 0..rows {
                                let yr = &y[r * cols..(r + 1) * cols];
                                let dr = &dy[r * cols..(r + 1) * cols];
                                let dot: f64 = (0..cols)
                                    .filter(|&j| valid(j))
                                    .map(|j| yr[j] * dr[j])
                                    .sum();
                                for j in (0..cols).filter(|&j| valid(j)) {
                                    g[r * cols + j] += yr[j] * (dr[j] - dot);
                                }
                            }
                        });
                    }
                }
            }
            Op::Bce { p, targets } => {
                if needs(*p) {
                    let n = targets.len() as f64;
                    let pv = nodes[p.0].value.data();
                    accumulate(&mut grads[p.0], targets.len(), |g| {
                        for ((g, &p), &t) in g.iter_mut().zip(pv).zip(targets) {
                            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                                continue;
                            }
                            *g += dy[0] * (p - t) / (p * (1.0 - p)) / n;
                        }
                    });
                }
            }
        }
    }
}

fn accumulate(slot: &mut Vec<f64>, len: usize, f: impl FnOnce(&mut [f64])) {
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    f(slot);
}
