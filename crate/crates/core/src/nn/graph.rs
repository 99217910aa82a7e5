//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every builder method on [`Graph`] evaluates its op eagerly, appends a node
//! holding the output and whatever the backward pass needs, and returns a
//! [`Var`] handle. Node order is creation order, so walking the node list
//! backwards is a valid reverse topological order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::ops;
use super::recurrent::{self, GruCache, LstmCache};
use super::{Activation, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Weights of one recurrent direction, already bound to the graph.
#[derive(Debug, Clone, Copy)]
pub struct RnnVars {
    /// `[in, gates * hidden]`
    pub w_ih: Var,
    /// `[hidden, gates * hidden]`
    pub w_hh: Var,
    /// `[gates * hidden]`
    pub bias: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Training,
    Inference,
}

/// Statistics produced by a batch-norm node in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) enum Op<T> {
    Leaf,
    Embedding {
        table: Var,
        indices: Vec<u32>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Act {
        x: Var,
        act: Activation,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    SelectStep {
        x: Var,
        t: usize,
    },
    ConcatLast {
        a: Var,
        b: Var,
    },
    Gru {
        x: Var,
        p: RnnVars,
        reverse: bool,
        cache: GruCache<T>,
    },
    Lstm {
        x: Var,
        p: RnnVars,
        reverse: bool,
        cache: LstmCache<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: BatchNormMode,
    },
    ApplyMask {
        x: Var,
        mask: Var,
    },
    Bce {
        pred: Var,
        targets: Vec<T>,
        weights: Vec<T>,
        count: usize,
    },
    Mae {
        pred: Var,
        targets: Vec<T>,
    },
    Mse {
        pred: Var,
        targets: Vec<T>,
    },
    MaskL2 {
        mask: Var,
        spans: Vec<(usize, usize)>,
    },
    MaskEntropy {
        mask: Var,
        spans: Vec<(usize, usize)>,
    },
    Dot {
        x: Var,
        w: Vec<T>,
    },
    Reshape {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Accumulated gradients, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed there.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like))
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Row lookup: `indices` is `[batch * len]`, output `[batch, len, dim]`.
    pub fn embedding(&mut self, table: Var, indices: &[u32], batch: usize) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 || batch == 0 || !indices.len().is_multiple_of(batch) {
            return Err(shape_err("embedding", format!("table {:?}", t.shape())));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &ix in indices {
            let ix = ix as usize;
            if ix >= vocab {
                return Err(Error::IndexOutOfRange {
                    index: ix,
                    size: vocab,
                });
            }
            out.extend_from_slice(&t.data()[ix * dim..(ix + 1) * dim]);
        }
        let value = Tensor::from_parts(vec![batch, indices.len() / batch, dim], out);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    /// Same-length width-3 convolution. `x: [B, L, Cin]`, `kernel: [3, Cin, Cout]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        let xs = xv.shape();
        let ks = kv.shape();
        if xs.len() != 3 || ks.len() != 3 || ks[0] != 3 || ks[1] != xs[2] || bv.len() != ks[2] {
            return Err(shape_err(
                "conv1d",
                format!("x {:?}, kernel {:?}, bias {:?}", xs, ks, bv.shape()),
            ));
        }
        let (b, l, cin, cout) = (xs[0], xs[1], xs[2], ks[2]);
        let out = ops::conv1d_forward(xv.data(), kv.data(), bv.data(), b, l, cin, cout);
        let value = Tensor::from_parts(vec![b, l, cout], out);
        Ok(self.push(value, Op::Conv1d { x, kernel, bias }, &[x, kernel, bias]))
    }

    /// Affine map over the last axis. `w: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ws = wv.shape();
        if ws.len() != 2 || ws[0] != xv.last_dim() || bv.len() != ws[1] {
            return Err(shape_err(
                "dense",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), ws, bv.shape()),
            ));
        }
        let (rows, din, dout) = (xv.rows(), ws[0], ws[1]);
        let out = ops::dense_forward(xv.data(), wv.data(), bv.data(), rows, din, dout);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let xv = self.value(x);
        let out: Vec<T> = xv.data().iter().map(|&v| act.apply(v)).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::Act { x, act }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v * c).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(value, Op::Scale { x, c }, &[x])
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// `x[:, t, :]` of a `[B, L, H]` sequence.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || t >= s[1] {
            return Err(shape_err("select_step", format!("{:?} at {}", s, t)));
        }
        let (b, l, h) = (s[0], s[1], s[2]);
        let mut out = Vec::with_capacity(b * h);
        for bi in 0..b {
            let off = (bi * l + t) * h;
            out.extend_from_slice(&xv.data()[off..off + h]);
        }
        Ok(self.push(Tensor::from_parts(vec![b, h], out), Op::SelectStep { x, t }, &[x]))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat_last", format!("{:?} vs {:?}", sa, sb)));
        }
        let (da, db) = (av.last_dim(), bv.last_dim());
        let rows = av.rows();
        let mut out = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            out.extend_from_slice(&av.data()[r * da..(r + 1) * da]);
            out.extend_from_slice(&bv.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        Ok(self.push(Tensor::from_parts(shape, out), Op::ConcatLast { a, b }, &[a, b]))
    }

    fn check_rnn(&self, x: Var, p: &RnnVars, gates: usize, op: &'static str) -> Result<[usize; 4]> {
        let xs = self.value(x).shape();
        let wi = self.value(p.w_ih).shape();
        let wh = self.value(p.w_hh).shape();
        let bl = self.value(p.bias).len();
        let ok = xs.len() == 3
            && wi.len() == 2
            && wh.len() == 2
            && wi[0] == xs[2]
            && wh[1] == gates * wh[0]
            && wi[1] == wh[1]
            && bl == wh[1];
        if !ok {
            return Err(shape_err(
                op,
                format!("x {:?}, w_ih {:?}, w_hh {:?}, bias {}", xs, wi, wh, bl),
            ));
        }
        Ok([xs[0], xs[1], xs[2], wh[0]])
    }

    /// Gated recurrent unit over `x: [B, L, C]` from a zero state. Output
    /// `[B, L, H]` with each step's hidden state at its input position, so a
    /// reversed pass lines up with the forward one.
    pub fn gru(&mut self, x: Var, p: RnnVars, reverse: bool) -> Result<Var> {
        let [b, l, c, h] = self.check_rnn(x, &p, 3, "gru")?;
        let (out, cache) = recurrent::gru_forward(
            self.value(x).data(),
            self.value(p.w_ih).data(),
            self.value(p.w_hh).data(),
            self.value(p.bias).data(),
            [b, l, c, h],
            reverse,
        );
        let value = Tensor::from_parts(vec![b, l, h], out);
        Ok(self.push(
            value,
            Op::Gru {
                x,
                p,
                reverse,
                cache,
            },
            &[x, p.w_ih, p.w_hh, p.bias],
        ))
    }

    /// Long short-term memory layer; same layout conventions as [`gru`](Self::gru).
    pub fn lstm(&mut self, x: Var, p: RnnVars, reverse: bool) -> Result<Var> {
        let [b, l, c, h] = self.check_rnn(x, &p, 4, "lstm")?;
        let (out, cache) = recurrent::lstm_forward(
            self.value(x).data(),
            self.value(p.w_ih).data(),
            self.value(p.w_hh).data(),
            self.value(p.bias).data(),
            [b, l, c, h],
            reverse,
        );
        let value = Tensor::from_parts(vec![b, l, h], out);
        Ok(self.push(
            value,
            Op::Lstm {
                x,
                p,
                reverse,
                cache,
            },
            &[x, p.w_ih, p.w_hh, p.bias],
        ))
    }

    /// Batch normalization over every axis but the last.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running averages; in inference mode `running` supplies them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xv = self.value(x);
        let f = xv.last_dim();
        let n = xv.rows();
        if self.value(gamma).len() != f || self.value(beta).len() != f {
            return Err(shape_err("batch_norm", format!("x {:?}", xv.shape())));
        }
        let (mean, var, stats) = match mode {
            BatchNormMode::Training => {
                if n < 2 {
                    return Err(Error::DegenerateBatch);
                }
                let (mean, var) = ops::moments(xv.data(), n, f);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Inference => {
                let (rm, rv) = running
                    .ok_or_else(|| Error::Config("inference batch norm needs running stats".into()))?;
                if rm.len() != f || rv.len() != f {
                    return Err(shape_err("batch_norm", format!("running stats for {} features", f)));
                }
                (rm.to_vec(), rv.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(n * f);
        let mut out = Vec::with_capacity(n * f);
        for (i, &v) in xv.data().iter().enumerate() {
            let j = i % f;
            let h = (v - mean[j]) * inv_std[j];
            xhat.push(h);
            out.push(g[j] * h + bt[j]);
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let var_out = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
            &[x, gamma, beta],
        );
        Ok((var_out, stats))
    }

    /// Scales each position of `x: [B, L, C]` by `mask: [B, L]`.
    pub fn apply_mask(&mut self, x: Var, mask: Var) -> Result<Var> {
        let (xv, mv) = (self.value(x), self.value(mask));
        let xs = xv.shape();
        if xs.len() != 3 || mv.shape() != &xs[..2] {
            return Err(shape_err("apply_mask", format!("x {:?}, mask {:?}", xs, mv.shape())));
        }
        if let Some(&neg) = mv.data().iter().find(|v| **v < T::zero()) {
            return Err(Error::NegativeMask(neg.as_f64()));
        }
        let c = xs[2];
        let out = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * mv.data()[i / c])
            .collect();
        let value = Tensor::from_parts(xs.to_vec(), out);
        Ok(self.push(value, Op::ApplyMask { x, mask }, &[x, mask]))
    }

    /// Binary cross-entropy averaged over entries whose `weights` is 1.
    /// Predictions are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, pred: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let pv = self.value(pred);
        if targets.len() != pv.len() || weights.len() != pv.len() {
            return Err(shape_err("bce", format!("pred {:?}", pv.shape())));
        }
        let count = weights.iter().filter(|w| **w != T::zero()).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let lo = T::from_f64(ops::BCE_CLAMP);
        let hi = T::one() - lo;
        let mut total = T::zero();
        for ((&p, &t), &w) in pv.data().iter().zip(targets).zip(weights) {
            if w == T::zero() {
                continue;
            }
            let p = p.max(lo).min(hi);
            total += -(t * p.ln() + (T::one() - t) * (T::one() - p).ln());
        }
        let value = Tensor::scalar(total / T::from_f64(count as f64));
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                count,
            },
            &[pred],
        ))
    }

    /// Mean absolute error.
    pub fn mae(&mut self, pred: Var, targets: &[T]) -> Result<Var> {
        let pv = self.value(pred);
        if targets.len() != pv.len() || targets.is_empty() {
            return Err(shape_err("mae", format!("pred {:?}, {} targets", pv.shape(), targets.len())));
        }
        let n = T::from_f64(targets.len() as f64);
        let total: T = pv.data().iter().zip(targets).map(|(&p, &t)| (p - t).abs()).sum();
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Mae {
                pred,
                targets: targets.to_vec(),
            },
            &[pred],
        ))
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: Var, targets: &[T]) -> Result<Var> {
        let pv = self.value(pred);
        if targets.len() != pv.len() || targets.is_empty() {
            return Err(shape_err("mse", format!("pred {:?}, {} targets", pv.shape(), targets.len())));
        }
        let n = T::from_f64(targets.len() as f64);
        let total: T = pv.data().iter().zip(targets).map(|(&p, &t)| (p - t) * (p - t)).sum();
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Mse {
                pred,
                targets: targets.to_vec(),
            },
            &[pred],
        ))
    }

    fn check_spans(&self, mask: Var, spans: &[(usize, usize)], op: &'static str) -> Result<usize> {
        let s = self.value(mask).shape();
        let ok = s.len() == 2
            && s[0] == spans.len()
            && spans.iter().all(|&(a, b)| a < b && b <= s[1]);
        if !ok {
            return Err(shape_err(op, format!("mask {:?}, spans {:?}", s, spans)));
        }
        Ok(s[1])
    }

    /// Batch mean of the Euclidean norm of each row of `mask: [B, L]`
    /// restricted to its content span.
    pub fn mask_l2(&mut self, mask: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let l = self.check_spans(mask, spans, "mask_l2")?;
        let m = self.value(mask).data();
        let mut total = T::zero();
        for (b, &(s, e)) in spans.iter().enumerate() {
            total += ops::norm2(&m[b * l + s..b * l + e]);
        }
        let value = Tensor::scalar(total / T::from_f64(spans.len() as f64));
        Ok(self.push(
            value,
            Op::MaskL2 {
                mask,
                spans: spans.to_vec(),
            },
            &[mask],
        ))
    }

    /// Batch mean of the Shannon entropy of each row of `mask` normalized to
    /// sum to one over its content span.
    pub fn mask_entropy(&mut self, mask: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let l = self.check_spans(mask, spans, "mask_entropy")?;
        let m = self.value(mask).data();
        let mut total = T::zero();
        for (b, &(s, e)) in spans.iter().enumerate() {
            total += ops::entropy(&m[b * l + s..b * l + e]);
        }
        let value = Tensor::scalar(total / T::from_f64(spans.len() as f64));
        Ok(self.push(
            value,
            Op::MaskEntropy {
                mask,
                spans: spans.to_vec(),
            },
            &[mask],
        ))
    }

    /// `sum(x * w)` for a constant `w`; turns any tensor into a scalar with
    /// well-scaled gradients.
    pub fn dot_const(&mut self, x: Var, w: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if w.len() != xv.len() {
            return Err(shape_err("dot_const", format!("x {:?}, w {}", xv.shape(), w.len())));
        }
        let s: T = xv.data().iter().zip(w).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, w: w.to_vec() }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let mut acc = |v: Var, d: Vec<T>| {
            let shape = self.nodes[v.0].value.shape();
            let t = Tensor::from_parts(shape.to_vec(), d);
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Embedding { table, indices } => {
                if self.wants(*table) {
                    let tv = self.value(*table);
                    let dim = tv.shape()[1];
                    let mut d = vec![T::zero(); tv.len()];
                    for (pos, &ix) in indices.iter().enumerate() {
                        let row = &mut d[ix as usize * dim..(ix as usize + 1) * dim];
                        for (r, &gv) in row.iter_mut().zip(&gd[pos * dim..(pos + 1) * dim]) {
                            *r += gv;
                        }
                    }
                    acc(*table, d);
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let xv = self.value(*x);
                let kv = self.value(*kernel);
                let s = xv.shape();
                let (b, l, cin, cout) = (s[0], s[1], s[2], kv.shape()[2]);
                let (dx, dk, db) = ops::conv1d_backward(
                    xv.data(),
                    kv.data(),
                    gd,
                    b,
                    l,
                    cin,
                    cout,
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if self.wants(*kernel) {
                    acc(*kernel, dk);
                }
                if self.wants(*bias) {
                    acc(*bias, db);
                }
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (rows, din, dout) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                let (dx, dw, db) =
                    ops::dense_backward(xv.data(), wv.data(), gd, rows, din, dout, self.wants(*x));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    acc(*w, dw);
                }
                if self.wants(*b) {
                    acc(*b, db);
                }
            }
            Op::Act { x, act } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let d = gd
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(&g, (&xi, &yi))| g * act.derivative(xi, yi))
                    .collect();
                acc(*x, d);
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    acc(*a, gd.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, gd.to_vec());
                }
            }
            Op::Scale { x, c } => acc(*x, gd.iter().map(|&v| v * *c).collect()),
            Op::SelectStep { x, t } => {
                let s = self.value(*x).shape();
                let (b, l, h) = (s[0], s[1], s[2]);
                let mut d = vec![T::zero(); b * l * h];
                for bi in 0..b {
                    let off = (bi * l + t) * h;
                    d[off..off + h].copy_from_slice(&gd[bi * h..(bi + 1) * h]);
                }
                acc(*x, d);
            }
            Op::ConcatLast { a, b } => {
                let (da, db) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let rows = self.value(*a).rows();
                let w = da + db;
                if self.wants(*a) {
                    let d = (0..rows)
                        .flat_map(|r| gd[r * w..r * w + da].iter().copied())
                        .collect();
                    acc(*a, d);
                }
                if self.wants(*b) {
                    let d = (0..rows)
                        .flat_map(|r| gd[r * w + da..(r + 1) * w].iter().copied())
                        .collect();
                    acc(*b, d);
                }
            }
            Op::Gru {
                x,
                p,
                reverse,
                cache,
            } => {
                let s = self.value(*x).shape();
                let h = self.value(p.w_hh).shape()[0];
                let grads_out = recurrent::gru_backward(
                    self.value(*x).data(),
                    self.value(p.w_ih).data(),
                    self.value(p.w_hh).data(),
                    node.value.data(),
                    cache,
                    gd,
                    [s[0], s[1], s[2], h],
                    *reverse,
                    self.wants(*x),
                );
                if let Some(dx) = grads_out.dx {
                    acc(*x, dx);
                }
                acc(p.w_ih, grads_out.dw_ih);
                acc(p.w_hh, grads_out.dw_hh);
                acc(p.bias, grads_out.db);
            }
            Op::Lstm {
                x,
                p,
                reverse,
                cache,
            } => {
                let s = self.value(*x).shape();
                let h = self.value(p.w_hh).shape()[0];
                let grads_out = recurrent::lstm_backward(
                    self.value(*x).data(),
                    self.value(p.w_ih).data(),
                    self.value(p.w_hh).data(),
                    node.value.data(),
                    cache,
                    gd,
                    [s[0], s[1], s[2], h],
                    *reverse,
                    self.wants(*x),
                );
                if let Some(dx) = grads_out.dx {
                    acc(*x, dx);
                }
                acc(p.w_ih, grads_out.dw_ih);
                acc(p.w_hh, grads_out.dw_hh);
                acc(p.bias, grads_out.db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let f = inv_std.len();
                let n = xhat.len() / f;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); f];
                let mut dbeta = vec![T::zero(); f];
                for (i, (&g, &h)) in gd.iter().zip(xhat).enumerate() {
                    dgamma[i % f] += g * h;
                    dbeta[i % f] += g;
                }
                if self.wants(*x) {
                    let nf = T::from_f64(n as f64);
                    let dx = match mode {
                        BatchNormMode::Inference => gd
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * gv[i % f] * inv_std[i % f])
                            .collect(),
                        BatchNormMode::Training => {
                            // dxhat = g * gamma; sums over the batch are dbeta*gamma
                            // and dgamma*gamma.
                            gd.iter()
                                .zip(xhat)
                                .enumerate()
                                .map(|(i, (&g, &h))| {
                                    let j = i % f;
                                    gv[j] * inv_std[j] / nf
                                        * (nf * g - dbeta[j] - h * dgamma[j])
                                })
                                .collect()
                        }
                    };
                    acc(*x, dx);
                }
                if self.wants(*gamma) {
                    acc(*gamma, dgamma);
                }
                if self.wants(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::ApplyMask { x, mask } => {
                let xv = self.value(*x);
                let mv = self.value(*mask).data();
                let c = xv.last_dim();
                if self.wants(*x) {
                    let d = gd.iter().enumerate().map(|(i, &g)| g * mv[i / c]).collect();
                    acc(*x, d);
                }
                if self.wants(*mask) {
                    let d = gd
                        .chunks(c)
                        .zip(xv.data().chunks(c))
                        .map(|(g, xr)| g.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    acc(*mask, d);
                }
            }
            Op::Bce {
                pred,
                targets,
                weights,
                count,
            } => {
                let pv = self.value(*pred).data();
                let lo = T::from_f64(ops::BCE_CLAMP);
                let hi = T::one() - lo;
                let scale = gd[0] / T::from_f64(*count as f64);
                let d = pv
                    .iter()
                    .zip(targets.iter().zip(weights))
                    .map(|(&p, (&t, &w))| {
                        if w == T::zero() || p < lo || p > hi {
                            T::zero()
                        } else {
                            scale * (p - t) / (p * (T::one() - p))
                        }
                    })
                    .collect();
                acc(*pred, d);
            }
            Op::Mae { pred, targets } => {
                let pv = self.value(*pred).data();
                let scale = gd[0] / T::from_f64(targets.len() as f64);
                let d = pv
                    .iter()
                    .zip(targets)
                    .map(|(&p, &t)| {
                        if p > t {
                            scale
                        } else if p < t {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*pred, d);
            }
            Op::Mse { pred, targets } => {
                let pv = self.value(*pred).data();
                let scale = gd[0] * T::from_f64(2.0 / targets.len() as f64);
                let d = pv.iter().zip(targets).map(|(&p, &t)| scale * (p - t)).collect();
                acc(*pred, d);
            }
            Op::MaskL2 { mask, spans } => {
                let mv = self.value(*mask);
                let l = mv.shape()[1];
                let scale = gd[0] / T::from_f64(spans.len() as f64);
                let mut d = vec![T::zero(); mv.len()];
                for (b, &(s, e)) in spans.iter().enumerate() {
                    let row = &mv.data()[b * l + s..b * l + e];
                    let norm = ops::norm2(row);
                    if norm > T::zero() {
                        for (k, &v) in row.iter().enumerate() {
                            d[b * l + s + k] = scale * v / norm;
                        }
                    }
                }
                acc(*mask, d);
            }
            Op::MaskEntropy { mask, spans } => {
                let mv = self.value(*mask);
                let l = mv.shape()[1];
                let scale = gd[0] / T::from_f64(spans.len() as f64);
                let mut d = vec![T::zero(); mv.len()];
                for (b, &(s, e)) in spans.iter().enumerate() {
                    let row = &mv.data()[b * l + s..b * l + e];
                    ops::entropy_grad(row, scale, &mut d[b * l + s..b * l + e]);
                }
                acc(*mask, d);
            }
            Op::Dot { x, w } => acc(*x, w.iter().map(|&wi| wi * gd[0]).collect()),
            Op::Reshape { x } => acc(*x, gd.to_vec()),
        }
    }
}
