//! The four recurrent architecture classes and inference.
//!
//! Every class shares one pipeline: embedding, an optional width-3 conv with
//! ReLU, a bidirectional recurrent layer returning its sequence, a second
//! bidirectional layer reduced to its final states, and a dense head.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{EncodedSmiles, Vocabulary, ENCODED_LEN};
use crate::nn::{init, Activation, Graph, ParamStore, Real, RnnVars, Tensor, Var};
use crate::seed;
use crate::{Error, Result};

/// Rows per forward pass in [`Model::predict_indices`].
pub const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchClass {
    Gru,
    Lstm,
    CnnGru,
    CnnLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Gru,
    Lstm,
}

impl Cell {
    pub fn gates(self) -> usize {
        match self {
            Cell::Gru => 3,
            Cell::Lstm => 4,
        }
    }
}

impl ArchClass {
    pub const ALL: [ArchClass; 4] = [ArchClass::Gru, ArchClass::Lstm, ArchClass::CnnGru, ArchClass::CnnLstm];

    pub fn has_conv(self) -> bool {
        matches!(self, ArchClass::CnnGru | ArchClass::CnnLstm)
    }

    pub fn cell(self) -> Cell {
        match self {
            ArchClass::Gru | ArchClass::CnnGru => Cell::Gru,
            ArchClass::Lstm | ArchClass::CnnLstm => Cell::Lstm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchClass::Gru => "gru",
            ArchClass::Lstm => "lstm",
            ArchClass::CnnGru => "cnn-gru",
            ArchClass::CnnLstm => "cnn-lstm",
        }
    }
}

impl fmt::Display for ArchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        ArchClass::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown architecture class {:?}", s)))
    }
}

/// Inclusive arithmetic range `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRange {
    pub lo: usize,
    pub hi: usize,
    pub step: usize,
}

impl GridRange {
    pub const fn new(lo: usize, hi: usize, step: usize) -> Self {
        Self { lo, hi, step }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo) / self.step + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: usize) -> bool {
        v >= self.lo && v <= self.hi && (v - self.lo).is_multiple_of(self.step)
    }

    pub fn value(&self, i: usize) -> usize {
        self.lo + i * self.step
    }

    pub fn index_of(&self, v: usize) -> Option<usize> {
        self.contains(v).then(|| (v - self.lo) / self.step)
    }
}

pub const EM_GRID: GridRange = GridRange::new(10, 60, 10);
pub const CONV_GRID: GridRange = GridRange::new(4, 192, 4);
pub const RNN_GRID: GridRange = GridRange::new(8, 384, 8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperParams {
    pub em_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_filters: Option<usize>,
    pub rnn1_units: usize,
    pub rnn2_units: usize,
}

impl HyperParams {
    /// Checks that the sizes fit `arch` (conv present exactly for CNN
    /// classes, every width positive) without requiring grid membership.
    pub fn check_shape(&self, arch: ArchClass) -> Result<()> {
        match (arch.has_conv(), self.conv_filters) {
            (true, None) => {
                return Err(Error::HyperParams(format!("{} needs conv_filters", arch)));
            }
            (false, Some(_)) => {
                return Err(Error::HyperParams(format!("{} has no conv layer", arch)));
            }
            (true, Some(0)) => return Err(Error::HyperParams("conv_filters must be positive".into())),
            _ => {}
        }
        if self.em_size == 0 || self.rnn1_units == 0 || self.rnn2_units == 0 {
            return Err(Error::HyperParams("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// [`check_shape`](Self::check_shape) plus membership in the search grid.
    pub fn check_grid(&self, arch: ArchClass) -> Result<()> {
        self.check_shape(arch)?;
        let off = |what: &str, v: usize, g: GridRange| {
            Error::HyperParams(format!(
                "{} = {} is off the grid {}..={} step {}",
                what, v, g.lo, g.hi, g.step
            ))
        };
        if !EM_GRID.contains(self.em_size) {
            return Err(off("em_size", self.em_size, EM_GRID));
        }
        if let Some(c) = self.conv_filters {
            if !CONV_GRID.contains(c) {
                return Err(off("conv_filters", c, CONV_GRID));
            }
        }
        for (what, v) in [("rnn1_units", self.rnn1_units), ("rnn2_units", self.rnn2_units)] {
            if !RNN_GRID.contains(v) {
                return Err(off(what, v, RNN_GRID));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_type: TaskType,
    pub n_outputs: usize,
}

impl TaskSpec {
    pub fn regression() -> Self {
        Self {
            task_type: TaskType::Regression,
            n_outputs: 1,
        }
    }

    pub fn classification(n_outputs: usize) -> Self {
        Self {
            task_type: TaskType::Classification,
            n_outputs,
        }
    }

    pub fn is_classification(&self) -> bool {
        self.task_type == TaskType::Classification
    }

    pub fn head_activation(&self) -> Activation {
        match self.task_type {
            TaskType::Classification => Activation::Sigmoid,
            TaskType::Regression => Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_outputs == 0 {
            return Err(Error::Config("task needs at least one output".into()));
        }
        if self.task_type == TaskType::Regression && self.n_outputs != 1 {
            return Err(Error::Config("regression tasks have a single output".into()));
        }
        Ok(())
    }
}

/// Closed-form number of trainable scalars.
pub fn param_count(arch: ArchClass, hp: &HyperParams, task: &TaskSpec, vocab_size: usize) -> usize {
    let g = arch.cell().gates();
    let rnn = |c: usize, h: usize| 2 * g * h * (c + h + 1);
    let mut n = vocab_size * hp.em_size;
    let mut c = hp.em_size;
    if let Some(f) = hp.conv_filters {
        n += 3 * c * f + f;
        c = f;
    }
    n += rnn(c, hp.rnn1_units);
    n += rnn(2 * hp.rnn1_units, hp.rnn2_units);
    n + (2 * hp.rnn2_units + 1) * task.n_outputs
}

/// Slot numbers of each layer inside the parameter store.
#[derive(Debug, Clone, Copy)]
struct Layout {
    embedding: usize,
    conv: Option<(usize, usize)>,
    /// `[layer][direction]`, each `(w_ih, w_hh, bias)`.
    rnn: [[(usize, usize, usize); 2]; 2],
    head: (usize, usize),
}

impl Layout {
    fn new(arch: ArchClass) -> Self {
        let mut next = 1;
        let conv = arch.has_conv().then(|| {
            next += 2;
            (1, 2)
        });
        let mut rnn = [[(0, 0, 0); 2]; 2];
        for layer in &mut rnn {
            for dir in layer.iter_mut() {
                *dir = (next, next + 1, next + 2);
                next += 3;
            }
        }
        Self {
            embedding: 0,
            conv,
            rnn,
            head: (next, next + 1),
        }
    }
}

const DIRS: [&str; 2] = ["fwd", "bwd"];

/// Expected `(name, shape)` of every parameter, in slot order.
fn param_shapes(arch: ArchClass, hp: &HyperParams, task: &TaskSpec, vocab_size: usize) -> Vec<(String, Vec<usize>)> {
    let g = arch.cell().gates();
    let mut out = Vec::new();
    out.push(("embedding".to_string(), alloc::vec![vocab_size, hp.em_size]));
    let mut c = hp.em_size;
    if let Some(f) = hp.conv_filters {
        out.push(("conv.kernel".to_string(), alloc::vec![3, c, f]));
        out.push(("conv.bias".to_string(), alloc::vec![f]));
        c = f;
    }
    for (layer, h) in [(1, hp.rnn1_units), (2, hp.rnn2_units)] {
        let cin = if layer == 1 { c } else { 2 * hp.rnn1_units };
        for dir in DIRS {
            out.push((format!("rnn{}.{}.w_ih", layer, dir), alloc::vec![cin, g * h]));
            out.push((format!("rnn{}.{}.w_hh", layer, dir), alloc::vec![h, g * h]));
            out.push((format!("rnn{}.{}.bias", layer, dir), alloc::vec![g * h]));
        }
    }
    out.push(("head.w".to_string(), alloc::vec![2 * hp.rnn2_units, task.n_outputs]));
    out.push(("head.b".to_string(), alloc::vec![task.n_outputs]));
    out
}

/// An instantiated architecture with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    arch: ArchClass,
    hp: HyperParams,
    task: TaskSpec,
    vocab: Vocabulary,
    params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialized model; `hp` must lie on the search grid.
    pub fn build(arch: ArchClass, hp: HyperParams, task: TaskSpec, vocab: Vocabulary, seed: u64) -> Result<Self> {
        hp.check_grid(arch)?;
        Self::build_off_grid(arch, hp, task, vocab, seed)
    }

    /// Like [`build`](Self::build) but accepts any positive layer widths, for
    /// reduced configurations that sit between grid points.
    pub fn build_off_grid(
        arch: ArchClass,
        hp: HyperParams,
        task: TaskSpec,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        hp.check_shape(arch)?;
        task.validate()?;
        let mut rng = seed::rng(seed);
        let g = arch.cell().gates();
        let mut params = ParamStore::new();
        for (name, shape) in param_shapes(arch, &hp, &task, vocab.size()) {
            let value = if name.ends_with("bias") || name == "head.b" {
                let mut b = Tensor::<T>::zeros(&shape);
                if arch.cell() == Cell::Lstm && name.starts_with("rnn") {
                    // forget gate slice
                    let h = shape[0] / g;
                    for v in &mut b.data_mut()[h..2 * h] {
                        *v = T::one();
                    }
                }
                b
            } else if name == "conv.kernel" {
                let (cin, cout) = (shape[1], shape[2]);
                init::glorot_uniform(&shape, 3 * cin, 3 * cout, &mut rng)
            } else {
                init::glorot_uniform(&shape, shape[0], shape[1], &mut rng)
            };
            params.push(name, value);
        }
        Ok(Self {
            arch,
            hp,
            task,
            vocab,
            params,
        })
    }

    /// Reassembles a model from stored parts, checking every tensor against
    /// the layout implied by the metadata.
    pub fn from_parts(
        arch: ArchClass,
        hp: HyperParams,
        task: TaskSpec,
        vocab: Vocabulary,
        params: ParamStore<T>,
    ) -> Result<Self> {
        hp.check_shape(arch)?;
        task.validate()?;
        let want = param_shapes(arch, &hp, &task, vocab.size());
        let got: Vec<(&str, &[usize])> = params.iter().map(|p| (p.name.as_str(), p.value.shape())).collect();
        let matches = want.len() == got.len()
            && want
                .iter()
                .zip(&got)
                .all(|((wn, ws), (gn, gs))| wn == gn && ws.as_slice() == *gs);
        if !matches {
            return Err(Error::shape("model", "stored parameters do not match the architecture"));
        }
        Ok(Self {
            arch,
            hp,
            task,
            vocab,
            params,
        })
    }

    pub fn arch(&self) -> ArchClass {
        self.arch
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            hp: self.hp,
            task: self.task,
            vocab: self.vocab.clone(),
            params: self.params.cast(),
        }
    }

    /// Puts the weights on `g`; the returned handles feed the other
    /// graph-building methods.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params.bind(g, requires_grad)
    }

    /// Embedding lookup for `batch` rows of [`ENCODED_LEN`] indices.
    pub fn embed(&self, g: &mut Graph<T>, vars: &[Var], indices: &[u32], batch: usize) -> Result<Var> {
        let lay = Layout::new(self.arch);
        g.embedding(vars[lay.embedding], indices, batch)
    }

    /// Everything after the embedding: `emb: [B, L, em]` to head outputs
    /// `[B, n_outputs]`.
    pub fn forward_from_embedding(&self, g: &mut Graph<T>, vars: &[Var], emb: Var) -> Result<Var> {
        let lay = Layout::new(self.arch);
        let mut x = emb;
        if let Some((k, b)) = lay.conv {
            x = g.conv1d(x, vars[k], vars[b])?;
            x = g.activation(x, Activation::Relu);
        }
        let cell = self.arch.cell();
        let run = |g: &mut Graph<T>, x: Var, slots: (usize, usize, usize), reverse: bool| {
            let p = RnnVars {
                w_ih: vars[slots.0],
                w_hh: vars[slots.1],
                bias: vars[slots.2],
            };
            match cell {
                Cell::Gru => g.gru(x, p, reverse),
                Cell::Lstm => g.lstm(x, p, reverse),
            }
        };
        let f1 = run(g, x, lay.rnn[0][0], false)?;
        let b1 = run(g, x, lay.rnn[0][1], true)?;
        let seq = g.concat_last(f1, b1)?;
        let f2 = run(g, seq, lay.rnn[1][0], false)?;
        let b2 = run(g, seq, lay.rnn[1][1], true)?;
        let len = g.value(f2).shape()[1];
        // forward stream ends at the last position, backward at the first
        let f_last = g.select_step(f2, len - 1)?;
        let b_last = g.select_step(b2, 0)?;
        let feat = g.concat_last(f_last, b_last)?;
        let out = g.dense(feat, vars[lay.head.0], vars[lay.head.1])?;
        Ok(g.activation(out, self.task.head_activation()))
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], indices: &[u32], batch: usize) -> Result<Var> {
        let emb = self.embed(g, vars, indices, batch)?;
        self.forward_from_embedding(g, vars, emb)
    }

    /// Predictions for flat `[n * 270]` indices, evaluated in chunks of
    /// [`PREDICT_CHUNK`] rows. Output `[n, n_outputs]`.
    pub fn predict_indices(&self, indices: &[u32]) -> Result<Tensor<T>> {
        if indices.is_empty() || !indices.len().is_multiple_of(ENCODED_LEN) {
            return Err(Error::shape("predict", format!("{} indices", indices.len())));
        }
        let n = indices.len() / ENCODED_LEN;
        let mut out = Vec::with_capacity(n * self.task.n_outputs);
        for chunk in indices.chunks(PREDICT_CHUNK * ENCODED_LEN) {
            let rows = chunk.len() / ENCODED_LEN;
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let y = self.forward(&mut g, &vars, chunk, rows)?;
            out.extend_from_slice(g.value(y).data());
        }
        Tensor::new(alloc::vec![n, self.task.n_outputs], out)
    }

    /// Predictions for encoded strings. Each encoding must be the one this
    /// model's vocabulary produces for its source string.
    pub fn predict(&self, batch: &[EncodedSmiles]) -> Result<Tensor<T>> {
        if batch.is_empty() {
            return Err(Error::NoData("predict batch"));
        }
        let mut indices = Vec::with_capacity(batch.len() * ENCODED_LEN);
        for e in batch {
            let mine = self
                .vocab
                .encode(&e.source)
                .map_err(|err| Error::VocabMismatch(format!("{:?}: {}", e.source, err)))?;
            if mine.indices != e.indices {
                return Err(Error::VocabMismatch(format!(
                    "{:?} was encoded with a different vocabulary",
                    e.source
                )));
            }
            indices.extend_from_slice(&e.indices);
        }
        self.predict_indices(&indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["CCO", "c1ccncc1", "ClC(Br)F"]).unwrap()
    }

    #[test]
    fn grid_checks() {
        let best = HyperParams {
            em_size: 50,
            conv_filters: Some(192),
            rnn1_units: 224,
            rnn2_units: 384,
        };
        assert!(best.check_grid(ArchClass::CnnGru).is_ok());
        assert!(best.check_grid(ArchClass::Gru).is_err());
        let off = HyperParams { em_size: 32, ..best };
        assert!(off.check_grid(ArchClass::CnnGru).is_err());
        assert!(off.check_shape(ArchClass::CnnGru).is_ok());
    }

    #[test]
    fn arch_names_round_trip() {
        for a in ArchClass::ALL {
            assert_eq!(a.name().parse::<ArchClass>().unwrap(), a);
        }
        assert_eq!("CNN_GRU".parse::<ArchClass>().unwrap(), ArchClass::CnnGru);
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let hp = HyperParams {
            em_size: 10,
            conv_filters: None,
            rnn1_units: 8,
            rnn2_units: 8,
        };
        let m = Model::<f64>::build(ArchClass::Lstm, hp, TaskSpec::regression(), vocab(), 3).unwrap();
        let b = m.params().find("rnn1.fwd.bias").unwrap().data();
        assert!(b[..8].iter().all(|&v| v == 0.0));
        assert!(b[8..16].iter().all(|&v| v == 1.0));
        assert!(b[16..].iter().all(|&v| v == 0.0));
    }
}
