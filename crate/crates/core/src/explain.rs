//! Explanation masks over a frozen regression model.
//!
//! An [`ExplainerNet`] reads the base model's embedding output and emits one
//! non-negative weight per sequence position. The base model then runs on the
//! embedding scaled by those weights, and the explainer is trained so that the
//! masked prediction still matches the target while the mask stays small and
//! concentrated.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{classify_chars, EncodedSmiles, HydroClass, ENCODED_LEN};
use crate::model::Model;
use crate::nn::{
    init, Activation, Adam, AdamConfig, BatchNormMode, Graph, Optimizer, ParamStore, Real, Tensor, Var,
};
use crate::seed;
use crate::train::EncodedDataset;
use crate::{Error, Result};

/// Weight of the raw-mask Euclidean norm in the loss.
pub const L2_WEIGHT: f64 = 1e-6;
/// Weight of the normalized-mask entropy in the loss.
pub const ENTROPY_WEIGHT: f64 = 0.05;
/// Learning rates the plateau schedule walks through.
pub const LR_LADDER: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// What the masked prediction is asked to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// The dataset label.
    #[default]
    Label,
    /// The base model's own unmasked prediction.
    BasePrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    /// Channel width of the residual stack.
    pub width: usize,
    /// Residual blocks, two convolutions each.
    pub blocks: usize,
    pub batch_size: usize,
    /// Hard cap on epochs in case the schedule never bottoms out.
    pub max_epochs: usize,
    /// Epochs without relative improvement before the rate drops.
    pub plateau_patience: usize,
    /// Relative training-loss improvement that resets the plateau counter.
    pub plateau_tolerance: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub target: TargetMode,
    pub seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            width: 64,
            blocks: 10,
            batch_size: 32,
            max_epochs: 300,
            plateau_patience: 10,
            plateau_tolerance: 1e-4,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            target: TargetMode::Label,
            seed: 0,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.width == 0 || self.blocks == 0 {
            return bad("explainer width and blocks must be positive");
        }
        if self.batch_size < 2 {
            return bad("explainer batch size must be at least 2 for batch norm");
        }
        if self.max_epochs == 0 || self.plateau_patience == 0 {
            return bad("explainer epochs and patience must be positive");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_epsilon <= 0.0 {
            return bad("batch-norm momentum must be in [0, 1) and epsilon positive");
        }
        if !(self.plateau_tolerance >= 0.0) {
            return bad("plateau tolerance must be non-negative");
        }
        Ok(())
    }
}

/// Residual SELU convolution stack with a softplus head.
///
/// Parameter slots: `stem.w, stem.b`, then `block{i}.conv{1,2}.{kernel,bias}`
/// for each block, then `head.w, head.b, bn.gamma, bn.beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerNet<T> {
    config: ExplainerConfig,
    em_size: usize,
    params: ParamStore<T>,
    running_mean: T,
    running_var: T,
}

impl<T: Real> ExplainerNet<T> {
    /// Fresh network for an embedding of width `em_size`.
    ///
    /// Convolutions use LeCun-uniform weights; the second convolution of each
    /// block is further scaled by `1/sqrt(blocks)` so the residual sum starts
    /// near the identity.
    pub fn new(config: ExplainerConfig, em_size: usize) -> Result<Self> {
        config.validate()?;
        if em_size == 0 {
            return Err(Error::Config("embedding width must be positive".into()));
        }
        let w = config.width;
        let mut rng = seed::derived_rng(config.seed, seed::INIT, 0);
        let mut params = ParamStore::new();
        params.push("stem.w", init::lecun_uniform(&[em_size, w], em_size, &mut rng));
        params.push("stem.b", Tensor::zeros(&[w]));
        let damp = 1.0 / libm::sqrt(config.blocks as f64);
        for i in 0..config.blocks {
            params.push(
                alloc::format!("block{i}.conv1.kernel"),
                init::lecun_uniform(&[3, w, w], 3 * w, &mut rng),
            );
            params.push(alloc::format!("block{i}.conv1.bias"), Tensor::zeros(&[w]));
            let mut k2: Tensor<T> = init::lecun_uniform(&[3, w, w], 3 * w, &mut rng);
            for v in k2.data_mut() {
                *v *= T::from_f64(damp);
            }
            params.push(alloc::format!("block{i}.conv2.kernel"), k2);
            params.push(alloc::format!("block{i}.conv2.bias"), Tensor::zeros(&[w]));
        }
        params.push("head.w", init::lecun_uniform(&[w, 1], w, &mut rng));
        params.push("head.b", Tensor::zeros(&[1]));
        params.push("bn.gamma", Tensor::full(&[1], T::one()));
        params.push("bn.beta", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            em_size,
            params,
            running_mean: T::zero(),
            running_var: T::one(),
        })
    }

    /// Reassembles a saved network; shapes must match what [`new`](Self::new)
    /// would build.
    pub fn from_parts(
        config: ExplainerConfig,
        em_size: usize,
        params: ParamStore<T>,
        running_mean: T,
        running_var: T,
    ) -> Result<Self> {
        let mut net = Self::new(config, em_size)?;
        net.params.load_from(params)?;
        if !(running_var >= T::zero()) || !running_mean.is_finite() {
            return Err(Error::NonFinite("explainer running statistics".into()));
        }
        net.running_mean = running_mean;
        net.running_var = running_var;
        Ok(net)
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.config
    }

    pub fn em_size(&self) -> usize {
        self.em_size
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Batch-norm running mean and variance used in inference mode.
    pub fn running_stats(&self) -> (T, T) {
        (self.running_mean, self.running_var)
    }

    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.params.bind(g, requires_grad)
    }

    /// Mask `[B, L]` for an embedding `[B, L, em]`. In training mode the
    /// batch mean and variance of the head output are returned as well.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        emb: Var,
        mode: BatchNormMode,
    ) -> Result<(Var, Option<(T, T)>)> {
        let shape = g.value(emb).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.em_size {
            return Err(Error::shape("explainer", alloc::format!("embedding {:?}", shape)));
        }
        let mut x = g.dense(emb, vars[0], vars[1])?;
        for i in 0..self.config.blocks {
            let s = 2 + 4 * i;
            let h = g.conv1d(x, vars[s], vars[s + 1])?;
            let h = g.activation(h, Activation::Selu);
            let h = g.conv1d(h, vars[s + 2], vars[s + 3])?;
            let h = g.activation(h, Activation::Selu);
            x = g.add(x, h)?;
        }
        let s = 2 + 4 * self.config.blocks;
        let z = g.dense(x, vars[s], vars[s + 1])?;
        let running = [self.running_mean];
        let running_var = [self.running_var];
        let (z, stats) = g.batch_norm(
            z,
            vars[s + 2],
            vars[s + 3],
            mode,
            Some((&running, &running_var)),
            T::from_f64(self.config.bn_epsilon),
        )?;
        let m = g.activation(z, Activation::Softplus);
        let m = g.reshape(m, &shape[..2])?;
        Ok((m, stats.map(|s| (s.mean[0], s.var[0]))))
    }

    fn update_running(&mut self, mean: T, var: T) {
        let mo = T::from_f64(self.config.bn_momentum);
        self.running_mean = mo * self.running_mean + (T::one() - mo) * mean;
        self.running_var = mo * self.running_var + (T::one() - mo) * var;
    }
}

/// Loss of one batch, split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskLossTerms {
    pub fidelity: f64,
    /// Weighted: `L2_WEIGHT * mean ||mask||`.
    pub l2: f64,
    /// Weighted: `ENTROPY_WEIGHT * mean H(mask)`.
    pub entropy: f64,
    pub total: f64,
}

/// Graph handles for one masked forward pass.
pub struct MaskedPass {
    pub mask: Var,
    pub prediction: Var,
    pub loss: Var,
    pub terms: MaskLossTerms,
    /// Batch-norm statistics when run in training mode.
    pub stats: Option<(f64, f64)>,
}

/// Builds the full masked forward pass and its loss on `g`.
///
/// `base_vars` should be bound without gradients so only the explainer
/// weights receive them.
#[allow(clippy::too_many_arguments)]
pub fn masked_pass<T: Real>(
    g: &mut Graph<T>,
    net: &ExplainerNet<T>,
    net_vars: &[Var],
    base: &Model<T>,
    base_vars: &[Var],
    indices: &[u32],
    spans: &[(usize, usize)],
    targets: &[T],
    mode: BatchNormMode,
) -> Result<MaskedPass> {
    let b = spans.len();
    let emb = base.embed(g, base_vars, indices, b)?;
    let (mask, stats) = net.forward(g, net_vars, emb, mode)?;
    let masked = g.apply_mask(emb, mask)?;
    let prediction = base.forward_from_embedding(g, base_vars, masked)?;
    let fid = g.mse(prediction, targets)?;
    let l2 = g.mask_l2(mask, spans)?;
    let ent = g.mask_entropy(mask, spans)?;
    let l2w = g.scale(l2, T::from_f64(L2_WEIGHT));
    let entw = g.scale(ent, T::from_f64(ENTROPY_WEIGHT));
    let s = g.add(fid, l2w)?;
    let loss = g.add(s, entw)?;
    let terms = MaskLossTerms {
        fidelity: g.value(fid).item().as_f64(),
        l2: g.value(l2w).item().as_f64(),
        entropy: g.value(entw).item().as_f64(),
        total: g.value(loss).item().as_f64(),
    };
    Ok(MaskedPass {
        mask,
        prediction,
        loss,
        terms,
        stats: stats.map(|(m, v)| (m.as_f64(), v.as_f64())),
    })
}

/// Base-model predictions with every position scaled by `mask`
/// (`[n * 270]` values, non-negative).
pub fn predict_with_mask<T: Real>(base: &Model<T>, indices: &[u32], mask: &[T]) -> Result<Vec<T>> {
    if indices.is_empty() || !indices.len().is_multiple_of(ENCODED_LEN) || mask.len() != indices.len() {
        return Err(Error::shape(
            "predict_with_mask",
            alloc::format!("{} indices, {} mask values", indices.len(), mask.len()),
        ));
    }
    let n = indices.len() / ENCODED_LEN;
    let mut g = Graph::new();
    let vars = base.bind(&mut g, false);
    let emb = base.embed(&mut g, &vars, indices, n)?;
    let m = g.leaf(Tensor::new(vec![n, ENCODED_LEN], mask.to_vec())?, false);
    let masked = g.apply_mask(emb, m)?;
    let y = base.forward_from_embedding(&mut g, &vars, masked)?;
    Ok(g.value(y).data().to_vec())
}

/// One epoch of explainer training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Row-weighted means over the epoch.
    pub fidelity: f64,
    pub l2: f64,
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExplainerHistory {
    pub epochs: Vec<ExplainerEpoch>,
    /// Whether training ended because the schedule bottomed out.
    pub converged: bool,
    pub base_fingerprint: u64,
}

impl ExplainerHistory {
    /// Learning rate in force at each epoch.
    pub fn lr_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.learning_rate).collect()
    }
}

/// Plateau-driven learning-rate ladder.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    rung: usize,
    best: f64,
    wait: usize,
    patience: usize,
    tolerance: f64,
}

/// What the schedule asks for after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Decay,
    Stop,
}

impl PlateauSchedule {
    pub fn new(patience: usize, tolerance: f64) -> Self {
        Self {
            rung: 0,
            best: f64::INFINITY,
            wait: 0,
            patience,
            tolerance,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        LR_LADDER[self.rung]
    }

    /// Feeds one epoch's training loss.
    pub fn observe(&mut self, loss: f64) -> ScheduleAction {
        let improved = if self.best.is_finite() {
            loss < self.best - self.tolerance * self.best.abs()
        } else {
            true
        };
        if improved {
            self.best = loss;
            self.wait = 0;
            return ScheduleAction::Continue;
        }
        self.wait += 1;
        if self.wait < self.patience {
            return ScheduleAction::Continue;
        }
        self.wait = 0;
        if self.rung + 1 == LR_LADDER.len() {
            ScheduleAction::Stop
        } else {
            self.rung += 1;
            ScheduleAction::Decay
        }
    }
}

/// Trains `net` against the frozen `base` on `rows` of `data`.
///
/// The base weights are fingerprinted before and after; any change is a
/// hard error.
pub fn train_explainer<T: Real>(
    net: &mut ExplainerNet<T>,
    base: &Model<T>,
    data: &EncodedDataset,
    rows: &[usize],
    mut progress: impl FnMut(&ExplainerEpoch),
) -> Result<ExplainerHistory> {
    let cfg = net.config.clone();
    cfg.validate()?;
    if base.task().is_classification() || base.task().n_outputs != 1 {
        return Err(Error::Config("explainer needs a single-output regression base".into()));
    }
    if data.task().is_classification() || data.task().n_outputs != 1 {
        return Err(Error::Config("explainer needs a single-target regression dataset".into()));
    }
    if net.em_size != base.hyper_params().em_size {
        return Err(Error::shape(
            "explainer",
            alloc::format!("width {} vs base embedding {}", net.em_size, base.hyper_params().em_size),
        ));
    }
    if rows.len() < 2 {
        return Err(Error::NoData("explainer training rows"));
    }
    let before = base.params().fingerprint();

    let targets: Vec<f64> = match cfg.target {
        TargetMode::Label => rows
            .iter()
            .map(|&r| data.target(r, 0).ok_or(Error::NoData("regression label")))
            .collect::<Result<_>>()?,
        TargetMode::BasePrediction => {
            let mut idx = Vec::with_capacity(rows.len() * ENCODED_LEN);
            for &r in rows {
                idx.extend_from_slice(data.row(r));
            }
            base.predict_indices(&idx)?.data().iter().map(|v| v.as_f64()).collect()
        }
    };
    let target_of: alloc::collections::BTreeMap<usize, f64> =
        rows.iter().copied().zip(targets.iter().copied()).collect();

    let mut schedule = PlateauSchedule::new(cfg.plateau_patience, cfg.plateau_tolerance);
    let mut opt = Adam::new(AdamConfig {
        learning_rate: schedule.learning_rate(),
        ..AdamConfig::default()
    });
    let mut rng = seed::derived_rng(cfg.seed, seed::SHUFFLE, 0);
    let mut order = rows.to_vec();
    let mut history = ExplainerHistory::default();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = schedule.learning_rate();
        opt.set_learning_rate(lr);
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // training-mode batch norm needs at least two rows
            if chunk.len() < 2 {
                continue;
            }
            let batch = data.gather(chunk);
            let tg: Vec<T> = chunk.iter().map(|r| T::from_f64(target_of[r])).collect();
            let mut g = Graph::new();
            let nv = net.bind(&mut g, true);
            let bv = base.bind(&mut g, false);
            let pass = masked_pass(
                &mut g,
                net,
                &nv,
                base,
                &bv,
                &batch.indices,
                &batch.spans,
                &tg,
                BatchNormMode::Training,
            )?;
            if !pass.terms.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi + 1 });
            }
            let mut grads = g.backward(pass.loss);
            let grads: Vec<Tensor<T>> = nv
                .iter()
                .zip(net.params.iter())
                .map(|(&v, p)| grads.take_or_zeros(v, p.value.shape()))
                .collect();
            opt.step(&mut net.params, &grads)?;
            if let Some((m, v)) = pass.stats {
                net.update_running(T::from_f64(m), T::from_f64(v));
            }
            let w = chunk.len() as f64;
            let t = &pass.terms;
            for (s, v) in sums.iter_mut().zip([t.fidelity, t.l2, t.entropy, t.total]) {
                *s += v * w;
            }
            seen += chunk.len();
        }
        let n = seen.max(1) as f64;
        let rec = ExplainerEpoch {
            epoch,
            learning_rate: lr,
            fidelity: sums[0] / n,
            l2: sums[1] / n,
            entropy: sums[2] / n,
            total: sums[3] / n,
        };
        log::debug!(
            "explainer epoch {} lr {:e} loss {:.6} (fid {:.6} ent {:.6})",
            epoch,
            lr,
            rec.total,
            rec.fidelity,
            rec.entropy
        );
        progress(&rec);
        let action = schedule.observe(rec.total);
        history.epochs.push(rec);
        if action == ScheduleAction::Stop {
            history.converged = true;
            break;
        }
    }

    let after = base.params().fingerprint();
    if after != before {
        return Err(Error::FrozenWeightsChanged);
    }
    history.base_fingerprint = after;
    Ok(history)
}

/// Per-position attention for one molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub source: String,
    /// One value per encoded position, pads included.
    pub raw: Vec<f64>,
    /// Content positions only, summing to one.
    pub normalized: Vec<f64>,
    pub content_span: (usize, usize),
}

impl Mask {
    /// Builds a mask from raw per-position values; the content part is
    /// normalized to sum to one (uniform if it is all zero).
    pub fn from_raw(encoded: &EncodedSmiles, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != encoded.indices.len() {
            return Err(Error::shape("mask", alloc::format!("{} values", raw.len())));
        }
        if let Some(&v) = raw.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(if v.is_finite() {
                Error::NegativeMask(v)
            } else {
                Error::NonFinite("mask value".into())
            });
        }
        let (s, e) = encoded.content_span;
        let content = &raw[s..e];
        let total: f64 = content.iter().sum();
        let normalized = if total > 0.0 {
            content.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / content.len() as f64; content.len()]
        };
        Ok(Self {
            source: encoded.source.clone(),
            raw,
            normalized,
            content_span: encoded.content_span,
        })
    }

    pub fn content_len(&self) -> usize {
        self.normalized.len()
    }

    /// Shannon entropy of the normalized mask.
    pub fn entropy(&self) -> f64 {
        -self
            .normalized
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * libm::log(*p))
            .sum::<f64>()
    }
}

/// Masks for a batch of encodings, with batch norm in inference mode.
pub fn compute_masks<T: Real>(
    net: &ExplainerNet<T>,
    base: &Model<T>,
    encoded: &[EncodedSmiles],
) -> Result<Vec<Mask>> {
    let mut out = Vec::with_capacity(encoded.len());
    for chunk in encoded.chunks(crate::model::PREDICT_CHUNK) {
        let mut idx = Vec::with_capacity(chunk.len() * ENCODED_LEN);
        for e in chunk {
            if e.indices.len() != ENCODED_LEN {
                return Err(Error::shape("compute_mask", alloc::format!("{} indices", e.indices.len())));
            }
            idx.extend_from_slice(&e.indices);
        }
        let mut g = Graph::new();
        let nv = net.bind(&mut g, false);
        let bv = base.bind(&mut g, false);
        let emb = base.embed(&mut g, &bv, &idx, chunk.len())?;
        let (m, _) = net.forward(&mut g, &nv, emb, BatchNormMode::Inference)?;
        let values = g.value(m).data();
        for (i, e) in chunk.iter().enumerate() {
            let raw = values[i * ENCODED_LEN..(i + 1) * ENCODED_LEN]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            out.push(Mask::from_raw(e, raw)?);
        }
    }
    Ok(out)
}

/// Mask for one SMILES string, encoded with the base model's vocabulary.
pub fn compute_mask<T: Real>(net: &ExplainerNet<T>, base: &Model<T>, smiles: &str) -> Result<Mask> {
    let e = base.vocab().encode(smiles)?;
    Ok(compute_masks(net, base, core::slice::from_ref(&e))?.remove(0))
}

/// One highly weighted character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopChar {
    /// Offset within the SMILES string.
    pub position: usize,
    pub ch: char,
    pub weight: f64,
}

/// The `k` content positions with the largest normalized weight, heaviest
/// first; equal weights go to the leftmost position.
pub fn top_k_chars(mask: &Mask, k: usize) -> Result<Vec<TopChar>> {
    let n = mask.content_len();
    if k > n {
        return Err(Error::TopKTooLarge { k, len: n });
    }
    let chars: Vec<char> = mask.source.chars().collect();
    if chars.len() != n {
        return Err(Error::shape(
            "top_k_chars",
            alloc::format!("{} characters, {} mask positions", chars.len(), n),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mask.normalized[b]
            .partial_cmp(&mask.normalized[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order[..k]
        .iter()
        .map(|&p| TopChar {
            position: p,
            ch: chars[p],
            weight: mask.normalized[p],
        })
        .collect())
}

/// Solubility extreme a molecule falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolubilityGroup {
    Soluble,
    Insoluble,
}

impl SolubilityGroup {
    /// Character class that counts as a correct attribution.
    pub fn expected(self) -> HydroClass {
        match self {
            SolubilityGroup::Soluble => HydroClass::Hydrophilic,
            SolubilityGroup::Insoluble => HydroClass::Hydrophobic,
        }
    }
}

/// Soluble above `soluble_cutoff`, insoluble below `insoluble_cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub soluble: f64,
    pub insoluble: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            soluble: -1.0,
            insoluble: -5.0,
        }
    }
}

impl Cutoffs {
    pub fn group(&self, label: f64) -> Option<SolubilityGroup> {
        if label > self.soluble {
            Some(SolubilityGroup::Soluble)
        } else if label < self.insoluble {
            Some(SolubilityGroup::Insoluble)
        } else {
            None
        }
    }
}

/// Whether each top character carries the class expected for `group`.
pub fn score_top(top: &[TopChar], classes: &[HydroClass], group: SolubilityGroup) -> Vec<bool> {
    top.iter()
        .map(|t| classes.get(t.position) == Some(&group.expected()))
        .collect()
}

/// Attribution record for one molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub smiles: String,
    pub label: f64,
    pub prediction: f64,
    pub group: Option<SolubilityGroup>,
    pub raw_mask: Vec<f64>,
    pub normalized_mask: Vec<f64>,
    pub top: Vec<TopChar>,
    pub classes: Vec<HydroClass>,
    /// One flag per top character; empty outside the extremes.
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityReport {
    /// Correct top characters over all top characters of extreme molecules.
    pub per_character: f64,
    /// Share of extreme molecules with a majority of correct top characters.
    pub per_molecule_majority: f64,
    pub n_soluble: usize,
    pub n_insoluble: usize,
    pub k: usize,
    pub cutoffs: Cutoffs,
    pub molecules: Vec<Attribution>,
}

/// Scores top-`k` characters of every molecule in `rows` against the
/// hydrophilic/hydrophobic ground truth of its solubility group.
///
/// Rows whose content is shorter than `k` are attributed with all their
/// characters.
pub fn interpretability_accuracy<T: Real>(
    net: &ExplainerNet<T>,
    base: &Model<T>,
    smiles: &[&str],
    labels: &[f64],
    cutoffs: Cutoffs,
    k: usize,
) -> Result<InterpretabilityReport> {
    if smiles.len() != labels.len() {
        return Err(Error::shape(
            "interpretability",
            alloc::format!("{} smiles, {} labels", smiles.len(), labels.len()),
        ));
    }
    if smiles.is_empty() {
        return Err(Error::NoData("interpretability molecules"));
    }
    let encoded: Vec<EncodedSmiles> = smiles
        .iter()
        .map(|s| base.vocab().encode(s))
        .collect::<Result<_>>()?;
    let masks = compute_masks(net, base, &encoded)?;
    let mut idx = Vec::with_capacity(encoded.len() * ENCODED_LEN);
    for e in &encoded {
        idx.extend_from_slice(&e.indices);
    }
    let preds = base.predict_indices(&idx)?;

    let (mut hits, mut slots, mut majority) = (0usize, 0usize, 0usize);
    let (mut n_sol, mut n_ins) = (0usize, 0usize);
    let mut molecules = Vec::with_capacity(smiles.len());
    for (i, mask) in masks.into_iter().enumerate() {
        let label = labels[i];
        let group = cutoffs.group(label);
        let top = top_k_chars(&mask, k.min(mask.content_len()))?;
        let classes = classify_chars(smiles[i]);
        let correct: Vec<bool> = match group {
            Some(gr) => score_top(&top, &classes, gr),
            None => Vec::new(),
        };
        if let Some(gr) = group {
            match gr {
                SolubilityGroup::Soluble => n_sol += 1,
                SolubilityGroup::Insoluble => n_ins += 1,
            }
            let c = correct.iter().filter(|c| **c).count();
            hits += c;
            slots += k;
            if 2 * c > correct.len() {
                majority += 1;
            }
        }
        molecules.push(Attribution {
            smiles: String::from(smiles[i]),
            label,
            prediction: preds.data()[i].as_f64(),
            group,
            raw_mask: mask.raw,
            normalized_mask: mask.normalized,
            top,
            classes,
            correct,
        });
    }
    let extremes = n_sol + n_ins;
    if extremes == 0 {
        return Err(Error::NoExtremes("no molecule beyond either solubility cutoff"));
    }
    Ok(InterpretabilityReport {
        per_character: hits as f64 / slots as f64,
        per_molecule_majority: majority as f64 / extremes as f64,
        n_soluble: n_sol,
        n_insoluble: n_ins,
        k,
        cutoffs,
        molecules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_walks_the_ladder_then_stops() {
        let mut s = PlateauSchedule::new(2, 1e-4);
        assert_eq!(s.observe(1.0), ScheduleAction::Continue);
        let mut actions = Vec::new();
        for _ in 0..20 {
            actions.push(s.observe(1.0));
            if actions.last() == Some(&ScheduleAction::Stop) {
                break;
            }
        }
        let decays = actions.iter().filter(|a| **a == ScheduleAction::Decay).count();
        assert_eq!(decays, 4);
        assert_eq!(actions.last(), Some(&ScheduleAction::Stop));
        assert_eq!(s.learning_rate(), 1e-6);
    }

    #[test]
    fn tiny_improvements_count_as_plateau() {
        let mut s = PlateauSchedule::new(1, 1e-4);
        s.observe(1.0);
        assert_eq!(s.observe(0.99995), ScheduleAction::Decay);
        assert_eq!(s.observe(0.5), ScheduleAction::Continue);
    }
}
