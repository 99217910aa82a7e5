use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{ArchClass, GridRange, HyperParams, CONV_GRID, EM_GRID, RNN_GRID};

/// Discrete design grid for one architecture class.
///
/// A point is a vector of per-dimension grid indices in the order
/// `em, [conv], rnn1, rnn2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub arch: ArchClass,
    pub em: GridRange,
    pub conv: Option<GridRange>,
    pub rnn1: GridRange,
    pub rnn2: GridRange,
}

impl SearchSpace {
    /// The full grid: embedding 10..60 step 10, recurrent widths 8..384
    /// step 8, conv filters 4..192 step 4 for CNN classes.
    pub fn for_arch(arch: ArchClass) -> Self {
        Self {
            arch,
            em: EM_GRID,
            conv: arch.has_conv().then_some(CONV_GRID),
            rnn1: RNN_GRID,
            rnn2: RNN_GRID,
        }
    }

    pub fn dims(&self) -> Vec<GridRange> {
        let mut d = Vec::with_capacity(4);
        d.push(self.em);
        if let Some(c) = self.conv {
            d.push(c);
        }
        d.push(self.rnn1);
        d.push(self.rnn2);
        d
    }

    pub fn cardinality(&self) -> usize {
        self.dims().iter().map(GridRange::len).product()
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.point_of(hp).is_some()
    }

    pub fn point_of(&self, hp: &HyperParams) -> Option<Vec<usize>> {
        let mut p = Vec::with_capacity(4);
        p.push(self.em.index_of(hp.em_size)?);
        match (self.conv, hp.conv_filters) {
            (Some(g), Some(c)) => p.push(g.index_of(c)?),
            (None, None) => {}
            _ => return None,
        }
        p.push(self.rnn1.index_of(hp.rnn1_units)?);
        p.push(self.rnn2.index_of(hp.rnn2_units)?);
        Some(p)
    }

    pub fn params_of(&self, point: &[usize]) -> HyperParams {
        let mut it = point.iter().copied();
        let em = self.em.value(it.next().unwrap_or(0));
        let conv = self.conv.map(|g| g.value(it.next().unwrap_or(0)));
        let rnn1 = self.rnn1.value(it.next().unwrap_or(0));
        let rnn2 = self.rnn2.value(it.next().unwrap_or(0));
        HyperParams {
            em_size: em,
            conv_filters: conv,
            rnn1_units: rnn1,
            rnn2_units: rnn2,
        }
    }

    /// Row-major rank of `point` (last dimension fastest).
    pub fn flat_of(&self, point: &[usize]) -> usize {
        self.dims()
            .iter()
            .zip(point)
            .fold(0, |acc, (g, &i)| acc * g.len() + i)
    }

    pub fn point_at(&self, mut flat: usize) -> Vec<usize> {
        let dims = self.dims();
        let mut p = alloc::vec![0; dims.len()];
        for (k, g) in dims.iter().enumerate().rev() {
            p[k] = flat % g.len();
            flat /= g.len();
        }
        p
    }

    /// Each coordinate mapped to `[0, 1]`; single-valued dimensions map to 0.
    pub fn normalize(&self, point: &[usize]) -> Vec<f64> {
        self.dims()
            .iter()
            .zip(point)
            .map(|(g, &i)| if g.len() > 1 { i as f64 / (g.len() - 1) as f64 } else { 0.0 })
            .collect()
    }

    /// [`normalize`](Self::normalize) of many flat ranks, concatenated.
    pub fn normalize_flat(&self, flats: &[usize]) -> Vec<f64> {
        let dims = self.dims();
        let d = dims.len();
        let mut out = alloc::vec![0.0; flats.len() * d];
        for (row, &f) in out.chunks_mut(d).zip(flats) {
            let mut rest = f;
            for k in (0..d).rev() {
                let len = dims[k].len();
                let i = rest % len;
                rest /= len;
                row[k] = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
            }
        }
        out
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.dims().iter().map(|g| rng.gen_range(0..g.len())).collect()
    }

    /// Points within one grid step of `point` in every dimension, excluding
    /// `point` itself.
    pub fn neighbors(&self, point: &[usize]) -> Vec<Vec<usize>> {
        let dims = self.dims();
        let mut out: Vec<Vec<usize>> = alloc::vec![point.to_vec()];
        for (k, g) in dims.iter().enumerate() {
            let mut next = Vec::with_capacity(out.len() * 3);
            for p in &out {
                for delta in [-1i64, 0, 1] {
                    let v = p[k] as i64 + delta;
                    if v >= 0 && (v as usize) < g.len() {
                        let mut q = p.clone();
                        q[k] = v as usize;
                        next.push(q);
                    }
                }
            }
            out = next;
        }
        out.retain(|p| p.as_slice() != point);
        out
    }
}

/// The six hand-picked starting designs: embedding 40, 16 conv filters for
/// CNN classes, and both recurrent layers at 8, 16, 32, 64, 128, 256 units.
pub fn seed_trials(arch: ArchClass) -> Vec<HyperParams> {
    [8, 16, 32, 64, 128, 256]
        .into_iter()
        .map(|u| HyperParams {
            em_size: 40,
            conv_filters: arch.has_conv().then_some(16),
            rnn1_units: u,
            rnn2_units: u,
        })
        .collect()
}
