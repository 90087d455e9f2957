//! Per-user trainable prefixes with feedforward reparametrization.
//!
//! Each training user owns one embedding row (length `k_e`). A shared
//! one-hidden-layer MLP maps a row to the `k × width` block of continuous
//! states the backend prepends to its input. Backends never consume raw rows;
//! the block is always the MLP image, so gradients reach both the row and the
//! shared MLP. Users absent from the store are served the MLP image of the
//! mean row.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::derive_rng;

/// Shape of the continuous block a backend expects: `positions` prefix slots,
/// each a state vector of `width` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub positions: usize,
    pub width: usize,
}

impl BlockShape {
    pub fn new(positions: usize, width: usize) -> Self {
        BlockShape { positions, width }
    }
}

/// A materialized prefix: the continuous states bound ahead of a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixBlock {
    /// `positions × width`.
    pub states: Array2<f64>,
    /// User id, or `"unseen"` for the fallback block.
    pub owner: String,
}

impl PrefixBlock {
    pub fn shape(&self) -> BlockShape {
        let (p, w) = self.states.dim();
        BlockShape::new(p, w)
    }
}

/// Parameters of the reparametrizing MLP (one hidden tanh layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `k_e × hidden`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `hidden × (k·width)`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients (or scaled updates) for the MLP parameters; same shapes as
/// [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            w1: Array2::zeros(params.w1.dim()),
            b1: Array1::zeros(params.b1.dim()),
            w2: Array2::zeros(params.w2.dim()),
            b2: Array1::zeros(params.b2.dim()),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        MlpGrads {
            w1: &self.w1 * factor,
            b1: &self.b1 * factor,
            w2: &self.w2 * factor,
            b2: &self.b2 * factor,
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn squared_norm(&self) -> f64 {
        self.w1.iter().map(|v| v * v).sum::<f64>()
            + self.b1.iter().map(|v| v * v).sum::<f64>()
            + self.w2.iter().map(|v| v * v).sum::<f64>()
            + self.b2.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Cache of one MLP forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// tanh activations of the hidden layer.
    pub hidden: Array1<f64>,
}

/// Standard deviation of the initial embedding rows.
pub const INIT_STD: f64 = 0.02;

const FORMAT_VERSION: u32 = 1;

/// Per-user embedding rows plus the shared reparametrizing MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixStore {
    pub format_version: u32,
    /// user id → row index into `p_prime`.
    user_index: BTreeMap<String, usize>,
    /// `l × k_e`.
    p_prime: Array2<f64>,
    mlp: MlpParams,
    pub k: usize,
    pub k_e: usize,
    pub block_shape: BlockShape,
}

/// Create a store with one small-variance random row per user and a
/// deterministically initialized MLP.
pub fn init_store(
    user_ids: &[String],
    k: usize,
    k_e: usize,
    block_shape: BlockShape,
    seed: u64,
) -> Result<PrefixStore> {
    if k == 0 || k_e == 0 {
        return Err(Error::BadParameter(format!(
            "k and k_e must be ≥ 1, got k={k}, k_e={k_e}"
        )));
    }
    if user_ids.is_empty() {
        return Err(Error::EmptyStore);
    }
    if block_shape.positions != k || block_shape.width == 0 {
        return Err(Error::Shape(format!(
            "block shape {}×{} incompatible with k={k} prefix positions",
            block_shape.positions, block_shape.width
        )));
    }
    let mut user_index = BTreeMap::new();
    for id in user_ids {
        if user_index.insert(id.clone(), 0usize).is_some() {
            return Err(Error::Config(format!("duplicate user id `{id}` in store")));
        }
    }
    // Row order follows the sorted id order so the layout is independent of
    // the caller's iteration order.
    let ids: Vec<String> = user_index.keys().cloned().collect();
    for (row, id) in ids.iter().enumerate() {
        user_index.insert(id.clone(), row);
    }
    let l = ids.len();

    let mut row_rng = derive_rng(seed, "prefix-rows", 0);
    let small = Normal::new(0.0, INIT_STD).expect("valid normal");
    let p_prime = Array2::from_shape_vec(
        (l, k_e),
        (0..l * k_e).map(|_| small.sample(&mut row_rng)).collect(),
    )
    .expect("shape matches data");

    let hidden = 4 * k_e;
    let out = k * block_shape.width;
    let mut mlp_rng = derive_rng(seed, "prefix-mlp", 0);
    let layer = |rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha12Rng| {
        let scale = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid normal");
        Array2::from_shape_vec(
            (rows, cols),
            (0..rows * cols).map(|_| scale.sample(rng)).collect(),
        )
        .expect("shape matches data")
    };
    let mlp = MlpParams {
        w1: layer(k_e, hidden, &mut mlp_rng),
        b1: Array1::zeros(hidden),
        w2: layer(hidden, out, &mut mlp_rng),
        b2: Array1::zeros(out),
    };

    Ok(PrefixStore {
        format_version: FORMAT_VERSION,
        user_index,
        p_prime,
        mlp,
        k,
        k_e,
        block_shape,
    })
}

impl PrefixStore {
    pub fn num_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    pub fn row_index(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn row(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.p_prime.row(idx)
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    /// MLP forward pass: row → (block states, cache for backward).
    pub fn forward_row(&self, row: ArrayView1<'_, f64>) -> (Array2<f64>, MlpCache) {
        let pre = row.dot(&self.mlp.w1) + &self.mlp.b1;
        let hidden = pre.mapv(f64::tanh);
        let out = hidden.dot(&self.mlp.w2) + &self.mlp.b2;
        let states = out
            .into_shape_with_order((self.block_shape.positions, self.block_shape.width))
            .expect("MLP output length equals block size");
        (states, MlpCache { hidden })
    }

    /// Backward pass for one row: gradient w.r.t. block states → gradient
    /// w.r.t. the row and the MLP parameters.
    pub fn backward_row(
        &self,
        row: ArrayView1<'_, f64>,
        cache: &MlpCache,
        grad_states: &Array2<f64>,
    ) -> (Array1<f64>, MlpGrads) {
        let g_out = grad_states
            .to_owned()
            .into_shape_with_order(self.block_shape.positions * self.block_shape.width)
            .expect("grad has block shape");
        let h = &cache.hidden;
        let dw2 = h
            .view()
            .insert_axis(Axis(1))
            .dot(&g_out.view().insert_axis(Axis(0)));
        let db2 = g_out.clone();
        let dh = self.mlp.w2.dot(&g_out);
        let dpre = &dh * &h.mapv(|v| 1.0 - v * v);
        let dw1 = row
            .insert_axis(Axis(1))
            .dot(&dpre.view().insert_axis(Axis(0)));
        let db1 = dpre.clone();
        let drow = self.mlp.w1.dot(&dpre);
        (
            drow,
            MlpGrads {
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
            },
        )
    }

    /// The block bound for a known training user.
    pub fn user_prefix(&self, user_id: &str) -> Result<PrefixBlock> {
        let idx = self
            .row_index(user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?;
        let (states, _) = self.forward_row(self.p_prime.row(idx));
        Ok(PrefixBlock {
            states,
            owner: user_id.to_owned(),
        })
    }

    /// The fallback block for users without a trained row: the MLP image of
    /// the mean embedding row.
    pub fn unseen_user_prefix(&self) -> Result<PrefixBlock> {
        let mean = self
            .p_prime
            .mean_axis(Axis(0))
            .ok_or(Error::EmptyStore)?;
        let (states, _) = self.forward_row(mean.view());
        Ok(PrefixBlock {
            states,
            owner: "unseen".to_owned(),
        })
    }

    /// Resolve a user to a block; unknown users fall back to the unseen-user
    /// block only when `allow_unseen` is set.
    pub fn resolve(&self, user_id: &str, allow_unseen: bool) -> Result<PrefixBlock> {
        match self.row_index(user_id) {
            Some(_) => self.user_prefix(user_id),
            None if allow_unseen => self.unseen_user_prefix(),
            None => Err(Error::UnknownUser(user_id.to_owned())),
        }
    }

    /// In-place row update used by the optimizer.
    pub fn add_to_row(&mut self, idx: usize, delta: &Array1<f64>) {
        let mut row = self.p_prime.row_mut(idx);
        row += delta;
        debug_assert!(row.iter().all(|v| v.is_finite()));
    }

    /// In-place MLP update used by the optimizer.
    pub fn add_to_mlp(&mut self, delta: &MlpGrads) {
        self.mlp.w1 += &delta.w1;
        self.mlp.b1 += &delta.b1;
        self.mlp.w2 += &delta.w2;
        self.mlp.b2 += &delta.b2;
    }

    pub fn all_finite(&self) -> bool {
        self.p_prime.iter().all(|v| v.is_finite())
            && self.mlp.w1.iter().all(|v| v.is_finite())
            && self.mlp.b1.iter().all(|v| v.is_finite())
            && self.mlp.w2.iter().all(|v| v.is_finite())
            && self.mlp.b2.iter().all(|v| v.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::write_io(path, std::io::Error::other(e)))?;
        std::fs::write(path, text).map_err(|e| Error::write_io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::read_io(path, e))?;
        let store: PrefixStore = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line: 0,
            msg: format!("prefix store {path:?}: {e}"),
        })?;
        if store.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "prefix store {path:?} has format version {}, expected {FORMAT_VERSION}",
                store.format_version
            )));
        }
        Ok(store)
    }
}
