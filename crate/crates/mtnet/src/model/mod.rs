//! The tree-structured recommendation model: embeddings, sibling attention
//! (IAC), child-to-parent Tree-LSTM aggregation (IRC), the four-step node
//! interaction, prediction heads, the uncertainty-weighted multitask loss
//! and the fused recommendation score.

pub mod forward;
pub mod iac;
pub mod irc;
mod params;

pub use forward::{
    four_step, init_checkin_node, multitask_loss, predict, recommend_scores, run_sample,
    LossParts, NodeStates, Prediction, SampleRun, Targets,
};
pub use iac::{iac, IacOutput};
pub use irc::{irc, IrcChild};
pub use params::{
    bind_model, BoundAffine, BoundIacLayer, BoundIacStack, BoundIrc, BoundModel, IrcBinding,
};

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter {0:?} missing from store")]
    MissingParam(String),
    #[error("IAC group is entirely masked")]
    AllMasked,
    #[error("IRC child position {got} exceeds fan-out {fanout}")]
    FanoutExceeded { got: usize, fanout: usize },
    #[error("tree built with {tree} slots/day but the model expects {model}")]
    SlotMismatch { tree: usize, model: usize },
    #[error("model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

/// Which day node feeds the root-level prediction heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootMode {
    /// Hidden state of the day node containing the last check-in.
    #[default]
    CurrentDay,
    /// Element-wise mean over all day-node hidden states.
    SuperRoot,
}

/// Structural ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Plain loss sum instead of learned uncertainty weights.
    pub no_multitask: bool,
    /// Drop the geo-cluster prediction task.
    pub no_geo_head: bool,
    /// Drop the category prediction task.
    pub no_cat_head: bool,
    /// Replace both sibling-attention steps with the identity.
    pub no_iac: bool,
    /// Replace both Tree-LSTM steps with mean-pooling plus a linear map.
    pub no_irc: bool,
    /// Fuse only the last check-in logits and drop the auxiliary losses.
    pub no_aux_node_preds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// "f64" (default) or "f32".
    pub dtype: String,
    pub d_user: usize,
    pub d_poi: usize,
    pub d_cat: usize,
    pub d_geo: usize,
    /// Parent-input embedding width for period nodes.
    pub d_slot: usize,
    /// Parent-input embedding width for day nodes.
    pub d_dow: usize,
    /// Tree-LSTM hidden size.
    pub hidden: usize,
    pub iac_layers: usize,
    pub iac_heads: usize,
    pub ff_inner: usize,
    pub slots_per_day: usize,
    /// Leaf-level Tree-LSTM fan-out; `None` uses the dataset maximum
    /// recorded in the bundle.
    pub leaf_fanout: Option<usize>,
    /// Weight of the hour-of-day embedding added to check-in vectors.
    pub gamma: f64,
    /// Day-level fusion weight in the recommendation score.
    pub eta: f64,
    /// Period-level fusion weight in the recommendation score.
    pub delta: f64,
    pub dropout_embed: f64,
    pub dropout_ff: f64,
    pub ln_eps: f64,
    pub root_mode: RootMode,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dtype: "f64".into(),
            d_user: 128,
            d_poi: 128,
            d_cat: 32,
            d_geo: 32,
            d_slot: 128,
            d_dow: 128,
            hidden: 512,
            iac_layers: 2,
            iac_heads: 2,
            ff_inner: 1024,
            slots_per_day: 4,
            leaf_fanout: None,
            gamma: 1.0,
            eta: 1.0,
            delta: 1.0,
            dropout_embed: 0.4,
            dropout_ff: 0.6,
            ln_eps: 1e-5,
            root_mode: RootMode::CurrentDay,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Width of an initialized check-in vector (the four embeddings
    /// concatenated).
    pub fn d_checkin(&self) -> usize {
        self.d_user + self.d_poi + self.d_cat + self.d_geo
    }

    /// Fusion weights after the `no_aux_node_preds` override.
    pub fn fusion_weights(&self) -> (f64, f64) {
        if self.ablation.no_aux_node_preds {
            (0.0, 0.0)
        } else {
            (self.eta, self.delta)
        }
    }

    pub fn leaf_fanout_or(&self, dataset_max: usize) -> usize {
        self.leaf_fanout.unwrap_or(dataset_max).max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.dtype != "f64" && self.dtype != "f32" {
            return bad(format!("dtype must be f64 or f32, got {:?}", self.dtype));
        }
        for (name, v) in [
            ("d_user", self.d_user),
            ("d_poi", self.d_poi),
            ("d_cat", self.d_cat),
            ("d_geo", self.d_geo),
            ("d_slot", self.d_slot),
            ("d_dow", self.d_dow),
            ("hidden", self.hidden),
            ("iac_layers", self.iac_layers),
            ("iac_heads", self.iac_heads),
            ("ff_inner", self.ff_inner),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.slots_per_day == 0 || 24 % self.slots_per_day != 0 {
            return bad(format!("slots_per_day must divide 24, got {}", self.slots_per_day));
        }
        if self.d_checkin() % self.iac_heads != 0 {
            return bad(format!(
                "check-in width {} not divisible by {} attention heads",
                self.d_checkin(),
                self.iac_heads
            ));
        }
        if self.hidden % self.iac_heads != 0 {
            return bad(format!(
                "hidden size {} not divisible by {} attention heads",
                self.hidden, self.iac_heads
            ));
        }
        for (name, p) in [("dropout_embed", self.dropout_embed), ("dropout_ff", self.dropout_ff)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}

/// Vocabulary cardinalities the parameter shapes depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabDims {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub geo_clusters: usize,
}

impl VocabDims {
    pub fn of(vocab: &crate::types::Vocab) -> Self {
        Self {
            users: vocab.n_users(),
            pois: vocab.n_pois(),
            categories: vocab.n_categories(),
            geo_clusters: vocab.n_geo_clusters(),
        }
    }
}

/// Every learnable tensor, addressable by name. Iteration order is the
/// sorted name order, which fixes the optimizer and checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        debug_assert!(!self.map.contains_key(&name), "duplicate parameter {name}");
        self.map.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<(), ModelError> {
        match self.map.get_mut(name) {
            Some(slot) => {
                *slot = tensor;
                Ok(())
            }
            None => Err(ModelError::MissingParam(name.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Insert every parameter into a tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundStore {
        let vars =
            self.map.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone(), true))).collect();
        BoundStore { vars }
    }
}

/// Tape handles for every parameter of one forward pass.
pub struct BoundStore {
    vars: BTreeMap<String, Var>,
}

impl BoundStore {
    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn uniform_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Tensor<T> {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor::new(vec![rows, cols], data).expect("matrix shape")
}

fn embedding_table<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Tensor<T> {
    let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
    let data = (0..rows * cols).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::new(vec![rows, cols], data).expect("embedding shape")
}

/// Initialize every learnable tensor: uniform(+-1/sqrt(fan_in)) matrices,
/// zero biases, unit layer-norm gains, normal(0, 0.02) embeddings, zero
/// log-sigmas. Creation order is fixed, so a seed pins the full state.
pub fn init_params<T: Scalar>(
    cfg: &ModelConfig,
    dims: &VocabDims,
    leaf_fanout: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ParamStore<T>, ModelError> {
    cfg.validate()?;
    let d = cfg.d_checkin();
    let mut store = ParamStore::new();

    store.insert("emb.user", embedding_table(dims.users, cfg.d_user, rng));
    store.insert("emb.poi", embedding_table(dims.pois, cfg.d_poi, rng));
    store.insert("emb.cat", embedding_table(dims.categories, cfg.d_cat, rng));
    store.insert("emb.geo", embedding_table(dims.geo_clusters, cfg.d_geo, rng));
    store.insert("emb.hour", embedding_table(24, d, rng));
    store.insert("emb.period_slot", embedding_table(cfg.slots_per_day, cfg.d_slot, rng));
    store.insert("emb.dow", embedding_table(7, cfg.d_dow, rng));

    if !cfg.ablation.no_iac {
        for (stack, width) in [("leaf", d), ("period", cfg.hidden)] {
            let head_dim = width / cfg.iac_heads;
            for layer in 0..cfg.iac_layers {
                let base = format!("iac.{stack}.l{layer}");
                for head in 0..cfg.iac_heads {
                    store.insert(format!("{base}.h{head}.wq"), uniform_matrix(width, head_dim, rng));
                    store.insert(format!("{base}.h{head}.wk"), uniform_matrix(width, head_dim, rng));
                    store.insert(format!("{base}.h{head}.wv"), uniform_matrix(width, head_dim, rng));
                }
                store.insert(format!("{base}.ln1.gain"), Tensor::filled(&[width], T::one()));
                store.insert(format!("{base}.ln1.bias"), Tensor::zeros(&[width]));
                store.insert(format!("{base}.ff1.w"), uniform_matrix(width, cfg.ff_inner, rng));
                store.insert(format!("{base}.ff1.b"), Tensor::zeros(&[cfg.ff_inner]));
                store.insert(format!("{base}.ff2.w"), uniform_matrix(cfg.ff_inner, width, rng));
                store.insert(format!("{base}.ff2.b"), Tensor::zeros(&[width]));
                store.insert(format!("{base}.ln2.gain"), Tensor::filled(&[width], T::one()));
                store.insert(format!("{base}.ln2.bias"), Tensor::zeros(&[width]));
            }
        }
    }

    if cfg.ablation.no_irc {
        store.insert("irc_repl.period.w", uniform_matrix(cfg.d_slot + d, cfg.hidden, rng));
        store.insert("irc_repl.period.b", Tensor::zeros(&[cfg.hidden]));
        store.insert("irc_repl.day.w", uniform_matrix(cfg.d_dow + cfg.hidden, cfg.hidden, rng));
        store.insert("irc_repl.day.b", Tensor::zeros(&[cfg.hidden]));
    } else {
        for (level, d_in, d_child, fanout) in [
            ("leaf", cfg.d_slot, d, leaf_fanout),
            ("day", cfg.d_dow, cfg.hidden, cfg.slots_per_day),
        ] {
            let base = format!("irc.{level}");
            for gate in ["i", "f", "o", "u"] {
                store.insert(format!("{base}.w.{gate}"), uniform_matrix(d_in, cfg.hidden, rng));
                store.insert(format!("{base}.b.{gate}"), Tensor::zeros(&[cfg.hidden]));
            }
            for gate in ["i", "o", "u"] {
                for pos in 0..fanout {
                    store.insert(
                        format!("{base}.u.{gate}.{pos}"),
                        uniform_matrix(d_child, cfg.hidden, rng),
                    );
                }
            }
            for k in 0..fanout {
                for l in 0..fanout {
                    store.insert(
                        format!("{base}.u.f.{k}.{l}"),
                        uniform_matrix(d_child, cfg.hidden, rng),
                    );
                }
            }
        }
    }

    store.insert("head.day.w", uniform_matrix(cfg.hidden, dims.pois, rng));
    store.insert("head.day.b", Tensor::zeros(&[dims.pois]));
    store.insert("head.period.w", uniform_matrix(cfg.hidden, dims.pois, rng));
    store.insert("head.period.b", Tensor::zeros(&[dims.pois]));
    store.insert("head.checkin.w", uniform_matrix(d, dims.pois, rng));
    store.insert("head.checkin.b", Tensor::zeros(&[dims.pois]));
    if !cfg.ablation.no_geo_head {
        store.insert("head.geo.w", uniform_matrix(cfg.hidden, dims.geo_clusters, rng));
        store.insert("head.geo.b", Tensor::zeros(&[dims.geo_clusters]));
    }
    if !cfg.ablation.no_cat_head {
        store.insert("head.cat.w", uniform_matrix(cfg.hidden, dims.categories, rng));
        store.insert("head.cat.b", Tensor::zeros(&[dims.categories]));
    }

    if !cfg.ablation.no_multitask {
        store.insert("loss.log_sigma.l", Tensor::scalar(T::zero()));
        if !cfg.ablation.no_geo_head {
            store.insert("loss.log_sigma.g", Tensor::scalar(T::zero()));
        }
        if !cfg.ablation.no_cat_head {
            store.insert("loss.log_sigma.c", Tensor::scalar(T::zero()));
        }
    }

    Ok(store)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn toy_cfg() -> ModelConfig {
        ModelConfig {
            d_user: 2,
            d_poi: 2,
            d_cat: 2,
            d_geo: 2,
            d_slot: 3,
            d_dow: 3,
            hidden: 4,
            iac_layers: 2,
            iac_heads: 2,
            ff_inner: 6,
            slots_per_day: 4,
            gamma: 1.0,
            dropout_embed: 0.0,
            dropout_ff: 0.0,
            ..Default::default()
        }
    }

    pub fn toy_dims() -> VocabDims {
        VocabDims { users: 3, pois: 5, categories: 3, geo_clusters: 2 }
    }
}
