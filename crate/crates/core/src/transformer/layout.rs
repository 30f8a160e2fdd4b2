//! Flat parameter layout and the canonical tensor naming scheme.
//!
//! Every model parameter lives in one contiguous buffer; this module records
//! where each named tensor starts. Names follow the GPT-2 checkpoint family,
//! with the fused `c_attn` projection split into separate q/k/v tensors:
//!
//! | name                      | shape             |
//! |---------------------------|-------------------|
//! | `wte`                     | vocab × d_model   |
//! | `wpe`                     | ctx_len × d_model |
//! | `h.{l}.ln_1.weight/bias`  | d_model           |
//! | `h.{l}.attn.{q,k,v,o}.weight` | d_model × d_model |
//! | `h.{l}.attn.{q,k,v,o}.bias`   | d_model       |
//! | `h.{l}.ln_2.weight/bias`  | d_model (MLP only)|
//! | `h.{l}.mlp.fc.weight`     | d_model × d_mlp   |
//! | `h.{l}.mlp.fc.bias`       | d_mlp             |
//! | `h.{l}.mlp.proj.weight`   | d_mlp × d_model   |
//! | `h.{l}.mlp.proj.bias`     | d_model           |
//! | `ln_f.weight/bias`        | d_model           |
//! | `lm_head.weight`          | vocab × d_model (untied only) |
//!
//! Projection weights are stored input-major (`y = x · W + b`), matching the
//! GPT-2 `Conv1D` convention so exported weights need no transposition.

use std::collections::HashMap;

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Whether decoupled weight decay applies (projection matrices only).
    pub decay: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpLayout {
    pub ln2_w: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockLayout {
    pub ln1_w: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub mlp: Option<MlpLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    entries: Vec<TensorSpec>,
    index: HashMap<String, usize>,
    total: usize,
    pub wte: usize,
    pub wpe: usize,
    pub blocks: Vec<BlockLayout>,
    pub ln_f_w: usize,
    pub ln_f_b: usize,
    /// Offset of the unembedding matrix (`wte` when tied).
    pub unembed: usize,
}

struct Builder {
    entries: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], decay: bool) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.entries.push(TensorSpec {
            name,
            shape: shape.to_vec(),
            offset,
            decay,
        });
        offset
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder {
            entries: Vec::new(),
            total: 0,
        };
        let wte = b.push("wte".into(), &[cfg.vocab_size, d], false);
        let wpe = b.push("wpe".into(), &[cfg.ctx_len, d], false);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("h.{l}.{s}");
            let ln1_w = b.push(p("ln_1.weight"), &[d], false);
            let ln1_b = b.push(p("ln_1.bias"), &[d], false);
            let wq = b.push(p("attn.q.weight"), &[d, d], true);
            let bq = b.push(p("attn.q.bias"), &[d], false);
            let wk = b.push(p("attn.k.weight"), &[d, d], true);
            let bk = b.push(p("attn.k.bias"), &[d], false);
            let wv = b.push(p("attn.v.weight"), &[d, d], true);
            let bv = b.push(p("attn.v.bias"), &[d], false);
            let wo = b.push(p("attn.o.weight"), &[d, d], true);
            let bo = b.push(p("attn.o.bias"), &[d], false);
            let mlp = cfg.has_mlp().then(|| MlpLayout {
                ln2_w: b.push(p("ln_2.weight"), &[d], false),
                ln2_b: b.push(p("ln_2.bias"), &[d], false),
                w_fc: b.push(p("mlp.fc.weight"), &[d, cfg.d_mlp], true),
                b_fc: b.push(p("mlp.fc.bias"), &[cfg.d_mlp], false),
                w_proj: b.push(p("mlp.proj.weight"), &[cfg.d_mlp, d], true),
                b_proj: b.push(p("mlp.proj.bias"), &[d], false),
            });
            blocks.push(BlockLayout {
                ln1_w,
                ln1_b,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                mlp,
            });
        }
        let ln_f_w = b.push("ln_f.weight".into(), &[d], false);
        let ln_f_b = b.push("ln_f.bias".into(), &[d], false);
        let unembed = if cfg.tied_embeddings {
            wte
        } else {
            b.push("lm_head.weight".into(), &[cfg.vocab_size, d], false)
        };
        let index = b
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        Self {
            entries: b.entries,
            index,
            total: b.total,
            wte,
            wpe,
            blocks,
            ln_f_w,
            ln_f_b,
            unembed,
        }
    }

    pub fn entries(&self) -> &[TensorSpec] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Total number of scalar parameters.
    pub fn total(&self) -> usize {
        self.total
    }
}
