use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::capture::{AblationMask, AttentionCapture, HeadCapture};
use super::engine::{next_token_loss, Engine};
use super::layout::{Layout, TensorSpec};
use super::{ModelConfig, TransformerError};
use crate::numerics::Tensor;

/// Standard deviation of the GPT-2 weight initialisation.
pub const INIT_STD: f64 = 0.02;

/// Decoder-only transformer with `f32` parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[n × vocab]` next-token logits.
    pub logits: Tensor,
    pub captures: Option<AttentionCapture>,
}

impl Model {
    /// All-zero parameters except layer-norm gains, which start at one.
    pub fn zeros(config: ModelConfig) -> Result<Self, TransformerError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0f32; layout.total()];
        for spec in layout.entries() {
            if is_ln_gain(&spec.name) {
                params[spec.range()].fill(1.0);
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Training initialisation: [`Model::init_with_std`] at 0.02, then a zero
    /// query projection. Every head starts with exactly zero attention scores
    /// (uniform attention), so an untrained head has an all-zero lag-CRP
    /// curve instead of a random one.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, TransformerError> {
        let mut model = Self::init_with_std(config, INIT_STD, rng)?;
        for spec in model.layout.entries().to_vec() {
            if spec.name.ends_with("attn.q.weight") {
                model.params[spec.range()].fill(0.0);
            }
        }
        Ok(model)
    }

    /// GPT-2 initialisation: `N(0, std)` weights and embeddings, residual
    /// output projections scaled by `1/√(2·n_layers)`, zero biases, unit gains.
    pub fn init_with_std<R: Rng + ?Sized>(config: ModelConfig, std: f64, rng: &mut R) -> Result<Self, TransformerError> {
        if !(std.is_finite() && std > 0.0) {
            return Err(TransformerError::InvalidConfig(format!("init std must be positive, got {std}")));
        }
        let mut model = Self::zeros(config)?;
        let resid_std = std / (2.0 * model.config.n_layers as f64).sqrt();
        let base = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, resid_std).expect("valid std");
        for spec in model.layout.entries().to_vec() {
            let dist = if spec.name.ends_with("attn.o.weight") || spec.name.ends_with("mlp.proj.weight") {
                resid
            } else if spec.shape.len() == 2 {
                base
            } else {
                continue;
            };
            for v in &mut model.params[spec.range()] {
                *v = dist.sample(rng) as f32;
            }
        }
        Ok(model)
    }

    /// Builds a model from a flat `f64` buffer laid out per [`Layout`].
    pub fn from_f64(config: ModelConfig, params: &[f64]) -> Result<Self, TransformerError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total() {
            return Err(TransformerError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params: params.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn tensor_slice(&self, name: &str) -> Option<&[f32]> {
        self.layout.get(name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_slice_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.params[range])
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let spec = self.layout.get(name)?;
        Some(Tensor::new(spec.shape.clone(), self.params[spec.range()].to_vec()).expect("layout shape"))
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> impl Iterator<Item = (&TensorSpec, &[f32])> {
        self.layout.entries().iter().map(|s| (s, &self.params[s.range()]))
    }

    /// Learnable positional embedding `[ctx_len × d_model]` (unscaled).
    pub fn positional_embedding(&self) -> Tensor {
        self.tensor("wpe").expect("wpe always present")
    }

    /// SHA-256 over tensor names, shapes and payload bytes (config excluded).
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        for (spec, data) in self.tensors() {
            h.update(spec.name.as_bytes());
            for &dim in &spec.shape {
                h.update((dim as u64).to_le_bytes());
            }
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// Converts parameters to `f64` once for repeated inference.
    pub fn prepare(&self) -> PreparedModel<'_> {
        PreparedModel {
            model: self,
            params: self.to_f64(),
        }
    }

    pub fn forward(
        &self,
        tokens: &[u32],
        capture: bool,
        ablate: &AblationMask,
    ) -> Result<ForwardOutput, TransformerError> {
        self.prepare().forward(tokens, capture, ablate)
    }

    /// `exp` of the mean next-token cross-entropy over positions `1..n`.
    pub fn perplexity(&self, tokens: &[u32]) -> Result<f64, TransformerError> {
        self.prepare().perplexity(tokens)
    }
}

fn is_ln_gain(name: &str) -> bool {
    name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight"
}

/// A model with parameters widened to `f64`, ready for repeated forwards.
pub struct PreparedModel<'m> {
    model: &'m Model,
    params: Vec<f64>,
}

impl PreparedModel<'_> {
    pub fn model(&self) -> &Model {
        self.model
    }

    fn engine(&self) -> Engine<'_> {
        Engine {
            cfg: &self.model.config,
            layout: &self.model.layout,
            params: &self.params,
        }
    }

    pub fn forward(
        &self,
        tokens: &[u32],
        capture: bool,
        ablate: &AblationMask,
    ) -> Result<ForwardOutput, TransformerError> {
        let cfg = &self.model.config;
        check_tokens(cfg, tokens)?;
        ablate.validate(cfg)?;
        let cache = self.engine().forward(tokens, ablate, capture);
        let n = cache.n;
        let logits = Tensor::from_f64(vec![n, cfg.vocab_size], &cache.logits).expect("logit shape");
        let captures = cache.pre_softmax.as_ref().map(|pre| {
            let nn = n * n;
            let mut heads = Vec::with_capacity(cfg.n_heads_total());
            for (l, layer_pre) in pre.iter().enumerate() {
                for h in 0..cfg.n_heads {
                    heads.push(HeadCapture {
                        pre_softmax: Tensor::from_f64(vec![n, n], &layer_pre[h * nn..(h + 1) * nn])
                            .expect("square"),
                        post_softmax: Tensor::from_f64(vec![n, n], cache.probs(l, h)).expect("square"),
                    });
                }
            }
            AttentionCapture::new(cfg.n_heads, heads).expect("engine captures are square")
        });
        Ok(ForwardOutput { logits, captures })
    }

    /// Final-position next-token distribution.
    pub fn next_token_probs(&self, tokens: &[u32], ablate: &AblationMask) -> Result<Vec<f64>, TransformerError> {
        let cfg = &self.model.config;
        check_tokens(cfg, tokens)?;
        ablate.validate(cfg)?;
        let cache = self.engine().forward(tokens, ablate, false);
        let v = cfg.vocab_size;
        let mut row = cache.logits[(cache.n - 1) * v..cache.n * v].to_vec();
        crate::numerics::kernels::softmax_prefix(&mut row, v);
        Ok(row)
    }

    pub fn perplexity(&self, tokens: &[u32]) -> Result<f64, TransformerError> {
        let cfg = &self.model.config;
        if tokens.len() < 2 {
            return Err(TransformerError::SequenceTooShort { len: tokens.len(), min: 2 });
        }
        check_tokens(cfg, tokens)?;
        let cache = self.engine().forward(tokens, &AblationMask::empty(), false);
        let (loss, _) = next_token_loss(&cache.logits, tokens, cfg.vocab_size, 0.0);
        Ok((loss / (tokens.len() - 1) as f64).exp())
    }
}

pub(crate) fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<(), TransformerError> {
    if tokens.is_empty() {
        return Err(TransformerError::SequenceTooShort { len: 0, min: 1 });
    }
    if tokens.len() > cfg.ctx_len {
        return Err(TransformerError::SequenceTooLong {
            len: tokens.len(),
            ctx_len: cfg.ctx_len,
        });
    }
    if let Some((position, &token)) = tokens
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= cfg.vocab_size)
    {
        return Err(TransformerError::TokenOutOfRange {
            position,
            token,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}
