use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TransformerError};
use crate::numerics::Tensor;

/// Attention head address, printed as `L{layer}H{head}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn is_valid(&self, cfg: &ModelConfig) -> bool {
        self.layer < cfg.n_layers && self.head < cfg.n_heads
    }

    /// All heads of a model in layer-major order.
    pub fn all(cfg: &ModelConfig) -> impl Iterator<Item = HeadId> + '_ {
        (0..cfg.n_layers).flat_map(move |l| (0..cfg.n_heads).map(move |h| HeadId::new(l, h)))
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix('L').ok_or_else(|| format!("bad head id {s:?}"))?;
        let (l, h) = rest.split_once('H').ok_or_else(|| format!("bad head id {s:?}"))?;
        Ok(HeadId::new(
            l.parse().map_err(|_| format!("bad layer in {s:?}"))?,
            h.parse().map_err(|_| format!("bad head in {s:?}"))?,
        ))
    }
}

/// Set of heads whose attention output is suppressed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AblationMask {
    heads: BTreeSet<HeadId>,
}

impl AblationMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(cfg: &ModelConfig) -> Self {
        HeadId::all(cfg).collect()
    }

    pub fn insert(&mut self, head: HeadId) -> bool {
        self.heads.insert(head)
    }

    pub fn contains(&self, layer: usize, head: usize) -> bool {
        self.heads.contains(&HeadId::new(layer, head))
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HeadId> {
        self.heads.iter()
    }

    /// Number of masked heads in each layer.
    pub fn per_layer_counts(&self, n_layers: usize) -> Vec<usize> {
        let mut counts = vec![0; n_layers];
        for h in &self.heads {
            if h.layer < n_layers {
                counts[h.layer] += 1;
            }
        }
        counts
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), TransformerError> {
        match self.heads.iter().find(|h| !h.is_valid(cfg)) {
            Some(h) => Err(TransformerError::InvalidHead(*h)),
            None => Ok(()),
        }
    }
}

impl FromIterator<HeadId> for AblationMask {
    fn from_iter<I: IntoIterator<Item = HeadId>>(iter: I) -> Self {
        Self {
            heads: iter.into_iter().collect(),
        }
    }
}

/// Attention matrices of one head for one forward pass.
#[derive(Debug, Clone)]
pub struct HeadCapture {
    /// Scaled dot-product logits for every `(i, j)`, including masked
    /// entries above the diagonal (see [`AttentionCapture::is_masked`]).
    pub pre_softmax: Tensor,
    /// Causal softmax pattern; all zeros for an ablated head.
    pub post_softmax: Tensor,
}

/// Per-head captures of a forward pass over `n` tokens.
#[derive(Debug, Clone)]
pub struct AttentionCapture {
    n_heads: usize,
    seq_len: usize,
    heads: Vec<HeadCapture>,
}

/// Which capture matrix an analysis reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    #[serde(alias = "pre_softmax")]
    Pre,
    #[serde(alias = "post_softmax")]
    Post,
}

impl ScoreSource {
    pub fn label(self) -> &'static str {
        match self {
            ScoreSource::Pre => "pre_softmax",
            ScoreSource::Post => "post_softmax",
        }
    }
}

impl FromStr for ScoreSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre" | "pre_softmax" => Ok(ScoreSource::Pre),
            "post" | "post_softmax" => Ok(ScoreSource::Post),
            _ => Err(format!("unknown score source {s:?} (expected pre|post)")),
        }
    }
}

impl AttentionCapture {
    /// Assembles captures in layer-major order (`n_heads` per layer). Every
    /// matrix must be square with the same side.
    pub fn new(n_heads: usize, heads: Vec<HeadCapture>) -> Result<Self, TransformerError> {
        let bad = |m: String| Err(TransformerError::InvalidCapture(m));
        if n_heads == 0 || heads.is_empty() || heads.len() % n_heads != 0 {
            return bad(format!("{} head captures do not fill layers of {n_heads}", heads.len()));
        }
        let seq_len = heads[0].pre_softmax.shape().first().copied().unwrap_or(0);
        for h in &heads {
            for t in [&h.pre_softmax, &h.post_softmax] {
                if t.shape() != [seq_len, seq_len] {
                    return bad(format!("capture shape {:?}, expected [{seq_len}, {seq_len}]", t.shape()));
                }
            }
        }
        Ok(Self {
            n_heads,
            seq_len,
            heads,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_layers(&self) -> usize {
        self.heads.len() / self.n_heads
    }

    pub fn head(&self, id: HeadId) -> Option<&HeadCapture> {
        if id.head >= self.n_heads {
            return None;
        }
        self.heads.get(id.layer * self.n_heads + id.head)
    }

    pub fn matrix(&self, id: HeadId, source: ScoreSource) -> Option<&Tensor> {
        self.head(id).map(|h| match source {
            ScoreSource::Pre => &h.pre_softmax,
            ScoreSource::Post => &h.post_softmax,
        })
    }

    /// Entries above the diagonal are recorded but lie outside the causal mask.
    pub fn is_masked(i: usize, j: usize) -> bool {
        j > i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_id_display_round_trip() {
        let id = HeadId::new(7, 3);
        assert_eq!(id.to_string(), "L7H3");
        assert_eq!("L7H3".parse::<HeadId>().unwrap(), id);
        assert!("7H3".parse::<HeadId>().is_err());
    }

    #[test]
    fn mask_validation_and_counts() {
        let cfg = ModelConfig::toy_induction();
        let mask: AblationMask = [HeadId::new(1, 0), HeadId::new(1, 3), HeadId::new(0, 2)]
            .into_iter()
            .collect();
        mask.validate(&cfg).unwrap();
        assert_eq!(mask.per_layer_counts(2), vec![1, 2]);
        let bad: AblationMask = [HeadId::new(2, 0)].into_iter().collect();
        assert!(bad.validate(&cfg).is_err());
        assert_eq!(AblationMask::all(&cfg).len(), 8);
    }
}
