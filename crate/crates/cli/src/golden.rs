//! Golden-logits sidecar: final-position logits of a fixed prompt, stored as
//! little-endian `f32` with no header.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};

use tempoprobe::transformer::{AblationMask, Model};

pub fn parse_golden_logits(bytes: &[u8], vocab_size: usize) -> anyhow::Result<Vec<f32>> {
    if bytes.len() != 4 * vocab_size {
        bail!(
            "sidecar holds {} bytes, expected 4 × vocab = {}",
            bytes.len(),
            4 * vocab_size
        );
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_golden_logits(path: &Path, vocab_size: usize) -> anyhow::Result<Vec<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading sidecar {}", path.display()))?;
    parse_golden_logits(&bytes, vocab_size).with_context(|| format!("sidecar {}", path.display()))
}

pub fn encode_golden_logits(logits: &[f32]) -> Vec<u8> {
    logits.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn final_logits(model: &Model, prompt: &[u32]) -> anyhow::Result<Vec<f32>> {
    let out = model.forward(prompt, false, &AblationMask::empty())?;
    let n = prompt.len();
    Ok(out.logits.row(n - 1).to_vec())
}

/// Largest absolute per-element difference between the model's logits and
/// the sidecar.
pub fn max_abs_logit_diff(model: &Model, prompt: &[u32], golden: &[f32]) -> anyhow::Result<f64> {
    let ours = final_logits(model, prompt)?;
    if ours.len() != golden.len() {
        bail!("model vocab {} differs from sidecar length {}", ours.len(), golden.len());
    }
    Ok(ours
        .iter()
        .zip(golden)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempoprobe::seeding::{rng_for, Stream};
    use tempoprobe::transformer::ModelConfig;

    #[test]
    fn round_trip_and_length_check() {
        let v = vec![1.5f32, -0.25, f32::MIN_POSITIVE];
        let bytes = encode_golden_logits(&v);
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], &1.5f32.to_le_bytes());
        assert_eq!(parse_golden_logits(&bytes, 3).unwrap(), v);
        assert!(parse_golden_logits(&bytes, 4).is_err());
    }

    #[test]
    fn self_parity_is_exact() {
        let mut cfg = ModelConfig::toy_induction();
        cfg.vocab_size = 40;
        cfg.ctx_len = 16;
        let m = Model::init_with_std(cfg, 0.02, &mut rng_for(5, Stream::Init)).unwrap();
        let prompt: Vec<u32> = (0..16).map(|i| (i * 7 % 40) as u32).collect();
        let golden = final_logits(&m, &prompt).unwrap();
        assert_eq!(golden.len(), 40);
        let parsed = parse_golden_logits(&encode_golden_logits(&golden), 40).unwrap();
        assert_eq!(max_abs_logit_diff(&m, &prompt, &parsed).unwrap(), 0.0);
    }
}
