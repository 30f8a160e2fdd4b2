use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Token-id sequences with their next-token targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<u32>>,
    /// `targets[b][t] == inputs[b][t + 1]`.
    pub targets: Vec<Vec<u32>>,
}

impl Batch {
    pub fn from_sequences(inputs: Vec<Vec<u32>>) -> Self {
        let targets = inputs.iter().map(|s| s[1..].to_vec()).collect();
        Self { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `batch_size` sequences of length `seq_len`: a prefix of `prefix_len`
/// tokens drawn uniformly from `0..pool_size`, its exact repetition, then
/// fresh random tokens up to `seq_len`.
pub fn generate_repeat_batch<R: Rng + ?Sized>(
    batch_size: usize,
    seq_len: usize,
    pool_size: usize,
    prefix_len: usize,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    if prefix_len == 0 || 2 * prefix_len > seq_len {
        return Err(TrainError::InvalidTask(format!(
            "prefix_len {prefix_len} must be positive and at most half of seq_len {seq_len}"
        )));
    }
    if pool_size == 0 || pool_size > u32::MAX as usize {
        return Err(TrainError::InvalidTask(format!("bad pool size {pool_size}")));
    }
    let pool = pool_size as u32;
    let inputs = (0..batch_size)
        .map(|_| {
            let mut seq: Vec<u32> = (0..prefix_len).map(|_| rng.random_range(0..pool)).collect();
            seq.extend_from_within(..prefix_len);
            seq.extend((2 * prefix_len..seq_len).map(|_| rng.random_range(0..pool)));
            seq
        })
        .collect();
    Ok(Batch::from_sequences(inputs))
}

/// Like [`generate_repeat_batch`], but each sequence places the prefix and
/// its repetition at a uniformly random start, with fresh random tokens on
/// both sides. Returns the batch and the start of every sequence.
pub fn generate_shifted_repeat_batch<R: Rng + ?Sized>(
    batch_size: usize,
    seq_len: usize,
    pool_size: usize,
    prefix_len: usize,
    rng: &mut R,
) -> Result<(Batch, Vec<usize>), TrainError> {
    let base = generate_repeat_batch(batch_size, seq_len, pool_size, prefix_len, rng)?;
    let mut starts = Vec::with_capacity(batch_size);
    let inputs = base
        .inputs
        .into_iter()
        .map(|seq| {
            let start = rng.random_range(0..=seq_len - 2 * prefix_len);
            starts.push(start);
            // The padding is i.i.d., so rotating it to the front keeps it fresh.
            let mut seq = seq;
            seq.rotate_right(start);
            seq
        })
        .collect();
    Ok((Batch::from_sequences(inputs), starts))
}

/// `batch_size` sequences that cycle a random block of `prefix_len` tokens
/// through the whole sequence, each entering the cycle at a random phase.
pub fn generate_cycled_batch<R: Rng + ?Sized>(
    batch_size: usize,
    seq_len: usize,
    pool_size: usize,
    prefix_len: usize,
    rng: &mut R,
) -> Result<Batch, TrainError> {
    if prefix_len == 0 || 2 * prefix_len > seq_len {
        return Err(TrainError::InvalidTask(format!(
            "prefix_len {prefix_len} must be positive and at most half of seq_len {seq_len}"
        )));
    }
    if pool_size == 0 || pool_size > u32::MAX as usize {
        return Err(TrainError::InvalidTask(format!("bad pool size {pool_size}")));
    }
    let pool = pool_size as u32;
    let inputs = (0..batch_size)
        .map(|_| {
            let block: Vec<u32> = (0..prefix_len).map(|_| rng.random_range(0..pool)).collect();
            let phase = rng.random_range(0..prefix_len);
            (0..seq_len).map(|i| block[(i + phase) % prefix_len]).collect()
        })
        .collect();
    Ok(Batch::from_sequences(inputs))
}

/// Where the repeated block sits in a training sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatLayout {
    /// Block, one repetition, then random tokens.
    Front,
    /// As `Front`, rotated to a random start.
    Shifted,
    /// The block repeats until the sequence is full.
    ///
    /// With `Front` a model can find the repetition from absolute position
    /// alone, and `Shifted` leaves too few predictable tokens for a small
    /// model to leave the unigram plateau within a few thousand steps. Short
    /// periods let a model match only against the first few positions, so
    /// the toy task keeps periods of at least a quarter of the sequence.
    #[default]
    Cycled,
}

/// Repeat task with a prefix length drawn per batch from
/// `min_prefix..=max_prefix`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatTask {
    pub pool_size: usize,
    pub min_prefix: usize,
    pub max_prefix: usize,
    #[serde(default)]
    pub layout: RepeatLayout,
}

impl RepeatTask {
    pub fn toy() -> Self {
        Self {
            pool_size: 128,
            min_prefix: 32,
            max_prefix: 64,
            layout: RepeatLayout::Cycled,
        }
    }

    pub fn validate(&self, seq_len: usize, vocab_size: usize) -> Result<(), TrainError> {
        if self.min_prefix == 0 || self.min_prefix > self.max_prefix || 2 * self.max_prefix > seq_len {
            return Err(TrainError::InvalidTask(format!(
                "prefix range {}..={} does not fit seq_len {seq_len}",
                self.min_prefix, self.max_prefix
            )));
        }
        if self.pool_size == 0 || self.pool_size > vocab_size {
            return Err(TrainError::InvalidTask(format!(
                "pool size {} exceeds vocabulary {vocab_size}",
                self.pool_size
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, seq_len: usize, rng: &mut R) -> Result<Batch, TrainError> {
        let prefix = rng.random_range(self.min_prefix..=self.max_prefix);
        match self.layout {
            RepeatLayout::Front => generate_repeat_batch(batch_size, seq_len, self.pool_size, prefix, rng),
            RepeatLayout::Shifted => {
                Ok(generate_shifted_repeat_batch(batch_size, seq_len, self.pool_size, prefix, rng)?.0)
            }
            RepeatLayout::Cycled => generate_cycled_batch(batch_size, seq_len, self.pool_size, prefix, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{rng_for, Stream};

    #[test]
    fn exact_repeat_construction() {
        let mut rng = rng_for(1, Stream::Data);
        let b = generate_repeat_batch(1, 6, 10, 3, &mut rng).unwrap();
        let s = &b.inputs[0];
        assert_eq!(s.len(), 6);
        assert_eq!(s[..3], s[3..]);
        assert_eq!(b.targets[0], s[1..]);
    }

    #[test]
    fn repetition_holds_on_many_samples() {
        let mut rng = rng_for(2, Stream::Data);
        let mut count = 0;
        while count < 1000 {
            let prefix = rng.random_range(1..=20);
            let b = generate_repeat_batch(10, 48, 50, prefix, &mut rng).unwrap();
            for (seq, tgt) in b.inputs.iter().zip(&b.targets) {
                assert_eq!(seq.len(), 48);
                for i in 0..prefix {
                    assert_eq!(seq[i], seq[i + prefix]);
                }
                assert!(seq.iter().all(|&t| t < 50));
                for t in 0..47 {
                    assert_eq!(tgt[t], seq[t + 1]);
                }
                count += 1;
            }
        }
    }

    #[test]
    fn shifted_repeat_keeps_the_block_intact() {
        let mut rng = rng_for(3, Stream::Data);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let prefix = rng.random_range(1..=20);
            let (b, starts) = generate_shifted_repeat_batch(5, 48, 50, prefix, &mut rng).unwrap();
            for (seq, &s) in b.inputs.iter().zip(&starts) {
                assert_eq!(seq.len(), 48);
                assert!(s + 2 * prefix <= 48);
                assert_eq!(seq[s..s + prefix], seq[s + prefix..s + 2 * prefix]);
                seen.insert(s);
            }
        }
        assert!(seen.len() > 20);
    }

    #[test]
    fn cycled_sequences_have_the_block_period() {
        let mut rng = rng_for(4, Stream::Data);
        for prefix in [1, 5, 16, 24] {
            let b = generate_cycled_batch(6, 48, 30, prefix, &mut rng).unwrap();
            for seq in &b.inputs {
                assert_eq!(seq.len(), 48);
                assert!((prefix..48).all(|i| seq[i] == seq[i - prefix]));
            }
        }
        assert!(generate_cycled_batch(1, 48, 30, 25, &mut rng).is_err());
    }

    #[test]
    fn layout_defaults_to_cycled() {
        let t: RepeatTask = serde_json::from_str(r#"{"pool_size": 8, "min_prefix": 2, "max_prefix": 4}"#).unwrap();
        assert_eq!(t.layout, RepeatLayout::Cycled);
        let t: RepeatTask =
            serde_json::from_str(r#"{"pool_size": 8, "min_prefix": 2, "max_prefix": 4, "layout": "front"}"#).unwrap();
        assert_eq!(t.layout, RepeatLayout::Front);
    }

    #[test]
    fn deterministic_under_seed() {
        let task = RepeatTask::toy();
        let a = task.sample(4, 128, &mut rng_for(9, Stream::Data)).unwrap();
        let b = task.sample(4, 128, &mut rng_for(9, Stream::Data)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_oversized_prefix() {
        let mut rng = rng_for(0, Stream::Data);
        assert!(generate_repeat_batch(1, 6, 10, 4, &mut rng).is_err());
        assert!(RepeatTask::toy().validate(100, 128).is_err());
        assert!(RepeatTask::toy().validate(128, 64).is_err());
    }
}
