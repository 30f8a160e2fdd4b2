//! Probe prompt construction: permuted-and-repeated prompts for attention
//! lag-CRP, free-recall prompts ending in a repeated cue, and token pools.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::seeding::{rng_for, Stream};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("{path}:{line}: {message}")]
    PoolFormat { path: String, line: usize, message: String },
    #[error("{path}:{line}: duplicate token id {id} (first seen on line {first})")]
    DuplicateToken {
        path: String,
        line: usize,
        id: u32,
        first: usize,
    },
    #[error("{path}:{line}: token id {id} is outside the vocabulary of {vocab_size}")]
    TokenOutOfVocab {
        path: String,
        line: usize,
        id: u32,
        vocab_size: usize,
    },
    #[error("invalid probe size: {0}")]
    Size(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Token ids ordered by descending corpus frequency; ids are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPool {
    ids: Vec<u32>,
}

impl TokenPool {
    pub fn new(ids: Vec<u32>) -> Result<Self, ProbeError> {
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(ProbeError::Size(format!("duplicate token id {dup} in pool")));
        }
        Ok(Self { ids })
    }

    /// `0..n`, the pool of a uniform synthetic distribution.
    pub fn range(n: u32) -> Self {
        Self { ids: (0..n).collect() }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.ids.iter().map(|id| format!("{id}\n")).collect()
    }
}

/// Parses the pool text format: one decimal id per line, `#` comments and
/// blank lines ignored. `path` is only used in error messages.
pub fn parse_token_pool(text: &str, path: &str, vocab_size: Option<usize>) -> Result<TokenPool, ProbeError> {
    let mut ids = Vec::new();
    let mut first_line = std::collections::HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let id: u32 = s.parse().map_err(|_| ProbeError::PoolFormat {
            path: path.to_string(),
            line,
            message: format!("expected a token id, found {s:?}"),
        })?;
        if let Some(v) = vocab_size {
            if id as usize >= v {
                return Err(ProbeError::TokenOutOfVocab {
                    path: path.to_string(),
                    line,
                    id,
                    vocab_size: v,
                });
            }
        }
        if let Some(&first) = first_line.get(&id) {
            return Err(ProbeError::DuplicateToken {
                path: path.to_string(),
                line,
                id,
                first,
            });
        }
        first_line.insert(id, line);
        ids.push(id);
    }
    Ok(TokenPool { ids })
}

pub fn load_token_pool(path: &Path, vocab_size: Option<usize>) -> Result<TokenPool, ProbeError> {
    let text = fs::read_to_string(path).map_err(|source| ProbeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_token_pool(&text, &path.display().to_string(), vocab_size)
}

/// Source sequence of `n` pool tokens followed by an exact copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagCrpPrompt {
    pub source: Vec<u32>,
    pub permutation: usize,
}

impl LagCrpPrompt {
    pub fn n(&self) -> usize {
        self.source.len()
    }

    pub fn tokens(&self) -> Vec<u32> {
        let mut t = self.source.clone();
        t.extend_from_slice(&self.source);
        t
    }
}

/// A shuffled list followed by a repeat of the item at `middle_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeRecallPrompt {
    pub list_tokens: Vec<u32>,
    pub middle_index: usize,
}

impl FreeRecallPrompt {
    pub fn n(&self) -> usize {
        self.list_tokens.len()
    }

    pub fn cue(&self) -> u32 {
        self.list_tokens[self.middle_index]
    }

    pub fn tokens(&self) -> Vec<u32> {
        let mut t = self.list_tokens.clone();
        t.push(self.cue());
        t
    }
}

fn check_sizes(pool: &TokenPool, n: usize, m: usize, prompt_len: usize, ctx_len: usize) -> Result<(), ProbeError> {
    if n == 0 || m == 0 {
        return Err(ProbeError::Size("N and the prompt count must be positive".into()));
    }
    if n > pool.len() {
        return Err(ProbeError::Size(format!("N={n} exceeds pool size {}", pool.len())));
    }
    if prompt_len > ctx_len {
        return Err(ProbeError::Size(format!(
            "prompt length {prompt_len} exceeds ctx_len {ctx_len}"
        )));
    }
    Ok(())
}

/// `m` independent uniform permutations of the first `n` pool tokens, each
/// duplicated to a `2n` prompt.
pub fn build_lagcrp_prompts(
    pool: &TokenPool,
    n: usize,
    m: usize,
    seed: u64,
    ctx_len: usize,
) -> Result<Vec<LagCrpPrompt>, ProbeError> {
    check_sizes(pool, n, m, 2 * n, ctx_len)?;
    let mut rng = rng_for(seed, Stream::Probe);
    Ok((0..m)
        .map(|permutation| {
            let mut source = pool.ids[..n].to_vec();
            source.shuffle(&mut rng);
            LagCrpPrompt { source, permutation }
        })
        .collect())
}

/// `m` shuffles of the first `n` pool tokens, each followed by the token at
/// `middle` (default `n / 2`).
pub fn build_freerecall_prompts(
    pool: &TokenPool,
    n: usize,
    m: usize,
    seed: u64,
    ctx_len: usize,
    middle: Option<usize>,
) -> Result<Vec<FreeRecallPrompt>, ProbeError> {
    check_sizes(pool, n, m, n + 1, ctx_len)?;
    let middle_index = middle.unwrap_or(n / 2);
    if middle_index >= n {
        return Err(ProbeError::Size(format!("middle index {middle_index} outside list of {n}")));
    }
    // A distinct stream offset keeps free-recall lists independent of the
    // lag-CRP permutations drawn under the same seed.
    let mut rng = rng_for(seed.wrapping_add(0x9e37_79b9_7f4a_7c15), Stream::Probe);
    Ok((0..m)
        .map(|_| {
            let mut list_tokens = pool.ids[..n].to_vec();
            list_tokens.shuffle(&mut rng);
            FreeRecallPrompt {
                list_tokens,
                middle_index,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn parses_pool_file() {
        let pool = parse_token_pool("5\n17\n3\n", "p", None).unwrap();
        assert_eq!(pool.ids(), &[5, 17, 3]);
        let pool = parse_token_pool("# top ids\n\n9\n  4  \n", "p", Some(10)).unwrap();
        assert_eq!(pool.ids(), &[9, 4]);
        assert_eq!(pool.to_text(), "9\n4\n");
    }

    #[test]
    fn pool_errors_carry_line_numbers() {
        match parse_token_pool("5\n# c\n7\n5\n", "pool.txt", None) {
            Err(ProbeError::DuplicateToken { line: 4, first: 1, id: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
        let err = parse_token_pool("1\nx2\n", "pool.txt", None).unwrap_err();
        assert!(err.to_string().starts_with("pool.txt:2:"), "{err}");
        assert!(matches!(
            parse_token_pool("3\n50257\n", "p", Some(50257)),
            Err(ProbeError::TokenOutOfVocab { line: 2, .. })
        ));
    }

    #[test]
    fn lagcrp_prompt_construction() {
        let pool = TokenPool::new(vec![7, 9, 2, 5]).unwrap();
        let prompts = build_lagcrp_prompts(&pool, 4, 10, 3, 8).unwrap();
        assert_eq!(prompts.len(), 10);
        for p in &prompts {
            let t = p.tokens();
            assert_eq!(t.len(), 8);
            for i in 0..4 {
                assert_eq!(t[i + 4], t[i]);
            }
            let mut sorted = p.source.clone();
            sorted.sort();
            assert_eq!(sorted, vec![2, 5, 7, 9]);
        }
        assert_eq!(prompts, build_lagcrp_prompts(&pool, 4, 10, 3, 8).unwrap());
        assert!(build_lagcrp_prompts(&pool, 4, 1, 3, 7).is_err());
        assert!(build_lagcrp_prompts(&pool, 5, 1, 3, 100).is_err());
    }

    #[test]
    fn permutations_are_uniform() {
        let pool = TokenPool::range(4);
        let prompts = build_lagcrp_prompts(&pool, 4, 10_000, 11, 8).unwrap();
        let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
        for p in prompts {
            *counts.entry(p.source).or_default() += 1;
        }
        assert_eq!(counts.len(), 24);
        for c in counts.values() {
            let f = *c as f64 / 10_000.0;
            assert!((f - 1.0 / 24.0).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn freerecall_prompt_construction() {
        let pool = TokenPool::range(200);
        let p = &build_freerecall_prompts(&pool, 5, 1, 0, 6, None).unwrap()[0];
        assert_eq!(p.middle_index, 2);
        let t = p.tokens();
        assert_eq!(t.len(), 6);
        assert_eq!(t[5], p.list_tokens[2]);

        let big = TokenPool::range(600);
        assert_eq!(build_freerecall_prompts(&big, 500, 1, 0, 1024, None).unwrap()[0].tokens().len(), 501);

        for p in build_freerecall_prompts(&pool, 100, 1000, 7, 128, None).unwrap() {
            let cue = p.cue();
            assert_eq!(p.tokens().iter().filter(|&&t| t == cue).count(), 2);
        }
        assert!(build_freerecall_prompts(&pool, 5, 1, 0, 5, None).is_err());
        assert!(build_freerecall_prompts(&pool, 5, 1, 0, 6, Some(5)).is_err());
    }
}
