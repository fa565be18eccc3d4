//! Block shuffling of token sequences.
//!
//! A sequence of `n` tokens is cut into `4^s` consecutive blocks of
//! `ceil(n / 4^s)` tokens (the last block may be shorter, or some trailing
//! blocks empty), the blocks are put in a uniformly random order, and the
//! result is concatenated. `s = 0` leaves the sequence untouched; when
//! `n = 4^s` every token is its own block.
//!
//! The permutation is a Fisher-Yates shuffle driven by ChaCha20 (stream 0, or
//! a stream derived from the prompt id) with Lemire's unbiased range
//! reduction, so a given `(seed, prompt_id)` always yields the same order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifies the generator construction. Bump if the permutation for a
/// given seed ever changes.
pub const SHUFFLE_RNG_VERSION: &str = "chacha20-lemire-fy/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleSpec {
    pub s: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShuffleError {
    #[error("cannot shuffle an empty sequence")]
    Empty,
    #[error("4^{s} blocks exceed the {n} tokens")]
    TooManyBlocks { s: u32, n: usize },
}

/// Largest `s` with `4^s <= n`.
pub fn full_shuffle_index(n: usize) -> u32 {
    let mut s = 0;
    let mut blocks = 4usize;
    while blocks <= n {
        s += 1;
        match blocks.checked_mul(4) {
            Some(b) => blocks = b,
            None => break,
        }
    }
    s
}

/// Stable 64-bit FNV-1a hash, used to derive a per-prompt stream.
pub fn stream_for(prompt_id: &str) -> u64 {
    prompt_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn uniform_below(rng: &mut ChaCha20Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let mut m = (rng.next_u64() as u128) * (bound as u128);
    if (m as u64) < bound {
        let threshold = bound.wrapping_neg() % bound;
        while (m as u64) < threshold {
            m = (rng.next_u64() as u128) * (bound as u128);
        }
    }
    (m >> 64) as u64
}

/// Order in which the `n_blocks` blocks are emitted.
pub fn block_order(n_blocks: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n_blocks).collect();
    for i in (1..n_blocks).rev() {
        let j = uniform_below(&mut rng, i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

fn validate(n: usize, s: u32) -> Result<usize, ShuffleError> {
    if n == 0 {
        return Err(ShuffleError::Empty);
    }
    4usize
        .checked_pow(s)
        .filter(|&b| b <= n)
        .ok_or(ShuffleError::TooManyBlocks { s, n })
}

/// Source index of every output position.
pub fn shuffle_permutation(n: usize, spec: ShuffleSpec, stream: u64) -> Result<Vec<usize>, ShuffleError> {
    let n_blocks = validate(n, spec.s)?;
    let block = n.div_ceil(n_blocks);
    let mut perm = Vec::with_capacity(n);
    for b in block_order(n_blocks, spec.seed, stream) {
        let start = (b * block).min(n);
        let end = ((b + 1) * block).min(n);
        perm.extend(start..end);
    }
    Ok(perm)
}

pub fn shuffle_tokens<T: Clone>(tokens: &[T], spec: ShuffleSpec) -> Result<Vec<T>, ShuffleError> {
    shuffle_with_stream(tokens, spec, 0)
}

/// Like [`shuffle_tokens`] but on the stream reserved for `prompt_id`, so
/// prompts shuffled under one dataset seed get independent permutations.
pub fn shuffle_tokens_for_prompt<T: Clone>(
    tokens: &[T],
    spec: ShuffleSpec,
    prompt_id: &str,
) -> Result<Vec<T>, ShuffleError> {
    shuffle_with_stream(tokens, spec, stream_for(prompt_id))
}

fn shuffle_with_stream<T: Clone>(tokens: &[T], spec: ShuffleSpec, stream: u64) -> Result<Vec<T>, ShuffleError> {
    let perm = shuffle_permutation(tokens.len(), spec, stream)?;
    Ok(perm.into_iter().map(|i| tokens[i].clone()).collect())
}
