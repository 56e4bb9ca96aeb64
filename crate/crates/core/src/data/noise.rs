//! Input corruption: the denoising noise function and masked-LM masking.

use super::vocab::{BOS_ID, EOS_ID, MASK_ID, N_SPECIALS};
use super::TokenId;
use crate::rng::DetRng;

/// Noise applied to denoising auto-encoder inputs: random interior token
/// deletion plus a bounded local shuffle.
#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    /// Per-token deletion probability, in [0, 1).
    pub p_drop: f64,
    /// Maximum distance any surviving token may move.
    pub k_swap: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { p_drop: 0.1, k_swap: 3, seed: 0 }
    }
}

/// Corrupt one BOS..EOS framed sentence: drop interior tokens independently
/// with `p_drop` (always keeping at least one when the interior is
/// non-empty), then locally permute survivors so that no token moves more
/// than `k_swap` positions. BOS and EOS are never touched.
pub fn add_noise(ids: &[TokenId], cfg: &NoiseConfig, rng: &mut DetRng) -> Vec<TokenId> {
    debug_assert!(ids.len() >= 2 && ids[0] == BOS_ID && *ids.last().unwrap() == EOS_ID);
    let interior = &ids[1..ids.len() - 1];
    if interior.is_empty() {
        return ids.to_vec();
    }

    let mut kept: Vec<TokenId> = Vec::with_capacity(interior.len());
    for &t in interior {
        if !rng.bernoulli(cfg.p_drop) {
            kept.push(t);
        }
    }
    if kept.is_empty() {
        kept.push(interior[rng.below(interior.len())]);
    }

    if cfg.k_swap > 0 && kept.len() > 1 {
        // Sort by position + bounded random offset; with offsets in
        // [0, k_swap] no element can move further than k_swap.
        let mut keyed: Vec<(usize, usize, TokenId)> = kept
            .iter()
            .enumerate()
            .map(|(i, &t)| (i + rng.range_inclusive(0, cfg.k_swap), i, t))
            .collect();
        keyed.sort_by_key(|&(key, idx, _)| (key, idx));
        kept = keyed.into_iter().map(|(_, _, t)| t).collect();
    }

    let mut out = Vec::with_capacity(kept.len() + 2);
    out.push(BOS_ID);
    out.extend(kept);
    out.push(EOS_ID);
    out
}

/// A masked-LM target: flat position in the corrupted sequence plus the
/// original token at that position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedPosition {
    pub pos: usize,
    pub original: TokenId,
}

/// BERT-style masking over interior positions: each is selected
/// independently with `mask_rate`; selected positions are replaced by MASK
/// 80% of the time, by a random non-special token 10%, and kept 10%.
pub fn mask_for_mlm(
    ids: &[TokenId],
    mask_rate: f64,
    vocab_size: usize,
    rng: &mut DetRng,
) -> (Vec<TokenId>, Vec<MaskedPosition>) {
    let mut out = ids.to_vec();
    let mut targets = Vec::new();
    if ids.len() <= 2 {
        return (out, targets);
    }
    let n_real = vocab_size - N_SPECIALS;
    for pos in 1..ids.len() - 1 {
        if !rng.bernoulli(mask_rate) {
            continue;
        }
        targets.push(MaskedPosition { pos, original: ids[pos] });
        let roll = rng.f64();
        if roll < 0.8 {
            out[pos] = MASK_ID;
        } else if roll < 0.9 && n_real > 0 {
            out[pos] = (N_SPECIALS + rng.below(n_real)) as TokenId;
        } // else: keep original token
    }
    (out, targets)
}
