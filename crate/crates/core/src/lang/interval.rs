//! Adversarial interval language.
//!
//! A sequence is split into intervals of length `l`. Inside an interval,
//! every ordered pair of positions `(i', j')` with `i' < j'` shares one fair
//! coin: the bit appears as slot `j'-1` of the token at `i'` and slot `i'`
//! of the token at `j'` (slots indexed `1..l-1`, slot 1 most significant).
//! Tokens therefore live in a vocabulary of size `2^(l-1)` and each interval
//! carries exactly `l(l-1)/2` independent bits; the language is uniform over
//! its support.
//!
//! Revealing a position pins one bit of every still-masked partner, so a
//! left-to-right sampler never errs, while two partners revealed in the same
//! step disagree on their shared bit with probability 1/2. That makes the
//! exact sequence error rate of the factorized sampler computable in closed
//! form (see [`IntervalLanguage::exact_ser`]).

use rand::{Rng, RngCore};

use super::{HmmModel, LangDescriptor, Language, LanguageDoc, LanguageDocBody, Sequence, Token};
use crate::error::{Error, Result};
use crate::oracle::{MaskedSequence, PosteriorMarginals, PosteriorOracle, Slot};
use crate::schedule::MaskingSchedule;
use std::collections::BTreeMap;

/// HMM form is kept as a cross-check for small `l` only; its state count is
/// `sum_i 2^((2l-i-1)i/2)`.
pub const HMM_FORM_MAX_INTERVAL: usize = 5;

/// The ordered-set-partition computation enumerates partitions of `l`;
/// beyond this only Monte Carlo SER is offered.
pub const EXACT_SER_MAX_INTERVAL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalLanguage {
    seq_len: usize,
    interval_len: usize,
    vocab_size: usize,
}

impl IntervalLanguage {
    pub fn new(seq_len: usize, interval_len: usize) -> Result<Self> {
        if interval_len < 2 {
            return Err(Error::Config(format!(
                "interval length must be >= 2, got {interval_len}"
            )));
        }
        if interval_len > 32 {
            return Err(Error::CapacityExceeded {
                what: "interval vocabulary 2^(l-1)",
                needed: 1u128 << (interval_len - 1),
                cap: 1 << 31,
            });
        }
        if !seq_len.is_multiple_of(interval_len) {
            return Err(Error::Config(format!(
                "interval length {interval_len} must divide sequence length {seq_len}"
            )));
        }
        Ok(IntervalLanguage {
            seq_len,
            interval_len,
            vocab_size: 1usize << (interval_len - 1),
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn interval_len(&self) -> usize {
        self.interval_len
    }

    /// Bit at `slot` (1-indexed, slot 1 most significant) of a token.
    #[inline]
    fn slot_bit(&self, token: Token, slot: usize) -> u8 {
        ((token >> (self.interval_len - 1 - slot)) & 1) as u8
    }

    /// The local position (1-indexed) that `slot` of local position `p`
    /// shares its bit with.
    #[inline]
    fn partner_of_slot(&self, p: usize, slot: usize) -> usize {
        if slot < p {
            slot
        } else {
            slot + 1
        }
    }

    /// The slot of local position `p` that is shared with partner `r`.
    #[inline]
    fn slot_of_partner(&self, p: usize, r: usize) -> usize {
        debug_assert_ne!(p, r);
        if r < p {
            r
        } else {
            r - 1
        }
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        for &t in tokens {
            if (t as usize) >= self.vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// True iff every intra-interval pair agrees on its shared bit.
    pub fn in_support(&self, tokens: &[Token]) -> Result<bool> {
        self.check_tokens(tokens)?;
        Ok(self.log2_prob_checked(tokens) > f64::NEG_INFINITY)
    }

    fn log2_prob_checked(&self, tokens: &[Token]) -> f64 {
        let l = self.interval_len;
        let mut pairs_seen = 0usize;
        for chunk in tokens.chunks(l) {
            let m = chunk.len();
            for i in 1..=m {
                for j in (i + 1)..=m {
                    // pair (i, j): slot j-1 of token i vs slot i of token j
                    let a = self.slot_bit(chunk[i - 1], j - 1);
                    let b = self.slot_bit(chunk[j - 1], i);
                    if a != b {
                        return f64::NEG_INFINITY;
                    }
                    pairs_seen += 1;
                }
            }
        }
        // Marginal of a prefix: every token exposes l-1 bit slots; a slot
        // shared with another present token is counted once.
        let exposed_bits = tokens.len() * (l - 1) - pairs_seen;
        -(exposed_bits as f64)
    }

    /// Marginal distribution of the token at global position `pos` given the
    /// observed slots: uniform over the tokens consistent with every
    /// revealed partner's pinned bit. Pins are applied bitwise and
    /// independently, so the result is well-defined even when the revealed
    /// evidence is internally inconsistent.
    fn position_marginal(&self, masked: &MaskedSequence, pos: usize) -> Vec<f64> {
        let l = self.interval_len;
        let start = pos - (pos % l);
        let p = (pos % l) + 1;
        // pins[slot-1] = Some(bit) if the partner of that slot is observed.
        let mut pins: [Option<u8>; 32] = [None; 32];
        let mut pin_count = 0usize;
        for slot in 1..l {
            let r = self.partner_of_slot(p, slot);
            let global = start + r - 1;
            if global >= masked.len() {
                continue;
            }
            if let Slot::Token(t) = masked.slot(global) {
                let partner_slot = self.slot_of_partner(r, p);
                pins[slot - 1] = Some(self.slot_bit(t, partner_slot));
                pin_count += 1;
            }
        }
        let prob = 1.0 / ((1usize << (l - 1 - pin_count)) as f64);
        let mut out = vec![0.0f64; self.vocab_size];
        'tok: for v in 0..self.vocab_size as u32 {
            for slot in 1..l {
                if let Some(bit) = pins[slot - 1] {
                    if self.slot_bit(v, slot) != bit {
                        continue 'tok;
                    }
                }
            }
            out[v as usize] = prob;
        }
        out
    }

    /// `log2` probability of the observed slots only (`-inf` when two
    /// observed partners disagree).
    fn log2_observed_evidence(&self, masked: &MaskedSequence) -> f64 {
        let l = self.interval_len;
        let mut visible_bits = 0usize;
        for chunk in masked.slots().chunks(l) {
            let mut observed: Vec<(usize, Token)> = Vec::new();
            for (off, slot) in chunk.iter().enumerate() {
                if let Slot::Token(t) = slot {
                    observed.push((off + 1, *t));
                }
            }
            visible_bits += observed.len() * (l - 1);
            for a in 0..observed.len() {
                for b in (a + 1)..observed.len() {
                    let (i, ti) = observed[a];
                    let (j, tj) = observed[b];
                    if self.slot_bit(ti, j - 1) != self.slot_bit(tj, i) {
                        return f64::NEG_INFINITY;
                    }
                    visible_bits -= 1; // shared bit counted once
                }
            }
        }
        -(visible_bits as f64)
    }

    /// HMM form: states `(i, A)` where `i` is the position inside the
    /// interval and `A` is the upper-triangular 0/1 matrix whose first `i`
    /// rows hold the bits already drawn. The induced sequence law equals the
    /// direct construction.
    pub fn to_hmm(&self) -> Result<HmmModel> {
        let l = self.interval_len;
        if l > HMM_FORM_MAX_INTERVAL {
            return Err(Error::CapacityExceeded {
                what: "interval HMM form",
                needed: l as u128,
                cap: HMM_FORM_MAX_INTERVAL as u64,
            });
        }
        // Row j (1-indexed) holds columns j..=l-1, i.e. l-j bits; the bit of
        // pair (j, c+1) sits at offset(j) + (c - j).
        let row_offset = |j: usize| -> usize { (1..j).map(|r| l - r).sum() };
        let bits_in_phase = |i: usize| -> usize { (1..=i).map(|j| l - j).sum() };
        let phase_count: Vec<usize> = (1..=l).map(|i| 1usize << bits_in_phase(i)).collect();
        let phase_base: Vec<usize> = {
            let mut acc = 0;
            let mut v = Vec::with_capacity(l);
            for c in &phase_count {
                v.push(acc);
                acc += c;
            }
            v
        };
        let s: usize = phase_count.iter().sum();
        let v = self.vocab_size;

        let pair_bit = |pattern: usize, r: usize, c: usize| -> u8 {
            ((pattern >> (row_offset(r) + (c - r))) & 1) as u8
        };
        let emit_token = |phase: usize, pattern: usize| -> Token {
            let mut tok: Token = 0;
            for slot in 1..l {
                let bit = if slot < phase {
                    pair_bit(pattern, slot, phase - 1)
                } else {
                    pair_bit(pattern, phase, slot)
                };
                tok |= (bit as Token) << (l - 1 - slot);
            }
            tok
        };

        let mut trans = vec![0.0f64; s * s];
        let mut emit = vec![0.0f64; s * (v + 1)];
        let mut init = vec![0.0f64; s];
        for st in 0..phase_count[0] {
            init[phase_base[0] + st] = 1.0 / phase_count[0] as f64;
        }
        for phase in 1..=l {
            for pattern in 0..phase_count[phase - 1] {
                let state = phase_base[phase - 1] + pattern;
                let tok = emit_token(phase, pattern);
                emit[state * (v + 1) + tok as usize] = 1.0;
                emit[state * (v + 1) + v] = 1.0 / s as f64;
                if phase < l {
                    let fresh = l - 1 - phase; // bits of row phase+1
                    let p = 1.0 / ((1usize << fresh) as f64);
                    for new_bits in 0..(1usize << fresh) {
                        let succ_pattern = pattern | (new_bits << bits_in_phase(phase));
                        trans[state * s + phase_base[phase] + succ_pattern] = p;
                    }
                } else {
                    let p = 1.0 / phase_count[0] as f64;
                    for new_bits in 0..phase_count[0] {
                        trans[state * s + phase_base[0] + new_bits] = p;
                    }
                }
            }
        }
        HmmModel::from_parts(s, v, trans, emit, init, 0.0, None)
    }

    /// Exact SER of the factorized sampler with exact marginals under a
    /// masking schedule.
    ///
    /// Per interval, the reveal steps of the `l` positions are iid over the
    /// schedule's increments; a set partition of the positions into equal-
    /// step blocks succeeds with probability `(1/2)^(within-block pairs)`.
    /// Partition probabilities reduce to symmetric sums of step weights
    /// computed by a subset DP over steps, and intervals are independent.
    pub fn exact_ser(&self, schedule: &MaskingSchedule) -> Result<f64> {
        let success = self.per_interval_success(schedule)?;
        let m = (self.seq_len / self.interval_len) as f64;
        // 1 - success^M, computed stably for success near 1.
        Ok(-(m * success.ln()).exp_m1())
    }

    /// Probability that one interval is reproduced without error.
    pub fn per_interval_success(&self, schedule: &MaskingSchedule) -> Result<f64> {
        let l = self.interval_len;
        if l > EXACT_SER_MAX_INTERVAL {
            return Err(Error::CapacityExceeded {
                what: "exact interval SER",
                needed: l as u128,
                cap: EXACT_SER_MAX_INTERVAL as u64,
            });
        }
        let mut total = 0.0f64;
        for shape in integer_partitions(l) {
            let within_pairs: usize = shape.iter().map(|&g| g * (g - 1) / 2).sum();
            let weight = 0.5f64.powi(within_pairs as i32);
            total += set_partition_count(l, &shape)
                * weight
                * distinct_step_assignment_mass(schedule.deltas(), &shape);
        }
        Ok(total)
    }

    /// Probability that all `l` positions of one interval reveal at distinct
    /// steps (exact counterpart of the Monte Carlo estimate).
    pub fn prob_all_distinct_steps(&self, schedule: &MaskingSchedule) -> Result<f64> {
        let l = self.interval_len;
        if l > EXACT_SER_MAX_INTERVAL {
            return Err(Error::CapacityExceeded {
                what: "distinct-step probability",
                needed: l as u128,
                cap: EXACT_SER_MAX_INTERVAL as u64,
            });
        }
        Ok(distinct_step_assignment_mass(schedule.deltas(), &vec![1usize; l]))
    }

    pub fn to_doc(&self) -> LanguageDoc {
        LanguageDoc::new(LanguageDocBody::Interval {
            seq_len: self.seq_len,
            interval_len: self.interval_len,
        })
    }
}

/// `sum over ordered tuples of pairwise-distinct steps (k_1..k_m)` of
/// `prod_i delta[k_i]^shape[i]`, by a DP over steps with a bitmask of
/// already-assigned blocks.
fn distinct_step_assignment_mass(deltas: &[f64], shape: &[usize]) -> f64 {
    let m = shape.len();
    let full = (1usize << m) - 1;
    let mut f = vec![0.0f64; full + 1];
    f[0] = 1.0;
    for &d in deltas {
        if d == 0.0 {
            continue;
        }
        let pow: Vec<f64> = shape.iter().map(|&g| d.powi(g as i32)).collect();
        for s in (1..=full).rev() {
            let mut acc = 0.0;
            for (i, &p) in pow.iter().enumerate() {
                if s & (1 << i) != 0 {
                    acc += f[s & !(1 << i)] * p;
                }
            }
            f[s] += acc;
        }
    }
    f[full]
}

/// Non-increasing integer partitions of `n`.
fn integer_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 0 {
            out.push(cur.clone());
            return;
        }
        for k in (1..=max.min(n)).rev() {
            cur.push(k);
            rec(n - k, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out
}

/// Number of set partitions of `[n]` with the given multiset of block sizes:
/// `n! / (prod g_i! * prod_size mult(size)!)`.
fn set_partition_count(n: usize, shape: &[usize]) -> f64 {
    let fact = |k: usize| -> f64 { (1..=k).map(|x| x as f64).product() };
    let mut denom = 1.0f64;
    let mut i = 0;
    while i < shape.len() {
        let mut j = i;
        while j < shape.len() && shape[j] == shape[i] {
            j += 1;
        }
        let mult = j - i;
        for &g in &shape[i..j] {
            denom *= fact(g);
        }
        denom *= fact(mult);
        i = j;
    }
    fact(n) / denom
}

/// Direct bitwise posterior oracle; `O(l)` pin lookups per queried position.
pub struct IntervalOracle {
    lang: IntervalLanguage,
}

impl PosteriorOracle for IntervalOracle {
    fn marginals_at(
        &mut self,
        masked: &MaskedSequence,
        positions: &[usize],
    ) -> Result<PosteriorMarginals> {
        for slot in masked.slots() {
            if let Slot::Token(t) = slot {
                if (*t as usize) >= self.lang.vocab_size {
                    return Err(Error::TokenOutOfVocab {
                        token: *t,
                        vocab: self.lang.vocab_size,
                    });
                }
            }
        }
        let mut entries = BTreeMap::new();
        for &pos in positions {
            if pos >= masked.len() {
                return Err(Error::LengthMismatch {
                    got: pos,
                    expected: masked.len(),
                });
            }
            if !masked.is_masked(pos) {
                return Err(Error::Unsupported(
                    "marginal requested at an observed position".into(),
                ));
            }
            entries.insert(pos, self.lang.position_marginal(masked, pos));
        }
        let log2_evidence = self.lang.log2_observed_evidence(masked);
        let degenerate = log2_evidence == f64::NEG_INFINITY;
        Ok(PosteriorMarginals::new(entries, degenerate, log2_evidence))
    }
}

impl Language for IntervalLanguage {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn sample_sequence(&self, len: usize, rng: &mut dyn RngCore) -> Sequence {
        let l = self.interval_len;
        let mut tokens: Vec<Token> = Vec::with_capacity(len);
        // 1-indexed (i, j) pair bits; row 0 / column 0 unused.
        let mut pair_bits = vec![0u8; (l + 1) * (l + 1)];
        let mut produced = 0usize;
        while produced < len {
            for i in 1..=l {
                for j in (i + 1)..=l {
                    pair_bits[i * (l + 1) + j] = rng.random_range(0..2u8);
                }
            }
            let m = l.min(len - produced);
            for p in 1..=m {
                let mut tok: Token = 0;
                for slot in 1..l {
                    let r = self.partner_of_slot(p, slot);
                    let (i, j) = (p.min(r), p.max(r));
                    let bit = pair_bits[i * (l + 1) + j];
                    tok |= (bit as Token) << (l - 1 - slot);
                }
                tokens.push(tok);
            }
            produced += m;
        }
        Sequence::new(tokens)
    }

    fn log_prob2(&self, tokens: &[Token]) -> Result<f64> {
        self.check_tokens(tokens)?;
        Ok(self.log2_prob_checked(tokens))
    }

    fn ar_conditional(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        self.check_tokens(prefix)?;
        if self.log2_prob_checked(prefix) == f64::NEG_INFINITY {
            return Err(Error::PrefixOutsideSupport);
        }
        let masked = {
            let mut slots = MaskedSequence::all_masked(prefix.len() + 1);
            for (i, &t) in prefix.iter().enumerate() {
                slots.set_token(i, t);
            }
            slots
        };
        Ok(self.position_marginal(&masked, prefix.len()))
    }

    fn oracle(&self) -> Result<Box<dyn PosteriorOracle>> {
        Ok(Box::new(IntervalOracle { lang: *self }))
    }

    fn descriptor(&self) -> LangDescriptor {
        LangDescriptor {
            kind: "interval".to_string(),
            n_or_states: self.interval_len as u32,
            vocab: self.vocab_size as u32,
            threshold: 0.0,
        }
    }
}
