//! n-gram ground-truth language.
//!
//! A model of order `n` over vocabulary `V` holds a `V^(n-1) x V` transition
//! table and a joint distribution over the `V^(n-1)` initial contexts. The
//! first `n-1` tokens of a sequence are drawn jointly from the initial
//! context distribution, every later token from the transition row of its
//! preceding context.

use once_cell::sync::OnceCell;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::tables;
use super::{HmmModel, LangDescriptor, Language, LanguageDoc, LanguageDocBody, Sequence, Token};
use crate::error::{Error, Result};
use crate::oracle::{PosteriorEngine, PosteriorOracle};

/// Default cap on the embedded-HMM state count `V^(n-1)`.
pub const DEFAULT_STATE_CAP: u64 = 1_000_000;

/// Temperature and seed used by the generator, recorded for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab_size: usize,
    /// `V^(n-1) x V`, row-major; rows sum to 1.
    transitions: Vec<f64>,
    /// Joint distribution of the first `n-1` tokens, indexed by context.
    init_context_dist: Vec<f64>,
    threshold: f64,
    gen: Option<GenSpec>,
    engine: OnceCell<Arc<PosteriorEngine>>,
}

impl NGramModel {
    /// Random model: transitions are a row softmax of Gaussian logits scaled
    /// by `temperature`, pruned once at `threshold` and renormalized; the
    /// initial context distribution is a normalized uniform-random vector.
    /// Deterministic in `seed`.
    pub fn generate(
        order: usize,
        vocab_size: usize,
        temperature: f64,
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!("n-gram order must be >= 2, got {order}")));
        }
        if vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab size must be >= 2, got {vocab_size}"
            )));
        }
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0, 1), got {threshold}"
            )));
        }
        if temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        let contexts = checked_pow(vocab_size, order - 1)?;
        let mut rng = crate::seeding::rng_from_seed(seed);
        let init_context_dist = tables::random_dist(contexts, &mut rng);
        let mut transitions =
            tables::gaussian_softmax_rows(contexts, vocab_size, temperature, &mut rng);
        tables::prune_rows(&mut transitions, vocab_size, threshold, "transitions")?;
        Ok(NGramModel {
            order,
            vocab_size,
            transitions,
            init_context_dist,
            threshold,
            gen: Some(GenSpec { temperature, seed }),
            engine: OnceCell::new(),
        })
    }

    /// Build from explicit tables, validating all invariants.
    pub fn from_parts(
        order: usize,
        vocab_size: usize,
        transitions: Vec<f64>,
        init_context_dist: Vec<f64>,
        threshold: f64,
        gen: Option<(f64, u64)>,
    ) -> Result<Self> {
        if order < 2 || vocab_size < 2 {
            return Err(Error::Config("order >= 2 and vocab >= 2 required".into()));
        }
        let contexts = checked_pow(vocab_size, order - 1)?;
        if transitions.len() != contexts * vocab_size {
            return Err(Error::Config(format!(
                "transitions table has {} entries, expected {}",
                transitions.len(),
                contexts * vocab_size
            )));
        }
        if init_context_dist.len() != contexts {
            return Err(Error::Config(format!(
                "init_context_dist has {} entries, expected {contexts}",
                init_context_dist.len()
            )));
        }
        tables::check_row_stochastic(&transitions, vocab_size, "transitions")?;
        tables::check_row_stochastic(&init_context_dist, contexts, "init_context_dist")?;
        Ok(NGramModel {
            order,
            vocab_size,
            transitions,
            init_context_dist,
            threshold,
            gen: gen.map(|(temperature, seed)| GenSpec { temperature, seed }),
            engine: OnceCell::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn num_contexts(&self) -> usize {
        self.init_context_dist.len()
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn init_context_dist(&self) -> &[f64] {
        &self.init_context_dist
    }

    pub fn transition_row(&self, context: usize) -> &[f64] {
        let v = self.vocab_size;
        &self.transitions[context * v..(context + 1) * v]
    }

    /// Context index of `n-1` tokens, first token most significant.
    pub fn context_index(&self, tokens: &[Token]) -> usize {
        debug_assert_eq!(tokens.len(), self.order - 1);
        let mut idx = 0usize;
        for &t in tokens {
            idx = idx * self.vocab_size + t as usize;
        }
        idx
    }

    /// Tokens of a context index (inverse of `context_index`).
    pub fn context_tokens(&self, mut context: usize) -> Vec<Token> {
        let m = self.order - 1;
        let mut out = vec![0 as Token; m];
        for i in (0..m).rev() {
            out[i] = (context % self.vocab_size) as Token;
            context /= self.vocab_size;
        }
        out
    }

    /// Shift a context left by one position and append `token`.
    #[inline]
    pub fn shift_context(&self, context: usize, token: Token) -> usize {
        let stride = self.num_contexts() / self.vocab_size;
        (context % stride) * self.vocab_size + token as usize
    }

    /// Last token of a context (the token an embedded-HMM state emits).
    #[inline]
    pub fn context_last_token(&self, context: usize) -> Token {
        (context % self.vocab_size) as Token
    }

    /// Replace the initial context distribution with the stationary
    /// distribution of the context chain (power iteration). With a
    /// stationary start the per-token entropy is independent of the length.
    pub fn with_stationary_init(mut self) -> Self {
        let c = self.num_contexts();
        let mut d = vec![1.0 / c as f64; c];
        let mut next = vec![0.0f64; c];
        for _ in 0..4096 {
            next.iter_mut().for_each(|x| *x = 0.0);
            for ctx in 0..c {
                let w = d[ctx];
                if w == 0.0 {
                    continue;
                }
                let row = self.transition_row(ctx);
                for (v, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        next[self.shift_context(ctx, v as Token)] += w * p;
                    }
                }
            }
            let diff: f64 = d.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut d, &mut next);
            if diff < 1e-15 {
                break;
            }
        }
        self.init_context_dist = d;
        self.engine = OnceCell::new();
        self
    }

    /// Exact bits/token of sequences of length `len`, by dynamic programming
    /// over the context distribution (chain-rule entropy sum).
    pub fn exact_entropy(&self, len: usize) -> Result<f64> {
        if len == 0 {
            return Err(Error::Config("entropy of length-0 sequences".into()));
        }
        let m = self.order - 1;
        if len <= m {
            // Entropy of the marginal of the initial context over its first
            // `len` tokens. Contexts sharing a prefix are contiguous blocks.
            let block = checked_pow(self.vocab_size, m - len)?;
            let mut h = 0.0;
            for chunk in self.init_context_dist.chunks(block) {
                let p: f64 = chunk.iter().sum();
                if p > 0.0 {
                    h -= p * p.log2();
                }
            }
            return Ok(h / len as f64);
        }
        let mut total = tables::entropy2(&self.init_context_dist);
        let c = self.num_contexts();
        let mut d = self.init_context_dist.clone();
        let mut next = vec![0.0f64; c];
        let row_entropy: Vec<f64> = (0..c).map(|ctx| tables::entropy2(self.transition_row(ctx))).collect();
        for _ in m..len {
            let mut h_step = 0.0;
            next.iter_mut().for_each(|x| *x = 0.0);
            for ctx in 0..c {
                let w = d[ctx];
                if w == 0.0 {
                    continue;
                }
                h_step += w * row_entropy[ctx];
                let row = self.transition_row(ctx);
                for (v, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        next[self.shift_context(ctx, v as Token)] += w * p;
                    }
                }
            }
            total += h_step;
            std::mem::swap(&mut d, &mut next);
        }
        Ok(total / len as f64)
    }

    /// Conditional entropy (bits) of the token at 1-based position `len`
    /// given all earlier tokens: the final increment of the chain-rule sum.
    /// Exactly constant in `len` under a stationary initial context
    /// distribution, and converging geometrically otherwise, whereas the
    /// per-token average [`Self::exact_entropy`] always carries a `1/len`
    /// transient from the initial context.
    pub fn entropy_rate_at(&self, len: usize) -> Result<f64> {
        if len < self.order {
            return Err(Error::Config(format!(
                "entropy rate needs at least one transition (len >= {})",
                self.order
            )));
        }
        let c = self.num_contexts();
        let mut d = self.init_context_dist.clone();
        let mut next = vec![0.0f64; c];
        let row_entropy: Vec<f64> =
            (0..c).map(|ctx| tables::entropy2(self.transition_row(ctx))).collect();
        let mut h_step = 0.0;
        for _ in self.order - 1..len {
            h_step = 0.0;
            next.iter_mut().for_each(|x| *x = 0.0);
            for ctx in 0..c {
                let w = d[ctx];
                if w == 0.0 {
                    continue;
                }
                h_step += w * row_entropy[ctx];
                let row = self.transition_row(ctx);
                for (v, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        next[self.shift_context(ctx, v as Token)] += w * p;
                    }
                }
            }
            std::mem::swap(&mut d, &mut next);
        }
        Ok(h_step)
    }

    /// Embed the model as an HMM over its `V^(n-1)` contexts: each hidden
    /// state is the window of `n-1` tokens starting at the current position
    /// and deterministically emits the window's first token; transitions
    /// follow the n-gram table; the initial state distribution is the
    /// initial context distribution. The induced sequence law equals the
    /// n-gram's exactly for every length.
    pub fn to_hmm(&self) -> Result<HmmModel> {
        self.to_hmm_with_cap(DEFAULT_STATE_CAP)
    }

    /// As [`Self::to_hmm`] with an explicit state cap. Note the dense HMM
    /// tables take `states^2` memory; the posterior oracle does not go
    /// through this representation.
    pub fn to_hmm_with_cap(&self, cap: u64) -> Result<HmmModel> {
        let c = self.num_contexts();
        if c as u64 > cap {
            return Err(Error::CapacityExceeded {
                what: "n-gram HMM embedding",
                needed: c as u128,
                cap,
            });
        }
        let v = self.vocab_size;
        let mut trans = vec![0.0f64; c * c];
        for ctx in 0..c {
            let row = self.transition_row(ctx);
            // The window state emits its first token; shifting appends the
            // token drawn from this context's row. With n = 2 the embedded
            // transition table is identical to the n-gram table.
            let window_ctx = ctx; // window == context of the next draw
            for (tok, &p) in row.iter().enumerate() {
                let succ = self.shift_context(window_ctx, tok as Token);
                trans[ctx * c + succ] += p;
            }
        }
        let mut emit = vec![0.0f64; c * (v + 1)];
        for ctx in 0..c {
            let first = self.context_first_token(ctx);
            emit[ctx * (v + 1) + first as usize] = 1.0;
            emit[ctx * (v + 1) + v] = 1.0 / c as f64;
        }
        HmmModel::from_parts(
            c,
            v,
            trans,
            emit,
            self.init_context_dist.clone(),
            self.threshold,
            None,
        )
    }

    /// First token of a context window (what the embedded state emits).
    #[inline]
    pub fn context_first_token(&self, context: usize) -> Token {
        let stride = self.num_contexts() / self.vocab_size;
        (context / stride) as Token
    }

    fn engine(&self) -> Result<Arc<PosteriorEngine>> {
        self.engine
            .get_or_try_init(|| PosteriorEngine::from_ngram(self).map(Arc::new))
            .cloned()
    }

    pub fn to_doc(&self) -> LanguageDoc {
        LanguageDoc::new(LanguageDocBody::Ngram {
            order: self.order,
            vocab_size: self.vocab_size,
            threshold: self.threshold,
            temperature: self.gen.map(|g| g.temperature),
            seed: self.gen.map(|g| g.seed),
            transitions: self.transitions.clone(),
            init_context_dist: self.init_context_dist.clone(),
        })
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        for &t in tokens {
            if t as usize >= self.vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Sum of the initial context distribution over all contexts whose first
    /// `prefix.len()` tokens equal `prefix` (requires `len < n-1`).
    fn init_prefix_mass(&self, prefix: &[Token]) -> f64 {
        let m = self.order - 1;
        debug_assert!(prefix.len() <= m);
        let block = self.num_contexts() / self.vocab_size.pow(prefix.len() as u32);
        let mut idx = 0usize;
        for &t in prefix {
            idx = idx * self.vocab_size + t as usize;
        }
        self.init_context_dist[idx * block..(idx + 1) * block].iter().sum()
    }
}

impl Language for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn sample_sequence(&self, len: usize, rng: &mut dyn RngCore) -> Sequence {
        let mut tokens = Vec::with_capacity(len);
        if len == 0 {
            return Sequence::new(tokens);
        }
        let m = self.order - 1;
        let ctx = tables::sample_index(&self.init_context_dist, rng);
        let ctx_tokens = self.context_tokens(ctx);
        tokens.extend_from_slice(&ctx_tokens[..m.min(len)]);
        let mut ctx = ctx;
        while tokens.len() < len {
            let v = tables::sample_index(self.transition_row(ctx), rng) as Token;
            tokens.push(v);
            ctx = self.shift_context(ctx, v);
        }
        Sequence::new(tokens)
    }

    fn log_prob2(&self, tokens: &[Token]) -> Result<f64> {
        self.check_tokens(tokens)?;
        let m = self.order - 1;
        if tokens.len() <= m {
            let mass = self.init_prefix_mass(tokens);
            return Ok(if mass > 0.0 { mass.log2() } else { f64::NEG_INFINITY });
        }
        let init = self.init_context_dist[self.context_index(&tokens[..m])];
        if init <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lp = init.log2();
        let mut ctx = self.context_index(&tokens[..m]);
        for &t in &tokens[m..] {
            let p = self.transition_row(ctx)[t as usize];
            if p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            lp += p.log2();
            ctx = self.shift_context(ctx, t);
        }
        Ok(lp)
    }

    fn ar_conditional(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        self.check_tokens(prefix)?;
        let m = self.order - 1;
        if prefix.len() < m {
            let den = self.init_prefix_mass(prefix);
            if den <= 0.0 {
                return Err(Error::PrefixOutsideSupport);
            }
            let mut out = Vec::with_capacity(self.vocab_size);
            let mut ext = prefix.to_vec();
            ext.push(0);
            for v in 0..self.vocab_size {
                *ext.last_mut().unwrap() = v as Token;
                out.push(self.init_prefix_mass(&ext) / den);
            }
            return Ok(out);
        }
        if self.log_prob2(prefix)? == f64::NEG_INFINITY {
            return Err(Error::PrefixOutsideSupport);
        }
        let ctx = self.context_index(&prefix[prefix.len() - m..]);
        Ok(self.transition_row(ctx).to_vec())
    }

    fn sample_autoregressive(&self, len: usize, rng: &mut dyn RngCore) -> Result<Sequence> {
        // Incremental chain-rule sampling; identical in law to walking
        // `ar_conditional` but without re-scoring the prefix.
        let mut tokens: Vec<Token> = Vec::with_capacity(len);
        let m = self.order - 1;
        let mut ctx = 0usize;
        for i in 0..len {
            if i < m {
                let den = self.init_prefix_mass(&tokens);
                let mut w = Vec::with_capacity(self.vocab_size);
                tokens.push(0);
                for v in 0..self.vocab_size {
                    *tokens.last_mut().unwrap() = v as Token;
                    w.push(self.init_prefix_mass(&tokens));
                }
                debug_assert!(den > 0.0);
                let v = tables::sample_index(&w, rng) as Token;
                *tokens.last_mut().unwrap() = v;
                if i + 1 == m {
                    ctx = self.context_index(&tokens);
                }
            } else {
                let v = tables::sample_index(self.transition_row(ctx), rng) as Token;
                tokens.push(v);
                ctx = self.shift_context(ctx, v);
            }
        }
        Ok(Sequence::new(tokens))
    }

    fn oracle(&self) -> Result<Box<dyn PosteriorOracle>> {
        Ok(Box::new(crate::oracle::EngineOracle::new(self.engine()?)))
    }

    fn exact_entropy_bits(&self, len: usize) -> Result<f64> {
        self.exact_entropy(len)
    }

    fn descriptor(&self) -> LangDescriptor {
        LangDescriptor {
            kind: "ngram".to_string(),
            n_or_states: self.order as u32,
            vocab: self.vocab_size as u32,
            threshold: self.threshold,
        }
    }
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base).ok_or(Error::CapacityExceeded {
            what: "context count",
            needed: u128::MAX,
            cap: u64::MAX,
        })?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    #[test]
    fn table3_2gram_config_is_valid() {
        let m = NGramModel::generate(2, 8, 2.0, 0.008, 17).unwrap();
        tables::check_row_stochastic(m.transitions(), 8, "t").unwrap();
        assert_eq!(m.num_contexts(), 8);
    }

    #[test]
    fn zero_temperature_rows_are_uniform() {
        let m = NGramModel::generate(2, 8, 0.0, 0.0, 5).unwrap();
        for ctx in 0..8 {
            for &p in m.transition_row(ctx) {
                assert!((p - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pruned_rows_resum_to_one() {
        let m = NGramModel::generate(3, 4, 2.0, 0.1, 42).unwrap();
        for ctx in 0..m.num_contexts() {
            let sum: f64 = m.transition_row(ctx).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {ctx} sums to {sum}");
        }
    }

    #[test]
    fn empty_sequence_has_prob_one() {
        let m = NGramModel::generate(2, 4, 1.0, 0.0, 1).unwrap();
        assert_eq!(m.sample_sequence(0, &mut rng_from_seed(0)).len(), 0);
        assert_eq!(m.log_prob2(&[]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_iid_scores_minus_3l_bits() {
        let m = NGramModel::generate(2, 8, 0.0, 0.0, 9).unwrap();
        // Zero temperature rows are uniform 1/8; make the init uniform too.
        let m = NGramModel::from_parts(
            2,
            8,
            m.transitions().to_vec(),
            vec![0.125; 8],
            0.0,
            None,
        )
        .unwrap();
        let x: Vec<Token> = vec![3, 0, 7, 7, 2, 1];
        let lp = m.log_prob2(&x).unwrap();
        assert!((lp - (-3.0 * 6.0)).abs() < 1e-12);
        assert!((m.exact_entropy(64).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pruned_transition_scores_neg_infinity() {
        let m = NGramModel::generate(2, 8, 2.0, 0.008, 17).unwrap();
        let (ctx, tok) = (0..m.num_contexts())
            .flat_map(|c| (0..8).map(move |v| (c, v)))
            .find(|&(c, v)| m.transition_row(c)[v] == 0.0)
            .expect("a pruned entry exists at this temperature/threshold");
        let x = vec![ctx as Token, tok as Token];
        assert_eq!(m.log_prob2(&x).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn deterministic_model_has_zero_entropy() {
        // One-hot init and one-hot rows: the cycle 0 -> 1 -> 0.
        // Row 0 -> token 1, row 1 -> token 0.
        let trans = vec![0.0, 1.0, 1.0, 0.0];
        let mut init = vec![0.0; 2];
        init[0] = 1.0;
        let m = NGramModel::from_parts(2, 2, trans, init, 0.0, None).unwrap();
        assert_eq!(m.exact_entropy(128).unwrap(), 0.0);
    }

    #[test]
    fn ar_conditional_sums_to_one_and_matches_init_marginal() {
        let m = NGramModel::generate(3, 4, 2.0, 0.0, 11).unwrap();
        let dist = m.ar_conditional(&[]).unwrap();
        let sum: f64 = dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Marginal over the first token straight from the init distribution.
        for (v, &d) in dist.iter().enumerate() {
            let mut direct = 0.0;
            for ctx in 0..16 {
                if m.context_tokens(ctx)[0] == v as Token {
                    direct += m.init_context_dist()[ctx];
                }
            }
            assert!((d - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_support_prefix_is_an_error() {
        let m = NGramModel::generate(2, 8, 2.0, 0.008, 17).unwrap();
        let (ctx, tok) = (0..8)
            .flat_map(|c| (0..8).map(move |v| (c, v)))
            .find(|&(c, v)| m.transition_row(c)[v] == 0.0)
            .unwrap();
        let prefix = vec![ctx as Token, tok as Token];
        assert!(matches!(
            m.ar_conditional(&prefix),
            Err(Error::PrefixOutsideSupport)
        ));
    }

    #[test]
    fn token_out_of_vocab_is_an_input_error() {
        let m = NGramModel::generate(2, 4, 1.0, 0.0, 1).unwrap();
        assert!(matches!(
            m.log_prob2(&[9]),
            Err(Error::TokenOutOfVocab { token: 9, vocab: 4 })
        ));
    }

    #[test]
    fn embedding_for_bigram_is_the_transition_table() {
        let m = NGramModel::generate(2, 5, 1.5, 0.0, 23).unwrap();
        let h = m.to_hmm().unwrap();
        assert_eq!(h.num_states(), 5);
        for s in 0..5 {
            for t in 0..5 {
                assert!((h.trans()[s * 5 + t] - m.transition_row(s)[t]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn embedding_state_counts() {
        let m3 = NGramModel::generate(3, 4, 1.0, 0.0, 2).unwrap();
        assert_eq!(m3.to_hmm().unwrap().num_states(), 16);
        let m4 = NGramModel::generate(4, 8, 1.0, 0.0, 2).unwrap();
        assert_eq!(m4.to_hmm().unwrap().num_states(), 512);
    }

    #[test]
    fn embedding_respects_state_cap() {
        let m = NGramModel::generate(4, 8, 1.0, 0.0, 2).unwrap();
        assert!(matches!(
            m.to_hmm_with_cap(100),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn doc_round_trip_is_bit_exact() {
        let m = NGramModel::generate(3, 4, 2.0, 0.008, 99).unwrap();
        let json = m.to_doc().to_json();
        let doc = LanguageDoc::from_json(&json).unwrap();
        let json2 = doc.to_json();
        assert_eq!(json, json2);
        let rebuilt = doc.build().unwrap();
        let x = m.sample_sequence(16, &mut rng_from_seed(4));
        assert_eq!(
            m.log_prob2(&x).unwrap().to_bits(),
            rebuilt.log_prob2(&x).unwrap().to_bits()
        );
    }
}
