//! Hidden Markov ground-truth language.
//!
//! States transition by `trans`, emit observable tokens by the first `V`
//! columns of `emit`, and start from `init`. Column `V` of `emit` is the
//! appended uniform mask column (`1/num_states` in every row); it is part of
//! the serialized table layout and plays no role in probability
//! computations. All sequence-level dynamic programming uses per-position
//! scaling so lengths in the thousands do not underflow.

use once_cell::sync::OnceCell;
use rand::RngCore;
use std::sync::Arc;

use super::ngram::GenSpec;
use super::tables;
use super::{LangDescriptor, Language, LanguageDoc, LanguageDocBody, Sequence, Token};
use crate::error::{Error, Result};
use crate::oracle::{PosteriorEngine, PosteriorOracle};

/// Fixed emission pruning threshold of the generator.
pub const EMISSION_PRUNE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct HmmModel {
    num_states: usize,
    vocab_size: usize,
    /// `S x S`, row-major.
    trans: Vec<f64>,
    /// `S x (V+1)`, row-major; column `V` is the uniform mask column.
    emit: Vec<f64>,
    init: Vec<f64>,
    threshold: f64,
    gen: Option<GenSpec>,
    engine: OnceCell<Arc<PosteriorEngine>>,
}

impl HmmModel {
    /// Random model: `trans = softmax(randn * temperature)` pruned at
    /// `threshold`; emissions use logits scaled by `temperature * 2.5` and a
    /// fixed pruning threshold of 0.05; the mask column `1/num_states` is
    /// appended afterwards. Deterministic in `seed`.
    pub fn generate(
        num_states: usize,
        vocab_size: usize,
        temperature: f64,
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_states < 1 {
            return Err(Error::Config("num_states must be >= 1".into()));
        }
        if vocab_size < 2 {
            return Err(Error::Config("vocab size must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0, 1), got {threshold}"
            )));
        }
        let s = num_states;
        let v = vocab_size;
        let mut rng = crate::seeding::rng_from_seed(seed);
        let init = tables::random_dist(s, &mut rng);
        let mut trans = tables::gaussian_softmax_rows(s, s, temperature, &mut rng);
        tables::prune_rows(&mut trans, s, threshold, "trans")?;
        let mut emit_core = tables::gaussian_softmax_rows(s, v, temperature * 2.5, &mut rng);
        tables::prune_rows(&mut emit_core, v, EMISSION_PRUNE, "emit")?;
        let mut emit = vec![0.0f64; s * (v + 1)];
        for st in 0..s {
            emit[st * (v + 1)..st * (v + 1) + v].copy_from_slice(&emit_core[st * v..(st + 1) * v]);
            emit[st * (v + 1) + v] = 1.0 / s as f64;
        }
        Ok(HmmModel {
            num_states: s,
            vocab_size: v,
            trans,
            emit,
            init,
            threshold,
            gen: Some(GenSpec { temperature, seed }),
            engine: OnceCell::new(),
        })
    }

    /// Build from explicit tables, validating all invariants (including the
    /// mask column).
    pub fn from_parts(
        num_states: usize,
        vocab_size: usize,
        trans: Vec<f64>,
        emit: Vec<f64>,
        init: Vec<f64>,
        threshold: f64,
        gen: Option<(f64, u64)>,
    ) -> Result<Self> {
        let (s, v) = (num_states, vocab_size);
        if s < 1 || v < 2 {
            return Err(Error::Config("num_states >= 1 and vocab >= 2 required".into()));
        }
        if trans.len() != s * s || emit.len() != s * (v + 1) || init.len() != s {
            return Err(Error::Config("hmm table dimensions do not match".into()));
        }
        tables::check_row_stochastic(&trans, s, "trans")?;
        tables::check_row_stochastic(&init, s, "init")?;
        for st in 0..s {
            let row = &emit[st * (v + 1)..(st + 1) * (v + 1)];
            if row.iter().any(|&x| x < 0.0) {
                return Err(Error::Config(format!("emit: negative entry in row {st}")));
            }
            let sum: f64 = row[..v].iter().sum();
            if (sum - 1.0).abs() > tables::ROW_SUM_TOL {
                return Err(Error::Config(format!(
                    "emit: row {st} sums to {sum} over the first {v} columns"
                )));
            }
            if (row[v] - 1.0 / s as f64).abs() > tables::ROW_SUM_TOL {
                return Err(Error::Config(format!(
                    "emit: row {st} mask column is {}, expected 1/{s}",
                    row[v]
                )));
            }
        }
        Ok(HmmModel {
            num_states: s,
            vocab_size: v,
            trans,
            emit,
            init,
            threshold,
            gen: gen.map(|(temperature, seed)| GenSpec { temperature, seed }),
            engine: OnceCell::new(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn trans(&self) -> &[f64] {
        &self.trans
    }

    pub fn emit(&self) -> &[f64] {
        &self.emit
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    #[inline]
    pub fn trans_row(&self, state: usize) -> &[f64] {
        &self.trans[state * self.num_states..(state + 1) * self.num_states]
    }

    /// Emission probabilities of a state over the real vocabulary (the mask
    /// column is excluded).
    #[inline]
    pub fn emit_row(&self, state: usize) -> &[f64] {
        let w = self.vocab_size + 1;
        &self.emit[state * w..state * w + self.vocab_size]
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

    /// Scaled forward pass over observed tokens; returns `log2` likelihood.
    fn forward_log2(&self, tokens: &[Token]) -> f64 {
        let s = self.num_states;
        let mut belief: Vec<f64> = self.init.clone();
        let mut next = vec![0.0f64; s];
        let mut log2 = 0.0f64;
        for (i, &tok) in tokens.iter().enumerate() {
            let mut scale = 0.0;
            for (st, (&b, n)) in belief.iter().zip(next.iter_mut()).enumerate() {
                let w = b * self.emit_row(st)[tok as usize];
                *n = w;
                scale += w;
            }
            if scale <= 0.0 {
                return f64::NEG_INFINITY;
            }
            log2 += scale.log2();
            if i + 1 < tokens.len() {
                // belief <- normalized posterior pushed through the chain
                belief.iter_mut().for_each(|x| *x = 0.0);
                for (st, &n) in next.iter().enumerate() {
                    let w = n / scale;
                    if w == 0.0 {
                        continue;
                    }
                    for (succ, &p) in self.trans_row(st).iter().enumerate() {
                        if p > 0.0 {
                            belief[succ] += w * p;
                        }
                    }
                }
            }
        }
        log2
    }

    fn engine(&self) -> Result<Arc<PosteriorEngine>> {
        self.engine
            .get_or_try_init(|| Ok(Arc::new(PosteriorEngine::from_hmm(self))))
            .cloned()
    }

    pub fn to_doc(&self) -> LanguageDoc {
        LanguageDoc::new(LanguageDocBody::Hmm {
            num_states: self.num_states,
            vocab_size: self.vocab_size,
            threshold: self.threshold,
            temperature: self.gen.map(|g| g.temperature),
            seed: self.gen.map(|g| g.seed),
            trans: self.trans.clone(),
            emit: self.emit.clone(),
            init: self.init.clone(),
        })
    }
}

impl Language for HmmModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn sample_sequence(&self, len: usize, rng: &mut dyn RngCore) -> Sequence {
        let mut tokens = Vec::with_capacity(len);
        if len == 0 {
            return Sequence::new(tokens);
        }
        let mut state = tables::sample_index(&self.init, rng);
        for _ in 0..len {
            tokens.push(tables::sample_index(self.emit_row(state), rng) as Token);
            state = tables::sample_index(self.trans_row(state), rng);
        }
        Sequence::new(tokens)
    }

    fn log_prob2(&self, tokens: &[Token]) -> Result<f64> {
        self.check_tokens(tokens)?;
        Ok(self.forward_log2(tokens))
    }

    fn ar_conditional(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        self.check_tokens(prefix)?;
        let s = self.num_states;
        // Running forward state-belief: P(state at next position | prefix).
        let mut belief: Vec<f64> = self.init.clone();
        let mut scratch = vec![0.0f64; s];
        for &tok in prefix {
            let mut scale = 0.0;
            for (st, (&b, tmp)) in belief.iter().zip(scratch.iter_mut()).enumerate() {
                let w = b * self.emit_row(st)[tok as usize];
                *tmp = w;
                scale += w;
            }
            if scale <= 0.0 {
                return Err(Error::PrefixOutsideSupport);
            }
            belief.iter_mut().for_each(|x| *x = 0.0);
            for (st, &tmp) in scratch.iter().enumerate() {
                let w = tmp / scale;
                if w == 0.0 {
                    continue;
                }
                for (succ, &p) in self.trans_row(st).iter().enumerate() {
                    if p > 0.0 {
                        belief[succ] += w * p;
                    }
                }
            }
        }
        let mut out = vec![0.0f64; self.vocab_size];
        for (st, &w) in belief.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &e) in out.iter_mut().zip(self.emit_row(st)) {
                *o += w * e;
            }
        }
        Ok(out)
    }

    fn sample_autoregressive(&self, len: usize, rng: &mut dyn RngCore) -> Result<Sequence> {
        let s = self.num_states;
        let mut tokens: Vec<Token> = Vec::with_capacity(len);
        let mut belief: Vec<f64> = self.init.clone();
        let mut scratch = vec![0.0f64; s];
        let mut dist = vec![0.0f64; self.vocab_size];
        for _ in 0..len {
            dist.iter_mut().for_each(|x| *x = 0.0);
            for (st, &w) in belief.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (d, &e) in dist.iter_mut().zip(self.emit_row(st)) {
                    *d += w * e;
                }
            }
            let tok = tables::sample_index(&dist, rng) as Token;
            tokens.push(tok);
            let mut scale = 0.0;
            for (st, (&b, tmp)) in belief.iter().zip(scratch.iter_mut()).enumerate() {
                let w = b * self.emit_row(st)[tok as usize];
                *tmp = w;
                scale += w;
            }
            belief.iter_mut().for_each(|x| *x = 0.0);
            for (st, &tmp) in scratch.iter().enumerate() {
                let w = tmp / scale;
                if w == 0.0 {
                    continue;
                }
                for (succ, &p) in self.trans_row(st).iter().enumerate() {
                    if p > 0.0 {
                        belief[succ] += w * p;
                    }
                }
            }
        }
        Ok(Sequence::new(tokens))
    }

    fn oracle(&self) -> Result<Box<dyn PosteriorOracle>> {
        Ok(Box::new(crate::oracle::EngineOracle::new(self.engine()?)))
    }

    fn descriptor(&self) -> LangDescriptor {
        LangDescriptor {
            kind: "hmm".to_string(),
            n_or_states: self.num_states as u32,
            vocab: self.vocab_size as u32,
            threshold: self.threshold,
        }
    }
}
