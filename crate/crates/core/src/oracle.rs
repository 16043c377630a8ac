//! Exact posterior marginals for partially masked sequences.
//!
//! For each masked position `i` the oracle computes the exact conditional
//! `q(x^i = v | observed slots)` under the ground-truth language: observed
//! slots constrain emissions to the observed token, masked slots marginalize
//! emissions (a factor of 1 by row-stochasticity). This realizes the ideal
//! denoiser with zero learning error. The oracle is a function of the masked
//! sequence only, never of diffusion time, which is what makes skipping
//! no-reveal steps exact.
//!
//! The engine runs a scaled constrained forward-backward sweep in
//! `O(L * nnz(trans))` per call with scratch buffers reused across the steps
//! of a trajectory.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lang::{HmmModel, Language, NGramModel, Sequence, Token};

/// Default cap on `V^mask_count` completions for the brute-force checker.
pub const DEFAULT_ENUM_CAP: u64 = 1_000_000;

/// One position of a partially masked sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Token(Token),
    Mask,
}

/// Length-`L` vector of slots with a cached mask count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    slots: Vec<Slot>,
    mask_count: usize,
}

impl MaskedSequence {
    pub fn all_masked(len: usize) -> Self {
        MaskedSequence {
            slots: vec![Slot::Mask; len],
            mask_count: len,
        }
    }

    pub fn from_sequence(seq: &Sequence) -> Self {
        MaskedSequence {
            slots: seq.tokens().iter().map(|&t| Slot::Token(t)).collect(),
            mask_count: 0,
        }
    }

    /// Mask the positions of `seq` flagged in `masked`.
    pub fn with_mask_pattern(seq: &Sequence, masked: &[bool]) -> Result<Self> {
        if seq.len() != masked.len() {
            return Err(Error::LengthMismatch {
                got: masked.len(),
                expected: seq.len(),
            });
        }
        let slots: Vec<Slot> = seq
            .tokens()
            .iter()
            .zip(masked)
            .map(|(&t, &m)| if m { Slot::Mask } else { Slot::Token(t) })
            .collect();
        let mask_count = slots.iter().filter(|s| matches!(s, Slot::Mask)).count();
        Ok(MaskedSequence { slots, mask_count })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn mask_count(&self) -> usize {
        self.mask_count
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    #[inline]
    pub fn slot(&self, i: usize) -> Slot {
        self.slots[i]
    }

    #[inline]
    pub fn is_masked(&self, i: usize) -> bool {
        matches!(self.slots[i], Slot::Mask)
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, Slot::Mask).then_some(i))
            .collect()
    }

    /// Reveal a token at a masked position.
    pub fn set_token(&mut self, i: usize, token: Token) {
        if matches!(self.slots[i], Slot::Mask) {
            self.mask_count -= 1;
        }
        self.slots[i] = Slot::Token(token);
    }

    /// Return position `i` to the mask state.
    pub fn set_mask(&mut self, i: usize) {
        if !matches!(self.slots[i], Slot::Mask) {
            self.mask_count += 1;
        }
        self.slots[i] = Slot::Mask;
    }

    /// Convert to a plain sequence; errors if any mask slot remains.
    pub fn to_sequence(&self) -> Result<Sequence> {
        let mut tokens = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            match s {
                Slot::Token(t) => tokens.push(*t),
                Slot::Mask => {
                    return Err(Error::Unsupported(
                        "sequence still contains mask slots".into(),
                    ))
                }
            }
        }
        Ok(Sequence::new(tokens))
    }
}

/// Exact posterior marginals, one probability vector per masked position.
///
/// When the observed slots have probability zero under the model (reachable
/// mid-trajectory because factorized reveals can leave the support), the
/// vectors are uniform and `degenerate` is set; trajectories carry the flag
/// onward so SER records the failure instead of aborting.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMarginals {
    entries: BTreeMap<usize, Vec<f64>>,
    degenerate: bool,
    log2_evidence: f64,
}

impl PosteriorMarginals {
    pub fn new(entries: BTreeMap<usize, Vec<f64>>, degenerate: bool, log2_evidence: f64) -> Self {
        PosteriorMarginals {
            entries,
            degenerate,
            log2_evidence,
        }
    }

    pub fn entries(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.entries
    }

    pub fn get(&self, position: usize) -> Option<&[f64]> {
        self.entries.get(&position).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `log2` probability of the observed slots (the evidence normalizer);
    /// `-inf` when degenerate.
    pub fn log2_evidence(&self) -> f64 {
        self.log2_evidence
    }
}

/// Per-worker oracle handle. Implementations own scratch buffers that are
/// reused across calls; they are `Send` but deliberately not `Sync`.
pub trait PosteriorOracle: Send {
    /// Marginals at the given masked positions (subset of the mask set).
    fn marginals_at(
        &mut self,
        masked: &MaskedSequence,
        positions: &[usize],
    ) -> Result<PosteriorMarginals>;

    /// Marginals at every masked position.
    fn marginals(&mut self, masked: &MaskedSequence) -> Result<PosteriorMarginals> {
        let positions = masked.masked_positions();
        self.marginals_at(masked, &positions)
    }
}

/// Exact marginals for `masked` under `lang` (convenience wrapper that
/// builds a fresh oracle).
pub fn posterior_marginals(
    lang: &dyn Language,
    masked: &MaskedSequence,
) -> Result<PosteriorMarginals> {
    lang.oracle()?.marginals(masked)
}

/// Emission structure of a [`PosteriorEngine`].
#[derive(Debug)]
enum Emission {
    /// Dense `V x S` column-major table (`emit_t[v * S + s]`).
    Dense(Vec<f64>),
    /// Each state emits exactly one token (embedded n-gram contexts).
    Deterministic(Vec<Token>),
}

/// Immutable forward-backward engine over a hidden-state chain. Shared
/// across workers; per-call state lives in [`Scratch`].
#[derive(Debug)]
pub struct PosteriorEngine {
    num_states: usize,
    vocab: usize,
    init: Vec<f64>,
    /// CSR transition rows: nonzero successors of each state.
    row_offsets: Vec<u32>,
    col_index: Vec<u32>,
    value: Vec<f64>,
    emission: Emission,
}

/// Reusable buffers for one worker.
#[derive(Default)]
pub struct Scratch {
    /// Forward messages before emission, `L x S`, rows normalized to sum 1.
    fwd: Vec<f64>,
    /// Backward messages excluding own emission, `L x S`, rows normalized.
    bwd: Vec<f64>,
    tmp: Vec<f64>,
}

impl PosteriorEngine {
    pub fn from_hmm(model: &HmmModel) -> Self {
        let s = model.num_states();
        let v = model.vocab_size();
        let mut row_offsets = Vec::with_capacity(s + 1);
        let mut col_index = Vec::new();
        let mut value = Vec::new();
        row_offsets.push(0u32);
        for st in 0..s {
            for (succ, &p) in model.trans_row(st).iter().enumerate() {
                if p > 0.0 {
                    col_index.push(succ as u32);
                    value.push(p);
                }
            }
            row_offsets.push(col_index.len() as u32);
        }
        let mut emit_t = vec![0.0f64; v * s];
        for st in 0..s {
            for (tok, &e) in model.emit_row(st).iter().enumerate() {
                emit_t[tok * s + st] = e;
            }
        }
        PosteriorEngine {
            num_states: s,
            vocab: v,
            init: model.init().to_vec(),
            row_offsets,
            col_index,
            value,
            emission: Emission::Dense(emit_t),
        }
    }

    /// Sparse construction straight from an n-gram: states are the token
    /// windows, each deterministically emitting its first token. Equivalent
    /// to `from_hmm(&ngram.to_hmm()?)` without materializing the dense
    /// embedding.
    pub fn from_ngram(model: &NGramModel) -> Result<Self> {
        let c = model.num_contexts();
        if c as u64 > crate::lang::ngram::DEFAULT_STATE_CAP {
            return Err(Error::CapacityExceeded {
                what: "n-gram oracle state space",
                needed: c as u128,
                cap: crate::lang::ngram::DEFAULT_STATE_CAP,
            });
        }
        let v = model.vocab_size();
        let mut row_offsets = Vec::with_capacity(c + 1);
        let mut col_index = Vec::with_capacity(c * v);
        let mut value = Vec::with_capacity(c * v);
        row_offsets.push(0u32);
        for ctx in 0..c {
            for (tok, &p) in model.transition_row(ctx).iter().enumerate() {
                if p > 0.0 {
                    col_index.push(model.shift_context(ctx, tok as Token) as u32);
                    value.push(p);
                }
            }
            row_offsets.push(col_index.len() as u32);
        }
        let state_token: Vec<Token> = (0..c).map(|ctx| model.context_first_token(ctx)).collect();
        Ok(PosteriorEngine {
            num_states: c,
            vocab: v,
            init: model.init_context_dist().to_vec(),
            row_offsets,
            col_index,
            value,
            emission: Emission::Deterministic(state_token),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Emission factor of `state` for an observed token.
    #[inline]
    fn obs_factor(&self, state: usize, token: Token) -> f64 {
        match &self.emission {
            Emission::Dense(emit_t) => emit_t[token as usize * self.num_states + state],
            Emission::Deterministic(state_token) => {
                if state_token[state] == token {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    fn push_forward(&self, cur: &[f64], next: &mut [f64]) {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (st, &w) in cur.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let lo = self.row_offsets[st] as usize;
            let hi = self.row_offsets[st + 1] as usize;
            for k in lo..hi {
                next[self.col_index[k] as usize] += w * self.value[k];
            }
        }
    }

    /// Exact marginals for `masked` at `positions` (each must be a mask
    /// slot). Runs one scaled forward and one scaled backward sweep.
    pub fn marginals_at(
        &self,
        scratch: &mut Scratch,
        masked: &MaskedSequence,
        positions: &[usize],
    ) -> Result<PosteriorMarginals> {
        let len = masked.len();
        let s = self.num_states;
        for slot in masked.slots() {
            if let Slot::Token(t) = slot {
                if *t as usize >= self.vocab {
                    return Err(Error::TokenOutOfVocab {
                        token: *t,
                        vocab: self.vocab,
                    });
                }
            }
        }
        for &p in positions {
            if p >= len {
                return Err(Error::LengthMismatch {
                    got: p,
                    expected: len,
                });
            }
            if !masked.is_masked(p) {
                return Err(Error::Unsupported(
                    "marginal requested at an observed position".into(),
                ));
            }
        }
        if len == 0 || positions.is_empty() {
            // Still report the evidence for callers that want it.
            if len == 0 {
                return Ok(PosteriorMarginals::new(BTreeMap::new(), false, 0.0));
            }
        }

        scratch.fwd.resize(len * s, 0.0);
        scratch.bwd.resize(len * s, 0.0);
        scratch.tmp.resize(s, 0.0);

        // Forward: fwd[i] = P(state_i | evidence at positions < i), and the
        // per-position evidence scale accumulates into log2_evidence.
        let mut log2_evidence = 0.0f64;
        let mut degenerate = false;
        scratch.fwd[..s].copy_from_slice(&self.init);
        for i in 0..len {
            let (fwd_i, fwd_rest) = scratch.fwd[i * s..].split_at_mut(s);
            let mut scale = 0.0;
            match masked.slot(i) {
                Slot::Mask => scale = 1.0, // emissions marginalize to 1
                Slot::Token(t) => {
                    for (st, (&f, tmp)) in fwd_i.iter().zip(scratch.tmp.iter_mut()).enumerate() {
                        let w = f * self.obs_factor(st, t);
                        *tmp = w;
                        scale += w;
                    }
                }
            }
            if scale <= 0.0 {
                degenerate = true;
                break;
            }
            log2_evidence += scale.log2();
            if i + 1 < len {
                let next = &mut fwd_rest[..s];
                match masked.slot(i) {
                    Slot::Mask => {
                        // No emission constraint: push fwd_i through.
                        self.push_forward(fwd_i, next);
                    }
                    Slot::Token(_) => {
                        scratch.tmp.iter_mut().for_each(|x| *x /= scale);
                        self.push_forward(&scratch.tmp, next);
                    }
                }
            }
        }

        if degenerate {
            let mut entries = BTreeMap::new();
            for &p in positions {
                entries.insert(p, vec![1.0 / self.vocab as f64; self.vocab]);
            }
            return Ok(PosteriorMarginals::new(entries, true, f64::NEG_INFINITY));
        }

        // Backward: bwd[i] proportional to P(evidence at positions > i | state_i).
        scratch.bwd[(len - 1) * s..len * s].fill(1.0);
        for i in (0..len - 1).rev() {
            // tmp[succ] = obs_{i+1}(succ) * bwd[i+1][succ]
            let bwd_next = &scratch.bwd[(i + 1) * s..(i + 2) * s];
            match masked.slot(i + 1) {
                Slot::Mask => scratch.tmp.copy_from_slice(bwd_next),
                Slot::Token(t) => {
                    for (st, (&b, tmp)) in bwd_next.iter().zip(scratch.tmp.iter_mut()).enumerate() {
                        *tmp = b * self.obs_factor(st, t);
                    }
                }
            }
            let mut sum = 0.0;
            {
                let (head, tail) = scratch.bwd.split_at_mut((i + 1) * s);
                let row = &mut head[i * s..];
                let _ = tail;
                for (st, r) in row.iter_mut().enumerate().take(s) {
                    let lo = self.row_offsets[st] as usize;
                    let hi = self.row_offsets[st + 1] as usize;
                    let mut acc = 0.0;
                    for k in lo..hi {
                        acc += self.value[k] * scratch.tmp[self.col_index[k] as usize];
                    }
                    *r = acc;
                    sum += acc;
                }
                if sum > 0.0 {
                    for r in row.iter_mut().take(s) {
                        *r /= sum;
                    }
                }
            }
            if sum <= 0.0 {
                // Unreachable when the forward pass saw positive evidence.
                let mut entries = BTreeMap::new();
                for &p in positions {
                    entries.insert(p, vec![1.0 / self.vocab as f64; self.vocab]);
                }
                return Ok(PosteriorMarginals::new(entries, true, f64::NEG_INFINITY));
            }
        }

        let mut entries = BTreeMap::new();
        for &pos in positions {
            let fwd = &scratch.fwd[pos * s..(pos + 1) * s];
            let bwd = &scratch.bwd[pos * s..(pos + 1) * s];
            let mut w = vec![0.0f64; self.vocab];
            match &self.emission {
                Emission::Dense(emit_t) => {
                    for st in 0..s {
                        let fb = fwd[st] * bwd[st];
                        if fb == 0.0 {
                            continue;
                        }
                        for (v, wv) in w.iter_mut().enumerate() {
                            *wv += fb * emit_t[v * s + st];
                        }
                    }
                }
                Emission::Deterministic(state_token) => {
                    for st in 0..s {
                        let fb = fwd[st] * bwd[st];
                        if fb > 0.0 {
                            w[state_token[st] as usize] += fb;
                        }
                    }
                }
            }
            let total: f64 = w.iter().sum();
            debug_assert!(total > 0.0, "zero marginal mass with positive evidence");
            for x in w.iter_mut() {
                *x /= total;
            }
            entries.insert(pos, w);
        }
        Ok(PosteriorMarginals::new(entries, false, log2_evidence))
    }
}

/// [`PosteriorOracle`] backed by a shared engine plus private scratch.
pub struct EngineOracle {
    engine: Arc<PosteriorEngine>,
    scratch: Scratch,
}

impl EngineOracle {
    pub fn new(engine: Arc<PosteriorEngine>) -> Self {
        EngineOracle {
            engine,
            scratch: Scratch::default(),
        }
    }
}

impl PosteriorOracle for EngineOracle {
    fn marginals_at(
        &mut self,
        masked: &MaskedSequence,
        positions: &[usize],
    ) -> Result<PosteriorMarginals> {
        self.engine.marginals_at(&mut self.scratch, masked, positions)
    }
}

/// Marginals by full enumeration of completions, weighted by `q`. The test
/// oracle for [`posterior_marginals`]; independent of the forward-backward
/// path (it only consumes `Language::log_prob2`).
pub fn posterior_marginals_brute(
    lang: &dyn Language,
    masked: &MaskedSequence,
) -> Result<PosteriorMarginals> {
    posterior_marginals_brute_capped(lang, masked, DEFAULT_ENUM_CAP)
}

pub fn posterior_marginals_brute_capped(
    lang: &dyn Language,
    masked: &MaskedSequence,
    cap: u64,
) -> Result<PosteriorMarginals> {
    let v = lang.vocab_size();
    let positions = masked.masked_positions();
    let combos = (v as u128).checked_pow(positions.len() as u32).unwrap_or(u128::MAX);
    if combos > cap as u128 {
        return Err(Error::CapacityExceeded {
            what: "brute-force completion enumeration",
            needed: combos,
            cap,
        });
    }
    let mut tokens: Vec<Token> = masked
        .slots()
        .iter()
        .map(|s| match s {
            Slot::Token(t) => *t,
            Slot::Mask => 0,
        })
        .collect();
    let mut mass = vec![vec![0.0f64; v]; positions.len()];
    let mut total = 0.0f64;
    let mut assignment = vec![0usize; positions.len()];
    loop {
        for (slot, &pos) in assignment.iter().zip(&positions) {
            tokens[pos] = *slot as Token;
        }
        let p = lang.log_prob2(&tokens)?.exp2();
        if p > 0.0 {
            total += p;
            for (k, &slot) in assignment.iter().enumerate() {
                mass[k][slot] += p;
            }
        }
        // Odometer over completions.
        let mut k = 0;
        loop {
            if k == assignment.len() {
                let mut entries = BTreeMap::new();
                let degenerate = total <= 0.0;
                let log2_evidence = if total > 0.0 {
                    total.log2()
                } else if positions.is_empty() {
                    lang.log_prob2(&tokens)?
                } else {
                    f64::NEG_INFINITY
                };
                for (i, &pos) in positions.iter().enumerate() {
                    let row = if total > 0.0 {
                        mass[i].iter().map(|&m| m / total).collect()
                    } else {
                        vec![1.0 / v as f64; v]
                    };
                    entries.insert(pos, row);
                }
                return Ok(PosteriorMarginals::new(entries, degenerate, log2_evidence));
            }
            assignment[k] += 1;
            if assignment[k] < v {
                break;
            }
            assignment[k] = 0;
            k += 1;
        }
    }
}
