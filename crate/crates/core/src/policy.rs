//! Autoregressive policies.
//!
//! [`PolicyOracle`] is the minimal interface the probe, trainer and
//! diagnostics need: next-token logits for a context. [`TabularPolicy`] is
//! the trainable reference policy. Its table row is selected by the last
//! `context_order` tokens together with a small chain state (the most recent
//! value written after the prompt and the next pending chain operation), so
//! that a table can express "compute step by step, then check, then stop".

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::verify;
use crate::error::{Error, Result};
use crate::model::{Op, Query, TokenId, TokenTrajectory, Vocab};

/// Sampling controls shared by rollouts, evaluation and probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub top_p: f64,
    pub max_len: usize,
}

impl DecodeConfig {
    /// Group-sampling settings used for training rollouts.
    pub fn rollout(max_len: usize) -> Self {
        DecodeConfig {
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            max_len,
        }
    }

    /// Evaluation settings: temperature 0.6, top-k 50, top-p 1.0.
    pub fn evaluation(max_len: usize) -> Self {
        DecodeConfig {
            temperature: 0.6,
            top_k: 50,
            top_p: 1.0,
            max_len,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Distribution actually sampled from: temperature, then top-k, then top-p,
/// renormalized. Tokens outside the kept set get probability 0. A temperature
/// of 0 (or below) means greedy decoding.
pub fn filtered_distribution(logits: &[f64], decode: &DecodeConfig) -> Vec<f64> {
    let n = logits.len();
    if decode.temperature <= 0.0 {
        let best = argmax(logits);
        let mut p = vec![0.0; n];
        p[best] = 1.0;
        return p;
    }
    let scaled: Vec<f64> = logits.iter().map(|&l| l / decode.temperature).collect();
    let mut p = softmax(&scaled);
    let filter_k = decode.top_k > 0 && decode.top_k < n;
    let filter_p = decode.top_p < 1.0;
    if !filter_k && !filter_p {
        return p;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut keep = if filter_k { decode.top_k } else { n };
    if filter_p {
        let mut cum = 0.0;
        for (rank, &i) in order.iter().enumerate().take(keep) {
            cum += p[i];
            if cum >= decode.top_p {
                keep = rank + 1;
                break;
            }
        }
    }
    for &i in &order[keep..] {
        p[i] = 0.0;
    }
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `dist` with a single uniform `u`.
pub(crate) fn draw(dist: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// One sampled token with the statistics recorded at sampling time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub token: TokenId,
    /// Log-probability under the filtered distribution.
    pub logprob: f64,
    /// Entropy of the filtered distribution.
    pub entropy: f64,
}

pub trait PolicyOracle {
    fn vocab_size(&self) -> usize;

    /// Unnormalized log-probabilities for the next token.
    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f64>;

    fn next_token_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        softmax(&self.next_token_logits(context))
    }

    fn sampling_distribution(&self, context: &[TokenId], decode: &DecodeConfig) -> Vec<f64> {
        filtered_distribution(&self.next_token_logits(context), decode)
    }

    /// Draws one token, consuming exactly one uniform from `rng`.
    fn sample<R: Rng + ?Sized>(&self, context: &[TokenId], decode: &DecodeConfig, rng: &mut R) -> Sampled
    where
        Self: Sized,
    {
        let dist = self.sampling_distribution(context, decode);
        let i = draw(&dist, rng.gen::<f64>());
        Sampled {
            token: i as TokenId,
            logprob: dist[i].ln(),
            entropy: entropy(&dist),
        }
    }

    fn logprob(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.next_token_distribution(context)[token as usize].ln()
    }
}

impl<P: PolicyOracle + ?Sized> PolicyOracle for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f64> {
        (**self).next_token_logits(context)
    }
}

/// Policy defined by a closure returning a probability vector; used for
/// hand-built oracles in tests and examples.
pub struct FnPolicy<F> {
    vocab_size: usize,
    f: F,
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> FnPolicy<F> {
    pub fn new(vocab_size: usize, f: F) -> Self {
        FnPolicy { vocab_size, f }
    }
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> PolicyOracle for FnPolicy<F> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f64> {
        (self.f)(context).into_iter().map(f64::ln).collect()
    }
}

/// Result of one autoregressive decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub trajectory: TokenTrajectory,
    /// Entropy of the sampling distribution at each generated position.
    pub entropies: Vec<f64>,
}

/// Samples until EOT or `decode.max_len` tokens, then segments and verifies.
pub fn sample_trajectory<P: PolicyOracle, R: Rng + ?Sized>(
    policy: &P,
    query: &Query,
    vocab: &Vocab,
    decode: &DecodeConfig,
    rng: &mut R,
) -> Generation {
    let mut context = query.prompt.clone();
    let mut logprobs = Vec::new();
    let mut entropies = Vec::new();
    let mut finished = false;
    while logprobs.len() < decode.max_len {
        let s = policy.sample(&context, decode, rng);
        context.push(s.token);
        logprobs.push(s.logprob);
        entropies.push(s.entropy);
        if s.token == vocab.eot() {
            finished = true;
            break;
        }
    }
    let tokens = context.split_off(query.prompt.len());
    let mut trajectory = TokenTrajectory::from_tokens(query.id, tokens, logprobs, vocab, !finished);
    trajectory.reward = verify(&trajectory, query, vocab).reward;
    Generation { trajectory, entropies }
}

/// Chain position feature: the next chain operation still to be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cursor {
    Pending(Op, u32),
    Done,
    Unknown,
}

/// Decoded table-row key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextKey {
    /// Last `context_order` tokens, oldest first; `None` pads short contexts.
    pub window: Vec<Option<TokenId>>,
    /// Most recent digit written after the prompt (the start value if none).
    pub register: Option<u32>,
    pub cursor: Cursor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct KeyLayout {
    context_order: usize,
    vocab_size: usize,
    digits: usize,
}

impl KeyLayout {
    fn token_radix(&self) -> usize {
        self.vocab_size + 1
    }
    fn register_radix(&self) -> usize {
        self.digits + 1
    }
    fn cursor_radix(&self) -> usize {
        3 * self.digits + 2
    }
    fn rows(&self) -> usize {
        self.token_radix().pow(self.context_order as u32) * self.register_radix() * self.cursor_radix()
    }

    fn encode(&self, key: &ContextKey) -> usize {
        let mut idx = 0;
        for t in &key.window {
            idx = idx * self.token_radix() + t.map_or(self.vocab_size, |t| t as usize);
        }
        idx = idx * self.register_radix() + key.register.map_or(self.digits, |r| r as usize);
        let d = self.digits;
        let c = match key.cursor {
            Cursor::Pending(op, b) => op.index() as usize * d + b as usize,
            Cursor::Done => 3 * d,
            Cursor::Unknown => 3 * d + 1,
        };
        idx * self.cursor_radix() + c
    }

    fn decode(&self, mut idx: usize) -> ContextKey {
        let d = self.digits;
        let c = idx % self.cursor_radix();
        idx /= self.cursor_radix();
        let cursor = if c < 3 * d {
            Cursor::Pending(Op::ALL[c / d], (c % d) as u32)
        } else if c == 3 * d {
            Cursor::Done
        } else {
            Cursor::Unknown
        };
        let r = idx % self.register_radix();
        idx /= self.register_radix();
        let register = (r < d).then_some(r as u32);
        let mut window = vec![None; self.context_order];
        for slot in window.iter_mut().rev() {
            let t = idx % self.token_radix();
            idx /= self.token_radix();
            *slot = (t < self.vocab_size).then_some(t as TokenId);
        }
        ContextKey {
            window,
            register,
            cursor,
        }
    }
}

/// Extracts the row key from a raw context (prompt followed by generated
/// tokens). Steps containing WAIT are re-checks and do not advance the cursor.
pub fn context_key(context: &[TokenId], vocab: &Vocab, context_order: usize) -> ContextKey {
    let n = context.len();
    let window = (0..context_order)
        .map(|i| (n + i).checked_sub(context_order).map(|j| context[j]))
        .collect();

    let prompt_end = prompt_len(context, vocab);
    let (register, cursor) = match prompt_end {
        None => (
            context.iter().rev().find(|&&t| vocab.is_digit(t)).copied(),
            Cursor::Unknown,
        ),
        Some(end) => {
            let chain_len = (end - 3) / 2;
            let mut register = context[1];
            let mut solved = 0;
            let mut step_has_wait = false;
            for &t in &context[end..] {
                if vocab.is_digit(t) {
                    register = t;
                } else if t == vocab.wait() {
                    step_has_wait = true;
                } else if t == vocab.delim() {
                    if !step_has_wait {
                        solved += 1;
                    }
                    step_has_wait = false;
                }
            }
            let cursor = if solved >= chain_len {
                Cursor::Done
            } else {
                let i = 2 + 2 * solved;
                Cursor::Pending(vocab.as_op(context[i]).expect("parsed op"), context[i + 1])
            };
            (Some(register), cursor)
        }
    };
    ContextKey {
        window,
        register,
        cursor,
    }
}

fn prompt_len(context: &[TokenId], vocab: &Vocab) -> Option<usize> {
    if context.first() != Some(&vocab.bos()) || !context.get(1).is_some_and(|&t| vocab.is_digit(t)) {
        return None;
    }
    let mut i = 2;
    loop {
        let t = *context.get(i)?;
        if t == vocab.delim() {
            return Some(i + 1);
        }
        vocab.as_op(t)?;
        if !vocab.is_digit(*context.get(i + 1)?) {
            return None;
        }
        i += 2;
    }
}

/// Logit initialization that makes a fresh policy compute the chain step by
/// step, keep re-checking its answer after finishing, and sometimes overwrite
/// a correct value while re-checking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverCheckPrior {
    /// Probability of writing the correct next chain value.
    pub solve_prob: f64,
    /// Probability of opening another re-check step (WAIT) once the chain is done.
    pub loop_prob: f64,
    /// Probability that a re-check writes a different value.
    pub flip_prob: f64,
    /// Probability of stopping reasoning early while the chain is pending.
    pub premature_prob: f64,
    /// Probability that an answer induced mid-chain copies the current value.
    pub guess_prob: f64,
    /// Probability of EOT after a digit induced mid-chain.
    pub guess_stop_prob: f64,
    /// Floor mass added to every token before normalization.
    pub noise: f64,
}

impl Default for OverCheckPrior {
    fn default() -> Self {
        OverCheckPrior {
            solve_prob: 0.93,
            loop_prob: 0.7,
            flip_prob: 0.05,
            premature_prob: 0.01,
            guess_prob: 0.3,
            guess_stop_prob: 0.75,
            noise: 1e-7,
        }
    }
}

impl OverCheckPrior {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("solve_prob", self.solve_prob),
            ("loop_prob", self.loop_prob),
            ("flip_prob", self.flip_prob),
            ("premature_prob", self.premature_prob),
            ("guess_prob", self.guess_prob),
            ("guess_stop_prob", self.guess_stop_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfUnitRange { name, value: p });
            }
        }
        if self.solve_prob + self.premature_prob > 1.0 {
            return Err(Error::Config("solve_prob + premature_prob > 1".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("prior noise must be positive".into()));
        }
        Ok(())
    }

    /// Target next-token distribution for a row.
    pub fn distribution(&self, key: &ContextKey, vocab: &Vocab) -> Vec<f64> {
        let v = vocab.size();
        let d = vocab.digits();
        let mut p = vec![0.0; v];
        let spread_digits = |p: &mut [f64], mass: f64, except: Option<u32>| {
            let others = (0..d).filter(|&x| Some(x) != except).count();
            if others == 0 {
                return;
            }
            for x in (0..d).filter(|&x| Some(x) != except) {
                p[x as usize] += mass / others as f64;
            }
        };
        let last = key.window.last().copied().flatten();
        let prev = key.window.iter().rev().nth(1).copied().flatten();
        match last {
            Some(t) if t == vocab.delim() => match (key.cursor, key.register) {
                (Cursor::Pending(op, b), Some(r)) => {
                    let target = op.apply(r, b, d);
                    p[target as usize] += self.solve_prob;
                    spread_digits(&mut p, 1.0 - self.solve_prob - self.premature_prob, Some(target));
                    p[vocab.wait() as usize] += self.premature_prob / 2.0;
                    p[vocab.think_end() as usize] += self.premature_prob / 2.0;
                }
                (Cursor::Done, _) => {
                    p[vocab.wait() as usize] += self.loop_prob;
                    p[vocab.think_end() as usize] += 1.0 - self.loop_prob;
                }
                _ => spread_digits(&mut p, 1.0, None),
            },
            Some(t) if vocab.is_digit(t) => {
                if prev == Some(vocab.answer()) {
                    if key.cursor == Cursor::Done {
                        p[vocab.eot() as usize] += 1.0;
                    } else {
                        p[vocab.eot() as usize] += self.guess_stop_prob;
                        spread_digits(&mut p, 1.0 - self.guess_stop_prob, None);
                    }
                } else {
                    p[vocab.delim() as usize] += 1.0;
                }
            }
            Some(t) if t == vocab.wait() => match key.register {
                Some(r) => {
                    p[r as usize] += 1.0 - self.flip_prob;
                    spread_digits(&mut p, self.flip_prob, Some(r));
                }
                None => spread_digits(&mut p, 1.0, None),
            },
            Some(t) if t == vocab.think_end() => p[vocab.answer() as usize] += 1.0,
            Some(t) if t == vocab.answer() => match (key.cursor, key.register) {
                (Cursor::Done, Some(r)) => p[r as usize] += 1.0,
                (_, Some(r)) => {
                    p[r as usize] += self.guess_prob;
                    spread_digits(&mut p, 1.0 - self.guess_prob, Some(r));
                }
                _ => spread_digits(&mut p, 1.0, None),
            },
            _ => p.iter_mut().for_each(|x| *x += 1.0 / v as f64),
        }
        p.iter_mut().for_each(|x| *x += self.noise);
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }
}

/// Trainable table of logits indexed by [`ContextKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab: Vocab,
    layout: KeyLayout,
    temperature: f64,
    logits: Vec<f64>,
}

/// Default number of trailing tokens in a row key.
pub const DEFAULT_CONTEXT_ORDER: usize = 2;

impl TabularPolicy {
    /// All-zero logits (uniform rows).
    pub fn zeros(vocab: Vocab, context_order: usize) -> Result<Self> {
        if !(1..=4).contains(&context_order) {
            return Err(Error::Config(format!("context_order {context_order} outside 1..=4")));
        }
        let layout = KeyLayout {
            context_order,
            vocab_size: vocab.size(),
            digits: vocab.digits() as usize,
        };
        Ok(TabularPolicy {
            vocab,
            layout,
            temperature: 1.0,
            logits: vec![0.0; layout.rows() * vocab.size()],
        })
    }

    /// Rows initialized to `ln` of the prior's target distributions.
    pub fn with_prior(vocab: Vocab, context_order: usize, prior: &OverCheckPrior) -> Result<Self> {
        prior.validate()?;
        let mut policy = Self::zeros(vocab, context_order)?;
        for row in 0..policy.num_rows() {
            let key = policy.layout.decode(row);
            let p = prior.distribution(&key, &vocab);
            for (l, q) in policy.row_mut(row).iter_mut().zip(p) {
                *l = q.ln();
            }
        }
        Ok(policy)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn context_order(&self) -> usize {
        self.layout.context_order
    }

    pub fn num_rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("temperature {t} must be positive")));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.logits[row * v..(row + 1) * v]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let v = self.vocab.size();
        &mut self.logits[row * v..(row + 1) * v]
    }

    pub fn key(&self, context: &[TokenId]) -> ContextKey {
        context_key(context, &self.vocab, self.layout.context_order)
    }

    pub fn row_index(&self, context: &[TokenId]) -> usize {
        self.layout.encode(&self.key(context))
    }

    pub fn decode_row(&self, row: usize) -> ContextKey {
        self.layout.decode(row)
    }

    /// Log-probability of `token` and its gradient with respect to the
    /// context's logit row, under the policy's own temperature.
    pub fn logprob_and_grad(&self, context: &[TokenId], token: TokenId) -> (f64, Vec<f64>) {
        let decode = DecodeConfig {
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            max_len: 0,
        };
        let (lp, grad, _) = self.decoded_logprob_and_grad(context, token, &decode);
        (lp, grad)
    }

    /// Like [`Self::logprob_and_grad`] but under the filtered sampling
    /// distribution for `decode`, so it matches logprobs stored at sampling
    /// time. Returns the row index as well. Tokens outside the kept set get
    /// `-inf` and a zero gradient.
    pub fn decoded_logprob_and_grad(
        &self,
        context: &[TokenId],
        token: TokenId,
        decode: &DecodeConfig,
    ) -> (f64, Vec<f64>, usize) {
        let row = self.row_index(context);
        let (lp, grad) = self.row_logprob_and_grad(row, token, decode);
        (lp, grad, row)
    }

    /// Log-probability and gradient for an already resolved row.
    pub fn row_logprob_and_grad(&self, row: usize, token: TokenId, decode: &DecodeConfig) -> (f64, Vec<f64>) {
        let logits = self.scaled_row(row);
        let p = filtered_distribution(&logits, decode);
        let t = token as usize;
        let mut grad = vec![0.0; p.len()];
        if p[t] == 0.0 {
            return (f64::NEG_INFINITY, grad);
        }
        let scale = 1.0 / (self.temperature * decode.temperature.max(f64::MIN_POSITIVE));
        for (i, g) in grad.iter_mut().enumerate() {
            if p[i] > 0.0 {
                let onehot = if i == t { 1.0 } else { 0.0 };
                *g = (onehot - p[i]) * scale;
            }
        }
        (p[t].ln(), grad)
    }

    fn scaled_row(&self, row: usize) -> Vec<f64> {
        self.row(row).iter().map(|&l| l / self.temperature).collect()
    }

    pub fn save(&self, path: &Path, iteration: u64) -> Result<()> {
        let json = path.extension().is_some_and(|e| e == "json");
        let bytes = if json {
            self.to_json_bytes(iteration)?
        } else {
            self.to_binary(iteration)
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint written by [`Self::save`]; returns the policy and
    /// the iteration it was taken at.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(CHECKPOINT_MAGIC) {
            Self::from_binary(&bytes)
        } else {
            Self::from_json_bytes(&bytes)
        }
    }

    pub fn to_binary(&self, iteration: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.logits.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.layout.context_order as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.vocab.size() as u32).to_le_bytes());
        out.extend_from_slice(&iteration.to_le_bytes());
        out.extend_from_slice(&self.temperature.to_le_bytes());
        for l in &self.logits {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<(Self, u64)> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let context_order = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let table_rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let vocab_size = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let iteration = u64::from_le_bytes(read_array(&mut r)?);
        let temperature = f64::from_le_bytes(read_array(&mut r)?);
        let mut policy = Self::empty_for(context_order, table_rows, vocab_size)?;
        if r.len() != policy.logits.len() * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} logit bytes, found {}",
                policy.logits.len() * 8,
                r.len()
            )));
        }
        for (l, chunk) in policy.logits.iter_mut().zip(r.chunks_exact(8)) {
            *l = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        policy.set_temperature(temperature)?;
        policy.check_finite()?;
        Ok((policy, iteration))
    }

    pub fn to_json_bytes(&self, iteration: u64) -> Result<Vec<u8>> {
        let ck = JsonCheckpoint {
            context_order: self.layout.context_order,
            table_rows: self.num_rows(),
            vocab_size: self.vocab.size(),
            iteration,
            temperature: self.temperature,
            logits: self.logits.clone(),
        };
        let mut out = serde_json::to_vec(&ck)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<(Self, u64)> {
        let ck: JsonCheckpoint = serde_json::from_slice(bytes)?;
        let mut policy = Self::empty_for(ck.context_order, ck.table_rows, ck.vocab_size)?;
        if ck.logits.len() != policy.logits.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} logits, found {}",
                policy.logits.len(),
                ck.logits.len()
            )));
        }
        policy.logits = ck.logits;
        policy.set_temperature(ck.temperature)?;
        policy.check_finite()?;
        Ok((policy, ck.iteration))
    }

    fn empty_for(context_order: usize, table_rows: usize, vocab_size: usize) -> Result<Self> {
        let digits = vocab_size
            .checked_sub(crate::model::NUM_RESERVED as usize)
            .ok_or_else(|| Error::Checkpoint(format!("vocab size {vocab_size} too small")))?;
        let vocab = Vocab::with_digits(digits as u32).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let policy = Self::zeros(vocab, context_order).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if policy.num_rows() != table_rows {
            return Err(Error::Checkpoint(format!(
                "header says {table_rows} rows, layout has {}",
                policy.num_rows()
            )));
        }
        Ok(policy)
    }

    fn check_finite(&self) -> Result<()> {
        if self.logits.iter().all(|l| l.is_finite()) {
            Ok(())
        } else {
            Err(Error::Checkpoint("non-finite logit".into()))
        }
    }
}

impl PolicyOracle for TabularPolicy {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Vec<f64> {
        self.scaled_row(self.row_index(context))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPAEPOL1";

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    context_order: usize,
    table_rows: usize,
    vocab_size: usize,
    iteration: u64,
    temperature: f64,
    logits: Vec<f64>,
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated header".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_query, query_from_chain, Chain, TaskSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ten_token_vocab() -> Vocab {
        Vocab::with_digits(1).unwrap()
    }

    #[test]
    fn zero_row_is_uniform() {
        let p = TabularPolicy::zeros(ten_token_vocab(), 2).unwrap();
        let d = p.next_token_distribution(&[0]);
        assert_eq!(d.len(), 10);
        for x in d {
            assert!((x - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logit_saturates() {
        let mut p = TabularPolicy::zeros(ten_token_vocab(), 2).unwrap();
        let row = p.row_index(&[0]);
        p.row_mut(row)[3] = 60.0;
        let d = p.next_token_distribution(&[0]);
        assert!(d[3] > 1.0 - 1e-15);
        assert!(d.iter().enumerate().all(|(i, &x)| i == 3 || x < 1e-25));
    }

    #[test]
    fn hand_softmax_two_logits() {
        let d = softmax(&[3f64.ln(), 0.0]);
        assert!((d[0] - 0.75).abs() < 1e-15);
        assert!((d[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_logprob_and_grad() {
        let p = TabularPolicy::zeros(ten_token_vocab(), 2).unwrap();
        let (lp, g) = p.logprob_and_grad(&[0, 1], 4);
        assert!((lp - 0.1f64.ln()).abs() < 1e-12);
        for (i, gi) in g.iter().enumerate() {
            let expect = if i == 4 { 0.9 } else { -0.1 };
            assert!((gi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_row_has_vanishing_gradient() {
        let mut p = TabularPolicy::zeros(ten_token_vocab(), 2).unwrap();
        let row = p.row_index(&[0]);
        p.row_mut(row)[2] = 50.0;
        let (_, g) = p.logprob_and_grad(&[0], 2);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn top_k_and_top_p_filtering() {
        let logits = [0.4f64.ln(), 0.3f64.ln(), 0.2f64.ln(), 0.1f64.ln()];
        let k2 = filtered_distribution(
            &logits,
            &DecodeConfig {
                temperature: 1.0,
                top_k: 2,
                top_p: 1.0,
                max_len: 1,
            },
        );
        assert!((k2[0] - 4.0 / 7.0).abs() < 1e-12 && k2[2] == 0.0 && k2[3] == 0.0);
        let p = filtered_distribution(
            &logits,
            &DecodeConfig {
                temperature: 1.0,
                top_k: 0,
                top_p: 0.85,
                max_len: 1,
            },
        );
        assert!(p[3] == 0.0 && (p[0] - 0.4 / 0.9).abs() < 1e-12);
        let greedy = filtered_distribution(
            &logits,
            &DecodeConfig {
                temperature: 0.0,
                top_k: 0,
                top_p: 1.0,
                max_len: 1,
            },
        );
        assert_eq!(greedy, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn key_layout_roundtrip() {
        let vocab = Vocab::with_digits(5).unwrap();
        let policy = TabularPolicy::zeros(vocab, 2).unwrap();
        for row in (0..policy.num_rows()).step_by(7) {
            let key = policy.decode_row(row);
            assert_eq!(policy.layout.encode(&key), row);
        }
    }

    #[test]
    fn context_key_tracks_register_and_cursor() {
        let spec = TaskSpec {
            modulus: 10,
            chain_length: 2,
            ops: vec![Op::Add],
        };
        let v = spec.vocab().unwrap();
        let q = query_from_chain(
            0,
            &Chain {
                start: 3,
                steps: vec![(Op::Add, 4), (Op::Add, 1)],
            },
            &spec,
        )
        .unwrap();
        let mut ctx = q.prompt.clone();
        let k = context_key(&ctx, &v, 2);
        assert_eq!(k.register, Some(3));
        assert_eq!(k.cursor, Cursor::Pending(Op::Add, 4));
        ctx.extend([7, v.delim()]);
        let k = context_key(&ctx, &v, 2);
        assert_eq!((k.register, k.cursor), (Some(7), Cursor::Pending(Op::Add, 1)));
        ctx.extend([8, v.delim()]);
        assert_eq!(context_key(&ctx, &v, 2).cursor, Cursor::Done);
        // a re-check step does not advance the cursor
        let mut early = q.prompt.clone();
        early.extend([v.wait(), 7, v.delim()]);
        assert_eq!(context_key(&early, &v, 2).cursor, Cursor::Pending(Op::Add, 4));
        assert_eq!(context_key(&[v.delim()], &v, 2).window, vec![None, Some(v.delim())]);
    }

    #[test]
    fn deterministic_script_policy_trajectory() {
        let spec = TaskSpec {
            modulus: 10,
            chain_length: 1,
            ops: vec![Op::Add],
        };
        let v = spec.vocab().unwrap();
        let q = query_from_chain(
            0,
            &Chain {
                start: 3,
                steps: vec![(Op::Add, 4)],
            },
            &spec,
        )
        .unwrap();
        let script = [7, v.delim(), v.think_end(), v.answer(), 7, v.eot()];
        let plen = q.prompt.len();
        let policy = FnPolicy::new(v.size(), |ctx: &[TokenId]| {
            let mut p = vec![0.0; v.size()];
            p[script[ctx.len() - plen] as usize] = 1.0;
            p
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_trajectory(&policy, &q, &v, &DecodeConfig::rollout(16), &mut rng);
        assert_eq!(g.trajectory.tokens, script.to_vec());
        assert_eq!(g.trajectory.num_steps(), 1);
        assert_eq!(g.trajectory.reward, 1);
        assert!(!g.trajectory.truncated);
        assert!(g.trajectory.logprobs.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn max_len_one_truncates() {
        let spec = TaskSpec::default();
        let v = spec.vocab().unwrap();
        let policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
        let q = generate_query(5, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = sample_trajectory(&policy, &q, &v, &DecodeConfig::rollout(1), &mut rng);
        assert_eq!(g.trajectory.len(), 1);
        assert!(g.trajectory.truncated);
        assert_eq!(g.trajectory.reward, 0);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let spec = TaskSpec::default();
        let v = spec.vocab().unwrap();
        let policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
        let q = generate_query(9, &spec).unwrap();
        let run = |s| {
            sample_trajectory(
                &policy,
                &q,
                &v,
                &DecodeConfig::rollout(48),
                &mut ChaCha8Rng::seed_from_u64(s),
            )
        };
        assert_eq!(run(3), run(3));
        let g = run(3);
        g.trajectory.validate().unwrap();
    }

    #[test]
    fn prior_policy_solves_and_checks() {
        let spec = TaskSpec::default();
        let v = spec.vocab().unwrap();
        let policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut correct, mut waits) = (0, 0);
        for s in 0..300 {
            let q = generate_query(s, &spec).unwrap();
            let g = sample_trajectory(&policy, &q, &v, &DecodeConfig::rollout(48), &mut rng);
            correct += g.trajectory.reward as usize;
            waits += g.trajectory.tokens.iter().filter(|&&t| t == v.wait()).count();
        }
        assert!(correct > 120 && correct < 280, "correct={correct}");
        assert!(waits > 300, "waits={waits}");
    }

    #[test]
    fn checkpoint_roundtrip_binary_and_json() {
        let v = Vocab::with_digits(3).unwrap();
        let mut p = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
        p.logits_mut()[5] = 0.1 + 0.2;
        let (b, it) = TabularPolicy::from_binary(&p.to_binary(7)).unwrap();
        assert_eq!((b == p, it), (true, 7));
        let (j, it) = TabularPolicy::from_json_bytes(&p.to_json_bytes(9).unwrap()).unwrap();
        assert_eq!((j == p, it), (true, 9));
        let mut bad = p.to_binary(0);
        bad.truncate(bad.len() - 1);
        assert!(TabularPolicy::from_binary(&bad).is_err());
    }
}
