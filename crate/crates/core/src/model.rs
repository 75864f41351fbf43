//! Tokens, steps and trajectories.
//!
//! A sampled output `o` is a flat token sequence. Everything before the
//! reasoning terminator (or the whole sequence when it is absent) is the
//! reasoning region, which is tiled into steps ending at step delimiters.
//! Everything from the terminator onwards is the summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Arithmetic operations understood by the toy task and the policy features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

    pub fn apply(self, lhs: u32, rhs: u32, modulus: u32) -> u32 {
        let (l, r, m) = (lhs as u64, rhs as u64, modulus as u64);
        let v = match self {
            Op::Add => (l + r) % m,
            Op::Sub => (l + m - r % m) % m,
            Op::Mul => (l * r) % m,
        };
        v as u32
    }

    pub fn index(self) -> u32 {
        match self {
            Op::Add => 0,
            Op::Sub => 1,
            Op::Mul => 2,
        }
    }
}

/// Reserved token ids. Digits occupy `0..digits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reserved {
    pub delim: TokenId,
    pub answer: TokenId,
    pub think_end: TokenId,
    pub eot: TokenId,
    pub wait: TokenId,
    pub add: TokenId,
    pub sub: TokenId,
    pub mul: TokenId,
    pub bos: TokenId,
}

/// Vocabulary: `digits` digit tokens followed by the reserved markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: u32,
    digits: u32,
    reserved: Reserved,
}

/// Number of reserved (non-digit) tokens in the standard layout.
pub const NUM_RESERVED: u32 = 9;

impl Vocab {
    /// Standard layout: digits, then DELIM, ANSWER, THINK_END, EOT, WAIT,
    /// ADD, SUB, MUL, BOS.
    pub fn with_digits(digits: u32) -> Result<Self> {
        let d = digits;
        Self::new(
            d + NUM_RESERVED,
            d,
            Reserved {
                delim: d,
                answer: d + 1,
                think_end: d + 2,
                eot: d + 3,
                wait: d + 4,
                add: d + 5,
                sub: d + 6,
                mul: d + 7,
                bos: d + 8,
            },
        )
    }

    pub fn new(size: u32, digits: u32, reserved: Reserved) -> Result<Self> {
        if size < 8 {
            return Err(Error::Vocab(format!("size {size} < 8")));
        }
        if digits == 0 {
            return Err(Error::Vocab("at least one digit token is required".into()));
        }
        let ids = [
            reserved.delim,
            reserved.answer,
            reserved.think_end,
            reserved.eot,
            reserved.wait,
            reserved.add,
            reserved.sub,
            reserved.mul,
            reserved.bos,
        ];
        for (i, &a) in ids.iter().enumerate() {
            if a >= size {
                return Err(Error::Vocab(format!("reserved id {a} >= size {size}")));
            }
            if a < digits {
                return Err(Error::Vocab(format!("reserved id {a} collides with a digit")));
            }
            if ids[..i].contains(&a) {
                return Err(Error::Vocab(format!("reserved id {a} used twice")));
            }
        }
        if digits + ids.len() as u32 > size {
            return Err(Error::Vocab("digits and reserved ids do not fit".into()));
        }
        Ok(Vocab { size, digits, reserved })
    }

    pub fn size(&self) -> usize {
        self.size as usize
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    pub fn reserved(&self) -> &Reserved {
        &self.reserved
    }

    pub fn delim(&self) -> TokenId {
        self.reserved.delim
    }
    pub fn answer(&self) -> TokenId {
        self.reserved.answer
    }
    pub fn think_end(&self) -> TokenId {
        self.reserved.think_end
    }
    pub fn eot(&self) -> TokenId {
        self.reserved.eot
    }
    pub fn wait(&self) -> TokenId {
        self.reserved.wait
    }
    pub fn bos(&self) -> TokenId {
        self.reserved.bos
    }

    pub fn is_digit(&self, t: TokenId) -> bool {
        t < self.digits
    }

    pub fn digit(&self, value: u32) -> TokenId {
        debug_assert!(value < self.digits);
        value
    }

    pub fn op_token(&self, op: Op) -> TokenId {
        match op {
            Op::Add => self.reserved.add,
            Op::Sub => self.reserved.sub,
            Op::Mul => self.reserved.mul,
        }
    }

    pub fn as_op(&self, t: TokenId) -> Option<Op> {
        match t {
            t if t == self.reserved.add => Some(Op::Add),
            t if t == self.reserved.sub => Some(Op::Sub),
            t if t == self.reserved.mul => Some(Op::Mul),
            _ => None,
        }
    }

    /// Short human-readable rendering, handy in examples and test failures.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        let r = &self.reserved;
        tokens
            .iter()
            .map(|&t| match t {
                t if self.is_digit(t) => t.to_string(),
                t if t == r.delim => "|".into(),
                t if t == r.answer => "ANS".into(),
                t if t == r.think_end => "</think>".into(),
                t if t == r.eot => "EOT".into(),
                t if t == r.wait => "WAIT".into(),
                t if t == r.add => "+".into(),
                t if t == r.sub => "-".into(),
                t if t == r.mul => "*".into(),
                t if t == r.bos => "BOS".into(),
                t => format!("<{t}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Task parameters carried alongside a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub seed: u64,
    pub modulus: u32,
    pub chain_length: usize,
}

/// A prompt with its ground-truth answer (answer tokens end with EOT).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: u64,
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    pub meta: QueryMeta,
}

impl Query {
    /// Answer tokens without the terminal EOT.
    pub fn answer_content(&self, vocab: &Vocab) -> &[TokenId] {
        strip_eot(&self.answer, vocab)
    }
}

pub(crate) fn strip_eot<'a>(tokens: &'a [TokenId], vocab: &Vocab) -> &'a [TokenId] {
    match tokens.split_last() {
        Some((&last, rest)) if last == vocab.eot() => rest,
        _ => tokens,
    }
}

/// Half-open token span `[start, end)`, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct StepSpan {
    pub start: usize,
    pub end: usize,
}

impl StepSpan {
    pub fn new(start: usize, end: usize) -> Self {
        StepSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<[usize; 2]> for StepSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        StepSpan { start, end }
    }
}

impl From<StepSpan> for [usize; 2] {
    fn from(s: StepSpan) -> Self {
        [s.start, s.end]
    }
}

/// Splits `tokens[..reasoning_end]` into steps. Each step ends right after a
/// delimiter; a trailing run without a delimiter is kept as the final step.
pub fn segment_steps(tokens: &[TokenId], reasoning_end: usize, delim: TokenId) -> Vec<StepSpan> {
    let end = reasoning_end.min(tokens.len());
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &t) in tokens[..end].iter().enumerate() {
        if t == delim {
            spans.push(StepSpan::new(start, i + 1));
            start = i + 1;
        }
    }
    if start < end {
        spans.push(StepSpan::new(start, end));
    }
    spans
}

/// A sampled response: reasoning steps followed by the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrajectory {
    pub query_id: u64,
    pub tokens: Vec<TokenId>,
    /// Behavior-policy log-probability of each token at sampling time.
    pub logprobs: Vec<f64>,
    pub reasoning_end: usize,
    pub steps: Vec<StepSpan>,
    pub reward: u8,
    /// Generation stopped at the length cap before EOT.
    pub truncated: bool,
}

impl TokenTrajectory {
    /// Builds a trajectory from generated tokens, locating THINK_END and
    /// segmenting the reasoning region. The reward starts at 0.
    pub fn from_tokens(
        query_id: u64,
        tokens: Vec<TokenId>,
        logprobs: Vec<f64>,
        vocab: &Vocab,
        truncated: bool,
    ) -> Self {
        let reasoning_end = tokens
            .iter()
            .position(|&t| t == vocab.think_end())
            .unwrap_or(tokens.len());
        let steps = segment_steps(&tokens, reasoning_end, vocab.delim());
        TokenTrajectory {
            query_id,
            tokens,
            logprobs,
            reasoning_end,
            steps,
            reward: 0,
            truncated,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn reasoning(&self) -> &[TokenId] {
        &self.tokens[..self.reasoning_end]
    }

    pub fn summary(&self) -> &[TokenId] {
        &self.tokens[self.reasoning_end..]
    }

    pub fn step_tokens(&self, k: usize) -> Result<&[TokenId]> {
        let span = self.step_span(k)?;
        Ok(&self.tokens[span.range()])
    }

    /// Span of the 1-based step `k`.
    pub fn step_span(&self, k: usize) -> Result<StepSpan> {
        if k == 0 || k > self.steps.len() {
            return Err(Error::StepOutOfRange {
                k,
                num_steps: self.steps.len(),
            });
        }
        Ok(self.steps[k - 1])
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.logprobs.len() != self.tokens.len() {
            return Err(Error::LengthMismatch(format!(
                "{} logprobs for {} tokens",
                self.logprobs.len(),
                self.tokens.len()
            )));
        }
        if self.reasoning_end > self.tokens.len() {
            return Err(Error::LengthMismatch(format!(
                "reasoning_end {} past {} tokens",
                self.reasoning_end,
                self.tokens.len()
            )));
        }
        if self.reward > 1 {
            return Err(Error::LengthMismatch(format!("reward {} not binary", self.reward)));
        }
        let mut cursor = 0;
        for s in &self.steps {
            if s.start != cursor || s.end <= s.start {
                return Err(Error::LengthMismatch(format!(
                    "step span [{}, {}) does not continue tiling at {cursor}",
                    s.start, s.end
                )));
            }
            cursor = s.end;
        }
        if cursor != self.reasoning_end {
            return Err(Error::LengthMismatch(format!(
                "steps cover [0, {cursor}) but reasoning ends at {}",
                self.reasoning_end
            )));
        }
        Ok(())
    }
}

/// Where a token sits: inside reasoning step `k` (1-based) or in the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepSlot {
    Step(usize),
    Summary,
}

impl StepSlot {
    pub fn step(self) -> Option<usize> {
        match self {
            StepSlot::Step(k) => Some(k),
            StepSlot::Summary => None,
        }
    }
}

/// Token index to step mapping for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepIndexMap {
    slots: Vec<StepSlot>,
}

impl StepIndexMap {
    pub fn slots(&self) -> &[StepSlot] {
        &self.slots
    }

    pub fn get(&self, j: usize) -> Option<StepSlot> {
        self.slots.get(j).copied()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

pub fn map_token_to_step(trajectory: &TokenTrajectory) -> StepIndexMap {
    let mut slots = vec![StepSlot::Summary; trajectory.tokens.len()];
    for (i, span) in trajectory.steps.iter().enumerate() {
        for slot in &mut slots[span.range()] {
            *slot = StepSlot::Step(i + 1);
        }
    }
    StepIndexMap { slots }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::with_digits(10).unwrap()
    }

    #[test]
    fn segment_empty() {
        assert!(segment_steps(&[], 0, 10).is_empty());
    }

    #[test]
    fn segment_two_delimited_steps() {
        let v = vocab();
        let (d, add) = (v.delim(), v.op_token(Op::Add));
        // 3 + 4 | = 7 |   (the '=' is stood in for by a WAIT token)
        let tokens = [3, add, 4, d, v.wait(), 7, d];
        let spans = segment_steps(&tokens, 7, d);
        assert_eq!(spans, vec![StepSpan::new(0, 4), StepSpan::new(4, 7)]);
    }

    #[test]
    fn segment_keeps_trailing_partial_step() {
        let d = vocab().delim();
        let spans = segment_steps(&[1, 2, d, 3], 4, d);
        assert_eq!(spans, vec![StepSpan::new(0, 3), StepSpan::new(3, 4)]);
    }

    #[test]
    fn segment_ignores_summary_delimiters() {
        let d = vocab().delim();
        let spans = segment_steps(&[1, d, 2, d, 5, d], 4, d);
        assert_eq!(spans, vec![StepSpan::new(0, 2), StepSpan::new(2, 4)]);
    }

    #[test]
    fn map_tokens_with_summary() {
        let v = vocab();
        let d = v.delim();
        let tokens = vec![3, 1, 4, d, 5, 7, d, v.think_end()];
        let traj = TokenTrajectory::from_tokens(0, tokens, vec![0.0; 8], &v, false);
        assert_eq!(traj.reasoning_end, 7);
        let m = map_token_to_step(&traj);
        use StepSlot::*;
        assert_eq!(
            m.slots(),
            &[Step(1), Step(1), Step(1), Step(1), Step(2), Step(2), Step(2), Summary]
        );
    }

    #[test]
    fn map_without_steps_is_all_summary() {
        let v = vocab();
        let traj = TokenTrajectory::from_tokens(0, vec![v.think_end(), v.eot()], vec![0.0; 2], &v, false);
        assert_eq!(traj.num_steps(), 0);
        assert!(map_token_to_step(&traj).slots().iter().all(|s| *s == StepSlot::Summary));
    }

    #[test]
    fn map_single_step() {
        let v = vocab();
        let traj = TokenTrajectory::from_tokens(0, vec![1, 2, v.delim()], vec![0.0; 3], &v, false);
        assert_eq!(map_token_to_step(&traj).slots(), &[StepSlot::Step(1); 3]);
    }

    #[test]
    fn step_lookup_out_of_range() {
        let v = vocab();
        let traj = TokenTrajectory::from_tokens(0, vec![1, v.delim()], vec![0.0; 2], &v, false);
        assert!(traj.step_span(1).is_ok());
        assert!(matches!(traj.step_span(0), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(traj.step_span(2), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn vocab_rejects_collisions() {
        let mut r = *Vocab::with_digits(10).unwrap().reserved();
        r.wait = r.eot;
        assert!(Vocab::new(19, 10, r).is_err());
        assert!(Vocab::new(7, 1, r).is_err());
    }

    #[test]
    fn validate_catches_bad_tiling() {
        let v = vocab();
        let mut traj = TokenTrajectory::from_tokens(0, vec![1, v.delim(), 2], vec![0.0; 3], &v, false);
        traj.validate().unwrap();
        traj.steps[1].start = 1;
        assert!(traj.validate().is_err());
    }

    #[test]
    fn sub_wraps_modulo() {
        assert_eq!(Op::Sub.apply(2, 5, 10), 7);
        assert_eq!(Op::Mul.apply(7, 8, 10), 6);
        assert_eq!(Op::Add.apply(3, 4, 10), 7);
    }
}
