//! Modular-arithmetic chain task with an exact-match verifier.
//!
//! Prompt layout: `BOS a (op b)* DELIM`. The answer is the chain value
//! `(((a op1 b1) op2 b2) ...) mod M` rendered as a digit followed by EOT.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{strip_eot, Op, Query, QueryMeta, TokenId, TokenTrajectory, Vocab};

/// Largest supported modulus; every answer is a single digit token.
pub const MAX_MODULUS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub modulus: u32,
    pub chain_length: usize,
    pub ops: Vec<Op>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            modulus: 10,
            chain_length: 4,
            ops: Op::ALL.to_vec(),
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modulus < 2 {
            return Err(Error::TaskSpec(format!("modulus {} < 2", self.modulus)));
        }
        if self.modulus > MAX_MODULUS {
            return Err(Error::TaskSpec(format!(
                "modulus {} exceeds digit capacity {MAX_MODULUS}",
                self.modulus
            )));
        }
        if self.chain_length == 0 {
            return Err(Error::TaskSpec("chain_length must be >= 1".into()));
        }
        if self.ops.is_empty() {
            return Err(Error::TaskSpec("at least one op is required".into()));
        }
        Ok(())
    }

    /// The vocabulary whose digit tokens cover `0..modulus`.
    pub fn vocab(&self) -> Result<Vocab> {
        self.validate()?;
        Vocab::with_digits(self.modulus)
    }
}

/// A parsed arithmetic chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub start: u32,
    pub steps: Vec<(Op, u32)>,
}

impl Chain {
    /// Running values after each operation.
    pub fn partial_values(&self, modulus: u32) -> Vec<u32> {
        let mut v = self.start % modulus;
        self.steps
            .iter()
            .map(|&(op, b)| {
                v = op.apply(v, b, modulus);
                v
            })
            .collect()
    }

    pub fn evaluate(&self, modulus: u32) -> u32 {
        self.partial_values(modulus)
            .last()
            .copied()
            .unwrap_or(self.start % modulus)
    }

    pub fn to_prompt(&self, vocab: &Vocab) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(3 + 2 * self.steps.len());
        p.push(vocab.bos());
        p.push(vocab.digit(self.start));
        for &(op, b) in &self.steps {
            p.push(vocab.op_token(op));
            p.push(vocab.digit(b));
        }
        p.push(vocab.delim());
        p
    }
}

/// Parses `BOS a (op b)* DELIM` at the start of `tokens`. Returns the chain
/// and the prompt length.
pub fn parse_prompt(tokens: &[TokenId], vocab: &Vocab) -> Result<(Chain, usize)> {
    let bad = |m: &str| Error::MalformedPrompt(m.to_string());
    if tokens.first() != Some(&vocab.bos()) {
        return Err(bad("missing BOS"));
    }
    let start = match tokens.get(1) {
        Some(&t) if vocab.is_digit(t) => t,
        _ => return Err(bad("missing start value")),
    };
    let mut steps = Vec::new();
    let mut i = 2;
    loop {
        match tokens.get(i) {
            Some(&t) if t == vocab.delim() => return Ok((Chain { start, steps }, i + 1)),
            Some(&t) => {
                let op = vocab.as_op(t).ok_or_else(|| bad("expected an operation"))?;
                let b = match tokens.get(i + 1) {
                    Some(&b) if vocab.is_digit(b) => b,
                    _ => return Err(bad("operation without operand")),
                };
                steps.push((op, b));
                i += 2;
            }
            None => return Err(bad("missing terminating delimiter")),
        }
    }
}

pub fn query_from_chain(id: u64, chain: &Chain, spec: &TaskSpec) -> Result<Query> {
    let vocab = spec.vocab()?;
    if chain.start >= spec.modulus || chain.steps.iter().any(|&(_, b)| b >= spec.modulus) {
        return Err(Error::TaskSpec("chain values must lie in 0..modulus".into()));
    }
    let value = chain.evaluate(spec.modulus);
    Ok(Query {
        id,
        prompt: chain.to_prompt(&vocab),
        answer: vec![vocab.digit(value), vocab.eot()],
        meta: QueryMeta {
            seed: id,
            modulus: spec.modulus,
            chain_length: chain.steps.len(),
        },
    })
}

/// Deterministic query for `(seed, spec)`.
pub fn generate_query(seed: u64, spec: &TaskSpec) -> Result<Query> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.modulus;
    let chain = Chain {
        start: rng.gen_range(0..m),
        steps: (0..spec.chain_length)
            .map(|_| (spec.ops[rng.gen_range(0..spec.ops.len())], rng.gen_range(0..m)))
            .collect(),
    };
    query_from_chain(seed, &chain, spec)
}

/// Ground-truth answer tokens (value digit followed by EOT) recomputed from
/// the prompt.
pub fn solve_reference(query: &Query, vocab: &Vocab) -> Result<Vec<TokenId>> {
    let (chain, _) = parse_prompt(&query.prompt, vocab)?;
    let value = chain.evaluate(query.meta.modulus);
    Ok(vec![vocab.digit(value), vocab.eot()])
}

/// First 1-based step whose most recent computed value equals the final
/// answer. `None` when the trajectory never reaches it.
pub fn solving_step(trajectory: &TokenTrajectory, query: &Query, vocab: &Vocab) -> Result<Option<usize>> {
    let reference = solve_reference(query, vocab)?;
    let target = reference[0];
    let mut register = None;
    for (i, span) in trajectory.steps.iter().enumerate() {
        if let Some(&d) = trajectory.tokens[span.range()]
            .iter()
            .rev()
            .find(|&&t| vocab.is_digit(t))
        {
            register = Some(d);
        }
        if register == Some(target) {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierResult {
    pub reward: u8,
    pub extracted_answer: Option<Vec<TokenId>>,
}

/// Exact-match check of the answer after the last ANSWER marker in the
/// summary, terminated by EOT.
pub fn verify(trajectory: &TokenTrajectory, query: &Query, vocab: &Vocab) -> VerifierResult {
    let summary = trajectory.summary();
    let extracted = summary.iter().rposition(|&t| t == vocab.answer()).and_then(|a| {
        let tail = &summary[a + 1..];
        tail.iter().position(|&t| t == vocab.eot()).map(|e| tail[..e].to_vec())
    });
    let reward = match &extracted {
        Some(ans) => u8::from(ans.as_slice() == strip_eot(&query.answer, vocab)),
        None => 0,
    };
    VerifierResult {
        reward,
        extracted_answer: extracted,
    }
}
