//! Long inference rollouts and convergence diagnostics.
//!
//! A rollout records the decoded grid after every outer step together with
//! the domain verifier's verdict. From a trace we read off when the output
//! stopped changing ([`settled_at`]), when it became a verified answer that
//! never changed again ([`steps_to_solve`]) and whether it clears the
//! settled-and-valid [`reliability_gate`].

mod eval;
pub use eval::{evaluate, write_report, write_trace, write_traces, EvalOptions, EvalReport, InstanceRow};

use serde::Serialize;

use crate::error::Result;
use crate::model::{ModelInput, Rsm};
use crate::puzzles::TokenizedExample;
use crate::tensor::Real;

/// Default number of consecutive unchanged comparisons that counts as
/// settled.
pub const DEFAULT_SETTLE_K: usize = 3;

/// Decoded outputs of one instance, one entry per outer step (step `h` is
/// at index `h - 1`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RolloutTrace {
    pub outputs: Vec<Vec<u32>>,
    /// Verifier verdict on each output.
    pub valid: Vec<bool>,
    /// Whether each output differs from the one before (false at step 1).
    pub changed: Vec<bool>,
}

impl RolloutTrace {
    /// Builds a trace, judging each output with `verify`.
    pub fn from_outputs(outputs: Vec<Vec<u32>>, verify: impl Fn(&[u32]) -> bool) -> Self {
        let valid = outputs.iter().map(|o| verify(o)).collect();
        let changed = (0..outputs.len())
            .map(|i| i > 0 && outputs[i] != outputs[i - 1])
            .collect();
        RolloutTrace {
            outputs,
            valid,
            changed,
        }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn final_output(&self) -> Option<&[u32]> {
        self.outputs.last().map(Vec::as_slice)
    }

    /// Output at 1-based step `h`.
    pub fn at(&self, h: usize) -> &[u32] {
        &self.outputs[h - 1]
    }
}

/// Anything that produces a decoded output per outer step for a batch.
pub trait StepDecoder: Sync {
    fn seq_len(&self) -> usize;

    /// Decoded outputs after each of `h_test` outer steps, each flattened
    /// over the batch.
    fn decode_steps(&self, examples: &[&TokenizedExample], h_test: usize, l_test: usize) -> Result<Vec<Vec<u32>>>;
}

impl<T: Real> StepDecoder for Rsm<T> {
    fn seq_len(&self) -> usize {
        self.config().seq_len
    }

    /// Only the current latents and the decoded outputs are kept, so
    /// memory does not grow with depth beyond the trace itself.
    fn decode_steps(&self, examples: &[&TokenizedExample], h_test: usize, l_test: usize) -> Result<Vec<Vec<u32>>> {
        let tokens: Vec<u32> = examples.iter().flat_map(|e| e.input.iter().copied()).collect();
        let ids: Vec<u32> = examples.iter().map(|e| e.puzzle_id).collect();
        let input = ModelInput {
            tokens: &tokens,
            puzzle_ids: &ids,
            batch: examples.len(),
        };
        Ok(self.forward_infer(input, h_test, l_test, true)?.trace)
    }
}

/// Rollouts for a batch of examples at `h_test` outer steps of `l_test`
/// inner updates.
pub fn run_rollout_batch<M: StepDecoder + ?Sized>(
    model: &M,
    examples: &[&TokenizedExample],
    h_test: usize,
    l_test: usize,
    verify: impl Fn(&TokenizedExample, &[u32]) -> bool,
) -> Result<Vec<RolloutTrace>> {
    let seq = model.seq_len();
    let steps = model.decode_steps(examples, h_test, l_test)?;
    let mut per_instance: Vec<Vec<Vec<u32>>> = vec![Vec::with_capacity(h_test); examples.len()];
    for step in steps {
        for (i, row) in step.chunks(seq).enumerate() {
            per_instance[i].push(row.to_vec());
        }
    }
    Ok(per_instance
        .into_iter()
        .zip(examples)
        .map(|(outputs, ex)| RolloutTrace::from_outputs(outputs, |o| verify(ex, o)))
        .collect())
}

/// Single-instance rollout.
pub fn run_rollout<M: StepDecoder + ?Sized>(
    model: &M,
    example: &TokenizedExample,
    h_test: usize,
    l_test: usize,
    verify: impl Fn(&TokenizedExample, &[u32]) -> bool,
) -> Result<RolloutTrace> {
    Ok(run_rollout_batch(model, &[example], h_test, l_test, verify)?.remove(0))
}

/// First step whose output passes the verifier and stays identical for
/// the rest of the trace.
pub fn steps_to_solve(trace: &RolloutTrace) -> Option<usize> {
    let n = trace.len();
    if n == 0 || !trace.valid[n - 1] {
        return None;
    }
    let mut h = n;
    while h > 1 && !trace.changed[h - 1] && trace.valid[h - 2] {
        h -= 1;
    }
    Some(h)
}

/// First step `h` with `k` consecutive unchanged comparisons after it:
/// outputs `h, h+1, ..., h+k` all equal.
pub fn settled_at(trace: &RolloutTrace, k: usize) -> Option<usize> {
    let k = k.max(1);
    let mut run = 0;
    for idx in 1..trace.len() {
        if trace.changed[idx] {
            run = 0;
        } else {
            run += 1;
            if run == k {
                return Some(idx + 1 - k);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVerdict {
    Accept,
    RejectNotSettled,
    RejectSettledInvalid,
}

/// Accepts when the trace settles and the settled output passes the
/// verifier.
pub fn reliability_gate(trace: &RolloutTrace, k: usize) -> GateVerdict {
    match settled_at(trace, k) {
        None => GateVerdict::RejectNotSettled,
        Some(h) if trace.valid[h - 1] => GateVerdict::Accept,
        Some(_) => GateVerdict::RejectSettledInvalid,
    }
}
