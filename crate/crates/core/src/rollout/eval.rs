use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{reliability_gate, run_rollout_batch, settled_at, steps_to_solve, GateVerdict, RolloutTrace, StepDecoder};
use crate::error::{Result, RsmError};
use crate::puzzles::{Dataset, TokenizedExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub h_test: usize,
    pub l_test: usize,
    /// Settle window, in unchanged comparisons.
    pub settle_k: usize,
    /// Instances per forward batch.
    pub batch_size: usize,
    /// Keep the full traces in the report.
    pub keep_traces: bool,
}

impl EvalOptions {
    pub fn new(h_test: usize, l_test: usize) -> Self {
        EvalOptions {
            h_test,
            l_test,
            settle_k: super::DEFAULT_SETTLE_K,
            batch_size: 64,
            keep_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRow {
    /// Position in the dataset.
    pub id: usize,
    pub puzzle_id: u32,
    /// Final output passes the verifier.
    pub solved: bool,
    pub steps_to_solve: Option<usize>,
    pub settled_at: Option<usize>,
    pub gate: GateVerdict,
    pub final_matches_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub instances: usize,
    pub h_test: usize,
    pub l_test: usize,
    pub settle_k: usize,
    /// Fraction whose final output equals the target token for token.
    pub exact_accuracy: f64,
    /// Fraction whose final output passes the verifier.
    pub solved_rate: f64,
    /// Over instances with a defined steps-to-solve.
    pub mean_steps_to_solve: Option<f64>,
    pub median_steps_to_solve: Option<f64>,
    pub settle_rate: f64,
    pub gate_accept_rate: f64,
    #[serde(skip)]
    pub rows: Vec<InstanceRow>,
    #[serde(skip)]
    pub traces: Option<Vec<RolloutTrace>>,
}

/// Rolls out every instance and aggregates the diagnostics. Batches run in
/// parallel; results are merged in dataset order, so the report does not
/// depend on scheduling.
pub fn evaluate<M: StepDecoder + ?Sized>(model: &M, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(RsmError::Data("evaluation set is empty".into()));
    }
    if opts.h_test == 0 || opts.l_test == 0 {
        return Err(RsmError::Usage("h_test and l_test must be at least 1".into()));
    }
    let verify = |ex: &TokenizedExample, out: &[u32]| dataset.prediction_ok(&ex.input, out);
    let refs: Vec<&TokenizedExample> = dataset.examples.iter().collect();
    let batches: Vec<Vec<RolloutTrace>> = refs
        .par_chunks(opts.batch_size.max(1))
        .map(|chunk| run_rollout_batch(model, chunk, opts.h_test, opts.l_test, verify))
        .collect::<Result<_>>()?;
    let traces: Vec<RolloutTrace> = batches.into_iter().flatten().collect();

    let rows: Vec<InstanceRow> = traces
        .iter()
        .zip(&dataset.examples)
        .enumerate()
        .map(|(id, (t, ex))| InstanceRow {
            id,
            puzzle_id: ex.puzzle_id,
            solved: t.valid.last().copied().unwrap_or(false),
            steps_to_solve: steps_to_solve(t),
            settled_at: settled_at(t, opts.settle_k),
            gate: reliability_gate(t, opts.settle_k),
            final_matches_target: t.final_output() == Some(ex.target.as_slice()),
        })
        .collect();

    let n = rows.len() as f64;
    let frac = |f: &dyn Fn(&InstanceRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let mut steps: Vec<usize> = rows.iter().filter_map(|r| r.steps_to_solve).collect();
    steps.sort_unstable();
    let mean = (!steps.is_empty()).then(|| steps.iter().sum::<usize>() as f64 / steps.len() as f64);
    let median = (!steps.is_empty()).then(|| {
        let m = steps.len() / 2;
        if steps.len() % 2 == 1 {
            steps[m] as f64
        } else {
            (steps[m - 1] + steps[m]) as f64 / 2.0
        }
    });
    Ok(EvalReport {
        instances: rows.len(),
        h_test: opts.h_test,
        l_test: opts.l_test,
        settle_k: opts.settle_k,
        exact_accuracy: frac(&|r| r.final_matches_target),
        solved_rate: frac(&|r| r.solved),
        mean_steps_to_solve: mean,
        median_steps_to_solve: median,
        settle_rate: frac(&|r| r.settled_at.is_some()),
        gate_accept_rate: frac(&|r| r.gate == GateVerdict::Accept),
        traces: opts.keep_traces.then_some(traces),
        rows,
    })
}

/// Writes `instances.jsonl` (one row per instance) and `summary.json`
/// into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RsmError::io(dir, e))?;
    let rows_path = dir.join("instances.jsonl");
    let io = |e| RsmError::io(&rows_path, e);
    let mut out = BufWriter::new(fs::File::create(&rows_path).map_err(io)?);
    for row in &report.rows {
        let line = serde_json::to_string(row).map_err(|e| RsmError::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(report).map_err(|e| RsmError::Data(e.to_string()))?;
    fs::write(&summary_path, text + "\n").map_err(|e| RsmError::io(&summary_path, e))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    step: usize,
    output: &'a [u32],
    valid: bool,
    changed: bool,
}

/// Writes one trace as JSONL, a line per outer step.
pub fn write_trace(trace: &RolloutTrace, path: &Path) -> Result<()> {
    let io = |e| RsmError::io(path, e);
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    for h in 0..trace.len() {
        let line = TraceLine {
            step: h + 1,
            output: &trace.outputs[h],
            valid: trace.valid[h],
            changed: trace.changed[h],
        };
        let s = serde_json::to_string(&line).map_err(|e| RsmError::Data(e.to_string()))?;
        writeln!(out, "{s}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// One file per instance under `dir`: `trace_NNNNN.jsonl`.
pub fn write_traces(traces: &[RolloutTrace], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RsmError::io(dir, e))?;
    for (i, t) in traces.iter().enumerate() {
        write_trace(t, &dir.join(format!("trace_{i:05}.jsonl")))?;
    }
    Ok(())
}
