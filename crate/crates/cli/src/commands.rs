use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rsm_core::model::ModelConfig;
use rsm_core::puzzles::{generate_maze_set, generate_sudoku_set, import_sudoku_csv, load_dataset, save_dataset};
use rsm_core::rollout::{
    evaluate, reliability_gate, run_rollout, settled_at, steps_to_solve, write_report, write_trace, write_traces,
    EvalOptions,
};
use rsm_core::trainer::{ema_path, run_training, RunConfig, RunOptions, Trainer};
use rsm_core::{rng, Dataset, Domain, Result, Rsm, RsmError};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{DomainArg, EvalArgs, GenDataArgs, TraceArgs, TrainArgs};

const INIT_STREAM: u64 = 0x494e_4954;

fn domain_of(d: DomainArg) -> Domain {
    match d {
        DomainArg::Sudoku => Domain::Sudoku,
        DomainArg::Maze => Domain::Maze,
    }
}

/// A dataset file, or a directory holding `data.jsonl`.
fn resolve_data(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("data.jsonl")
    } else {
        path.to_path_buf()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RsmError::Data(e.to_string()))? + "\n";
    fs::write(path, text).map_err(|e| RsmError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let domain = domain_of(a.domain);
    if a.count == Some(0) {
        return Err(RsmError::Usage("--count must be at least 1".into()));
    }
    let mut config = vec![
        ("domain".to_string(), domain.to_string()),
        ("seed".to_string(), a.seed.to_string()),
    ];
    let dataset = match (&a.import_csv, domain) {
        (Some(csv), Domain::Sudoku) => {
            config.push(("import_csv".into(), csv.display().to_string()));
            import_sudoku_csv(csv)?
        }
        (Some(_), Domain::Maze) => return Err(RsmError::Usage("--import-csv is only for sudoku".into())),
        (None, Domain::Sudoku) => {
            let count = a.count.unwrap_or(0);
            config.extend([
                ("count".into(), count.to_string()),
                ("clues".into(), a.clues.to_string()),
            ]);
            generate_sudoku_set(a.seed, count, a.clues, a.id_offset).map_err(usage)?
        }
        (None, Domain::Maze) => {
            let count = a.count.unwrap_or(0);
            config.extend([
                ("count".into(), count.to_string()),
                ("width".into(), a.width.to_string()),
                ("height".into(), a.height.to_string()),
            ]);
            generate_maze_set(a.seed, count, a.width, a.height, a.id_offset).map_err(usage)?
        }
    };
    config.push(("id_offset".into(), a.id_offset.to_string()));
    let mut manifest = RunManifest::start("gen-data", &a.out, config, Some(a.seed))?;
    let passed = dataset.examples.iter().filter(|ex| dataset.target_ok(ex)).count();
    let path = a.out.join("data.jsonl");
    save_dataset(&path, &dataset)?;
    manifest.output(&path);
    println!(
        "wrote {} {} examples to {} ({}x{}); verifier: {passed}/{} targets pass",
        dataset.len(),
        domain,
        path.display(),
        dataset.width,
        dataset.height,
        dataset.len()
    );
    if passed != dataset.len() {
        manifest.finish("failed")?;
        return Err(RsmError::Data(format!(
            "{} targets fail their verifier",
            dataset.len() - passed
        )));
    }
    manifest.finish("ok")
}

/// Bad generator knobs surface as configuration errors; report them as
/// usage errors.
fn usage(e: RsmError) -> RsmError {
    match e {
        RsmError::Config(m) => RsmError::Usage(m),
        other => other,
    }
}

fn model_defaults(ds: &Dataset) -> ModelConfig {
    ModelConfig {
        vocab_size: ds.vocab_size(),
        seq_len: ds.seq_len(),
        num_puzzles: ds.num_puzzles(),
        ..ModelConfig::default()
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| RsmError::Io {
        path: a.config.clone(),
        source: e,
    })?;
    let data_path = resolve_data(&a.data);
    let dataset = load_dataset(&data_path)?;
    let rc = RunConfig::parse(&text, &model_defaults(&dataset))
        .map_err(|e| RsmError::Config(format!("{}: {e}", a.config.display())))?;

    let mut config = rc.to_pairs();
    config.push(("data".into(), data_path.display().to_string()));
    if let Some(r) = &a.resume {
        config.push(("resume".into(), r.display().to_string()));
    }
    let mut manifest = RunManifest::start("train", &a.out, config, Some(rc.train.seed))?;
    let snapshot = a.out.join("config.txt");
    fs::write(&snapshot, rc.to_text()).map_err(|e| RsmError::Io {
        path: snapshot.clone(),
        source: e,
    })?;
    manifest.output(&snapshot);

    let mut trainer = match &a.resume {
        Some(path) => {
            let t = Trainer::resume(path, rc.train.clone())?;
            t.model()
                .config()
                .compatible_with(&rc.model)
                .map_err(|d| RsmError::Config(format!("checkpoint does not match the config: {d}")))?;
            println!("resuming at step {}", t.step());
            t
        }
        None => {
            let model = Rsm::init(rc.model.clone(), &mut rng::stream(rc.train.seed, INIT_STREAM))?;
            Trainer::new(model, rc.train.clone())?
        }
    };

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }
    let opts = RunOptions {
        out_dir: Some(a.out.clone()),
        stop: Some(stop),
    };
    let outcome = run_training(&dataset, &mut trainer, &opts);
    for entry in fs::read_dir(&a.out).map_err(|e| RsmError::Io {
        path: a.out.clone(),
        source: e,
    })? {
        let path = entry
            .map_err(|e| RsmError::Io {
                path: a.out.clone(),
                source: e,
            })?
            .path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name == "metrics.jsonl" || name.ends_with(".rsm") || name.ends_with(".rsm.ema") {
            manifest.output(&path);
        }
    }
    let summary = match outcome {
        Ok(s) => s,
        Err(e) => {
            manifest.finish("failed")?;
            return Err(e);
        }
    };
    if let Some(last) = summary.metrics.last() {
        println!(
            "step {} loss {:.4} active_H {} active_L {} ({:.1}s)",
            last.step, last.loss, last.active_h, last.active_l, last.wallclock
        );
    }
    if let Some(path) = &summary.final_checkpoint {
        println!("final checkpoint: {}", path.display());
        if trainer.ema().is_some() {
            println!("averaged weights: {}", ema_path(path).display());
        }
    }
    if summary.interrupted {
        println!("interrupted at step {}", trainer.step());
        manifest.finish("interrupted")
    } else {
        manifest.finish("ok")
    }
}

fn load_for(checkpoint: &Path, data: &Path) -> Result<(Rsm<f32>, Dataset)> {
    let model = Rsm::<f32>::load(checkpoint, None)?;
    let dataset = load_dataset(&resolve_data(data))?;
    let c = model.config();
    if c.seq_len != dataset.seq_len() || c.vocab_size != dataset.vocab_size() {
        return Err(RsmError::Usage(format!(
            "checkpoint expects seq_len {} / vocab {}, but the {} dataset has seq_len {} / vocab {}",
            c.seq_len,
            c.vocab_size,
            dataset.domain,
            dataset.seq_len(),
            dataset.vocab_size()
        )));
    }
    Ok((model, dataset))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, dataset) = load_for(&a.checkpoint, &a.data)?;
    let opts = EvalOptions {
        h_test: a.h_test.unwrap_or(model.config().h_cycles),
        l_test: a.l_test.unwrap_or(model.config().l_cycles),
        settle_k: a.k,
        batch_size: a.batch_size,
        keep_traces: a.traces,
    };
    if opts.h_test == 0 || opts.l_test == 0 || opts.settle_k == 0 {
        return Err(RsmError::Usage("--h-test, --l-test and -k must be at least 1".into()));
    }
    let config = vec![
        ("checkpoint".to_string(), a.checkpoint.display().to_string()),
        ("data".to_string(), a.data.display().to_string()),
        ("h_test".to_string(), opts.h_test.to_string()),
        ("l_test".to_string(), opts.l_test.to_string()),
        ("k".to_string(), opts.settle_k.to_string()),
    ];
    let mut manifest = RunManifest::start("eval", &a.out, config, None)?;
    let report = evaluate(&model, &dataset, &opts)?;
    write_report(&report, &a.out)?;
    manifest.output(&a.out.join("instances.jsonl"));
    manifest.output(&a.out.join("summary.json"));
    if let Some(traces) = &report.traces {
        let dir = a.out.join("traces");
        write_traces(traces, &dir)?;
        manifest.output(&dir);
    }
    println!(
        "H_test {} L_test {}: exact {:.4} solved {:.4} settled {:.4} gate {:.4} steps-to-solve mean {} median {}",
        report.h_test,
        report.l_test,
        report.exact_accuracy,
        report.solved_rate,
        report.settle_rate,
        report.gate_accept_rate,
        report.mean_steps_to_solve.map_or("-".into(), |v| format!("{v:.2}")),
        report.median_steps_to_solve.map_or("-".into(), |v| format!("{v:.1}")),
    );
    manifest.finish("ok")
}

#[derive(Serialize)]
struct TraceSummary {
    index: usize,
    puzzle_id: u32,
    h_test: usize,
    l_test: usize,
    settle_k: usize,
    steps_to_solve: Option<usize>,
    settled_at: Option<usize>,
    gate: rsm_core::rollout::GateVerdict,
    final_matches_target: bool,
}

pub fn trace(a: TraceArgs) -> Result<()> {
    let (model, dataset) = load_for(&a.checkpoint, &a.data)?;
    let index = match (a.index, a.puzzle_id) {
        (Some(i), None) if i < dataset.len() => i,
        (Some(i), None) => {
            return Err(RsmError::Usage(format!(
                "--index {i} is out of range ({} instances)",
                dataset.len()
            )))
        }
        (None, Some(id)) => dataset
            .examples
            .iter()
            .position(|e| e.puzzle_id == id)
            .ok_or_else(|| RsmError::Usage(format!("no instance with puzzle id {id}")))?,
        _ => return Err(RsmError::Usage("select an instance with --index or --puzzle-id".into())),
    };
    let h_test = a.h_test.unwrap_or(model.config().h_cycles);
    let l_test = a.l_test.unwrap_or(model.config().l_cycles);
    if h_test == 0 || l_test == 0 || a.k == 0 {
        return Err(RsmError::Usage("--h-test, --l-test and -k must be at least 1".into()));
    }
    let config = vec![
        ("checkpoint".to_string(), a.checkpoint.display().to_string()),
        ("data".to_string(), a.data.display().to_string()),
        ("index".to_string(), index.to_string()),
        ("h_test".to_string(), h_test.to_string()),
        ("l_test".to_string(), l_test.to_string()),
        ("k".to_string(), a.k.to_string()),
    ];
    let mut manifest = RunManifest::start("trace", &a.out, config, None)?;
    let ex = &dataset.examples[index];
    let t = run_rollout(&model, ex, h_test, l_test, |ex, o| dataset.prediction_ok(&ex.input, o))?;
    let trace_path = a.out.join("trace.jsonl");
    write_trace(&t, &trace_path)?;
    manifest.output(&trace_path);
    let summary = TraceSummary {
        index,
        puzzle_id: ex.puzzle_id,
        h_test,
        l_test,
        settle_k: a.k,
        steps_to_solve: steps_to_solve(&t),
        settled_at: settled_at(&t, a.k),
        gate: reliability_gate(&t, a.k),
        final_matches_target: t.final_output() == Some(ex.target.as_slice()),
    };
    let summary_path = a.out.join("trace_summary.json");
    write_json(&summary_path, &summary)?;
    manifest.output(&summary_path);
    println!(
        "instance {index}: steps_to_solve {} settled_at {} gate {:?}",
        summary.steps_to_solve.map_or("-".into(), |v| v.to_string()),
        summary.settled_at.map_or("-".into(), |v| v.to_string()),
        summary.gate
    );
    manifest.finish("ok")
}
