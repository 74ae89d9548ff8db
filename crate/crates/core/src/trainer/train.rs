use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{clip_gradients, ema_update, AdamParams, OptimizerState};
use super::schedule::{lr_at, lr_transition_mult, CurriculumState};
use crate::error::{Result, RsmError};
use crate::model::{sample_include_prev_h, Checkpoint, ModelInput, NamedTensor, Rsm, Weights};
use crate::puzzles::{augment_sudoku, Dataset, Domain, TokenizedExample};
use crate::rng;
use crate::tensor::cross_entropy;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const STEP_STREAM: u64 = 0x5354_4550;
const AUGMENT_STREAM: u64 = 0x4155_474d;

/// Loss ignores this target id (padding).
pub const IGNORE_LABEL: u32 = 0;

/// A fixed-size mini-batch, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub puzzle_ids: Vec<u32>,
    pub size: usize,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a TokenizedExample>) -> Self {
        let mut b = Batch {
            tokens: Vec::new(),
            targets: Vec::new(),
            puzzle_ids: Vec::new(),
            size: 0,
        };
        for ex in examples {
            b.tokens.extend_from_slice(&ex.input);
            b.targets.extend_from_slice(&ex.target);
            b.puzzle_ids.push(ex.puzzle_id);
            b.size += 1;
        }
        b
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            tokens: &self.tokens,
            puzzle_ids: &self.puzzle_ids,
            batch: self.size,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Effective rate: schedule times transition multiplier.
    pub lr: f64,
    pub lr_mult: f64,
    /// Curriculum depth before the training floor of 2 is applied.
    #[serde(rename = "target_H")]
    pub target_h: u64,
    /// Executed outer depth.
    #[serde(rename = "active_H")]
    pub active_h: u64,
    #[serde(rename = "active_L")]
    pub active_l: u64,
    #[serde(rename = "include_prev_H")]
    pub include_prev_h: bool,
    pub transition: bool,
    pub wallclock: f64,
}

impl StepMetrics {
    /// Equality of everything except timing.
    pub fn same_run(&self, other: &StepMetrics) -> bool {
        let mut a = self.clone();
        a.wallclock = other.wallclock;
        a == *other
    }
}

/// Model, optimizer, EMA and curriculum for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Rsm<f32>,
    opt: OptimizerState,
    ema: Option<Weights<f32>>,
    curriculum: CurriculumState,
    config: TrainConfig,
    h0: usize,
    l0: usize,
    step: u64,
    elapsed: f64,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    /// Starts a run; the model's `h_cycles`/`l_cycles` are the base depths
    /// the curriculum grows from.
    pub fn new(model: Rsm<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let h0 = model.config().h_cycles;
        let l0 = model.config().l_cycles;
        let opt = OptimizerState::new(model.weights(), adam_params(&config));
        let ema = config.ema_decay.map(|_| model.weights().clone());
        let curriculum = CurriculumState::initial(h0, l0, &config);
        Ok(Trainer {
            model,
            opt,
            ema,
            curriculum,
            config,
            h0,
            l0,
            step: 0,
            elapsed: 0.0,
            order: None,
        })
    }

    pub fn model(&self) -> &Rsm<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn ema(&self) -> Option<&Weights<f32>> {
        self.ema.as_ref()
    }

    pub fn curriculum(&self) -> &CurriculumState {
        &self.curriculum
    }

    /// Index of the next step to run.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// The model at the current curriculum depths, with EMA weights when
    /// averaging is enabled.
    pub fn eval_model(&self) -> Result<Rsm<f32>> {
        let mut cfg = self.model.config().clone();
        cfg.h_cycles = self.curriculum.active_h.max(1);
        cfg.l_cycles = self.curriculum.active_l;
        let weights = self.ema.clone().unwrap_or_else(|| self.model.weights().clone());
        Rsm::new(cfg, weights)
    }

    /// Example indices for `step`: a seeded per-epoch shuffle cut into
    /// full batches; a trailing partial batch is dropped.
    pub fn batch_indices(&mut self, step: u64, dataset_len: usize) -> Result<Vec<usize>> {
        let b = self.config.batch_size;
        let per_epoch = (dataset_len / b) as u64;
        if per_epoch == 0 {
            return Err(RsmError::Config(format!(
                "batch_size {b} exceeds the {dataset_len} training examples"
            )));
        }
        let epoch = step / per_epoch;
        let slot = (step % per_epoch) as usize;
        if self
            .order
            .as_ref()
            .is_none_or(|(e, o)| *e != epoch || o.len() != dataset_len)
        {
            let mut order: Vec<usize> = (0..dataset_len).collect();
            order.shuffle(&mut rng::stream(self.config.seed ^ SHUFFLE_STREAM, epoch));
            self.order = Some((epoch, order));
        }
        let order = &self.order.as_ref().expect("order just set").1;
        Ok(order[slot * b..(slot + 1) * b].to_vec())
    }

    /// The batch for the next step, augmented when configured.
    pub fn next_batch(&mut self, dataset: &Dataset) -> Result<Batch> {
        let step = self.step;
        let idx = self.batch_indices(step, dataset.len())?;
        if self.config.augment && dataset.domain == Domain::Sudoku {
            let b = self.config.batch_size as u64;
            let augmented: Vec<TokenizedExample> = idx
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut r = rng::stream(self.config.seed ^ AUGMENT_STREAM, step * b + j as u64);
                    augment_sudoku(&dataset.examples[i], &mut r)
                })
                .collect();
            Ok(Batch::from_examples(&augmented))
        } else {
            Ok(Batch::from_examples(idx.iter().map(|&i| &dataset.examples[i])))
        }
    }

    /// One optimizer update on `batch`: resolve the curriculum, run the
    /// train-mode forward, terminal cross-entropy, backward, clip, AdamW at
    /// the scheduled rate, then the EMA.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let started = Instant::now();
        let step = self.step;
        let wrap = |e: RsmError| RsmError::TrainStep {
            step,
            source: Box::new(e),
        };

        let transition = step > 0 && self.curriculum.advance(step, self.h0, self.l0, &self.config);
        if transition {
            self.opt.on_depth_transition(self.config.optimizer_reset_scale);
        }
        let (h, l) = (self.curriculum.active_h, self.curriculum.active_l);
        let include = sample_include_prev_h(
            &mut rng::stream(self.config.seed ^ STEP_STREAM, step),
            self.config.p_detach,
        );

        let targets: Vec<usize> = batch.targets.iter().map(|&t| t as usize).collect();
        let (loss, executed_h, mut grads) = {
            let fw = self.model.forward_train(batch.input(), h, l, include).map_err(wrap)?;
            let loss = cross_entropy(&fw.logits, &targets, IGNORE_LABEL as usize).map_err(wrap)?;
            let mut g = fw.tape.backward(&loss).map_err(wrap)?;
            let grads: Vec<Option<Vec<f32>>> = self
                .model
                .weights()
                .params
                .iter()
                .zip(&fw.params)
                .map(|(p, t)| if p.spec.kind.trainable() { g.take(t) } else { None })
                .collect();
            (loss.item() as f64, fw.executed_h, grads)
        };
        if !loss.is_finite() {
            return Err(wrap(RsmError::NonFinite { op: "cross_entropy" }));
        }

        let grad_norm = clip_gradients(&mut grads, self.config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(wrap(RsmError::NonFinite { op: "backward" }));
        }
        let lr_mult = lr_transition_mult(step, &self.curriculum, &self.config);
        let lr = lr_at(step + 1, &self.config) * lr_mult;
        let rows: BTreeSet<usize> = batch.puzzle_ids.iter().map(|&p| p as usize).collect();
        self.opt.step(self.model.weights_mut(), &grads, lr, &rows);
        if let (Some(ema), Some(decay)) = (self.ema.as_mut(), self.config.ema_decay) {
            ema_update(ema, self.model.weights(), decay);
        }

        self.step += 1;
        self.elapsed += started.elapsed().as_secs_f64();
        Ok(StepMetrics {
            step,
            loss,
            grad_norm,
            lr,
            lr_mult,
            target_h: h as u64,
            active_h: executed_h as u64,
            active_l: l as u64,
            include_prev_h: include,
            transition,
            wallclock: self.elapsed,
        })
    }

    /// Raw weights plus optimizer and curriculum state. The stored model
    /// depths are the current active depths.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut model = self.model.clone();
        model.set_depths(self.curriculum.active_h.max(1), self.curriculum.active_l);
        let mut ck = model.to_checkpoint();
        ck.set_header("train.step", self.step);
        ck.set_header("train.h0", self.h0);
        ck.set_header("train.l0", self.l0);
        ck.set_header("train.active_h", self.curriculum.active_h);
        ck.set_header("train.active_l", self.curriculum.active_l);
        ck.set_header(
            "train.last_transition",
            self.curriculum
                .last_transition_step
                .map_or_else(|| "none".to_string(), |s| s.to_string()),
        );
        ck.set_header("train.opt_t", self.opt.t);
        ck.set_header("train.elapsed", format!("{:?}", self.elapsed));
        for (k, v) in self.config.to_pairs() {
            ck.set_header(format!("train.config.{k}"), v);
        }
        for (i, p) in self.model.weights().params.iter().enumerate() {
            if !p.spec.kind.trainable() {
                continue;
            }
            for (prefix, buf) in [("opt.m.", &self.opt.m[i]), ("opt.v.", &self.opt.v[i])] {
                ck.tensors.push(NamedTensor {
                    name: format!("{prefix}{}", p.spec.name),
                    shape: p.spec.shape.clone(),
                    data: buf.clone(),
                });
            }
        }
        ck
    }

    /// Averaged weights as a plain model checkpoint.
    pub fn ema_checkpoint(&self) -> Option<Checkpoint> {
        let model = self.eval_model().ok()?;
        self.ema.as_ref()?;
        let mut ck = model.to_checkpoint();
        ck.set_header("train.step", self.step);
        Some(ck)
    }

    /// Writes `path` and, with EMA enabled, `path.ema`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)?;
        if let Some(ck) = self.ema_checkpoint() {
            ck.save(&ema_path(path))?;
        }
        Ok(())
    }

    /// Restores a run written by [`Trainer::save`], continuing under
    /// `config` (which should match the original for a faithful replay).
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ck = Checkpoint::load(path)?;
        let get = |key: &str| -> Result<String> {
            ck.header_value(key)
                .map(str::to_string)
                .ok_or_else(|| RsmError::Checkpoint(format!("{}: missing `{key}`", path.display())))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|e| RsmError::Checkpoint(format!("{}: `{key}`: {e}", path.display())))
        };
        let mut model = Rsm::<f32>::from_checkpoint(&ck, None)?;
        let h0 = num("train.h0")? as usize;
        let l0 = num("train.l0")? as usize;
        model.set_depths(h0, l0);
        let mut opt = OptimizerState::new(model.weights(), adam_params(&config));
        opt.t = num("train.opt_t")?;
        for (i, p) in model.weights().params.iter().enumerate() {
            if !p.spec.kind.trainable() {
                continue;
            }
            for (prefix, slot) in [("opt.m.", &mut opt.m[i]), ("opt.v.", &mut opt.v[i])] {
                let name = format!("{prefix}{}", p.spec.name);
                let t = ck
                    .tensor(&name)
                    .ok_or_else(|| RsmError::Checkpoint(format!("{}: missing `{name}`", path.display())))?;
                if t.data.len() != slot.len() {
                    return Err(RsmError::Checkpoint(format!(
                        "{}: `{name}` has the wrong size",
                        path.display()
                    )));
                }
                slot.copy_from_slice(&t.data);
            }
        }
        let last = get("train.last_transition")?;
        let curriculum =
            CurriculumState {
                active_h: num("train.active_h")? as usize,
                active_l: num("train.active_l")? as usize,
                last_transition_step: if last == "none" {
                    None
                } else {
                    Some(last.parse().map_err(|e| {
                        RsmError::Checkpoint(format!("{}: `train.last_transition`: {e}", path.display()))
                    })?)
                },
            };
        let ema = match config.ema_decay {
            None => None,
            Some(_) => {
                let ema_file = ema_path(path);
                let ema_model = Rsm::<f32>::load(&ema_file, Some(model.config()))?;
                Some(ema_model.into_weights())
            }
        };
        let elapsed = get("train.elapsed")?.parse().unwrap_or(0.0);
        Ok(Trainer {
            model,
            opt,
            ema,
            curriculum,
            config,
            h0,
            l0,
            step: num("train.step")?,
            elapsed,
            order: None,
        })
    }
}

fn adam_params(c: &TrainConfig) -> AdamParams {
    AdamParams {
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.adam_eps,
        weight_decay: c.weight_decay,
        sparse_lr_mult: c.puzzle_emb_lr_mult,
    }
}

/// `model.rsm` -> `model.rsm.ema`.
pub fn ema_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".ema");
    path.with_file_name(name)
}

/// Where [`run_training`] writes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for `metrics.jsonl`, periodic `step_NNNNNN.rsm` files and
    /// `final.rsm`; nothing is written without it.
    pub out_dir: Option<PathBuf>,
    /// Checked between steps; when set, the loop stops and the final
    /// checkpoint is still written.
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub metrics: Vec<StepMetrics>,
    pub interrupted: bool,
    pub final_checkpoint: Option<PathBuf>,
}

/// Runs `trainer` to `total_steps` over `dataset`. Resumed trainers pick
/// up at their stored step; metrics lines from later steps are discarded
/// so the log matches the replay.
pub fn run_training(dataset: &Dataset, trainer: &mut Trainer, opts: &RunOptions) -> Result<TrainSummary> {
    if dataset.is_empty() {
        return Err(RsmError::Data("training set is empty".into()));
    }
    let cfg = trainer.model().config();
    if dataset.seq_len() != cfg.seq_len || dataset.vocab_size() > cfg.vocab_size {
        return Err(RsmError::Config(format!(
            "dataset (seq_len {}, vocab {}) does not fit the model (seq_len {}, vocab {})",
            dataset.seq_len(),
            dataset.vocab_size(),
            cfg.seq_len,
            cfg.vocab_size
        )));
    }
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| RsmError::io(dir, e))?;
            Some(MetricsLog::open(&dir.join("metrics.jsonl"), trainer.step())?)
        }
        None => None,
    };

    let mut metrics = Vec::new();
    let mut interrupted = false;
    while !trainer.finished() {
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let batch = trainer.next_batch(dataset)?;
        let m = trainer.train_step(&batch)?;
        if let Some(log) = log.as_mut() {
            log.append(&m)?;
        }
        metrics.push(m);
        let every = trainer.config().checkpoint_every;
        if let Some(dir) = &opts.out_dir {
            if every > 0 && trainer.step().is_multiple_of(every) && !trainer.finished() {
                trainer.save(&dir.join(format!("step_{:06}.rsm", trainer.step())))?;
            }
        }
    }
    let final_checkpoint = match &opts.out_dir {
        Some(dir) => {
            let path = dir.join("final.rsm");
            trainer.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainSummary {
        metrics,
        interrupted,
        final_checkpoint,
    })
}

struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    fn open(path: &Path, keep_before: u64) -> Result<Self> {
        let io = |e| RsmError::io(path, e);
        let mut kept = Vec::new();
        if path.exists() && keep_before > 0 {
            let f = File::open(path).map_err(io)?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io)?;
                match serde_json::from_str::<StepMetrics>(&line) {
                    Ok(m) if m.step < keep_before => kept.push(line),
                    _ => {}
                }
            }
        }
        let mut f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io)?;
        for line in &kept {
            writeln!(f, "{line}").map_err(io)?;
        }
        Ok(MetricsLog {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    fn append(&mut self, m: &StepMetrics) -> Result<()> {
        let line = serde_json::to_string(m).map_err(|e| RsmError::Data(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| RsmError::io(&self.path, e))
    }
}
