//! Checks on the recurrence: active-step gradients, detachment span,
//! graph size versus depth, depth consistency, include-rate sampling.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsm_core::model::{sample_include_prev_h, BlockVariant, Latents, ModelInput, Param, PosEncoding, Weights};
use rsm_core::tensor::cross_entropy;
use rsm_core::{ModelConfig, Real, Result, Rsm, Tape, Tensor};

use super::gradcheck::{check, GradFn, Precision};
use super::primitives::{Outcome, F32_STEP, F32_TOL, F64_STEP, F64_TOL};

pub const IGNORE: usize = 0;

/// d=8, D=2, L=2, S=16 with a one-position puzzle prefix.
pub fn tiny_config(variant: BlockVariant) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        seq_len: 16,
        puzzle_prefix_len: 1,
        num_puzzles: 3,
        hidden: 8,
        blocks: 2,
        heads: 2,
        block_variant: variant,
        pos_encoding: if variant == BlockVariant::Attention {
            PosEncoding::Rope
        } else {
            PosEncoding::Learned
        },
        h_cycles: 3,
        l_cycles: 2,
        ..ModelConfig::default()
    }
}

/// A model with every parameter (gains and puzzle rows included) randomized.
pub fn tiny_model(variant: BlockVariant, seed: u64) -> Rsm<f64> {
    let c = tiny_config(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::<f64>::init(&c, &mut rng);
    for p in &mut w.params {
        let name = p.spec.name.as_str();
        if name.contains("norm") {
            p.data = Arc::new(p.data.iter().map(|_| 1.0 + 0.3 * rng.random_range(-1.0..1.0)).collect());
        } else if name == "puzzle_emb" {
            p.data = Arc::new(p.data.iter().map(|_| 0.5 * rng.random_range(-1.0..1.0)).collect());
        }
    }
    Rsm::new(c, w).unwrap()
}

pub struct Batch {
    pub tokens: Vec<u32>,
    pub puzzle_ids: Vec<u32>,
    pub targets: Vec<usize>,
    pub size: usize,
}

impl Batch {
    pub fn random(c: &ModelConfig, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = size * c.seq_len;
        let v = c.vocab_size as u32;
        let tokens = (0..n).map(|_| rng.random_range(1..v)).collect();
        let targets = (0..n)
            .map(|i| {
                if i % 7 == 3 {
                    IGNORE
                } else {
                    rng.random_range(1..c.vocab_size)
                }
            })
            .collect();
        let puzzle_ids = (0..size)
            .map(|_| rng.random_range(0..c.num_puzzles.max(1) as u32))
            .collect();
        Batch {
            tokens,
            puzzle_ids,
            targets,
            size,
        }
    }

    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            tokens: &self.tokens,
            puzzle_ids: &self.puzzle_ids,
            batch: self.size,
        }
    }
}

/// The loss of the gradient window as a function of the parameters, with
/// the entry state held fixed.
pub struct ActiveWindow<'a> {
    pub model: &'a Rsm<f64>,
    pub boundary: Latents<f64>,
    pub steps: usize,
    pub batch: &'a Batch,
}

impl GradFn for ActiveWindow<'_> {
    fn eval<T: Real>(&self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let m = self.model.cast::<T>();
        let bound = m.bind_tensors(xs.to_vec())?;
        let e = bound.embed_input(self.batch.input())?;
        let mut z = Latents {
            z_h: self.boundary.z_h.cast(),
            z_l: self.boundary.z_l.cast(),
        };
        for _ in 0..self.steps {
            z = bound.outer_step(&z, &e, m.config().l_cycles)?;
        }
        cross_entropy(&bound.decode(&z.z_h)?, &self.batch.targets, IGNORE)
    }
}

fn param_tensors<T: Real>(params: &[Param<T>]) -> Vec<Tensor<T>> {
    params
        .iter()
        .map(|p| Tensor::from_arc(&p.spec.shape, Arc::clone(&p.data)).unwrap())
        .collect()
}

fn trainable(model: &Rsm<f64>) -> Vec<bool> {
    model.weights().params.iter().map(|p| p.spec.kind.trainable()).collect()
}

/// Gradients of the window loss recomputed on a fresh tape.
pub fn fresh_window_grads(w: &ActiveWindow<'_>) -> Vec<Vec<f64>> {
    let tape = Tape::<f64>::new();
    let leaves: Vec<Tensor<f64>> = param_tensors(&w.model.weights().params)
        .iter()
        .map(|t| tape.watch(t))
        .collect();
    let loss = w.eval(&leaves).unwrap();
    let grads = tape.backward(&loss).unwrap();
    leaves.iter().map(|l| grads.get(l).unwrap().to_vec()).collect()
}

/// Gradients of one training-mode forward.
pub fn train_grads(model: &Rsm<f64>, batch: &Batch, include: bool) -> (Vec<Option<Vec<f64>>>, Latents<f64>, usize) {
    let c = model.config();
    let fw = model
        .forward_train(batch.input(), c.h_cycles, c.l_cycles, include)
        .unwrap();
    let loss = cross_entropy(&fw.logits, &batch.targets, IGNORE).unwrap();
    let grads = fw.tape.backward(&loss).unwrap();
    let g = fw.params.iter().map(|p| grads.get(p).map(|s| s.to_vec())).collect();
    (g, fw.boundary, fw.executed_h - fw.grad_start)
}

/// Every outer step on one tape, cut exactly where the pseudocode rule
/// says: before each step `h < H - 1`, and before the last step unless
/// `include`.
pub fn literal_grads(model: &Rsm<f64>, batch: &Batch, include: bool) -> Vec<Option<Vec<f64>>> {
    let c = model.config();
    let h_total = c.h_cycles.max(2);
    let tape = Tape::new();
    let bound = model.bind(Some(&tape)).unwrap();
    let e = bound.embed_input(batch.input()).unwrap();
    let mut z = bound.init_latents(batch.size);
    for h in 0..h_total {
        if h < h_total - 1 || !include {
            z = z.stop_gradient();
        }
        z = bound.outer_step(&z, &e, c.l_cycles).unwrap();
    }
    let loss = cross_entropy(&bound.decode(&z.z_h).unwrap(), &batch.targets, IGNORE).unwrap();
    let grads = tape.backward(&loss).unwrap();
    bound
        .params()
        .iter()
        .map(|p| grads.get(p).map(|s| s.to_vec()))
        .collect()
}

fn f32_point(m: &Rsm<f64>) -> Rsm<f64> {
    m.cast::<f32>().cast::<f64>()
}

/// Finite differences against the tape on one active training step, for
/// both window lengths and both block variants.
pub fn active_step_gradcheck() -> Outcome {
    let mut worst32: f64 = 0.0;
    let mut worst64: f64 = 0.0;
    let mut ok = true;
    let mut failures = Vec::new();
    for (k, variant) in [BlockVariant::MlpT, BlockVariant::Attention].into_iter().enumerate() {
        let model = f32_point(&tiny_model(variant, 100 + k as u64));
        let batch = Batch::random(model.config(), 2, 200 + k as u64);
        for include in [false, true] {
            let fw = model
                .forward_train(batch.input(), model.config().h_cycles, model.config().l_cycles, include)
                .unwrap();
            let boundary = Latents {
                z_h: fw.boundary.z_h.cast::<f32>().cast::<f64>(),
                z_l: fw.boundary.z_l.cast::<f32>().cast::<f64>(),
            };
            let window = ActiveWindow {
                model: &model,
                boundary,
                steps: fw.executed_h - fw.grad_start,
                batch: &batch,
            };
            let xs = param_tensors(&model.weights().params);
            let r32 = check(&xs, Precision::F32, F32_STEP, F32_TOL, &window);
            let r64 = check(&xs, Precision::F64, F64_STEP, F64_TOL, &window);
            worst32 = worst32.max(r32.max_frobenius());
            worst64 = worst64.max(r64.max_frobenius());
            if !(r32.passes(F32_TOL) && r64.passes(F64_TOL)) {
                ok = false;
                let names: Vec<&str> = model.weights().params.iter().map(|p| p.spec.name.as_str()).collect();
                for (r, tag) in [(&r32, "f32"), (&r64, "f64")] {
                    for (i, w) in r.within.iter().enumerate() {
                        if *w < 0.95 {
                            failures.push(format!("{variant:?}/{include}/{tag}/{}: {:.3} within", names[i], w));
                        }
                    }
                }
            }
        }
    }
    (
        ok,
        format!(
            "active step: f32 rel {worst32:.2e} (tol {F32_TOL:.0e}), f64 rel {worst64:.2e} (tol {F64_TOL:.0e}){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join(", "))
            }
        ),
    )
}

fn compare(a: &[Option<Vec<f64>>], b: &[Vec<f64>], mask: &[bool]) -> (bool, f64) {
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for ((ga, gb), &m) in a.iter().zip(b).zip(mask) {
        if !m {
            continue;
        }
        let ga = ga.as_ref().expect("trainable parameter without gradient");
        for (x, y) in ga.iter().zip(gb) {
            exact &= x == y;
            worst = worst.max((x - y).abs());
        }
    }
    (exact, worst)
}

/// With `p_detach = 1` the training gradient equals that of a fresh
/// one-step forward from the recorded entry state; with `p_detach = 0`, a
/// fresh two-step forward. Both are also compared with the all-on-tape
/// pseudocode rendering.
pub fn detachment_equivalence() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for variant in [BlockVariant::MlpT, BlockVariant::Attention] {
        let mut model = tiny_model(variant, 300);
        for h in [2usize, 5] {
            model.set_depths(h, 2);
            let batch = Batch::random(model.config(), 3, 301);
            let mask = trainable(&model);
            for (p_detach, want_span) in [(1.0, 1usize), (0.0, 2usize)] {
                let include = sample_include_prev_h(&mut rng, p_detach);
                let (g, boundary, span) = train_grads(&model, &batch, include);
                ok &= span == want_span;
                let fresh = fresh_window_grads(&ActiveWindow {
                    model: &model,
                    boundary,
                    steps: want_span,
                    batch: &batch,
                });
                let (exact, diff) = compare(&g, &fresh, &mask);
                ok &= exact;
                let literal: Vec<Vec<f64>> = literal_grads(&model, &batch, include)
                    .into_iter()
                    .map(|x| x.unwrap_or_default())
                    .collect();
                let (lit_exact, lit_diff) = compare(&g, &literal, &mask);
                ok &= lit_exact;
                if !exact || !lit_exact {
                    notes.push(format!(
                        "{variant:?} H={h} p={p_detach}: fresh diff {diff:.1e}, literal diff {lit_diff:.1e}"
                    ));
                }
            }
        }
    }
    let detail = if notes.is_empty() {
        "span 1 at p=1, span 2 at p=0; gradients bit-identical to fresh replay and to the all-on-tape rule".to_string()
    } else {
        notes.join("; ")
    };
    (ok, detail)
}

/// Tape length of one training forward for each depth.
pub fn tape_lengths(variant: BlockVariant, include: bool, depths: &[usize]) -> Vec<usize> {
    let model = tiny_model(variant, 400);
    let batch = Batch::random(model.config(), 2, 401);
    depths
        .iter()
        .map(|&h| model.forward_train(batch.input(), h, 2, include).unwrap().tape.len())
        .collect()
}

pub fn constant_memory() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for variant in [BlockVariant::MlpT, BlockVariant::Attention] {
        for include in [false, true] {
            let lens = tape_lengths(variant, include, &[2, 8, 32]);
            ok &= lens.iter().all(|&n| n == lens[0]);
            parts.push(format!("{variant:?}/include={include}: {lens:?}"));
        }
    }
    (ok, format!("tape nodes at H=2,8,32: {}", parts.join(", ")))
}

/// `H = a` followed by `b` more steps equals `H = a + b`, bit for bit.
pub fn depth_consistency() -> Outcome {
    let mut ok = true;
    let mut cases = 0;
    for variant in [BlockVariant::MlpT, BlockVariant::Attention] {
        let model: Rsm<f32> = tiny_model(variant, 500).cast();
        let batch = Batch::random(model.config(), 2, 501);
        let input = batch.input();
        for a in [1usize, 2, 3] {
            for b in [1usize, 4] {
                let whole = model.forward_infer(input, a + b, 2, false).unwrap();
                let head = model.forward_infer(input, a, 2, false).unwrap();
                let tail = model.continue_from(input, &head.latents, b, 2).unwrap();
                let bound = model.bind(None).unwrap();
                let logits = bound.decode(&tail.z_h).unwrap();
                ok &= whole.latents.z_h.data() == tail.z_h.data()
                    && whole.latents.z_l.data() == tail.z_l.data()
                    && whole.logits.data() == logits.data();
                cases += 1;
            }
        }
    }
    (
        ok,
        format!("{cases} (a, b) splits including H=1, latents and logits bit-exact"),
    )
}

pub const BERNOULLI_DRAWS: usize = 100_000;

pub fn bernoulli_rate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let hits = (0..BERNOULLI_DRAWS)
        .filter(|_| sample_include_prev_h(&mut rng, 0.99))
        .count();
    let rate = hits as f64 / BERNOULLI_DRAWS as f64;
    (
        (0.007..=0.013).contains(&rate),
        format!("include rate {rate:.5} over {BERNOULLI_DRAWS} draws"),
    )
}
