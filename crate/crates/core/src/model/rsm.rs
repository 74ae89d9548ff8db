use std::sync::Arc;

use rand::Rng;

use super::config::{BlockVariant, ModelConfig, NormPlacement, PosEncoding};
use super::weights::{BlockLayout, Layout, MixerLayout, ParamKind, Weights};
use crate::error::{Result, RsmError};
use crate::tensor::{attention, rms_norm, swiglu_ffn, token_mix_ffn, Real, RopeTable, Tape, Tensor};

/// A batch of tokenized inputs.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `batch * seq_len` token ids, row-major.
    pub tokens: &'a [u32],
    /// One id per example; ignored when the model has no puzzle prefix.
    pub puzzle_ids: &'a [u32],
    pub batch: usize,
}

/// The two latent streams, each `[B, S_p + S, d]`.
#[derive(Debug, Clone)]
pub struct Latents<T: Real = f32> {
    pub z_h: Tensor<T>,
    pub z_l: Tensor<T>,
}

impl<T: Real> Latents<T> {
    pub fn detached(&self) -> Self {
        Latents {
            z_h: self.z_h.detached(),
            z_l: self.z_l.detached(),
        }
    }

    pub fn stop_gradient(&self) -> Self {
        Latents {
            z_h: self.z_h.stop_gradient(),
            z_l: self.z_l.stop_gradient(),
        }
    }
}

/// Whether the penultimate outer step stays inside the gradient window:
/// true with probability `1 - p_detach`.
pub fn sample_include_prev_h<R: Rng + ?Sized>(rng: &mut R, p_detach: f64) -> bool {
    rng.random::<f64>() >= p_detach
}

/// The recurrent model: configuration plus weights.
#[derive(Debug, Clone)]
pub struct Rsm<T: Real = f32> {
    config: ModelConfig,
    layout: Layout,
    weights: Weights<T>,
}

/// Weights bound as tensors for one forward computation, either as tape
/// leaves (trainable parameters only) or as constants.
pub struct Bound<'m, T: Real> {
    model: &'m Rsm<T>,
    params: Vec<Tensor<T>>,
    rope: Option<RopeTable<T>>,
    eps: T,
}

/// Result of a training-mode forward pass.
pub struct TrainForward<T: Real> {
    /// `[B, S, V]`, recorded on `tape`.
    pub logits: Tensor<T>,
    pub tape: Tape<T>,
    /// Bound parameters in declared order; look gradients up with these.
    pub params: Vec<Tensor<T>>,
    pub include_prev_h: bool,
    /// Outer steps executed (the requested depth clamped to at least 2).
    pub executed_h: usize,
    /// Index of the first outer step inside the gradient window.
    pub grad_start: usize,
    /// The detached state entering the gradient window.
    pub boundary: Latents<T>,
    pub final_latents: Latents<T>,
}

/// Result of an inference-mode forward pass.
pub struct InferOutput<T: Real> {
    pub logits: Tensor<T>,
    pub latents: Latents<T>,
    /// Argmax decode after each outer step, when requested.
    pub trace: Vec<Vec<u32>>,
}

impl<T: Real> Rsm<T> {
    pub fn new(config: ModelConfig, weights: Weights<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if weights.params.len() != layout.specs.len() {
            return Err(RsmError::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.specs.len(),
                weights.params.len()
            )));
        }
        for (p, spec) in weights.params.iter().zip(&layout.specs) {
            if p.spec.name != spec.name || p.spec.shape != spec.shape || p.data.len() != spec.numel() {
                return Err(RsmError::Config(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    p.spec.name, p.spec.shape, spec.name, spec.shape
                )));
            }
        }
        Ok(Rsm {
            config,
            layout,
            weights,
        })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config, rng);
        Self::new(config, weights)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights<T> {
        &mut self.weights
    }

    pub fn into_weights(self) -> Weights<T> {
        self.weights
    }

    /// Same model at another precision.
    pub fn cast<U: Real>(&self) -> Rsm<U> {
        Rsm {
            config: self.config.clone(),
            layout: self.layout.clone(),
            weights: self.weights.cast(),
        }
    }

    /// Depth overrides for run time; the weights do not depend on them.
    pub fn set_depths(&mut self, h_cycles: usize, l_cycles: usize) {
        self.config.h_cycles = h_cycles;
        self.config.l_cycles = l_cycles;
    }

    /// Binds every trainable parameter as a leaf of `tape`; with `None`
    /// all parameters are constants.
    pub fn bind(&self, tape: Option<&Tape<T>>) -> Result<Bound<'_, T>> {
        let mut params = Vec::with_capacity(self.weights.params.len());
        for p in &self.weights.params {
            let t = match tape {
                Some(tape) if p.spec.kind.trainable() => tape.leaf(&p.spec.shape, Arc::clone(&p.data))?,
                _ => Tensor::from_arc(&p.spec.shape, Arc::clone(&p.data))?,
            };
            params.push(t);
        }
        self.bind_tensors(params)
    }

    /// Binds caller-supplied tensors in place of the stored weights. They
    /// must follow the declared order and shapes.
    pub fn bind_tensors(&self, params: Vec<Tensor<T>>) -> Result<Bound<'_, T>> {
        if params.len() != self.layout.specs.len()
            || params
                .iter()
                .zip(&self.layout.specs)
                .any(|(t, s)| t.shape() != s.shape.as_slice())
        {
            return Err(RsmError::shape("bind", "parameter tensors do not match the layout"));
        }
        let rope = match (self.config.pos_encoding, self.config.block_variant) {
            (PosEncoding::Rope, BlockVariant::Attention) => {
                let positions: Vec<usize> = (0..self.config.total_len()).collect();
                Some(RopeTable::new(
                    &positions,
                    self.config.hidden / self.config.heads,
                    self.config.rope_base,
                )?)
            }
            _ => None,
        };
        Ok(Bound {
            model: self,
            params,
            rope,
            eps: T::lit(self.config.norm_eps),
        })
    }

    /// Training-mode pass at depth `h_cycles.max(2)`.
    ///
    /// Outer steps before the gradient window run without recording. The
    /// window is the last outer step, or the last two when
    /// `include_prev_h`; its entry state is cut from the graph.
    pub fn forward_train(
        &self,
        input: ModelInput<'_>,
        h_cycles: usize,
        l_cycles: usize,
        include_prev_h: bool,
    ) -> Result<TrainForward<T>> {
        let h = h_cycles.max(2);
        let window = if include_prev_h { 2 } else { 1 };
        let grad_start = h - window;

        let constant = self.bind(None)?;
        let e = constant.embed_input(input)?;
        let mut z = constant.init_latents(input.batch);
        for step in 0..grad_start {
            z = constant
                .outer_step(&z, &e, l_cycles)
                .map_err(|err| diverged(step, err))?;
        }
        let boundary = z.detached();

        let tape = Tape::new();
        let bound = self.bind(Some(&tape))?;
        let e = bound.embed_input(input)?;
        let mut z = boundary.clone();
        for step in grad_start..h {
            z = bound.outer_step(&z, &e, l_cycles).map_err(|err| diverged(step, err))?;
        }
        let logits = bound.decode(&z.z_h)?;
        Ok(TrainForward {
            logits,
            tape,
            params: bound.params,
            include_prev_h,
            executed_h: h,
            grad_start,
            boundary,
            final_latents: z.detached(),
        })
    }

    /// Inference-mode pass from the initial latents; nothing is recorded.
    pub fn forward_infer(
        &self,
        input: ModelInput<'_>,
        h_cycles: usize,
        l_cycles: usize,
        trace: bool,
    ) -> Result<InferOutput<T>> {
        let bound = self.bind(None)?;
        let e = bound.embed_input(input)?;
        let z = bound.init_latents(input.batch);
        let mut steps = Vec::new();
        let latents = bound.rollout(&z, &e, h_cycles, l_cycles, |_, z| {
            if trace {
                steps.push(bound.decode_argmax(&z.z_h)?);
            }
            Ok(true)
        })?;
        let logits = bound.decode(&latents.z_h)?;
        Ok(InferOutput {
            logits,
            latents,
            trace: steps,
        })
    }

    /// Runs `steps` more outer steps from `latents` without recording.
    pub fn continue_from(
        &self,
        input: ModelInput<'_>,
        latents: &Latents<T>,
        steps: usize,
        l_cycles: usize,
    ) -> Result<Latents<T>> {
        let bound = self.bind(None)?;
        let e = bound.embed_input(input)?;
        bound.rollout(latents, &e, steps, l_cycles, |_, _| Ok(true))
    }
}

fn diverged(step: usize, err: RsmError) -> RsmError {
    match err {
        RsmError::NonFinite { .. } => RsmError::Diverged {
            step,
            source: Box::new(err),
        },
        other => other,
    }
}

impl<'m, T: Real> Bound<'m, T> {
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn model(&self) -> &'m Rsm<T> {
        self.model
    }

    fn p(&self, i: usize) -> &Tensor<T> {
        &self.params[i]
    }

    /// `[B, S_p + S, d]`: puzzle prefix rows followed by `sqrt(d)`-scaled
    /// token embeddings, plus the learned position table if configured.
    pub fn embed_input(&self, input: ModelInput<'_>) -> Result<Tensor<T>> {
        let c = &self.model.config;
        let layout = &self.model.layout;
        let (b, s, d) = (input.batch, c.seq_len, c.hidden);
        if input.tokens.len() != b * s {
            return Err(RsmError::shape(
                "embed_input",
                format!("{} tokens for batch {b} of length {s}", input.tokens.len()),
            ));
        }
        let ids = checked_ids(input.tokens, c.vocab_size, "token")?;
        let tokens = Tensor::embedding(self.p(layout.token_emb), &ids)?
            .scale(T::from_usize(d).unwrap().sqrt())?
            .reshape(&[b, s, d])?;
        let mut e = match layout.puzzle_emb {
            Some(pi) => {
                if input.puzzle_ids.len() != b {
                    return Err(RsmError::shape(
                        "embed_input",
                        format!("{} puzzle ids for batch {b}", input.puzzle_ids.len()),
                    ));
                }
                let pids = checked_ids(input.puzzle_ids, c.num_puzzles, "puzzle")?;
                let table = self.p(pi).reshape(&[c.num_puzzles, c.puzzle_prefix_len * d])?;
                let prefix = Tensor::embedding(&table, &pids)?.reshape(&[b, c.puzzle_prefix_len, d])?;
                Tensor::concat(&[&prefix, &tokens], 1)?
            }
            None => tokens,
        };
        if let Some(pos) = layout.pos_emb {
            e = e.add_broadcast(self.p(pos))?;
        }
        Ok(e)
    }

    /// Both latent streams broadcast from their initial-state buffers.
    pub fn init_latents(&self, batch: usize) -> Latents<T> {
        let c = &self.model.config;
        let shape = [batch, c.total_len(), c.hidden];
        let fill = |buf: &Tensor<T>| {
            let rows = batch * c.total_len();
            let mut v = Vec::with_capacity(rows * c.hidden);
            for _ in 0..rows {
                v.extend_from_slice(buf.data());
            }
            Tensor::new(&shape, v).expect("latent shape")
        };
        Latents {
            z_h: fill(self.p(self.model.layout.h_init)),
            z_l: fill(self.p(self.model.layout.l_init)),
        }
    }

    /// The shared transition `F(state; injection)`: the block stack applied
    /// to `state + injection`.
    pub fn transition(&self, state: &Tensor<T>, injection: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = state.add(injection)?;
        for blk in &self.model.layout.blocks {
            x = self.block(blk, &x)?;
        }
        Ok(x)
    }

    fn block(&self, blk: &BlockLayout, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mixer = |x: &Tensor<T>| -> Result<Tensor<T>> {
            match blk.mixer {
                MixerLayout::Attention { qkv, out } => {
                    attention(x, self.p(qkv), self.p(out), self.model.config.heads, self.rope.as_ref())
                }
                MixerLayout::Token { gate, up, down } => token_mix_ffn(x, self.p(gate), self.p(up), self.p(down)),
            }
        };
        let channel = |x: &Tensor<T>| swiglu_ffn(x, self.p(blk.gate), self.p(blk.up), self.p(blk.down));
        let (n1, n2) = (self.p(blk.norm1), self.p(blk.norm2));
        match self.model.config.norm_placement {
            NormPlacement::Post => {
                let x = rms_norm(&x.add(&mixer(x)?)?, n1, self.eps)?;
                rms_norm(&x.add(&channel(&x)?)?, n2, self.eps)
            }
            NormPlacement::Pre => {
                let x = x.add(&mixer(&rms_norm(x, n1, self.eps)?)?)?;
                x.add(&channel(&rms_norm(&x, n2, self.eps)?)?)
            }
        }
    }

    /// `l_cycles` updates `z_L <- F(z_L; z_H + e)`.
    pub fn inner_cycle(&self, z: &Latents<T>, e: &Tensor<T>, l_cycles: usize) -> Result<Latents<T>> {
        let injection = z.z_h.add(e)?;
        let mut z_l = z.z_l.clone();
        for _ in 0..l_cycles {
            z_l = self.transition(&z_l, &injection)?;
        }
        Ok(Latents {
            z_h: z.z_h.clone(),
            z_l,
        })
    }

    /// One outer step: the inner cycle, then `z_H <- F(z_H; z_L)`.
    pub fn outer_step(&self, z: &Latents<T>, e: &Tensor<T>, l_cycles: usize) -> Result<Latents<T>> {
        let z = self.inner_cycle(z, e, l_cycles)?;
        let z_h = self.transition(&z.z_h, &z.z_l)?;
        Ok(Latents { z_h, z_l: z.z_l })
    }

    /// Runs up to `steps` outer steps. `on_step(h, z)` sees the state after
    /// step `h` (1-based) and may return `false` to stop early.
    pub fn rollout(
        &self,
        z: &Latents<T>,
        e: &Tensor<T>,
        steps: usize,
        l_cycles: usize,
        mut on_step: impl FnMut(usize, &Latents<T>) -> Result<bool>,
    ) -> Result<Latents<T>> {
        let mut z = z.clone();
        for step in 0..steps {
            z = self.outer_step(&z, e, l_cycles).map_err(|err| diverged(step, err))?;
            if !on_step(step + 1, &z)? {
                break;
            }
        }
        Ok(z)
    }

    /// Logits `[B, S, V]` from the non-prefix positions of `z_H`, through the
    /// token embedding table.
    pub fn decode(&self, z_h: &Tensor<T>) -> Result<Tensor<T>> {
        let c = &self.model.config;
        z_h.narrow(1, c.puzzle_prefix_len, c.seq_len)?
            .matmul_t(self.p(self.model.layout.token_emb))
    }

    pub fn decode_argmax(&self, z_h: &Tensor<T>) -> Result<Vec<u32>> {
        Ok(self.decode(z_h)?.argmax_last().into_iter().map(|i| i as u32).collect())
    }

    /// Parameters whose kind is `kind`, with their declared index.
    pub fn params_of_kind(&self, kind: ParamKind) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.params
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.model.layout.specs[*i].kind == kind)
    }
}

fn checked_ids(ids: &[u32], limit: usize, what: &str) -> Result<Vec<usize>> {
    ids.iter()
        .map(|&t| {
            let t = t as usize;
            if t < limit {
                Ok(t)
            } else {
                Err(RsmError::Data(format!("{what} id {t} out of range (< {limit})")))
            }
        })
        .collect()
}
