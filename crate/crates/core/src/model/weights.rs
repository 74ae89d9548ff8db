use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BlockVariant, InitState, ModelConfig, PosEncoding};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Ordinary trainable matrix: dense updates, weight decay.
    Matrix,
    /// Trainable norm gain: dense updates, no weight decay.
    Gain,
    /// Trainable table updated only at the rows a batch touched.
    SparseRows,
    /// Fixed buffer (initial latent states); never updated.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Embeddings,
    Blocks,
    Buffers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub group: ParamGroup,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MixerLayout {
    Attention { qkv: usize, out: usize },
    Token { gate: usize, up: usize, down: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub mixer: MixerLayout,
    pub norm1: usize,
    pub gate: usize,
    pub up: usize,
    pub down: usize,
    pub norm2: usize,
}

/// Indices into the declared parameter list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub token_emb: usize,
    pub puzzle_emb: Option<usize>,
    pub pos_emb: Option<usize>,
    pub h_init: usize,
    pub l_init: usize,
    pub blocks: Vec<BlockLayout>,
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, kind, group| {
            specs.push(ParamSpec {
                name,
                shape,
                kind,
                group,
            });
            specs.len() - 1
        };
        let d = c.hidden;
        let s_tot = c.total_len();
        let token_emb = add(
            "token_emb".into(),
            vec![c.vocab_size, d],
            ParamKind::Matrix,
            ParamGroup::Embeddings,
        );
        let puzzle_emb = (c.puzzle_prefix_len > 0).then(|| {
            add(
                "puzzle_emb".into(),
                vec![c.num_puzzles, c.puzzle_prefix_len, d],
                ParamKind::SparseRows,
                ParamGroup::Embeddings,
            )
        });
        let pos_emb = (c.pos_encoding == PosEncoding::Learned).then(|| {
            add(
                "pos_emb".into(),
                vec![s_tot, d],
                ParamKind::Matrix,
                ParamGroup::Embeddings,
            )
        });
        let h_init = add("h_init".into(), vec![d], ParamKind::Buffer, ParamGroup::Buffers);
        let l_init = add("l_init".into(), vec![d], ParamKind::Buffer, ParamGroup::Buffers);
        let f = c.ffn_width();
        let ft = c.token_ffn_width();
        let mut blocks = Vec::with_capacity(c.blocks);
        for b in 0..c.blocks {
            let p = |n: &str| format!("block{b}.{n}");
            let mixer = match c.block_variant {
                BlockVariant::Attention => MixerLayout::Attention {
                    qkv: add(p("attn.qkv"), vec![d, 3 * d], ParamKind::Matrix, ParamGroup::Blocks),
                    out: add(p("attn.out"), vec![d, d], ParamKind::Matrix, ParamGroup::Blocks),
                },
                BlockVariant::MlpT => MixerLayout::Token {
                    gate: add(p("tok.gate"), vec![s_tot, ft], ParamKind::Matrix, ParamGroup::Blocks),
                    up: add(p("tok.up"), vec![s_tot, ft], ParamKind::Matrix, ParamGroup::Blocks),
                    down: add(p("tok.down"), vec![ft, s_tot], ParamKind::Matrix, ParamGroup::Blocks),
                },
            };
            let norm1 = add(p("norm1"), vec![d], ParamKind::Gain, ParamGroup::Blocks);
            let gate = add(p("mlp.gate"), vec![d, f], ParamKind::Matrix, ParamGroup::Blocks);
            let up = add(p("mlp.up"), vec![d, f], ParamKind::Matrix, ParamGroup::Blocks);
            let down = add(p("mlp.down"), vec![f, d], ParamKind::Matrix, ParamGroup::Blocks);
            let norm2 = add(p("norm2"), vec![d], ParamKind::Gain, ParamGroup::Blocks);
            blocks.push(BlockLayout {
                mixer,
                norm1,
                gate,
                up,
                down,
                norm2,
            });
        }
        Layout {
            token_emb,
            puzzle_emb,
            pos_emb,
            h_init,
            l_init,
            blocks,
            specs,
        }
    }
}

/// Scalar counts per group. `trainable` excludes buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub embeddings: usize,
    pub blocks: usize,
    pub buffers: usize,
    pub trainable: usize,
}

pub fn count_parameters(c: &ModelConfig) -> ParamCount {
    let mut n = ParamCount::default();
    for s in Layout::new(c).specs {
        match s.group {
            ParamGroup::Embeddings => n.embeddings += s.numel(),
            ParamGroup::Blocks => n.blocks += s.numel(),
            ParamGroup::Buffers => n.buffers += s.numel(),
        }
    }
    n.trainable = n.embeddings + n.blocks;
    n
}

/// A named parameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub spec: ParamSpec,
    pub data: Arc<Vec<T>>,
}

/// All model parameters in declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T: Real = f32> {
    pub params: Vec<Param<T>>,
}

impl<T: Real> Weights<T> {
    /// Fresh initialization: normal with std `1/sqrt(fan_in)` for matrices,
    /// unit gains, zero puzzle table.
    pub fn init<R: Rng + ?Sized>(c: &ModelConfig, rng: &mut R) -> Self {
        let layout = Layout::new(c);
        let params = layout
            .specs
            .iter()
            .map(|spec| {
                let n = spec.numel();
                let normal = |rng: &mut R, std: f64| -> Vec<T> {
                    let dist = Normal::new(0.0, std).unwrap();
                    (0..n).map(|_| T::lit(dist.sample(rng))).collect()
                };
                let data = match spec.kind {
                    ParamKind::Gain => vec![T::one(); n],
                    ParamKind::SparseRows => vec![T::zero(); n],
                    ParamKind::Buffer => match c.init_state {
                        InitState::Zeros => vec![T::zero(); n],
                        InitState::Random => normal(rng, 1.0),
                    },
                    ParamKind::Matrix => {
                        let fan_in = if spec.name == "token_emb" || spec.name == "pos_emb" {
                            c.hidden
                        } else {
                            spec.shape[0]
                        };
                        normal(rng, 1.0 / (fan_in.max(1) as f64).sqrt())
                    }
                };
                Param {
                    spec: spec.clone(),
                    data: Arc::new(data),
                }
            })
            .collect();
        Weights { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.spec.name == name)
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    spec: p.spec.clone(),
                    data: Arc::new(p.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect()),
                })
                .collect(),
        }
    }
}
