use std::fmt;
use std::str::FromStr;

use crate::error::{Result, RsmError};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    /// Non-causal multi-head self-attention followed by a SwiGLU channel MLP.
    Attention,
    /// SwiGLU MLP across the token axis followed by a SwiGLU channel MLP.
    MlpT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosEncoding {
    Rope,
    Learned,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPlacement {
    /// `norm(x + sublayer(x))`
    Post,
    /// `x + sublayer(norm(x))`
    Pre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitState {
    Zeros,
    /// Unit-variance normal buffers drawn once at initialization.
    Random,
}

macro_rules! enum_text {
    ($ty:ty, $($variant:path => $text:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!(
                        "unknown value `{other}` (expected one of: {})",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

enum_text!(BlockVariant, BlockVariant::Attention => "attention", BlockVariant::MlpT => "mlp_t");
enum_text!(PosEncoding, PosEncoding::Rope => "rope", PosEncoding::Learned => "learned", PosEncoding::None => "none");
enum_text!(NormPlacement, NormPlacement::Post => "post", NormPlacement::Pre => "pre");
enum_text!(InitState, InitState::Zeros => "zeros", InitState::Random => "random");

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Token positions per example (`S`).
    pub seq_len: usize,
    /// Learned per-puzzle prefix positions (`S_p`); 0 disables the prefix.
    pub puzzle_prefix_len: usize,
    pub num_puzzles: usize,
    pub hidden: usize,
    /// Residual blocks per application of the shared transition.
    pub blocks: usize,
    pub heads: usize,
    pub block_variant: BlockVariant,
    pub pos_encoding: PosEncoding,
    /// Base outer depth `H0`.
    pub h_cycles: usize,
    /// Base inner depth `L0`.
    pub l_cycles: usize,
    /// Probability that the penultimate outer step is cut from the gradient.
    pub p_detach: f64,
    pub ffn_hidden: Option<usize>,
    pub token_ffn_hidden: Option<usize>,
    pub norm_placement: NormPlacement,
    pub norm_eps: f64,
    pub rope_base: f64,
    pub init_state: InitState,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 11,
            seq_len: 81,
            puzzle_prefix_len: 0,
            num_puzzles: 0,
            hidden: 64,
            blocks: 2,
            heads: 4,
            block_variant: BlockVariant::MlpT,
            pos_encoding: PosEncoding::None,
            h_cycles: 2,
            l_cycles: 2,
            p_detach: 0.99,
            ffn_hidden: None,
            token_ffn_hidden: None,
            norm_placement: NormPlacement::Post,
            norm_eps: 1e-6,
            rope_base: 10000.0,
            init_state: InitState::Zeros,
        }
    }
}

/// SwiGLU hidden width for input width `d`: `round(8d/3)` rounded up to a
/// multiple of 8.
pub fn swiglu_width(d: usize) -> usize {
    let raw = (8.0 * d as f64 / 3.0).round() as usize;
    raw.div_ceil(8) * 8
}

impl ModelConfig {
    /// Full sequence length seen by the recurrence, `S_p + S`.
    pub fn total_len(&self) -> usize {
        self.puzzle_prefix_len + self.seq_len
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or_else(|| swiglu_width(self.hidden))
    }

    pub fn token_ffn_width(&self) -> usize {
        self.token_ffn_hidden.unwrap_or_else(|| swiglu_width(self.total_len()))
    }

    /// The Sudoku reference configuration (MLP-T, d = 512, two blocks),
    /// about 4.3M parameters.
    pub fn sudoku_reference() -> Self {
        ModelConfig {
            vocab_size: 11,
            seq_len: 81,
            hidden: 512,
            blocks: 2,
            heads: 8,
            block_variant: BlockVariant::MlpT,
            pos_encoding: PosEncoding::None,
            h_cycles: 3,
            l_cycles: 6,
            ..ModelConfig::default()
        }
    }

    /// The maze reference configuration for 31x31 grids with a 30x30 room
    /// lattice (attention + RoPE).
    pub fn maze_reference() -> Self {
        ModelConfig {
            vocab_size: 6,
            seq_len: 31 * 31,
            hidden: 256,
            blocks: 4,
            heads: 8,
            block_variant: BlockVariant::Attention,
            pos_encoding: PosEncoding::Rope,
            h_cycles: 3,
            l_cycles: 4,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.vocab_size == 0 {
            errs.push("vocab_size must be positive".to_string());
        }
        if self.seq_len == 0 {
            errs.push("seq_len must be positive".to_string());
        }
        if self.hidden == 0 {
            errs.push("hidden must be positive".to_string());
        }
        if self.blocks == 0 {
            errs.push("blocks must be at least 1".to_string());
        }
        if self.block_variant == BlockVariant::Attention && (self.heads == 0 || !self.hidden.is_multiple_of(self.heads))
        {
            errs.push(format!(
                "hidden {} is not divisible into {} heads",
                self.hidden, self.heads
            ));
        }
        if self.pos_encoding == PosEncoding::Rope {
            if self.block_variant != BlockVariant::Attention {
                errs.push("rope positional encoding requires the attention block variant".to_string());
            } else if self.heads > 0 && !(self.hidden / self.heads).is_multiple_of(2) {
                errs.push(format!(
                    "rope needs an even head dimension, got {}",
                    self.hidden / self.heads
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.p_detach) {
            errs.push(format!("p_detach must lie in [0, 1], got {}", self.p_detach));
        }
        if self.h_cycles == 0 {
            errs.push("h_cycles must be at least 1".to_string());
        }
        if self.l_cycles == 0 {
            errs.push("l_cycles must be at least 1".to_string());
        }
        if self.puzzle_prefix_len > 0 && self.num_puzzles == 0 {
            errs.push("puzzle_prefix_len > 0 needs num_puzzles > 0".to_string());
        }
        if !(self.norm_eps > 0.0) {
            errs.push("norm_eps must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RsmError::Config(errs.join("; ")))
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        vec![
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("seq_len".into(), self.seq_len.to_string()),
            ("puzzle_prefix_len".into(), self.puzzle_prefix_len.to_string()),
            ("num_puzzles".into(), self.num_puzzles.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("blocks".into(), self.blocks.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("block_variant".into(), self.block_variant.to_string()),
            ("pos_encoding".into(), self.pos_encoding.to_string()),
            ("h_cycles".into(), self.h_cycles.to_string()),
            ("l_cycles".into(), self.l_cycles.to_string()),
            ("p_detach".into(), format!("{:?}", self.p_detach)),
            ("ffn_hidden".into(), opt(self.ffn_hidden)),
            ("token_ffn_hidden".into(), opt(self.token_ffn_hidden)),
            ("norm_placement".into(), self.norm_placement.to_string()),
            ("norm_eps".into(), format!("{:?}", self.norm_eps)),
            ("rope_base".into(), format!("{:?}", self.rope_base)),
            ("init_state".into(), self.init_state.to_string()),
        ]
    }

    /// Reads model keys from `kv`, starting from `base` for absent keys.
    /// Problems are recorded in `kv`.
    pub fn read_from(kv: &mut KvMap, base: &ModelConfig) -> ModelConfig {
        let opt = |kv: &mut KvMap, key: &str, dflt: Option<usize>| match kv.take_raw(key) {
            None => dflt,
            Some(v) if v == "auto" => None,
            Some(v) => match v.parse() {
                Ok(x) => Some(x),
                Err(e) => {
                    kv.error(format!("`{key}`: {e}"));
                    dflt
                }
            },
        };
        let ffn_hidden = opt(kv, "ffn_hidden", base.ffn_hidden);
        let token_ffn_hidden = opt(kv, "token_ffn_hidden", base.token_ffn_hidden);
        ModelConfig {
            vocab_size: kv.take_or("vocab_size", base.vocab_size),
            seq_len: kv.take_or("seq_len", base.seq_len),
            puzzle_prefix_len: kv.take_or("puzzle_prefix_len", base.puzzle_prefix_len),
            num_puzzles: kv.take_or("num_puzzles", base.num_puzzles),
            hidden: kv.take_or("hidden", base.hidden),
            blocks: kv.take_or("blocks", base.blocks),
            heads: kv.take_or("heads", base.heads),
            block_variant: kv.take_or("block_variant", base.block_variant),
            pos_encoding: kv.take_or("pos_encoding", base.pos_encoding),
            h_cycles: kv.take_or("h_cycles", base.h_cycles),
            l_cycles: kv.take_or("l_cycles", base.l_cycles),
            p_detach: kv.take_or("p_detach", base.p_detach),
            ffn_hidden,
            token_ffn_hidden,
            norm_placement: kv.take_or("norm_placement", base.norm_placement),
            norm_eps: kv.take_or("norm_eps", base.norm_eps),
            rope_base: kv.take_or("rope_base", base.rope_base),
            init_state: kv.take_or("init_state", base.init_state),
        }
    }

    /// Architecture fields that must agree for weights to be interchangeable
    /// (depths and `p_detach` are run-time knobs and may differ).
    pub fn compatible_with(&self, other: &ModelConfig) -> std::result::Result<(), String> {
        let mut a = self.clone();
        let mut b = other.clone();
        for c in [&mut a, &mut b] {
            c.h_cycles = 1;
            c.l_cycles = 1;
            c.p_detach = 0.0;
            c.ffn_hidden = Some(c.ffn_width());
            c.token_ffn_hidden = Some(c.token_ffn_width());
        }
        if a == b {
            return Ok(());
        }
        let pa = a.to_pairs();
        let pb = b.to_pairs();
        let diffs: Vec<String> = pa
            .iter()
            .zip(&pb)
            .filter(|(x, y)| x.1 != y.1)
            .map(|(x, y)| format!("{}: {} vs {}", x.0, x.1, y.1))
            .collect();
        Err(diffs.join(", "))
    }
}
