//! The recurrent reasoning model.
//!
//! Two latent streams of shape `[B, S_p + S, d]` are refined by one shared
//! transition `F(h; u)`, a stack of residual blocks applied to `h + u`. Each
//! outer step runs `L` low-level updates `z_L <- F(z_L; z_H + e)` followed by
//! one high-level update `z_H <- F(z_H; z_L)`. Predictions are read from
//! `z_H` through the transposed token embedding.

mod checkpoint;
mod config;
mod rsm;
mod weights;

pub(crate) use checkpoint::tmp_path;
pub use checkpoint::{Checkpoint, NamedTensor};
pub use config::{swiglu_width, BlockVariant, InitState, ModelConfig, NormPlacement, PosEncoding};
pub use rsm::{sample_include_prev_h, Bound, InferOutput, Latents, ModelInput, Rsm, TrainForward};
pub use weights::{count_parameters, Param, ParamCount, ParamGroup, ParamKind, ParamSpec, Weights};
