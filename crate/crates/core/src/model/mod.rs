//! The simplified two-attention-layer disentangled transformer `TF(M, H, d, D)`:
//! RPE-only multi-head first attention, a polynomial-kernel FFN normalized by
//! `sqrt(C_D)`, and a single-parameter second attention whose values are the
//! raw tokens.

mod checkpoint;
mod forward;
mod params;
mod phi;

pub use checkpoint::{read_checkpoint, write_checkpoint, format_checkpoint, parse_checkpoint};
pub use forward::{forward, forward_with, second_layer, FirstLayer, ForwardTrace, Masking};
pub use params::{ModelParams, ModelShape};
pub use phi::{embedding_dim, phi_explicit};
