//! Parameterized building blocks: the input encoder, target encoders and
//! input-to-target decoders.

pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod params;

pub use decoder::{
    target_coords_in_input_frame, AttentionPool, DecodePlan, DecodeRequest, DecoderConfig, DecoderKind, DenseDecoder,
    PositionOrigin,
};
pub use encoder::{CategoryTable, Encoded, EncoderConfig, TextEncoder, VitEncoder};
pub use layers::{Block, LayerNorm, Linear};
pub use params::{ParamStore, Weights};
