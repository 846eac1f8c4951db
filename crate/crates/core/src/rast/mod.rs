//! Resource-aware spatio-temporal encoders and the forecast head.

mod decoder;
mod dstcl;
mod encoders;
mod inception;

pub use decoder::{decoder_forecast, Decoder, Forecast};
pub use dstcl::{dstcl_forward, gated_activation, propagate, DstclParams};
pub use encoders::{
    long_encoder, short_encoder, uniform_propagation, LongEncoder, ShortEncoder, LONG_DILATIONS,
    SHORT_MIN_WINDOW,
};
pub use inception::{fusion_weights, inception_conv, InceptionBank, BRANCH_WIDTHS};
