// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod dataset;
pub mod eval;
pub mod interpret;
pub mod lda;
pub mod mfcc;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod viz;
pub mod vocab;
