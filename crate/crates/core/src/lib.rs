//! Lifelong self-supervised domain adaptation with latent replay.
//!
//! A slow network learns generic features with a self-supervised loss while
//! a fast network aligns the current domain with the slow features and with
//! replayed memories through MMD losses. Memories are activations at a
//! replay layer below which both networks are frozen, so stored latents
//! stay valid as training moves across domains.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod replay;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Tape, Var};
pub use data::{
    generate_domain, load_idx, make_views, AugmentationPolicy, DomainSource, DomainStream,
    EvalAccess, Labels, SyntheticDomainSpec, Transform,
};
pub use error::{Error, Result};
pub use eval::{
    evaluate_sequence, finetune_baseline, linear_probe, ProbeOptions, ProbeResult, Representation,
    SequenceMetrics,
};
pub use losses::{mmd, mmd_median, vicreg, SslLoss, VicReg, VicRegWeights};
pub use networks::{DualNet, NetConfig};
pub use replay::{BufferMode, LatentPair, ReplayBuffer};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
pub use trainer::{Method, SequenceRun, StepReport, TrainConfig, Trainer};
