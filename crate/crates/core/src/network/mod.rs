//! Small classifier with a frozen base and trainable low-rank adapters.

mod model;
mod noise;
mod params;
mod spec;

pub use model::{cross_entropy, log_softmax, silu, EffectiveWeights, ForwardPass, LossGradient, LoraNetwork};
pub use noise::{sample_flat_noise, NoiseDraw, PerturbationConfig, DEFAULT_RESAMPLE_EVERY, DEFAULT_RHO};
pub use params::{
    AdapterLayout, AttentionWeights, BaseWeights, DenseWeights, FactorMatrix, LoraFactors, ParamCoord,
};
pub use spec::{
    Activation, AdapterSite, DenseLayerSpec, InputSpec, NetworkSpec, SiteKind, DEFAULT_ALPHA, DEFAULT_RANK,
};

#[cfg(test)]
mod tests;
