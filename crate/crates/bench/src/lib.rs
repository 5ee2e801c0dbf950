//! Shared fixtures for the criterion benchmarks.

use lleda_core::{DualNet, NetConfig, Rng, Tensor};

/// A batch of `n` flattened 16×16 images with pixels in `[0, 1)`.
pub fn image_batch(rng: &mut Rng, n: usize) -> Tensor<f32> {
    rng.uniform_tensor(&[n, 256], 0.0, 1.0)
}

/// The default network, frozen below the replay layer as it is during
/// continual training.
pub fn trained_shape_net(seed: u64) -> DualNet<f32> {
    let mut net =
        DualNet::new(NetConfig::default(), &mut Rng::new(seed)).expect("default config is valid");
    net.freeze_below_replay();
    net
}
