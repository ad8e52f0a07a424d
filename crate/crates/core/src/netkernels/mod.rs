//! Forward-only network kernels: direct 3D convolution (the oracle),
//! factorized (2+1)D convolution, and the toy two-stream model with its
//! deterministic fixture weights.

mod conv;
mod model;
mod tensor;
mod weights;

pub use conv::{
    conv2plus1d, conv2plus1d_params, conv3d_direct, conv3d_params, midplanes, Activation,
    Conv3dSpec,
};
pub use model::{
    clip_to_tensor, count_params, head_params, subspectrogram_to_tensor, two_stream_forward,
    TwoStreamConfig, TwoStreamModel,
};
pub use tensor::Tensor;
pub use weights::{generate_fixture_weights, load_weights, save_weights, WeightStore};
