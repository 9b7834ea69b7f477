//! A small tensor runtime: dense, causal 1-D convolution and GRU layers with
//! exact reverse-mode gradients, Adam, and a binary weight format.

pub mod layer;
pub mod optim;
pub mod sequential;
pub mod tensor;
pub mod weights;

pub use layer::{sigmoid, Activation, Cache, Layer, LayerKind, StepState};
pub use optim::Adam;
pub use sequential::{Gradients, Sequential};
pub use tensor::{Real, Tensor2D};
pub use weights::{RecordKind, WeightFile};


use crate::dsp::FrameFeatures;
use crate::NB_FEATURES;

/// Stacks the rescaled network inputs of a feature sequence into a `T × 68` tensor.
pub fn feature_tensor<T: Real>(features: &[FrameFeatures]) -> Tensor2D<T> {
    let mut x = Tensor2D::zeros(features.len(), NB_FEATURES);
    let mut row = [0.0f32; NB_FEATURES];
    for (t, f) in features.iter().enumerate() {
        f.network_input(&mut row);
        for (dst, &v) in x.row_mut(t).iter_mut().zip(&row) {
            *dst = T::of(v as f64);
        }
    }
    x
}
