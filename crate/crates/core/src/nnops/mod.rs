//! Differentiable primitives with hand-written backward passes.
//!
//! Every layer follows the same contract: `forward` returns the output and a
//! cache owned by the caller, `backward` consumes that cache together with the
//! output gradient and returns the input gradient, accumulating parameter
//! gradients into an optional gradient twin of the layer. A cache belongs to
//! exactly one forward pass, so concurrent passes never share state.

mod act;
mod conv;
mod dct;
pub mod gradcheck;
mod linear;
mod norm;
mod shuffle;
mod window;

pub use act::{gelu, gelu_backward, record_relu_pattern, relu, relu_backward};
pub use conv::Conv2d;
pub use dct::{dct2, dct_basis, idct2};
pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::Linear;
pub use norm::{layer_norm, LayerNorm, LnCache};
pub use shuffle::{pixel_shuffle2, pixel_unshuffle2};
pub use window::{window_partition, window_reverse, WindowSeq};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// A differentiable map from one tensor to another.
pub trait Module<T: Scalar> {
    type Cache;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)>;

    /// Input gradient for `dy`; parameter gradients are added into `grads`
    /// when given.
    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T>;
}

/// Named traversal over learnable tensors, in a fixed order.
pub trait Parameters<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn zero_(&mut self) {
        self.visit_mut("", &mut |_, t| t.fill(T::zero()));
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
