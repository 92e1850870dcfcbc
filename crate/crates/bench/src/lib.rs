//! Deterministic inputs shared by the benchmarks.

use rawscale_core::{RationalScale, Shape, Tensor};

/// `(c, h, w)` tensor of a smooth pattern with values in `[0, 1]`.
pub fn pattern(c: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(c, h, w), |ci, y, x| {
        let v = ((y * 7 + x * 3 + ci * 5) % 17) as f32 / 16.0;
        0.25 + 0.5 * v
    })
}

pub fn half() -> RationalScale {
    RationalScale::new(1, 2).expect("valid scale")
}
