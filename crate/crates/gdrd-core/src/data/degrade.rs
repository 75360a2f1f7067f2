//! Resolution degradation by exact box averaging, the fixed down-sampling
//! used to produce low-resolution inputs from high-resolution sources.

use super::DataError;
use crate::tensor::Tensor;
use crate::Element;

/// Averages non-overlapping square blocks of a `(c, side, side)` image down
/// to `(c, target_side, target_side)`. The source side must be an exact
/// multiple of the target side; each output pixel is the mean of its block,
/// accumulated in `f64` so results are reproducible across element types.
pub fn degrade<T: Element>(hr: &Tensor<T>, target_side: usize) -> Result<Tensor<T>, DataError> {
    let shape = hr.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(DataError::InvalidArgument(format!(
            "degrade expects a (channels, side, side) image, got {shape:?}"
        )));
    }
    let (channels, side) = (shape[0], shape[1]);
    if target_side == 0 || side % target_side != 0 {
        return Err(DataError::InvalidArgument(format!(
            "source side {side} is not an exact multiple of target side {target_side}"
        )));
    }
    let factor = side / target_side;
    let block_area = (factor * factor) as f64;
    let data = hr.data();

    let mut out = Vec::with_capacity(channels * target_side * target_side);
    for c in 0..channels {
        let plane = &data[c * side * side..(c + 1) * side * side];
        for oy in 0..target_side {
            for ox in 0..target_side {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    let row = (oy * factor + dy) * side + ox * factor;
                    for dx in 0..factor {
                        acc += plane[row + dx].as_f64();
                    }
                }
                out.push(T::from_f64(acc / block_area));
            }
        }
    }
    Ok(Tensor::from_vec(&[channels, target_side, target_side], out)?)
}
