use super::conv::Conv2dSpec;
use crate::tensor::{Scalar, Tape, Var};
use crate::{Error, Result};

/// Pooled context at several grid sizes, each average-pooled to `b×b`,
/// mixed by a 1×1 convolution and upsampled back to the input size.
///
/// `convs[i]` holds the `(weight [C, C, 1, 1], bias [C])` for `bins[i]`.
/// The result has `C·|bins|` channels.
pub fn pyramid_pool<T: Scalar>(tape: &mut Tape<T>, x: Var, bins: &[usize], convs: &[(Var, Var)]) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [_, c, h, w] = shape[..] else {
        return Err(Error::shape(
            "pyramid_pool",
            format!("expected [N, C, H, W], got {shape:?}"),
        ));
    };
    if bins.is_empty() || bins.len() != convs.len() {
        return Err(Error::invalid(format!(
            "pyramid_pool needs one conv per bin, got {} bins and {} convs",
            bins.len(),
            convs.len()
        )));
    }
    let mut parts = Vec::with_capacity(bins.len());
    for (&b, &(cw, cb)) in bins.iter().zip(convs) {
        if b == 0 || h % b != 0 || w % b != 0 || h / b != w / b {
            return Err(Error::shape(
                "pyramid_pool",
                format!("bin {b} does not evenly divide {h}x{w}"),
            ));
        }
        let k = h / b;
        let pooled = tape.avg_pool2d(x, k)?;
        let mixed = tape.conv2d(pooled, cw, Some(cb), Conv2dSpec::new(c, c, 1))?;
        parts.push(tape.upsample_nearest(mixed, k)?);
    }
    tape.concat(&parts, 1)
}
