use crate::scalar::Scalar;
use crate::tensor::{Result, Tensor, TensorError};

/// Sinusoidal encoding of 2D trajectories.
///
/// `o` is `[2, T]` or `[B, 2, T]`. Each coordinate, multiplied by `scale`,
/// becomes `dim / 2` channels of interleaved `sin(p/10000^(2i/(dim/2)))`,
/// `cos(…)`; x occupies the first half of the output channels, y the second.
pub fn sinusoidal_encode<S: Scalar>(o: &Tensor<S>, dim: usize, scale: f64) -> Result<Tensor<S>> {
    let (batch, frames, unbatched) = match o.shape() {
        [2, t] => (1, *t, true),
        [b, 2, t] => (*b, *t, false),
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "sinusoidal_encode",
                left: other.to_vec(),
                right: vec![2, 0],
            })
        }
    };
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(TensorError::Contract(format!(
            "encoding width {dim} must be a positive multiple of 4"
        )));
    }
    let per_coord = dim / 2;
    let inv_freq: Vec<f64> = (0..per_coord / 2)
        .map(|i| 10000f64.powf(-((2 * i) as f64) / per_coord as f64))
        .collect();
    let mut out = vec![S::zero(); batch * dim * frames];
    for b in 0..batch {
        for c in 0..2 {
            for t in 0..frames {
                let p = o.values()[(b * 2 + c) * frames + t].as_f64() * scale;
                for (i, f) in inv_freq.iter().enumerate() {
                    let ch = c * per_coord + 2 * i;
                    let (s, co) = (p * f).sin_cos();
                    out[(b * dim + ch) * frames + t] = S::from_f64_lossy(s);
                    out[(b * dim + ch + 1) * frames + t] = S::from_f64_lossy(co);
                }
            }
        }
    }
    let shape = if unbatched {
        vec![dim, frames]
    } else {
        vec![batch, dim, frames]
    };
    Tensor::new(shape, out)
}
