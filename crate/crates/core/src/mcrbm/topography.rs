use ndarray::Array2;

use super::McrbmArch;
use crate::error::{Error, Result};

/// Pooling matrix for factors laid out on a toroidal `sqrt(F) x sqrt(F)` grid.
///
/// Covariance unit `(py, px)` pools the `neighborhood x neighborhood` block
/// whose top-left corner is `(py * stride, px * stride)`, wrapping at the
/// edges. Pooled entries are -1, all others 0. Requires
/// `n_cov == (side / stride)^2`.
pub fn init_topography(arch: &McrbmArch) -> Result<Array2<f64>> {
    let f = arch.n_factors;
    let side = (f as f64).sqrt().round() as usize;
    if side * side != f || f == 0 {
        return Err(Error::arg(format!(
            "topography needs a square factor count, got {f}"
        )));
    }
    if arch.stride == 0 || side % arch.stride != 0 {
        return Err(Error::arg(format!(
            "stride {} must divide the grid side {side}",
            arch.stride
        )));
    }
    if arch.neighborhood == 0 || arch.neighborhood > side {
        return Err(Error::arg(format!(
            "neighborhood {} must be in 1..={side}",
            arch.neighborhood
        )));
    }
    let per_axis = side / arch.stride;
    if arch.n_cov != per_axis * per_axis {
        return Err(Error::arg(format!(
            "topography yields {} pools but the architecture has {} covariance units",
            per_axis * per_axis,
            arch.n_cov
        )));
    }
    let mut p = Array2::zeros((f, arch.n_cov));
    for py in 0..per_axis {
        for px in 0..per_axis {
            let unit = py * per_axis + px;
            for dy in 0..arch.neighborhood {
                for dx in 0..arch.neighborhood {
                    let gy = (py * arch.stride + dy) % side;
                    let gx = (px * arch.stride + dx) % side;
                    p[[gy * side + gx, unit]] = -1.0;
                }
            }
        }
    }
    Ok(p)
}
