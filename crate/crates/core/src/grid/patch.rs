use super::cube::GridCube;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `W` consecutive frames of an `N x N` all-channel window centered on a cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    /// Hour index of the last frame.
    pub t_end: usize,
    pub window: usize,
    pub channels: usize,
    pub size: usize,
    /// `[W, C, N, N]`, chronological.
    pub values: Vec<f64>,
    pub boundary_padded: bool,
}

impl Patch {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.window, self.channels, self.size, self.size],
            self.values.clone(),
        )
        .expect("patch dims are nonzero")
    }

    pub fn get(&self, w: usize, c: usize, r: usize, k: usize) -> f64 {
        self.values[((w * self.channels + c) * self.size + r) * self.size + k]
    }

    /// The `[W, C]` centre-cell vectors.
    pub fn center_series(&self) -> Vec<f64> {
        let m = self.size / 2;
        let mut out = Vec::with_capacity(self.window * self.channels);
        for w in 0..self.window {
            for c in 0..self.channels {
                out.push(self.get(w, c, m, m));
            }
        }
        out
    }
}

/// Cuts the patch ending at hour `t`; cells beyond the grid replicate the nearest edge.
pub fn extract_patch(cube: &GridCube, center: (usize, usize), size: usize, t: usize, window: usize) -> Result<Patch> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!("patch size must be odd, got {size}")));
    }
    if window == 0 {
        return Err(Error::invalid("patch window must be at least 1"));
    }
    if t + 1 < window {
        return Err(Error::invalid(format!(
            "hour {t} has only {} hours of history; window {window} needs {window}",
            t + 1
        )));
    }
    if t >= cube.hours {
        return Err(Error::invalid(format!("hour {t} beyond cube length {}", cube.hours)));
    }
    if !cube.spec.contains(center.0, center.1) {
        return Err(Error::invalid(format!("center {center:?} lies outside the grid")));
    }
    let (rows, cols, ch) = (cube.rows() as isize, cube.cols() as isize, cube.channels());
    let half = (size / 2) as isize;
    let mut padded = false;
    let mut ridx = Vec::with_capacity(size);
    let mut cidx = Vec::with_capacity(size);
    for d in -half..=half {
        let r = center.0 as isize + d;
        let c = center.1 as isize + d;
        padded |= r < 0 || r >= rows || c < 0 || c >= cols;
        ridx.push(r.clamp(0, rows - 1) as usize);
        cidx.push(c.clamp(0, cols - 1) as usize);
    }
    let mut values = Vec::with_capacity(window * ch * size * size);
    for tt in t + 1 - window..=t {
        for c in 0..ch {
            let plane = cube.plane(tt, c);
            for &r in &ridx {
                for &k in &cidx {
                    values.push(plane[r * cube.cols() + k]);
                }
            }
        }
    }
    Ok(Patch {
        center,
        t_end: t,
        window,
        channels: ch,
        size,
        values,
        boundary_padded: padded,
    })
}
