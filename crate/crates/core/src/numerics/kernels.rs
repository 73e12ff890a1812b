//! Slice-level compute kernels behind the tape operations.
//!
//! Images are `[C, H, W]` row-major. Convolutions are same-padded
//! cross-correlations with stride 1, lowered to im2col and a row-major
//! matrix product whose inner loop runs over contiguous memory.

/// `out[m, n] += a[m, k] * b[k, n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// `out[m, n] += a[m, k] * b[n, k]^T`, i.e. row-by-row dot products.
pub(crate) fn gemm_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `out[k, n] += a[m, k]^T * b[m, n]`
pub(crate) fn gemm_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums keep the loop vectorizable without changing results run to run.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Unfolds a `[C, H, W]` image into `[C*k*k, H*W]` columns with zero padding `(k-1)/2`.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let img = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &img[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, d) in dst_row.iter_mut().enumerate() {
                        let sx = xx as isize + dx;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im_acc(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let img = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let img_row = &mut img[sy as usize * w..(sy as usize + 1) * w];
                    let src_row = &src[y * w..(y + 1) * w];
                    for (xx, &g) in src_row.iter().enumerate() {
                        let sx = xx as isize + dxo;
                        if sx >= 0 && sx < w as isize {
                            img_row[sx as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

pub(crate) fn conv_forward(x: &[f64], kernel: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let hw = d.hw();
    let rows = d.col_rows();
    let mut out = vec![0.0; d.batch * d.c_out * hw];
    let mut cols = if d.k == 1 { Vec::new() } else { vec![0.0; rows * hw] };
    for b in 0..d.batch {
        let xin = &x[b * d.c_in * hw..(b + 1) * d.c_in * hw];
        let o = &mut out[b * d.c_out * hw..(b + 1) * d.c_out * hw];
        for (co, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        let src: &[f64] = if d.k == 1 {
            xin
        } else {
            im2col(xin, d.c_in, d.h, d.w, d.k, &mut cols);
            &cols
        };
        gemm_acc(kernel, src, o, d.c_out, rows, hw);
    }
    out
}

/// Returns `(dx, dkernel, dbias)`; each is only computed when requested.
pub(crate) fn conv_backward(
    x: &[f64],
    kernel: &[f64],
    dy: &[f64],
    d: ConvDims,
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw = d.hw();
    let rows = d.col_rows();
    let mut dx = need[0].then(|| vec![0.0; x.len()]);
    let mut dk = need[1].then(|| vec![0.0; kernel.len()]);
    let mut db = need[2].then(|| vec![0.0; d.c_out]);
    let mut cols = if d.k == 1 { Vec::new() } else { vec![0.0; rows * hw] };
    let mut dcols = if d.k == 1 || dx.is_none() {
        Vec::new()
    } else {
        vec![0.0; rows * hw]
    };
    for b in 0..d.batch {
        let xin = &x[b * d.c_in * hw..(b + 1) * d.c_in * hw];
        let g = &dy[b * d.c_out * hw..(b + 1) * d.c_out * hw];
        if let Some(db) = db.as_mut() {
            for (co, row) in g.chunks(hw).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if let Some(dk) = dk.as_mut() {
            let src: &[f64] = if d.k == 1 {
                xin
            } else {
                im2col(xin, d.c_in, d.h, d.w, d.k, &mut cols);
                &cols
            };
            gemm_bt_acc(g, src, dk, d.c_out, hw, rows);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * d.c_in * hw..(b + 1) * d.c_in * hw];
            if d.k == 1 {
                gemm_at_acc(kernel, g, dxb, d.c_out, rows, hw);
            } else {
                dcols.iter_mut().for_each(|v| *v = 0.0);
                gemm_at_acc(kernel, g, &mut dcols, d.c_out, rows, hw);
                col2im_acc(&dcols, d.c_in, d.h, d.w, d.k, dxb);
            }
        }
    }
    (dx, dk, db)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
