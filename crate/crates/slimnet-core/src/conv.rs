//! Convolution and linear kernels shared by the tape ops.
//!
//! Convolutions run as batched im2col + GEMM per group; backward recomputes
//! the column matrix instead of storing it. Direct summation never happens
//! here — the naive reference lives in test code as an independent oracle.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn resolve(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<ConvGeom> {
        if x_shape.len() != 4 || w_shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("4-d input and weight"),
                got: alloc::format!("{x_shape:?} and {w_shape:?}"),
            });
        }
        let (n, ci, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (co, wci, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if groups == 0 || ci % groups != 0 {
            return Err(Error::BadGroups { channels: ci, groups });
        }
        if co % groups != 0 {
            return Err(Error::BadGroups { channels: co, groups });
        }
        if wci != ci / groups {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("weight in-channels {} (= {ci}/{groups})", ci / groups),
                got: alloc::format!("{wci}"),
            });
        }
        if stride == 0 {
            return Err(Error::BadConfig(alloc::format!("stride must be >= 1")));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("kernel {kh}x{kw} to fit padded input"),
                got: alloc::format!("{h}x{w} with pad {pad}"),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom { n, ci, h, w, co, kh, kw, stride, pad, groups, oh, ow })
    }

    fn cig(&self) -> usize {
        self.ci / self.groups
    }

    fn cog(&self) -> usize {
        self.co / self.groups
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// C[m][n] += A[m][k] * B[k][n], all row-major.
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C[m][n] += A[m][k] * B[n][k]^T, i.e. rows of both operands are contiguous.
fn gemm_abt_acc(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// Gathers one group's input window into `cols[cig*kh*kw][n*oh*ow]`.
fn im2col_group(x: &[f32], g: &ConvGeom, group: usize, cols: &mut [f32]) {
    let (cig, kh, kw) = (g.cig(), g.kh, g.kw);
    let ncols = g.cols();
    debug_assert_eq!(cols.len(), cig * kh * kw * ncols);
    cols.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..cig {
        let xc = group * cig + c;
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * ncols;
                for img in 0..g.n {
                    let xbase = (img * g.ci + xc) * g.h * g.w;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * g.w;
                        let crow = row + (img * g.oh + oy) * g.ow;
                        if g.stride == 1 {
                            // valid ox range: 0 <= ox + kx - pad < w
                            let lo = g.pad.saturating_sub(kx);
                            let hi = (g.w + g.pad - kx).min(g.ow);
                            if lo < hi {
                                let src = xrow + lo + kx - g.pad;
                                cols[crow + lo..crow + hi]
                                    .copy_from_slice(&x[src..src + hi - lo]);
                            }
                        } else {
                            for ox in 0..g.ow {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    cols[crow + ox] = x[xrow + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the input layout (adjoint of `im2col_group`).
fn col2im_group(cols: &[f32], g: &ConvGeom, group: usize, dx: &mut [f32]) {
    let (cig, kh, kw) = (g.cig(), g.kh, g.kw);
    let ncols = g.cols();
    for c in 0..cig {
        let xc = group * cig + c;
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * ncols;
                for img in 0..g.n {
                    let xbase = (img * g.ci + xc) * g.h * g.w;
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * g.w;
                        let crow = row + (img * g.oh + oy) * g.ow;
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dx[xrow + ix as usize] += cols[crow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward pass. Output is NCHW `[n, co, oh, ow]`.
pub fn conv2d_forward(x: &[f32], wt: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> Vec<f32> {
    let (cig, cog) = (g.cig(), g.cog());
    let k = cig * g.kh * g.kw;
    let ncols = g.cols();
    let ohow = g.oh * g.ow;
    let mut y = vec![0.0f32; g.n * g.co * ohow];
    let mut cols = vec![0.0f32; k * ncols];
    let mut res = vec![0.0f32; cog * ncols];
    for group in 0..g.groups {
        im2col_group(x, g, group, &mut cols);
        res.iter_mut().for_each(|v| *v = 0.0);
        let wg = &wt[group * cog * k..(group + 1) * cog * k];
        gemm_acc(cog, k, ncols, wg, &cols, &mut res);
        for oc in 0..cog {
            let co = group * cog + oc;
            for img in 0..g.n {
                let src = oc * ncols + img * ohow;
                let dst = (img * g.co + co) * ohow;
                y[dst..dst + ohow].copy_from_slice(&res[src..src + ohow]);
            }
        }
    }
    if let Some(b) = bias {
        for img in 0..g.n {
            for co in 0..g.co {
                let base = (img * g.co + co) * ohow;
                let bv = b[co];
                for v in &mut y[base..base + ohow] {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// Gradients w.r.t. input, weight and bias given upstream `dy`.
pub fn conv2d_backward(
    x: &[f32],
    wt: &[f32],
    g: &ConvGeom,
    dy: &[f32],
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let (cig, cog) = (g.cig(), g.cog());
    let k = cig * g.kh * g.kw;
    let ncols = g.cols();
    let ohow = g.oh * g.ow;

    let mut dw = vec![0.0f32; wt.len()];
    let mut db = vec![0.0f32; g.co];
    let mut dx = if need_dx { Some(vec![0.0f32; x.len()]) } else { None };

    let mut cols = vec![0.0f32; k * ncols];
    let mut dyg = vec![0.0f32; cog * ncols];
    let mut dcols = vec![0.0f32; k * ncols];

    for img in 0..g.n {
        for co in 0..g.co {
            let base = (img * g.co + co) * ohow;
            let mut acc = 0.0f32;
            for v in &dy[base..base + ohow] {
                acc += *v;
            }
            db[co] += acc;
        }
    }

    for group in 0..g.groups {
        // regroup dy into [cog][n*oh*ow]
        for oc in 0..cog {
            let co = group * cog + oc;
            for img in 0..g.n {
                let src = (img * g.co + co) * ohow;
                let dst = oc * ncols + img * ohow;
                dyg[dst..dst + ohow].copy_from_slice(&dy[src..src + ohow]);
            }
        }
        im2col_group(x, g, group, &mut cols);
        // dW = dY * cols^T
        let dwg = &mut dw[group * cog * k..(group + 1) * cog * k];
        gemm_abt_acc(cog, ncols, k, &dyg, &cols, dwg);
        if let Some(dx) = &mut dx {
            // dcols = W^T * dY, accumulated as per-output-channel axpy
            dcols.iter_mut().for_each(|v| *v = 0.0);
            let wg = &wt[group * cog * k..(group + 1) * cog * k];
            for row in 0..k {
                let drow = &mut dcols[row * ncols..(row + 1) * ncols];
                for oc in 0..cog {
                    let wv = wg[oc * k + row];
                    if wv == 0.0 {
                        continue;
                    }
                    let dyrow = &dyg[oc * ncols..(oc + 1) * ncols];
                    for (dv, yv) in drow.iter_mut().zip(dyrow) {
                        *dv += wv * yv;
                    }
                }
            }
            col2im_group(&dcols, g, group, dx);
        }
    }
    (dx, dw, db)
}

/// y[n][o] = dot(x[n], w[o]) + b[o]
pub fn linear_forward(x: &[f32], wt: &[f32], bias: &[f32], n: usize, ci: usize, co: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; n * co];
    gemm_abt_acc(n, ci, co, x, wt, &mut y);
    for img in 0..n {
        for o in 0..co {
            y[img * co + o] += bias[o];
        }
    }
    y
}

pub fn linear_backward(
    x: &[f32],
    wt: &[f32],
    dy: &[f32],
    n: usize,
    ci: usize,
    co: usize,
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let mut dw = vec![0.0f32; co * ci];
    let mut db = vec![0.0f32; co];
    for img in 0..n {
        for o in 0..co {
            let d = dy[img * co + o];
            db[o] += d;
            if d != 0.0 {
                let wrow = &mut dw[o * ci..(o + 1) * ci];
                let xrow = &x[img * ci..(img + 1) * ci];
                for (wv, xv) in wrow.iter_mut().zip(xrow) {
                    *wv += d * xv;
                }
            }
        }
    }
    let dx = if need_dx {
        let mut dx = vec![0.0f32; n * ci];
        for img in 0..n {
            let drow = &mut dx[img * ci..(img + 1) * ci];
            for o in 0..co {
                let d = dy[img * co + o];
                if d != 0.0 {
                    let wrow = &wt[o * ci..(o + 1) * ci];
                    for (dv, wv) in drow.iter_mut().zip(wrow) {
                        *dv += d * wv;
                    }
                }
            }
        }
        Some(dx)
    } else {
        None
    };
    (dx, dw, db)
}
