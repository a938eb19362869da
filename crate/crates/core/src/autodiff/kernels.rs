//! Raw array kernels behind the differentiable operations.

use super::Array;

pub(crate) fn matmul(a: &Array, b: &Array, ta: bool, tb: bool) -> Array {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    // Strides of op(A) and op(B) as stored row-major.
    let (rsa, csa) = if ta {
        (1, ac as isize)
    } else {
        (ac as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, bc as isize)
    } else {
        (bc as isize, 1)
    };
    let mut out = vec![0.0; m * n];
    // SAFETY: the pointers cover `m*k`, `k*n` and `m*n` elements with the
    // strides computed above, and `out` does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Array::from_parts(vec![m, n], out)
}

pub(crate) fn transpose_last2(a: &Array) -> Array {
    let (d0, d1, d2) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let src = a.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..d0 {
        let base = b * d1 * d2;
        for i in 0..d1 {
            for j in 0..d2 {
                out[base + j * d1 + i] = src[base + i * d2 + j];
            }
        }
    }
    Array::from_parts(vec![d0, d2, d1], out)
}

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn axis_sum(a: &Array, axis: usize) -> Array {
    let (outer, mid, inner) = split(a.shape(), axis);
    let src = a.data();
    let mut out = vec![0.0; mid];
    for o in 0..outer {
        for (m, acc) in out.iter_mut().enumerate() {
            let start = (o * mid + m) * inner;
            *acc += src[start..start + inner].iter().sum::<f64>();
        }
    }
    Array::from_parts(vec![mid], out)
}

pub(crate) fn axis_broadcast(v: &Array, shape: &[usize], axis: usize) -> Array {
    let (outer, mid, inner) = split(shape, axis);
    let src = v.data();
    let mut out = Vec::with_capacity(outer * mid * inner);
    for _ in 0..outer {
        for &value in src.iter().take(mid) {
            out.extend(std::iter::repeat_n(value, inner));
        }
    }
    Array::from_parts(shape.to_vec(), out)
}

/// Geometry of a 2-D convolution over an `[n, c, h, w]` input with a square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub(crate) fn new(input: &[usize], k: usize, stride: usize, pad: usize) -> Option<Self> {
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub(crate) fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub(crate) fn patch(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Lays out every receptive field as a row: `[n*oh*ow, c*k*k]`, with columns in
/// `(channel, ky, kx)` order to match a `[out, c, k, k]` weight viewed as `[out, c*k*k]`.
pub(crate) fn im2col(x: &Array, g: &ConvGeom) -> Array {
    let src = x.data();
    let patch = g.patch();
    let mut out = vec![0.0; g.rows() * patch];
    for_each_patch_run(g, |row_off, img_off, len| {
        out[row_off..row_off + len].copy_from_slice(&src[img_off..img_off + len]);
    });
    Array::from_parts(vec![g.rows(), patch], out)
}

/// Adjoint of [`im2col`]: scatters rows back into an `[n, c, h, w]` image, summing overlaps.
pub(crate) fn col2im(cols: &Array, g: &ConvGeom) -> Array {
    let src = cols.data();
    let mut out = vec![0.0; g.n * g.c * g.h * g.w];
    for_each_patch_run(g, |row_off, img_off, len| {
        for (o, v) in out[img_off..img_off + len]
            .iter_mut()
            .zip(&src[row_off..row_off + len])
        {
            *o += v;
        }
    });
    Array::from_parts(vec![g.n, g.c, g.h, g.w], out)
}

/// Visits every in-bounds stretch of a kernel row as
/// `(offset in the column matrix, offset in the image, length)`. With
/// stride 1 a stretch is contiguous on both sides; otherwise it has length 1.
fn for_each_patch_run(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let patch = g.patch();
    let (k, pad) = (g.k as isize, g.pad as isize);
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * patch;
                let x0 = (ox * g.stride) as isize - pad;
                let kx_lo = (-x0).clamp(0, k);
                let kx_hi = (g.w as isize - x0).clamp(0, k);
                if kx_lo >= kx_hi {
                    continue;
                }
                for c in 0..g.c {
                    let plane = (b * g.c + c) * g.h * g.w;
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let col = row + (c * g.k + ky) * g.k;
                        let img = plane + iy as usize * g.w;
                        if g.stride == 1 {
                            let len = (kx_hi - kx_lo) as usize;
                            f(col + kx_lo as usize, img + (x0 + kx_lo) as usize, len);
                        } else {
                            for kx in kx_lo..kx_hi {
                                f(col + kx as usize, img + (x0 + kx) as usize, 1);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn log_softmax(a: &Array) -> Array {
    let cols = a.shape()[1];
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Array::from_parts(a.shape().to_vec(), out)
}
