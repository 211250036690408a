//! Dense 2-D convolution kernels.
//!
//! The three functions are the partial derivatives of one trilinear form
//! `T(x, w, y) = sum y[n,o,oh,ow] * w[o,i,kh,kw] * x[n,i,oh*s+kh-p,ow*s+kw-p]`,
//! so each one's adjoint is expressed with the other two.

/// Spatial geometry shared by a convolution and its adjoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Spatial extent of the convolution input (the "wide" side).
    pub in_hw: (usize, usize),
    /// Spatial extent of the convolution output.
    pub out_hw: (usize, usize),
}

impl ConvGeom {
    pub fn forward(in_hw: (usize, usize), kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || kernel == 0 {
            return None;
        }
        let out = |n: usize| -> Option<usize> {
            let padded = n + 2 * pad;
            (padded >= kernel).then(|| (padded - kernel) / stride + 1)
        };
        Some(Self {
            kernel,
            stride,
            pad,
            in_hw,
            out_hw: (out(in_hw.0)?, out(in_hw.1)?),
        })
    }

    /// Geometry of a transposed convolution producing `in_hw` from `out_hw`.
    pub fn transposed(out_hw: (usize, usize), kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let wide = |n: usize| -> Option<usize> {
            ((n - 1) * stride + kernel).checked_sub(2 * pad).filter(|&v| v > 0)
        };
        let in_hw = (wide(out_hw.0)?, wide(out_hw.1)?);
        let g = Self::forward(in_hw, kernel, stride, pad)?;
        (g.out_hw == out_hw).then_some(g)
    }

    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// `y[n, co, oh, ow]` from `x[n, ci, h, w]` and `w[co, ci, k, k]`.
pub fn conv2d(x: &[f64], w: &[f64], batch: usize, ci: usize, co: usize, g: &ConvGeom) -> Vec<f64> {
    let (h, wd) = g.in_hw;
    let (oh, ow) = g.out_hw;
    let k = g.kernel;
    let mut y = vec![0.0; batch * co * oh * ow];
    for n in 0..batch {
        for o in 0..co {
            let ybase = (n * co + o) * oh * ow;
            for i in 0..ci {
                let xbase = (n * ci + i) * h * wd;
                let wbase = (o * ci + i) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w[wbase + kh * k + kw];
                        for r in 0..oh {
                            let Some(sr) = g.src(r, kh, h) else { continue };
                            for c in 0..ow {
                                if let Some(sc) = g.src(c, kw, wd) {
                                    y[ybase + r * ow + c] += wv * x[xbase + sr * wd + sc];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// `x[n, ci, h, w]` from `y[n, co, oh, ow]` and `w[co, ci, k, k]` (transposed convolution).
pub fn conv2d_transpose(y: &[f64], w: &[f64], batch: usize, ci: usize, co: usize, g: &ConvGeom) -> Vec<f64> {
    let (h, wd) = g.in_hw;
    let (oh, ow) = g.out_hw;
    let k = g.kernel;
    let mut x = vec![0.0; batch * ci * h * wd];
    for n in 0..batch {
        for o in 0..co {
            let ybase = (n * co + o) * oh * ow;
            for i in 0..ci {
                let xbase = (n * ci + i) * h * wd;
                let wbase = (o * ci + i) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w[wbase + kh * k + kw];
                        for r in 0..oh {
                            let Some(sr) = g.src(r, kh, h) else { continue };
                            for c in 0..ow {
                                if let Some(sc) = g.src(c, kw, wd) {
                                    x[xbase + sr * wd + sc] += wv * y[ybase + r * ow + c];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `w[co, ci, k, k]` from `x[n, ci, h, w]` and `y[n, co, oh, ow]`.
pub fn conv2d_weight(x: &[f64], y: &[f64], batch: usize, ci: usize, co: usize, g: &ConvGeom) -> Vec<f64> {
    let (h, wd) = g.in_hw;
    let (oh, ow) = g.out_hw;
    let k = g.kernel;
    let mut w = vec![0.0; co * ci * k * k];
    for n in 0..batch {
        for o in 0..co {
            let ybase = (n * co + o) * oh * ow;
            for i in 0..ci {
                let xbase = (n * ci + i) * h * wd;
                let wbase = (o * ci + i) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let mut acc = 0.0;
                        for r in 0..oh {
                            let Some(sr) = g.src(r, kh, h) else { continue };
                            for c in 0..ow {
                                if let Some(sc) = g.src(c, kw, wd) {
                                    acc += y[ybase + r * ow + c] * x[xbase + sr * wd + sc];
                                }
                            }
                        }
                        w[wbase + kh * k + kw] += acc;
                    }
                }
            }
        }
    }
    w
}
