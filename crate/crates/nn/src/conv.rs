//! im2col lowering and pooling kernels over NCHW tensors.

/// Geometry of one convolution applied to a `c × h × w` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.r) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.s) / self.stride + 1
    }

    /// Output positions per channel.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Length of one patch: `C·R·S`, the EMAC operand count.
    pub fn patch_len(&self) -> usize {
        self.c * self.r * self.s
    }

    fn valid(&self) -> bool {
        self.stride > 0 && self.h + 2 * self.pad >= self.r && self.w + 2 * self.pad >= self.s
    }
}

/// Patches of one image as rows: `positions × (C·R·S)`, in (c, r, s) order
/// to match the `K × C × R × S` weight layout. Padding contributes zeros.
pub fn im2col(img: &[f64], g: &ConvGeom, out: &mut [f64]) {
    debug_assert!(g.valid());
    let (oh, ow, pl) = (g.out_h(), g.out_w(), g.patch_len());
    debug_assert_eq!(out.len(), oh * ow * pl);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut out[(oy * ow + ox) * pl..][..pl];
            let mut i = 0;
            for c in 0..g.c {
                let plane = &img[c * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.r {
                    let y = (oy * g.stride + ky) as isize - g.pad as isize;
                    for kx in 0..g.s {
                        let x = (ox * g.stride + kx) as isize - g.pad as isize;
                        row[i] = if y >= 0 && x >= 0 && (y as usize) < g.h && (x as usize) < g.w {
                            plane[y as usize * g.w + x as usize]
                        } else {
                            0.0
                        };
                        i += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch rows back onto the image.
pub fn col2im(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (oh, ow, pl) = (g.out_h(), g.out_w(), g.patch_len());
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * pl..][..pl];
            let mut i = 0;
            for c in 0..g.c {
                for ky in 0..g.r {
                    let y = (oy * g.stride + ky) as isize - g.pad as isize;
                    for kx in 0..g.s {
                        let x = (ox * g.stride + kx) as isize - g.pad as isize;
                        if y >= 0 && x >= 0 && (y as usize) < g.h && (x as usize) < g.w {
                            img[c * g.h * g.w + y as usize * g.w + x as usize] += row[i];
                        }
                        i += 1;
                    }
                }
            }
        }
    }
}

/// Check a convolution geometry; `None` if the kernel does not fit.
pub fn geometry(c: usize, h: usize, w: usize, r: usize, s: usize, stride: usize, pad: usize) -> Option<ConvGeom> {
    let g = ConvGeom { c, h, w, r, s, stride, pad };
    g.valid().then_some(g)
}

/// Pooling output side for a window `size` moved by `stride`.
pub fn pool_out(side: usize, size: usize, stride: usize) -> Option<usize> {
    (stride > 0 && size > 0 && side >= size).then(|| (side - size) / stride + 1)
}

/// Max pooling of one `h × w` plane; `arg` receives the flat input index of
/// each maximum (first one on ties).
pub fn max_pool_plane(x: &[f64], h: usize, w: usize, size: usize, stride: usize, out: &mut [f64], arg: &mut [usize]) {
    let (oh, ow) = (pool_out(h, size, stride).unwrap(), pool_out(w, size, stride).unwrap());
    for oy in 0..oh {
        for ox in 0..ow {
            let mut best = (oy * stride) * w + ox * stride;
            for ky in 0..size {
                for kx in 0..size {
                    let i = (oy * stride + ky) * w + ox * stride + kx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
            }
            out[oy * ow + ox] = x[best];
            arg[oy * ow + ox] = best;
        }
    }
}

pub fn avg_pool_plane(x: &[f64], h: usize, w: usize, size: usize, stride: usize, out: &mut [f64]) {
    let (oh, ow) = (pool_out(h, size, stride).unwrap(), pool_out(w, size, stride).unwrap());
    let norm = 1.0 / (size * size) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..size {
                for kx in 0..size {
                    acc += x[(oy * stride + ky) * w + ox * stride + kx];
                }
            }
            out[oy * ow + ox] = acc * norm;
        }
    }
}

pub fn avg_pool_plane_backward(dy: &[f64], h: usize, w: usize, size: usize, stride: usize, dx: &mut [f64]) {
    let (oh, ow) = (pool_out(h, size, stride).unwrap(), pool_out(w, size, stride).unwrap());
    let norm = 1.0 / (size * size) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let g = dy[oy * ow + ox] * norm;
            for ky in 0..size {
                for kx in 0..size {
                    dx[(oy * stride + ky) * w + ox * stride + kx] += g;
                }
            }
        }
    }
}
