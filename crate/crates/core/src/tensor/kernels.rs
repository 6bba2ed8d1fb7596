//! Convolution lowering (im2col / col2im) and GEMM dispatch.
//!
//! Both conv2d and deconv2d reduce to the same gather/scatter pair. A column
//! matrix has one row per `(channel, ky, kx)` tap and one column per grid
//! position `(oy, ox)`; the image coordinate it touches is
//! `oy * stride + ky - offset` (likewise for x). For conv2d the image is the
//! input and `offset` is the padding; for deconv2d the image is the output and
//! `offset` is the crop offset into the uncropped result.

/// Output length of a strided window sweep, `None` when the window never fits.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Leading crop offset when center-cropping `uncropped` down to `target`.
pub fn deconv_crop_offset(uncropped: usize, target: usize) -> usize {
    (uncropped - target) / 2
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lowering {
    pub channels: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub off_y: usize,
    pub off_x: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Lowering {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Inclusive-exclusive range of grid indices whose tap `k` lands inside
    /// an image axis of length `len`.
    fn valid_range(len: usize, k: usize, stride: usize, off: usize, grid: usize) -> (usize, usize) {
        // need 0 <= g*stride + k - off < len
        let lo = if off > k { (off - k).div_ceil(stride) } else { 0 };
        let hi = if len + off > k { (len + off - k - 1) / stride + 1 } else { 0 };
        (lo.min(grid), hi.min(grid).max(lo.min(grid)))
    }

    pub fn im2col(&self, img: &[f64], col: &mut [f64]) {
        debug_assert_eq!(img.len(), self.channels * self.img_h * self.img_w);
        debug_assert_eq!(col.len(), self.rows() * self.cols());
        let cols = self.cols();
        let s = self.stride;
        for c in 0..self.channels {
            let plane = &img[c * self.img_h * self.img_w..(c + 1) * self.img_h * self.img_w];
            for ky in 0..self.kh {
                let (ylo, yhi) = Self::valid_range(self.img_h, ky, s, self.off_y, self.grid_h);
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let out = &mut col[row * cols..(row + 1) * cols];
                    let (xlo, xhi) = Self::valid_range(self.img_w, kx, s, self.off_x, self.grid_w);
                    for oy in 0..self.grid_h {
                        let dst = &mut out[oy * self.grid_w..(oy + 1) * self.grid_w];
                        if oy < ylo || oy >= yhi || xlo >= xhi {
                            dst.fill(0.0);
                            continue;
                        }
                        let iy = oy * s + ky - self.off_y;
                        let src = &plane[iy * self.img_w..(iy + 1) * self.img_w];
                        dst[..xlo].fill(0.0);
                        dst[xhi..].fill(0.0);
                        if s == 1 {
                            let ix0 = xlo + kx - self.off_x;
                            dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                dst[ox] = src[ox * s + kx - self.off_x];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Lowering::im2col`]: scatter-add columns into `img`.
    pub fn col2im(&self, col: &[f64], img: &mut [f64]) {
        debug_assert_eq!(img.len(), self.channels * self.img_h * self.img_w);
        debug_assert_eq!(col.len(), self.rows() * self.cols());
        let cols = self.cols();
        let s = self.stride;
        for c in 0..self.channels {
            let plane = &mut img[c * self.img_h * self.img_w..(c + 1) * self.img_h * self.img_w];
            for ky in 0..self.kh {
                let (ylo, yhi) = Self::valid_range(self.img_h, ky, s, self.off_y, self.grid_h);
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (xlo, xhi) = Self::valid_range(self.img_w, kx, s, self.off_x, self.grid_w);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - self.off_y;
                        let line = &mut plane[iy * self.img_w..(iy + 1) * self.img_w];
                        let srow = &src[oy * self.grid_w..(oy + 1) * self.grid_w];
                        for ox in xlo..xhi {
                            line[ox * s + kx - self.off_x] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`; all buffers row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // the row/column strides chosen for each layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_matches_formula() {
        assert_eq!(conv_out_len(400, 5, 2, 2), Some(200));
        assert_eq!(conv_out_len(300, 5, 2, 2), Some(150));
        assert_eq!(conv_out_len(3, 5, 1, 0), None);
        assert_eq!(conv_out_len(16, 17, 1, 8), Some(16));
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let lw = Lowering {
            channels: 2,
            img_h: 5,
            img_w: 6,
            kh: 3,
            kw: 4,
            stride: 2,
            off_y: 1,
            off_x: 2,
            grid_h: 3,
            grid_w: 3,
        };
        let img: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let col_probe: Vec<f64> = (0..lw.rows() * lw.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; lw.rows() * lw.cols()];
        lw.im2col(&img, &mut col);
        let mut back = vec![0.0; 60];
        lw.col2im(&col_probe, &mut back);
        let lhs: f64 = col.iter().zip(&col_probe).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
