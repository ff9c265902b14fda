//! Dense f64 kernels. Loop orders are chosen so the innermost loop is a
//! contiguous axpy or a lane-split dot product, both of which vectorize.

/// `c[m,n] += a[m,k] * b[k,n]`, register-blocked over 4 rows of `a` and
/// 16 or 8 columns of `b`; remaining rows/columns take a scalar path.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let mut j = 0;
        while j + 16 <= n {
            block::<16>(a, b, c, i, j, k, n);
            j += 16;
        }
        if j + 8 <= n {
            block::<8>(a, b, c, i, j, k, n);
            j += 8;
        }
        for r in i..i + 4 {
            for jj in j..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc = a[r * k + p].mul_add(b[p * n + jj], acc);
                }
                c[r * n + jj] += acc;
            }
        }
        i += 4;
    }
    for r in i..m {
        let crow = &mut c[r * n..(r + 1) * n];
        for p in 0..k {
            axpy(a[r * k + p], &b[p * n..(p + 1) * n], crow);
        }
    }
}

#[inline(always)]
fn block<const NR: usize>(a: &[f64], b: &[f64], c: &mut [f64], i: usize, j: usize, k: usize, n: usize) {
    let mut acc = [[0.0f64; NR]; 4];
    let rows: [&[f64]; 4] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    for p in 0..k {
        let bp: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().expect("block width");
        for r in 0..4 {
            let ar = rows[r][p];
            for l in 0..NR {
                acc[r][l] = ar.mul_add(bp[l], acc[r][l]);
            }
        }
    }
    for r in 0..4 {
        let dst = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
        for l in 0..NR {
            dst[l] += acc[r][l];
        }
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// Rows per gathered block in the transposed products.
const ROW_BLOCK: usize = 128;

fn nonzero_rows(g: &[f64], n: usize) -> Vec<usize> {
    g.chunks_exact(n.max(1))
        .enumerate()
        .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
        .map(|(i, _)| i)
        .collect()
}

/// `c[k,n] += a[m,k]^T * g[m,n]`. Rows where `g` is zero contribute nothing
/// and are skipped, which is most rows below a max-pool.
pub fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let rows = nonzero_rows(g, n);
    let mut at = Vec::with_capacity(k * ROW_BLOCK);
    let mut gb = Vec::with_capacity(ROW_BLOCK * n);
    for block in rows.chunks(ROW_BLOCK) {
        let len = block.len();
        at.clear();
        at.resize(k * len, 0.0);
        gb.clear();
        for (r, &i) in block.iter().enumerate() {
            for p in 0..k {
                at[p * len + r] = a[i * k + p];
            }
            gb.extend_from_slice(&g[i * n..(i + 1) * n]);
        }
        gemm_nn(&at, &gb, c, k, len, n);
    }
}

/// `c[m,k] += g[m,n] * b[k,n]^T`
pub fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    if n >= 64 && (k < 16 || m < 64) {
        // few, long inner products
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                c[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
            }
        }
        return;
    }
    let bt = transpose(b, k, n);
    let rows = nonzero_rows(g, n);
    if rows.len() * 2 > m {
        gemm_nn(g, &bt, c, m, n, k);
        return;
    }
    let mut gb = Vec::with_capacity(ROW_BLOCK * n);
    let mut cb = Vec::with_capacity(ROW_BLOCK * k);
    for block in rows.chunks(ROW_BLOCK) {
        gb.clear();
        for &i in block {
            gb.extend_from_slice(&g[i * n..(i + 1) * n]);
        }
        cb.clear();
        cb.resize(block.len() * k, 0.0);
        gemm_nn(&gb, &bt, &mut cb, block.len(), n, k);
        for (r, &i) in block.iter().enumerate() {
            axpy(1.0, &cb[r * k..(r + 1) * k], &mut c[i * k..(i + 1) * k]);
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent partial sums, combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Geometry of a 2-D convolution over one `[C, H, W]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Output columns `ox` whose input column `ox*stride + kx - padding`
    /// lies inside the image, as a half-open range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let ow = self.out_width();
        let lo = self.padding.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.width + self.padding > kx {
            ((self.width + self.padding - kx - 1) / self.stride + 1).min(ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// `cols[patch_len, out_len]`; zero padding outside the image.
    pub fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let ol = oh * ow;
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ol..(row + 1) * ol];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..oh {
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= self.height {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        out_row[..lo].fill(0.0);
                        out_row[hi..].fill(0.0);
                        let start = lo * self.stride + kx - self.padding;
                        if self.stride == 1 {
                            out_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                                *o = src[start + j * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds column gradients back onto the input image.
    pub fn col2im(&self, cols: &[f64], input_grad: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let ol = oh * ow;
        for c in 0..self.channels {
            let plane = &mut input_grad[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ol..(row + 1) * ol];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let start = lo * self.stride + kx - self.padding;
                        let g = &src[oy * ow + lo..oy * ow + hi];
                        if self.stride == 1 {
                            axpy(1.0, g, &mut dst[start..start + hi - lo]);
                        } else {
                            for (j, v) in g.iter().enumerate() {
                                dst[start + j * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}
