// Raw slice kernels behind the tensor ops. Shapes are validated by callers.

use super::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Fixed-order dot product with eight partial sums.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: T = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Geometry of one 2-D cross-correlation: an image of `channels×height×width`
/// scanned by a `kh×kw` window producing `out_h×out_w` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, out: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (out * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Unfolds `image` into `col[patch_len × positions]`.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, image: &[T], col: &mut [T]) {
    debug_assert_eq!(image.len(), g.image_len());
    debug_assert_eq!(col.len(), g.patch_len() * g.positions());
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ki, g.height) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.width..(iy + 1) * g.width];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kj, g.width) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto `image`, accumulating.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, col: &[T], image: &mut [T]) {
    debug_assert_eq!(image.len(), g.image_len());
    debug_assert_eq!(col.len(), g.patch_len() * g.positions());
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.height) else {
                        continue;
                    };
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kj, g.width) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `batch` images (`g` describes one image) with a
/// `filters×patch_len` kernel. Output is `batch×filters×positions`.
pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    filters: usize,
    input: &[T],
    kernel: &[T],
) -> Vec<T> {
    let (il, pl, p) = (g.image_len(), g.patch_len(), g.positions());
    let mut out = vec![T::zero(); batch * filters * p];
    let mut col = vec![T::zero(); pl * p];
    for n in 0..batch {
        im2col(g, &input[n * il..(n + 1) * il], &mut col);
        gemm_nn(
            filters,
            pl,
            p,
            kernel,
            &col,
            &mut out[n * filters * p..(n + 1) * filters * p],
        );
    }
    out
}

/// Adjoint of [`conv2d_forward`] with respect to its input. This is the
/// transposed convolution: `batch×filters×positions` maps to `batch` images.
pub(crate) fn conv2d_adjoint<T: Real>(
    g: &ConvGeom,
    batch: usize,
    filters: usize,
    grad_out: &[T],
    kernel: &[T],
) -> Vec<T> {
    let (il, pl, p) = (g.image_len(), g.patch_len(), g.positions());
    let mut out = vec![T::zero(); batch * il];
    let mut col = vec![T::zero(); pl * p];
    for n in 0..batch {
        col.fill(T::zero());
        gemm_tn(
            pl,
            filters,
            p,
            kernel,
            &grad_out[n * filters * p..(n + 1) * filters * p],
            &mut col,
        );
        col2im(g, &col, &mut out[n * il..(n + 1) * il]);
    }
    out
}

/// Gradient of `Σ ⟨conv2d(input, K), grad_out⟩` with respect to `K`.
pub(crate) fn conv2d_kernel_grad<T: Real>(
    g: &ConvGeom,
    batch: usize,
    filters: usize,
    input: &[T],
    grad_out: &[T],
) -> Vec<T> {
    let (il, pl, p) = (g.image_len(), g.patch_len(), g.positions());
    let mut dk = vec![T::zero(); filters * pl];
    let mut col = vec![T::zero(); pl * p];
    for n in 0..batch {
        im2col(g, &input[n * il..(n + 1) * il], &mut col);
        gemm_nt(
            filters,
            p,
            pl,
            &grad_out[n * filters * p..(n + 1) * filters * p],
            &col,
            &mut dk,
        );
    }
    dk
}
