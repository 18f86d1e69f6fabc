//! Numeric kernels shared by the forward and backward passes.

use std::fmt::Debug;

use num_traits::Float;

pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha·A·B + beta·c` on raw strided storage.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices of
    /// the given shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major `c[m×n] = op(a)·op(b) + beta·c`, where `a` is stored `[m×k]`
/// (or `[k×m]` when `ta`) and `b` is stored `[k×n]` (or `[n×k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    assert_eq!(a.len(), m * k, "gemm: a has wrong size");
    assert_eq!(b.len(), k * n, "gemm: b has wrong size");
    assert_eq!(c.len(), m * n, "gemm: c has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above and the borrow checker keeps c disjoint from a and b.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

/// `out[rows×o] = inp[rows×i]·w[i×o] + bias`.
pub fn linear<T: Scalar>(out: &mut [T], inp: &[T], w: &[T], bias: &[T], rows: usize, i: usize, o: usize) {
    for r in 0..rows {
        out[r * o..(r + 1) * o].copy_from_slice(bias);
    }
    gemm(rows, o, i, inp, false, w, false, T::one(), out);
}

/// Backward of [`linear`]: accumulates into `dinp`, `dw`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    dinp: &mut [T],
    dw: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    w: &[T],
    rows: usize,
    i: usize,
    o: usize,
) {
    gemm(rows, i, o, dout, false, w, true, T::one(), dinp);
    gemm(i, o, rows, inp, true, dout, false, T::one(), dw);
    for r in 0..rows {
        for (d, &g) in db.iter_mut().zip(&dout[r * o..(r + 1) * o]) {
            *d = *d + g;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm over rows; writes the output plus the normalised input and
/// reciprocal standard deviation needed by the backward pass.
pub fn layer_norm<T: Scalar>(out: &mut [T], xhat: &mut [T], rstd: &mut [T], x: &[T], g: &[T], b: &[T], d: usize) {
    let eps = T::from_f64(LN_EPS);
    let inv_d = T::from_f64(1.0 / d as f64);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
}

/// Accumulates layer-norm gradients into `dx`, `dg`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    dout: &[T],
    xhat: &[T],
    rstd: &[T],
    g: &[T],
    d: usize,
) {
    let inv_d = T::from_f64(1.0 / d as f64);
    for r in 0..rstd.len() {
        let dy = &dout[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for j in 0..d {
            let dxh = dy[j] * g[j];
            mean_dxh = mean_dxh + dxh;
            mean_dxh_xh = mean_dxh_xh + dxh * xh[j];
            dg[j] = dg[j] + dy[j] * xh[j];
            db[j] = db[j] + dy[j];
        }
        mean_dxh = mean_dxh * inv_d;
        mean_dxh_xh = mean_dxh_xh * inv_d;
        for j in 0..d {
            let dxh = dy[j] * g[j];
            dx[r * d + j] = dx[r * d + j] + rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::from_f64(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// In-place softmax of a slice.
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `out += alpha·v`.
pub fn axpy<T: Scalar>(out: &mut [T], alpha: T, v: &[T]) {
    for (o, &x) in out.iter_mut().zip(v) {
        *o = *o + alpha * x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_agree_with_naive() {
        let (m, n, k) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let naive = |i: usize, j: usize| (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();
        let mut c = vec![0.0; m * n];
        gemm(m, n, k, &a, false, &b, false, 0.0, &mut c);
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm(m, n, k, &at, true, &bt, true, 0.0, &mut c2);
        for i in 0..m {
            for j in 0..n {
                assert!((c[i * n + j] - naive(i, j)).abs() < 1e-12);
                assert!((c2[i * n + j] - naive(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for i in -40..40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![1.0f32, 2.0, -3.0, 40.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
