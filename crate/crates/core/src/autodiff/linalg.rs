use super::var::Var;
use crate::error::{Result, SeldError};

/// `c = op(a) · op(b) + beta · c` for row-major buffers.
///
/// `a` holds an `m×k` matrix, or its `k×m` transpose when `ta` is set;
/// likewise `b` is `k×n` or `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c[..m * n].iter_mut() {
            *x *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
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

impl Var {
    /// Matrix product.
    ///
    /// * `[.., M, K] × [K, N] -> [.., M, N]` (shared right operand)
    /// * `[B.., M, K] × [B.., K, N] -> [B.., M, N]` (batched, equal leading dims)
    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        let a = self.shape().to_vec();
        let b = rhs.shape().to_vec();
        if a.len() < 2 || b.len() < 2 {
            return Err(SeldError::shape("matmul", format!("need rank >= 2, got {a:?} x {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(SeldError::shape("matmul", format!("inner dims differ: {a:?} x {b:?}")));
        }
        let shared = b.len() == 2;
        if !shared && a[..a.len() - 2] != b[..b.len() - 2] {
            return Err(SeldError::shape("matmul", format!("batch dims differ: {a:?} x {b:?}")));
        }
        let batch: usize = a[..a.len() - 2].iter().product();
        let mut out_shape = a[..a.len() - 2].to_vec();
        out_shape.extend([m, n]);

        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value();
            let bv = rhs.value();
            if shared {
                gemm(batch * m, k, n, &av, false, &bv, false, &mut out, 0.0);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..],
                        false,
                        &bv[i * k * n..],
                        false,
                        &mut out[i * m * n..],
                        0.0,
                    );
                }
            }
        }
        Ok(Var::from_op(
            out,
            out_shape,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _, parents| {
                let (pa, pb) = (&parents[0], &parents[1]);
                if pa.requires_grad() {
                    let bv = pb.value();
                    pa.with_grad_mut(|ga| {
                        if shared {
                            gemm(batch * m, n, k, g, false, &bv, true, ga, 1.0);
                        } else {
                            for i in 0..batch {
                                gemm(m, n, k, &g[i * m * n..], false, &bv[i * k * n..], true, &mut ga[i * m * k..], 1.0);
                            }
                        }
                    });
                }
                if pb.requires_grad() {
                    let av = pa.value();
                    pb.with_grad_mut(|gb| {
                        if shared {
                            gemm(k, batch * m, n, &av, true, g, false, gb, 1.0);
                        } else {
                            for i in 0..batch {
                                gemm(k, m, n, &av[i * m * k..], true, &g[i * m * n..], false, &mut gb[i * k * n..], 1.0);
                            }
                        }
                    });
                }
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let a = Var::param(vec![1., 2., 3., 4., 5., 6.], &[2, 3]).unwrap();
        let b = Var::param(vec![1., 0., 0., 1., 1., 1.], &[3, 2]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_vec(), vec![4., 5., 10., 11.]);
        c.sum_all().backward().unwrap();
        // d(sum)/dA = 1 · B^T row sums
        assert_eq!(a.grad().unwrap(), vec![1., 1., 2., 1., 1., 2.]);
        assert_eq!(b.grad().unwrap(), vec![5., 5., 7., 7., 9., 9.]);
    }

    #[test]
    fn inner_mismatch() {
        let a = Var::zeros(&[2, 3]);
        let b = Var::zeros(&[2, 2]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transposed_gemm() {
        // A^T stored as 3x2 for a 2x3 A
        let at = [1., 4., 2., 5., 3., 6.];
        let b = [1., 0., 0., 1., 1., 1.];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &at, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [4., 5., 10., 11.]);
    }
}
