//! Dense 2-D matrix products used by the graph ops and the convolution
//! lowering. All variants produce row-major outputs with a fixed
//! accumulation order for reproducibility.

use crate::error::NnError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_2d<E: Scalar>(op: &'static str, t: &Tensor<E>) -> Result<(usize, usize), NnError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(NnError::RankMismatch {
            op,
            expected: 2,
            got: other.to_vec(),
        }),
    }
}

/// `a (m×k) · b (k×n)`.
pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>, NnError> {
    let (m, ka) = check_2d("matmul", a)?;
    let (kb, n) = check_2d("matmul", b)?;
    if ka != kb {
        return Err(NnError::ShapeMismatch {
            op: "matmul",
            expected: format!("inner dims to agree, lhs {:?}", a.shape()),
            got: format!("rhs {:?}", b.shape()),
        });
    }
    let mut out = vec![E::zero(); m * n];
    E::gemm(
        m,
        ka,
        n,
        a.data(),
        ka as isize,
        1,
        b.data(),
        n as isize,
        1,
        &mut out,
    );
    Tensor::from_vec(&[m, n], out)
}

/// `a (m×n) · bᵀ` where `b` is stored `(k×n)`; result is `m×k`.
pub fn matmul_nt<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>, NnError> {
    let (m, na) = check_2d("matmul_nt", a)?;
    let (k, nb) = check_2d("matmul_nt", b)?;
    if na != nb {
        return Err(NnError::ShapeMismatch {
            op: "matmul_nt",
            expected: format!("shared n dim, lhs {:?}", a.shape()),
            got: format!("rhs {:?}", b.shape()),
        });
    }
    let mut out = vec![E::zero(); m * k];
    E::gemm(
        m,
        na,
        k,
        a.data(),
        na as isize,
        1,
        b.data(),
        1,
        nb as isize,
        &mut out,
    );
    Tensor::from_vec(&[m, k], out)
}

/// `aᵀ · b` where `a` is stored `(m×k)` and `b` is `(m×n)`; result is `k×n`.
pub fn matmul_tn<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>, NnError> {
    let (ma, k) = check_2d("matmul_tn", a)?;
    let (mb, n) = check_2d("matmul_tn", b)?;
    if ma != mb {
        return Err(NnError::ShapeMismatch {
            op: "matmul_tn",
            expected: format!("shared m dim, lhs {:?}", a.shape()),
            got: format!("rhs {:?}", b.shape()),
        });
    }
    let mut out = vec![E::zero(); k * n];
    E::gemm(
        k,
        ma,
        n,
        a.data(),
        1,
        k as isize,
        b.data(),
        n as isize,
        1,
        &mut out,
    );
    Tensor::from_vec(&[k, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[4, 3], &(1..=12).map(|v| v as f64).collect::<Vec<_>>());
        // a · bᵀ : (2×3)·(3×4)
        let nt = matmul_nt(&a, &b).unwrap();
        let bt = t(
            &[3, 4],
            &[1.0, 4.0, 7.0, 10.0, 2.0, 5.0, 8.0, 11.0, 3.0, 6.0, 9.0, 12.0],
        );
        assert_eq!(nt.data(), matmul(&a, &bt).unwrap().data());

        // aᵀ · a2 : (3×2)·(2×3)
        let tn = matmul_tn(&a, &a).unwrap();
        let at = t(&[3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(tn.data(), matmul(&at, &a).unwrap().data());
    }

    #[test]
    fn inner_dim_mismatch_is_an_error() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(matmul(&a, &b).is_err());
    }
}
