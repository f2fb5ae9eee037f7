//! Shared dense linear-algebra helpers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization with escalating diagonal jitter.
///
/// A first attempt is made without jitter. On failure, `eps * mean(diag)` is
/// added to the diagonal with `eps` escalating from 1e-10 by factors of 10 up
/// to 1e-6; if the last attempt still fails the error is returned. The jitter
/// actually used is reported so callers can expose it.
pub fn jittered_cholesky(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation(
            "covariance matrix has non-finite entries".into(),
        ));
    }
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok((chol, 0.0));
    }
    let mean_diag = k.diagonal().sum() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut eps = 1e-10;
    while eps <= 1e-6 {
        let jitter = eps * scale;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            return Ok((chol, jitter));
        }
        eps *= 10.0;
    }
    Err(Error::CholeskyFailure { scale: mean_diag })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_matrix_needs_no_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (_, jitter) = jittered_cholesky(&k).unwrap();
        assert_eq!(jitter, 0.0);
    }

    #[test]
    fn rank_deficient_matrix_gets_jitter() {
        // two identical rows/cols: PSD but singular
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match jittered_cholesky(&k) {
            Ok((_, jitter)) => assert!(jitter > 0.0),
            Err(e) => panic!("expected jittered success, got {e}"),
        }
    }

    #[test]
    fn indefinite_matrix_fails() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(jittered_cholesky(&k).is_err());
    }
}
