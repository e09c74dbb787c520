//! Angle between estimated and true cointegration spaces.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sine of the angle between the space spanned by `b_hat` and the orthogonal
/// complement of the space spanned by `lambda`; zero when `b_hat` is a
/// perfect cointegration estimate and one when it lies inside the span of
/// the loadings.
///
/// With equal column counts this is |tr(Λ′B̂)| / (‖Λ‖ ‖B̂‖) with Frobenius
/// norms. With different column counts the same quantity is computed from
/// principal angles: the largest singular value of Q_Λ′ Q_B̂, where Q_X is an
/// orthonormal basis of the column space of X. Both forms agree whenever the
/// matrices have one column each.
pub fn cointegration_angle(lambda: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    if lambda.nrows() != b_hat.nrows() || lambda.is_empty() || b_hat.is_empty() {
        return Err(Error::invalid(format!(
            "cointegration_angle: {}x{} against {}x{}",
            lambda.nrows(),
            lambda.ncols(),
            b_hat.nrows(),
            b_hat.ncols()
        )));
    }
    let norm_l = lambda.norm();
    let norm_b = b_hat.norm();
    if norm_l == 0.0 || norm_b == 0.0 {
        return Err(Error::invalid("cointegration_angle: zero matrix"));
    }
    if lambda.ncols() == b_hat.ncols() {
        let t = (lambda.transpose() * b_hat).trace();
        return Ok((t.abs() / (norm_l * norm_b)).min(1.0));
    }
    let q_l = orthonormal_basis(lambda)?;
    let q_b = orthonormal_basis(b_hat)?;
    let overlap = q_l.transpose() * q_b;
    let sv = overlap.svd(false, false).singular_values;
    Ok(sv.max().min(1.0))
}

/// Orthonormal basis of the column space, through the singular vectors with
/// non-negligible singular values.
fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::invalid("svd failed"))?;
    let sv = &svd.singular_values;
    let tol = sv.max() * 1e-12;
    let cols: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > tol).collect();
    if cols.is_empty() {
        return Err(Error::invalid("cointegration_angle: zero matrix"));
    }
    Ok(DMatrix::from_fn(m.nrows(), cols.len(), |i, j| {
        u[(i, cols[j])]
    }))
}

/// Orthonormal basis of the orthogonal complement of the column space of a
/// full-column-rank matrix, sized nrows × (nrows − rank). Computed from the
/// eigenvectors of the residual projector, whose eigenvalues are exactly
/// zero and one up to rounding.
pub(crate) fn orth_complement(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = m.nrows();
    let q = orthonormal_basis(m)?;
    if q.ncols() >= p {
        return Err(Error::invalid("orth_complement: full column space"));
    }
    let projector = DMatrix::identity(p, p) - &q * q.transpose();
    let eig = projector.symmetric_eigen();
    let keep: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    Ok(DMatrix::from_fn(p, keep.len(), |i, j| {
        eig.eigenvectors[(i, keep[j])]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[a, b])
    }

    #[test]
    fn the_worked_example() {
        let angle = cointegration_angle(&vec2(1.0, 1.0), &vec2(1.0, -1.1)).unwrap();
        assert!((angle - 0.047565).abs() < 1e-6, "{angle}");
    }

    #[test]
    fn orthogonal_spaces_score_zero() {
        let angle = cointegration_angle(&vec2(1.0, 1.0), &vec2(1.0, -1.0)).unwrap();
        assert!(angle.abs() < 1e-15);

        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let rest = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let angle = cointegration_angle(&e1, &rest).unwrap();
        assert!(angle.abs() < 1e-12);
    }

    #[test]
    fn aligned_spaces_score_one() {
        let angle = cointegration_angle(&vec2(1.0, 2.0), &vec2(-3.0, -6.0)).unwrap();
        assert!((angle - 1.0).abs() < 1e-15);

        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let containing = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let angle = cointegration_angle(&e1, &containing).unwrap();
        assert!((angle - 1.0).abs() < 1e-12);
    }

    #[test]
    fn the_angle_ignores_scale_and_column_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut draw = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
        };
        let lambda = draw(5, 1);
        let b = draw(5, 3);
        let reference = cointegration_angle(&lambda, &b).unwrap();

        let mut permuted = DMatrix::zeros(5, 3);
        permuted.set_column(0, &(b.column(2) * -4.0));
        permuted.set_column(1, &(b.column(0) * 0.03));
        permuted.set_column(2, &(b.column(1) * 11.0));
        let shuffled = cointegration_angle(&lambda, &permuted).unwrap();
        assert!((reference - shuffled).abs() < 1e-12);

        let scaled = cointegration_angle(&(lambda * 7.5), &b).unwrap();
        assert!((reference - scaled).abs() < 1e-12);
    }

    #[test]
    fn zero_inputs_are_rejected() {
        let zero = DMatrix::zeros(2, 1);
        assert!(cointegration_angle(&zero, &vec2(1.0, 1.0)).is_err());
        assert!(cointegration_angle(&vec2(1.0, 1.0), &zero).is_err());
        assert!(cointegration_angle(&vec2(1.0, 1.0), &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn complements_span_the_nullspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let c = orth_complement(&m).unwrap();
        assert_eq!((c.nrows(), c.ncols()), (6, 4));
        assert!((m.transpose() * &c).amax() < 1e-10);
        assert!((c.transpose() * &c - DMatrix::identity(4, 4)).amax() < 1e-10);
        let angle = cointegration_angle(&m, &c).unwrap();
        assert!(angle < 1e-10);
    }
}
