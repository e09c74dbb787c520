//! Complete-data cross moments from one smoothing pass.
//!
//! The EM machinery consumes six moment matrices,
//!
//! ```text
//! A = Σ_{t≥2} α̂_t α̂_t' + V_t,        B = Σ_{t≥2} α̂_t α̂_{t-1}' + V_{t,t-1},
//! C = Σ_{t≥2} α̂_{t-1} α̂_{t-1}' + V_{t-1},
//! D = Σ_t y_t y_t',    E = Σ_t y_t α̂_t',    F = Σ_t α̂_t α̂_t' + V_t,
//! ```
//!
//! plus L = D - ZE' - EZ' + ZFZ', all conditional on the full sample. The
//! dense path sums them straight off the smoother. The structured path
//! exploits that the state is a shift register: block i of α_t is μ_{t-i},
//! so smoothed covariances repeat along time diagonals,
//! Cov(μ_a, μ_b | Y) depending only on (a, b). Per step it computes just
//! the head and tail rows of V_t and of the lag-one covariance, banks them
//! by diagonal offset, and assembles the moment sums from prefix sums at
//! the end. That keeps the whole pass quadratic in the state dimension.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fc::StateStructure;
use crate::series::Series;
use crate::statespace::{kalman_smooth, StateSpace};

use super::structured::{filter_with_ops, ShiftOps};

/// Moment sums from one smoothing pass, conditional on the full sample.
#[derive(Debug, Clone)]
pub struct SmootherMoments {
    /// Σ_{t≥2} α̂_t α̂_t' + V_t.
    pub a: DMatrix<f64>,
    /// Σ_{t≥2} α̂_t α̂_{t-1}' + V_{t,t-1}.
    pub b: DMatrix<f64>,
    /// Σ_{t≥2} α̂_{t-1} α̂_{t-1}' + V_{t-1}.
    pub c: DMatrix<f64>,
    /// Σ_t y_t y_t'.
    pub d: DMatrix<f64>,
    /// Σ_t y_t α̂_t'.
    pub e: DMatrix<f64>,
    /// Σ_t α̂_t α̂_t' + V_t over the full sample.
    pub f: DMatrix<f64>,
    /// D - ZE' - EZ' + ZFZ', the smoothed measurement-error moment.
    pub l: DMatrix<f64>,
    /// E[α_1 α_1' | Y] = α̂_1 α̂_1' + V_1, for the initial-state terms.
    pub e1: DMatrix<f64>,
    /// Log likelihood of the sample at the parameters that produced the
    /// pass, a free byproduct of the filter.
    pub loglik: f64,
    /// Number of observations.
    pub n: usize,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
}

fn check_sample(model: &StateSpace, data: &Series) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::invalid(
            "moment accumulation needs at least two observations",
        ));
    }
    if data.ncols() != model.obs_dim() {
        return Err(Error::invalid(format!(
            "moments: data has {} columns, model expects {}",
            data.ncols(),
            model.obs_dim()
        )));
    }
    Ok(())
}

/// Dense moment pass: smooth, then sum. Cubic in the state dimension per
/// step; the reference the structured path is tested against, and the
/// fallback for systems without shift structure.
pub fn smoother_moments(model: &StateSpace, data: &Series) -> Result<SmootherMoments> {
    check_sample(model, data)?;
    let sm = kalman_smooth(model, data)?;
    let n = data.len();
    let k = model.state_dim();
    let p = model.obs_dim();

    let mut a = DMatrix::zeros(k, k);
    let mut b = DMatrix::zeros(k, k);
    let mut c = DMatrix::zeros(k, k);
    let mut d = DMatrix::zeros(p, p);
    let mut e = DMatrix::zeros(p, k);
    let mut f = DMatrix::zeros(k, k);

    for t in 0..n {
        let al = &sm.alpha[t];
        let outer = al * al.transpose() + &sm.cov[t];
        f += &outer;
        if t >= 1 {
            a += &outer;
            b += al * sm.alpha[t - 1].transpose() + &sm.lag_cov[t - 1];
        }
        if t + 1 < n {
            c += &outer;
        }
        let y = DVector::from_row_slice(data.row(t));
        d.ger(1.0, &y, &y, 1.0);
        e.ger(1.0, &y, al, 1.0);
    }
    let e1 = &sm.alpha[0] * sm.alpha[0].transpose() + &sm.cov[0];

    finish(model, a, b, c, d, e, f, e1, sm.filter.loglik, n)
}

/// Structured moment pass for shift-register systems. Same output as
/// [`smoother_moments`] up to floating-point reordering.
pub fn smoother_moments_structured(
    model: &StateSpace,
    structure: &StateStructure,
    data: &Series,
) -> Result<SmootherMoments> {
    check_sample(model, data)?;
    let ops = ShiftOps::new(model, structure)?;
    let filter = filter_with_ops(model, &ops, data)?;
    let n = data.len();
    let StateStructure { s, u, units } = *structure;
    let us = u * s;
    let k = us + units;
    let p = model.obs_dim();
    let z = &model.z;

    // Diagonal banks, indexed by 1-based time in block columns 1..=n.
    // sx[m] holds Cov(μ_a, μ_{a-m} | Y), tz[m] holds Cov(z_a, μ_{a-m} | Y),
    // cmz1 holds Cov(μ_a, z_{a-1} | Y), uz and uz1 the unit blocks.
    let mut sx: Vec<DMatrix<f64>> = (0..=u).map(|_| DMatrix::zeros(s, s * (n + 1))).collect();
    let mut tz: Vec<DMatrix<f64>> = (0..=u)
        .map(|_| DMatrix::zeros(units, s * (n + 1)))
        .collect();
    let mut cmz1 = DMatrix::<f64>::zeros(s, units * (n + 1));
    let mut uz = DMatrix::<f64>::zeros(units, units * (n + 1));
    let mut uz1 = DMatrix::<f64>::zeros(units, units * (n + 1));
    let mut mu_hat = DMatrix::<f64>::zeros(s, n + 1);
    let mut z_hat = DMatrix::<f64>::zeros(units, n + 1);

    // Head and tail rows of the identity, for the lag-one factor I - P N.
    let mut active_eye = DMatrix::<f64>::zeros(s + units, k);
    for j in 0..s {
        active_eye[(j, j)] = 1.0;
    }
    for i in 0..units {
        active_eye[(s + i, us + i)] = 1.0;
    }

    let mut r = DVector::<f64>::zeros(k);
    let mut n_cur = DMatrix::<f64>::zeros(k, k);
    let mut e1 = DMatrix::<f64>::zeros(k, k);
    for t in (0..n).rev() {
        let tau = t + 1;
        let gain = &filter.gain[t];
        let finv = &filter.finv[t];
        let zf = z.transpose() * finv;

        // r_{t-1} = Z'F⁻¹v + L'r and N_{t-1} = Z'F⁻¹Z + L'NL with
        // L = T - KZ expanded so every T product uses the shift structure.
        let kr = gain.transpose() * &r;
        r = &zf * &filter.v[t] + ops.ttvec(&r) - z.transpose() * kr;

        let nk = &n_cur * gain;
        let tnk = ops.ttmul(&nk);
        let m1 = &tnk * z;
        let knk = gain.transpose() * &nk;
        let tnt = ops.mul_t(&ops.ttmul(&n_cur));
        n_cur = &zf * z + tnt - &m1 - m1.transpose() + z.transpose() * knk * z;
        symmetrize(&mut n_cur);

        let p_t = &filter.p[t];
        // Active rows (head components and units) of the smoothed state.
        let p_active = DMatrix::from_fn(s + units, k, |i, j| {
            if i < s {
                p_t[(i, j)]
            } else {
                p_t[(us + i - s, j)]
            }
        });
        let mean_active = &p_active * &r;
        for j in 0..s {
            mu_hat[(j, tau)] = filter.a[t][j] + mean_active[j];
        }
        for i in 0..units {
            z_hat[(i, tau)] = filter.a[t][us + i] + mean_active[s + i];
        }

        // Active rows of V_t = P - P N P.
        let pn_active = &p_active * &n_cur;
        let v_active = &p_active - &pn_active * p_t;
        for m in 0..u {
            sx[m]
                .view_mut((0, tau * s), (s, s))
                .copy_from(&v_active.view((0, m * s), (s, s)));
            tz[m]
                .view_mut((0, tau * s), (units, s))
                .copy_from(&v_active.view((s, m * s), (units, s)));
        }
        uz.view_mut((0, tau * units), (units, units))
            .copy_from(&v_active.view((s, us), (units, units)));

        if t >= 1 {
            // Active rows of Cov(α_t, α_{t-1} | Y) = (I - P N_{t-1}) L_{t-1} P_{t-1},
            // restricted to the columns that carry new information: the
            // oldest lag block and the units of α_{t-1}.
            let m_active = &active_eye - &pn_active;
            let ml = ops.mul_t(&m_active) - (&m_active * &filter.gain[t - 1]) * z;
            let lag_active = &ml * filter.p[t - 1].columns((u - 1) * s, s + units);
            sx[u]
                .view_mut((0, tau * s), (s, s))
                .copy_from(&lag_active.view((0, 0), (s, s)));
            cmz1
                .view_mut((0, tau * units), (s, units))
                .copy_from(&lag_active.view((0, s), (s, units)));
            tz[u]
                .view_mut((0, tau * s), (units, s))
                .copy_from(&lag_active.view((s, 0), (units, s)));
            uz1.view_mut((0, tau * units), (units, units))
                .copy_from(&lag_active.view((s, s), (units, units)));
        } else {
            // Full first-period moment for the initial-state terms.
            let mut v1 = p_t - p_t * &n_cur * p_t;
            symmetrize(&mut v1);
            let alpha1 = &filter.a[0] + p_t * &r;
            e1 = &v1 + &alpha1 * alpha1.transpose();
        }
    }

    // Turn the diagonal banks into prefix sums over time.
    let prefix = |m: &mut DMatrix<f64>, width: usize| {
        if width == 0 {
            return;
        }
        for tau in 1..=n {
            let prev = m.view((0, (tau - 1) * width), (m.nrows(), width)).into_owned();
            let mut cur = m.view_mut((0, tau * width), (m.nrows(), width));
            cur += &prev;
        }
    };
    for m in sx.iter_mut() {
        prefix(m, s);
    }
    for m in tz.iter_mut() {
        prefix(m, s);
    }
    prefix(&mut cmz1, units);
    prefix(&mut uz, units);
    prefix(&mut uz1, units);

    let banks = Banks {
        s,
        u,
        units,
        n,
        sx,
        tz,
        cmz1,
        uz,
        uz1,
    };

    // Mean products, reconstructing each smoothed state from the head
    // series by the shift identity (presample values are exact zeros).
    let mut a_mean = DMatrix::zeros(k, k);
    let mut b_mean = DMatrix::zeros(k, k);
    let mut c_mean = DMatrix::zeros(k, k);
    let mut d = DMatrix::zeros(p, p);
    let mut e = DMatrix::zeros(p, k);
    let mut f_mean = DMatrix::zeros(k, k);
    let mut prev_alpha = DVector::<f64>::zeros(k);
    for tau in 1..=n {
        let mut alpha = DVector::<f64>::zeros(k);
        for i in 0..u {
            if tau > i {
                for j in 0..s {
                    alpha[i * s + j] = mu_hat[(j, tau - i)];
                }
            }
        }
        for i in 0..units {
            alpha[us + i] = z_hat[(i, tau)];
        }
        f_mean.ger(1.0, &alpha, &alpha, 1.0);
        if tau >= 2 {
            a_mean.ger(1.0, &alpha, &alpha, 1.0);
            b_mean.ger(1.0, &alpha, &prev_alpha, 1.0);
        }
        if tau <= n - 1 {
            c_mean.ger(1.0, &alpha, &alpha, 1.0);
        }
        let y = DVector::from_row_slice(data.row(tau - 1));
        d.ger(1.0, &y, &y, 1.0);
        e.ger(1.0, &y, &alpha, 1.0);
        prev_alpha = alpha;
    }

    let a = a_mean + banks.sum_v(2, n as isize);
    let b = b_mean + banks.sum_vlag();
    let c = c_mean + banks.sum_v(1, n as isize - 1);
    let f = f_mean + banks.sum_v(1, n as isize);

    finish(model, a, b, c, d, e, f, e1, filter.loglik, n)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &StateSpace,
    mut a: DMatrix<f64>,
    b: DMatrix<f64>,
    mut c: DMatrix<f64>,
    mut d: DMatrix<f64>,
    e: DMatrix<f64>,
    mut f: DMatrix<f64>,
    mut e1: DMatrix<f64>,
    loglik: f64,
    n: usize,
) -> Result<SmootherMoments> {
    symmetrize(&mut a);
    symmetrize(&mut c);
    symmetrize(&mut d);
    symmetrize(&mut f);
    symmetrize(&mut e1);
    let mut l = &d - &model.z * e.transpose() - &e * model.z.transpose()
        + &model.z * &f * model.z.transpose();
    symmetrize(&mut l);
    Ok(SmootherMoments {
        a,
        b,
        c,
        d,
        e,
        f,
        l,
        e1,
        loglik,
        n,
    })
}

/// Prefix-summed diagonal banks plus the window arithmetic that rebuilds
/// full moment matrices from them.
struct Banks {
    s: usize,
    u: usize,
    units: usize,
    n: usize,
    sx: Vec<DMatrix<f64>>,
    tz: Vec<DMatrix<f64>>,
    cmz1: DMatrix<f64>,
    uz: DMatrix<f64>,
    uz1: DMatrix<f64>,
}

impl Banks {
    /// Prefix value Σ_{a≤τ} of a bank, with τ clamped to the sample.
    fn at(m: &DMatrix<f64>, width: usize, n: usize, tau: isize) -> DMatrix<f64> {
        if tau <= 0 || width == 0 {
            return DMatrix::zeros(m.nrows(), width);
        }
        let t = (tau as usize).min(n);
        m.view((0, t * width), (m.nrows(), width)).into_owned()
    }

    fn window(m: &DMatrix<f64>, width: usize, n: usize, lo: isize, hi: isize) -> DMatrix<f64> {
        Self::at(m, width, n, hi) - Self::at(m, width, n, lo - 1)
    }

    /// Σ_{t=lo}^{hi} V_t as a full state-dimension matrix.
    fn sum_v(&self, lo: isize, hi: isize) -> DMatrix<f64> {
        let Banks { s, u, units, n, .. } = *self;
        let us = u * s;
        let k = us + units;
        let mut out = DMatrix::zeros(k, k);
        // Block (j, i) with j <= i sums Cov(μ_{t-j}, μ_{t-i}) = X(a, a-m)
        // over a = t - j; block (i, j) is its transpose.
        for i in 0..u {
            for j in 0..=i {
                let m = i - j;
                let w = Self::window(&self.sx[m], s, n, lo - j as isize, hi - j as isize);
                out.view_mut((j * s, i * s), (s, s)).copy_from(&w);
                if i != j {
                    out.view_mut((i * s, j * s), (s, s)).copy_from(&w.transpose());
                }
            }
        }
        for j in 0..u {
            let w = Self::window(&self.tz[j], s, n, lo, hi);
            out.view_mut((us, j * s), (units, s)).copy_from(&w);
            out.view_mut((j * s, us), (s, units)).copy_from(&w.transpose());
        }
        let w = Self::window(&self.uz, units, n, lo, hi);
        out.view_mut((us, us), (units, units)).copy_from(&w);
        out
    }

    /// Σ_{t=2}^{n} Cov(α_t, α_{t-1} | Y) as a full matrix.
    fn sum_vlag(&self) -> DMatrix<f64> {
        let Banks { s, u, units, n, .. } = *self;
        let ni = n as isize;
        let us = u * s;
        let k = us + units;
        let mut out = DMatrix::zeros(k, k);
        // Block (i, j) sums Cov(μ_{t-i}, μ_{t-1-j}); which argument is later
        // decides the orientation against the banks.
        for i in 0..u {
            for j in 0..u {
                let (ii, jj) = (i as isize, j as isize);
                let w = if ii <= jj + 1 {
                    let m = (jj + 1 - ii) as usize;
                    Self::window(&self.sx[m], s, n, 2 - ii, ni - ii)
                } else {
                    let m = (ii - jj - 1) as usize;
                    Self::window(&self.sx[m], s, n, 1 - jj, ni - 1 - jj).transpose()
                };
                out.view_mut((i * s, j * s), (s, s)).copy_from(&w);
            }
        }
        for j in 0..u {
            let w = Self::window(&self.tz[j + 1], s, n, 2, ni);
            out.view_mut((us, j * s), (units, s)).copy_from(&w);
        }
        for i in 1..u {
            let w = Self::window(&self.tz[i - 1], s, n, 1, ni - 1);
            out.view_mut((i * s, us), (s, units)).copy_from(&w.transpose());
        }
        let w = Self::window(&self.cmz1, units, n, 2, ni);
        out.view_mut((0, us), (s, units)).copy_from(&w);
        let w = Self::window(&self.uz1, units, n, 2, ni);
        out.view_mut((us, us), (units, units)).copy_from(&w);
        out
    }
}
