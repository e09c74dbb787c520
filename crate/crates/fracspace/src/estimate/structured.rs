//! Filter pass that exploits the shift-register transition.
//!
//! The assembled transition matrix has diagonal companion blocks over the
//! fractional lags and a diagonal tail for the short-memory units, so
//! multiplying by T or T' touches only u·s + units nontrivial rows; the
//! remaining rows are copies. Routing every product through that structure
//! turns the cubic-in-state-dimension filter steps into quadratic ones,
//! which is what makes long autoregressive truncations (state dimension 50
//! and up) affordable inside an estimation loop.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fc::StateStructure;
use crate::series::Series;
use crate::statespace::{invert_innovation, FilterOutput, StateSpace};

/// The transition in structured form: head coefficients a_j per fractional
/// component and lag, and the unit AR coefficients.
pub(crate) struct ShiftOps {
    s: usize,
    u: usize,
    /// ar[lag][j] is the companion entry feeding component j from lag block
    /// `lag`, i.e. the diagonal of A_{lag+1}.
    ar: Vec<DVector<f64>>,
    /// Unit AR coefficients, the diagonal tail of T.
    phi: Vec<f64>,
}

impl ShiftOps {
    /// Extracts the structured form of `model.t`, verifying that the matrix
    /// really has the companion-plus-diagonal pattern.
    pub(crate) fn new(model: &StateSpace, structure: &StateStructure) -> Result<ShiftOps> {
        let StateStructure { s, u, units } = *structure;
        let k = structure.state_dim();
        if model.state_dim() != k {
            return Err(Error::invalid(format!(
                "state structure implies dimension {k}, system has {}",
                model.state_dim()
            )));
        }
        let ar: Vec<DVector<f64>> = (0..u)
            .map(|lag| DVector::from_fn(s, |j, _| model.t[(j, lag * s + j)]))
            .collect();
        let phi: Vec<f64> = (0..units).map(|i| model.t[(u * s + i, u * s + i)]).collect();

        // Rebuild T from the extracted pieces; any leftover entry means the
        // system was not assembled with this layout.
        let mut check = DMatrix::zeros(k, k);
        for (lag, a) in ar.iter().enumerate() {
            for j in 0..s {
                check[(j, lag * s + j)] = a[j];
            }
        }
        for lag in 1..u {
            for j in 0..s {
                check[(lag * s + j, (lag - 1) * s + j)] = 1.0;
            }
        }
        for (i, &f) in phi.iter().enumerate() {
            check[(u * s + i, u * s + i)] = f;
        }
        if check != model.t {
            return Err(Error::invalid(
                "transition matrix does not match the declared state structure",
            ));
        }
        // The moment bookkeeping treats presample states as exact zeros,
        // which holds only for the deterministic start the assembler builds.
        if model.a1.iter().any(|&v| v != 0.0) {
            return Err(Error::invalid(
                "structured pass requires a zero initial state mean",
            ));
        }
        for i in 0..k {
            for j in 0..k {
                let in_head = i < s && j < s;
                let on_unit_diag = i == j && i >= u * s;
                if !in_head && !on_unit_diag && model.p1[(i, j)] != 0.0 {
                    return Err(Error::invalid(
                        "structured pass requires the deterministic-start initial covariance",
                    ));
                }
            }
        }
        Ok(ShiftOps { s, u, ar, phi })
    }

    /// T m for a matrix with any number of columns.
    pub(crate) fn tmul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (s, u) = (self.s, self.u);
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (lag, a) in self.ar.iter().enumerate() {
            for j in 0..s {
                if a[j] != 0.0 {
                    for c in 0..m.ncols() {
                        out[(j, c)] += a[j] * m[(lag * s + j, c)];
                    }
                }
            }
        }
        if u > 1 {
            out.view_mut((s, 0), ((u - 1) * s, m.ncols()))
                .copy_from(&m.rows(0, (u - 1) * s));
        }
        for (i, &f) in self.phi.iter().enumerate() {
            for c in 0..m.ncols() {
                out[(u * s + i, c)] = f * m[(u * s + i, c)];
            }
        }
        out
    }

    /// T' m.
    pub(crate) fn ttmul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (s, u) = (self.s, self.u);
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (lag, a) in self.ar.iter().enumerate() {
            for j in 0..s {
                let r = lag * s + j;
                for c in 0..m.ncols() {
                    let mut acc = a[j] * m[(j, c)];
                    if lag + 1 < u {
                        acc += m[((lag + 1) * s + j, c)];
                    }
                    out[(r, c)] = acc;
                }
            }
        }
        for (i, &f) in self.phi.iter().enumerate() {
            for c in 0..m.ncols() {
                out[(u * s + i, c)] = f * m[(u * s + i, c)];
            }
        }
        out
    }

    /// m T, acting on the columns.
    pub(crate) fn mul_t(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (s, u) = (self.s, self.u);
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (lag, a) in self.ar.iter().enumerate() {
            for j in 0..s {
                let mut col = out.column_mut(lag * s + j);
                if a[j] != 0.0 {
                    col.axpy(a[j], &m.column(j), 1.0);
                }
                if lag + 1 < u {
                    col.axpy(1.0, &m.column((lag + 1) * s + j), 1.0);
                }
            }
        }
        for (i, &f) in self.phi.iter().enumerate() {
            out.column_mut(u * s + i).axpy(f, &m.column(u * s + i), 0.0);
        }
        out
    }

    /// m T'.
    pub(crate) fn mul_tt(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (s, u) = (self.s, self.u);
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (lag, a) in self.ar.iter().enumerate() {
            for j in 0..s {
                if a[j] != 0.0 {
                    out.column_mut(j).axpy(a[j], &m.column(lag * s + j), 1.0);
                }
            }
        }
        if u > 1 {
            out.view_mut((0, s), (m.nrows(), (u - 1) * s))
                .copy_from(&m.columns(0, (u - 1) * s));
        }
        for (i, &f) in self.phi.iter().enumerate() {
            out.column_mut(u * s + i).axpy(f, &m.column(u * s + i), 0.0);
        }
        out
    }

    /// T v for a vector.
    pub(crate) fn tvec(&self, v: &DVector<f64>) -> DVector<f64> {
        let (s, u) = (self.s, self.u);
        let mut out = DVector::zeros(v.len());
        for j in 0..s {
            out[j] = self
                .ar
                .iter()
                .enumerate()
                .map(|(lag, a)| a[j] * v[lag * s + j])
                .sum();
        }
        for i in s..u * s {
            out[i] = v[i - s];
        }
        for (i, &f) in self.phi.iter().enumerate() {
            out[u * s + i] = f * v[u * s + i];
        }
        out
    }

    /// T' v.
    pub(crate) fn ttvec(&self, v: &DVector<f64>) -> DVector<f64> {
        let (s, u) = (self.s, self.u);
        let mut out = DVector::zeros(v.len());
        for (lag, a) in self.ar.iter().enumerate() {
            for j in 0..s {
                let mut acc = a[j] * v[j];
                if lag + 1 < u {
                    acc += v[(lag + 1) * s + j];
                }
                out[lag * s + j] = acc;
            }
        }
        for (i, &f) in self.phi.iter().enumerate() {
            out[u * s + i] = f * v[u * s + i];
        }
        out
    }
}

/// Kalman filter pass routed through the shift structure. Produces the same
/// output as [`crate::statespace::kalman_filter`] up to floating-point
/// reordering, in O(state²) per step instead of O(state³).
pub fn filter_structured(
    model: &StateSpace,
    structure: &StateStructure,
    data: &Series,
) -> Result<FilterOutput> {
    let ops = ShiftOps::new(model, structure)?;
    filter_with_ops(model, &ops, data)
}

pub(crate) fn filter_with_ops(
    model: &StateSpace,
    ops: &ShiftOps,
    data: &Series,
) -> Result<FilterOutput> {
    let p_dim = model.obs_dim();
    let n = data.len();
    if data.ncols() != p_dim {
        return Err(Error::invalid(format!(
            "filter: data has {} columns, model expects {p_dim}",
            data.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("filter: empty sample"));
    }

    let rqr = model.rqr();
    let h_diag = DMatrix::from_diagonal(&model.h);
    let mut a = Vec::with_capacity(n + 1);
    let mut p = Vec::with_capacity(n + 1);
    let mut v_all = Vec::with_capacity(n);
    let mut finv_all = Vec::with_capacity(n);
    let mut gain_all = Vec::with_capacity(n);
    a.push(model.a1.clone());
    p.push(model.p1.clone());

    let mut loglik = -0.5 * (n * p_dim) as f64 * (2.0 * std::f64::consts::PI).ln();
    for t in 0..n {
        let a_t = &a[t];
        let p_t = &p[t];
        let y_t = DVector::from_row_slice(data.row(t));

        let pzt = p_t * model.z.transpose();
        let f = &model.z * &pzt + &h_diag;
        let (finv, logdet) = invert_innovation(&f, t)?;
        let v = y_t - &model.z * a_t;

        loglik -= 0.5 * (logdet + (v.transpose() * &finv * &v)[(0, 0)]);

        let tpzt = ops.tmul(&pzt);
        let gain = &tpzt * &finv;
        let a_next = ops.tvec(a_t) + &gain * &v;
        // T P L' = T P T' - (T P Z') K', with both factors reusing the
        // structured products.
        let tpt = ops.mul_tt(&ops.tmul(p_t));
        let mut p_next = tpt - &gain * tpzt.transpose() + &rqr;
        p_next = (&p_next + p_next.transpose()) * 0.5;

        a.push(a_next);
        p.push(p_next);
        v_all.push(v);
        finv_all.push(finv);
        gain_all.push(gain);
    }

    if !loglik.is_finite() {
        return Err(Error::Filter {
            t: n,
            reason: "log likelihood is not finite".into(),
        });
    }
    Ok(FilterOutput {
        loglik,
        a,
        p,
        v: v_all,
        finv: finv_all,
        gain: gain_all,
    })
}
