//! Smooth reparameterization of the constrained parameters onto `R^k`.
//!
//! The quasi-Newton stage runs in an unconstrained coordinate system:
//! memory parameters map through an affine logistic onto the admissible
//! interval, autoregressive coefficients and shock correlations through
//! `tanh` onto (-1, 1), noise variances through `exp`, and loadings stay as
//! they are. Every map is a smooth bijection onto the interior, so trial
//! points along a line search can never leave the parameter space.

use nalgebra::DVector;

use crate::arma::{D_MAX, D_MIN};
use crate::fc::{FCModelSpec, ParamVector};

#[derive(Clone, Copy)]
enum Kind {
    Interval { lo: f64, hi: f64 },
    Unit,
    Positive,
    Identity,
}

pub(super) struct Transform {
    kinds: Vec<Kind>,
}

impl Transform {
    pub(super) fn for_spec(spec: &FCModelSpec) -> Transform {
        let layout = spec.layout();
        let mut kinds = vec![Kind::Identity; layout.total_len()];
        for idx in layout.d_range() {
            kinds[idx] = Kind::Interval {
                lo: D_MIN,
                hi: D_MAX,
            };
        }
        for idx in layout.phi_range() {
            kinds[idx] = Kind::Unit;
        }
        for idx in layout.corr_range() {
            kinds[idx] = Kind::Unit;
        }
        for idx in layout.h_range() {
            kinds[idx] = Kind::Positive;
        }
        Transform { kinds }
    }

    /// Maps a constrained parameter vector to the unconstrained coordinates,
    /// nudging boundary values into the interior first.
    pub(super) fn unbounded(&self, theta: &ParamVector) -> Vec<f64> {
        theta
            .0
            .iter()
            .zip(&self.kinds)
            .map(|(&x, kind)| match *kind {
                Kind::Interval { lo, hi } => {
                    let p = ((x - lo) / (hi - lo)).clamp(1e-7, 1.0 - 1e-7);
                    (p / (1.0 - p)).ln()
                }
                Kind::Unit => x.clamp(-1.0 + 1e-9, 1.0 - 1e-9).atanh(),
                Kind::Positive => x.max(1e-12).ln(),
                Kind::Identity => x,
            })
            .collect()
    }

    /// Maps unconstrained coordinates back to the parameter vector.
    pub(super) fn constrained(&self, z: &[f64]) -> ParamVector {
        let values = z
            .iter()
            .zip(&self.kinds)
            .map(|(&v, kind)| match *kind {
                Kind::Interval { lo, hi } => lo + (hi - lo) / (1.0 + (-v).exp()),
                // Capped where tanh still rounds strictly inside (-1, 1).
                Kind::Unit => v.clamp(-17.0, 17.0).tanh(),
                // Capped so an aggressive line-search step yields a huge but
                // finite variance instead of an overflow.
                Kind::Positive => v.clamp(-60.0, 60.0).exp(),
                Kind::Identity => v,
            })
            .collect();
        ParamVector(values)
    }

    /// Pulls a gradient with respect to θ back to the unconstrained
    /// coordinates: multiplies elementwise by dθ/dz evaluated at `theta`.
    pub(super) fn pullback(&self, theta: &ParamVector, grad_theta: &DVector<f64>) -> Vec<f64> {
        theta
            .0
            .iter()
            .zip(&self.kinds)
            .zip(grad_theta.iter())
            .map(|((&x, kind), &g)| {
                let slope = match *kind {
                    Kind::Interval { lo, hi } => (x - lo) * (hi - x) / (hi - lo),
                    Kind::Unit => 1.0 - x * x,
                    Kind::Positive => x,
                    Kind::Identity => 1.0,
                };
                g * slope
            })
            .collect()
    }
}
