//! Declarative model specification and the packed parameter layout.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arma::ApproxSpec;
use crate::error::{Error, Result};

/// One entry of a coefficient mask: estimated freely or pinned to a value.
///
/// In JSON a fixed entry is written as its number and a free one as the
/// string `"free"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskEntry {
    Free,
    Fixed(f64),
}

impl MaskEntry {
    pub fn is_free(&self) -> bool {
        matches!(self, MaskEntry::Free)
    }
}

impl Serialize for MaskEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaskEntry::Free => serializer.serialize_str("free"),
            MaskEntry::Fixed(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for MaskEntry {
    fn deserialize<D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        struct MaskVisitor;

        impl Visitor<'_> for MaskVisitor {
            type Value = MaskEntry;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or the string \"free\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<MaskEntry, E> {
                Ok(MaskEntry::Fixed(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<MaskEntry, E> {
                Ok(MaskEntry::Fixed(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<MaskEntry, E> {
                Ok(MaskEntry::Fixed(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<MaskEntry, E> {
                if v == "free" {
                    Ok(MaskEntry::Free)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(MaskVisitor)
    }
}

/// Covariance structure of the fractional shocks ξ_t. Variances are always
/// normalized to one; the loadings carry all scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockCorrelation {
    /// Mutually uncorrelated shocks, Q = I.
    #[default]
    Identity,
    /// Free pairwise correlations, one parameter per component pair.
    Free,
    /// Perfect correlation imposed structurally: every component is driven
    /// by the same single shock, so the shock loading matrix has one column.
    Singular,
}

/// One scalar AR(1) component of the short-memory part together with its
/// observation loadings (a column of Γ). The shock variance is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortMemoryUnit {
    /// Autoregressive coefficient.
    pub ar: MaskEntry,
    /// Loadings of the p observables on this unit, length p.
    pub gamma: Vec<MaskEntry>,
}

/// Declarative description of a fractional components model
///
/// ```text
/// y_t = Λ x_t + Γ z_t + ε_t,
/// ```
///
/// with `s` fractional components in `x_t`, scalar AR(1) units in `z_t`, and
/// diagonal measurement noise. Masks distinguish free parameters from fixed
/// values, and `approx` names the scheme that turns each memory order into
/// finite transition coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FCModelSpec {
    /// Observation dimension p.
    pub p: usize,
    /// Number of fractional components s.
    pub s: usize,
    /// Loading mask for Λ: p rows of s entries.
    pub lambda: Vec<Vec<MaskEntry>>,
    /// Memory-order slot of each component, length s; components that share
    /// a slot share the estimated order. Slots must cover 0..max contiguously.
    pub d_groups: Vec<usize>,
    /// Short-memory AR(1) units.
    #[serde(default)]
    pub units: Vec<ShortMemoryUnit>,
    /// Covariance structure of the fractional shocks.
    #[serde(default)]
    pub correlation: ShockCorrelation,
    /// Measurement noise variance mask, one entry per observable.
    pub h: Vec<MaskEntry>,
    /// Approximation scheme for the fractional integration operator.
    pub approx: ApproxSpec,
}

impl FCModelSpec {
    /// Checks mask dimensions and slot numbering.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.s == 0 {
            return Err(Error::invalid("p and s must be positive"));
        }
        if self.lambda.len() != self.p || self.lambda.iter().any(|row| row.len() != self.s) {
            return Err(Error::invalid(format!(
                "loading mask must be {} rows of {} entries",
                self.p, self.s
            )));
        }
        if self.d_groups.len() != self.s {
            return Err(Error::invalid(
                "d_groups must assign a slot to every fractional component",
            ));
        }
        for slot in 0..self.n_d_slots() {
            if !self.d_groups.contains(&slot) {
                return Err(Error::invalid(format!(
                    "d slot {slot} is unused; slots must be contiguous from 0"
                )));
            }
        }
        for unit in &self.units {
            if unit.gamma.len() != self.p {
                return Err(Error::invalid(
                    "every short-memory unit needs one loading per observable",
                ));
            }
        }
        if self.h.len() != self.p {
            return Err(Error::invalid(
                "noise mask must have one entry per observable",
            ));
        }
        if self.correlation == ShockCorrelation::Free && self.s < 2 {
            return Err(Error::invalid(
                "free shock correlation needs at least two components",
            ));
        }
        Ok(())
    }

    /// Number of distinct memory-order slots.
    pub fn n_d_slots(&self) -> usize {
        self.d_groups.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Packed-vector layout implied by the masks.
    pub fn layout(&self) -> Layout {
        let free = |m: &MaskEntry| m.is_free() as usize;
        Layout {
            n_d: self.n_d_slots(),
            n_lambda: self.lambda.iter().flatten().map(free).sum(),
            n_phi: self.units.iter().map(|u| free(&u.ar)).sum(),
            n_gamma: self.units.iter().flat_map(|u| &u.gamma).map(free).sum(),
            n_corr: match self.correlation {
                ShockCorrelation::Free => self.s * (self.s - 1) / 2,
                _ => 0,
            },
            n_h: self.h.iter().map(free).sum(),
        }
    }

    /// Names of the packed parameters, in layout order (1-based indices,
    /// matrix entries as row_column).
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.layout().total_len());
        for g in 0..self.n_d_slots() {
            names.push(format!("d_{}", g + 1));
        }
        for j in 0..self.s {
            for i in 0..self.p {
                if self.lambda[i][j].is_free() {
                    names.push(format!("lambda_{}_{}", i + 1, j + 1));
                }
            }
        }
        for (u, unit) in self.units.iter().enumerate() {
            if unit.ar.is_free() {
                names.push(format!("phi_{}", u + 1));
            }
        }
        for (u, unit) in self.units.iter().enumerate() {
            for i in 0..self.p {
                if unit.gamma[i].is_free() {
                    names.push(format!("gamma_{}_{}", i + 1, u + 1));
                }
            }
        }
        if self.correlation == ShockCorrelation::Free {
            for j in 0..self.s {
                for i in (j + 1)..self.s {
                    names.push(format!("r_{}_{}", i + 1, j + 1));
                }
            }
        }
        for i in 0..self.p {
            if self.h[i].is_free() {
                names.push(format!("h_{}", i + 1));
            }
        }
        names
    }

    /// Memory order of each component under `theta`, length s.
    pub fn d_values(&self, theta: &ParamVector) -> Vec<f64> {
        self.d_groups.iter().map(|&g| theta.0[g]).collect()
    }

    /// Materializes Λ (p×s) from the mask and the free entries in `theta`.
    pub fn lambda_matrix(&self, theta: &ParamVector) -> DMatrix<f64> {
        let mut free = theta.0[self.layout().lambda_range()].iter().copied();
        let mut out = DMatrix::zeros(self.p, self.s);
        for j in 0..self.s {
            for i in 0..self.p {
                out[(i, j)] = resolve(self.lambda[i][j], &mut free);
            }
        }
        out
    }

    /// Autoregressive coefficient of each short-memory unit.
    pub fn phi_values(&self, theta: &ParamVector) -> Vec<f64> {
        let mut free = theta.0[self.layout().phi_range()].iter().copied();
        self.units
            .iter()
            .map(|unit| resolve(unit.ar, &mut free))
            .collect()
    }

    /// Materializes Γ (p × number of units) from the masks.
    pub fn gamma_matrix(&self, theta: &ParamVector) -> DMatrix<f64> {
        let mut free = theta.0[self.layout().gamma_range()].iter().copied();
        let mut out = DMatrix::zeros(self.p, self.units.len());
        for (j, unit) in self.units.iter().enumerate() {
            for i in 0..self.p {
                out[(i, j)] = resolve(unit.gamma[i], &mut free);
            }
        }
        out
    }

    /// Measurement noise variances, length p.
    pub fn h_vector(&self, theta: &ParamVector) -> DVector<f64> {
        let mut free = theta.0[self.layout().h_range()].iter().copied();
        DVector::from_iterator(self.p, self.h.iter().map(|&m| resolve(m, &mut free)))
    }

    /// The implied correlation matrix of the fractional shocks, s×s.
    pub fn correlation_matrix(&self, theta: &ParamVector) -> DMatrix<f64> {
        match self.correlation {
            ShockCorrelation::Identity => DMatrix::identity(self.s, self.s),
            ShockCorrelation::Singular => DMatrix::from_element(self.s, self.s, 1.0),
            ShockCorrelation::Free => {
                let vals = &theta.0[self.layout().corr_range()];
                let mut out = DMatrix::identity(self.s, self.s);
                let mut idx = 0;
                for j in 0..self.s {
                    for i in (j + 1)..self.s {
                        out[(i, j)] = vals[idx];
                        out[(j, i)] = vals[idx];
                        idx += 1;
                    }
                }
                out
            }
        }
    }

}

fn resolve(entry: MaskEntry, free: &mut impl Iterator<Item = f64>) -> f64 {
    match entry {
        MaskEntry::Free => free.next().expect("layout counted the free entries"),
        MaskEntry::Fixed(v) => v,
    }
}

/// Section sizes of the packed parameter vector. The order is
///
/// ```text
/// θ = ( d_1..d_{n_d} | free Λ (column-major) | unit AR coefficients |
///       free Γ (column-major) | correlations (row > column) | free H ),
/// ```
///
/// where everything up to and including Γ forms θ⁽¹⁾, the block entering the
/// transition and observation matrices; correlations and noise variances are
/// updated separately during estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_d: usize,
    pub n_lambda: usize,
    pub n_phi: usize,
    pub n_gamma: usize,
    pub n_corr: usize,
    pub n_h: usize,
}

impl Layout {
    pub fn d_range(&self) -> Range<usize> {
        0..self.n_d
    }

    pub fn lambda_range(&self) -> Range<usize> {
        self.n_d..self.n_d + self.n_lambda
    }

    pub fn phi_range(&self) -> Range<usize> {
        let start = self.n_d + self.n_lambda;
        start..start + self.n_phi
    }

    pub fn gamma_range(&self) -> Range<usize> {
        let start = self.n_d + self.n_lambda + self.n_phi;
        start..start + self.n_gamma
    }

    /// Length of θ⁽¹⁾, the block the ECM Newton step updates jointly.
    pub fn theta1_len(&self) -> usize {
        self.n_d + self.n_lambda + self.n_phi + self.n_gamma
    }

    pub fn corr_range(&self) -> Range<usize> {
        let start = self.theta1_len();
        start..start + self.n_corr
    }

    pub fn h_range(&self) -> Range<usize> {
        let start = self.theta1_len() + self.n_corr;
        start..start + self.n_h
    }

    pub fn total_len(&self) -> usize {
        self.theta1_len() + self.n_corr + self.n_h
    }
}

/// Packed parameter values in the order given by [`Layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}
