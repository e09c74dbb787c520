//! The fractional components model: declarative specification, parameter
//! layout, state-space assembly, and component reconstruction.
//!
//! A model
//!
//! ```text
//! y_t = Λ x_t + Γ z_t + ε_t,      Δ^{d_j}_+ x_jt = ξ_jt,
//! ```
//!
//! is described by an [`FCModelSpec`] (dimensions, masks, shock correlation
//! mode, approximation scheme) and a packed parameter vector whose order is
//! fixed by [`Layout`]. Binding the spec to a realized coefficient source
//! yields an [`FCModel`], which turns parameter vectors into state-space
//! systems of dimension u·s plus one state per short-memory unit, where
//! u = max(v, w+1) does not grow with the sample size.

mod assemble;
mod extract;
mod jacobian;
mod spec;

pub use jacobian::SystemJacobian;
pub use spec::{FCModelSpec, Layout, MaskEntry, ParamVector, ShockCorrelation, ShortMemoryUnit};

use std::path::Path;

use crate::arma::{CoeffSource, DEFAULT_GRID_STEP};
use crate::error::Result;

/// Shape of the assembled state vector: `s` fractional components stacked
/// over `u` lags, followed by one state per short-memory unit.
///
/// The lag blocks are a shift register (block i of α_t is block i-1 of
/// α_{t-1}), which the estimation routines exploit to avoid dense
/// state-dimension-cubed work when u is large.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateStructure {
    /// Number of fractional components.
    pub s: usize,
    /// Lags of μ_t kept in the state.
    pub u: usize,
    /// Number of short-memory unit states appended after the lag blocks.
    pub units: usize,
}

impl StateStructure {
    /// Total state dimension.
    pub fn state_dim(&self) -> usize {
        self.u * self.s + self.units
    }
}

/// A model specification bound to a realized coefficient source, ready for
/// assembly and estimation.
pub struct FCModel {
    spec: FCModelSpec,
    layout: Layout,
    source: Box<dyn CoeffSource + Send + Sync>,
}

impl FCModel {
    /// Binds `spec` to its approximation scheme for sample size `n`, loading
    /// or building the coefficient table as needed (`table_dir` is the cache
    /// location, if any).
    pub fn new(spec: FCModelSpec, n: usize, table_dir: Option<&Path>) -> Result<FCModel> {
        spec.validate()?;
        let source = spec.approx.into_source(n, DEFAULT_GRID_STEP, table_dir)?;
        let layout = spec.layout();
        Ok(FCModel {
            spec,
            layout,
            source,
        })
    }

    /// Binds `spec` to an explicit coefficient source.
    pub fn with_source(
        spec: FCModelSpec,
        source: Box<dyn CoeffSource + Send + Sync>,
    ) -> Result<FCModel> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(FCModel {
            spec,
            layout,
            source,
        })
    }

    pub fn spec(&self) -> &FCModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Approximation orders (v, w) of the bound coefficient source.
    pub fn orders(&self) -> (usize, usize) {
        self.source.order()
    }

    /// State dimension of the assembled system.
    pub fn state_dim(&self) -> usize {
        self.u() * self.spec.s + self.spec.units.len()
    }

    /// Shape of the assembled state vector.
    pub fn structure(&self) -> StateStructure {
        StateStructure {
            s: self.spec.s,
            u: self.u(),
            units: self.spec.units.len(),
        }
    }

    pub(crate) fn source(&self) -> &(dyn CoeffSource + Send + Sync) {
        &*self.source
    }

    /// Lags of μ_t kept in the state, u = max(v, w+1).
    fn u(&self) -> usize {
        let (v, w) = self.source.order();
        v.max(w + 1)
    }
}
