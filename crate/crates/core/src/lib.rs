//! Lattice laboratory for the symplectic vortex equations on a flat torus.
//!
//! A torus group `T^k` acts linearly on `C^n` with integer weights. The crate
//! discretizes connections, sections, the moment residual and the gradient
//! flow of the moment-map-squared functional, and ships the stability
//! analysis (weights, Kempf-Ness functional, limit classification) together
//! with a finite-dimensional oracle in which the surface is a point.
//!
//! Everything is generic over the scalar through [`Real`]; the `*64`
//! aliases at the crate root fix it to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};

pub mod finitedim;
pub mod fields;
pub mod flow;
pub mod functionals;
pub mod lattice;
pub mod linalg;
pub mod rng;
pub mod stability;

pub use fields::{ActionSpec, ComplexGauge, Model, Pair, Tangent};
pub use lattice::{
    ComplexLinkField, ComplexSiteField, LinkField, PlaquetteField, SiteField, TorusGrid,
};

/// Floating point scalar the whole crate is generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + rustfft::FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion from a count or index.
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Grid64 = TorusGrid<f64>;
pub type Grid32 = TorusGrid<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Pair64 = Pair<f64>;
pub type Pair32 = Pair<f32>;
pub type Gauge64 = ComplexGauge<f64>;
pub type Tangent64 = Tangent<f64>;
pub type SiteField64 = SiteField<f64>;
pub type LinkField64 = LinkField<f64>;
pub type FlowConfig64 = flow::FlowConfig<f64>;
pub type FlowState64 = flow::FlowState<f64>;
pub type FinitePoint64 = finitedim::FinitePoint<f64>;
