pub mod error;
pub mod expansion;
pub mod harmonic;
pub mod model;
pub mod profiles;
pub mod quadrature;
pub mod reduction;
pub mod sobolev;
mod spline;
pub mod vector_green;

pub use error::{Error, Regime, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    mod profiles {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/reduction.md")]
    mod reduction {}
    #[doc = include_str!("../../../book/src/expansion.md")]
    mod expansion {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
