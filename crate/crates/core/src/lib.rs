pub mod autograd;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod geom;
pub mod nets;
pub mod seeding;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/autograd.md")]
    pub mod autograd {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub mod geometry {}
    #[doc = include_str!("../../../book/src/networks.md")]
    pub mod networks {}
    #[doc = include_str!("../../../book/src/discarding.md")]
    pub mod discarding {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub mod metrics {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
