//! Compiles the guide so its listings run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/divergences.md")]
pub mod divergences {}

#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[doc = include_str!("../../../book/src/identifiability.md")]
pub mod identifiability {}

#[doc = include_str!("../../../book/src/asymptotics.md")]
pub mod asymptotics {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
