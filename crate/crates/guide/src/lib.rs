//! Runs every fenced Rust snippet in the book as a doc-test, so the guide
//! can never drift from the library: `cargo test` fails if a chapter stops
//! compiling. Each chapter gets its own module to make failures easy to
//! locate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/appliance-model.md")]
pub mod appliance_model {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/reference-signals.md")]
pub mod reference_signals {}

#[doc = include_str!("../../../book/src/fleet-simulation.md")]
pub mod fleet_simulation {}

#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
