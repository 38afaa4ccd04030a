// mdbook cannot compile listings against workspace crates, so every chapter
// is included here as a module doc and `cargo test --doc` runs the listings.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/criteria.md")]
pub mod criteria {}
#[doc = include_str!("src/censoring.md")]
pub mod censoring {}
#[doc = include_str!("src/surrogate.md")]
pub mod surrogate {}
#[doc = include_str!("src/solver.md")]
pub mod solver {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
