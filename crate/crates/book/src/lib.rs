//! mdbook cannot run listings that depend on workspace crates, so each
//! chapter is pulled in as a module doc and checked by `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/plant.md")]
pub mod plant {}
#[doc = include_str!("../../../book/src/lifting.md")]
pub mod lifting {}
#[doc = include_str!("../../../book/src/identification.md")]
pub mod identification {}
#[doc = include_str!("../../../book/src/qp.md")]
pub mod qp {}
#[doc = include_str!("../../../book/src/mpc.md")]
pub mod mpc {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
