// Each chapter becomes a module so `cargo test --doc` runs its listings and a
// failure names the chapter it came from. mdbook renders the same files.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/models.md")]
pub mod models {}
#[doc = include_str!("src/superposition.md")]
pub mod superposition {}
#[doc = include_str!("src/measures.md")]
pub mod measures {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("src/scheduling.md")]
pub mod scheduling {}
#[doc = include_str!("src/service.md")]
pub mod service {}
