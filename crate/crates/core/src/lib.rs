//! Zero-shot household load forecasting with a mostly-frozen language-model
//! backbone: reversible instance normalization, seasonal-trend decomposition,
//! patch meta-tokens, prototype-aligned prefix prompts, and selective
//! training of a small parameter registry.

pub mod autograd;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod head;
pub mod model;
pub mod params;
pub mod plot;
pub mod prompt;
pub mod revin;
pub mod store;
pub mod synth;
pub mod train;
