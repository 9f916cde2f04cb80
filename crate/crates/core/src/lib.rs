//! A package-repository blockchain: trails vouch for package recipes, block
//! forging follows trail popularity measured by proof-of-download, and a
//! seeded simulator replays package histories into chains.

pub mod chain;
pub mod consensus;
pub mod crypto;
pub mod exec;
pub mod ingest;
pub mod model;
pub mod pkgbuild;
pub mod pod;
pub mod sim;
pub mod trails;

pub use chain::{verify_chain, Chain, ChainState, Rule, ValidationReport, Violation};
pub use crypto::{Digest, KeyPair, MockScheme, SignatureScheme};
pub use exec::Exec;
pub use model::Block;
pub use sim::{run, SimConfig, SimResult};
