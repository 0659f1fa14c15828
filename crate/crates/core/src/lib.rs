pub mod enc_linalg;
pub mod error;
pub mod he;
pub mod protocol;
pub mod scheme;
pub mod straggler;
pub mod training;
pub mod compression;
pub mod config;
pub mod data;
pub mod metrics;
pub mod netsim;
