pub mod field;
pub mod poly;
pub mod paillier;
pub mod masking;
pub mod union;
pub mod rng;
pub mod transport;
pub mod protocol;
pub mod config;
pub mod metrics;
pub mod audit;
pub mod demo;
pub mod bench;
