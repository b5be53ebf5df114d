pub mod beamforming;
pub mod credit;
pub mod domain;
pub mod error;
pub mod events;
pub mod negotiation;
pub mod valuation;
pub mod scenario;
pub mod harness;
pub mod output;
