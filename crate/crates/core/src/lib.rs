//! Secret key generation over an IRS-assisted multi-antenna link: channel
//! statistics, probing, key-rate evaluation, a water-filling baseline and a
//! neural optimizer for the precoder and IRS phases.

pub mod baseline;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod net;
pub mod probing;
pub mod skr;

pub use channel::{ChannelRealization, ChannelStatistics, PathGains, SpatialCorrelation};
pub use config::{ConfigFile, SystemConfig};
pub use error::{Error, Result};
pub use experiments::{Method, SweepResult, SweepSpec, SweepVariable};
pub use net::{NetParams, TrainConfig};
pub use probing::PkgSolution;
pub use skr::{skr_closed_form, skr_monte_carlo, SkrReport};
