//! Planetary-scale 4D space-time positional encoding.
//!
//! Raw `(latitude, longitude, elevation, time)` observations are mapped into
//! the unit 4-cube ([`geocoords`]) and encoded by four 3D multi-resolution
//! hash grids over `xyz`, `xyt`, `yzt` and `xzt` ([`earth4d`], [`hashgrid`]).
//! Hashed levels can use learned probing ([`probing`]) to steer colliding
//! vertices into different rows. On top sit a species-conditioned regression
//! head and trainer ([`regressor`]), a hash-collision simulator
//! ([`collisionlab`]), and the file formats used by the CLI ([`config`],
//! [`dataset`], [`checkpoint`]).

// `!(x > 0.0)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod real;

pub mod geocoords;
pub mod hashgrid;
pub mod probing;
pub mod earth4d;

pub mod regressor;
pub mod collisionlab;

pub mod config;
pub mod dataset;
pub mod checkpoint;

pub use error::{Error, Result};
pub use exec::Execution;
pub use real::{ParamBuf, Real};

pub use earth4d::{count_parameters, Earth4DConfig, Earth4DEncoder, ParameterCount, Projection};
pub use geocoords::{GeodeticPoint, NormalizationConfig, NormalizedPoint4};
pub use hashgrid::{GridConfig, HashGrid, LevelSpec, StorageMode};
pub use probing::{ProbeConfig, ProbeMode};
pub use config::Config;
pub use regressor::{Metrics, Model, ModelConfig, TrainConfig};
