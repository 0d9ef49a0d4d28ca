//! Lagrangian particle transport on a simulated multi-device offload runtime.
//!
//! Particles live in a structure-of-arrays [`ParticleEnsemble`]. Each
//! simulated device holds a private deep copy of the model state, advances
//! its own contiguous slice of particles through the physics pipeline, and
//! copies only that slice back to the host.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to the common choices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device_runtime;
pub mod driver;
pub mod ingest;
pub mod model_state;
pub mod num;
pub mod output;
pub mod partition;
pub mod physics;
pub mod rng;
pub mod timers;

pub use model_state::{
    CacheState, ClimData, Control, DtArray, IsosurfMode, MeteoField, ModelState, ParticleEnsemble,
    RngMode,
};
pub use num::Real;
pub use partition::{calc_device_workload_range, WorkRange};
pub use rng::RandomBatch;

pub type Ctl = Control<f64>;
pub type Ensemble = ParticleEnsemble<f64>;
pub type Meteo = MeteoField<f64>;
pub type Clim = ClimData<f64>;
pub type State = ModelState<f64>;

pub type Ctl32 = Control<f32>;
pub type Ensemble32 = ParticleEnsemble<f32>;
pub type Meteo32 = MeteoField<f32>;
pub type Clim32 = ClimData<f32>;
pub type State32 = ModelState<f32>;
