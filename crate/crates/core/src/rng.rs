//! Per-timestep random number batches, decoupled from the physics modules.
//!
//! Two generation schemes:
//!
//! * **faithful**: one sequential splitmix64 stream per device, seeded with
//!   `mpi_rank + 83 * device_id`. Results depend on how particles are split
//!   across devices.
//! * **counter**: every scalar is a pure function of
//!   `(seed, step, particle, stream, component)`, so a batch is identical no
//!   matter which device fills which particles.

use std::f64::consts::TAU;
use std::sync::Mutex;

use thiserror::Error;

use crate::model_state::{Control, RngMode};
use crate::num::Real;
use crate::partition::WorkRange;

/// Random numbers consumed by one outer timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RandomBatch<T> {
    /// Uniform on [0, 1), one per particle.
    pub convection: Vec<T>,
    /// Standard normals, three per particle.
    pub diff_meso: Vec<T>,
    /// Standard normals, three per particle.
    pub diff_turb: Vec<T>,
}

impl<T: Real> RandomBatch<T> {
    pub fn zeroed(np: usize) -> Self {
        Self {
            convection: vec![T::zero(); np],
            diff_meso: vec![T::zero(); 3 * np],
            diff_turb: vec![T::zero(); 3 * np],
        }
    }

    pub fn np(&self) -> usize {
        self.convection.len()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RngError {
    #[error("at least one device is required")]
    NoDevices,
    #[error("range [{start}, {end}) lies outside a batch of {np} particles")]
    OutOfBounds { start: usize, end: usize, np: usize },
    #[error("no generator for device {device_id} ({num_devices} initialised)")]
    UnknownDevice { device_id: usize, num_devices: usize },
    #[error("counter key overflow: {what} = {value} exceeds {max}")]
    KeyOverflow {
        what: &'static str,
        value: u64,
        max: u64,
    },
}

/// Generator state: per-device streams in faithful mode, just the global seed
/// in counter mode.
#[derive(Debug)]
pub struct RngState {
    pub mode: RngMode,
    pub seed_global: u64,
    /// One splitmix64 state per device; each is only touched by its own device.
    device_gens: Vec<Mutex<u64>>,
}

impl RngState {
    pub fn num_generators(&self) -> usize {
        self.device_gens.len()
    }

    /// Current splitmix64 state of a device stream.
    pub fn generator_state(&self, device_id: usize) -> Option<u64> {
        self.device_gens
            .get(device_id)
            .map(|g| *g.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

/// Device generator seed: `mpi_rank + 83 * device_id`.
pub fn rng_seed_for(mpi_rank: u64, device_id: u64) -> u64 {
    mpi_rank.wrapping_add(device_id.wrapping_mul(83))
}

pub fn module_rng_init<T: Real>(ctl: &Control<T>, num_devices: usize) -> Result<RngState, RngError> {
    if num_devices == 0 {
        return Err(RngError::NoDevices);
    }
    let device_gens = match ctl.rng_mode {
        RngMode::Faithful => (0..num_devices)
            .map(|d| Mutex::new(rng_seed_for(ctl.mpi_rank, d as u64)))
            .collect(),
        RngMode::Counter => Vec::new(),
    };
    Ok(RngState {
        mode: ctl.rng_mode,
        seed_global: ctl.rng_seed_global,
        device_gens,
    })
}

/// One splitmix64 step; returns `(value, next_state)`.
#[inline]
pub fn splitmix64_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = next;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), next)
}

/// Top 53 bits as a double in [0, 1).
#[inline]
fn to_unit(value: u64) -> f64 {
    (value >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    // 1 - u1 lies in (0, 1], so the log is finite
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    let (s, c) = (TAU * u2).sin_cos();
    (r * c, r * s)
}

#[inline]
fn uniform_to<T: Real>(u: f64) -> T {
    let x = T::lit(u);
    if x >= T::one() {
        T::below_one()
    } else {
        x
    }
}

/// Sequential stream with a Box-Muller spare, living for one fill call.
struct SeqStream<'a> {
    state: &'a mut u64,
    spare: Option<f64>,
}

impl SeqStream<'_> {
    fn uniform(&mut self) -> f64 {
        let (v, s) = splitmix64_next(*self.state);
        *self.state = s;
        to_unit(v)
    }

    fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let (z0, z1) = box_muller(u1, u2);
        self.spare = Some(z1);
        z0
    }
}

const STREAM_CONVECTION: u64 = 0;
const STREAM_TURB: u64 = 1;
const STREAM_MESO: u64 = 2;
const MAX_STEP: u64 = (1 << 32) - 1;
const MAX_PARTICLE: u64 = (1 << 24) - 1;

#[inline]
fn counter_key(seed: u64, step: u64, i: u64, stream: u64, component: u64) -> u64 {
    seed ^ (step | (i << 32) | ((stream * 4 + component) << 56))
}

#[inline]
fn counter_uniform(seed: u64, step: u64, i: u64, stream: u64, component: u64) -> f64 {
    to_unit(splitmix64_next(counter_key(seed, step, i, stream, component)).0)
}

#[inline]
fn counter_normal(seed: u64, step: u64, i: u64, stream: u64, component: u64) -> f64 {
    let u1 = counter_uniform(seed, step, i, stream, component);
    let u2 = counter_uniform(seed, step, i, stream, component + 1);
    box_muller(u1, u2).0
}

/// Fills the batch entries of the particles in `range` and nothing else.
///
/// Faithful mode draws from `device_id`'s stream in the order convection,
/// turbulent triple, mesoscale triple for ascending particle index. The
/// pending Box-Muller spare is dropped when the call returns.
pub fn generate_random_nums<T: Real>(
    rng: &RngState,
    step_index: u64,
    range: WorkRange,
    device_id: usize,
    batch: &mut RandomBatch<T>,
) -> Result<(), RngError> {
    let np = batch.np();
    if range.start > range.end
        || range.end > np
        || batch.diff_turb.len() != 3 * np
        || batch.diff_meso.len() != 3 * np
    {
        return Err(RngError::OutOfBounds {
            start: range.start,
            end: range.end,
            np,
        });
    }
    match rng.mode {
        RngMode::Faithful => {
            let gen = rng
                .device_gens
                .get(device_id)
                .ok_or(RngError::UnknownDevice {
                    device_id,
                    num_devices: rng.device_gens.len(),
                })?;
            let mut state = gen.lock().unwrap_or_else(|e| e.into_inner());
            let mut s = SeqStream {
                state: &mut state,
                spare: None,
            };
            for i in range.indices() {
                batch.convection[i] = uniform_to(s.uniform());
                for c in 0..3 {
                    batch.diff_turb[3 * i + c] = T::lit(s.normal());
                }
                for c in 0..3 {
                    batch.diff_meso[3 * i + c] = T::lit(s.normal());
                }
            }
        }
        RngMode::Counter => {
            if step_index > MAX_STEP {
                return Err(RngError::KeyOverflow {
                    what: "step_index",
                    value: step_index,
                    max: MAX_STEP,
                });
            }
            if !range.is_empty() && (range.end - 1) as u64 > MAX_PARTICLE {
                return Err(RngError::KeyOverflow {
                    what: "particle index",
                    value: (range.end - 1) as u64,
                    max: MAX_PARTICLE,
                });
            }
            let seed = rng.seed_global;
            for i in range.indices() {
                let k = i as u64;
                batch.convection[i] =
                    uniform_to(counter_uniform(seed, step_index, k, STREAM_CONVECTION, 0));
                for c in 0..3 {
                    batch.diff_turb[3 * i + c] =
                        T::lit(counter_normal(seed, step_index, k, STREAM_TURB, c as u64));
                    batch.diff_meso[3 * i + c] =
                        T::lit(counter_normal(seed, step_index, k, STREAM_MESO, c as u64));
                }
            }
        }
    }
    Ok(())
}
