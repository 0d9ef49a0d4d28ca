//! End-to-end orchestration: argument handling, device setup, the time loop
//! and teardown.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, ValueEnum};
use thiserror::Error;

use crate::device_runtime::{
    device_wait, for_each_device_parallel, hardware_devices, region_create, region_delete,
    region_update_device, region_update_host, DeviceError, DevicePool, DeviceRegion, DispatchError,
    DispatchMode, FieldSet,
};
use crate::ingest::{met_periodic, read_atm, read_clim, read_ctl, read_met, read_met_time, IngestError};
use crate::model_state::{Control, MeteoField, ModelState, ParticleEnsemble, RngMode};
use crate::num::Real;
use crate::output::{write_output, OutputError};
use crate::partition::{all_ranges, PartitionError};
use crate::physics;
use crate::rng::{generate_random_nums, module_rng_init, RngError, RngState};
use crate::timers::{write_timer_report, TimerGroup, TimerRecord, TimerRegistry, TimerScope};

/// Environment variable overriding the ctl device count.
pub const DEVICES_ENV: &str = "SIM_NUM_DEVICES";

/// Pipeline stages in execution order.
pub const PIPELINE: [&str; 8] = [
    "module_advection",
    "module_diffusion_turb",
    "module_diffusion_meso",
    "module_convection",
    "module_sedi",
    "module_isosurf",
    "module_position",
    "module_meteo",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum DispatchArg {
    Sequential,
    #[default]
    Parallel,
}

impl From<DispatchArg> for DispatchMode {
    fn from(d: DispatchArg) -> Self {
        match d {
            DispatchArg::Sequential => DispatchMode::Sequential,
            DispatchArg::Parallel => DispatchMode::Parallel,
        }
    }
}

/// Lagrangian particle transport on simulated devices.
#[derive(Debug, Clone, Parser)]
#[command(name = "sim", version)]
pub struct CliArgs {
    /// Control file (KEY = value)
    pub ctl: PathBuf,
    /// Initial particle CSV
    pub atm: PathBuf,
    /// Met snapshot prefix: files are <prefix><k>.txt, or <dir>/met_<k>.txt for a directory
    pub met_prefix: String,
    /// Output directory (must exist)
    pub outdir: PathBuf,
    /// Number of simulated devices; negative means all available
    #[arg(long, allow_negative_numbers = true)]
    pub devices: Option<i64>,
    /// faithful | counter
    #[arg(long)]
    pub rng_mode: Option<RngMode>,
    /// Global seed for counter mode
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t)]
    pub precision: Precision,
    #[arg(long, value_enum, default_value_t)]
    pub dispatch: DispatchArg,
}

pub fn parse_args<I, S>(argv: I) -> Result<CliArgs, clap::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    CliArgs::try_parse_from(argv)
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("no met files found for prefix {0}")]
    NoMetFiles(String),
    #[error("met file {path}: time {t} is not after the previous snapshot")]
    MetOrder { path: String, t: f64 },
    #[error("t_stop = {t_stop} is beyond the last met snapshot at {last}")]
    MetCoverage { t_stop: f64, last: f64 },
    #[error("invalid {DEVICES_ENV} value '{0}'")]
    BadDeviceEnv(String),
    #[error("cannot write timer report: {0}")]
    TimerReport(std::io::Error),
}

/// Device request after applying overrides: CLI, then environment, then ctl.
pub fn resolve_device_request(
    cli: Option<i64>,
    env: Option<&str>,
    ctl: i64,
) -> Result<i64, DriverError> {
    if let Some(n) = cli {
        return Ok(n);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s.parse().map_err(|_| DriverError::BadDeviceEnv(s.to_string())),
        None => Ok(ctl),
    }
}

/// Applies CLI and environment overrides to a control record.
pub fn apply_overrides<T: Real>(ctl: &mut Control<T>, args: &CliArgs) -> Result<(), DriverError> {
    let env = std::env::var(DEVICES_ENV).ok();
    ctl.num_devices_requested = resolve_device_request(args.devices, env.as_deref(), ctl.num_devices_requested)?;
    if let Some(mode) = args.rng_mode {
        ctl.rng_mode = mode;
    }
    if let Some(seed) = args.seed {
        ctl.rng_seed_global = seed;
    }
    Ok(())
}

enum MetStore<T> {
    Files(Vec<PathBuf>),
    Memory(Vec<MeteoField<T>>),
}

/// Time-ordered sequence of met snapshots, loaded on demand.
pub struct MetSeries<T> {
    times: Vec<T>,
    store: MetStore<T>,
}

impl<T: Real> MetSeries<T> {
    /// Discovers `<prefix><k>.txt` for k = 0, 1, ... (or `<dir>/met_<k>.txt`
    /// when the prefix names a directory) until the first gap.
    pub fn discover(prefix: &str) -> Result<Self, DriverError> {
        let stem = if prefix.ends_with('/') || Path::new(prefix).is_dir() {
            format!("{}/met_", prefix.trim_end_matches('/'))
        } else {
            prefix.to_string()
        };
        let mut paths = Vec::new();
        for k in 0.. {
            let p = PathBuf::from(format!("{stem}{k}.txt"));
            if !p.is_file() {
                break;
            }
            paths.push(p);
        }
        if paths.is_empty() {
            return Err(DriverError::NoMetFiles(prefix.to_string()));
        }
        let times = paths
            .iter()
            .map(read_met_time::<T>)
            .collect::<Result<Vec<_>, _>>()?;
        Self::check_order(&times, |k| paths[k].display().to_string())?;
        Ok(Self {
            times,
            store: MetStore::Files(paths),
        })
    }

    /// In-memory snapshots, in time order.
    pub fn from_fields(fields: Vec<MeteoField<T>>) -> Result<Self, DriverError> {
        if fields.is_empty() {
            return Err(DriverError::NoMetFiles("<memory>".into()));
        }
        let times: Vec<T> = fields.iter().map(|m| m.t_met).collect();
        Self::check_order(&times, |k| format!("<memory #{k}>"))?;
        Ok(Self {
            times,
            store: MetStore::Memory(fields),
        })
    }

    fn check_order(times: &[T], name: impl Fn(usize) -> String) -> Result<(), DriverError> {
        for k in 1..times.len() {
            if !(times[k] > times[k - 1]) {
                return Err(DriverError::MetOrder {
                    path: name(k),
                    t: times[k].as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn load(&self, k: usize) -> Result<MeteoField<T>, DriverError> {
        match &self.store {
            MetStore::Files(paths) => Ok(met_periodic(read_met(&paths[k])?)),
            MetStore::Memory(fields) => Ok(met_periodic(fields[k].clone())),
        }
    }
}

/// Knobs that are not part of the control record.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dispatch: DispatchMode,
    /// Simulated devices reported as available; used for negative requests.
    pub available_devices: usize,
    /// Print the timer report to standard output.
    pub print_report: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dispatch: DispatchMode::Parallel,
            available_devices: hardware_devices(),
            print_report: false,
        }
    }
}

#[derive(Debug)]
pub struct RunSummary<T> {
    pub num_devices: usize,
    pub steps: usize,
    pub outputs: Vec<PathBuf>,
    pub final_ensemble: ParticleEnsemble<T>,
    pub timers: Vec<TimerRecord>,
    pub report: String,
    /// Particles whose theta isosurface iteration hit the limit, summed over steps.
    pub isosurf_unconverged: usize,
}

/// Reads the inputs named on the command line and runs the model.
pub fn run_from_args<T: Real>(args: &CliArgs, opts: &RunOptions) -> Result<RunSummary<T>, DriverError> {
    let mut ctl: Control<T> = read_ctl(&args.ctl)?;
    apply_overrides(&mut ctl, args)?;
    let atm = read_atm(&args.atm, &ctl)?;
    let met = MetSeries::discover(&args.met_prefix)?;
    run_simulation(ctl, atm, &met, &args.outdir, opts)
}

/// Index pair `(k0, k1)` of the snapshots bracketing `t`.
fn initial_pair<T: Real>(times: &[T], t: T) -> (usize, usize) {
    let k0 = times.iter().rposition(|&x| x <= t).unwrap_or(0);
    (k0, (k0 + 1).min(times.len() - 1))
}

fn step_count<T: Real>(ctl: &Control<T>) -> usize {
    let span = (ctl.t_stop - ctl.t_start).as_f64();
    if span <= 0.0 {
        0
    } else {
        (span / ctl.dt_model.as_f64()).ceil() as usize
    }
}

/// Whether `(t_prev, t]` contains a multiple of `output_dt`.
fn crosses_output<T: Real>(t_prev: T, t: T, output_dt: T) -> bool {
    (t / output_dt).floor() > (t_prev / output_dt).floor()
}

#[derive(Debug, Error)]
enum TaskError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Rng(#[from] RngError),
}

/// Runs the whole simulation on an already loaded ensemble.
pub fn run_simulation<T: Real>(
    ctl: Control<T>,
    atm: ParticleEnsemble<T>,
    met: &MetSeries<T>,
    outdir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary<T>, DriverError> {
    let last = *met.times().last().expect("non-empty met series");
    if ctl.t_stop > last {
        return Err(DriverError::MetCoverage {
            t_stop: ctl.t_stop.as_f64(),
            last: last.as_f64(),
        });
    }
    let clim = read_clim(&ctl);
    let (mut k0, mut k1) = initial_pair(met.times(), ctl.t_start);
    let met0 = met.load(k0)?;
    let met1 = if k1 == k0 { met0.clone() } else { met.load(k1)? };
    let mut host = ModelState::new(ctl, atm, clim, met0, met1);

    let timers = TimerRegistry::new();
    let pool = DevicePool::with_request(host.ctl.num_devices_requested, opts.available_devices)?;
    let nd = pool.num_devices();
    let np = host.atm.np();
    let ranges = all_ranges(np, nd)?;
    let rng: RngState = module_rng_init(&host.ctl, nd)?;

    for d in pool.device_ids() {
        timers.time("ACC_INIT", TimerGroup::Init, TimerScope::Device(d), || pool.init_device(d))?;
    }
    let regions: Vec<DeviceRegion<T>> = pool
        .device_ids()
        .map(|d| {
            let scope = TimerScope::Device(d);
            let r = timers.time("CREATE_DATA_REGION", TimerGroup::Memory, scope, || {
                region_create(&pool, d, &host)
            })?;
            timers.time("UPDATE_DEVICE", TimerGroup::Memory, scope, || {
                region_update_device(
                    &r,
                    &host,
                    FieldSet::CTL | FieldSet::ATM | FieldSet::CACHE | FieldSet::CLIM | FieldSet::MET0 | FieldSet::MET1,
                )
            })?;
            Ok(r)
        })
        .collect::<Result<_, DeviceError>>()?;

    for_each_device_parallel(&pool, opts.dispatch, |d| -> Result<(), TaskError> {
        let range = ranges[d];
        regions[d].compute(|img| {
            let ModelState { ctl, atm, cache, met0, met1, .. } = img;
            physics::module_isosurf_init(ctl, atm, met0, met1, cache, range);
        })?;
        Ok(())
    })?;

    let mut outputs = Vec::new();
    let mut emit = |host: &mut ModelState<T>, t: T, copy_back: bool| -> Result<(), DriverError> {
        if copy_back {
            for (d, region) in regions.iter().enumerate() {
                timers.time("UPDATE_HOST", TimerGroup::Memory, TimerScope::Device(d), || {
                    region_update_host(region, host, ranges[d])
                })?;
            }
        }
        let written = timers.time("write_output", TimerGroup::Io, TimerScope::Host, || {
            write_output(&host.ctl, &host.atm, t, outdir)
        })?;
        outputs.extend(written);
        Ok(())
    };

    let (t_start, t_stop, dt_model, output_dt) =
        (host.ctl.t_start, host.ctl.t_stop, host.ctl.dt_model, host.ctl.output_dt);
    let steps = step_count(&host.ctl);
    emit(&mut host, t_start, false)?;

    let unconverged = AtomicUsize::new(0);
    let mut t = t_start;
    for k in 0..steps {
        let t_next = (t_start + T::from_usize(k + 1).expect("step index") * dt_model).min(t_stop);

        let mut rotated = false;
        while met.times()[k1] < t_next && k1 + 1 < met.len() {
            k0 = k1;
            k1 += 1;
            host.met0 = std::mem::take(&mut host.met1);
            host.met1 = met.load(k1)?;
            rotated = true;
        }
        if rotated {
            debug_assert!(k0 + 1 == k1);
            for (d, region) in regions.iter().enumerate() {
                timers.time("UPDATE_MET", TimerGroup::Memory, TimerScope::Device(d), || {
                    region_update_device(region, &host, FieldSet::MET0 | FieldSet::MET1)
                })?;
            }
        }

        for_each_device_parallel(&pool, opts.dispatch, |d| -> Result<(), TaskError> {
            let range = ranges[d];
            let scope = TimerScope::Device(d);
            let phys = |name: &str, f: &mut dyn FnMut()| timers.time(name, TimerGroup::Physics, scope, f);
            regions[d].compute(|img| -> Result<(), TaskError> {
                let ModelState {
                    ctl,
                    atm,
                    cache,
                    clim,
                    met0,
                    met1,
                    dt,
                    randoms,
                } = img;
                physics::module_timesteps(ctl, atm, t_next, range, dt);
                generate_random_nums(&rng, k as u64, range, d, randoms)?;
                phys(PIPELINE[0], &mut || physics::module_advection(ctl, atm, met0, met1, dt, range));
                phys(PIPELINE[1], &mut || {
                    physics::module_diffusion_turb(ctl, atm, met0, met1, dt, randoms, range)
                });
                phys(PIPELINE[2], &mut || {
                    physics::module_diffusion_meso(ctl, atm, met0, met1, dt, randoms, cache, range)
                });
                phys(PIPELINE[3], &mut || physics::module_convection(ctl, atm, dt, randoms, range));
                phys(PIPELINE[4], &mut || physics::module_sedi(ctl, atm, met0, met1, dt, range));
                phys(PIPELINE[5], &mut || {
                    let n = physics::module_isosurf(ctl, atm, met0, met1, cache, range);
                    unconverged.fetch_add(n, Ordering::Relaxed);
                });
                phys(PIPELINE[6], &mut || physics::module_position(ctl, atm, range));
                phys(PIPELINE[7], &mut || physics::module_meteo(ctl, atm, met0, met1, clim, range));
                Ok(())
            })??;
            Ok(())
        })?;

        if t_next >= t_stop || crosses_output(t, t_next, output_dt) {
            emit(&mut host, t_next, true)?;
        }
        t = t_next;
    }

    for (d, region) in regions.iter().enumerate() {
        device_wait(region);
        timers.time("DELETE_DATA_REGION", TimerGroup::Memory, TimerScope::Device(d), || {
            region_delete(region)
        })?;
    }

    let records = timers.records();
    let report = write_timer_report(&records, outdir).map_err(DriverError::TimerReport)?;
    if opts.print_report {
        print!("{report}");
    }
    Ok(RunSummary {
        num_devices: nd,
        steps,
        outputs,
        final_ensemble: host.atm,
        timers: records,
        report,
        isosurf_unconverged: unconverged.into_inner(),
    })
}
