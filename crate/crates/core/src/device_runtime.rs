//! Simulated multi-device offload runtime.
//!
//! A device is an isolated worker context. Each device owns at most one live
//! [`DeviceRegion`]: a private deep copy of the model state with an explicit
//! create / update / delete lifecycle. Results come back to the host only
//! through [`region_update_host`], which copies the device's own particle
//! range and nothing else.
//!
//! ```text
//! empty --create--> created --update_device--> populated --delete--> deleted
//!                      \_____________________________________/
//! ```

use std::any::Any;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use bitflags::bitflags;
use thiserror::Error;

use crate::model_state::ModelState;
use crate::num::Real;
use crate::partition::WorkRange;

/// Upper bound on the number of simulated devices.
pub const MAX_DEVICES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("device count 0 is invalid (use a negative number for all available devices)")]
    ZeroDevices,
    #[error("device {device_id} out of range for a pool of {num_devices}")]
    DeviceOutOfRange { device_id: usize, num_devices: usize },
    #[error("device {device_id} already has a live data region")]
    DuplicateCreate { device_id: usize },
    #[error("data region on device {device_id} was deleted")]
    Deleted { device_id: usize },
    #[error("data region on device {device_id} has not been populated")]
    NotPopulated { device_id: usize },
    #[error("data region on device {device_id} still has {pending} task(s) in flight")]
    InFlight { device_id: usize, pending: usize },
    #[error("range [{start}, {end}) belongs to device {owner}, not device {device_id}")]
    ForeignRange {
        device_id: usize,
        owner: usize,
        start: usize,
        end: usize,
    },
    #[error("copy-back range of device {device_id} overlaps the range of device {other}")]
    RangeOverlap { device_id: usize, other: usize },
    #[error("range end {end} exceeds {np} particles")]
    RangeOutOfBounds { end: usize, np: usize },
    #[error("host/device shape mismatch on device {device_id}: {what}")]
    ShapeMismatch { device_id: usize, what: &'static str },
    #[error("device {device_id} worker is unavailable")]
    WorkerGone { device_id: usize },
}

/// Resolves a requested device count. Negative means every available device;
/// explicit requests are capped at [`MAX_DEVICES`].
pub fn enumerate_devices(requested: i64, available: usize) -> Result<usize, DeviceError> {
    match requested {
        0 => Err(DeviceError::ZeroDevices),
        r if r < 0 => Ok(available.clamp(1, MAX_DEVICES)),
        r => Ok(usize::try_from(r).unwrap_or(MAX_DEVICES).min(MAX_DEVICES)),
    }
}

/// Hardware execution units of this machine; the default simulated-device count.
pub fn hardware_devices() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionState {
    Empty,
    Created,
    Populated,
    Deleted,
}

bitflags! {
    /// Members of the model state named in an update.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct FieldSet: u16 {
        const CTL = 1 << 0;
        const ATM = 1 << 1;
        const CACHE = 1 << 2;
        const CLIM = 1 << 3;
        const MET0 = 1 << 4;
        const MET1 = 1 << 5;
        const DT = 1 << 6;
        const RANDOMS = 1 << 7;
    }
}

type Job = Box<dyn FnOnce() + Send + 'static>;

struct DeviceContext {
    id: usize,
    queue: Mutex<Option<Sender<Job>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl DeviceContext {
    fn start(&self) {
        let mut queue = lock(&self.queue);
        if queue.is_some() {
            return;
        }
        let (tx, rx) = mpsc::channel::<Job>();
        let handle = thread::Builder::new()
            .name(format!("sim-device-{}", self.id))
            .spawn(move || {
                for job in rx {
                    job();
                }
            })
            .expect("spawn device worker");
        *queue = Some(tx);
        *lock(&self.worker) = Some(handle);
    }

    fn submit(&self, job: Job) -> Result<(), DeviceError> {
        self.start();
        let queue = lock(&self.queue);
        queue
            .as_ref()
            .and_then(|tx| tx.send(job).ok())
            .ok_or(DeviceError::WorkerGone { device_id: self.id })
    }

    fn shutdown(&self) {
        lock(&self.queue).take();
        if let Some(h) = lock(&self.worker).take() {
            let _ = h.join();
        }
    }
}

struct PoolShared {
    devices: Vec<DeviceContext>,
    slots: Mutex<Vec<RegionState>>,
    copy_back: Mutex<Vec<Option<WorkRange>>>,
    check_overlap: bool,
}

/// The set of simulated devices driven by one host process.
pub struct DevicePool {
    shared: Arc<PoolShared>,
}

impl fmt::Debug for DevicePool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DevicePool")
            .field("num_devices", &self.num_devices())
            .finish()
    }
}

fn lock<M>(m: &Mutex<M>) -> MutexGuard<'_, M> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl DevicePool {
    pub fn new(num_devices: usize) -> Result<Self, DeviceError> {
        if num_devices == 0 {
            return Err(DeviceError::ZeroDevices);
        }
        let num_devices = num_devices.min(MAX_DEVICES);
        Ok(Self {
            shared: Arc::new(PoolShared {
                devices: (0..num_devices)
                    .map(|id| DeviceContext {
                        id,
                        queue: Mutex::new(None),
                        worker: Mutex::new(None),
                    })
                    .collect(),
                slots: Mutex::new(vec![RegionState::Empty; num_devices]),
                copy_back: Mutex::new(vec![None; num_devices]),
                check_overlap: cfg!(debug_assertions),
            }),
        })
    }

    /// Resolves `requested` against `available` units and builds the pool.
    pub fn with_request(requested: i64, available: usize) -> Result<Self, DeviceError> {
        Self::new(enumerate_devices(requested, available)?)
    }

    pub fn num_devices(&self) -> usize {
        self.shared.devices.len()
    }

    pub fn device_ids(&self) -> std::ops::Range<usize> {
        0..self.num_devices()
    }

    /// Brings up the worker context of one device.
    pub fn init_device(&self, device_id: usize) -> Result<(), DeviceError> {
        self.check_id(device_id)?;
        self.shared.devices[device_id].start();
        Ok(())
    }

    pub fn region_state(&self, device_id: usize) -> Option<RegionState> {
        lock(&self.shared.slots).get(device_id).copied()
    }

    fn check_id(&self, device_id: usize) -> Result<(), DeviceError> {
        if device_id >= self.num_devices() {
            return Err(DeviceError::DeviceOutOfRange {
                device_id,
                num_devices: self.num_devices(),
            });
        }
        Ok(())
    }
}

impl Drop for DevicePool {
    fn drop(&mut self) {
        // regions hold the shared state too; only the last owner joins workers
        if Arc::strong_count(&self.shared) == 1 {
            for d in &self.shared.devices {
                d.shutdown();
            }
        }
    }
}

struct RegionCore<T> {
    state: RegionState,
    image: Option<ModelState<T>>,
}

struct InFlight {
    pending: Mutex<usize>,
    idle: Condvar,
}

/// One device's private memory image of the model state.
pub struct DeviceRegion<T> {
    device_id: usize,
    pool: Arc<PoolShared>,
    core: Arc<Mutex<RegionCore<T>>>,
    flight: Arc<InFlight>,
}

impl<T> fmt::Debug for DeviceRegion<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceRegion")
            .field("device_id", &self.device_id)
            .field("state", &lock(&self.core).state)
            .finish()
    }
}

impl<T: Real> DeviceRegion<T> {
    pub fn device_id(&self) -> usize {
        self.device_id
    }

    pub fn state(&self) -> RegionState {
        lock(&self.core).state
    }

    pub fn pending_tasks(&self) -> usize {
        *lock(&self.flight.pending)
    }

    /// Runs `f` on the device image synchronously on the calling thread.
    pub fn compute<R>(&self, f: impl FnOnce(&mut ModelState<T>) -> R) -> Result<R, DeviceError> {
        let mut core = lock(&self.core);
        let image = live_image(&mut core, self.device_id)?;
        Ok(f(image))
    }

    /// Read-only view of the image, for inspection.
    pub fn inspect<R>(&self, f: impl FnOnce(&ModelState<T>) -> R) -> Result<R, DeviceError> {
        self.compute(|img| f(img))
    }

    /// Queues `f` on the device's worker. The region counts as in flight until
    /// it has run; see [`device_wait`].
    pub fn launch<F>(&self, f: F) -> Result<(), DeviceError>
    where
        F: FnOnce(&mut ModelState<T>) + Send + 'static,
    {
        {
            let mut core = lock(&self.core);
            live_image(&mut core, self.device_id)?;
        }
        *lock(&self.flight.pending) += 1;
        let core = Arc::clone(&self.core);
        let flight = Arc::clone(&self.flight);
        let job: Job = Box::new(move || {
            let _ = panic::catch_unwind(AssertUnwindSafe(|| {
                let mut core = lock(&core);
                if let Some(img) = core.image.as_mut() {
                    f(img);
                }
            }));
            let mut pending = lock(&flight.pending);
            *pending -= 1;
            if *pending == 0 {
                flight.idle.notify_all();
            }
        });
        let submitted = self.pool.devices[self.device_id].submit(job);
        if submitted.is_err() {
            *lock(&self.flight.pending) -= 1;
        }
        submitted
    }
}

fn live_image<T>(
    core: &mut RegionCore<T>,
    device_id: usize,
) -> Result<&mut ModelState<T>, DeviceError> {
    match core.state {
        RegionState::Deleted => Err(DeviceError::Deleted { device_id }),
        _ => core.image.as_mut().ok_or(DeviceError::Deleted { device_id }),
    }
}

/// Allocates a region on `device_id` with the host's shapes. Contents are
/// unspecified until the first [`region_update_device`].
pub fn region_create<T: Real>(
    pool: &DevicePool,
    device_id: usize,
    host: &ModelState<T>,
) -> Result<DeviceRegion<T>, DeviceError> {
    pool.check_id(device_id)?;
    {
        let mut slots = lock(&pool.shared.slots);
        match slots[device_id] {
            RegionState::Created | RegionState::Populated => {
                return Err(DeviceError::DuplicateCreate { device_id })
            }
            RegionState::Empty | RegionState::Deleted => slots[device_id] = RegionState::Created,
        }
    }
    Ok(DeviceRegion {
        device_id,
        pool: Arc::clone(&pool.shared),
        core: Arc::new(Mutex::new(RegionCore {
            state: RegionState::Created,
            image: Some(host.zeroed_like()),
        })),
        flight: Arc::new(InFlight {
            pending: Mutex::new(0),
            idle: Condvar::new(),
        }),
    })
}

/// Deep-copies the named host fields into the device image.
pub fn region_update_device<T: Real>(
    region: &DeviceRegion<T>,
    host: &ModelState<T>,
    fields: FieldSet,
) -> Result<(), DeviceError> {
    let mut core = lock(&region.core);
    let img = live_image(&mut core, region.device_id)?;
    if fields.contains(FieldSet::CTL) {
        img.ctl.clone_from(&host.ctl);
    }
    if fields.contains(FieldSet::ATM) {
        img.atm.clone_from(&host.atm);
    }
    if fields.contains(FieldSet::CACHE) {
        img.cache.clone_from(&host.cache);
    }
    if fields.contains(FieldSet::CLIM) {
        img.clim.clone_from(&host.clim);
    }
    if fields.contains(FieldSet::MET0) {
        img.met0.clone_from(&host.met0);
    }
    if fields.contains(FieldSet::MET1) {
        img.met1.clone_from(&host.met1);
    }
    if fields.contains(FieldSet::DT) {
        img.dt.clone_from(&host.dt);
    }
    if fields.contains(FieldSet::RANDOMS) {
        img.randoms.clone_from(&host.randoms);
    }
    core.state = RegionState::Populated;
    lock(&region.pool.slots)[region.device_id] = RegionState::Populated;
    Ok(())
}

fn copy_slice<T: Copy>(dst: &mut [T], src: &[T], range: &WorkRange) {
    dst[range.indices()].copy_from_slice(&src[range.indices()]);
}

/// Copies the device's own particle range back to the host: `time`, `p`,
/// `zeta`, `lon`, `lat`, every quantity array, and the cache, each restricted
/// to `[range.start, range.end)`. Host bytes outside the range are untouched.
pub fn region_update_host<T: Real>(
    region: &DeviceRegion<T>,
    host: &mut ModelState<T>,
    range: WorkRange,
) -> Result<(), DeviceError> {
    let device_id = region.device_id;
    let mut core = lock(&region.core);
    match core.state {
        RegionState::Deleted => return Err(DeviceError::Deleted { device_id }),
        RegionState::Populated => {}
        _ => return Err(DeviceError::NotPopulated { device_id }),
    }
    if range.device_id != device_id {
        return Err(DeviceError::ForeignRange {
            device_id,
            owner: range.device_id,
            start: range.start,
            end: range.end,
        });
    }
    let img = live_image(&mut core, device_id)?;
    let np = host.atm.np();
    if img.atm.np() != np || img.atm.nq() != host.atm.nq() || !host.atm.lengths_consistent() {
        return Err(DeviceError::ShapeMismatch {
            device_id,
            what: "particle arrays",
        });
    }
    if img.cache.np() != host.cache.np() || host.cache.np() != np {
        return Err(DeviceError::ShapeMismatch {
            device_id,
            what: "cache arrays",
        });
    }
    if range.end > np || range.start > range.end {
        return Err(DeviceError::RangeOutOfBounds { end: range.end, np });
    }
    if region.pool.check_overlap {
        let mut claimed = lock(&region.pool.copy_back);
        if let Some(other) = claimed
            .iter()
            .flatten()
            .find(|r| r.device_id != device_id && r.overlaps(&range))
        {
            return Err(DeviceError::RangeOverlap {
                device_id,
                other: other.device_id,
            });
        }
        claimed[device_id] = Some(range);
    }

    let (src, dst) = (&img.atm, &mut host.atm);
    copy_slice(&mut dst.time, &src.time, &range);
    copy_slice(&mut dst.p, &src.p, &range);
    copy_slice(&mut dst.zeta, &src.zeta, &range);
    copy_slice(&mut dst.lon, &src.lon, &range);
    copy_slice(&mut dst.lat, &src.lat, &range);
    for (d, s) in dst.q.iter_mut().zip(&src.q) {
        copy_slice(d, s, &range);
    }
    for (d, s) in host.cache.uvwp.iter_mut().zip(&img.cache.uvwp) {
        copy_slice(d, s, &range);
    }
    copy_slice(&mut host.cache.iso_var, &img.cache.iso_var, &range);
    Ok(())
}

/// Blocks until every task launched on this region has finished.
pub fn device_wait<T>(region: &DeviceRegion<T>) {
    let mut pending = lock(&region.flight.pending);
    while *pending > 0 {
        pending = region
            .flight
            .idle
            .wait(pending)
            .unwrap_or_else(|e| e.into_inner());
    }
}

/// Releases the image. Fails while tasks are in flight or if already deleted;
/// a failed delete leaves the region as it was.
pub fn region_delete<T>(region: &DeviceRegion<T>) -> Result<(), DeviceError> {
    let device_id = region.device_id;
    let pending = *lock(&region.flight.pending);
    if pending > 0 {
        return Err(DeviceError::InFlight { device_id, pending });
    }
    let mut core = lock(&region.core);
    if core.state == RegionState::Deleted {
        return Err(DeviceError::Deleted { device_id });
    }
    // a launch may have slipped in between the check and the lock
    let pending = *lock(&region.flight.pending);
    if pending > 0 {
        return Err(DeviceError::InFlight { device_id, pending });
    }
    core.image = None;
    core.state = RegionState::Deleted;
    lock(&region.pool.slots)[device_id] = RegionState::Deleted;
    lock(&region.pool.copy_back)[device_id] = None;
    Ok(())
}

/// Sequential device loop or one concurrent task per device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DispatchMode {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceFailure {
    pub device_id: usize,
    pub message: String,
}

/// Failures of a dispatch, one entry per failing device, ordered by device id.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} device task(s) failed: {}", .failures.len(), describe(.failures))]
pub struct DispatchError {
    pub failures: Vec<DeviceFailure>,
}

fn describe(failures: &[DeviceFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("device {}: {}", f.device_id, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl DispatchError {
    pub fn device_ids(&self) -> Vec<usize> {
        self.failures.iter().map(|f| f.device_id).collect()
    }
}

fn panic_message(payload: Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}

/// Runs `task(d)` once for every device and returns after all have finished.
/// In parallel mode the invocations run concurrently; their order is
/// unspecified. Failures (errors or panics) are collected per device.
pub fn for_each_device_parallel<E, F>(
    pool: &DevicePool,
    mode: DispatchMode,
    task: F,
) -> Result<(), DispatchError>
where
    E: fmt::Display,
    F: Fn(usize) -> Result<(), E> + Sync,
{
    let run = |d: usize| -> Result<(), String> {
        match panic::catch_unwind(AssertUnwindSafe(|| task(d))) {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(e.to_string()),
            Err(payload) => Err(panic_message(payload)),
        }
    };
    let outcomes: Vec<(usize, Result<(), String>)> = match mode {
        DispatchMode::Sequential => pool.device_ids().map(|d| (d, run(d))).collect(),
        DispatchMode::Parallel => thread::scope(|s| {
            let handles: Vec<_> = pool
                .device_ids()
                .map(|d| {
                    let run = &run;
                    (d, s.spawn(move || run(d)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(d, h)| (d, h.join().unwrap_or_else(|p| Err(panic_message(p)))))
                .collect()
        }),
    };
    let failures: Vec<DeviceFailure> = outcomes
        .into_iter()
        .filter_map(|(device_id, r)| r.err().map(|message| DeviceFailure { device_id, message }))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(DispatchError { failures })
    }
}
