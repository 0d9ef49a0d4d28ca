#![allow(dead_code)]

use std::path::Path;

use lagtrans::driver::{run_simulation, MetSeries, RunOptions, RunSummary};
use lagtrans::device_runtime::DispatchMode;
use lagtrans::model_state::{Control, IsosurfMode, MeteoField, ParticleEnsemble, RngMode};

pub const LEVELS: [f64; 10] = [1000.0, 850.0, 700.0, 500.0, 300.0, 200.0, 100.0, 50.0, 10.0, 1.0];

/// Global 10 degree grid, longitudes from -180, all latitudes including the poles.
pub fn global_met(t: f64, f: impl Fn(f64, f64, f64) -> (f64, f64, f64, f64)) -> MeteoField<f64> {
    let lons: Vec<f64> = (0..36).map(|k| -180.0 + 10.0 * k as f64).collect();
    let lats: Vec<f64> = (0..19).map(|k| -90.0 + 10.0 * k as f64).collect();
    MeteoField::from_fn(t, lons, lats, LEVELS.to_vec(), f).unwrap()
}

/// Spatially and temporally varying flow over a statically stable atmosphere.
pub fn flow_met(t: f64) -> MeteoField<f64> {
    let phase = t / 21_600.0;
    global_met(t, move |lon, lat, p| {
        let (lr, br) = (lon.to_radians(), lat.to_radians());
        let u = 15.0 * br.cos() + 5.0 * (2.0 * lr + phase).sin() * br.cos();
        let v = 4.0 * (lr - phase).cos() * br.cos();
        let w = 2e-3 * (lr + br).sin() * (p / 1000.0);
        let temp = 200.0 + 0.04 * p + 5.0 * br.cos() * (lr + phase).cos();
        (u, v, w, temp)
    })
}

pub fn flow_series(times: &[f64]) -> MetSeries<f64> {
    MetSeries::from_fields(times.iter().map(|&t| flow_met(t)).collect()).unwrap()
}

/// Minimal deterministic generator for fixtures.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        (self.next_f64() * n as f64) as u64 % n.max(1)
    }
}

/// Scattered particles; quantity slot 5 holds group ids 0..7.
pub fn scattered(np: usize, seed: u64) -> ParticleEnsemble<f64> {
    let mut rng = Lcg(seed);
    let mut e = ParticleEnsemble::zeroed(np, 6);
    for i in 0..np {
        e.lon[i] = rng.range(-180.0, 180.0);
        e.lat[i] = rng.range(-80.0, 80.0);
        e.p[i] = rng.range(150.0, 950.0);
        e.q[5][i] = (i % 7) as f64;
    }
    e
}

/// Every process switched on.
pub fn full_physics_ctl() -> Control<f64> {
    Control {
        nq: 6,
        t_start: 0.0,
        t_stop: 9000.0,
        dt_model: 180.0,
        met_dt: 3600.0,
        turb_dx: 50.0,
        turb_dz: 0.1,
        turb_meso: 0.16,
        conv_prob: 0.05,
        conv_p_top: 300.0,
        sedi_radius: 1e-5,
        sedi_density: 1000.0,
        isosurf_mode: IsosurfMode::Off,
        rng_mode: RngMode::Counter,
        rng_seed_global: 42,
        output_dt: 3600.0,
        grid_nx: 36,
        grid_ny: 18,
        ens_group_slot: Some(5),
        ..Control::default()
    }
}

pub fn deterministic_ctl(rng_mode: RngMode) -> Control<f64> {
    Control {
        turb_dx: 0.0,
        turb_dz: 0.0,
        turb_meso: 0.0,
        conv_prob: 0.0,
        rng_mode,
        ..full_physics_ctl()
    }
}

pub fn run(
    mut ctl: Control<f64>,
    atm: ParticleEnsemble<f64>,
    met: &MetSeries<f64>,
    devices: i64,
    dispatch: DispatchMode,
    outdir: &Path,
) -> RunSummary<f64> {
    ctl.num_devices_requested = devices;
    let opts = RunOptions {
        dispatch,
        available_devices: 4,
        print_report: false,
    };
    run_simulation(ctl, atm, met, outdir, &opts).unwrap()
}

/// Sorted `(file name, contents)` of every output CSV except the timer report.
pub fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timers.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
