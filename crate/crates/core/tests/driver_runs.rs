mod common;

use std::fs;

use common::*;
use lagtrans::device_runtime::DispatchMode;
use lagtrans::driver::{parse_args, run_from_args, run_simulation, DriverError, MetSeries, RunOptions};
use lagtrans::ingest::{read_atm, write_met};
use lagtrans::model_state::{Control, IsosurfMode, ParticleEnsemble, RngMode};
use lagtrans::output::write_atm;

fn bits(e: &ParticleEnsemble<f64>) -> Vec<u64> {
    [&e.time, &e.p, &e.zeta, &e.lon, &e.lat]
        .into_iter()
        .chain(e.q.iter())
        .flat_map(|v| v.iter().map(|x| x.to_bits()))
        .collect()
}

#[test]
fn sequential_and_parallel_dispatch_agree() {
    let met = flow_series(&[0.0, 3600.0, 7200.0, 10_800.0]);
    let atm = scattered(777, 5);
    for devices in [1, 3, 4] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let par = run(full_physics_ctl(), atm.clone(), &met, devices, DispatchMode::Parallel, a.path());
        let seq = run(full_physics_ctl(), atm.clone(), &met, devices, DispatchMode::Sequential, b.path());
        assert_eq!(bits(&par.final_ensemble), bits(&seq.final_ensemble), "devices = {devices}");
        assert_eq!(output_files(a.path()), output_files(b.path()));
    }
}

#[test]
fn device_count_invariance_with_isosurfaces() {
    let met = flow_series(&[0.0, 3600.0, 7200.0, 10_800.0]);
    let atm = scattered(1001, 8);
    for iso in [IsosurfMode::Pressure, IsosurfMode::Theta] {
        let ctl = Control {
            isosurf_mode: iso,
            ..full_physics_ctl()
        };
        let dir = tempfile::tempdir().unwrap();
        let oracle = run(ctl.clone(), atm.clone(), &met, 1, DispatchMode::Sequential, dir.path());
        let want = output_files(dir.path());
        for devices in 2..=4 {
            let dir = tempfile::tempdir().unwrap();
            let s = run(ctl.clone(), atm.clone(), &met, devices, DispatchMode::Parallel, dir.path());
            assert_eq!(bits(&s.final_ensemble), bits(&oracle.final_ensemble), "{iso:?}, {devices} devices");
            assert_eq!(output_files(dir.path()), want);
        }
    }
}

#[test]
fn faithful_mode_is_reproducible_for_a_fixed_device_count() {
    let met = flow_series(&[0.0, 3600.0, 7200.0, 10_800.0]);
    let ctl = Control {
        rng_mode: RngMode::Faithful,
        ..full_physics_ctl()
    };
    let atm = scattered(300, 2);
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            bits(&run(ctl.clone(), atm.clone(), &met, 2, DispatchMode::Parallel, dir.path()).final_ensemble)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn zero_duration_run() {
    let met = flow_series(&[0.0, 3600.0]);
    let ctl = Control {
        t_stop: 0.0,
        ..full_physics_ctl()
    };
    let dir = tempfile::tempdir().unwrap();
    let atm = scattered(50, 1);
    let s = run(ctl, atm.clone(), &met, 3, DispatchMode::Parallel, dir.path());
    assert_eq!(s.steps, 0);
    let names: Vec<String> = output_files(dir.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["atm_0.csv", "ens_0.csv", "grid_0.csv"]);
    assert_eq!(bits(&s.final_ensemble), bits(&atm));
    let deletes = s.timers.iter().filter(|r| r.name == "DELETE_DATA_REGION").count();
    assert_eq!(deletes, 3);
}

#[test]
fn every_device_reports_each_stage_and_lifecycle_is_complete() {
    let met = flow_series(&[0.0, 3600.0, 7200.0, 10_800.0]);
    let dir = tempfile::tempdir().unwrap();
    let s = run(full_physics_ctl(), scattered(200, 4), &met, 4, DispatchMode::Parallel, dir.path());
    for d in 0..4 {
        let scope = lagtrans::timers::TimerScope::Device(d);
        let adv = s.timers.iter().filter(|r| r.name == "module_advection" && r.scope == scope).count();
        assert_eq!(adv, s.steps);
        let created = s.timers.iter().filter(|r| r.name == "CREATE_DATA_REGION" && r.scope == scope).count();
        let deleted = s.timers.iter().filter(|r| r.name == "DELETE_DATA_REGION" && r.scope == scope).count();
        assert_eq!((created, deleted), (1, 1));
    }
    // met rotated twice (3600, 7200): two re-updates per device
    let met_updates = s.timers.iter().filter(|r| r.name == "UPDATE_MET").count();
    assert_eq!(met_updates, 2 * 4);
    assert!(s.report.starts_with("name,group,scope,count,total_ns,mean_ns\n"));
}

#[test]
fn particle_times_are_monotone_and_capped() {
    let met = flow_series(&[0.0, 3600.0, 7200.0, 10_800.0]);
    let ctl = Control {
        t_stop: 8000.0,
        output_dt: 1800.0,
        ..full_physics_ctl()
    };
    let dir = tempfile::tempdir().unwrap();
    run(ctl.clone(), scattered(150, 6), &met, 3, DispatchMode::Parallel, dir.path());
    let mut prev: Option<Vec<f64>> = None;
    for t in [0, 1800, 3600, 5400, 7200, 8000] {
        let e: ParticleEnsemble<f64> = read_atm(dir.path().join(format!("atm_{t}.csv")), &ctl).unwrap();
        assert!(e.time.iter().all(|&x| x <= 8000.0));
        if let Some(p) = &prev {
            assert!(p.iter().zip(&e.time).all(|(a, b)| a <= b));
        }
        prev = Some(e.time);
    }
    assert!(prev.unwrap().iter().all(|&x| x == 8000.0));
}

#[test]
fn met_coverage_and_missing_outdir_are_errors() {
    let met = flow_series(&[0.0, 3600.0]);
    let dir = tempfile::tempdir().unwrap();
    let err = run_simulation(full_physics_ctl(), scattered(10, 1), &met, dir.path(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, DriverError::MetCoverage { .. }), "{err}");

    let ctl = Control {
        t_stop: 1800.0,
        ..full_physics_ctl()
    };
    let missing = dir.path().join("absent");
    let err = run_simulation(ctl, scattered(10, 1), &met, &missing, &RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("absent"), "{err}");

    let reversed = MetSeries::from_fields(vec![flow_met(3600.0), flow_met(0.0)]);
    assert!(matches!(reversed, Err(DriverError::MetOrder { .. })));
}

#[test]
fn files_on_disk_match_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let times = [0.0, 3600.0, 7200.0];
    fs::create_dir(root.join("met")).unwrap();
    for (k, &t) in times.iter().enumerate() {
        write_met(&flow_met(t), root.join(format!("met/met_{k}.txt"))).unwrap();
    }
    fs::write(
        root.join("run.ctl"),
        "# test run\nNQ = 6\nT_STOP = 5400\nDT = 180\nMET_DT = 3600\nTURB_DX = 50\nTURB_DZ = 0.1\n\
         CONV_PROB = 0.05\nCONV_P_TOP = 300\nSEDI_RADIUS = 1e-5\nRNG_MODE = faithful\nRNG_SEED = 9\n\
         OUTPUT_DT = 1800\nENS_GROUP_SLOT = 5\nNUM_DEVICES = 1\n",
    )
    .unwrap();
    let atm = scattered(120, 12);
    write_atm(&atm, root.join("atm.csv")).unwrap();
    fs::create_dir(root.join("out_files")).unwrap();
    fs::create_dir(root.join("out_mem")).unwrap();

    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let args = parse_args([
        "sim".to_string(),
        p("run.ctl"),
        p("atm.csv"),
        format!("{}/", p("met")),
        p("out_files"),
        "--devices".into(),
        "3".into(),
        "--rng-mode".into(),
        "counter".into(),
    ])
    .unwrap();
    let opts = RunOptions {
        available_devices: 4,
        ..RunOptions::default()
    };
    let from_files = run_from_args::<f64>(&args, &opts).unwrap();
    assert_eq!(from_files.num_devices, 3);

    let ctl = Control {
        t_stop: 5400.0,
        output_dt: 1800.0,
        rng_seed_global: 9,
        turb_meso: Control::<f64>::default().turb_meso,
        ..full_physics_ctl()
    };
    let met = flow_series(&times);
    let mem = run(ctl, atm, &met, 1, DispatchMode::Sequential, &root.join("out_mem"));
    assert_eq!(bits(&from_files.final_ensemble), bits(&mem.final_ensemble));
    assert_eq!(output_files(&root.join("out_files")), output_files(&root.join("out_mem")));
    assert!(root.join("out_files/timers.csv").is_file());
}

#[test]
fn single_precision_run() {
    let met64 = [0.0, 3600.0].map(flow_met);
    let to32 = |m: &lagtrans::Meteo| lagtrans::Meteo32 {
        t_met: m.t_met as f32,
        lons: m.lons.iter().map(|&x| x as f32).collect(),
        lats: m.lats.iter().map(|&x| x as f32).collect(),
        levs: m.levs.iter().map(|&x| x as f32).collect(),
        u: m.u.iter().map(|&x| x as f32).collect(),
        v: m.v.iter().map(|&x| x as f32).collect(),
        w: m.w.iter().map(|&x| x as f32).collect(),
        temp: m.temp.iter().map(|&x| x as f32).collect(),
    };
    let met = MetSeries::from_fields(met64.iter().map(to32).collect()).unwrap();
    let src = scattered(64, 3);
    let mut atm = lagtrans::Ensemble32::zeroed(64, 6);
    for i in 0..64 {
        atm.lon[i] = src.lon[i] as f32;
        atm.lat[i] = src.lat[i] as f32;
        atm.p[i] = src.p[i] as f32;
    }
    let ctl = lagtrans::Ctl32 {
        nq: 6,
        t_stop: 3600.0,
        rng_mode: RngMode::Counter,
        conv_prob: 0.05,
        isosurf_mode: IsosurfMode::Theta,
        num_devices_requested: 2,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        available_devices: 2,
        ..RunOptions::default()
    };
    let s = run_simulation(ctl, atm, &met, dir.path(), &opts).unwrap();
    let e = &s.final_ensemble;
    assert!(e.lon.iter().chain(&e.lat).chain(&e.p).all(|x| x.is_finite()));
    assert!(e.time.iter().all(|&t| t == 3600.0));
    assert!(dir.path().join("atm_3600.csv").is_file());
}
