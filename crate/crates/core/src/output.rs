//! CSV writers for particle, gridded and ensemble-group output.
//!
//! Particle values are printed with `Debug`, which emits the shortest text that
//! parses back to the same value, so `read_atm(write_atm(e)) == e` bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model_state::{Control, ParticleEnsemble};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("output directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("group slot q{slot} is out of range (nq = {nq})")]
    SlotOutOfRange { slot: usize, nq: usize },
    #[error("particle {index}: group id {value} is not a non-negative integer")]
    BadGroupId { index: usize, value: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn with_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Particle table `time,p,zeta,lon,lat,q0..`, one row per particle.
pub fn format_atm<T: Real>(ens: &ParticleEnsemble<T>, w: &mut impl Write) -> io::Result<()> {
    write!(w, "time,p,zeta,lon,lat")?;
    for k in 0..ens.nq() {
        write!(w, ",q{k}")?;
    }
    writeln!(w)?;
    for i in 0..ens.np() {
        write!(
            w,
            "{:?},{:?},{:?},{:?},{:?}",
            ens.time[i], ens.p[i], ens.zeta[i], ens.lon[i], ens.lat[i]
        )?;
        for q in &ens.q {
            write!(w, ",{:?}", q[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_atm<T: Real>(ens: &ParticleEnsemble<T>, path: impl AsRef<Path>) -> Result<(), OutputError> {
    with_file(path.as_ref(), |w| format_atm(ens, w))
}

#[inline]
fn bin<T: Real>(x: T, lo: f64, width: f64, n: usize) -> usize {
    let k = ((x.as_f64() - lo) / width).floor();
    if k.is_nan() || k < 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// Particle counts on a `grid_nx` x `grid_ny` lon/lat grid over
/// `[-180, 180) x [-90, 90]`, indexed `counts[iy * nx + ix]`.
pub fn grid_counts<T: Real>(nx: usize, ny: usize, ens: &ParticleEnsemble<T>) -> Vec<u64> {
    let mut counts = vec![0u64; nx * ny];
    if nx == 0 || ny == 0 {
        return counts;
    }
    let (dx, dy) = (360.0 / nx as f64, 180.0 / ny as f64);
    for i in 0..ens.np() {
        let ix = bin(ens.lon[i], -180.0, dx, nx);
        let iy = bin(ens.lat[i], -90.0, dy, ny);
        counts[iy * nx + ix] += 1;
    }
    counts
}

/// Rows `lon_center,lat_center,count`.
pub fn write_grid<T: Real>(
    ctl: &Control<T>,
    ens: &ParticleEnsemble<T>,
    path: impl AsRef<Path>,
) -> Result<(), OutputError> {
    let (nx, ny) = (ctl.grid_nx, ctl.grid_ny);
    let counts = grid_counts(nx, ny, ens);
    with_file(path.as_ref(), |w| {
        writeln!(w, "lon_center,lat_center,count")?;
        if nx == 0 || ny == 0 {
            return Ok(());
        }
        let (dx, dy) = (360.0 / nx as f64, 180.0 / ny as f64);
        for iy in 0..ny {
            for ix in 0..nx {
                let lon = -180.0 + (ix as f64 + 0.5) * dx;
                let lat = -90.0 + (iy as f64 + 0.5) * dy;
                writeln!(w, "{lon},{lat},{}", counts[iy * nx + ix])?;
            }
        }
        Ok(())
    })
}

/// Per-group count and mean / population standard deviation of lon, lat, p.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group: u64,
    pub count: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn group_stats<T: Real>(ens: &ParticleEnsemble<T>, slot: usize) -> Result<Vec<GroupStats>, OutputError> {
    let ids = ens.q.get(slot).ok_or(OutputError::SlotOutOfRange { slot, nq: ens.nq() })?;
    let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &g) in ids.iter().enumerate() {
        let v = g.as_f64();
        if !(v >= 0.0) || v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(OutputError::BadGroupId {
                index: i,
                value: g.to_string(),
            });
        }
        members.entry(v as u64).or_default().push(i);
    }
    Ok(members
        .into_iter()
        .map(|(group, idx)| {
            let n = idx.len() as f64;
            let cols = [&ens.lon, &ens.lat, &ens.p];
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            for (c, col) in cols.iter().enumerate() {
                let m = idx.iter().map(|&i| col[i].as_f64()).sum::<f64>() / n;
                let var = idx.iter().map(|&i| (col[i].as_f64() - m).powi(2)).sum::<f64>() / n;
                mean[c] = m;
                std[c] = var.sqrt();
            }
            GroupStats {
                group,
                count: idx.len(),
                mean,
                std,
            }
        })
        .collect())
}

/// One row per group, groups ascending. The ensemble must have a group slot configured.
pub fn write_ens<T: Real>(
    ctl: &Control<T>,
    ens: &ParticleEnsemble<T>,
    path: impl AsRef<Path>,
) -> Result<(), OutputError> {
    let slot = ctl.ens_group_slot.ok_or(OutputError::SlotOutOfRange {
        slot: usize::MAX,
        nq: ens.nq(),
    })?;
    let stats = group_stats(ens, slot)?;
    with_file(path.as_ref(), |w| {
        writeln!(w, "group,count,lon_mean,lon_std,lat_mean,lat_std,p_mean,p_std")?;
        for s in &stats {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.group, s.count, s.mean[0], s.std[0], s.mean[1], s.std[1], s.mean[2], s.std[2]
            )?;
        }
        Ok(())
    })
}

/// Integer seconds used in output file names.
pub fn time_label<T: Real>(t: T) -> i64 {
    t.as_f64().round() as i64
}

/// Writes `atm_<t>.csv`, plus `grid_<t>.csv` and `ens_<t>.csv` when enabled.
/// Returns the paths written.
pub fn write_output<T: Real>(
    ctl: &Control<T>,
    ens: &ParticleEnsemble<T>,
    t: T,
    outdir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, OutputError> {
    let dir = outdir.as_ref();
    if !dir.is_dir() {
        return Err(OutputError::MissingDir(dir.to_path_buf()));
    }
    let label = time_label(t);
    let mut written = Vec::new();

    let atm = dir.join(format!("atm_{label}.csv"));
    write_atm(ens, &atm)?;
    written.push(atm);

    if ctl.grid_nx * ctl.grid_ny > 0 {
        let grid = dir.join(format!("grid_{label}.csv"));
        write_grid(ctl, ens, &grid)?;
        written.push(grid);
    }
    if ctl.ens_group_slot.is_some() {
        let ens_path = dir.join(format!("ens_{label}.csv"));
        write_ens(ctl, ens, &ens_path)?;
        written.push(ens_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_atm;
    use proptest::prelude::*;

    fn ens(points: &[(f64, f64, f64)]) -> ParticleEnsemble<f64> {
        let mut e = ParticleEnsemble::zeroed(points.len(), 5);
        for (i, &(lon, lat, p)) in points.iter().enumerate() {
            e.lon[i] = lon;
            e.lat[i] = lat;
            e.p[i] = p;
        }
        e
    }

    fn atm_text(e: &ParticleEnsemble<f64>) -> String {
        let mut buf = Vec::new();
        format_atm(e, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn atm_line_counts() {
        assert_eq!(atm_text(&ens(&[])), "time,p,zeta,lon,lat,q0,q1,q2,q3,q4\n");
        assert_eq!(atm_text(&ens(&[(1.0, 2.0, 3.0)])).lines().count(), 2);
    }

    #[test]
    fn grid_single_particle() {
        let e = ens(&[(0.0, 0.0, 500.0)]);
        let c = grid_counts(4, 4, &e);
        assert_eq!(c.iter().sum::<u64>(), 1);
        // (0, 0) lies on the lower edge of bin (2, 2)
        assert_eq!(c[2 * 4 + 2], 1);
    }

    #[test]
    fn grid_upper_edges_clamp() {
        let e = ens(&[(180.0 - 1e-12, 90.0, 500.0), (-180.0, -90.0, 500.0)]);
        let c = grid_counts(36, 18, &e);
        assert_eq!(c[17 * 36 + 35], 1);
        assert_eq!(c[0], 1);
    }

    #[test]
    fn ens_stats_and_ordering() {
        let mut e = ens(&[(10.0, 0.0, 500.0), (10.0, 0.0, 500.0), (0.0, 10.0, 100.0), (2.0, 20.0, 300.0)]);
        e.q[4] = vec![3.0, 3.0, 1.0, 1.0];
        let s = group_stats(&e, 4).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].group, 1);
        assert_eq!(s[0].mean, [1.0, 15.0, 200.0]);
        assert_eq!(s[0].std, [1.0, 5.0, 100.0]);
        assert_eq!(s[1].group, 3);
        assert_eq!(s[1].std, [0.0; 3]);
        e.q[4][0] = 0.5;
        assert!(matches!(group_stats(&e, 4), Err(OutputError::BadGroupId { index: 0, .. })));
        e.q[4][0] = -1.0;
        assert!(group_stats(&e, 4).is_err());
    }

    #[test]
    fn write_output_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctl = Control::<f64> {
            ens_group_slot: Some(4),
            ..Default::default()
        };
        let e = ens(&[(1.0, 1.0, 500.0)]);
        let files = write_output(&ctl, &e, 3600.0, dir.path()).unwrap();
        for name in ["atm_3600.csv", "grid_3600.csv", "ens_3600.csv"] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        assert_eq!(files.len(), 3);

        ctl.grid_nx = 0;
        ctl.ens_group_slot = None;
        let files = write_output(&ctl, &e, 7200.0, dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("atm_7200.csv")]);
        assert!(!dir.path().join("grid_7200.csv").exists());

        let missing = dir.path().join("nope");
        let err = write_output(&ctl, &e, 0.0, &missing).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn ens_means_match_brute_force() {
        // deterministic pseudo-random ensemble; oracle recomputes per group with plain loops
        let n = 500;
        let mut e = ParticleEnsemble::<f64>::zeroed(n, 5);
        let mut s = 12345u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..n {
            e.lon[i] = next() * 360.0 - 180.0;
            e.lat[i] = next() * 180.0 - 90.0;
            e.p[i] = next() * 1000.0;
            e.q[4][i] = (next() * 7.0).floor();
        }
        let stats = group_stats(&e, 4).unwrap();
        for st in &stats {
            let (mut c, mut sl) = (0usize, 0.0);
            for i in 0..n {
                if e.q[4][i] as u64 == st.group {
                    c += 1;
                    sl += e.lon[i];
                }
            }
            assert_eq!(c, st.count);
            assert!((sl / c as f64 - st.mean[0]).abs() < 1e-9);
        }
        assert_eq!(stats.iter().map(|s| s.count).sum::<usize>(), n);
    }

    proptest! {
        #[test]
        fn atm_round_trip(
            rows in prop::collection::vec(
                (any::<f64>().prop_filter("finite", |x| x.is_finite()),
                 -180.0f64..180.0, -90.0f64..=90.0, 0.0f64..1100.0), 0..20)
        ) {
            let mut e = ParticleEnsemble::<f64>::zeroed(rows.len(), 5);
            for (i, &(x, lon, lat, p)) in rows.iter().enumerate() {
                e.time[i] = x;
                e.lon[i] = lon;
                e.lat[i] = lat;
                e.p[i] = p;
                e.q[0][i] = x / 3.0;
            }
            let back: ParticleEnsemble<f64> = parse_atm(&atm_text(&e), &Control::default()).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn grid_conserves_count(
            pts in prop::collection::vec((-180.0f64..180.0, -90.0f64..=90.0), 0..200),
            nx in 1usize..50, ny in 1usize..50,
        ) {
            let e = ens(&pts.iter().map(|&(a, b)| (a, b, 500.0)).collect::<Vec<_>>());
            prop_assert_eq!(grid_counts(nx, ny, &e).iter().sum::<u64>(), pts.len() as u64);
        }
    }
}
