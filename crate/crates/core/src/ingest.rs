//! Input readers: control file, initial particle CSV, meteorological text
//! snapshots, and the built-in climatology.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::model_state::{
    ensemble_allocate, validate_control, ClimData, Control, IsosurfMode, MeteoError, MeteoField,
    ParticleEnsemble, RngMode, Violation,
};
use crate::num::Real;
use crate::physics::wrap_lon;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid control: {}", join_violations(.0))]
    InvalidControl(Vec<Violation>),
    #[error("{got} particles exceed capacity np_max = {np_max}")]
    TooManyParticles { got: usize, np_max: usize },
    #[error("line {line}: latitude {lat} outside [-90, 90]")]
    LatitudeOutOfRange { line: usize, lat: String },
    #[error("line {line}: dimension mismatch: {msg}")]
    DimensionMismatch { line: usize, msg: String },
    #[error(transparent)]
    Meteo(#[from] MeteoError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_value<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V, IngestError> {
    raw.parse().map_err(|_| IngestError::Parse {
        line,
        msg: format!("cannot parse value '{raw}' for {key}"),
    })
}

/// Reads a `KEY = value` control file. Unset keys keep their defaults.
pub fn read_ctl<T: Real>(path: impl AsRef<Path>) -> Result<Control<T>, IngestError> {
    parse_ctl(&read_text(path.as_ref())?)
}

pub fn parse_ctl<T: Real>(text: &str) -> Result<Control<T>, IngestError> {
    let mut ctl = Control::<T>::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, val) = content.split_once('=').ok_or_else(|| IngestError::Parse {
            line,
            msg: format!("expected 'KEY = value', got '{content}'"),
        })?;
        let (key, val) = (key.trim(), val.trim());
        match key {
            "NP_MAX" => ctl.np_max = parse_value(line, key, val)?,
            "NQ" => ctl.nq = parse_value(line, key, val)?,
            "T_START" => ctl.t_start = parse_value(line, key, val)?,
            "T_STOP" => ctl.t_stop = parse_value(line, key, val)?,
            "DT" => ctl.dt_model = parse_value(line, key, val)?,
            "MET_DT" => ctl.met_dt = parse_value(line, key, val)?,
            "TURB_DX" => ctl.turb_dx = parse_value(line, key, val)?,
            "TURB_DZ" => ctl.turb_dz = parse_value(line, key, val)?,
            "TURB_MESO" => ctl.turb_meso = parse_value(line, key, val)?,
            "CONV_PROB" => ctl.conv_prob = parse_value(line, key, val)?,
            "CONV_P_TOP" => ctl.conv_p_top = parse_value(line, key, val)?,
            "P_SURF" => ctl.p_surf = parse_value(line, key, val)?,
            "P_TOP" => ctl.p_top = parse_value(line, key, val)?,
            "SEDI_RADIUS" => ctl.sedi_radius = parse_value(line, key, val)?,
            "SEDI_DENSITY" => ctl.sedi_density = parse_value(line, key, val)?,
            "ISOSURF" => {
                let code: i64 = parse_value(line, key, val)?;
                ctl.isosurf_mode = IsosurfMode::from_code(code).ok_or(IngestError::Parse {
                    line,
                    msg: format!("ISOSURF must be 0, 1 or 2, got {code}"),
                })?;
            }
            "MPI_RANK" => ctl.mpi_rank = parse_value(line, key, val)?,
            "NUM_DEVICES" => ctl.num_devices_requested = parse_value(line, key, val)?,
            "RNG_MODE" => {
                ctl.rng_mode =
                    RngMode::from_str(val).map_err(|msg| IngestError::Parse { line, msg })?
            }
            "RNG_SEED" => ctl.rng_seed_global = parse_value(line, key, val)?,
            "OUTPUT_DT" => ctl.output_dt = parse_value(line, key, val)?,
            "GRID_NX" => ctl.grid_nx = parse_value(line, key, val)?,
            "GRID_NY" => ctl.grid_ny = parse_value(line, key, val)?,
            "ENS_GROUP_SLOT" => {
                let slot: i64 = parse_value(line, key, val)?;
                ctl.ens_group_slot = usize::try_from(slot).ok();
            }
            other => {
                return Err(IngestError::Parse {
                    line,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    let violations = validate_control(&ctl);
    if !violations.is_empty() {
        return Err(IngestError::InvalidControl(violations));
    }
    Ok(ctl)
}

/// Reads the initial particle CSV (`time,p,zeta,lon,lat[,q0..]`).
pub fn read_atm<T: Real>(
    path: impl AsRef<Path>,
    ctl: &Control<T>,
) -> Result<ParticleEnsemble<T>, IngestError> {
    parse_atm(&read_text(path.as_ref())?, ctl)
}

const ATM_COLUMNS: [&str; 5] = ["time", "p", "zeta", "lon", "lat"];

pub fn parse_atm<T: Real>(
    text: &str,
    ctl: &Control<T>,
) -> Result<ParticleEnsemble<T>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.len() < ATM_COLUMNS.len()
        || headers.iter().zip(ATM_COLUMNS).any(|(h, want)| h != want)
    {
        return Err(IngestError::Parse {
            line: 1,
            msg: format!("header must start with {}", ATM_COLUMNS.join(",")),
        });
    }
    let nq_file = headers.len() - ATM_COLUMNS.len();
    for (k, h) in headers.iter().skip(ATM_COLUMNS.len()).enumerate() {
        if h != format!("q{k}") {
            return Err(IngestError::Parse {
                line: 1,
                msg: format!("expected column q{k}, found '{h}'"),
            });
        }
    }
    if nq_file > ctl.nq {
        return Err(IngestError::Parse {
            line: 1,
            msg: format!("file has {nq_file} quantity columns but NQ = {}", ctl.nq),
        });
    }

    let mut rows: Vec<(usize, Vec<T>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<T>().map_err(|_| IngestError::Parse {
                    line,
                    msg: format!("cannot parse number '{f}'"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((line, vals));
    }

    let mut ens = ensemble_allocate(ctl, rows.len()).map_err(|e| IngestError::TooManyParticles {
        got: e.requested,
        np_max: e.np_max,
    })?;
    let ninety = T::lit(90.0);
    for (i, (line, vals)) in rows.into_iter().enumerate() {
        let lat = vals[4];
        if !(lat >= -ninety && lat <= ninety) {
            return Err(IngestError::LatitudeOutOfRange {
                line,
                lat: lat.to_string(),
            });
        }
        ens.time[i] = vals[0];
        ens.p[i] = vals[1];
        ens.zeta[i] = vals[2];
        ens.lon[i] = wrap_lon(vals[3]);
        ens.lat[i] = lat;
        for (k, &v) in vals[ATM_COLUMNS.len()..].iter().enumerate() {
            ens.q[k][i] = v;
        }
    }
    Ok(ens)
}

/// Reads one meteorological snapshot in the MET text format.
pub fn read_met<T: Real>(path: impl AsRef<Path>) -> Result<MeteoField<T>, IngestError> {
    parse_met(&read_text(path.as_ref())?)
}

/// Reads only the validity time from a MET header.
pub fn read_met_time<T: Real>(path: impl AsRef<Path>) -> Result<T, IngestError> {
    let text = read_text(path.as_ref())?;
    let mut lines = data_lines(&text);
    let (line, header) = lines.next().ok_or(IngestError::Parse {
        line: 1,
        msg: "empty MET file".into(),
    })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "MET" {
        return Err(IngestError::Parse {
            line,
            msg: "header must be 'MET <t_met> <nx> <ny> <nz>'".into(),
        });
    }
    parse_value(line, "t_met", toks[1])
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn numbers<T: Real>(line: usize, s: &str, expected: usize, what: &str) -> Result<Vec<T>, IngestError> {
    let vals = s
        .split_whitespace()
        .map(|tok| parse_value::<T>(line, what, tok))
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != expected {
        return Err(IngestError::DimensionMismatch {
            line,
            msg: format!("{what}: expected {expected} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}

pub fn parse_met<T: Real>(text: &str) -> Result<MeteoField<T>, IngestError> {
    let mut lines = data_lines(text);
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| IngestError::DimensionMismatch {
            line: 0,
            msg: format!("file ended while reading {what}"),
        })
    };

    let (line, header) = next("header")?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "MET" {
        return Err(IngestError::Parse {
            line,
            msg: "header must be 'MET <t_met> <nx> <ny> <nz>'".into(),
        });
    }
    let t_met: T = parse_value(line, "t_met", toks[1])?;
    let nx: usize = parse_value(line, "nx", toks[2])?;
    let ny: usize = parse_value(line, "ny", toks[3])?;
    let nz: usize = parse_value(line, "nz", toks[4])?;

    let (line, s) = next("longitudes")?;
    let lons = numbers(line, s, nx, "longitudes")?;
    let (line, s) = next("latitudes")?;
    let lats = numbers(line, s, ny, "latitudes")?;
    let (line, s) = next("levels")?;
    let levs = numbers(line, s, nz, "levels")?;

    let n = nx * ny * nz;
    let mut fields: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n]);
    for (name, field) in ["U", "V", "W", "T"].iter().zip(fields.iter_mut()) {
        let (line, s) = next(name)?;
        if s != *name {
            return Err(IngestError::Parse {
                line,
                msg: format!("expected variable block '{name}', found '{s}'"),
            });
        }
        for iz in 0..nz {
            for iy in 0..ny {
                let (line, s) = next(name)?;
                let row: Vec<T> = numbers(line, s, nx, name)?;
                for (ix, v) in row.into_iter().enumerate() {
                    field[(ix * ny + iy) * nz + iz] = v;
                }
            }
        }
    }
    if let Some((line, s)) = lines.next() {
        return Err(IngestError::DimensionMismatch {
            line,
            msg: format!("unexpected trailing data '{s}'"),
        });
    }
    let [u, v, w, temp] = fields;
    Ok(MeteoField::new(t_met, lons, lats, levs, u, v, w, temp)?)
}

/// Renders a snapshot in the MET text format, at round-trip precision.
pub fn format_met<T: Real>(met: &MeteoField<T>) -> String {
    let (nx, ny, nz) = (met.nx(), met.ny(), met.nz());
    let mut out = String::new();
    let join = |v: &[T]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "MET {:?} {nx} {ny} {nz}", met.t_met);
    let _ = writeln!(out, "{}", join(&met.lons));
    let _ = writeln!(out, "{}", join(&met.lats));
    let _ = writeln!(out, "{}", join(&met.levs));
    for (name, field) in [("U", &met.u), ("V", &met.v), ("W", &met.w), ("T", &met.temp)] {
        let _ = writeln!(out, "{name}");
        for iz in 0..nz {
            for iy in 0..ny {
                let row: Vec<T> = (0..nx).map(|ix| field[met.idx(ix, iy, iz)]).collect();
                let _ = writeln!(out, "{}", join(&row));
            }
        }
    }
    out
}

pub fn write_met<T: Real>(met: &MeteoField<T>, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, format_met(met))
}

/// Appends a wrap-around longitude column when the grid covers the full circle.
pub fn met_periodic<T: Real>(mut met: MeteoField<T>) -> MeteoField<T> {
    let nx = met.nx();
    if nx < 2 {
        return met;
    }
    let first = met.lons[0];
    let last = met.lons[nx - 1];
    let spacing = last - met.lons[nx - 2];
    let full = T::lit(360.0);
    if ((last - first + spacing) - full).abs() > T::lit(1e-6) {
        return met;
    }
    let col = met.ny() * met.nz();
    met.lons.push(first + full);
    for field in [&mut met.u, &mut met.v, &mut met.w, &mut met.temp] {
        field.extend_from_within(0..col);
    }
    met
}

/// Tabulates the built-in analytic climatology:
/// `p_trop(lat) = 300 - 200 cos^2(lat)` on a 5 degree grid and
/// `hno3(lat, p) = 1e-8 exp(-((p - 50)/40)^2) (0.5 + 0.5 cos(lat))` on a
/// 5 degree x 10 hPa grid reaching down to the surface pressure.
pub fn read_clim<T: Real>(ctl: &Control<T>) -> ClimData<T> {
    let lats: Vec<f64> = (0..=36).map(|k| -90.0 + 5.0 * k as f64).collect();
    let p_max = (ctl.p_surf.as_f64() / 10.0).ceil().max(100.0) as usize * 10;
    let ps: Vec<f64> = (0..=p_max / 10).map(|k| 10.0 * k as f64).collect();
    let p_trop: Vec<f64> = lats
        .iter()
        .map(|&lat| 300.0 - 200.0 * (lat.to_radians()).cos().powi(2))
        .collect();
    let mut hno3 = Vec::with_capacity(lats.len() * ps.len());
    for &lat in &lats {
        for &p in &ps {
            hno3.push(1e-8 * (-((p - 50.0) / 40.0).powi(2)).exp() * (0.5 + 0.5 * lat.to_radians().cos()));
        }
    }
    let conv = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    ClimData {
        lats: conv(lats),
        p_trop: conv(p_trop),
        hno3_ps: conv(ps),
        hno3: conv(hno3),
    }
}
