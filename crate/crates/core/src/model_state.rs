//! Core model data: control parameters, the particle ensemble, meteorological
//! snapshots, climatology tables and the per-particle scratch state.
//!
//! Quantity slots are fixed: 0 = temperature (K), 1 = u (m/s), 2 = v (m/s),
//! 3 = HNO3 volume mixing ratio, 4 = stratosphere flag (0/1). Slots from 5 on
//! are free for user data such as ensemble group ids.

use std::fmt;

use thiserror::Error;

use crate::num::Real;
use crate::rng::RandomBatch;

pub const Q_TEMP: usize = 0;
pub const Q_U: usize = 1;
pub const Q_V: usize = 2;
pub const Q_HNO3: usize = 3;
pub const Q_STRAT: usize = 4;
/// Number of fixed quantity slots written by the meteo sampling module.
pub const NQ_FIXED: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IsosurfMode {
    #[default]
    Off,
    Pressure,
    Theta,
}

impl IsosurfMode {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Self::Off),
            1 => Some(Self::Pressure),
            2 => Some(Self::Theta),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Self::Off => 0,
            Self::Pressure => 1,
            Self::Theta => 2,
        }
    }
}

/// How random batches are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RngMode {
    /// One sequential generator per device, seeded `rank + 83 * device_id`.
    #[default]
    Faithful,
    /// Stateless keyed draws; output does not depend on the device count.
    Counter,
}

impl RngMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Faithful => "faithful",
            Self::Counter => "counter",
        }
    }
}

impl std::str::FromStr for RngMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "faithful" => Ok(Self::Faithful),
            "counter" => Ok(Self::Counter),
            other => Err(format!("unknown rng mode '{other}' (expected faithful|counter)")),
        }
    }
}

/// Model control parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Control<T> {
    pub np_max: usize,
    pub nq: usize,
    pub t_start: T,
    pub t_stop: T,
    pub dt_model: T,
    pub met_dt: T,
    /// Horizontal turbulent diffusivity, m^2/s.
    pub turb_dx: T,
    /// Vertical turbulent diffusivity, m^2/s.
    pub turb_dz: T,
    pub turb_meso: T,
    pub conv_prob: T,
    pub conv_p_top: T,
    pub p_surf: T,
    pub p_top: T,
    pub sedi_radius: T,
    pub sedi_density: T,
    pub isosurf_mode: IsosurfMode,
    pub mpi_rank: u64,
    /// Negative means "all available devices".
    pub num_devices_requested: i64,
    pub rng_mode: RngMode,
    pub rng_seed_global: u64,
    pub output_dt: T,
    /// Zero disables gridded output.
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Quantity slot holding ensemble group ids; `None` disables ensemble output.
    pub ens_group_slot: Option<usize>,
}

impl<T: Real> Default for Control<T> {
    fn default() -> Self {
        Self {
            np_max: 10_000_000,
            nq: NQ_FIXED,
            t_start: T::zero(),
            t_stop: T::lit(86_400.0),
            dt_model: T::lit(180.0),
            met_dt: T::lit(21_600.0),
            turb_dx: T::lit(50.0),
            turb_dz: T::zero(),
            turb_meso: T::lit(0.16),
            conv_prob: T::zero(),
            conv_p_top: T::lit(200.0),
            p_surf: T::lit(1000.0),
            p_top: T::lit(1.0),
            sedi_radius: T::zero(),
            sedi_density: T::lit(1000.0),
            isosurf_mode: IsosurfMode::Off,
            mpi_rank: 0,
            num_devices_requested: -1,
            rng_mode: RngMode::Faithful,
            rng_seed_global: 0,
            output_dt: T::lit(3600.0),
            grid_nx: 36,
            grid_ny: 18,
            ens_group_slot: None,
        }
    }
}

/// One broken rule found by [`validate_control`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated", self.rule)
    }
}

/// Checks every invariant of [`Control`]; an empty list means the control is valid.
pub fn validate_control<T: Real>(ctl: &Control<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &'static str, rule: &'static str| {
        if !ok {
            out.push(Violation { field, rule });
        }
    };
    let zero = T::zero();
    let one = T::one();
    check(ctl.t_stop >= ctl.t_start, "t_stop", "t_stop >= t_start");
    check(ctl.dt_model > zero, "dt_model", "dt_model > 0");
    check(ctl.met_dt > zero, "met_dt", "met_dt > 0");
    check(ctl.turb_dx >= zero, "turb_dx", "turb_dx >= 0");
    check(ctl.turb_dz >= zero, "turb_dz", "turb_dz >= 0");
    check(
        ctl.turb_meso >= zero && ctl.turb_meso <= one,
        "turb_meso",
        "0 <= turb_meso <= 1",
    );
    check(
        ctl.conv_prob >= zero && ctl.conv_prob <= one,
        "conv_prob",
        "0 <= conv_prob <= 1",
    );
    check(ctl.p_top > zero, "p_top", "p_top > 0");
    check(ctl.p_top < ctl.p_surf, "p_top", "p_top < p_surf");
    check(ctl.conv_p_top >= ctl.p_top, "conv_p_top", "conv_p_top >= p_top");
    check(ctl.sedi_radius >= zero, "sedi_radius", "sedi_radius >= 0");
    check(ctl.sedi_density > zero, "sedi_density", "sedi_density > 0");
    check(ctl.nq >= NQ_FIXED, "nq", "nq >= 5");
    check(ctl.output_dt > zero, "output_dt", "output_dt > 0");
    if let Some(slot) = ctl.ens_group_slot {
        check(slot < ctl.nq, "ens_group_slot", "ens_group_slot < nq");
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("requested {requested} particles exceeds capacity np_max = {np_max}")]
pub struct CapacityError {
    pub requested: usize,
    pub np_max: usize,
}

/// Structure-of-arrays particle state. Every per-particle array has length `np()`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleEnsemble<T> {
    pub time: Vec<T>,
    pub p: Vec<T>,
    pub zeta: Vec<T>,
    pub lon: Vec<T>,
    pub lat: Vec<T>,
    /// `q[slot][particle]`.
    pub q: Vec<Vec<T>>,
}

impl<T: Real> ParticleEnsemble<T> {
    pub fn zeroed(np: usize, nq: usize) -> Self {
        Self {
            time: vec![T::zero(); np],
            p: vec![T::zero(); np],
            zeta: vec![T::zero(); np],
            lon: vec![T::zero(); np],
            lat: vec![T::zero(); np],
            q: vec![vec![T::zero(); np]; nq],
        }
    }

    pub fn np(&self) -> usize {
        self.time.len()
    }

    pub fn nq(&self) -> usize {
        self.q.len()
    }

    /// True when all per-particle arrays agree on the particle count.
    pub fn lengths_consistent(&self) -> bool {
        let np = self.np();
        [&self.p, &self.zeta, &self.lon, &self.lat]
            .iter()
            .all(|a| a.len() == np)
            && self.q.iter().all(|a| a.len() == np)
    }
}

/// Allocates a zero-initialised ensemble of `np` particles with `ctl.nq` quantity slots.
pub fn ensemble_allocate<T: Real>(
    ctl: &Control<T>,
    np: usize,
) -> Result<ParticleEnsemble<T>, CapacityError> {
    if np > ctl.np_max {
        return Err(CapacityError {
            requested: np,
            np_max: ctl.np_max,
        });
    }
    Ok(ParticleEnsemble::zeroed(np, ctl.nq))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MeteoError {
    #[error("grid dimension {axis} = {len} is below the minimum of 2")]
    TooSmall { axis: &'static str, len: usize },
    #[error("{axis} coordinates are not strictly {order}")]
    NotMonotone {
        axis: &'static str,
        order: &'static str,
    },
    #[error("field {name} has {got} values, expected {expected}")]
    FieldLength {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("temperature must be positive and finite everywhere")]
    NonPositiveTemperature,
}

/// One meteorological snapshot on a lon x lat x pressure grid.
///
/// Field values are stored flat with index `(ix * ny + iy) * nz + iz`, so
/// appending a longitude column is a plain `extend`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeteoField<T> {
    pub t_met: T,
    pub lons: Vec<T>,
    pub lats: Vec<T>,
    /// Pressure levels in hPa, strictly decreasing (surface first).
    pub levs: Vec<T>,
    pub u: Vec<T>,
    pub v: Vec<T>,
    /// Pressure tendency, hPa/s.
    pub w: Vec<T>,
    pub temp: Vec<T>,
}

impl<T: Real> MeteoField<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t_met: T,
        lons: Vec<T>,
        lats: Vec<T>,
        levs: Vec<T>,
        u: Vec<T>,
        v: Vec<T>,
        w: Vec<T>,
        temp: Vec<T>,
    ) -> Result<Self, MeteoError> {
        let met = Self {
            t_met,
            lons,
            lats,
            levs,
            u,
            v,
            w,
            temp,
        };
        met.validate()?;
        Ok(met)
    }

    /// Builds a snapshot by sampling `f(lon, lat, p) -> (u, v, w, T)` at every node.
    pub fn from_fn(
        t_met: T,
        lons: Vec<T>,
        lats: Vec<T>,
        levs: Vec<T>,
        f: impl Fn(T, T, T) -> (T, T, T, T),
    ) -> Result<Self, MeteoError> {
        let n = lons.len() * lats.len() * levs.len();
        let (mut u, mut v, mut w, mut temp) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for &lon in &lons {
            for &lat in &lats {
                for &p in &levs {
                    let (a, b, c, d) = f(lon, lat, p);
                    u.push(a);
                    v.push(b);
                    w.push(c);
                    temp.push(d);
                }
            }
        }
        Self::new(t_met, lons, lats, levs, u, v, w, temp)
    }

    pub fn nx(&self) -> usize {
        self.lons.len()
    }

    pub fn ny(&self) -> usize {
        self.lats.len()
    }

    pub fn nz(&self) -> usize {
        self.levs.len()
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny() + iy) * self.nz() + iz
    }

    pub fn validate(&self) -> Result<(), MeteoError> {
        for (axis, len) in [("nx", self.nx()), ("ny", self.ny()), ("nz", self.nz())] {
            if len < 2 {
                return Err(MeteoError::TooSmall { axis, len });
            }
        }
        if !self.lons.windows(2).all(|w| w[0] < w[1]) {
            return Err(MeteoError::NotMonotone {
                axis: "longitude",
                order: "increasing",
            });
        }
        if !self.lats.windows(2).all(|w| w[0] < w[1]) {
            return Err(MeteoError::NotMonotone {
                axis: "latitude",
                order: "increasing",
            });
        }
        if !self.levs.windows(2).all(|w| w[0] > w[1]) {
            return Err(MeteoError::NotMonotone {
                axis: "pressure",
                order: "decreasing",
            });
        }
        let expected = self.nx() * self.ny() * self.nz();
        for (name, field) in [
            ("U", &self.u),
            ("V", &self.v),
            ("W", &self.w),
            ("T", &self.temp),
        ] {
            if field.len() != expected {
                return Err(MeteoError::FieldLength {
                    name,
                    got: field.len(),
                    expected,
                });
            }
        }
        if !self.temp.iter().all(|&t| t > T::zero() && t.is_finite()) {
            return Err(MeteoError::NonPositiveTemperature);
        }
        Ok(())
    }
}

/// Climatological HNO3 and tropopause tables with their lookups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClimData<T> {
    /// Latitude grid shared by both tables, strictly increasing.
    pub lats: Vec<T>,
    /// Tropopause pressure (hPa) at each latitude.
    pub p_trop: Vec<T>,
    /// Pressure grid of the HNO3 table (hPa), strictly increasing.
    pub hno3_ps: Vec<T>,
    /// `hno3[ilat * hno3_ps.len() + ip]`.
    pub hno3: Vec<T>,
}

/// Locates `x` on a strictly increasing grid: returns the lower node and the
/// weight of the upper node, with `x` clamped to the grid hull.
#[inline]
pub(crate) fn locate<T: Real>(grid: &[T], x: T) -> (usize, T) {
    let n = grid.len();
    debug_assert!(n >= 2);
    if !(x > grid[0]) {
        return (0, T::zero());
    }
    if x >= grid[n - 1] {
        return (n - 2, T::one());
    }
    // first node strictly greater than x, in 1..n-1
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    (lo, (x - grid[lo]) / (grid[hi] - grid[lo]))
}

impl<T: Real> ClimData<T> {
    /// Tropopause pressure at `lat`, linear in latitude.
    pub fn p_trop(&self, lat: T) -> T {
        let (i, w) = locate(&self.lats, lat);
        self.p_trop[i] + w * (self.p_trop[i + 1] - self.p_trop[i])
    }

    /// HNO3 volume mixing ratio at (`lat`, `p`), bilinear.
    pub fn hno3(&self, lat: T, p: T) -> T {
        let np = self.hno3_ps.len();
        let (i, wy) = locate(&self.lats, lat);
        let (k, wp) = locate(&self.hno3_ps, p);
        let at = |i: usize, k: usize| self.hno3[i * np + k];
        let lo = at(i, k) + wp * (at(i, k + 1) - at(i, k));
        let hi = at(i + 1, k) + wp * (at(i + 1, k + 1) - at(i + 1, k));
        lo + wy * (hi - lo)
    }
}

/// Per-particle state that persists between steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CacheState<T> {
    /// Mesoscale wind perturbations: u' (m/s), v' (m/s), w' (hPa/s).
    pub uvwp: [Vec<T>; 3],
    /// Conserved isosurface value: initial pressure or potential temperature.
    pub iso_var: Vec<T>,
}

impl<T: Real> CacheState<T> {
    pub fn zeroed(np: usize) -> Self {
        Self {
            uvwp: [vec![T::zero(); np], vec![T::zero(); np], vec![T::zero(); np]],
            iso_var: vec![T::zero(); np],
        }
    }

    pub fn np(&self) -> usize {
        self.iso_var.len()
    }
}

/// Per-particle timestep of the current outer step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DtArray<T> {
    pub dt: Vec<T>,
}

impl<T: Real> DtArray<T> {
    pub fn zeroed(np: usize) -> Self {
        Self {
            dt: vec![T::zero(); np],
        }
    }
}

/// The full model state that lives on the host and is mirrored into every
/// device region.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub ctl: Control<T>,
    pub atm: ParticleEnsemble<T>,
    pub cache: CacheState<T>,
    pub clim: ClimData<T>,
    pub met0: MeteoField<T>,
    pub met1: MeteoField<T>,
    pub dt: DtArray<T>,
    pub randoms: RandomBatch<T>,
}

impl<T: Real> ModelState<T> {
    /// Assembles a state with scratch arrays sized for `atm`.
    pub fn new(
        ctl: Control<T>,
        atm: ParticleEnsemble<T>,
        clim: ClimData<T>,
        met0: MeteoField<T>,
        met1: MeteoField<T>,
    ) -> Self {
        let np = atm.np();
        Self {
            ctl,
            atm,
            cache: CacheState::zeroed(np),
            clim,
            met0,
            met1,
            dt: DtArray::zeroed(np),
            randoms: RandomBatch::zeroed(np),
        }
    }

    /// Same shapes as `self`, every value zero.
    pub fn zeroed_like(&self) -> Self {
        fn zeros<T: Real>(v: &[T]) -> Vec<T> {
            vec![T::zero(); v.len()]
        }
        fn met_zeros<T: Real>(m: &MeteoField<T>) -> MeteoField<T> {
            MeteoField {
                t_met: T::zero(),
                lons: zeros(&m.lons),
                lats: zeros(&m.lats),
                levs: zeros(&m.levs),
                u: zeros(&m.u),
                v: zeros(&m.v),
                w: zeros(&m.w),
                temp: zeros(&m.temp),
            }
        }
        let np = self.atm.np();
        Self {
            ctl: self.ctl.clone(),
            atm: ParticleEnsemble::zeroed(np, self.atm.nq()),
            cache: CacheState::zeroed(np),
            clim: ClimData {
                lats: zeros(&self.clim.lats),
                p_trop: zeros(&self.clim.p_trop),
                hno3_ps: zeros(&self.clim.hno3_ps),
                hno3: zeros(&self.clim.hno3),
            },
            met0: met_zeros(&self.met0),
            met1: met_zeros(&self.met1),
            dt: DtArray::zeroed(np),
            randoms: RandomBatch::zeroed(np),
        }
    }
}
