//! Per-particle process modules.
//!
//! Every module reads and writes per-particle arrays only at indices inside
//! the [`WorkRange`] it is handed, and never looks at another particle. Running
//! a module over the ranges of any disjoint partition therefore gives the same
//! bits as one pass over the whole ensemble.

mod interp;
mod transport;
mod vertical;

pub use interp::{interpolate_met, sample_snapshot, MetSample};
pub use transport::{module_advection, module_diffusion_meso, module_diffusion_turb};
pub use vertical::{module_convection, module_isosurf, module_isosurf_init, module_sedi};

use crate::model_state::{
    ClimData, Control, DtArray, MeteoField, ParticleEnsemble, Q_HNO3, Q_STRAT, Q_TEMP, Q_U, Q_V,
};
use crate::num::Real;
use crate::partition::WorkRange;

/// Earth radius, m.
pub const EARTH_RADIUS: f64 = 6_371_000.0;
/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.806_65;
/// Specific gas constant of dry air, J/(kg K).
pub const R_AIR: f64 = 287.058;
/// Dynamic viscosity of air, Pa s.
pub const AIR_VISCOSITY: f64 = 1.8205e-5;
/// Poisson exponent R/cp.
pub const KAPPA: f64 = 0.2857;
/// Latitude beyond which cos(lat) is frozen.
pub const POLE_LAT_LIMIT: f64 = 89.999;

/// Degrees of arc per metre along a great circle.
#[inline]
pub fn deg_per_m<T: Real>() -> T {
    T::lit(180.0) / (T::PI() * T::lit(EARTH_RADIUS))
}

/// cos(lat) with |lat| capped at 89.999 degrees.
#[inline]
pub(crate) fn cos_lat<T: Real>(lat: T) -> T {
    lat.abs().min(T::lit(POLE_LAT_LIMIT)).to_radians().cos()
}

/// Air density (kg/m^3) from pressure in hPa and temperature in K.
#[inline]
pub(crate) fn air_density<T: Real>(p: T, temp: T) -> T {
    T::lit(100.0) * p / (T::lit(R_AIR) * temp)
}

/// Wraps a longitude into [-180, 180). Values already inside are returned untouched.
#[inline]
pub fn wrap_lon<T: Real>(lon: T) -> T {
    let half = T::lit(180.0);
    if lon >= -half && lon < half || !lon.is_finite() {
        return lon;
    }
    let full = T::lit(360.0);
    let mut x = ((lon + half) % full + full) % full - half;
    if x >= half {
        x = x - full;
    }
    if x < -half {
        x = -half;
    }
    x
}

/// Assigns each particle's step: `min(dt_model, t_stop - time)` clamped to `[0, dt_model]`.
pub fn module_timesteps<T: Real>(
    ctl: &Control<T>,
    ens: &ParticleEnsemble<T>,
    t_next: T,
    range: WorkRange,
    dt: &mut DtArray<T>,
) {
    debug_assert!(t_next <= ctl.t_stop + ctl.dt_model);
    for i in range.indices() {
        let remaining = ctl.t_stop - ens.time[i];
        dt.dt[i] = remaining.min(ctl.dt_model).max(T::zero());
    }
}

/// Keeps particles inside the model domain: reflects over the poles, wraps
/// longitude and clamps pressure to `[p_top, p_surf]`.
pub fn module_position<T: Real>(ctl: &Control<T>, ens: &mut ParticleEnsemble<T>, range: WorkRange) {
    let ninety = T::lit(90.0);
    let half = T::lit(180.0);
    for i in range.indices() {
        let mut lat = ens.lat[i];
        let mut lon = ens.lon[i];
        while lat.abs() > ninety {
            lat = lat.signum() * (half - lat.abs());
            lon = lon + half;
        }
        ens.lat[i] = lat;
        ens.lon[i] = wrap_lon(lon);
        ens.p[i] = ens.p[i].max(ctl.p_top).min(ctl.p_surf);
    }
}

/// Samples T, u, v, climatological HNO3 and the stratosphere flag into the fixed quantity slots.
pub fn module_meteo<T: Real>(
    _ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    clim: &ClimData<T>,
    range: WorkRange,
) {
    for i in range.indices() {
        let (lon, lat, p) = (ens.lon[i], ens.lat[i], ens.p[i]);
        let s = interpolate_met(met0, met1, ens.time[i], lon, lat, p);
        ens.q[Q_TEMP][i] = s.temp;
        ens.q[Q_U][i] = s.u;
        ens.q[Q_V][i] = s.v;
        ens.q[Q_HNO3][i] = clim.hno3(lat, p);
        ens.q[Q_STRAT][i] = if p < clim.p_trop(lat) {
            T::one()
        } else {
            T::zero()
        };
    }
}
