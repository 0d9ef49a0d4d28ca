//! Vertical redistribution: convection, sedimentation and isosurface constraints.

use super::{air_density, interpolate_met, AIR_VISCOSITY, GRAVITY, KAPPA};
use crate::model_state::{CacheState, Control, DtArray, IsosurfMode, MeteoField, ParticleEnsemble};
use crate::num::Real;
use crate::partition::WorkRange;
use crate::rng::RandomBatch;

/// Random convective mixing: a particle below `conv_p_top` is lifted with
/// probability `conv_prob` and placed uniformly in `[conv_p_top, p_surf]`.
/// The same uniform decides and places.
pub fn module_convection<T: Real>(
    ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    dt: &DtArray<T>,
    rnd: &RandomBatch<T>,
    range: WorkRange,
) {
    if !(ctl.conv_prob > T::zero()) {
        return;
    }
    for i in range.indices() {
        if !(dt.dt[i] > T::zero()) || !(ens.p[i] > ctl.conv_p_top) {
            continue;
        }
        let r = rnd.convection[i];
        if r < ctl.conv_prob {
            ens.p[i] = ctl.conv_p_top + (r / ctl.conv_prob) * (ctl.p_surf - ctl.conv_p_top);
        }
    }
}

/// Stokes settling velocity (m/s) of a sphere of `radius` and `density` in air of `rho_air`.
pub fn stokes_velocity<T: Real>(radius: T, density: T, rho_air: T) -> T {
    T::lit(2.0) * radius * radius * (density - rho_air) * T::lit(GRAVITY)
        / (T::lit(9.0) * T::lit(AIR_VISCOSITY))
}

/// Gravitational settling, converted to a downward pressure change.
pub fn module_sedi<T: Real>(
    ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    dt: &DtArray<T>,
    range: WorkRange,
) {
    if !(ctl.sedi_radius > T::zero()) {
        return;
    }
    let g = T::lit(GRAVITY);
    for i in range.indices() {
        let step = dt.dt[i];
        if !(step > T::zero()) {
            continue;
        }
        let p = ens.p[i];
        let temp = interpolate_met(met0, met1, ens.time[i], ens.lon[i], ens.lat[i], p).temp;
        let rho = air_density(p, temp);
        let vs = stokes_velocity(ctl.sedi_radius, ctl.sedi_density, rho);
        ens.p[i] = p + rho * g * vs * step / T::lit(100.0);
    }
}

#[inline]
fn theta<T: Real>(temp: T, p: T) -> T {
    temp * (T::lit(1000.0) / p).powf(T::lit(KAPPA))
}

/// Records the conserved isosurface value of each particle.
pub fn module_isosurf_init<T: Real>(
    ctl: &Control<T>,
    ens: &ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    cache: &mut CacheState<T>,
    range: WorkRange,
) {
    match ctl.isosurf_mode {
        IsosurfMode::Off => {}
        IsosurfMode::Pressure => {
            cache.iso_var[range.indices()].copy_from_slice(&ens.p[range.indices()]);
        }
        IsosurfMode::Theta => {
            for i in range.indices() {
                let p = ens.p[i];
                let temp = interpolate_met(met0, met1, ens.time[i], ens.lon[i], ens.lat[i], p).temp;
                cache.iso_var[i] = theta(temp, p);
            }
        }
    }
}

const ISOSURF_MAX_ITER: usize = 10;
const ISOSURF_TOL_HPA: f64 = 0.1;

/// Pulls particles back onto their isosurface. In theta mode the pressure is
/// found by fixed-point iteration `p <- 1000 (T(p) / theta)^(1/kappa)`.
///
/// Returns how many particles did not converge within the iteration limit;
/// those keep their last iterate.
pub fn module_isosurf<T: Real>(
    ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    cache: &CacheState<T>,
    range: WorkRange,
) -> usize {
    match ctl.isosurf_mode {
        IsosurfMode::Off => 0,
        IsosurfMode::Pressure => {
            ens.p[range.indices()].copy_from_slice(&cache.iso_var[range.indices()]);
            0
        }
        IsosurfMode::Theta => {
            let inv_kappa = T::one() / T::lit(KAPPA);
            let tol = T::lit(ISOSURF_TOL_HPA);
            let thousand = T::lit(1000.0);
            let mut failed = 0;
            for i in range.indices() {
                let target = cache.iso_var[i];
                if !(target > T::zero()) {
                    continue;
                }
                let (t, lon, lat) = (ens.time[i], ens.lon[i], ens.lat[i]);
                let mut p = ens.p[i];
                let mut converged = false;
                for _ in 0..ISOSURF_MAX_ITER {
                    let temp = interpolate_met(met0, met1, t, lon, lat, p).temp;
                    let next = thousand * (temp / target).powf(inv_kappa);
                    let delta = (next - p).abs();
                    p = next;
                    if delta < tol {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    failed += 1;
                }
                ens.p[i] = p;
            }
            failed
        }
    }
}
