//! Horizontal/vertical transport: kinematic advection plus the two stochastic
//! diffusion schemes.

use super::interp::cell_of;
use super::{air_density, cos_lat, deg_per_m, interpolate_met, GRAVITY};
use crate::model_state::{CacheState, Control, DtArray, MeteoField, ParticleEnsemble};
use crate::num::Real;
use crate::partition::WorkRange;
use crate::rng::RandomBatch;

/// Explicit midpoint integration of the particle positions through the
/// interpolated wind field. Advances `time` by `dt` (capped at `t_stop`).
pub fn module_advection<T: Real>(
    ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    dt: &DtArray<T>,
    range: WorkRange,
) {
    let dpm = deg_per_m::<T>();
    let half = T::lit(0.5);
    for i in range.indices() {
        let step = dt.dt[i];
        if !(step > T::zero()) {
            continue;
        }
        let (t, lon, lat, p) = (ens.time[i], ens.lon[i], ens.lat[i], ens.p[i]);
        let w0 = interpolate_met(met0, met1, t, lon, lat, p);
        let h = half * step;
        let lon_m = lon + w0.u * h * dpm / cos_lat(lat);
        let lat_m = lat + w0.v * h * dpm;
        let p_m = p + w0.w * h;
        let wm = interpolate_met(met0, met1, t + h, lon_m, lat_m, p_m);
        ens.lon[i] = lon + wm.u * step * dpm / cos_lat(lat_m);
        ens.lat[i] = lat + wm.v * step * dpm;
        ens.p[i] = p + wm.w * step;
        ens.time[i] = (t + step).min(ctl.t_stop);
    }
}

/// Gaussian random-walk displacements with standard deviation `sqrt(2 K dt)`.
pub fn module_diffusion_turb<T: Real>(
    ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    dt: &DtArray<T>,
    rnd: &RandomBatch<T>,
    range: WorkRange,
) {
    let dpm = deg_per_m::<T>();
    let two = T::lit(2.0);
    let g = T::lit(GRAVITY);
    let hecto = T::lit(100.0);
    for i in range.indices() {
        let step = dt.dt[i];
        if !(step > T::zero()) {
            continue;
        }
        let xi = &rnd.diff_turb[3 * i..3 * i + 3];
        let (lon, lat, p) = (ens.lon[i], ens.lat[i], ens.p[i]);

        let dp = if ctl.turb_dz > T::zero() {
            let temp = interpolate_met(met0, met1, ens.time[i], lon, lat, p).temp;
            let dz = (two * ctl.turb_dz * step).sqrt() * xi[2];
            -(air_density(p, temp) * g * dz) / hecto
        } else {
            T::zero()
        };
        let sigma_h = (two * ctl.turb_dx * step).sqrt();
        ens.lon[i] = lon + sigma_h * xi[0] * dpm / cos_lat(lat);
        ens.lat[i] = lat + sigma_h * xi[1] * dpm;
        ens.p[i] = p + dp;
    }
}

/// Population standard deviation of the eight corner values of a cell.
fn corner_std<T: Real>(met: &MeteoField<T>, field: &[T], ix: usize, iy: usize, iz: usize) -> T {
    let mut vals = [T::zero(); 8];
    let mut k = 0;
    for dx in 0..2 {
        for dy in 0..2 {
            for dz in 0..2 {
                vals[k] = field[met.idx(ix + dx, iy + dy, iz + dz)];
                k += 1;
            }
        }
    }
    let (lo, hi) = vals
        .iter()
        .fold((vals[0], vals[0]), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if lo == hi {
        return T::zero();
    }
    let n = T::lit(8.0);
    let mean = vals.iter().fold(T::zero(), |a, &x| a + x) / n;
    (vals.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / n).sqrt()
}

/// Temporally correlated subgrid wind fluctuations: a first-order
/// autoregressive update of the cached perturbation, scaled by the local
/// grid-cell variability of the wind in `met0`.
#[allow(clippy::too_many_arguments)]
pub fn module_diffusion_meso<T: Real>(
    ctl: &Control<T>,
    ens: &mut ParticleEnsemble<T>,
    met0: &MeteoField<T>,
    _met1: &MeteoField<T>,
    dt: &DtArray<T>,
    rnd: &RandomBatch<T>,
    cache: &mut CacheState<T>,
    range: WorkRange,
) {
    // with a zero scale factor the perturbations start and stay at zero
    if !(ctl.turb_meso > T::zero()) {
        return;
    }
    let dpm = deg_per_m::<T>();
    let one = T::one();
    let two = T::lit(2.0);
    for i in range.indices() {
        let step = dt.dt[i];
        if !(step > T::zero()) {
            continue;
        }
        let (lon, lat, p) = (ens.lon[i], ens.lat[i], ens.p[i]);
        let r = (one - two * step / ctl.met_dt).max(T::zero()).min(one);
        let s = (one - r * r).sqrt();
        let c = cell_of(met0, lon, lat, p);
        let xi = &rnd.diff_meso[3 * i..3 * i + 3];
        for (comp, field) in [&met0.u, &met0.v, &met0.w].into_iter().enumerate() {
            let sigma = ctl.turb_meso * corner_std(met0, field, c.ix, c.iy, c.iz);
            let prev = cache.uvwp[comp][i];
            cache.uvwp[comp][i] = r * prev + s * sigma * xi[comp];
        }
        ens.lon[i] = lon + cache.uvwp[0][i] * step * dpm / cos_lat(lat);
        ens.lat[i] = lat + cache.uvwp[1][i] * step * dpm;
        ens.p[i] = p + cache.uvwp[2][i] * step;
    }
}
