//! Space-time interpolation of the meteorological snapshots.

use crate::model_state::{locate, MeteoField};
use crate::num::Real;

/// Wind and temperature sampled at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetSample<T> {
    pub u: T,
    pub v: T,
    /// hPa/s
    pub w: T,
    pub temp: T,
}

/// Lower corner of the grid cell containing a point, plus the fractional
/// position inside it along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cell<T> {
    pub ix: usize,
    pub iy: usize,
    pub iz: usize,
    pub fx: T,
    pub fy: T,
    pub fz: T,
}

/// Like `locate` but for a strictly decreasing grid.
#[inline]
fn locate_desc<T: Real>(grid: &[T], x: T) -> (usize, T) {
    let n = grid.len();
    if !(x < grid[0]) {
        return (0, T::zero());
    }
    if x <= grid[n - 1] {
        return (n - 2, T::one());
    }
    let hi = grid.partition_point(|&g| g >= x);
    let lo = hi - 1;
    (lo, (grid[lo] - x) / (grid[lo] - grid[hi]))
}

/// Brings `lon` into the window of a grid that spans the full circle.
#[inline]
fn lon_in_grid<T: Real>(met: &MeteoField<T>, lon: T) -> T {
    let full = T::lit(360.0);
    let first = met.lons[0];
    let last = met.lons[met.nx() - 1];
    if last - first < full - T::lit(1e-6) {
        return lon;
    }
    let mut x = lon;
    if x < first {
        x = x + full;
    } else if x > last {
        x = x - full;
    }
    x
}

pub(crate) fn cell_of<T: Real>(met: &MeteoField<T>, lon: T, lat: T, p: T) -> Cell<T> {
    let (ix, fx) = locate(&met.lons, lon_in_grid(met, lon));
    let (iy, fy) = locate(&met.lats, lat);
    let (iz, fz) = locate_desc(&met.levs, p);
    Cell {
        ix,
        iy,
        iz,
        fx,
        fy,
        fz,
    }
}

#[inline]
fn lerp<T: Real>(a: T, b: T, w: T) -> T {
    a + w * (b - a)
}

/// Flat indices of the eight cell corners, ordered (dx, dy, dz) in binary.
#[inline]
fn corners<T: Real>(met: &MeteoField<T>, c: &Cell<T>) -> [usize; 8] {
    let (sy, sx) = (met.nz(), met.ny() * met.nz());
    let base = met.idx(c.ix, c.iy, c.iz);
    [
        base,
        base + 1,
        base + sy,
        base + sy + 1,
        base + sx,
        base + sx + 1,
        base + sx + sy,
        base + sx + sy + 1,
    ]
}

#[inline]
fn trilinear<T: Real>(field: &[T], k: &[usize; 8], c: &Cell<T>) -> T {
    let c00 = lerp(field[k[0]], field[k[4]], c.fx);
    let c10 = lerp(field[k[2]], field[k[6]], c.fx);
    let c01 = lerp(field[k[1]], field[k[5]], c.fx);
    let c11 = lerp(field[k[3]], field[k[7]], c.fx);
    lerp(lerp(c00, c10, c.fy), lerp(c01, c11, c.fy), c.fz)
}

/// Trilinear sample of a single snapshot; the position is clamped to the grid hull.
pub fn sample_snapshot<T: Real>(met: &MeteoField<T>, lon: T, lat: T, p: T) -> MetSample<T> {
    let c = cell_of(met, lon, lat, p);
    let k = corners(met, &c);
    MetSample {
        u: trilinear(&met.u, &k, &c),
        v: trilinear(&met.v, &k, &c),
        w: trilinear(&met.w, &k, &c),
        temp: trilinear(&met.temp, &k, &c),
    }
}

/// Trilinear in space within each snapshot, then linear in time between them.
/// The time weight is clamped to [0, 1].
pub fn interpolate_met<T: Real>(
    met0: &MeteoField<T>,
    met1: &MeteoField<T>,
    t: T,
    lon: T,
    lat: T,
    p: T,
) -> MetSample<T> {
    let a = sample_snapshot(met0, lon, lat, p);
    if met0.t_met == met1.t_met {
        return a;
    }
    let w = ((t - met0.t_met) / (met1.t_met - met0.t_met))
        .max(T::zero())
        .min(T::one());
    let b = sample_snapshot(met1, lon, lat, p);
    MetSample {
        u: lerp(a.u, b.u, w),
        v: lerp(a.v, b.v, w),
        w: lerp(a.w, b.w, w),
        temp: lerp(a.temp, b.temp, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::met_periodic;

    fn grid(t: f64, f: impl Fn(f64, f64, f64) -> (f64, f64, f64, f64)) -> MeteoField<f64> {
        MeteoField::from_fn(
            t,
            vec![0.0, 10.0, 20.0],
            vec![-10.0, 0.0, 10.0],
            vec![1000.0, 500.0, 100.0],
            f,
        )
        .unwrap()
    }

    #[test]
    fn constant_field_is_preserved() {
        let m = grid(0.0, |_, _, _| (10.0, -3.0, 0.01, 250.0));
        for &(lon, lat, p) in &[(3.0, 4.0, 700.0), (-50.0, 80.0, 2000.0), (19.9, -9.9, 100.0)] {
            let s = interpolate_met(&m, &m, 0.0, lon, lat, p);
            assert_eq!((s.u, s.v, s.w, s.temp), (10.0, -3.0, 0.01, 250.0));
        }
    }

    #[test]
    fn edge_midpoint_is_average() {
        let m = grid(0.0, |lon, _, _| (0.0, 0.0, 0.0, if lon < 5.0 { 200.0 } else { 300.0 }));
        let s = interpolate_met(&m, &m, 0.0, 5.0, 0.0, 1000.0);
        assert_eq!(s.temp, 250.0);
    }

    #[test]
    fn linear_in_time() {
        let a = grid(0.0, |_, _, _| (0.0, 0.0, 0.0, 200.0));
        let b = grid(100.0, |_, _, _| (0.0, 0.0, 0.0, 300.0));
        assert_eq!(interpolate_met(&a, &b, 25.0, 1.0, 1.0, 800.0).temp, 225.0);
        // clamped outside the bracket
        assert_eq!(interpolate_met(&a, &b, -5.0, 1.0, 1.0, 800.0).temp, 200.0);
        assert_eq!(interpolate_met(&a, &b, 500.0, 1.0, 1.0, 800.0).temp, 300.0);
    }

    #[test]
    fn linear_fields_are_reproduced() {
        // trilinear interpolation is exact for functions linear in each axis
        let m = grid(0.0, |lon, lat, p| (lon, lat, p, 100.0 + 2.0 * lon - lat + 0.1 * p));
        let s = sample_snapshot(&m, 12.5, -3.0, 640.0);
        assert!((s.u - 12.5).abs() < 1e-12);
        assert!((s.v + 3.0).abs() < 1e-12);
        assert!((s.w - 640.0).abs() < 1e-9);
        assert!((s.temp - (100.0 + 25.0 + 3.0 + 64.0)).abs() < 1e-9);
    }

    #[test]
    fn pressure_axis_decreasing_lookup() {
        assert_eq!(locate_desc(&[1000.0, 500.0, 100.0], 750.0), (0, 0.5));
        assert_eq!(locate_desc(&[1000.0, 500.0, 100.0], 300.0), (1, 0.5));
        assert_eq!(locate_desc(&[1000.0, 500.0, 100.0], 1100.0), (0, 0.0));
        assert_eq!(locate_desc(&[1000.0, 500.0, 100.0], 50.0), (1, 1.0));
        assert_eq!(locate_desc(&[1000.0, 500.0, 100.0], 500.0), (1, 0.0));
    }

    #[test]
    fn periodic_grid_wraps_negative_longitudes() {
        let lons: Vec<f64> = (0..36).map(|k| 10.0 * k as f64).collect();
        let m = met_periodic(
            MeteoField::from_fn(0.0, lons, vec![-10.0, 10.0], vec![1000.0, 100.0], |lon, _, _| {
                (lon, 0.0, 0.0, 250.0)
            })
            .unwrap(),
        );
        // -5 deg sits between 350 and 360 (which duplicates 0)
        let s = sample_snapshot(&m, -5.0, 0.0, 500.0);
        assert!((s.u - 175.0).abs() < 1e-12, "{}", s.u);
        let s = sample_snapshot(&m, -170.0, 0.0, 500.0);
        assert!((s.u - 190.0).abs() < 1e-12);
    }
}
