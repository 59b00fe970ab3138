//! Equirectangular geometry: pixel/angle/direction mapping, perspective
//! cutouts, and lifting panorama values into the voxel grid along camera rays.
//!
//! Pixel `(u, v)` of a `W x H` panorama has azimuth `phi = 2 pi (u + 0.5) / W`
//! and elevation `lambda = pi/2 - pi (v + 0.5) / H`, and looks along
//! `(cos(lambda) sin(phi), -cos(lambda) cos(phi), sin(lambda))`. Azimuth 0
//! faces south (`-y`), azimuth 90 degrees faces east (`+x`).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, GridSpec, Vec3};
use crate::raster::{PanoRaster, Raster};
use crate::render::check_camera;
use crate::scalar::Real;

#[inline]
pub fn angles_to_direction<T: Real>(azimuth: T, elevation: T) -> Vec3<T> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [ce * sa, -ce * ca, se]
}

/// `(azimuth in [0, 2 pi), elevation in [-pi/2, pi/2])` of a non-zero vector.
#[inline]
pub fn direction_to_angles<T: Real>(d: Vec3<T>) -> (T, T) {
    let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let elevation = d[2].atan2(horiz);
    let mut azimuth = d[0].atan2(-d[1]);
    if azimuth < T::zero() {
        azimuth += T::TAU();
    }
    if azimuth >= T::TAU() {
        azimuth -= T::TAU();
    }
    (azimuth, elevation)
}

#[inline]
pub fn pixel_angles<T: Real>(u: usize, v: usize, width: usize, height: usize) -> (T, T) {
    let h = T::half();
    let az = T::TAU() * (T::from_usize_lossy(u) + h) / T::from_usize_lossy(width);
    let el = T::FRAC_PI_2() - T::PI() * (T::from_usize_lossy(v) + h) / T::from_usize_lossy(height);
    (az, el)
}

#[inline]
pub fn pixel_direction<T: Real>(u: usize, v: usize, width: usize, height: usize) -> Vec3<T> {
    let (az, el) = pixel_angles(u, v, width, height);
    angles_to_direction(az, el)
}

/// Continuous pixel coordinates (pixel centers at `+0.5`) of an angle pair.
#[inline]
pub fn angles_to_pixel<T: Real>(azimuth: T, elevation: T, width: usize, height: usize) -> (T, T) {
    let x = azimuth / T::TAU() * T::from_usize_lossy(width);
    let y = (T::FRAC_PI_2() - elevation) / T::PI() * T::from_usize_lossy(height);
    (x, y)
}

/// Bilinear panorama lookup along a direction; azimuth wraps, elevation clamps.
pub fn sample_direction<T: Real>(pano: &PanoRaster<T>, dir: Vec3<T>, out: &mut [T]) {
    let (az, el) = direction_to_angles(dir);
    let (x, y) = angles_to_pixel(az, el, pano.width(), pano.height());
    pano.sample_wrapped(x, y, out);
}

/// Perspective view into a panorama.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoutSpec<T> {
    /// Degrees; 0 looks along azimuth 0.
    pub heading: T,
    /// Full horizontal and vertical field of view in degrees.
    pub fov: T,
    pub pitch: T,
    pub roll: T,
    pub out_w: usize,
    pub out_h: usize,
}

impl<T: Real> Default for CutoutSpec<T> {
    fn default() -> Self {
        Self {
            heading: T::zero(),
            fov: T::lit(90.0),
            pitch: T::zero(),
            roll: T::zero(),
            out_w: 256,
            out_h: 256,
        }
    }
}

impl<T: Real> CutoutSpec<T> {
    pub fn with_heading(heading: T) -> Self {
        Self {
            heading,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > T::zero() && self.fov < T::lit(180.0)) {
            return Err(Error::InvalidArgument(format!(
                "field of view must be in (0, 180) degrees, got {}",
                self.fov
            )));
        }
        if self.out_w == 0 || self.out_h == 0 {
            return Err(Error::InvalidArgument("cutout dimensions must be positive".into()));
        }
        if ![self.heading, self.pitch, self.roll].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cutout orientation".into()));
        }
        Ok(())
    }

    /// Panorama `(azimuth, elevation)` seen at image-plane point `(a, b)` in
    /// `[-1, 1]^2`; `a` grows rightwards and `b` downwards.
    pub fn view_angles(&self, a: T, b: T) -> (T, T) {
        let t = (self.fov.to_radians() * T::half()).tan();
        // Camera frame: x right, y forward, z up.
        let mut d = [a * t, T::one(), -b * t];
        let (sr, cr) = self.roll.to_radians().sin_cos();
        d = [cr * d[0] + sr * d[2], d[1], -sr * d[0] + cr * d[2]];
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        d = [d[0], cp * d[1] - sp * d[2], sp * d[1] + cp * d[2]];
        let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let elevation = d[2].atan2(horiz);
        let mut azimuth = d[0].atan2(d[1]) + self.heading.to_radians();
        azimuth = azimuth - T::TAU() * (azimuth / T::TAU()).floor();
        (azimuth, elevation)
    }
}

/// Resamples a gnomonic (pinhole) view out of an equirectangular panorama.
pub fn extract_cutout<T: Real>(pano: &PanoRaster<T>, spec: &CutoutSpec<T>) -> Result<Raster<T>> {
    spec.validate()?;
    let (w, h, c) = (spec.out_w, spec.out_h, pano.channels());
    let mut data = vec![T::zero(); w * h * c];
    data.par_chunks_mut(w * c).enumerate().for_each(|(j, row)| {
        let b = T::two() * (T::from_usize_lossy(j) + T::half()) / T::from_usize_lossy(h) - T::one();
        for i in 0..w {
            let a = T::two() * (T::from_usize_lossy(i) + T::half()) / T::from_usize_lossy(w) - T::one();
            let (az, el) = spec.view_angles(a, b);
            let (x, y) = angles_to_pixel(az, el, pano.width(), pano.height());
            pano.sample_wrapped(x, y, &mut row[i * c..(i + 1) * c]);
        }
    });
    Raster::with_channels(w, h, c, data)
}

/// The four horizontal 90 degree views at headings 0, 90, 180 and 270.
pub fn cardinal_cutouts<T: Real>(pano: &PanoRaster<T>, size: usize) -> Result<Vec<Raster<T>>> {
    [0.0, 90.0, 180.0, 270.0]
        .iter()
        .map(|&hd| {
            extract_cutout(
                pano,
                &CutoutSpec {
                    heading: T::lit(hd),
                    out_w: size,
                    out_h: size,
                    ..CutoutSpec::default()
                },
            )
        })
        .collect()
}

/// Writes each voxel the panorama value seen along the ray from `cam`
/// through the voxel center. The voxel containing the camera center exactly
/// gets zeros.
pub fn lift_pano_to_grid<T: Real>(pano: &PanoRaster<T>, spec: &GridSpec<T>, cam: Vec3<T>) -> Result<FeatureGrid<T>> {
    spec.validate()?;
    check_camera(spec, cam)?;
    let c = pano.channels();
    let mut grid = FeatureGrid::zeros(*spec, c);
    let plane = spec.nx * spec.ny;
    grid.data_mut()
        .par_chunks_mut(plane * c)
        .enumerate()
        .for_each(|(iz, slab)| {
            for iy in 0..spec.ny {
                for ix in 0..spec.nx {
                    let p = spec.voxel_center(ix, iy, iz);
                    let d = [p[0] - cam[0], p[1] - cam[1], p[2] - cam[2]];
                    if d.iter().all(|v| *v == T::zero()) {
                        continue;
                    }
                    let k = (ix + spec.nx * iy) * c;
                    sample_direction(pano, d, &mut slab[k..k + c]);
                }
            }
        });
    Ok(grid)
}

/// Sum of [`lift_pano_to_grid`] over panoramas of different resolutions.
pub fn lift_multiscale<T: Real>(panos: &[PanoRaster<T>], spec: &GridSpec<T>, cam: Vec3<T>) -> Result<FeatureGrid<T>> {
    let first = panos
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one panorama scale is required".into()))?;
    let c = first.channels();
    if let Some(p) = panos.iter().find(|p| p.channels() != c) {
        return Err(Error::ShapeMismatch(format!(
            "panorama scales disagree on channel count: {} vs {}",
            c,
            p.channels()
        )));
    }
    let mut acc = lift_pano_to_grid(first, spec, cam)?;
    for p in &panos[1..] {
        let g = lift_pano_to_grid(p, spec, cam)?;
        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += *b;
        }
    }
    Ok(acc)
}
