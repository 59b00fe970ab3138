//! Volumetric rendering of depth and opacity from a density field.
//!
//! A ray's samples `(sigma_i, delta_i, d_i)` composite as
//!
//! ```text
//! T_i   = exp(-sum_{j<i} sigma_j delta_j)
//! w_i   = T_i (1 - exp(-sigma_i delta_i))
//! depth = sum_i w_i d_i          opacity = sum_i w_i
//! ```
//!
//! Two ray bundles are supported: a top-down orthographic bundle, one ray per
//! grid column, whose depth inverts to a height map, and an equirectangular
//! bundle cast from a street-level camera.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DensityField, GridSpec, Vec3};
use crate::pano;
use crate::raster::{DepthPanorama, HeightMap, OpacityPanorama, Raster};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unit direction.
    pub direction: Vec3<T>,
    pub t_near: T,
    pub t_far: T,
}

impl<T: Real> Ray<T> {
    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// Density samples along one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples<T> {
    pub sigma: Vec<T>,
    /// Step length of each sample (meters).
    pub delta: Vec<T>,
    /// Distance of each sample from the ray origin (meters).
    pub dist: Vec<T>,
}

impl<T: Real> RaySamples<T> {
    pub fn new(sigma: Vec<T>, delta: Vec<T>, dist: Vec<T>) -> Result<Self> {
        if sigma.len() != delta.len() || sigma.len() != dist.len() {
            return Err(Error::ShapeMismatch(format!(
                "ray samples: {} densities, {} steps, {} distances",
                sigma.len(),
                delta.len(),
                dist.len()
            )));
        }
        Ok(Self { sigma, delta, dist })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    fn clear(&mut self) {
        self.sigma.clear();
        self.delta.clear();
        self.dist.clear();
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            let (s, d) = (self.sigma[i], self.delta[i]);
            if !s.is_finite() || !d.is_finite() || !self.dist[i].is_finite() {
                return Err(Error::NonFinite(format!("ray sample {i}")));
            }
            if s < T::zero() {
                return Err(Error::Negative(format!("density {s} at ray sample {i}")));
            }
            if d < T::zero() {
                return Err(Error::Negative(format!("step {d} at ray sample {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult<T> {
    pub depth: T,
    pub opacity: T,
    /// Compositing weight of every sample.
    pub weights: Vec<T>,
}

/// Composites one ray. With `background_depth` the residual transmittance
/// lands on an opaque backdrop at that distance and the opacity becomes 1.
pub fn render_ray<T: Real>(samples: &RaySamples<T>, background_depth: Option<T>) -> Result<RenderResult<T>> {
    samples.validate()?;
    let mut weights = Vec::with_capacity(samples.len());
    let (depth, opacity) = composite(samples, background_depth, |w| weights.push(w));
    Ok(RenderResult {
        depth,
        opacity,
        weights,
    })
}

#[inline]
fn composite<T: Real>(s: &RaySamples<T>, bg: Option<T>, mut on_weight: impl FnMut(T)) -> (T, T) {
    let mut optical = T::zero();
    let mut depth = T::zero();
    for i in 0..s.sigma.len() {
        let tau = s.sigma[i] * s.delta[i];
        let transmit = (-optical).exp();
        let w = transmit * -(-tau).exp_m1();
        on_weight(w);
        depth += w * s.dist[i];
        optical += tau;
    }
    match bg {
        Some(b) => (depth + (-optical).exp() * b, T::one()),
        // Equal to the summed weights up to rounding, but never above 1.
        None => (depth, -(-optical).exp_m1()),
    }
}

/// Gradient of a scalar loss with respect to each sample density, given the
/// loss's partial derivatives with respect to the ray's depth and opacity.
pub fn render_ray_grad<T: Real>(
    samples: &RaySamples<T>,
    background_depth: Option<T>,
    d_depth: T,
    d_opacity: T,
) -> Result<Vec<T>> {
    samples.validate()?;
    let mut out = Vec::new();
    ray_grad_into(samples, background_depth, d_depth, d_opacity, &mut out);
    Ok(out)
}

/// Unchecked core of [`render_ray_grad`], writing into a reusable buffer.
///
/// With `tau_i = sigma_i delta_i` and `T_{i+1} = T_i exp(-tau_i)`:
///
/// ```text
/// d(sum w_k d_k)/d sigma_i = delta_i (T_{i+1} d_i - sum_{k>i} w_k d_k)
/// d(opacity)/d sigma_i     = delta_i T_{S+1}
/// ```
///
/// and the backdrop adds `-background * d(opacity)/d sigma_i` to the depth
/// derivative while pinning the reported opacity at 1.
pub(crate) fn ray_grad_into<T: Real>(
    s: &RaySamples<T>,
    bg: Option<T>,
    d_depth: T,
    d_opacity: T,
    out: &mut Vec<T>,
) {
    let n = s.sigma.len();
    out.clear();
    out.resize(n, T::zero());
    if n == 0 || (d_depth == T::zero() && d_opacity == T::zero()) {
        return;
    }
    // Forward pass: store T_{i+1} and w_i d_i.
    let mut optical = T::zero();
    let mut after = Vec::with_capacity(n);
    let mut wd = Vec::with_capacity(n);
    for i in 0..n {
        let tau = s.sigma[i] * s.delta[i];
        let t_i = (-optical).exp();
        optical += tau;
        let t_next = (-optical).exp();
        after.push(t_next);
        wd.push(t_i * -(-tau).exp_m1() * s.dist[i]);
    }
    let t_final = (-optical).exp();
    let (up_depth, up_opacity) = match bg {
        Some(_) => (d_depth, T::zero()),
        None => (d_depth, d_opacity),
    };
    let bg_depth = bg.unwrap_or_else(T::zero);
    let mut suffix = T::zero();
    for i in (0..n).rev() {
        let dop = s.delta[i] * t_final;
        let mut dd = s.delta[i] * (after[i] * s.dist[i] - suffix);
        if bg.is_some() {
            dd -= bg_depth * dop;
        }
        out[i] = up_depth * dd + up_opacity * dop;
        suffix += wd[i];
    }
}

/// Uniform midpoint samples every `step` meters between the ray's near and
/// far distances. The last interval is truncated at `t_far` and its sample
/// sits at the truncated interval's midpoint.
pub fn sample_along_ray<T: Real>(field: &DensityField<T>, ray: &Ray<T>, step: T) -> Result<RaySamples<T>> {
    if !(step.is_finite() && step > T::zero()) {
        return Err(Error::InvalidArgument(format!("sampling step must be > 0, got {step}")));
    }
    let mut s = RaySamples::default();
    sample_into(field, ray, step, &mut s);
    Ok(s)
}

pub(crate) fn sample_into<T: Real>(field: &DensityField<T>, ray: &Ray<T>, step: T, out: &mut RaySamples<T>) {
    out.clear();
    let len = ray.t_far - ray.t_near;
    if !(len > T::zero()) {
        return;
    }
    let mut count = (len / step).ceil().to_usize().unwrap_or(0);
    // Drop a sliver interval produced by rounding in len/step.
    if count > 0 && len - T::from_usize_lossy(count - 1) * step <= step * T::lit(1e-9) {
        count -= 1;
    }
    for i in 0..count {
        let a = ray.t_near + T::from_usize_lossy(i) * step;
        let b = if i + 1 == count { ray.t_far } else { a + step };
        let d = (a + b) * T::half();
        out.sigma.push(field.sample_unchecked(ray.at(d)));
        out.delta.push(b - a);
        out.dist.push(d);
    }
}

/// Default ray-marching step: half the smallest voxel edge.
pub fn default_step<T: Real>(spec: &GridSpec<T>) -> T {
    spec.min_voxel_size() * T::half()
}

/// One downward ray per grid column, starting at the grid's top face above the
/// column center. Row-major in `(x, y)` with `x` fastest.
pub fn make_topdown_rays<T: Real>(spec: &GridSpec<T>) -> Vec<Ray<T>> {
    let mut rays = Vec::with_capacity(spec.nx * spec.ny);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            rays.push(topdown_ray(spec, ix, iy));
        }
    }
    rays
}

#[inline]
pub(crate) fn topdown_ray<T: Real>(spec: &GridSpec<T>, ix: usize, iy: usize) -> Ray<T> {
    let c = spec.voxel_center(ix, iy, 0);
    Ray {
        origin: [c[0], c[1], spec.top()],
        direction: [T::zero(), T::zero(), -T::one()],
        t_near: T::zero(),
        t_far: spec.height(),
    }
}

/// Distance from an interior point along `dir` to the grid's boundary.
pub(crate) fn exit_distance<T: Real>(spec: &GridSpec<T>, p: Vec3<T>, dir: Vec3<T>) -> T {
    let hi = spec.max_corner();
    let mut t = T::infinity();
    for a in 0..3 {
        if dir[a] > T::zero() {
            t = t.min((hi[a] - p[a]) / dir[a]);
        } else if dir[a] < T::zero() {
            t = t.min((spec.origin[a] - p[a]) / dir[a]);
        }
    }
    t.max(T::zero())
}

/// One ray per equirectangular pixel from `cam`, row-major with row 0 at
/// the zenith.
pub fn make_pano_rays<T: Real>(spec: &GridSpec<T>, cam: Vec3<T>, width: usize, height: usize) -> Result<Vec<Ray<T>>> {
    check_camera(spec, cam)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("panorama dimensions must be positive".into()));
    }
    let mut rays = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            rays.push(pano_ray(spec, cam, u, v, width, height));
        }
    }
    Ok(rays)
}

#[inline]
pub(crate) fn pano_ray<T: Real>(spec: &GridSpec<T>, cam: Vec3<T>, u: usize, v: usize, w: usize, h: usize) -> Ray<T> {
    let dir = pano::pixel_direction(u, v, w, h);
    Ray {
        origin: cam,
        direction: dir,
        t_near: T::zero(),
        t_far: exit_distance(spec, cam, dir),
    }
}

pub(crate) fn check_camera<T: Real>(spec: &GridSpec<T>, cam: Vec3<T>) -> Result<()> {
    if cam.iter().all(|c| c.is_finite()) && spec.contains(cam) {
        Ok(())
    } else {
        Err(Error::CameraPlacement {
            x: cam[0].to_f64_lossy(),
            y: cam[1].to_f64_lossy(),
            z: cam[2].to_f64_lossy(),
        })
    }
}

/// Renders the overhead height map: per column, grid top minus the composited
/// depth against an opaque floor at the grid bottom, clamped to
/// `[0, grid top]`.
pub fn render_height_map<T: Real>(field: &DensityField<T>, step: T) -> Result<HeightMap<T>> {
    if !(step.is_finite() && step > T::zero()) {
        return Err(Error::InvalidArgument(format!("sampling step must be > 0, got {step}")));
    }
    Ok(render_topdown_depths(field, step).heights)
}

pub(crate) struct TopdownRender<T> {
    /// Composited depth per column.
    pub depth: Vec<T>,
    pub heights: HeightMap<T>,
}

pub(crate) fn render_topdown_depths<T: Real>(field: &DensityField<T>, step: T) -> TopdownRender<T> {
    let spec = *field.spec();
    let top = spec.top();
    let bg = spec.height();
    let depth: Vec<T> = (0..spec.nx * spec.ny)
        .into_par_iter()
        .map_init(RaySamples::default, |buf, k| {
            let ray = topdown_ray(&spec, k % spec.nx, k / spec.nx);
            sample_into(field, &ray, step, buf);
            composite(buf, Some(bg), |_| {}).0
        })
        .collect();
    let heights = depth
        .iter()
        .map(|&d| height_from_depth(top, d))
        .collect();
    TopdownRender {
        depth,
        heights: Raster::new(spec.nx, spec.ny, heights).expect("grid footprint"),
    }
}

#[inline]
pub(crate) fn height_from_depth<T: Real>(top: T, depth: T) -> T {
    (top - depth).max(T::zero()).min(top.max(T::zero()))
}

/// Renders street-view depth and opacity panoramas from `cam`. No backdrop:
/// residual transparency stands for sky.
pub fn render_depth_pano<T: Real>(
    field: &DensityField<T>,
    cam: Vec3<T>,
    width: usize,
    height: usize,
    step: T,
) -> Result<(DepthPanorama<T>, OpacityPanorama<T>)> {
    let spec = *field.spec();
    check_camera(&spec, cam)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("panorama dimensions must be positive".into()));
    }
    if !(step.is_finite() && step > T::zero()) {
        return Err(Error::InvalidArgument(format!("sampling step must be > 0, got {step}")));
    }
    let pixels: Vec<(T, T)> = (0..width * height)
        .into_par_iter()
        .map_init(RaySamples::default, |buf, k| {
            let ray = pano_ray(&spec, cam, k % width, k / width, width, height);
            sample_into(field, &ray, step, buf);
            composite(buf, None, |_| {})
        })
        .collect();
    let depth = pixels.iter().map(|p| p.0).collect();
    let opacity = pixels.iter().map(|p| p.1).collect();
    Ok((
        Raster::new(width, height, depth)?,
        Raster::new(width, height, opacity)?,
    ))
}

/// Scatters per-ray upstream gradients back onto the field's voxels.
///
/// `upstream(k)` yields `(dL/d depth, dL/d opacity)` for ray `k`. Per-ray
/// sample gradients are computed in parallel; the scatter into `grad` runs
/// in ray order so the result does not depend on scheduling.
pub(crate) fn backprop_rays<T: Real>(
    field: &DensityField<T>,
    rays: &(dyn Fn(usize) -> Ray<T> + Sync),
    n_rays: usize,
    step: T,
    bg: Option<T>,
    upstream: &(dyn Fn(usize) -> (T, T) + Sync),
    grad: &mut [T],
) {
    let spec = *field.spec();
    const CHUNK: usize = 1024;
    let mut start = 0;
    while start < n_rays {
        let end = (start + CHUNK).min(n_rays);
        let per_ray: Vec<Option<(Ray<T>, Vec<T>, Vec<T>)>> = (start..end)
            .into_par_iter()
            .map_init(RaySamples::default, |buf, k| {
                let (gd, go) = upstream(k);
                if gd == T::zero() && go == T::zero() {
                    return None;
                }
                let ray = rays(k);
                sample_into(field, &ray, step, buf);
                let mut g = Vec::new();
                ray_grad_into(buf, bg, gd, go, &mut g);
                Some((ray, g, buf.dist.clone()))
            })
            .collect();
        for (ray, g, dist) in per_ray.into_iter().flatten() {
            for (gi, di) in g.iter().zip(&dist) {
                if *gi == T::zero() {
                    continue;
                }
                if let Some(st) = spec.trilinear_stencil(ray.at(*di)) {
                    for (idx, w) in st {
                        grad[idx] += w * *gi;
                    }
                }
            }
        }
        start = end;
    }
}

/// Accumulates `dL/d sigma` from `dL/d height` for every column.
pub(crate) fn backprop_height_map<T: Real>(
    field: &DensityField<T>,
    render: &TopdownRender<T>,
    d_height: &[T],
    step: T,
    grad: &mut [T],
) {
    let spec = *field.spec();
    let top = spec.top();
    let upstream = |k: usize| {
        let h = top - render.depth[k];
        // Clamped heights pass no gradient.
        if h <= T::zero() || h >= top {
            (T::zero(), T::zero())
        } else {
            (-d_height[k], T::zero())
        }
    };
    let rays = |k: usize| topdown_ray(&spec, k % spec.nx, k / spec.nx);
    backprop_rays(field, &rays, spec.nx * spec.ny, step, Some(spec.height()), &upstream, grad);
}

/// Accumulates `dL/d sigma` from per-pixel panorama depth/opacity gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop_depth_pano<T: Real>(
    field: &DensityField<T>,
    cam: Vec3<T>,
    width: usize,
    height: usize,
    step: T,
    d_depth: &[T],
    d_opacity: &[T],
    grad: &mut [T],
) {
    let spec = *field.spec();
    let rays = |k: usize| pano_ray(&spec, cam, k % width, k / width, width, height);
    let upstream = |k: usize| (d_depth[k], d_opacity[k]);
    backprop_rays(field, &rays, width * height, step, None, &upstream, grad);
}
