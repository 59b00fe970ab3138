//! Box-world urban scenes with exact ground truth: overhead heights,
//! street-view depth panoramas and sky masks by analytic ray casting, and
//! occupancy density fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, GridSpec, Vec3};
use crate::pano;
use crate::raster::{DepthPanorama, HeightMap, Mask, Raster, SkyMask};
use crate::scalar::Real;

/// Height above ground covered by scene grids (meters).
pub const SCENE_GRID_HEIGHT: f64 = 64.0;

/// Default density assigned to solid voxels of an occupancy field.
pub const SIGMA_SOLID: f64 = 1e3;

/// Axis-aligned building: `[x, x + w) x [y, y + l) x [0, height)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub height: f64,
}

impl SceneBox {
    fn contains_xy(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.l
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.contains_xy(p[0], p[1]) && p[2] >= 0.0 && p[2] < self.height
    }

    /// Entry distance of a ray that starts outside the box, if it hits.
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        let lo = [self.x, self.y, 0.0];
        let hi = [self.x + self.w, self.y + self.l, self.height];
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[a];
                let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Extent in meters along x and y, starting at the world origin.
    pub footprint: [f64; 2],
    #[serde(default)]
    pub boxes: Vec<SceneBox>,
    /// Street-view camera position.
    pub camera: [f64; 3],
}

impl SceneSpec {
    /// Checks footprint containment, height range, pairwise overlap and
    /// camera placement.
    pub fn validate(&self) -> Result<()> {
        let [fx, fy] = self.footprint;
        if !(fx.is_finite() && fy.is_finite() && fx >= 1.0 && fy >= 1.0) {
            return Err(Error::InvalidScene(format!("footprint {:?} must be >= 1 m", self.footprint)));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let vals = [b.x, b.y, b.w, b.l, b.height];
            if vals.iter().any(|v| !v.is_finite()) || b.w <= 0.0 || b.l <= 0.0 {
                return Err(Error::InvalidScene(format!("box {i} has invalid extent {b:?}")));
            }
            if b.x < 0.0 || b.y < 0.0 || b.x + b.w > fx || b.y + b.l > fy {
                return Err(Error::InvalidScene(format!("box {i} leaves the footprint")));
            }
            if !(b.height > 0.0 && b.height <= SCENE_GRID_HEIGHT) {
                return Err(Error::InvalidScene(format!(
                    "box {i} height {} outside (0, {SCENE_GRID_HEIGHT}]",
                    b.height
                )));
            }
        }
        for i in 0..self.boxes.len() {
            for j in i + 1..self.boxes.len() {
                let (a, b) = (&self.boxes[i], &self.boxes[j]);
                let ox = a.x < b.x + b.w && b.x < a.x + a.w;
                let oy = a.y < b.y + b.l && b.y < a.y + a.l;
                if ox && oy {
                    return Err(Error::InvalidScene(format!("boxes {i} and {j} overlap")));
                }
            }
        }
        let c = self.camera;
        let cam_ok = c.iter().all(|v| v.is_finite())
            && c[0] >= 0.0
            && c[0] <= fx
            && c[1] >= 0.0
            && c[1] <= fy
            && c[2] > 0.0
            && c[2] < SCENE_GRID_HEIGHT;
        if !cam_ok || self.boxes.iter().any(|b| b.contains(c)) {
            return Err(Error::CameraPlacement { x: c[0], y: c[1], z: c[2] });
        }
        Ok(())
    }

    /// Grid of 1 m voxels over the footprint, see [`GridSpec::scene_grid`].
    pub fn grid<T: Real>(&self) -> GridSpec<T> {
        GridSpec::scene_grid(self.footprint[0].ceil() as usize, self.footprint[1].ceil() as usize)
    }

    pub fn camera<T: Real>(&self) -> Vec3<T> {
        self.camera.map(T::lit)
    }

    /// Tallest box covering `(x, y)`, or 0.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.boxes
            .iter()
            .filter(|b| b.contains_xy(x, y))
            .fold(0.0, |m, b| m.max(b.height))
    }

    pub fn truth<T: Real>(&self, pano_w: usize, pano_h: usize) -> Result<SceneTruth<T>> {
        let grid = self.grid::<T>();
        let height = rasterize_height(self, &grid)?;
        let (pano_depth, sky) = raycast_pano_depth(self, pano_w, pano_h)?;
        Ok(SceneTruth {
            height,
            pano_depth,
            sky,
            cam: self.camera(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth<T> {
    pub height: HeightMap<T>,
    pub pano_depth: DepthPanorama<T>,
    pub sky: SkyMask,
    pub cam: Vec3<T>,
}

/// Height of the tallest box covering each grid column center, else 0.
pub fn rasterize_height<T: Real>(scene: &SceneSpec, grid: &GridSpec<T>) -> Result<HeightMap<T>> {
    scene.validate()?;
    Ok(Raster::from_fn(grid.nx, grid.ny, |ix, iy| {
        let c = grid.voxel_center(ix, iy, 0);
        T::lit(scene.height_at(c[0].to_f64_lossy(), c[1].to_f64_lossy()))
    }))
}

/// Exact nearest-hit depth of every equirectangular ray from the scene
/// camera against boxes and the ground plane. Rays that hit nothing inside
/// the footprint are sky and get depth 0.
pub fn raycast_pano_depth<T: Real>(scene: &SceneSpec, width: usize, height: usize) -> Result<(DepthPanorama<T>, SkyMask)> {
    scene.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("panorama dimensions must be positive".into()));
    }
    let mut depth = Vec::with_capacity(width * height);
    let mut sky = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let d: Vec3<f64> = pano::pixel_direction(u, v, width, height);
            match cast(scene, d) {
                Some(t) => {
                    depth.push(T::lit(t));
                    sky.push(false);
                }
                None => {
                    depth.push(T::zero());
                    sky.push(true);
                }
            }
        }
    }
    Ok((Raster::new(width, height, depth)?, Mask::new(width, height, sky)?))
}

fn cast(scene: &SceneSpec, d: [f64; 3]) -> Option<f64> {
    let o = scene.camera;
    let [fx, fy] = scene.footprint;
    let mut best: Option<f64> = None;
    if d[2] < 0.0 {
        let t = o[2] / -d[2];
        let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
        if (0.0..=fx).contains(&x) && (0.0..=fy).contains(&y) {
            best = Some(t);
        }
    }
    for b in &scene.boxes {
        if let Some(t) = b.intersect(o, d) {
            if best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Density field that is `sigma_hi` at every voxel whose center lies inside
/// a box or below the ground plane, and 0 elsewhere.
pub fn occupancy_field<T: Real>(scene: &SceneSpec, grid: &GridSpec<T>, sigma_hi: T) -> Result<DensityField<T>> {
    scene.validate()?;
    if !(sigma_hi > T::zero() && sigma_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("solid density must be > 0, got {sigma_hi}")));
    }
    let mut sigma = vec![T::zero(); grid.len()];
    for iz in 0..grid.nz {
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let p = grid.voxel_center(ix, iy, iz).map(|v| v.to_f64_lossy());
                if p[2] < 0.0 || scene.boxes.iter().any(|b| b.contains(p)) {
                    sigma[grid.index(ix, iy, iz)] = sigma_hi;
                }
            }
        }
    }
    DensityField::new(*grid, sigma)
}

/// Multiplies every non-sky depth by `1 + std * n`, `n ~ N(0, 1)`, clamped at
/// zero. A stand-in for the errors of learned monocular depth.
pub fn perturb_depth<T: Real>(depth: &DepthPanorama<T>, sky: &SkyMask, std: f64, seed: u64) -> Result<DepthPanorama<T>> {
    sky.check_matches(depth, "depth noise")?;
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("noise std {std}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = depth.clone();
    for (v, s) in out.data_mut().iter_mut().zip(sky.data()) {
        let n: f64 = normal.sample(&mut rng);
        if !*s {
            *v = (*v * T::lit(1.0 + n)).max(T::zero());
        }
    }
    Ok(out)
}

/// Panorama resolution used with the canonical scenes.
pub const CANONICAL_PANO: (usize, usize) = (128, 64);

/// Fixed scene library: `flat`, `two-box` and `dense`.
pub fn canonical_scenes() -> Vec<(&'static str, SceneSpec)> {
    let bx = |x, y, w, l, height| SceneBox { x, y, w, l, height };
    let camera = [32.0, 32.0, 2.0];
    vec![
        (
            "flat",
            SceneSpec {
                footprint: [64.0, 64.0],
                boxes: vec![],
                camera,
            },
        ),
        (
            "two-box",
            SceneSpec {
                footprint: [64.0, 64.0],
                // Camera well in front of both boxes so the taller one's
                // silhouette bounds its top from a single viewpoint.
                boxes: vec![bx(6.0, 34.0, 20.0, 20.0, 10.0), bx(38.0, 34.0, 20.0, 20.0, 25.0)],
                camera: [32.0, 2.0, 2.0],
            },
        ),
        (
            "dense",
            SceneSpec {
                footprint: [64.0, 64.0],
                boxes: vec![
                    bx(4.0, 4.0, 12.0, 10.0, 8.0),
                    bx(20.0, 4.0, 10.0, 12.0, 15.0),
                    bx(40.0, 6.0, 14.0, 10.0, 22.0),
                    bx(4.0, 24.0, 8.0, 12.0, 30.0),
                    bx(4.0, 44.0, 10.0, 14.0, 18.0),
                    bx(22.0, 46.0, 16.0, 12.0, 6.0),
                    bx(44.0, 42.0, 14.0, 16.0, 12.0),
                ],
                camera,
            },
        ),
    ]
}

pub fn canonical_scene(name: &str) -> Option<SceneSpec> {
    canonical_scenes().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
}
