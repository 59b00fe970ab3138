//! Independent oracles shared by the integration test targets.
#![allow(dead_code)]

use densefield::metrics::masked_mae;
use densefield::optim::{PairSource, StreetSupervision};
use densefield::pano::pixel_direction;
use densefield::render::{render_depth_pano, render_height_map};
use densefield::scene::{occupancy_field, SceneSpec, SIGMA_SOLID};
use densefield::{fit_field, Mask, OptimConfig, Raster};

/// SSIM by direct 2D convolution with the full 11x11 Gaussian kernel,
/// recomputing every window's statistics from scratch.
pub fn reference_ssim(x: &Raster<f64>, y: &Raster<f64>, l: f64) -> f64 {
    let win = 11usize;
    let sigma: f64 = 1.5;
    let mut kernel = vec![0.0; win * win];
    for j in 0..win {
        for i in 0..win {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            kernel[j * win + i] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);
    let c1 = (0.01 * l).powi(2);
    let c2 = (0.03 * l).powi(2);
    let (w, h) = (x.width(), x.height());
    let mut total = 0.0;
    let mut n = 0;
    for v0 in 0..=h - win {
        for u0 in 0..=w - win {
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..win {
                for i in 0..win {
                    let k = kernel[j * win + i];
                    mx += k * x.get(u0 + i, v0 + j);
                    my += k * y.get(u0 + i, v0 + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..win {
                for i in 0..win {
                    let k = kernel[j * win + i];
                    let a = x.get(u0 + i, v0 + j) - mx;
                    let b = y.get(u0 + i, v0 + j) - my;
                    vx += k * a * a;
                    vy += k * b * b;
                    cxy += k * a * b;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    total / n as f64
}

/// Nearest surface along a ray: distance and surface id (0 ground, k + 1 box k).
pub fn first_hit(scene: &SceneSpec, d: [f64; 3]) -> Option<(f64, usize)> {
    let o = scene.camera;
    let mut best: Option<(f64, usize)> = None;
    let mut offer = |t: f64, id: usize| {
        if best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, id));
        }
    };
    if d[2] < 0.0 {
        let t = -o[2] / d[2];
        let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
        if x >= 0.0 && x <= scene.footprint[0] && y >= 0.0 && y <= scene.footprint[1] {
            offer(t, 0);
        }
    }
    for (k, b) in scene.boxes.iter().enumerate() {
        let lo = [b.x, b.y, 0.0];
        let hi = [b.x + b.w, b.y + b.l, b.height];
        let (mut t0, mut t1) = (0.0_f64, f64::INFINITY);
        let mut hit = true;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    hit = false;
                }
                continue;
            }
            let (ta, tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        if hit && t0 <= t1 {
            offer(t0, k + 1);
        }
    }
    best
}

/// Per-pixel surface ids of the scene panorama; `None` is sky.
pub fn surface_ids(scene: &SceneSpec, w: usize, h: usize) -> Vec<Option<usize>> {
    (0..w * h)
        .map(|k| first_hit(scene, pixel_direction(k % w, k / w, w, h)).map(|(_, id)| id))
        .collect()
}

/// Pixels that see a surface and whose eight neighbours (columns wrapping)
/// see the same surface.
pub fn non_silhouette(scene: &SceneSpec, w: usize, h: usize) -> Mask {
    let ids = surface_ids(scene, w, h);
    Mask::from_fn(w, h, |u, v| {
        let me = ids[v * w + u];
        me.is_some()
            && (-1i64..=1).all(|dv| {
                (-1i64..=1).all(|du| {
                    let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                    let uu = (u as i64 + du).rem_euclid(w as i64) as usize;
                    ids[vv * w + uu] == me
                })
            })
    })
}

/// Height-map pixels whose 3x3 neighbourhood has a single ground-truth height.
pub fn off_boundary(height: &Raster<f64>) -> Mask {
    let (w, h) = (height.width(), height.height());
    Mask::from_fn(w, h, |u, v| {
        let me = height.get(u, v);
        (-1i64..=1).all(|dv| {
            (-1i64..=1).all(|du| {
                let uu = u as i64 + du;
                let vv = v as i64 + dv;
                uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 || height.get(uu as usize, vv as usize) == me
            })
        })
    })
}

pub struct OracleAgreement {
    pub height_max_err: f64,
    pub depth_median_err: f64,
    pub depth_pixels: usize,
}

/// Renders the occupancy field of `scene` both ways and compares with the
/// analytic rasterization and ray casting.
pub fn oracle_agreement(scene: &SceneSpec, pano: (usize, usize), step: f64) -> OracleAgreement {
    let grid = scene.grid::<f64>();
    let truth = scene.truth::<f64>(pano.0, pano.1).unwrap();
    let field = occupancy_field(scene, &grid, SIGMA_SOLID).unwrap();
    let rendered = render_height_map(&field, step).unwrap();
    let keep = off_boundary(&truth.height);
    let mut height_max_err: f64 = 0.0;
    for (i, k) in keep.data().iter().enumerate() {
        if *k {
            height_max_err = height_max_err.max((rendered.data()[i] - truth.height.data()[i]).abs());
        }
    }
    let (depth, _) = render_depth_pano(&field, truth.cam, pano.0, pano.1, step).unwrap();
    let keep = non_silhouette(scene, pano.0, pano.1);
    let mut errs: Vec<f64> = (0..depth.len())
        .filter(|&i| keep.data()[i])
        .map(|i| (depth.data()[i] - truth.pano_depth.data()[i]).abs())
        .collect();
    errs.sort_by(f64::total_cmp);
    OracleAgreement {
        height_max_err,
        depth_median_err: errs[errs.len() / 2],
        depth_pixels: errs.len(),
    }
}

/// Ground-plane mask of a scene box's footprint on the scene grid.
pub fn box_mask(scene: &SceneSpec, k: usize) -> Mask {
    let grid = scene.grid::<f64>();
    let b = scene.boxes[k];
    Mask::from_fn(grid.nx, grid.ny, |ix, iy| {
        let c = grid.voxel_center(ix, iy, 0);
        c[0] >= b.x && c[0] < b.x + b.w && c[1] >= b.y && c[1] < b.y + b.l
    })
}

pub fn masked_mean(r: &Raster<f64>, m: &Mask) -> f64 {
    let (s, n) = r
        .data()
        .iter()
        .zip(m.data())
        .filter(|p| *p.1)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    s / n as f64
}

pub struct FitOutcome {
    pub height: Raster<f64>,
    pub trace_total: Vec<f64>,
}

/// Fits `scene` with oracle street supervision and returns the rendered heights.
pub fn fit_scene(scene: &SceneSpec, pano: (usize, usize), mask: Option<&Mask>, cfg: &OptimConfig) -> FitOutcome {
    let grid = scene.grid::<f64>();
    let truth = scene.truth::<f64>(pano.0, pano.1).unwrap();
    let street = StreetSupervision {
        cam: truth.cam,
        pairs: PairSource::Oracle(truth.pano_depth.clone()),
        sky: truth.sky.clone(),
    };
    let fit = fit_field(&grid, &truth.height, mask, Some(&street), None, cfg).unwrap();
    FitOutcome {
        height: render_height_map(&fit.field, 0.5).unwrap(),
        trace_total: fit.trace().iter().map(|r| r.loss.l_total).collect(),
    }
}

pub fn region_mae(pred: &Raster<f64>, gt: &Raster<f64>, m: &Mask) -> f64 {
    masked_mae(pred, gt, m).unwrap()
}
