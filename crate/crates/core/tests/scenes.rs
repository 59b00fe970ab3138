mod common;

use common::{first_hit, non_silhouette, oracle_agreement};
use densefield::pano::pixel_angles;
use densefield::render::{render_depth_pano, render_height_map};
use densefield::scene::{canonical_scenes, occupancy_field, rasterize_height, raycast_pano_depth, SIGMA_SOLID};
use densefield::{Mask, SceneBox, SceneSpec};

fn empty() -> SceneSpec {
    SceneSpec {
        footprint: [64.0, 64.0],
        boxes: vec![],
        camera: [32.0, 32.0, 2.0],
    }
}

#[test]
fn single_box_covers_one_hundred_pixels() {
    let mut s = empty();
    s.boxes.push(SceneBox { x: 10.0, y: 40.0, w: 10.0, l: 10.0, height: 20.0 });
    let h = rasterize_height::<f64>(&s, &s.grid()).unwrap();
    let covered: Vec<(usize, usize)> = (0..64 * 64)
        .filter(|k| h.data()[*k] == 20.0)
        .map(|k| (k % 64, k / 64))
        .collect();
    assert_eq!(covered.len(), 100);
    assert!(covered.iter().all(|&(x, y)| (10..20).contains(&x) && (40..50).contains(&y)));
}

#[test]
fn empty_scene_ground_depths() {
    let (d, sky) = raycast_pano_depth::<f64>(&empty(), 128, 64).unwrap();
    // Four rows below the horizon whose ground hit lies inside the footprint.
    for v in [40, 48, 56, 63] {
        let (_, el): (f64, f64) = pixel_angles(0, v, 128, 64);
        let want = 2.0 / (-el).sin();
        for u in 0..128 {
            assert!(!sky.get(u, v));
            assert!((d.get(u, v) - want).abs() < 1e-9, "row {v}: {} vs {want}", d.get(u, v));
        }
    }
    assert!((0..32).all(|v| (0..128).all(|u| sky.get(u, v))));
}

#[test]
fn wall_in_front_of_camera() {
    let mut s = empty();
    s.boxes.push(SceneBox { x: 22.0, y: 2.0, w: 20.0, l: 20.0, height: 20.0 });
    let (t, id) = first_hit(&s, [0.0, -1.0, 0.0]).unwrap();
    assert_eq!((t, id), (10.0, 1));
    // Azimuth 0 looks along -y; the pixel straddling the horizon sees the wall.
    let (d, sky) = raycast_pano_depth::<f64>(&s, 128, 64).unwrap();
    assert!(!sky.get(0, 31) && (d.get(0, 31) - 10.0).abs() < 0.1);
}

#[test]
fn analytic_raycast_agrees_with_independent_caster() {
    for (name, s) in canonical_scenes() {
        let (d, sky) = raycast_pano_depth::<f64>(&s, 96, 48).unwrap();
        for v in 0..48 {
            for u in 0..96 {
                let dir = densefield::pano::pixel_direction(u, v, 96, 48);
                match first_hit(&s, dir) {
                    Some((t, _)) => assert!((d.get(u, v) - t).abs() < 1e-9, "{name} ({u},{v})"),
                    None => assert!(sky.get(u, v), "{name} ({u},{v})"),
                }
            }
        }
    }
}

#[test]
fn empty_scene_occupancy_is_only_the_ground_layer() {
    let s = empty();
    let f = occupancy_field(&s, &s.grid::<f64>(), SIGMA_SOLID).unwrap();
    let spec = *f.spec();
    for iz in 0..spec.nz {
        let want = if iz == 0 { SIGMA_SOLID } else { 0.0 };
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                assert_eq!(f.get(ix, iy, iz), want);
            }
        }
    }
    let h = render_height_map(&f, 0.5).unwrap();
    // Trilinear interpolation lets the ground layer bleed a quarter voxel up.
    let m = h.data().iter().cloned().fold(0.0, f64::max);
    assert!(m <= 0.25 + 1e-9, "max {m}");
}

/// Analytic panorama, rendered panorama of the occupancy field and sky mask
/// tell the same story on every canonical scene.
#[test]
fn consistency_triangle() {
    let (w, h) = (128, 64);
    for (name, s) in canonical_scenes() {
        let truth = s.truth::<f64>(w, h).unwrap();
        let f = occupancy_field(&s, &s.grid(), SIGMA_SOLID).unwrap();
        let (_, opacity) = render_depth_pano(&f, truth.cam, w, h, 0.5).unwrap();
        let inner = non_silhouette(&s, w, h);
        let mut solid = Vec::new();
        // Sky pixels away from any silhouette and above the horizon; rays
        // grazing the ground layer at the footprint edge are not empty.
        let open_sky = Mask::from_fn(w, h, |u, v| {
            v < h / 2
                && (-1i64..=1).all(|dv| {
                    (-1i64..=1).all(|du| {
                        let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                        truth.sky.get((u as i64 + du).rem_euclid(w as i64) as usize, vv)
                    })
                })
        });
        for i in 0..w * h {
            if open_sky.data()[i] {
                assert!(opacity.data()[i] < 1e-6, "{name} pixel {i} opacity {}", opacity.data()[i]);
            } else if inner.data()[i] {
                assert!(opacity.data()[i] > 0.5, "{name} pixel {i} opacity {}", opacity.data()[i]);
                solid.push(opacity.data()[i]);
            }
        }
        solid.sort_by(f64::total_cmp);
        assert!(solid[solid.len() / 10] > 0.999, "{name}: opacity decile {}", solid[solid.len() / 10]);
        let a = oracle_agreement(&s, (w, h), 0.5);
        assert!(a.height_max_err <= 1.0, "{name}: height error {}", a.height_max_err);
        assert!(a.depth_median_err < 1.0, "{name}: depth median {}", a.depth_median_err);
    }
}
