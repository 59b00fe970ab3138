//! Finite-difference checks of every analytic gradient in the crate.
//!
//! Each suite perturbs inputs with central differences and compares against
//! the analytic derivative, reporting the worst relative error
//! `|a - f| / max(|a|, |f|, floor)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::GridSpec;
use crate::loss::{
    ranking_loss, sample_rank_pairs, scale_invariant_loss, sky_loss, PairSampling, RankConvention, LOG_EPS,
};
use crate::optim::{Objective, StreetSupervision, PairSource};
use crate::raster::{Mask, Raster};
use crate::render::{render_ray, render_ray_grad, RaySamples};

/// Denominator floor for relative errors.
pub const ABS_FLOOR: f64 = 1e-7;
pub const RENDER_TOL: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Random ray with densities in `[margin, 2)` so central differences of
/// width `margin` stay non-negative.
fn random_samples(rng: &mut ChaCha8Rng, margin: f64) -> RaySamples<f64> {
    let n = rng.random_range(1..=64);
    let mut dist = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..n {
        let d = rng.random_range(0.05..1.0);
        dist.push(t + 0.5 * d);
        delta.push(d);
        t += d;
    }
    let sigma = (0..n).map(|_| rng.random_range(0.0..2.0_f64).max(margin)).collect();
    RaySamples { sigma, delta, dist }
}

/// Gradients of depth and opacity with respect to sample densities on random
/// rays, with and without a backdrop.
pub fn check_render(seed: u64, rays: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..rays {
        let s = random_samples(&mut rng, h);
        let bg = (k % 2 == 1).then(|| rng.random_range(1.0..80.0));
        for (gd, go) in [(1.0, 0.0), (0.0, 1.0)] {
            let g = render_ray_grad(&s, bg, gd, go)?;
            for i in 0..s.len() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut p = s.clone();
                    p.sigma[i] += delta;
                    let r = render_ray(&p, bg)?;
                    Ok(gd * r.depth + go * r.opacity)
                };
                let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
                worst = worst.max(rel_err(g[i], fd));
                checked += 1;
            }
        }
    }
    Ok(SuiteReport {
        name: "render (depth, opacity)",
        checked,
        max_rel_err: worst,
        tolerance: RENDER_TOL,
    })
}

/// Gradients of the three losses on random inputs kept away from the log
/// floor and the absolute-value kinks.
pub fn check_losses(seed: u64) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (w, hh) = (12, 9);

    // Scale-invariant height loss.
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..4 {
        let gt = Raster::from_fn(w, hh, |_, _| rng.random_range(0.0..30.0));
        let pred = Raster::from_fn(w, hh, |_, _| rng.random_range(10.0 * LOG_EPS..30.0));
        let mask = Mask::from_fn(w, hh, |_, _| rng.random_bool(0.2));
        let g = scale_invariant_loss(&pred, &gt, Some(&mask))?;
        for i in 0..pred.len() {
            let eval = |d: f64| -> Result<f64> {
                let mut p = pred.clone();
                p.data_mut()[i] += d;
                Ok(scale_invariant_loss(&p, &gt, Some(&mask))?.value)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max(rel_err(g.grad[i], fd));
            checked += 1;
        }
    }
    let si = SuiteReport {
        name: "scale-invariant height loss",
        checked,
        max_rel_err: worst,
        tolerance: LOSS_TOL,
    };

    // Ranking loss, both conventions.
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let (pw, ph) = (48, 24);
    for conv in [RankConvention::AsWritten, RankConvention::DepthOrdered] {
        let reference = Raster::from_fn(pw, ph, |_, _| rng.random_range(1.0..40.0));
        let params = PairSampling {
            k: 64,
            min_dist: 2.0,
            max_dist: 6.0,
            tau_rel: 0.02,
        };
        let pairs = sample_rank_pairs(&reference, &params, None, rng.random())?;
        let pred = Raster::from_fn(pw, ph, |_, _| rng.random_range(0.0..6.0));
        let g = ranking_loss(&pred, &pairs, conv)?;
        for i in 0..pred.len() {
            let eval = |d: f64| -> Result<f64> {
                let mut p = pred.clone();
                p.data_mut()[i] += d;
                Ok(ranking_loss(&p, &pairs, conv)?.mean)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max(rel_err(g.grad[i], fd));
            checked += 1;
        }
    }
    let rank = SuiteReport {
        name: "ranking loss",
        checked,
        max_rel_err: worst,
        tolerance: LOSS_TOL,
    };

    // Sky loss away from its kinks.
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let sky = Mask::from_fn(pw, ph, |_, _| rng.random_bool(0.4));
    let opacity = Raster::from_fn(pw, ph, |_, _| rng.random_range(0.01..0.99));
    let g = sky_loss(&opacity, &sky)?;
    for i in 0..opacity.len() {
        let eval = |d: f64| -> Result<f64> {
            let mut p = opacity.clone();
            p.data_mut()[i] += d;
            Ok(sky_loss(&p, &sky)?.value)
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max(rel_err(g.grad[i], fd));
        checked += 1;
    }
    let skyr = SuiteReport {
        name: "sky opacity loss",
        checked,
        max_rel_err: worst,
        tolerance: LOSS_TOL,
    };
    Ok(vec![si, rank, skyr])
}

/// Composite objective on an 8x8x8 grid with an 8x4 panorama: analytic
/// `dL/d theta` on 32 random parameters against central differences.
pub fn check_end_to_end(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = GridSpec::new([8, 8, 8], [1.0; 3], [0.0; 3])?;
    let theta: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(-3.0..0.5)).collect();
    let gt = Raster::from_fn(8, 8, |_, _| rng.random_range(0.5..7.0));
    let (pw, ph) = (8, 4);
    let reference = Raster::from_fn(pw, ph, |_, _| rng.random_range(1.0..10.0));
    let sky = Mask::from_fn(pw, ph, |_, v| v == 0 || rng.random_bool(0.2));
    let params = PairSampling {
        k: 16,
        min_dist: 1.0,
        max_dist: 3.0,
        tau_rel: 0.02,
    };
    let pairs = sample_rank_pairs(&reference, &params, None, rng.random())?;
    let street = StreetSupervision {
        cam: [4.0, 4.0, 2.0],
        pairs: PairSource::Fixed(pairs.clone()),
        sky,
    };
    let objective = Objective {
        spec,
        gt: &gt,
        height_mask: None,
        street: Some(&street),
        alpha: 1.0,
        step: 0.5,
        convention: RankConvention::DepthOrdered,
    };
    let (_, grad) = objective.evaluate(&theta, Some(&pairs), true)?;
    let grad = grad.expect("gradient requested");
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut picked: Vec<usize> = Vec::with_capacity(32);
    while picked.len() < 32 {
        let i = rng.random_range(0..spec.len());
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    for &i in &picked {
        let eval = |d: f64| -> Result<f64> {
            let mut t = theta.clone();
            t[i] += d;
            Ok(objective.evaluate(&t, Some(&pairs), false)?.0.l_total)
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], fd));
    }
    Ok(SuiteReport {
        name: "end-to-end composite objective",
        checked: picked.len(),
        max_rel_err: worst,
        tolerance: END_TO_END_TOL,
    })
}

/// Every suite with a common seed.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    let mut out = vec![check_render(seed, 200)?];
    out.extend(check_losses(seed.wrapping_add(1))?);
    out.push(check_end_to_end(seed.wrapping_add(2))?);
    Ok(out)
}
