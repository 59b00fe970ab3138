//! Height and street-view losses with analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthPanorama, HeightMap, Mask, OpacityPanorama, SkyMask};
use crate::scalar::{sigmoid, softplus, Real};

/// Floor applied before taking logs of heights (meters).
pub const LOG_EPS: f64 = 1e-3;

/// A loss value and its gradient with respect to every input pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Vec<T>,
}

/// Scale-invariant log loss between predicted and reference heights.
///
/// With `e_i = log y_i - log p_i` over the `N` unmasked pixels (logs of
/// values floored at [`LOG_EPS`]) the loss is `(1/2N) sum (e_i - mean(e))^2`.
/// `mask` marks pixels to ignore.
pub fn scale_invariant_loss<T: Real>(pred: &HeightMap<T>, gt: &HeightMap<T>, mask: Option<&Mask>) -> Result<LossGrad<T>> {
    pred.check_same_shape(gt, "scale-invariant loss")?;
    if let Some(m) = mask {
        m.check_matches(pred, "scale-invariant loss")?;
    }
    if let Some(i) = pred.data().iter().chain(gt.data()).position(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("NaN in height input (flat index {i})")));
    }
    let eps = T::lit(LOG_EPS);
    let used = |i: usize| mask.is_none_or(|m| !m.data()[i]);
    let n = (0..pred.len()).filter(|&i| used(i)).count();
    if n == 0 {
        return Err(Error::InvalidArgument("scale-invariant loss over zero pixels".into()));
    }
    let nf = T::from_usize_lossy(n);
    let mut resid = vec![T::zero(); pred.len()];
    let mut mean = T::zero();
    for i in 0..pred.len() {
        if used(i) {
            resid[i] = gt.data()[i].max(eps).ln() - pred.data()[i].max(eps).ln();
            mean += resid[i];
        }
    }
    mean = mean / nf;
    let mut value = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for i in 0..pred.len() {
        if !used(i) {
            continue;
        }
        let e = resid[i] - mean;
        value += e * e;
        let p = pred.data()[i];
        // d/dp of the floored log is zero below the floor.
        if p > eps {
            grad[i] = -e / (nf * p);
        }
    }
    Ok(LossGrad {
        value: value / (T::two() * nf),
        grad,
    })
}

/// How the three-case ranking penalty maps order labels onto predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankConvention {
    /// `r = +1`: `log(1 + exp(-y_i + y_j))`; `r = -1`: `log(1 + exp(y_i - y_j))`.
    /// Minimizing it drives pixels labelled nearer to render *farther*.
    #[default]
    AsWritten,
    /// Cases swapped so `r = +1` (reference depth at `i` below `j`) is
    /// satisfied by `y_i < y_j`.
    DepthOrdered,
}

/// One sampled pixel pair with its reference depth order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankPair {
    pub i: (usize, usize),
    pub j: (usize, usize),
    /// `+1` if the reference depth at `i` is less than at `j`, `-1` if
    /// greater, `0` if equal within tolerance.
    pub r: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankPairs {
    pub pairs: Vec<RankPair>,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl RankPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pair-sampling parameters; separations are in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSampling {
    pub k: usize,
    pub min_dist: f64,
    pub max_dist: f64,
    /// Relative band within which two depths count as equal.
    pub tau_rel: f64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            k: 2048,
            min_dist: 10.0,
            max_dist: 30.0,
            tau_rel: 0.02,
        }
    }
}

/// Order label of two reference depths.
pub fn rank_label<T: Real>(di: T, dj: T, tau_rel: T) -> i8 {
    let scale = di.max(dj).max(T::lit(LOG_EPS));
    if (di - dj).abs() <= tau_rel * scale {
        0
    } else if di < dj {
        1
    } else {
        -1
    }
}

/// Draws pixel pairs `(i, j)` with Euclidean pixel separation in
/// `[min_dist, max_dist]` (columns wrap around) and labels them from `depth`.
///
/// `exclude` marks pixels no pair may touch, e.g. sky. Sampling is
/// deterministic for a given seed.
pub fn sample_rank_pairs<T: Real>(
    depth: &DepthPanorama<T>,
    params: &PairSampling,
    exclude: Option<&Mask>,
    seed: u64,
) -> Result<RankPairs> {
    let (w, h) = (depth.width(), depth.height());
    let PairSampling {
        k,
        min_dist,
        max_dist,
        tau_rel,
    } = *params;
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one rank pair".into()));
    }
    let diag = ((w * w + h * h) as f64).sqrt();
    if !(min_dist > 0.0 && min_dist <= max_dist && max_dist < diag) {
        return Err(Error::InvalidArgument(format!(
            "pair separation [{min_dist}, {max_dist}] must satisfy 0 < min <= max < {diag:.3}"
        )));
    }
    if let Some(m) = exclude {
        m.check_matches(depth, "rank pair exclusion mask")?;
    }
    let allowed = |u: usize, v: usize| exclude.is_none_or(|m| !m.get(u, v));
    let valid: Vec<(usize, usize)> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .filter(|&(u, v)| allowed(u, v))
        .collect();
    let r = max_dist.floor() as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dv| (-r..=r).map(move |du| (du, dv)))
        .filter(|&(du, dv)| {
            let d = ((du * du + dv * dv) as f64).sqrt();
            d >= min_dist && d <= max_dist && dv.unsigned_abs() < h as u64 && du.unsigned_abs() < w as u64
        })
        .collect();
    let feasible = valid.iter().any(|&(u, v)| {
        offsets.iter().any(|&(du, dv)| {
            let vj = v as i64 + dv;
            vj >= 0 && vj < h as i64 && allowed((u as i64 + du).rem_euclid(w as i64) as usize, vj as usize)
        })
    });
    if valid.is_empty() || offsets.is_empty() || !feasible {
        return Err(Error::InvalidArgument(format!(
            "no pixel pair at separation [{min_dist}, {max_dist}] fits a {w}x{h} raster"
        )));
    }
    let tau = T::lit(tau_rel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(k);
    let max_attempts = 1000 * k.max(64);
    let mut attempts = 0;
    while pairs.len() < k {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "pair sampler gave up after {max_attempts} attempts ({} pairs found)",
                pairs.len()
            )));
        }
        let (ui, vi) = valid[rng.random_range(0..valid.len())];
        let du = rng.random_range(-r..=r);
        let dv = rng.random_range(-r..=r);
        let d = ((du * du + dv * dv) as f64).sqrt();
        if d < min_dist || d > max_dist || du.unsigned_abs() >= w as u64 {
            continue;
        }
        let vj = vi as i64 + dv;
        if vj < 0 || vj >= h as i64 {
            continue;
        }
        let uj = (ui as i64 + du).rem_euclid(w as i64) as usize;
        let vj = vj as usize;
        if !allowed(uj, vj) {
            continue;
        }
        pairs.push(RankPair {
            i: (ui, vi),
            j: (uj, vj),
            r: rank_label(depth.get(ui, vi), depth.get(uj, vj), tau),
        });
    }
    Ok(RankPairs {
        pairs,
        width: w,
        height: h,
        seed,
    })
}

/// Ranking loss over sampled pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct RankLoss<T> {
    /// Sum over pairs.
    pub sum: T,
    /// `sum / K`; this is what enters the composite loss.
    pub mean: T,
    /// Gradient of `mean` with respect to each predicted depth pixel.
    pub grad: Vec<T>,
}

/// Penalty for a single pair and its derivative with respect to `y_i - y_j`.
#[inline]
pub fn pair_penalty<T: Real>(yi: T, yj: T, r: i8, conv: RankConvention) -> (T, T) {
    let diff = yi - yj;
    let sign = match (r, conv) {
        (0, _) => return (diff * diff, T::two() * diff),
        (1, RankConvention::AsWritten) | (-1, RankConvention::DepthOrdered) => -T::one(),
        _ => T::one(),
    };
    // log(1 + exp(sign * diff))
    let x = sign * diff;
    (softplus(x), sign * sigmoid(x))
}

pub fn ranking_loss<T: Real>(pred: &DepthPanorama<T>, pairs: &RankPairs, conv: RankConvention) -> Result<RankLoss<T>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("ranking loss needs at least one pair".into()));
    }
    let (w, h) = (pred.width(), pred.height());
    let mut sum = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    let kf = T::from_usize_lossy(pairs.len());
    for (n, p) in pairs.pairs.iter().enumerate() {
        if p.i.0 >= w || p.i.1 >= h || p.j.0 >= w || p.j.1 >= h {
            return Err(Error::InvalidArgument(format!(
                "rank pair {n} ({:?}, {:?}) outside {w}x{h} raster",
                p.i, p.j
            )));
        }
        if !matches!(p.r, -1..=1) {
            return Err(Error::InvalidArgument(format!("rank pair {n} has label {}", p.r)));
        }
        let ii = pred.pixel_index(p.i.0, p.i.1);
        let jj = pred.pixel_index(p.j.0, p.j.1);
        let (v, dv) = pair_penalty(pred.data()[ii], pred.data()[jj], p.r, conv);
        sum += v;
        grad[ii] += dv / kf;
        grad[jj] -= dv / kf;
    }
    Ok(RankLoss { sum, mean: sum / kf, grad })
}

/// Opacity loss: non-sky rays should be opaque and sky rays transparent.
/// `(1/N) (sum_nonsky |O - 1| + sum_sky |O|)` over all `N` rays; the
/// subgradient at the kinks is zero.
pub fn sky_loss<T: Real>(opacity: &OpacityPanorama<T>, sky: &SkyMask) -> Result<LossGrad<T>> {
    sky.check_matches(opacity, "sky loss")?;
    let nf = T::from_usize_lossy(opacity.len());
    let mut value = T::zero();
    let mut grad = vec![T::zero(); opacity.len()];
    for (i, (&o, &is_sky)) in opacity.data().iter().zip(sky.data()).enumerate() {
        let target = if is_sky { T::zero() } else { T::one() };
        let d = o - target;
        value += d.abs();
        grad[i] = if d > T::zero() {
            T::one() / nf
        } else if d < T::zero() {
            -T::one() / nf
        } else {
            T::zero()
        };
    }
    Ok(LossGrad { value: value / nf, grad })
}

/// Loss terms of one evaluation of the composite objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub l_h: T,
    pub l_rank: T,
    pub l_sky: T,
    pub l_total: T,
    pub alpha: T,
}

/// `l_h + alpha * (l_rank + l_sky)`.
pub fn total_loss<T: Real>(l_h: T, l_rank: T, l_sky: T, alpha: T) -> LossBreakdown<T> {
    LossBreakdown {
        l_h,
        l_rank,
        l_sky,
        l_total: l_h + alpha * (l_rank + l_sky),
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use std::f64::consts::E;

    #[test]
    fn scale_invariant_reference_case() {
        let gt = Raster::new(2, 1, vec![1.0, E]).unwrap();
        let pred = Raster::new(2, 1, vec![E, 1.0]).unwrap();
        let l = scale_invariant_loss(&pred, &gt, None).unwrap();
        assert!((l.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scale_invariant_identity_and_scaling() {
        let gt = Raster::from_fn(5, 4, |u, v| 0.5 + (u * 3 + v) as f64);
        assert!(scale_invariant_loss(&gt, &gt, None).unwrap().value.abs() < 1e-15);
        let scaled = gt.map(|x| 3.7 * x);
        assert!(scale_invariant_loss(&scaled, &gt, None).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn scale_invariant_errors() {
        let a = Raster::filled(2, 2, 1.0_f64);
        let all = Mask::filled(2, 2, true);
        assert!(scale_invariant_loss(&a, &a, Some(&all)).is_err());
        let nan = Raster::new(2, 2, vec![1.0, f64::NAN, 1.0, 1.0]).unwrap();
        assert!(scale_invariant_loss(&nan, &a, None).is_err());
        assert!(scale_invariant_loss(&Raster::filled(3, 2, 1.0), &a, None).is_err());
    }

    #[test]
    fn masked_pixels_ignored() {
        let gt = Raster::<f64>::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let pred = Raster::new(3, 1, vec![1.0, 2.0, 100.0]).unwrap();
        let m = Mask::new(3, 1, vec![false, false, true]).unwrap();
        let l = scale_invariant_loss(&pred, &gt, Some(&m)).unwrap();
        assert!(l.value.abs() < 1e-15);
        assert_eq!(l.grad[2], 0.0);
    }

    fn pairs(list: &[((usize, usize), (usize, usize), i8)]) -> RankPairs {
        RankPairs {
            pairs: list.iter().map(|&(i, j, r)| RankPair { i, j, r }).collect(),
            width: 4,
            height: 1,
            seed: 0,
        }
    }

    #[test]
    fn ranking_spot_values() {
        let d = Raster::new(4, 1, vec![1.0, 1.0, 3.0, 0.0]).unwrap();
        let tie = ranking_loss(&d, &pairs(&[((0, 0), (1, 0), 0)]), RankConvention::AsWritten).unwrap();
        assert_eq!(tie.sum, 0.0);
        let plus = ranking_loss(&d, &pairs(&[((0, 0), (1, 0), 1)]), RankConvention::AsWritten).unwrap();
        assert!((plus.sum - 2f64.ln()).abs() < 1e-12);
        let minus = ranking_loss(&d, &pairs(&[((2, 0), (3, 0), -1)]), RankConvention::AsWritten).unwrap();
        assert!((minus.sum - (1.0 + 3f64.exp()).ln()).abs() < 1e-12);
        assert!((minus.sum - 3.048587).abs() < 1e-6);
        // The depth-ordered convention charges the same amount for the
        // opposite label on the same prediction.
        let flipped = ranking_loss(&d, &pairs(&[((2, 0), (3, 0), 1)]), RankConvention::DepthOrdered).unwrap();
        assert!((flipped.sum - minus.sum).abs() < 1e-15);
    }

    #[test]
    fn ranking_reports_sum_and_mean() {
        let d = Raster::<f64>::new(4, 1, vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        let p = pairs(&[((0, 0), (1, 0), 1), ((2, 0), (3, 0), 0)]);
        let l = ranking_loss(&d, &p, RankConvention::AsWritten).unwrap();
        assert!((l.mean - l.sum / 2.0).abs() < 1e-15);
        let bad = pairs(&[((4, 0), (1, 0), 1)]);
        assert!(ranking_loss(&d, &bad, RankConvention::AsWritten).is_err());
    }

    #[test]
    fn sky_spot_values() {
        let o = Raster::<f64>::new(2, 1, vec![0.8, 0.3]).unwrap();
        let m = Mask::new(2, 1, vec![false, true]).unwrap();
        assert!((sky_loss(&o, &m).unwrap().value - 0.25).abs() < 1e-12);
        let perfect = Raster::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(sky_loss(&perfect, &m).unwrap().value, 0.0);
        let all_sky = Mask::filled(2, 1, true);
        assert_eq!(sky_loss(&Raster::<f64>::zeros(2, 1), &all_sky).unwrap().value, 0.0);
        assert!(sky_loss(&Raster::<f64>::zeros(3, 1), &m).is_err());
    }

    #[test]
    fn total_loss_combinations() {
        let t = total_loss(0.3_f64, 0.2, 0.1, 1.0);
        assert!((t.l_total - 0.6).abs() < 1e-15);
        assert_eq!(total_loss(0.3, 0.2, 0.1, 0.0).l_total, 0.3);
        assert_eq!(total_loss(0.3, 0.0, 0.0, 7.5).l_total, 0.3);
    }

    #[test]
    fn rank_labels() {
        assert_eq!(rank_label(10.0, 10.1, 0.02), 0);
        assert_eq!(rank_label(5.0, 10.0, 0.02), 1);
        assert_eq!(rank_label(10.0, 5.0, 0.02), -1);
        assert_eq!(rank_label(0.0, 0.0, 0.02), 0);
    }

    #[test]
    fn pair_sampling_is_seeded_and_within_annulus() {
        let d = Raster::from_fn(128, 64, |u, v| (u + v) as f64);
        let p = PairSampling { k: 500, ..PairSampling::default() };
        let a = sample_rank_pairs(&d, &p, None, 11).unwrap();
        let b = sample_rank_pairs(&d, &p, None, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pairs, sample_rank_pairs(&d, &p, None, 12).unwrap().pairs);
        for pr in &a.pairs {
            let mut du = (pr.i.0 as f64 - pr.j.0 as f64).abs();
            du = du.min(128.0 - du);
            let dv = pr.i.1 as f64 - pr.j.1 as f64;
            let dist = (du * du + dv * dv).sqrt();
            assert!((10.0..=30.0).contains(&dist), "separation {dist}");
        }
    }

    #[test]
    fn constant_depth_gives_ties() {
        let d = Raster::filled(64, 32, 7.0_f64);
        let p = sample_rank_pairs(&d, &PairSampling { k: 100, ..PairSampling::default() }, None, 3).unwrap();
        assert!(p.pairs.iter().all(|q| q.r == 0));
    }

    #[test]
    fn excluded_pixels_never_sampled() {
        let d = Raster::from_fn(64, 32, |u, _| u as f64);
        let sky = Mask::from_fn(64, 32, |_, v| v < 16);
        let p = sample_rank_pairs(&d, &PairSampling { k: 300, ..PairSampling::default() }, Some(&sky), 5).unwrap();
        assert!(p.pairs.iter().all(|q| q.i.1 >= 16 && q.j.1 >= 16));
    }

    #[test]
    fn unsatisfiable_annulus_rejected() {
        let d = Raster::filled(8, 4, 1.0_f64);
        let p = PairSampling { k: 10, min_dist: 10.0, max_dist: 30.0, tau_rel: 0.02 };
        assert!(sample_rank_pairs(&d, &p, None, 0).is_err());
        let p = PairSampling { k: 10, min_dist: 5.0, max_dist: 2.0, tau_rel: 0.02 };
        assert!(sample_rank_pairs(&d, &p, None, 0).is_err());
        let d = Raster::filled(64, 32, 1.0_f64);
        let all_sky = Mask::filled(64, 32, true);
        assert!(sample_rank_pairs(&d, &PairSampling::default(), Some(&all_sky), 0).is_err());
    }
}
