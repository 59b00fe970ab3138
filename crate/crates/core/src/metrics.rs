//! Height-map accuracy metrics: MAE, RMSE and SSIM.

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Real;

fn check<T: Real>(pred: &Raster<T>, gt: &Raster<T>) -> Result<()> {
    pred.check_same_shape(gt, "metric inputs")
}

pub fn mae<T: Real>(pred: &Raster<T>, gt: &Raster<T>) -> Result<T> {
    check(pred, gt)?;
    let s: T = pred.data().iter().zip(gt.data()).map(|(p, g)| (*p - *g).abs()).sum();
    Ok(s / T::from_usize_lossy(pred.data().len()))
}

pub fn rmse<T: Real>(pred: &Raster<T>, gt: &Raster<T>) -> Result<T> {
    check(pred, gt)?;
    let s: T = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (*p - *g) * (*p - *g))
        .sum();
    Ok((s / T::from_usize_lossy(pred.data().len())).sqrt())
}

/// MAE restricted to pixels where `select` is true.
pub fn masked_mae<T: Real>(pred: &Raster<T>, gt: &Raster<T>, select: &crate::raster::Mask) -> Result<T> {
    check(pred, gt)?;
    select.check_matches(pred, "masked MAE")?;
    let mut s = T::zero();
    let mut n = 0usize;
    for ((p, g), m) in pred.data().iter().zip(gt.data()).zip(select.data()) {
        if *m {
            s += (*p - *g).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("masked MAE over zero pixels".into()));
    }
    Ok(s / T::from_usize_lossy(n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; when `None` it is taken from the reference image.
    pub data_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: None,
        }
    }
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Dynamic range used when none is configured: the reference's span,
/// floored at 1e-6.
pub fn default_data_range<T: Real>(gt: &Raster<T>) -> f64 {
    let (lo, hi) = gt
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.to_f64_lossy();
            (lo.min(v), hi.max(v))
        });
    (hi - lo).max(1e-6)
}

/// Mean SSIM over every fully-contained window position (no padding).
///
/// `pred` is the first image and `gt` the reference; the two are
/// interchangeable when `data_range` is fixed.
pub fn ssim<T: Real>(pred: &Raster<T>, gt: &Raster<T>, cfg: &SsimConfig) -> Result<T> {
    check(pred, gt)?;
    let (w, h, win) = (pred.width(), pred.height(), cfg.window);
    if win == 0 || w < win || h < win {
        return Err(Error::InvalidArgument(format!(
            "SSIM window {win} does not fit a {w}x{h} image"
        )));
    }
    let l = cfg.data_range.unwrap_or_else(|| default_data_range(gt));
    let c1 = T::lit((cfg.k1 * l).powi(2));
    let c2 = T::lit((cfg.k2 * l).powi(2));
    let taps: Vec<T> = gaussian_taps(win, cfg.sigma).into_iter().map(T::lit).collect();

    let x = pred.data();
    let y = gt.data();
    let products: [Vec<T>; 5] = [
        x.to_vec(),
        y.to_vec(),
        x.iter().map(|v| *v * *v).collect(),
        y.iter().map(|v| *v * *v).collect(),
        x.iter().zip(y).map(|(a, b)| *a * *b).collect(),
    ];
    let (ow, oh) = (w - win + 1, h - win + 1);
    let filtered: Vec<Vec<T>> = products
        .iter()
        .map(|img| separable_valid(img, w, h, &taps))
        .collect();
    let mut total = T::zero();
    for k in 0..ow * oh {
        let mx = filtered[0][k];
        let my = filtered[1][k];
        let vx = filtered[2][k] - mx * mx;
        let vy = filtered[3][k] - my * my;
        let cxy = filtered[4][k] - mx * my;
        let two = T::two();
        total += ((two * mx * my + c1) * (two * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / T::from_usize_lossy(ow * oh))
}

fn separable_valid<T: Real>(img: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let win = taps.len();
    let ow = w - win + 1;
    let oh = h - win + 1;
    let mut rows = vec![T::zero(); ow * h];
    for v in 0..h {
        for u in 0..ow {
            let mut s = T::zero();
            for (k, t) in taps.iter().enumerate() {
                s += *t * img[v * w + u + k];
            }
            rows[v * ow + u] = s;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for v in 0..oh {
        for u in 0..ow {
            let mut s = T::zero();
            for (k, t) in taps.iter().enumerate() {
                s += *t * rows[(v + k) * ow + u];
            }
            out[v * ow + u] = s;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub n: usize,
    pub ssim_window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl MetricReport {
    pub fn evaluate<T: Real>(pred: &Raster<T>, gt: &Raster<T>, cfg: &SsimConfig) -> Result<Self> {
        let data_range = cfg.data_range.unwrap_or_else(|| default_data_range(gt));
        let fixed = SsimConfig {
            data_range: Some(data_range),
            ..*cfg
        };
        Ok(Self {
            mae: mae(pred, gt)?.to_f64_lossy(),
            rmse: rmse(pred, gt)?.to_f64_lossy(),
            ssim: ssim(pred, gt, &fixed)?.to_f64_lossy(),
            n: pred.len(),
            ssim_window: cfg.window,
            k1: cfg.k1,
            k2: cfg.k2,
            data_range,
        })
    }

    pub const CSV_HEADER: &'static str = "mae,rmse,ssim,n,ssim_window,k1,k2,data_range";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.mae, self.rmse, self.ssim, self.n, self.ssim_window, self.k1, self.k2, self.data_range
        )
    }

    /// Aligned text table with one row per named result.
    pub fn table(rows: &[(&str, MetricReport)]) -> String {
        let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:<name_w$}  {:>10}  {:>10}  {:>10}\n", "Method", "MAE↓", "RMSE↓", "SSIM↑");
        for (name, r) in rows {
            s.push_str(&format!(
                "{:<name_w$}  {:>10.4}  {:>10.4}  {:>10.4}\n",
                name, r.mae, r.rmse, r.ssim
            ));
        }
        s
    }
}
