//! Fitting a density field to height and street-view supervision by
//! gradient descent through the renderer.
//!
//! The field is parameterized as `sigma = softplus(theta)` so it stays
//! positive for any finite `theta`; Adam updates `theta` directly.

use crate::error::{Error, Result};
use crate::grid::{DensityField, FeatureGrid, GridSpec, Vec3};
use crate::loss::{
    ranking_loss, sample_rank_pairs, scale_invariant_loss, sky_loss, total_loss, LossBreakdown, PairSampling,
    RankConvention, RankPairs,
};
use crate::raster::{DepthPanorama, HeightMap, Mask, SkyMask};
use crate::render::{backprop_depth_pano, backprop_height_map, default_step, render_depth_pano, render_topdown_depths};
use crate::scalar::{sigmoid, softplus, softplus_inv, Real};

/// Density that an all-zero lifted grid initializes to.
pub const MIN_INIT_SIGMA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    /// Weight of the street-view terms.
    pub alpha: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Learning rate multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Base seed; epoch `e` samples rank pairs with `seed + e`.
    pub seed: u64,
    /// Ray-marching step; half the smallest voxel edge when `None`.
    pub step: Option<f64>,
    pub pairs: PairSampling,
    pub rank_convention: RankConvention,
    /// Uniform starting density when no lifted grid is supplied.
    pub init_sigma: f64,
    /// Multiplier applied to lifted values in [`init_from_lift`].
    pub init_gain: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lr: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            lr_decay: 0.1,
            lr_decay_every: 100,
            seed: 0,
            step: None,
            pairs: PairSampling::default(),
            rank_convention: RankConvention::DepthOrdered,
            init_sigma: 1e-3,
            init_gain: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.epochs == 0 {
            return bad("need at least one epoch".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad(format!("initial density must be > 0, got {}", self.init_sigma));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sampling step must be > 0, got {s}"));
            }
        }
        Ok(())
    }

    /// Step-decayed learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = epoch.checked_div(self.lr_decay_every).unwrap_or(0);
        self.lr * self.lr_decay.powi(k as i32)
    }
}

/// One row of the optimization trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    /// 1-based epoch.
    pub epoch: usize,
    pub loss: LossBreakdown<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub spec: GridSpec<T>,
    pub theta: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Number of Adam updates applied.
    pub t: u64,
    pub trace: Vec<TraceRow>,
}

impl<T: Real> OptimState<T> {
    pub fn from_theta(spec: GridSpec<T>, theta: Vec<T>) -> Result<Self> {
        if theta.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter grid needs {} values, got {}",
                spec.len(),
                theta.len()
            )));
        }
        let n = theta.len();
        Ok(Self {
            spec,
            theta,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            trace: Vec::new(),
        })
    }

    pub fn uniform(spec: GridSpec<T>, sigma: T) -> Self {
        Self::from_theta(spec, vec![softplus_inv(sigma); spec.len()]).expect("matching length")
    }

    pub fn field(&self) -> DensityField<T> {
        field_from_theta(&self.spec, &self.theta)
    }
}

pub fn field_from_theta<T: Real>(spec: &GridSpec<T>, theta: &[T]) -> DensityField<T> {
    DensityField::new(*spec, theta.iter().map(|&t| softplus(t)).collect()).expect("softplus is finite and >= 0")
}

/// Seeds the parameters from a single-channel lifted grid:
/// `theta = softplus^-1(max(gain * value, 1e-6))`.
pub fn init_from_lift<T: Real>(lifted: &FeatureGrid<T>, gain: T) -> Result<OptimState<T>> {
    if lifted.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "initialization needs a single-channel grid, got {} channels",
            lifted.channels()
        )));
    }
    let floor = T::lit(MIN_INIT_SIGMA);
    let theta = lifted.data().iter().map(|&x| softplus_inv((gain * x).max(floor))).collect();
    OptimState::from_theta(*lifted.spec(), theta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn from_config(cfg: &OptimConfig, lr: f64) -> Self {
        Self {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// One bias-corrected Adam update of `state.theta`.
pub fn adam_step<T: Real>(state: &mut OptimState<T>, grad: &[T], p: &AdamParams) -> Result<()> {
    if grad.len() != state.theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            state.theta.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    state.t += 1;
    let (b1, b2) = (T::lit(p.beta1), T::lit(p.beta2));
    let c1 = T::one() - T::lit(p.beta1.powi(state.t as i32));
    let c2 = T::one() - T::lit(p.beta2.powi(state.t as i32));
    let (lr, eps) = (T::lit(p.lr), T::lit(p.eps));
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        state.theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Where street-view rank labels come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PairSource<T> {
    /// A fixed pair list used every epoch.
    Fixed(RankPairs),
    /// A reference depth panorama; pairs are redrawn each epoch.
    Oracle(DepthPanorama<T>),
}

/// Street-view supervision for the panorama rendered from `cam`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreetSupervision<T> {
    pub cam: Vec3<T>,
    pub pairs: PairSource<T>,
    pub sky: SkyMask,
}

impl<T: Real> StreetSupervision<T> {
    pub fn pano_size(&self) -> (usize, usize) {
        (self.sky.width(), self.sky.height())
    }

    /// Rank pairs for a given epoch.
    pub fn pairs_for(&self, params: &PairSampling, seed: u64) -> Result<RankPairs> {
        match &self.pairs {
            PairSource::Fixed(p) => Ok(p.clone()),
            PairSource::Oracle(depth) => sample_rank_pairs(depth, params, Some(&self.sky), seed),
        }
    }
}

/// The composite objective as a function of the raw parameters.
pub struct Objective<'a, T> {
    pub spec: GridSpec<T>,
    pub gt: &'a HeightMap<T>,
    /// Pixels excluded from the height loss.
    pub height_mask: Option<&'a Mask>,
    pub street: Option<&'a StreetSupervision<T>>,
    pub alpha: T,
    pub step: T,
    pub convention: RankConvention,
}

impl<T: Real> Objective<'_, T> {
    /// Loss terms at `theta`, and `dL/d theta` when `with_grad` is set.
    pub fn evaluate(&self, theta: &[T], pairs: Option<&RankPairs>, with_grad: bool) -> Result<(LossBreakdown<T>, Option<Vec<T>>)> {
        let field = field_from_theta(&self.spec, theta);
        let top = render_topdown_depths(&field, self.step);
        let lh = scale_invariant_loss(&top.heights, self.gt, self.height_mask)?;
        let mut grad_sigma = with_grad.then(|| vec![T::zero(); theta.len()]);
        if let Some(g) = grad_sigma.as_mut() {
            backprop_height_map(&field, &top, &lh.grad, self.step, g);
        }
        let (mut l_rank, mut l_sky) = (T::zero(), T::zero());
        if let Some(street) = self.street {
            let (w, h) = street.pano_size();
            let (depth, opacity) = render_depth_pano(&field, street.cam, w, h, self.step)?;
            let sky = sky_loss(&opacity, &street.sky)?;
            l_sky = sky.value;
            let rank = match pairs {
                Some(p) => {
                    if p.width != w || p.height != h {
                        return Err(Error::ShapeMismatch(format!(
                            "rank pairs drawn on {}x{} but panorama is {w}x{h}",
                            p.width, p.height
                        )));
                    }
                    let r = ranking_loss(&depth, p, self.convention)?;
                    l_rank = r.mean;
                    Some(r.grad)
                }
                None => None,
            };
            if let (Some(g), true) = (grad_sigma.as_mut(), self.alpha != T::zero()) {
                let d_depth: Vec<T> = match rank {
                    Some(rg) => rg.into_iter().map(|v| v * self.alpha).collect(),
                    None => vec![T::zero(); w * h],
                };
                let d_opacity: Vec<T> = sky.grad.iter().map(|v| *v * self.alpha).collect();
                backprop_depth_pano(&field, street.cam, w, h, self.step, &d_depth, &d_opacity, g);
            }
        }
        let loss = total_loss(lh.value, l_rank, l_sky, self.alpha);
        let grad_theta = grad_sigma.map(|gs| gs.iter().zip(theta).map(|(g, t)| *g * sigmoid(*t)).collect());
        Ok((loss, grad_theta))
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub field: DensityField<T>,
    pub state: OptimState<T>,
}

impl<T: Real> FitResult<T> {
    pub fn trace(&self) -> &[TraceRow] {
        &self.state.trace
    }
}

/// Fits a density field on `spec` to the reference height map, optionally
/// with street-view supervision, starting from `init` when given.
///
/// Each epoch renders, evaluates the composite loss, backpropagates through
/// both renderers and takes one Adam step. Without street supervision (or
/// with `alpha = 0`) only the height term drives the fit.
pub fn fit_field<T: Real>(
    spec: &GridSpec<T>,
    gt: &HeightMap<T>,
    height_mask: Option<&Mask>,
    street: Option<&StreetSupervision<T>>,
    init: Option<&FeatureGrid<T>>,
    cfg: &OptimConfig,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    spec.validate()?;
    if gt.width() != spec.nx || gt.height() != spec.ny {
        return Err(Error::ShapeMismatch(format!(
            "height map {}x{} does not match grid footprint {}x{}",
            gt.width(),
            gt.height(),
            spec.nx,
            spec.ny
        )));
    }
    let mut state = match init {
        Some(lifted) => {
            if lifted.spec() != spec {
                return Err(Error::ShapeMismatch("initial grid does not match the fit grid".into()));
            }
            init_from_lift(lifted, T::lit(cfg.init_gain))?
        }
        None => OptimState::uniform(*spec, T::lit(cfg.init_sigma)),
    };
    let objective = Objective {
        spec: *spec,
        gt,
        height_mask,
        street,
        alpha: T::lit(cfg.alpha),
        step: cfg.step.map(T::lit).unwrap_or_else(|| default_step(spec)),
        convention: cfg.rank_convention,
    };
    for epoch in 0..cfg.epochs {
        let pairs = match street {
            Some(s) => Some(s.pairs_for(&cfg.pairs, cfg.seed.wrapping_add(epoch as u64))?),
            None => None,
        };
        let (loss, grad) = objective.evaluate(&state.theta, pairs.as_ref(), true)?;
        let row = TraceRow {
            epoch: epoch + 1,
            loss: LossBreakdown {
                l_h: loss.l_h.to_f64_lossy(),
                l_rank: loss.l_rank.to_f64_lossy(),
                l_sky: loss.l_sky.to_f64_lossy(),
                l_total: loss.l_total.to_f64_lossy(),
                alpha: loss.alpha.to_f64_lossy(),
            },
            lr: cfg.lr_at(epoch),
        };
        let grad = grad.expect("gradient requested");
        if !row.loss.l_total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                reason: format!("loss {}", row.loss.l_total),
                trace: state.trace,
            });
        }
        adam_step(&mut state, &grad, &AdamParams::from_config(cfg, row.lr))?;
        state.trace.push(row);
    }
    Ok(FitResult {
        field: state.field(),
        state,
    })
}
