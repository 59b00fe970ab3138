//! Density-field reconstruction of overhead height maps from street-level
//! panoramas.
//!
//! A voxel grid of non-negative densities is rendered both from above, giving
//! a height map, and from a street-level camera, giving an equirectangular
//! depth and opacity panorama. The [`optim`] module fits the grid to a height
//! map supervised with a scale-invariant loss plus optional panorama depth
//! ranking and sky terms.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root pin the common choices.

pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod pano;
pub mod raster;
pub mod render;
pub mod scalar;
pub mod scene;

pub use error::{Error, Result};
pub use grid::{DensityField, FeatureGrid, GridSpec, Vec3};
pub use loss::{LossBreakdown, PairSampling, RankConvention, RankPair, RankPairs};
pub use metrics::{MetricReport, SsimConfig};
pub use optim::{fit_field, FitResult, OptimConfig, TraceRow};
pub use pano::CutoutSpec;
pub use raster::{DepthPanorama, HeightMap, Mask, OpacityPanorama, PanoRaster, Raster, SkyMask};
pub use render::{Ray, RaySamples, RenderResult};
pub use scalar::Real;
pub use scene::{SceneBox, SceneSpec};

pub type GridSpec64 = GridSpec<f64>;
pub type GridSpec32 = GridSpec<f32>;
pub type DensityField64 = DensityField<f64>;
pub type DensityField32 = DensityField<f32>;
pub type Raster64 = Raster<f64>;
pub type Raster32 = Raster<f32>;
pub type HeightMap64 = HeightMap<f64>;
pub type HeightMap32 = HeightMap<f32>;
pub type Ray64 = Ray<f64>;
pub type Ray32 = Ray<f32>;
