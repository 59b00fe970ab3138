//! Voxel grid geometry and the density field stored on it.
//!
//! Axes: `x` is east (raster column), `y` is north (raster row), `z` is up.
//! Storage is x-fastest, then y, then z.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A point or vector in world coordinates (meters).
pub type Vec3<T> = [T; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Meters per voxel along x, y, z.
    pub voxel_size: Vec3<T>,
    /// World coordinates of the grid's minimum corner.
    pub origin: Vec3<T>,
}

impl<T: Real> Default for GridSpec<T> {
    /// 256 x 256 x 64 grid of 1 m voxels anchored at the world origin.
    fn default() -> Self {
        Self {
            nx: 256,
            ny: 256,
            nz: 64,
            voxel_size: [T::one(); 3],
            origin: [T::zero(); 3],
        }
    }
}

impl<T: Real> GridSpec<T> {
    pub fn new(dims: [usize; 3], voxel_size: Vec3<T>, origin: Vec3<T>) -> Result<Self> {
        let spec = Self {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            voxel_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid of 1 m voxels covering a `fx` x `fy` footprint from the world
    /// origin, 64 m above ground plus one ground layer below `z = 0`.
    ///
    /// The ground layer gives street-view rays hitting the ground something
    /// opaque to stop in without raising any rendered height above zero.
    pub fn scene_grid(fx: usize, fy: usize) -> Self {
        Self {
            nx: fx,
            ny: fy,
            nz: 65,
            voxel_size: [T::one(); 3],
            origin: [T::zero(), T::zero(), -T::one()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidGrid(format!(
                "voxel counts must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if self.voxel_size.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::InvalidGrid(format!(
                "voxel sizes must be finite and positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite origin {:?}", self.origin)));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nx * (iy + self.ny * iz)
    }

    /// Inverse of [`GridSpec::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let ix = idx % self.nx;
        let iy = (idx / self.nx) % self.ny;
        let iz = idx / (self.nx * self.ny);
        [ix, iy, iz]
    }

    /// World extent of the grid along each axis (meters).
    pub fn extent(&self) -> Vec3<T> {
        [
            T::from_usize_lossy(self.nx) * self.voxel_size[0],
            T::from_usize_lossy(self.ny) * self.voxel_size[1],
            T::from_usize_lossy(self.nz) * self.voxel_size[2],
        ]
    }

    pub fn max_corner(&self) -> Vec3<T> {
        let e = self.extent();
        [self.origin[0] + e[0], self.origin[1] + e[1], self.origin[2] + e[2]]
    }

    /// Total vertical extent in meters.
    pub fn height(&self) -> T {
        self.extent()[2]
    }

    /// World z of the top face.
    pub fn top(&self) -> T {
        self.origin[2] + self.height()
    }

    pub fn min_voxel_size(&self) -> T {
        self.voxel_size[0].min(self.voxel_size[1]).min(self.voxel_size[2])
    }

    /// Continuous voxel coordinates; the center of voxel `i` maps to `i + 0.5`.
    #[inline]
    pub fn world_to_voxel(&self, p: Vec3<T>) -> Vec3<T> {
        [
            (p[0] - self.origin[0]) / self.voxel_size[0],
            (p[1] - self.origin[1]) / self.voxel_size[1],
            (p[2] - self.origin[2]) / self.voxel_size[2],
        ]
    }

    #[inline]
    pub fn voxel_to_world(&self, c: Vec3<T>) -> Vec3<T> {
        [
            self.origin[0] + c[0] * self.voxel_size[0],
            self.origin[1] + c[1] * self.voxel_size[1],
            self.origin[2] + c[2] * self.voxel_size[2],
        ]
    }

    /// World position of the center of voxel `(ix, iy, iz)`.
    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3<T> {
        let h = T::half();
        self.voxel_to_world([
            T::from_usize_lossy(ix) + h,
            T::from_usize_lossy(iy) + h,
            T::from_usize_lossy(iz) + h,
        ])
    }

    /// Closed containment test against the grid's world box.
    pub fn contains(&self, p: Vec3<T>) -> bool {
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= hi[a])
    }

    /// The eight voxels and weights that trilinearly interpolate a value at
    /// `p`, or `None` outside the grid's world extent.
    ///
    /// Between the outermost voxel centers and the grid faces the value is
    /// held constant (clamp to edge), so the interpolant is continuous over
    /// the whole extent and zero outside.
    pub fn trilinear_stencil(&self, p: Vec3<T>) -> Option<[(usize, T); 8]> {
        if !self.contains(p) {
            return None;
        }
        let c = self.world_to_voxel(p);
        let dims = self.dims();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let n = dims[a];
            let s = c[a] - T::half();
            if n == 1 || s <= T::zero() {
                lo[a] = 0;
                hi[a] = 0;
                frac[a] = T::zero();
            } else {
                let last = T::from_usize_lossy(n - 1);
                if s >= last {
                    lo[a] = n - 1;
                    hi[a] = n - 1;
                    frac[a] = T::zero();
                } else {
                    let f = s.floor();
                    let i = f.to_usize().unwrap_or(0).min(n - 2);
                    lo[a] = i;
                    hi[a] = i + 1;
                    frac[a] = s - T::from_usize_lossy(i);
                }
            }
        }
        let mut out = [(0usize, T::zero()); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let bx = k & 1;
            let by = (k >> 1) & 1;
            let bz = (k >> 2) & 1;
            let ix = if bx == 0 { lo[0] } else { hi[0] };
            let iy = if by == 0 { lo[1] } else { hi[1] };
            let iz = if bz == 0 { lo[2] } else { hi[2] };
            let wx = if bx == 0 { T::one() - frac[0] } else { frac[0] };
            let wy = if by == 0 { T::one() - frac[1] } else { frac[1] };
            let wz = if bz == 0 { T::one() - frac[2] } else { frac[2] };
            *slot = (self.index(ix, iy, iz), wx * wy * wz);
        }
        Some(out)
    }

    pub fn cast<U: Real>(&self) -> GridSpec<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        GridSpec {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            voxel_size: self.voxel_size.map(c),
            origin: self.origin.map(c),
        }
    }
}

/// Non-negative extinction coefficients (1/m) on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField<T> {
    spec: GridSpec<T>,
    sigma: Vec<T>,
}

impl<T: Real> DensityField<T> {
    pub fn new(spec: GridSpec<T>, sigma: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if sigma.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "density field needs {} values, got {}",
                spec.len(),
                sigma.len()
            )));
        }
        if let Some(i) = sigma.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("density at index {i}")));
        }
        if let Some(i) = sigma.iter().position(|s| *s < T::zero()) {
            return Err(Error::Negative(format!("density at index {i}")));
        }
        Ok(Self { spec, sigma })
    }

    pub fn zeros(spec: GridSpec<T>) -> Self {
        Self::filled(spec, T::zero())
    }

    /// Panics if `value` is negative or non-finite.
    pub fn filled(spec: GridSpec<T>, value: T) -> Self {
        assert!(value.is_finite() && value >= T::zero(), "density must be finite and >= 0");
        Self {
            sigma: vec![value; spec.len()],
            spec,
        }
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn into_sigma(self) -> Vec<T> {
        self.sigma
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> T {
        self.sigma[self.spec.index(ix, iy, iz)]
    }

    /// Panics if `value` is negative or non-finite.
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: T) {
        assert!(value.is_finite() && value >= T::zero(), "density must be finite and >= 0");
        let i = self.spec.index(ix, iy, iz);
        self.sigma[i] = value;
    }

    /// Trilinearly interpolated density at a world point; zero outside the grid.
    pub fn sample_sigma(&self, p: Vec3<T>) -> Result<T> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample point {p:?}")));
        }
        Ok(self.sample_unchecked(p))
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, p: Vec3<T>) -> T {
        match self.spec.trilinear_stencil(p) {
            Some(st) => st.iter().fold(T::zero(), |acc, &(i, w)| acc + w * self.sigma[i]),
            None => T::zero(),
        }
    }

    pub fn cast<U: Real>(&self) -> DensityField<U> {
        DensityField {
            spec: self.spec.cast(),
            sigma: self.sigma.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Multi-channel values on a grid, channel-major per voxel (`C` values for
/// voxel 0, then voxel 1, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid<T> {
    spec: GridSpec<T>,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureGrid<T> {
    pub fn new(spec: GridSpec<T>, channels: usize, data: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if channels == 0 {
            return Err(Error::InvalidArgument("feature grid needs >= 1 channel".into()));
        }
        if data.len() != channels * spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature grid needs {} values, got {}",
                channels * spec.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at index {i}")));
        }
        Ok(Self { spec, channels, data })
    }

    pub fn zeros(spec: GridSpec<T>, channels: usize) -> Self {
        Self {
            data: vec![T::zero(); channels * spec.len()],
            spec,
            channels,
        }
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// All channels of voxel `idx` (flat index).
    pub fn voxel(&self, idx: usize) -> &[T] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize, c: usize) -> T {
        self.data[self.spec.index(ix, iy, iz) * self.channels + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: [usize; 3]) -> GridSpec<f64> {
        GridSpec::new(n, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridSpec::<f64>::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridSpec::<f64>::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(GridSpec::<f64>::new([1, 1, 1], [1.0; 3], [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = GridSpec::<f64>::default();
        assert_eq!(g.dims(), [256, 256, 64]);
        assert_eq!(g.height(), 64.0);
    }

    #[test]
    fn world_to_voxel_examples() {
        let g = unit_grid([4, 4, 4]);
        assert_eq!(g.world_to_voxel([0.5, 0.5, 0.5]), [0.5, 0.5, 0.5]);
        assert_eq!(g.world_to_voxel([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let g = GridSpec::new([256, 256, 64], [1.0; 3], [-128.0, -128.0, 0.0]).unwrap();
        assert_eq!(g.world_to_voxel([0.0, 0.0, 32.0]), [128.0, 128.0, 32.0]);
    }

    #[test]
    fn uniform_field_samples_constant() {
        let f = DensityField::filled(unit_grid([5, 4, 3]), 2.0);
        for p in [[0.1, 0.1, 0.1], [2.5, 1.7, 1.2], [4.99, 3.99, 2.99]] {
            assert_eq!(f.sample_sigma(p).unwrap(), 2.0);
        }
    }

    #[test]
    fn outside_extent_is_empty() {
        let f = DensityField::filled(unit_grid([2, 2, 2]), 2.0);
        assert_eq!(f.sample_sigma([-0.01, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(f.sample_sigma([1.0, 1.0, 2.5]).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_point_is_rejected() {
        let f = DensityField::filled(unit_grid([2, 2, 2]), 2.0);
        assert!(f.sample_sigma([f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn midpoint_to_empty_neighbour_halves_density() {
        let mut f = DensityField::zeros(unit_grid([4, 4, 4]));
        f.set(1, 2, 1, 8.0);
        // Centers (1.5, 2.5, 1.5) and (2.5, 2.5, 1.5).
        assert!((f.sample_sigma([2.0, 2.5, 1.5]).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn voxel_centers_return_stored_values() {
        let spec = GridSpec::new([3, 4, 5], [0.5, 1.0, 2.0], [-1.0, 2.0, 0.0]).unwrap();
        let sigma: Vec<f64> = (0..spec.len()).map(|i| i as f64 * 0.25).collect();
        let f = DensityField::new(spec, sigma).unwrap();
        for iz in 0..5 {
            for iy in 0..4 {
                for ix in 0..3 {
                    let p = spec.voxel_center(ix, iy, iz);
                    assert!((f.sample_sigma(p).unwrap() - f.get(ix, iy, iz)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_negative_and_nan_density() {
        let spec = unit_grid([1, 1, 2]);
        assert!(matches!(DensityField::new(spec, vec![1.0, -1.0]), Err(Error::Negative(_))));
        assert!(matches!(DensityField::new(spec, vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(DensityField::new(spec, vec![1.0]).is_err());
    }

    #[test]
    fn feature_grid_layout() {
        let spec = unit_grid([2, 1, 1]);
        let g = FeatureGrid::new(spec, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.voxel(1), &[3.0, 4.0]);
        assert_eq!(g.get(1, 0, 0, 0), 3.0);
        assert!(FeatureGrid::new(spec, 0, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn world_voxel_round_trip(
            ox in -500.0..500.0f64, oy in -500.0..500.0f64, oz in -50.0..50.0f64,
            vx in 0.1..4.0f64, vy in 0.1..4.0f64, vz in 0.1..4.0f64,
            fx in 0.0..1.0f64, fy in 0.0..1.0f64, fz in 0.0..1.0f64,
        ) {
            let spec = GridSpec::new([64, 64, 16], [vx, vy, vz], [ox, oy, oz]).unwrap();
            let e = spec.extent();
            let p = [ox + fx * e[0], oy + fy * e[1], oz + fz * e[2]];
            let back = spec.voxel_to_world(spec.world_to_voxel(p));
            for a in 0..3 {
                prop_assert!((back[a] - p[a]).abs() < 1e-9);
            }
        }

        #[test]
        fn sampling_is_linear_in_storage(
            seed in 0u64..1000, a in -3.0..3.0f64, b in -3.0..3.0f64,
            px in -0.5..4.5f64, py in -0.5..3.5f64, pz in -0.5..3.5f64,
        ) {
            let spec = unit_grid([4, 3, 3]);
            let mk = |k: u64| -> Vec<f64> {
                (0..spec.len()).map(|i| ((i as u64 * 2654435761 + k * 97) % 1000) as f64 / 100.0).collect()
            };
            let f = mk(seed);
            let g = mk(seed + 17);
            let combined: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            // Linearity of interpolation holds for arbitrary storage, so evaluate
            // the stencil directly rather than building (possibly negative) fields.
            let eval = |data: &[f64]| match spec.trilinear_stencil([px, py, pz]) {
                Some(st) => st.iter().map(|&(i, w)| w * data[i]).sum::<f64>(),
                None => 0.0,
            };
            prop_assert!((eval(&combined) - (a * eval(&f) + b * eval(&g))).abs() < 1e-9);
        }

        #[test]
        fn stencil_weights_sum_to_one(px in 0.0..4.0f64, py in 0.0..3.0f64, pz in 0.0..3.0f64) {
            let spec = unit_grid([4, 3, 3]);
            let st = spec.trilinear_stencil([px, py, pz]).unwrap();
            let s: f64 = st.iter().map(|(_, w)| *w).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
