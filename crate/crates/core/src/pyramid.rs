//! Gaussian pyramids: separable 3D Gaussian smoothing followed by strided
//! subsampling.
//!
//! Borders are clamp-to-edge. Level `k` has dims `ceil(dims(k-1) / factor)`
//! and takes voxels at stride `factor` starting from index 0; masks follow the
//! same stride rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{Dims, Volume3};

/// Pyramid construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PyramidConfig {
    /// Number of levels including the original volume.
    pub scales: usize,
    /// Gaussian standard deviation, in voxels of the finer level.
    pub sigma: f64,
    /// Half-width of the 1D kernel.
    pub radius: usize,
    /// Subsampling stride between levels.
    pub factor: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            scales: 2,
            sigma: 1.0,
            radius: 2,
            factor: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid {
    levels: Vec<Volume3>,
    sigma: f64,
    factor: usize,
}

impl GaussianPyramid {
    pub fn levels(&self) -> &[Volume3] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Volume3 {
        &self.levels[k]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Maps a level-0 voxel coordinate onto level `k` (floor division by `factor^k`).
    pub fn map_coords(&self, [x, y, z]: [usize; 3], k: usize) -> [usize; 3] {
        let s = self.factor.pow(k as u32);
        [x / s, y / s, z / s]
    }
}

/// Normalized samples of `exp(-i^2 / (2 sigma^2))` for `i` in `-radius..=radius`.
pub fn gaussian_kernel_1d(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::InvalidArgument("kernel radius must be at least 1".into()));
    }
    let r = radius as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
    Z,
}

/// Applies the 1D kernel along x, then y, then z with clamp-to-edge borders.
/// Dims and mask are unchanged.
pub fn smooth_separable(vol: &Volume3, kernel: &[f64]) -> Result<Volume3> {
    if kernel.is_empty() || kernel.len() % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel length must be odd and positive, got {}",
            kernel.len()
        )));
    }
    let dims = vol.dims();
    let mut buf = vol.data().to_vec();
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        buf = filter_axis(&buf, dims, kernel, axis);
    }
    let out = Volume3::new(dims, buf)?;
    match vol.mask() {
        Some(m) => out.with_mask(m.to_vec()),
        None => Ok(out),
    }
}

fn filter_axis(src: &[f32], dims: Dims, kernel: &[f64], axis: Axis) -> Vec<f32> {
    let [nx, ny, nz] = dims;
    let r = (kernel.len() / 2) as isize;
    let (n_axis, stride) = match axis {
        Axis::X => (nx, 1),
        Axis::Y => (ny, nx),
        Axis::Z => (nz, nx * ny),
    };
    let mut out = vec![0.0f32; src.len()];
    // Each z-slab writes a disjoint region; reads of `src` are shared.
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
        for y in 0..ny {
            for x in 0..nx {
                let pos = match axis {
                    Axis::X => x,
                    Axis::Y => y,
                    Axis::Z => z,
                };
                let base = x + nx * (y + ny * z) - pos * stride;
                let mut acc = 0.0f64;
                for (t, &w) in kernel.iter().enumerate() {
                    let p = (pos as isize + t as isize - r).clamp(0, n_axis as isize - 1) as usize;
                    acc += w * src[base + p * stride] as f64;
                }
                slab[x + nx * y] = acc as f32;
            }
        }
    });
    out
}

/// Takes every `factor`-th voxel along each axis, starting at 0.
pub fn subsample(vol: &Volume3, factor: usize) -> Result<Volume3> {
    if factor == 0 {
        return Err(Error::InvalidArgument("subsampling factor must be positive".into()));
    }
    let [nx, ny, nz] = vol.dims();
    let dims = [nx.div_ceil(factor), ny.div_ceil(factor), nz.div_ceil(factor)];
    if dims.contains(&0) {
        return Err(Error::Dimension(format!("subsampled level would have dims {dims:?}")));
    }
    let out = Volume3::from_fn(dims, |x, y, z| vol.get(x * factor, y * factor, z * factor))?;
    match vol.mask() {
        Some(m) => {
            let mask = (0..out.len())
                .map(|i| {
                    let [x, y, z] = out.coords(i);
                    m[vol.index(x * factor, y * factor, z * factor)]
                })
                .collect();
            out.with_mask(mask)
        }
        None => Ok(out),
    }
}

/// Level 0 is `vol` itself; each further level is the previous one smoothed
/// and subsampled.
pub fn build_pyramid(vol: &Volume3, cfg: &PyramidConfig) -> Result<GaussianPyramid> {
    if cfg.scales == 0 {
        return Err(Error::InvalidArgument("a pyramid needs at least one level".into()));
    }
    if cfg.factor < 2 {
        return Err(Error::InvalidArgument(format!(
            "pyramid factor must be at least 2, got {}",
            cfg.factor
        )));
    }
    let kernel = gaussian_kernel_1d(cfg.sigma, cfg.radius)?;
    let mut levels = Vec::with_capacity(cfg.scales);
    levels.push(vol.clone());
    for _ in 1..cfg.scales {
        let prev = levels.last().expect("non-empty");
        let next = subsample(&smooth_separable(prev, &kernel)?, cfg.factor)?;
        levels.push(next);
    }
    Ok(GaussianPyramid {
        levels,
        sigma: cfg.sigma,
        factor: cfg.factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_sigma1_radius2() {
        // Hand evaluation: weights 1, e^-0.5, e^-2 normalized by 1 + 2e^-0.5 + 2e^-2.
        let k = gaussian_kernel_1d(1.0, 2).unwrap();
        assert_eq!(k.len(), 5);
        let norm = 1.0 + 2.0 * (-0.5f64).exp() + 2.0 * (-2.0f64).exp();
        assert!((k[2] - 1.0 / norm).abs() < 1e-15);
        assert!((k[2] - 0.4026).abs() < 5e-5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
    }

    #[test]
    fn kernel_flat_limit_and_errors() {
        let k = gaussian_kernel_1d(1e6, 1).unwrap();
        for c in k {
            assert!((c - 1.0 / 3.0).abs() < 1e-9);
        }
        assert!(gaussian_kernel_1d(0.0, 2).is_err());
        assert!(gaussian_kernel_1d(-1.0, 2).is_err());
        assert!(gaussian_kernel_1d(1.0, 0).is_err());
    }

    #[test]
    fn smoothing_keeps_constants_and_identity() {
        let v = Volume3::filled([5, 4, 3], 2.5).unwrap();
        let k = gaussian_kernel_1d(1.3, 2).unwrap();
        let s = smooth_separable(&v, &k).unwrap();
        assert!(s.data().iter().all(|&x| (x - 2.5).abs() < 1e-6));

        let r = Volume3::from_fn([4, 5, 6], |x, y, z| (x * 7 + y * 3 + z) as f32 % 5.0).unwrap();
        assert_eq!(smooth_separable(&r, &[1.0]).unwrap(), r);
        assert!(smooth_separable(&r, &[]).is_err());
        assert!(smooth_separable(&r, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn impulse_response_is_outer_product() {
        let k = gaussian_kernel_1d(1.0, 2).unwrap();
        let v = Volume3::from_fn([7, 7, 7], |x, y, z| if (x, y, z) == (3, 3, 3) { 1.0 } else { 0.0 }).unwrap();
        let s = smooth_separable(&v, &k).unwrap();
        for z in 0..7 {
            for y in 0..7 {
                for x in 0..7 {
                    let w = |i: usize| {
                        let d = i as i64 - 3;
                        if d.abs() <= 2 { k[(d + 2) as usize] } else { 0.0 }
                    };
                    let expected = w(x) * w(y) * w(z);
                    assert!((s.get(x, y, z) as f64 - expected).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn pyramid_dims_and_levels() {
        let v = Volume3::from_fn([9, 8, 5], |x, y, z| (x + y + z) as f32).unwrap();
        let cfg = PyramidConfig { scales: 3, ..Default::default() };
        let p = build_pyramid(&v, &cfg).unwrap();
        assert_eq!(p.level(0), &v);
        assert_eq!(p.level(1).dims(), [5, 4, 3]);
        assert_eq!(p.level(2).dims(), [3, 2, 2]);
        assert_eq!(p.map_coords([8, 7, 4], 2), [2, 1, 1]);

        let one = build_pyramid(&v, &PyramidConfig { scales: 1, ..Default::default() }).unwrap();
        assert_eq!(one.levels(), &[v.clone()]);
        assert!(build_pyramid(&v, &PyramidConfig { scales: 0, ..Default::default() }).is_err());
        assert!(build_pyramid(&v, &PyramidConfig { factor: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn two_scale_dims_of_ct_cube() {
        // Dims only: level dims follow ceil(n / factor) with the default config.
        let n = 512usize;
        assert_eq!(n.div_ceil(PyramidConfig::default().factor), 256);
        let v = Volume3::filled([16, 16, 16], 1.0).unwrap();
        let p = build_pyramid(&v, &PyramidConfig::default()).unwrap();
        assert_eq!(p.level(1).dims(), [8, 8, 8]);
    }

    #[test]
    fn masks_follow_stride() {
        let v = Volume3::filled([4, 4, 4], 1.0).unwrap();
        let mask: Vec<bool> = (0..64).map(|i| i % 2 == 0).collect();
        let v = v.with_mask(mask).unwrap();
        let p = build_pyramid(&v, &PyramidConfig::default()).unwrap();
        let m1 = p.level(1).mask().unwrap();
        // Every level-1 voxel samples an even x in level 0, which is masked in.
        assert!(m1.iter().all(|&b| b));
        assert_eq!(m1.len(), 8);
    }

    fn dense_reference(v: &Volume3, k: &[f64]) -> Vec<f64> {
        let [nx, ny, nz] = v.dims();
        let r = (k.len() / 2) as i64;
        let clamp = |p: i64, n: usize| p.clamp(0, n as i64 - 1) as usize;
        let mut out = Vec::with_capacity(v.len());
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    let mut acc = 0.0;
                    for c in -r..=r {
                        for b in -r..=r {
                            for a in -r..=r {
                                let w = k[(a + r) as usize] * k[(b + r) as usize] * k[(c + r) as usize];
                                acc += w * v.get(clamp(x + a, nx), clamp(y + b, ny), clamp(z + c, nz)) as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn separable_equals_dense(
            nx in 1usize..=9, ny in 1usize..=9, nz in 1usize..=9,
            sigma in 0.3f64..3.0, radius in 1usize..=3, seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v = Volume3::from_fn([nx, ny, nz], |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap();
            let k = gaussian_kernel_1d(sigma, radius).unwrap();
            let s = smooth_separable(&v, &k).unwrap();
            let reference = dense_reference(&v, &k);
            let scale = reference.iter().fold(1e-12f64, |m, x| m.max(x.abs()));
            for (a, b) in s.data().iter().zip(&reference) {
                prop_assert!((*a as f64 - b).abs() <= 1e-5 * scale);
            }
            let (lo, hi) = v.min_max();
            let (slo, shi) = s.min_max();
            prop_assert!(slo >= lo - 1e-6 && shi <= hi + 1e-6);
        }

        #[test]
        fn constants_survive_every_level(c in -100.0f32..100.0, n in 1usize..12) {
            let v = Volume3::filled([n, n + 1, n + 2], c).unwrap();
            let p = build_pyramid(&v, &PyramidConfig { scales: 3, ..Default::default() }).unwrap();
            for level in p.levels() {
                for &x in level.data() {
                    prop_assert!((x - c).abs() <= 1e-6 * c.abs().max(1.0));
                }
            }
        }
    }
}
