use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{Annotation, AnnotationSet, Dims, Label, Volume3};

type Vec3 = [f64; 3];

/// Synthetic volume of tubes (vessels) and spheres (nodule-like confounders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub num_tubes: usize,
    /// Tube radius bounds in voxels.
    pub radius_range: [f64; 2],
    /// Share of the tubes drawn as helices instead of straight cylinders.
    pub helix_fraction: f64,
    pub helix_radius_range: [f64; 2],
    pub helix_pitch_range: [f64; 2],
    pub num_blobs: usize,
    pub blob_radius_range: [f64; 2],
    pub tube_intensity: f32,
    pub blob_intensity: f32,
    pub background_intensity: f32,
    pub noise_std: f64,
    /// Annotated voxels per class.
    pub annotations_per_class: usize,
    /// Share of the negative annotations taken from inside spheres.
    pub blob_negative_fraction: f64,
    /// Annotated tube and sphere voxels lie within this fraction of the
    /// radius from the centerline or center.
    pub interior_fraction: f64,
    /// Negatives keep at least this distance from any tube surface.
    pub negative_margin: f64,
    pub seed: u64,
    pub volume_id: String,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 64],
            num_tubes: 6,
            radius_range: [1.0, 3.0],
            helix_fraction: 1.0 / 3.0,
            helix_radius_range: [4.0, 8.0],
            helix_pitch_range: [12.0, 24.0],
            num_blobs: 6,
            blob_radius_range: [4.0, 8.0],
            tube_intensity: 1.0,
            blob_intensity: 1.0,
            background_intensity: 0.0,
            noise_std: 0.2,
            annotations_per_class: 100,
            blob_negative_fraction: 0.5,
            interior_fraction: 0.5,
            negative_margin: 2.0,
            seed: 0,
            volume_id: "phantom".into(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0] >= min && r[1] >= r[0] && r[1].is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} [{}, {}] must be ordered and at least {min}",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("radius_range", self.radius_range, 1.0)?;
        check_range("helix_radius_range", self.helix_radius_range, 0.0)?;
        check_range("helix_pitch_range", self.helix_pitch_range, 1.0)?;
        check_range("blob_radius_range", self.blob_radius_range, 1.0)?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_std {}", self.noise_std)));
        }
        for (name, v) in [
            ("helix_fraction", self.helix_fraction),
            ("blob_negative_fraction", self.blob_negative_fraction),
            ("interior_fraction", self.interior_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.negative_margin >= 0.0) {
            return Err(Error::InvalidArgument("negative_margin must be >= 0".into()));
        }
        let min_dim = *self.dims.iter().min().unwrap() as f64;
        let tube_extent = self.radius_range[1]
            + if self.helix_fraction > 0.0 { self.helix_radius_range[1] } else { 0.0 };
        if self.num_tubes > 0 && 2.0 * tube_extent >= min_dim {
            return Err(Error::InvalidArgument(format!(
                "tubes of extent {tube_extent} do not fit in {:?}",
                self.dims
            )));
        }
        if self.num_blobs > 0 && 2.0 * self.blob_radius_range[1] + 1.0 > min_dim {
            return Err(Error::InvalidArgument(format!(
                "spheres of radius {} do not fit in {:?}",
                self.blob_radius_range[1], self.dims
            )));
        }
        Ok(())
    }
}

/// Centerline polyline and radius of one tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub points: Vec<Vec3>,
    pub radius: f64,
    pub helix: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: Vec3,
    pub radius: f64,
}

/// A rendered phantom with its ground truth, indexed like the volume.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume3,
    pub tubes: Vec<Tube>,
    pub blobs: Vec<Blob>,
    /// Voxel centers within a tube radius of a centerline.
    pub vessel: Vec<bool>,
    /// Voxels within `interior_fraction * radius` of a centerline.
    pub vessel_core: Vec<bool>,
    /// Voxels within `radius + negative_margin` of a centerline.
    pub near_vessel: Vec<bool>,
    pub in_blob: Vec<bool>,
    /// Voxels within `interior_fraction * radius` of a sphere center.
    pub blob_core: Vec<bool>,
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn axpy(c: Vec3, t: f64, u: Vec3) -> Vec3 {
    [c[0] + t * u[0], c[1] + t * u[1], c[2] + t * u[2]]
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        if dot(v, v) > 1e-12 {
            return normalize(v);
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn segment_distance_sq(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len_sq = dot(ab, ab);
    let t = if len_sq > 0.0 {
        (dot(sub(p, a), ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = sub(p, axpy(a, t, ab));
    dot(q, q)
}

fn make_tube(rng: &mut ChaCha8Rng, spec: &PhantomSpec, helix: bool) -> Tube {
    let dims = spec.dims.map(|d| d as f64);
    let center: Vec3 = std::array::from_fn(|i| rng.random_range(0.25 * dims[i]..0.75 * dims[i]));
    let axis = random_direction(rng);
    let radius = uniform(rng, spec.radius_range);
    let half = dot(dims, dims).sqrt();
    if !helix {
        return Tube {
            points: vec![axpy(center, -half, axis), axpy(center, half, axis)],
            radius,
            helix,
        };
    }
    let helix_radius = uniform(rng, spec.helix_radius_range);
    let pitch = uniform(rng, spec.helix_pitch_range);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    // any vector not parallel to the axis spans the normal plane
    let seed_dir = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = normalize(cross(axis, seed_dir));
    let e2 = cross(axis, e1);
    let speed = (1.0 + (std::f64::consts::TAU * helix_radius / pitch).powi(2)).sqrt();
    let steps = (2.0 * half * speed / 0.5).ceil() as usize;
    let points = (0..=steps)
        .map(|i| {
            let t = -half + 2.0 * half * i as f64 / steps as f64;
            let angle = phase + std::f64::consts::TAU * t / pitch;
            let p = axpy(center, t, axis);
            let p = axpy(p, helix_radius * angle.cos(), e1);
            axpy(p, helix_radius * angle.sin(), e2)
        })
        .collect();
    Tube {
        points,
        radius,
        helix,
    }
}

// Marks voxels within `reach` of a segment, visiting only its bounding box.
fn mark_segment(marks: &mut [bool], dims: Dims, a: Vec3, b: Vec3, reach: f64) {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for i in 0..3 {
        let min = a[i].min(b[i]) - reach;
        let max = a[i].max(b[i]) + reach;
        if max < 0.0 || min > (dims[i] - 1) as f64 {
            return;
        }
        lo[i] = min.ceil().max(0.0) as usize;
        hi[i] = (max.floor() as usize).min(dims[i] - 1);
    }
    let reach_sq = reach * reach;
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let p = [x as f64, y as f64, z as f64];
                if segment_distance_sq(p, a, b) <= reach_sq {
                    marks[x + dims[0] * (y + dims[1] * z)] = true;
                }
            }
        }
    }
}

/// Draws the geometry and renders intensities plus Gaussian noise. The mask
/// covers the full volume.
pub fn render_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let n = dims.iter().product::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let helices = (spec.num_tubes as f64 * spec.helix_fraction).round() as usize;
    let tubes: Vec<Tube> = (0..spec.num_tubes)
        .map(|i| make_tube(&mut rng, spec, i < helices))
        .collect();
    let blobs: Vec<Blob> = (0..spec.num_blobs)
        .map(|_| {
            let radius = uniform(&mut rng, spec.blob_radius_range);
            let center = std::array::from_fn(|i| rng.random_range(radius..(dims[i] - 1) as f64 - radius + 1e-9));
            Blob { center, radius }
        })
        .collect();

    let core = spec.interior_fraction;
    let mut vessel = vec![false; n];
    let mut vessel_core = vec![false; n];
    let mut near_vessel = vec![false; n];
    for tube in &tubes {
        for seg in tube.points.windows(2) {
            mark_segment(&mut vessel, dims, seg[0], seg[1], tube.radius);
            mark_segment(&mut vessel_core, dims, seg[0], seg[1], core * tube.radius);
            mark_segment(&mut near_vessel, dims, seg[0], seg[1], tube.radius + spec.negative_margin);
        }
    }
    let mut in_blob = vec![false; n];
    let mut blob_core = vec![false; n];
    for blob in &blobs {
        mark_segment(&mut in_blob, dims, blob.center, blob.center, blob.radius);
        mark_segment(&mut blob_core, dims, blob.center, blob.center, core * blob.radius);
    }

    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise_std: {e}")))?;
    let data: Vec<f32> = (0..n)
        .map(|i| {
            let base = if vessel[i] {
                spec.tube_intensity
            } else if in_blob[i] {
                spec.blob_intensity
            } else {
                spec.background_intensity
            };
            if spec.noise_std > 0.0 {
                base + noise.sample(&mut rng) as f32
            } else {
                base
            }
        })
        .collect();
    Ok(Phantom {
        volume: Volume3::new(dims, data)?,
        tubes,
        blobs,
        vessel,
        vessel_core,
        near_vessel,
        in_blob,
        blob_core,
    })
}

/// Balanced annotations: tube interior voxels labeled vessel, and voxels away
/// from every tube (part from sphere interiors, the rest background) labeled
/// non-vessel.
pub fn annotate_phantom(phantom: &Phantom, spec: &PhantomSpec) -> Result<AnnotationSet> {
    let count = spec.annotations_per_class;
    if count == 0 {
        return Err(Error::InvalidArgument("annotations_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let indices = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..phantom.vessel.len()).filter(|&i| pred(i)).collect()
    };
    let positives = indices(&|i| phantom.vessel_core[i]);
    if positives.len() < count {
        return Err(Error::InvalidArgument(format!(
            "phantom has {} tube interior voxels, {count} vessel annotations requested",
            positives.len()
        )));
    }
    let blob_pool = indices(&|i| phantom.blob_core[i] && !phantom.near_vessel[i]);
    let background_pool = indices(&|i| !phantom.in_blob[i] && !phantom.near_vessel[i]);
    let from_blobs = ((count as f64 * spec.blob_negative_fraction).round() as usize).min(blob_pool.len());
    let from_background = count - from_blobs;
    if background_pool.len() < from_background {
        return Err(Error::InvalidArgument(format!(
            "only {} voxels away from tubes, {count} non-vessel annotations requested",
            blob_pool.len() + background_pool.len()
        )));
    }

    let mut draw = |pool: &[usize], k: usize| -> Vec<usize> {
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        picked.sort_unstable();
        picked
    };
    let mut labeled: Vec<(usize, Label)> = draw(&positives, count).into_iter().map(|i| (i, Label::Vessel)).collect();
    let mut negatives: Vec<usize> = draw(&blob_pool, from_blobs);
    negatives.extend(draw(&background_pool, from_background));
    negatives.sort_unstable();
    labeled.extend(negatives.into_iter().map(|i| (i, Label::NonVessel)));

    let entries = labeled
        .into_iter()
        .map(|(i, label)| {
            let [x, y, z] = phantom.volume.coords(i);
            Annotation {
                volume_id: spec.volume_id.clone(),
                x,
                y,
                z,
                label,
            }
        })
        .collect();
    AnnotationSet::new(entries)
}

pub fn gen_phantom(spec: &PhantomSpec) -> Result<(Phantom, AnnotationSet)> {
    let phantom = render_phantom(spec)?;
    let annotations = annotate_phantom(&phantom, spec)?;
    Ok((phantom, annotations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_phantom_is_constant_and_cannot_be_annotated() {
        let spec = PhantomSpec {
            dims: [16, 16, 16],
            num_tubes: 0,
            num_blobs: 0,
            noise_std: 0.0,
            background_intensity: 0.25,
            ..Default::default()
        };
        let ph = render_phantom(&spec).unwrap();
        assert!(ph.volume.data().iter().all(|&v| v == 0.25));
        let err = annotate_phantom(&ph, &spec).unwrap_err().to_string();
        assert!(err.contains("0 tube interior voxels"), "{err}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = PhantomSpec { dims: [40, 40, 40], annotations_per_class: 20, ..Default::default() };
        let (a, ann_a) = gen_phantom(&spec).unwrap();
        let (b, ann_b) = gen_phantom(&spec).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_eq!(ann_a, ann_b);
        let other = render_phantom(&PhantomSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.volume, other.volume);
    }

    #[test]
    fn geometry_must_fit() {
        let spec = PhantomSpec { dims: [20, 64, 64], ..Default::default() };
        assert!(spec.validate().is_err());
        assert!(PhantomSpec { radius_range: [0.5, 2.0], ..Default::default() }.validate().is_err());
        assert!(PhantomSpec::default().validate().is_ok());
    }

    #[test]
    fn segment_distance() {
        let d = segment_distance_sq([0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(d, 1.0);
        let d = segment_distance_sq([3.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(d, 4.0);
    }
}
