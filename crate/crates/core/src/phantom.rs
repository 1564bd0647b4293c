//! Synthetic whole-body phantoms: raw organ labels, tumor ground truth, an
//! intensity image and degraded ensemble confidence maps.
//!
//! Organs live in normalized coordinates `(u, v, w)` in `[0, 1]` along the
//! AP, cranio-caudal and lateral axes, so a layout scales with the grid.
//! Lungs, spine and hips are columns with a flat cranio-caudal extent, which
//! makes the expected body-region landmarks exact functions of the config.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anatomy::{AnatomicalRegion, BodyRegionPartition};
use crate::error::{Error, Result};
use crate::io::{create_dir_all, read_json, write_json};
use crate::volume::{
    write_volume, ConfidenceVolume, ImageVolume, LabelDictionary, LabelVolume, VolumeGeometry,
};

const STREAM_TUMORS: u64 = 0;
const STREAM_IMAGE: u64 = 1;
const STREAM_FP: u64 = 2;
const STREAM_MEMBER_BASE: u64 = 100;

const BODY_RADIUS: f64 = 0.46;
const TISSUE_INTENSITY: f32 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Cranio-caudal extent of the lungs as fractions of the axis.
    pub lung_span: [f64; 2],
    pub spine_span: [f64; 2],
    pub hip_span: [f64; 2],
    /// Inclusive `[min, max]` tumor count per region.
    pub tumors_per_region: BTreeMap<AnatomicalRegion, [usize; 2]>,
    pub tumor_radius_mm: [f64; 2],
    pub tumor_intensity: f64,
    pub image_noise_sigma: f64,
    pub confidence_noise_sigma: f64,
    /// Gaussian sigma in mm applied to the ground truth; 0 disables blur.
    pub blur_radius_mm: f64,
    pub ensemble_size: usize,
    pub fp_blob_count: usize,
    pub fp_radius_mm: [f64; 2],
    pub fp_confidence: f64,
    pub fp_stripe_amplitude: f64,
    /// Minimum Chebyshev gap in voxels between any two placed objects.
    pub gap_voxels: usize,
    pub max_retries: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: [64, 256, 128],
            spacing: [7.8, 0.625, 0.625],
            lung_span: [0.62, 0.85],
            spine_span: [0.40, 0.92],
            hip_span: [0.30, 0.40],
            tumors_per_region: AnatomicalRegion::ALL.into_iter().map(|r| (r, [1, 2])).collect(),
            tumor_radius_mm: [6.0, 12.0],
            tumor_intensity: 300.0,
            image_noise_sigma: 5.0,
            confidence_noise_sigma: 0.1,
            blur_radius_mm: 1.0,
            ensemble_size: 3,
            fp_blob_count: 5,
            fp_radius_mm: [4.0, 7.0],
            fp_confidence: 0.9,
            fp_stripe_amplitude: 150.0,
            gap_voxels: 3,
            max_retries: 500,
        }
    }
}

impl PhantomConfig {
    /// Noiseless settings: the confidence maps equal the ground truth.
    pub fn noiseless(mut self) -> Self {
        self.confidence_noise_sigma = 0.0;
        self.blur_radius_mm = 0.0;
        self.fp_blob_count = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Phantom(m));
        if self.dims.iter().any(|&d| d < 8) {
            return bad(format!("dims must be at least 8 per axis, got {:?}", self.dims));
        }
        VolumeGeometry::canonical(self.dims, self.spacing)?;
        let [h0, h1] = self.hip_span;
        let [s0, s1] = self.spine_span;
        let [l0, l1] = self.lung_span;
        if !(0.0 < h0 && h0 < h1 && h1 <= s0 && s0 < l0 && l0 < l1 && l1 < s1 && s1 <= 1.0) {
            return bad("spans must satisfy 0 < hip < spine start < lungs < spine end <= 1".into());
        }
        let ranges = [self.tumor_radius_mm, self.fp_radius_mm];
        if ranges.iter().any(|r| !(r[0] > 0.0 && r[0] <= r[1])) {
            return bad("radius ranges must be positive and ordered".into());
        }
        if self.tumors_per_region.values().any(|c| c[0] > c[1]) {
            return bad("tumor count ranges must be ordered".into());
        }
        let sigmas = [self.image_noise_sigma, self.confidence_noise_sigma, self.blur_radius_mm];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise and blur parameters must be finite and non-negative".into());
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.fp_confidence) {
            return bad("fp_confidence must lie in [0, 1]".into());
        }
        // Largest semi-axis of a tumor against the body half-extents.
        let largest = self.tumor_radius_mm[1] * MAX_AXIS_SCALE;
        for (axis, name) in [(0, "anterior-posterior"), (2, "lateral")] {
            let half = BODY_RADIUS * self.dims[axis] as f64 * self.spacing[axis];
            if largest >= half {
                return bad(format!(
                    "tumor radius {largest:.2} mm exceeds the {name} body half-extent {half:.2} mm"
                ));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<VolumeGeometry> {
        VolumeGeometry::canonical(self.dims, self.spacing)
    }

    /// Lung top/bottom and hip bottom slices implied by the layout.
    pub fn expected_partition(&self) -> Result<BodyRegionPartition> {
        let ny = self.dims[1];
        let (l0, l1) = span_slices(self.lung_span, ny);
        let (h0, _) = span_slices(self.hip_span, ny);
        BodyRegionPartition::new(l1 as i64, l0 as i64, h0 as i64)
    }
}

/// Tumor semi-axes are drawn from `radius * [1 / MAX_AXIS_SCALE, MAX_AXIS_SCALE]`.
const MAX_AXIS_SCALE: f64 = 1.25;

/// Inclusive slice range whose centers fall within the fractional span.
fn span_slices(span: [f64; 2], n: usize) -> (usize, usize) {
    let lo = (span[0] * n as f64 - 0.5).ceil().max(0.0) as usize;
    let hi = ((span[1] * n as f64 - 0.5).floor().max(0.0) as usize).min(n - 1);
    (lo, hi)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Center and semi-axes in normalized coordinates.
    Ellipsoid { c: [f64; 3], r: [f64; 3] },
    /// Elliptic column over a fractional cranio-caudal span.
    Column { span: [f64; 2], c: [f64; 2], r: [f64; 2] },
}

struct Organ {
    name: &'static str,
    shape: Shape,
    intensity: f32,
    /// Tumors may not be placed inside.
    excludes_tumors: bool,
}

fn organ(name: &'static str, shape: Shape, intensity: f32, excludes_tumors: bool) -> Organ {
    Organ {
        name,
        shape,
        intensity,
        excludes_tumors,
    }
}

fn column(span: [f64; 2], c: [f64; 2], r: [f64; 2]) -> Shape {
    Shape::Column { span, c, r }
}

fn ellipsoid(c: [f64; 3], r: [f64; 3]) -> Shape {
    Shape::Ellipsoid { c, r }
}

/// Paint order: later organs overwrite earlier ones.
fn layout(cfg: &PhantomConfig) -> Vec<Organ> {
    let [h0, h1] = cfg.hip_span;
    let [s0, s1] = cfg.spine_span;
    let [l0, l1] = cfg.lung_span;
    let lh = l1 - l0;
    let mut organs = vec![
        organ("autochthon_left", column([s0, l1], [0.1, 0.62], [0.05, 0.06]), 70.0, false),
        organ("autochthon_right", column([s0, l1], [0.1, 0.38], [0.05, 0.06]), 70.0, false),
        organ("gluteus_maximus_left", column([h0 - 0.02, h1], [0.12, 0.75], [0.07, 0.1]), 70.0, false),
        organ("gluteus_maximus_right", column([h0 - 0.02, h1], [0.12, 0.25], [0.07, 0.1]), 70.0, false),
        organ("iliopsoas_left", column([h0, h1 + 0.05], [0.35, 0.6], [0.05, 0.05]), 70.0, false),
        organ("iliopsoas_right", column([h0, h1 + 0.05], [0.35, 0.4], [0.05, 0.05]), 70.0, false),
        organ("aorta", column([h1, l1 - 0.05], [0.3, 0.56], [0.03, 0.03]), 95.0, false),
        organ("gallbladder", ellipsoid([0.72, l0 - 0.1, 0.32], [0.05, 0.02, 0.05]), 95.0, false),
        organ("pancreas", ellipsoid([0.45, l0 - 0.1, 0.58], [0.05, 0.015, 0.12]), 95.0, false),
        organ("femur_left", column([0.02, h0 + 0.02], [0.45, 0.75], [0.06, 0.05]), 55.0, true),
        organ("femur_right", column([0.02, h0 + 0.02], [0.45, 0.25], [0.06, 0.05]), 55.0, true),
        organ("hip_left", column(cfg.hip_span, [0.42, 0.78], [0.14, 0.1]), 55.0, true),
        organ("hip_right", column(cfg.hip_span, [0.42, 0.22], [0.14, 0.1]), 55.0, true),
        organ("sacrum", column([h0 + 0.03, s0], [0.15, 0.5], [0.07, 0.09]), 50.0, false),
        organ("spine", column(cfg.spine_span, [0.14, 0.5], [0.06, 0.06]), 50.0, false),
        organ("urinary_bladder", ellipsoid([0.68, h0 + 0.04, 0.5], [0.12, 0.03, 0.1]), 60.0, true),
        organ("kidney_left", ellipsoid([0.3, h1 + 0.08, 0.7], [0.08, 0.04, 0.07]), 110.0, true),
        organ("kidney_right", ellipsoid([0.3, h1 + 0.08, 0.3], [0.08, 0.04, 0.07]), 110.0, true),
        organ("liver", ellipsoid([0.55, l0 - 0.06, 0.3], [0.25, 0.06, 0.14]), 80.0, true),
        organ("stomach", ellipsoid([0.62, l0 - 0.05, 0.7], [0.14, 0.04, 0.1]), 90.0, true),
        organ("spleen", ellipsoid([0.35, l0 - 0.04, 0.82], [0.1, 0.03, 0.06]), 85.0, true),
        organ("lung_left", column(cfg.lung_span, [0.5, 0.7], [0.28, 0.14]), 20.0, true),
        organ("lung_right", column(cfg.lung_span, [0.5, 0.3], [0.28, 0.14]), 20.0, true),
        organ("heart", ellipsoid([0.66, l0 + 0.25 * lh, 0.5], [0.16, 0.22 * lh, 0.1]), 120.0, true),
    ];
    // Keep the spine inside the volume even when s1 == 1.
    if s1 >= 1.0 {
        if let Some(o) = organs.iter_mut().find(|o| o.name == "spine") {
            o.shape = column([s0, 1.0], [0.14, 0.5], [0.06, 0.06]);
        }
    }
    organs
}

struct Grid {
    dims: [usize; 3],
}

impl Grid {
    fn norm(&self, p: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] as f64 + 0.5) / self.dims[a] as f64)
    }

    fn in_body(&self, p: [usize; 3]) -> bool {
        let [u, _, w] = self.norm(p);
        ((u - 0.5) / BODY_RADIUS).powi(2) + ((w - 0.5) / BODY_RADIUS).powi(2) <= 1.0
    }

    fn inside(&self, shape: &Shape, p: [usize; 3]) -> bool {
        let [u, v, w] = self.norm(p);
        match *shape {
            Shape::Ellipsoid { c, r } => {
                ((u - c[0]) / r[0]).powi(2) + ((v - c[1]) / r[1]).powi(2) + ((w - c[2]) / r[2]).powi(2) <= 1.0
            }
            Shape::Column { span, c, r } => {
                let (lo, hi) = span_slices(span, self.dims[1]);
                (lo..=hi).contains(&p[1]) && ((u - c[0]) / r[0]).powi(2) + ((w - c[1]) / r[1]).powi(2) <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u32,
    pub center_voxel: [usize; 3],
    pub semi_axes_mm: [f64; 3],
    pub region: AnatomicalRegion,
    pub voxel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub config: PhantomConfig,
    pub expected_partition: BodyRegionPartition,
    pub tumors: Vec<ObjectRecord>,
    pub fp_blobs: Vec<ObjectRecord>,
}

#[derive(Debug, Clone)]
pub struct PhantomBundle {
    pub image: ImageVolume,
    pub anatomy_raw: LabelVolume,
    pub gt_tumors: LabelVolume,
    pub ensemble: Vec<ConfidenceVolume>,
    pub manifest: PhantomManifest,
}

/// Cranio-caudal slice range `[lo, hi]` of a region.
fn region_slices(region: AnatomicalRegion, p: &BodyRegionPartition, ny: usize) -> (i64, i64) {
    match region {
        AnatomicalRegion::HeadNeck => (p.z_lung_top + 1, ny as i64 - 1),
        AnatomicalRegion::Chest => (p.z_lung_bottom + 1, p.z_lung_top),
        AnatomicalRegion::Abdomen => (p.z_hip_bottom + 1, p.z_lung_bottom),
        AnatomicalRegion::Legs => (0, p.z_hip_bottom),
    }
}

struct Placed {
    record: ObjectRecord,
    voxels: Vec<[usize; 3]>,
}

/// Ellipsoid placement with rejection sampling. `allowed` vetoes voxels;
/// accepted objects reserve a Chebyshev margin of `gap` voxels.
#[allow(clippy::too_many_arguments)]
fn place_object(
    rng: &mut ChaCha8Rng,
    g: &VolumeGeometry,
    partition: &BodyRegionPartition,
    region: AnatomicalRegion,
    radius_mm: [f64; 2],
    anisotropic: bool,
    reserved: &mut [bool],
    allowed: &dyn Fn([usize; 3]) -> bool,
    gap: usize,
    max_retries: usize,
    id: u32,
) -> Option<Placed> {
    let dims = g.dims();
    let sp = g.spacing();
    let (zlo, zhi) = region_slices(region, partition, dims[1]);
    for _ in 0..max_retries {
        let r = rng.random_range(radius_mm[0]..=radius_mm[1]);
        let semi: [f64; 3] = if anisotropic {
            std::array::from_fn(|_| r * rng.random_range(1.0 / MAX_AXIS_SCALE..=MAX_AXIS_SCALE))
        } else {
            [r; 3]
        };
        let ext: [usize; 3] = std::array::from_fn(|a| (semi[a] / sp[a]).floor() as usize);
        let lo: [i64; 3] = [ext[0] as i64, zlo.max(ext[1] as i64), ext[2] as i64];
        let hi: [i64; 3] = [
            dims[0] as i64 - 1 - ext[0] as i64,
            zhi.min(dims[1] as i64 - 1 - ext[1] as i64),
            dims[2] as i64 - 1 - ext[2] as i64,
        ];
        if (0..3).any(|a| lo[a] > hi[a]) {
            continue;
        }
        let c: [usize; 3] = std::array::from_fn(|a| rng.random_range(lo[a]..=hi[a]) as usize);
        let mut voxels = Vec::new();
        let mut ok = true;
        'scan: for i in c[0] - ext[0]..=c[0] + ext[0] {
            for j in c[1] - ext[1]..=c[1] + ext[1] {
                for k in c[2] - ext[2]..=c[2] + ext[2] {
                    let d = [i as f64 - c[0] as f64, j as f64 - c[1] as f64, k as f64 - c[2] as f64];
                    let q: f64 = (0..3).map(|a| (d[a] * sp[a] / semi[a]).powi(2)).sum();
                    if q > 1.0 {
                        continue;
                    }
                    let p = [i, j, k];
                    if reserved[g.index(p)] || !allowed(p) {
                        ok = false;
                        break 'scan;
                    }
                    voxels.push(p);
                }
            }
        }
        if !ok || voxels.is_empty() {
            continue;
        }
        reserve(g, reserved, &voxels, gap);
        return Some(Placed {
            record: ObjectRecord {
                id,
                center_voxel: c,
                semi_axes_mm: semi,
                region,
                voxel_count: voxels.len(),
            },
            voxels,
        });
    }
    None
}

fn reserve(g: &VolumeGeometry, reserved: &mut [bool], voxels: &[[usize; 3]], gap: usize) {
    let dims = g.dims();
    let gap = gap as i64;
    for p in voxels {
        for di in -gap..=gap {
            for dj in -gap..=gap {
                for dk in -gap..=gap {
                    let q = [p[0] as i64 + di, p[1] as i64 + dj, p[2] as i64 + dk];
                    if (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < dims[a]) {
                        reserved[g.index(q.map(|v| v as usize))] = true;
                    }
                }
            }
        }
    }
}

fn member_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// FP blob placement, shared by every ensemble member and by the image.
fn place_fp_blobs(gt: &LabelVolume, cfg: &PhantomConfig) -> Result<Vec<Placed>> {
    if cfg.fp_blob_count == 0 {
        return Ok(vec![]);
    }
    let g = gt.geometry();
    let partition = cfg.expected_partition()?;
    let grid = Grid { dims: cfg.dims };
    let mut reserved = vec![false; g.len()];
    let tumor_voxels: Vec<[usize; 3]> = (0..g.len())
        .filter(|&i| gt.data()[i] != 0)
        .map(|i| g.coords(i))
        .collect();
    reserve(g, &mut reserved, &tumor_voxels, cfg.gap_voxels);
    let mut rng = member_rng(cfg.seed, STREAM_FP);
    let start = rng.random_range(0..AnatomicalRegion::ALL.len());
    let allowed = |p: [usize; 3]| grid.in_body(p);
    (0..cfg.fp_blob_count)
        .map(|b| {
            let region = AnatomicalRegion::ALL[(start + b) % AnatomicalRegion::ALL.len()];
            place_object(
                &mut rng,
                g,
                &partition,
                region,
                cfg.fp_radius_mm,
                false,
                &mut reserved,
                &allowed,
                cfg.gap_voxels,
                cfg.max_retries,
                b as u32 + 1,
            )
            .ok_or_else(|| Error::Phantom(format!("no room for false-positive blob {} in {region}", b + 1)))
        })
        .collect()
}

/// Separable Gaussian blur with per-axis sigma in voxels; the kernel is
/// renormalized where it is cut by the volume border.
fn gaussian_blur(g: &VolumeGeometry, data: &mut [f32], sigma_mm: f64) {
    let dims = g.dims();
    for axis in 0..3 {
        let sigma = sigma_mm / g.spacing()[axis];
        if sigma < 1e-3 {
            continue;
        }
        let half = (3.0 * sigma).ceil() as i64;
        let kernel: Vec<f64> = (-half..=half).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let n = dims[axis] as i64;
        let stride = match axis {
            0 => dims[1] * dims[2],
            1 => dims[2],
            _ => 1,
        };
        let mut line = vec![0.0f32; n as usize];
        for start in (0..g.len()).filter(|&i| g.coords(i)[axis] == 0) {
            for (t, v) in line.iter_mut().enumerate() {
                *v = data[start + t * stride];
            }
            if line.iter().all(|&v| v == 0.0) {
                continue;
            }
            for t in 0..n {
                let (mut acc, mut wsum) = (0.0f64, 0.0f64);
                for d in -half..=half {
                    let s = t + d;
                    if s >= 0 && s < n {
                        let w = kernel[(d + half) as usize];
                        acc += w * line[s as usize] as f64;
                        wsum += w;
                    }
                }
                data[start + t as usize * stride] = (acc / wsum) as f32;
            }
        }
    }
}

/// `clamp(blur(gt) + noise + fp_blobs, 0, 1)`; noise depends on
/// `member_index`, blob locations only on the config seed.
pub fn degrade_to_confidence(gt: &LabelVolume, config: &PhantomConfig, member_index: usize) -> Result<ConfidenceVolume> {
    let g = gt.geometry();
    let mut conf: Vec<f32> = gt.data().iter().map(|&v| if v != 0 { 1.0 } else { 0.0 }).collect();
    if config.blur_radius_mm > 0.0 {
        gaussian_blur(g, &mut conf, config.blur_radius_mm);
    }
    if config.confidence_noise_sigma > 0.0 {
        let mut rng = member_rng(config.seed, STREAM_MEMBER_BASE + member_index as u64);
        let normal = Normal::new(0.0, config.confidence_noise_sigma).map_err(|e| Error::Phantom(e.to_string()))?;
        for c in conf.iter_mut() {
            *c += normal.sample(&mut rng) as f32;
        }
    }
    for blob in place_fp_blobs(gt, config)? {
        for p in blob.voxels {
            conf[g.index(p)] += config.fp_confidence as f32;
        }
    }
    for c in conf.iter_mut() {
        *c = c.clamp(0.0, 1.0);
    }
    ConfidenceVolume::new(g.clone(), conf)
}

pub fn generate_phantom(config: &PhantomConfig) -> Result<PhantomBundle> {
    config.validate()?;
    let g = config.geometry()?;
    let grid = Grid { dims: config.dims };
    let partition = config.expected_partition()?;
    let organs = layout(config);

    let mut raw = vec![0u32; g.len()];
    let mut intensity = vec![0.0f32; g.len()];
    let mut excluded = vec![false; g.len()];
    let mut body = vec![false; g.len()];
    for idx in 0..g.len() {
        let p = g.coords(idx);
        if !grid.in_body(p) {
            continue;
        }
        body[idx] = true;
        intensity[idx] = TISSUE_INTENSITY;
        for (o, organ) in organs.iter().enumerate() {
            if grid.inside(&organ.shape, p) {
                raw[idx] = o as u32 + 1;
                intensity[idx] = organ.intensity;
                excluded[idx] = organ.excludes_tumors;
            }
        }
    }
    let mut dictionary: LabelDictionary = BTreeMap::from([(0, "background".to_string())]);
    dictionary.extend(organs.iter().enumerate().map(|(o, organ)| (o as u32 + 1, organ.name.to_string())));
    let anatomy_raw = LabelVolume::new(g.clone(), raw, dictionary)?;

    let mut rng = member_rng(config.seed, STREAM_TUMORS);
    let mut reserved = vec![false; g.len()];
    let mut gt = vec![false; g.len()];
    let mut tumors = Vec::new();
    let allowed = |p: [usize; 3]| {
        let i = g.index(p);
        body[i] && !excluded[i]
    };
    for region in AnatomicalRegion::ALL {
        let [lo, hi] = config.tumors_per_region.get(&region).copied().unwrap_or([0, 0]);
        let n = rng.random_range(lo..=hi);
        for t in 0..n {
            let placed = place_object(
                &mut rng,
                &g,
                &partition,
                region,
                config.tumor_radius_mm,
                true,
                &mut reserved,
                &allowed,
                config.gap_voxels,
                config.max_retries,
                tumors.len() as u32 + 1,
            )
            .ok_or_else(|| {
                Error::Phantom(format!(
                    "region {region} too small for {n} tumors (placed {t} after {} retries)",
                    config.max_retries
                ))
            })?;
            for p in &placed.voxels {
                let i = g.index(*p);
                gt[i] = true;
                intensity[i] = config.tumor_intensity as f32;
            }
            tumors.push(placed.record);
        }
    }
    let gt_tumors = LabelVolume::binary(g.clone(), gt)?;

    let blobs = place_fp_blobs(&gt_tumors, config)?;
    let mut stripe_rng = member_rng(config.seed, STREAM_FP + 1);
    for blob in &blobs {
        let phase = stripe_rng.random_range(0..2usize);
        for p in &blob.voxels {
            let sign = if (p[2] + phase) % 2 == 0 { 1.0 } else { -1.0 };
            intensity[g.index(*p)] = (0.9 * config.tumor_intensity + sign * config.fp_stripe_amplitude) as f32;
        }
    }
    if config.image_noise_sigma > 0.0 {
        let mut rng = member_rng(config.seed, STREAM_IMAGE);
        let normal = Normal::new(0.0, config.image_noise_sigma).map_err(|e| Error::Phantom(e.to_string()))?;
        for v in intensity.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let image = ImageVolume::new(g.clone(), intensity)?;
    let ensemble = (0..config.ensemble_size)
        .map(|m| degrade_to_confidence(&gt_tumors, config, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomBundle {
        image,
        anatomy_raw,
        gt_tumors,
        ensemble,
        manifest: PhantomManifest {
            config: config.clone(),
            expected_partition: partition,
            tumors,
            fp_blobs: blobs.into_iter().map(|b| b.record).collect(),
        },
    })
}

/// File names used by [`PhantomBundle::write`].
pub mod files {
    pub const IMAGE: &str = "image.nii.gz";
    pub const ANATOMY_RAW: &str = "anatomy_raw.nii.gz";
    pub const GT: &str = "gt_tumors.nii.gz";
    pub const ENSEMBLE_DIR: &str = "ensemble";
    pub const MANIFEST: &str = "phantom_manifest.json";

    pub fn member(m: usize) -> String {
        format!("member_{m:02}.nii.gz")
    }
}

impl PhantomBundle {
    /// NIfTI volumes plus the manifest; ensemble members go to `ensemble/`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir_all(dir.join(files::ENSEMBLE_DIR))?;
        write_volume(&self.image, dir.join(files::IMAGE))?;
        write_volume(&self.anatomy_raw, dir.join(files::ANATOMY_RAW))?;
        write_volume(&self.gt_tumors, dir.join(files::GT))?;
        for (m, c) in self.ensemble.iter().enumerate() {
            write_volume(c, dir.join(files::ENSEMBLE_DIR).join(files::member(m)))?;
        }
        write_json(dir.join(files::MANIFEST), &self.manifest)
    }

    pub fn read_manifest(dir: impl AsRef<Path>) -> Result<PhantomManifest> {
        read_json(dir.as_ref().join(files::MANIFEST))
    }
}

/// Generates a phantom and writes it to `dir`.
pub fn simulate(config: &PhantomConfig, dir: impl AsRef<Path>) -> Result<PhantomManifest> {
    let bundle = generate_phantom(config)?;
    bundle.write(dir)?;
    Ok(bundle.manifest)
}
