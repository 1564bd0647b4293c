use serde::{Deserialize, Serialize};

use super::{ConfidenceVolume, ImageVolume, LabelVolume, Volume, VolumeGeometry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    Linear,
    Nearest,
}

/// Output dims for a target spacing: `round_half_up(n * s / t)`, at least 1.
pub fn resampled_dims(geometry: &VolumeGeometry, target: [f64; 3]) -> [usize; 3] {
    let mut out = [1usize; 3];
    for a in 0..3 {
        let exact = geometry.dims()[a] as f64 * geometry.spacing()[a] / target[a];
        out[a] = ((exact + 0.5).floor() as usize).max(1);
    }
    out
}

/// Resample onto a grid with `target_spacing`, keeping the origin.
///
/// Output voxel `o` samples the input at continuous index `o * t / s`.
/// Linear mode interpolates trilinearly with edge clamping; nearest mode
/// rounds half up. Label volumes only accept nearest mode.
pub fn resample(volume: &Volume, target_spacing: [f64; 3], mode: ResampleMode) -> Result<Volume> {
    if target_spacing.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target spacing {target_spacing:?} must be positive"
        )));
    }
    let src = volume.geometry();
    if src.spacing() == target_spacing {
        return Ok(volume.clone());
    }
    let dims = resampled_dims(src, target_spacing);
    let geometry = VolumeGeometry::new(dims, target_spacing, src.origin(), src.axis_roles())?;
    let scale: [f64; 3] = std::array::from_fn(|a| target_spacing[a] / src.spacing()[a]);

    match volume {
        Volume::Label(labels) => {
            if mode != ResampleMode::Nearest {
                return Err(Error::InvalidArgument(
                    "label volumes must be resampled with nearest mode".into(),
                ));
            }
            let data = sample_nearest(src, &geometry, scale, labels.data());
            Ok(Volume::Label(LabelVolume::new(
                geometry,
                data,
                labels.dictionary().clone(),
            )?))
        }
        Volume::Image(img) => {
            let data = sample_f32(src, &geometry, scale, img.data(), mode);
            Ok(Volume::Image(ImageVolume::new(geometry, data)?))
        }
        Volume::Confidence(conf) => {
            let mut data = sample_f32(src, &geometry, scale, conf.data(), mode);
            for v in &mut data {
                *v = v.clamp(0.0, 1.0);
            }
            Ok(Volume::Confidence(ConfidenceVolume::new(geometry, data)?))
        }
    }
}

fn nearest_index(o: usize, scale: f64, n: usize) -> usize {
    let x = o as f64 * scale;
    ((x + 0.5).floor() as usize).min(n - 1)
}

fn sample_nearest<T: Copy>(src: &VolumeGeometry, dst: &VolumeGeometry, scale: [f64; 3], data: &[T]) -> Vec<T> {
    let sd = src.dims();
    let lookup: [Vec<usize>; 3] =
        std::array::from_fn(|a| (0..dst.dims()[a]).map(|o| nearest_index(o, scale[a], sd[a])).collect());
    let mut out = Vec::with_capacity(dst.len());
    for &i in &lookup[0] {
        for &j in &lookup[1] {
            for &k in &lookup[2] {
                out.push(data[src.index([i, j, k])]);
            }
        }
    }
    out
}

fn sample_f32(
    src: &VolumeGeometry,
    dst: &VolumeGeometry,
    scale: [f64; 3],
    data: &[f32],
    mode: ResampleMode,
) -> Vec<f32> {
    if mode == ResampleMode::Nearest {
        return sample_nearest(src, dst, scale, data);
    }
    let sd = src.dims();
    // Per axis: (lower index, upper index, upper weight).
    let taps: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| {
        (0..dst.dims()[a])
            .map(|o| {
                let x = (o as f64 * scale[a]).min((sd[a] - 1) as f64);
                let lo = x.floor() as usize;
                let hi = (lo + 1).min(sd[a] - 1);
                (lo, hi, x - lo as f64)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(dst.len());
    for &(i0, i1, wi) in &taps[0] {
        for &(j0, j1, wj) in &taps[1] {
            for &(k0, k1, wk) in &taps[2] {
                let v = |i, j, k| data[src.index([i, j, k])] as f64;
                let c00 = v(i0, j0, k0) * (1.0 - wk) + v(i0, j0, k1) * wk;
                let c01 = v(i0, j1, k0) * (1.0 - wk) + v(i0, j1, k1) * wk;
                let c10 = v(i1, j0, k0) * (1.0 - wk) + v(i1, j0, k1) * wk;
                let c11 = v(i1, j1, k0) * (1.0 - wk) + v(i1, j1, k1) * wk;
                let c0 = c00 * (1.0 - wj) + c01 * wj;
                let c1 = c10 * (1.0 - wj) + c11 * wj;
                out.push((c0 * (1.0 - wi) + c1 * wi) as f32);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AxisRoles;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn image(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> ImageVolume {
        let g = VolumeGeometry::canonical(dims, spacing).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g.len()).map(|_| rng.random_range(0.0..100.0f32)).collect();
        ImageVolume::new(g, data).unwrap()
    }

    #[test]
    fn same_spacing_is_identity() {
        let v = Volume::Image(image([4, 5, 6], [7.8, 0.625, 0.625], 1));
        for mode in [ResampleMode::Linear, ResampleMode::Nearest] {
            assert_eq!(resample(&v, [7.8, 0.625, 0.625], mode).unwrap(), v);
        }
    }

    /// Brute force: the output voxel takes the value of the input voxel whose
    /// physical center is closest (ties toward the larger index).
    #[test]
    fn nearest_downsample_matches_brute_force() {
        let img = image([4, 4, 4], [1.0; 3], 7);
        let out = resample(&Volume::Image(img.clone()), [2.0; 3], ResampleMode::Nearest)
            .unwrap()
            .into_image()
            .unwrap();
        assert_eq!(out.geometry().dims(), [2, 2, 2]);
        let inputs: Vec<f32> = img.data().to_vec();
        for o in 0..out.geometry().len() {
            let oc = out.geometry().coords(o);
            let target = oc.map(|c| c as f64 * 2.0);
            let mut best = (f64::INFINITY, [0usize; 3]);
            for i in 0..img.geometry().len() {
                let ic = img.geometry().coords(i);
                let d: f64 = (0..3).map(|a| (ic[a] as f64 - target[a]).powi(2)).sum();
                if d < best.0 || (d == best.0 && ic > best.1) {
                    best = (d, ic);
                }
            }
            assert_eq!(out.data()[o], img.at(best.1));
            assert!(inputs.contains(&out.data()[o]));
        }
    }

    #[test]
    fn non_positive_target_rejected() {
        let v = Volume::Image(image([2, 2, 2], [1.0; 3], 0));
        assert!(resample(&v, [0.0, 1.0, 1.0], ResampleMode::Linear).is_err());
    }

    #[test]
    fn linear_labels_rejected() {
        let g = VolumeGeometry::canonical([2, 2, 2], [1.0; 3]).unwrap();
        let l = LabelVolume::new(g, vec![0; 8], BTreeMap::from([(0, "background".into())])).unwrap();
        assert!(resample(&Volume::Label(l), [2.0; 3], ResampleMode::Linear).is_err());
    }

    #[test]
    fn dims_round_half_up_and_extent_kept() {
        let g = VolumeGeometry::new([5, 10, 3], [1.0, 0.625, 2.0], [0.0; 3], AxisRoles::CANONICAL).unwrap();
        // 5*1/2 = 2.5 -> 3, 10*0.625/1.25 = 5, 3*2/8 = 0.75 -> 1
        assert_eq!(resampled_dims(&g, [2.0, 1.25, 8.0]), [3, 5, 1]);
        let d = resampled_dims(&g, [0.3, 0.7, 1.1]);
        for a in 0..3 {
            let before = g.dims()[a] as f64 * g.spacing()[a];
            let after = d[a] as f64 * [0.3, 0.7, 1.1][a];
            assert!((before - after).abs() <= [0.3, 0.7, 1.1][a]);
        }
    }

    #[test]
    fn linear_upsample_interpolates_midpoints() {
        let g = VolumeGeometry::canonical([1, 1, 2], [1.0; 3]).unwrap();
        let img = ImageVolume::new(g, vec![0.0, 10.0]).unwrap();
        let out = resample(&Volume::Image(img), [1.0, 1.0, 0.5], ResampleMode::Linear)
            .unwrap()
            .into_image()
            .unwrap();
        assert_eq!(out.data(), &[0.0, 5.0, 10.0, 10.0]);
    }
}
