use super::{fixed_width_bin, FeatureVector, VoxelRegion, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub const FIRST_ORDER_NAMES: [&str; 18] = [
    "firstorder_mean",
    "firstorder_median",
    "firstorder_min",
    "firstorder_max",
    "firstorder_range",
    "firstorder_variance",
    "firstorder_std",
    "firstorder_skewness",
    "firstorder_kurtosis",
    "firstorder_energy",
    "firstorder_total_energy",
    "firstorder_root_mean_square",
    "firstorder_mean_absolute_deviation",
    "firstorder_interquartile_range",
    "firstorder_p10",
    "firstorder_p90",
    "firstorder_entropy",
    "firstorder_uniformity",
];

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn first_order_features<R: VoxelRegion + ?Sized>(region: &R, image: &ImageVolume) -> Result<FeatureVector> {
    let voxels = region.voxels();
    if voxels.is_empty() {
        return Err(Error::EmptyCandidate);
    }
    let g = image.geometry();
    let mut x: Vec<f64> = Vec::with_capacity(voxels.len());
    for v in voxels {
        if !g.contains(v.map(|c| c as i64)) {
            return Err(Error::InvalidArgument(format!("voxel {v:?} outside the image grid")));
        }
        x.push(image.at(*v) as f64);
    }
    // Sorting first makes every sum independent of voxel enumeration order.
    x.sort_by(f64::total_cmp);
    Ok(FeatureVector::from_named(&FIRST_ORDER_NAMES, &statistics(&x, g.voxel_volume()))?)
}

fn statistics(sorted: &[f64], voxel_volume: f64) -> [f64; 18] {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut mad, mut energy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &v in sorted {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += d.abs();
        energy += v * v;
    }
    let (m2, m3, m4, mad) = (m2 / n, m3 / n, m4 / n, mad / n);
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];

    let mut hist = [0usize; DEFAULT_BINS];
    for &v in sorted {
        hist[fixed_width_bin(v, min, max, DEFAULT_BINS)] += 1;
    }
    let (mut entropy, mut uniformity) = (0.0, 0.0);
    for &c in hist.iter().filter(|&&c| c > 0) {
        let p = c as f64 / n;
        entropy -= p * p.log2();
        uniformity += p * p;
    }

    [
        mean,
        percentile_sorted(sorted, 0.5),
        min,
        max,
        max - min,
        m2,
        m2.sqrt(),
        skewness,
        kurtosis,
        energy,
        energy * voxel_volume,
        (energy / n).sqrt(),
        mad,
        percentile_sorted(sorted, 0.75) - percentile_sorted(sorted, 0.25),
        percentile_sorted(sorted, 0.1),
        percentile_sorted(sorted, 0.9),
        entropy + 0.0,
        uniformity,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image_with(dims: [usize; 3], f: impl Fn([usize; 3]) -> f32) -> ImageVolume {
        let g = VolumeGeometry::canonical(dims, [1.0, 2.0, 0.5]).unwrap();
        let data = (0..g.len()).map(|i| f(g.coords(i))).collect();
        ImageVolume::new(g, data).unwrap()
    }

    fn get(fv: &FeatureVector, short: &str) -> f64 {
        fv.get(&format!("firstorder_{short}")).unwrap()
    }

    #[test]
    fn constant_region() {
        let img = image_with([3, 3, 3], |_| 5.0);
        let vox: Vec<[usize; 3]> = (0..27).map(|i| img.geometry().coords(i)).collect();
        let fv = first_order_features(&vox, &img).unwrap();
        assert_eq!(get(&fv, "mean"), 5.0);
        assert_eq!(get(&fv, "variance"), 0.0);
        assert_eq!(get(&fv, "entropy"), 0.0);
        assert_eq!(get(&fv, "uniformity"), 1.0);
        assert_eq!(get(&fv, "skewness"), 0.0);
    }

    #[test]
    fn two_voxels() {
        let img = image_with([1, 1, 2], |c| if c[2] == 0 { 1.0 } else { 3.0 });
        let fv = first_order_features(&vec![[0, 0, 0], [0, 0, 1]], &img).unwrap();
        assert_eq!(get(&fv, "mean"), 2.0);
        assert_eq!(get(&fv, "range"), 2.0);
        assert_eq!(get(&fv, "std"), 1.0);
        assert_eq!(get(&fv, "median"), 2.0);
        assert_eq!(get(&fv, "entropy"), 1.0);
        assert_eq!(get(&fv, "energy"), 10.0);
        assert_eq!(get(&fv, "total_energy"), 10.0);
    }

    #[test]
    fn empty_region_is_an_error() {
        let img = image_with([2, 2, 2], |_| 0.0);
        let none: Vec<[usize; 3]> = vec![];
        assert!(matches!(first_order_features(&none, &img), Err(Error::EmptyCandidate)));
    }

    #[test]
    fn permutation_and_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f32> = (0..8 * 8 * 8).map(|_| rng.random_range(-3.0..7.0)).collect();
        let g = VolumeGeometry::canonical([8, 8, 8], [1.0; 3]).unwrap();
        let img = ImageVolume::new(g.clone(), vals.clone()).unwrap();
        let mut vox: Vec<[usize; 3]> = (0..3).flat_map(|i| (0..3).flat_map(move |j| (0..4).map(move |k| [i, j, k]))).collect();
        let a = first_order_features(&vox, &img).unwrap();
        vox.shuffle(&mut rng);
        assert_eq!(first_order_features(&vox, &img).unwrap(), a);
        // Shift both the region and the intensities by (2, 3, 1).
        let shifted_vals: Vec<f32> = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                if c[0] >= 2 && c[1] >= 3 && c[2] >= 1 {
                    vals[g.index([c[0] - 2, c[1] - 3, c[2] - 1])]
                } else {
                    0.0
                }
            })
            .collect();
        let shifted = ImageVolume::new(g, shifted_vals).unwrap();
        let moved: Vec<[usize; 3]> = vox.iter().map(|v| [v[0] + 2, v[1] + 3, v[2] + 1]).collect();
        assert_eq!(first_order_features(&moved, &shifted).unwrap(), a);
    }
}
