use std::collections::HashMap;

use super::{fixed_width_bin, FeatureVector, VoxelRegion};
use crate::error::{Error, Result};
use crate::volume::ImageVolume;

pub const GLCM_NAMES: [&str; 6] = [
    "glcm_joint_energy",
    "glcm_contrast",
    "glcm_dissimilarity",
    "glcm_homogeneity",
    "glcm_joint_entropy",
    "glcm_correlation",
];

/// The 13 unit offsets whose first non-zero component is positive.
pub const GLCM_DIRECTIONS: [[i64; 3]; 13] = [
    [0, 0, 1],
    [0, 1, -1],
    [0, 1, 0],
    [0, 1, 1],
    [1, -1, -1],
    [1, -1, 0],
    [1, -1, 1],
    [1, 0, -1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, -1],
    [1, 1, 0],
    [1, 1, 1],
];

/// Symmetric normalized co-occurrence matrices (row-major `bins x bins`)
/// for every direction that has at least one pair.
pub fn glcm_matrices<R: VoxelRegion + ?Sized>(
    region: &R,
    image: &ImageVolume,
    bins: usize,
    distance: usize,
) -> Result<Vec<([i64; 3], Vec<f64>)>> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("GLCM needs at least 2 bins, got {bins}")));
    }
    if distance == 0 {
        return Err(Error::InvalidArgument("GLCM distance must be at least 1".into()));
    }
    let voxels = region.voxels();
    if voxels.is_empty() {
        return Err(Error::EmptyCandidate);
    }
    let g = image.geometry();
    let mut values = Vec::with_capacity(voxels.len());
    for v in voxels {
        if !g.contains(v.map(|c| c as i64)) {
            return Err(Error::InvalidArgument(format!("voxel {v:?} outside the image grid")));
        }
        values.push(image.at(*v) as f64);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level: HashMap<[i64; 3], usize> = voxels
        .iter()
        .zip(&values)
        .map(|(v, &x)| (v.map(|c| c as i64), fixed_width_bin(x, min, max, bins)))
        .collect();

    let d = distance as i64;
    let mut out = Vec::new();
    for dir in GLCM_DIRECTIONS {
        let mut counts = vec![0u64; bins * bins];
        let mut pairs = 0u64;
        for (p, &a) in &level {
            let q = [p[0] + dir[0] * d, p[1] + dir[1] * d, p[2] + dir[2] * d];
            if let Some(&b) = level.get(&q) {
                counts[a * bins + b] += 1;
                counts[b * bins + a] += 1;
                pairs += 2;
            }
        }
        if pairs > 0 {
            out.push((dir, counts.into_iter().map(|c| c as f64 / pairs as f64).collect()));
        }
    }
    if out.is_empty() {
        return Err(Error::NoCooccurrencePairs);
    }
    Ok(out)
}

pub fn glcm_features<R: VoxelRegion + ?Sized>(
    region: &R,
    image: &ImageVolume,
    bins: usize,
    distance: usize,
) -> Result<FeatureVector> {
    let matrices = glcm_matrices(region, image, bins, distance)?;
    let mut acc = [0.0; 6];
    for (_, p) in &matrices {
        for (a, v) in acc.iter_mut().zip(matrix_features(p, bins)) {
            *a += v;
        }
    }
    let n = matrices.len() as f64;
    FeatureVector::from_named(&GLCM_NAMES, &acc.map(|a| a / n))
}

fn matrix_features(p: &[f64], bins: usize) -> [f64; 6] {
    let (mut energy, mut contrast, mut dissim, mut homog, mut entropy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut marginal = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            let v = p[i * bins + j];
            if v == 0.0 {
                continue;
            }
            let diff = i as f64 - j as f64;
            energy += v * v;
            contrast += diff * diff * v;
            dissim += diff.abs() * v;
            homog += v / (1.0 + diff * diff);
            entropy -= v * v.log2();
            marginal[i] += v;
        }
    }
    let mu: f64 = marginal.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum();
    let var: f64 = marginal
        .iter()
        .enumerate()
        .map(|(i, m)| ((i + 1) as f64 - mu).powi(2) * m)
        .sum();
    let correlation = if var > 0.0 {
        let mut s = 0.0;
        for i in 0..bins {
            for j in 0..bins {
                s += ((i + 1) as f64 - mu) * ((j + 1) as f64 - mu) * p[i * bins + j];
            }
        }
        s / var
    } else {
        1.0
    };
    [energy, contrast, dissim, homog, entropy + 0.0, correlation]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(n: usize) -> Vec<[usize; 3]> {
        (0..n).flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |k| [i, j, k]))).collect()
    }

    fn get(fv: &FeatureVector, short: &str) -> f64 {
        fv.get(&format!("glcm_{short}")).unwrap()
    }

    #[test]
    fn directions_are_unique_halves() {
        let mut all: Vec<[i64; 3]> = GLCM_DIRECTIONS.to_vec();
        all.extend(GLCM_DIRECTIONS.iter().map(|d| d.map(|c| -c)));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 26);
    }

    #[test]
    fn constant_cube() {
        let g = VolumeGeometry::canonical([3, 3, 3], [1.0; 3]).unwrap();
        let img = ImageVolume::filled(g, 4.0);
        let fv = glcm_features(&cube(3), &img, 32, 1).unwrap();
        assert_eq!(get(&fv, "joint_energy"), 1.0);
        assert_eq!(get(&fv, "contrast"), 0.0);
        assert_eq!(get(&fv, "joint_entropy"), 0.0);
    }

    #[test]
    fn single_voxel_has_no_pairs() {
        let g = VolumeGeometry::canonical([3, 3, 3], [1.0; 3]).unwrap();
        let img = ImageVolume::filled(g, 4.0);
        assert!(matches!(glcm_features(&vec![[1, 1, 1]], &img, 32, 1), Err(Error::NoCooccurrencePairs)));
    }

    /// Stripes two voxels thick along the last axis.
    #[test]
    fn stripes_contrast_matches_pair_enumeration() {
        let g = VolumeGeometry::canonical([2, 2, 8], [1.0; 3]).unwrap();
        let data = (0..g.len()).map(|i| if (g.coords(i)[2] / 2) % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let img = ImageVolume::new(g.clone(), data).unwrap();
        let vox: Vec<[usize; 3]> = (0..g.len()).map(|i| g.coords(i)).collect();
        let mats = glcm_matrices(&vox, &img, 2, 1).unwrap();
        let (_, p) = mats.iter().find(|(d, _)| *d == [0, 0, 1]).unwrap();
        // Enumerate ordered pairs along the stripe axis in both directions.
        let (mut diff_pairs, mut total) = (0.0, 0.0);
        for v in &vox {
            for s in [-1i64, 1] {
                let k = v[2] as i64 + s;
                if (0..8).contains(&k) {
                    total += 1.0;
                    let a = img.at(*v);
                    let b = img.at([v[0], v[1], k as usize]);
                    if a != b {
                        diff_pairs += 1.0;
                    }
                }
            }
        }
        let contrast = p[1] + p[2];
        assert!((contrast - diff_pairs / total).abs() < 1e-15);
        assert!((contrast - 12.0 / 28.0).abs() < 1e-15);
    }

    #[test]
    fn matrices_normalized_and_bounded() {
        let g = VolumeGeometry::canonical([6, 6, 6], [1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..g.len()).map(|_| rng.random_range(0.0..10.0)).collect();
        let img = ImageVolume::new(g, data).unwrap();
        let mut vox = cube(5);
        for (_, p) in glcm_matrices(&vox, &img, 8, 1).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..8 {
                for j in 0..8 {
                    assert_eq!(p[i * 8 + j], p[j * 8 + i]);
                }
            }
        }
        let a = glcm_features(&vox, &img, 8, 1).unwrap();
        assert!(get(&a, "joint_energy") > 0.0 && get(&a, "joint_energy") <= 1.0);
        assert!(get(&a, "contrast") >= 0.0);
        vox.shuffle(&mut rng);
        assert_eq!(glcm_features(&vox, &img, 8, 1).unwrap(), a);
    }

    #[test]
    fn distance_two_skips_empty_directions() {
        let g = VolumeGeometry::canonical([1, 1, 3], [1.0; 3]).unwrap();
        let img = ImageVolume::new(g, vec![0.0, 1.0, 2.0]).unwrap();
        let mats = glcm_matrices(&vec![[0, 0, 0], [0, 0, 2]], &img, 2, 2).unwrap();
        assert_eq!(mats.len(), 1);
        assert!(glcm_matrices(&vec![[0, 0, 0], [0, 0, 1]], &img, 2, 2).is_err());
    }
}
