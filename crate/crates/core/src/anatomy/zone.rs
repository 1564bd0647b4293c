//! Anisotropy-aware dilation for the high-risk zone.
//!
//! A voxel belongs to the dilation of a seed set when some seed lies within
//! `radius_mm` physical distance of it, which is exactly dilation by an
//! ellipsoidal structuring element with per-axis voxel radius
//! `ceil(radius_mm / spacing)`. It is computed through a separable squared
//! Euclidean distance transform so cost does not grow with the radius.

use rayon::prelude::*;

use super::RefinedAnatomyLabel;
use crate::error::{Error, Result};
use crate::volume::{LabelVolume, VolumeGeometry};

/// Relative slack on the radius test so boundary voxels at exactly
/// `radius_mm` are included regardless of summation order.
const RADIUS_SLACK: f64 = 1e-12;

/// Squared physical distance (mm^2) from every voxel to the nearest seed,
/// `f64::INFINITY` when there are no seeds.
pub fn squared_distance_transform(geometry: &VolumeGeometry, seeds: &[bool]) -> Vec<f64> {
    let mut dist: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in (0..3).rev() {
        edt_axis(geometry, &mut dist, axis);
    }
    dist
}

fn edt_axis(geometry: &VolumeGeometry, dist: &mut [f64], axis: usize) {
    let dims = geometry.dims();
    let s2 = geometry.spacing()[axis].powi(2);
    let n = dims[axis];
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    // Line starts: every voxel whose coordinate along `axis` is zero.
    let starts: Vec<usize> = (0..geometry.len())
        .filter(|&idx| geometry.coords(idx)[axis] == 0)
        .collect();
    let lines: Vec<(usize, Vec<f64>)> = starts
        .par_iter()
        .map(|&start| {
            let f: Vec<f64> = (0..n).map(|i| dist[start + i * stride]).collect();
            (start, lower_envelope(&f, s2))
        })
        .collect();
    for (start, line) in lines {
        for (i, v) in line.into_iter().enumerate() {
            dist[start + i * stride] = v;
        }
    }
}

/// 1D transform `d(p) = min_q f(q) + s2 * (p - q)^2` via the lower envelope
/// of parabolas.
fn lower_envelope(f: &[f64], s2: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        return out;
    }
    let mut v: Vec<usize> = Vec::with_capacity(finite.len());
    let mut z: Vec<f64> = Vec::with_capacity(finite.len() + 1);
    let intersect = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + s2 * qf * qf) - (f[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf))
    };
    for &q in &finite {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&last) => {
                    let s = intersect(q, last);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            z.clear();
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let d = p as f64 - q as f64;
        *o = f[q] + s2 * d * d;
    }
    out
}

/// Binary dilation of `seeds` by a physical ball of `radius_mm`.
pub fn dilate_ellipsoid(geometry: &VolumeGeometry, seeds: &[bool], radius_mm: f64) -> Vec<bool> {
    let limit = radius_mm * radius_mm * (1.0 + RADIUS_SLACK);
    squared_distance_transform(geometry, seeds)
        .into_iter()
        .map(|d| d <= limit)
        .collect()
}

/// Adds the high-risk zone (label 12) on background voxels within
/// `radius_mm` of lungs or spine. Organ voxels are never overwritten.
pub fn build_high_risk_zone(refined: &LabelVolume, radius_mm: f64) -> Result<LabelVolume> {
    if !(radius_mm > 0.0) || !radius_mm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dilation radius must be positive, got {radius_mm}"
        )));
    }
    let lungs = RefinedAnatomyLabel::Lungs.id();
    let spine = RefinedAnatomyLabel::Spine.id();
    let seeds: Vec<bool> = refined.data().iter().map(|&l| l == lungs || l == spine).collect();
    if !seeds.iter().any(|&s| s) {
        return Err(Error::NoSeedStructures);
    }
    let zone = dilate_ellipsoid(refined.geometry(), &seeds, radius_mm);
    let z = RefinedAnatomyLabel::HighRiskZone.id();
    let data = refined
        .data()
        .iter()
        .zip(zone)
        .map(|(&l, in_zone)| if l == 0 && in_zone { z } else { l })
        .collect();
    let mut dictionary = refined.dictionary().clone();
    dictionary.insert(z, RefinedAnatomyLabel::HighRiskZone.name().into());
    LabelVolume::new(refined.geometry().clone(), data, dictionary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::AxisRoles;
    use proptest::prelude::*;

    /// Direct dilation with the ellipsoidal structuring element.
    fn naive_dilate(g: &VolumeGeometry, seeds: &[bool], r: f64) -> Vec<bool> {
        let sp = g.spacing();
        let rad: [i64; 3] = std::array::from_fn(|a| (r / sp[a]).ceil() as i64);
        let mut offsets = Vec::new();
        for a in -rad[0]..=rad[0] {
            for b in -rad[1]..=rad[1] {
                for c in -rad[2]..=rad[2] {
                    let d2 = (a as f64 * sp[0]).powi(2) + (b as f64 * sp[1]).powi(2) + (c as f64 * sp[2]).powi(2);
                    if d2 <= r * r * (1.0 + RADIUS_SLACK) {
                        offsets.push([a, b, c]);
                    }
                }
            }
        }
        let mut out = vec![false; g.len()];
        for idx in 0..g.len() {
            if !seeds[idx] {
                continue;
            }
            let p = g.coords(idx).map(|v| v as i64);
            for o in &offsets {
                let q = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
                if g.contains(q) {
                    out[g.index(q.map(|v| v as usize))] = true;
                }
            }
        }
        out
    }

    fn seeded_mask(len: usize, seed: u64, density: f64) -> Vec<bool> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_bool(density)).collect()
    }

    #[test]
    fn edt_matches_naive_dilation() {
        let g = VolumeGeometry::new([6, 14, 12], [2.5, 0.625, 0.75], [0.0; 3], AxisRoles::CANONICAL).unwrap();
        for seed in 0..6 {
            let seeds = seeded_mask(g.len(), seed, 0.01);
            for r in [0.5, 1.0, 2.5, 3.1, 5.0] {
                assert_eq!(dilate_ellipsoid(&g, &seeds, r), naive_dilate(&g, &seeds, r), "seed {seed} r {r}");
            }
        }
    }

    fn spine_column(g: &VolumeGeometry) -> LabelVolume {
        let mut data = vec![0u32; g.len()];
        for j in 0..g.dims()[1] {
            data[g.index([2, j, 4])] = RefinedAnatomyLabel::Spine.id();
        }
        LabelVolume::new(g.clone(), data, RefinedAnatomyLabel::dictionary()).unwrap()
    }

    #[test]
    fn lateral_neighbor_joins_zone() {
        let g = VolumeGeometry::new([5, 6, 9], [7.8, 0.625, 0.625], [0.0; 3], AxisRoles::CANONICAL).unwrap();
        let refined = spine_column(&g);
        let out = build_high_risk_zone(&refined, 0.625).unwrap();
        assert_eq!(out.at([2, 3, 5]), RefinedAnatomyLabel::HighRiskZone.id());
        assert_eq!(out.at([2, 3, 3]), RefinedAnatomyLabel::HighRiskZone.id());
        // 7.8 mm AP neighbor is out of reach.
        assert_eq!(out.at([1, 3, 4]), 0);
    }

    #[test]
    fn organs_are_not_overwritten() {
        let g = VolumeGeometry::canonical([5, 6, 9], [1.0; 3]).unwrap();
        let refined = spine_column(&g);
        let (geom, mut data, dict) = refined.into_parts();
        data[g.index([2, 3, 5])] = RefinedAnatomyLabel::Liver.id();
        let refined = LabelVolume::new(geom, data, dict).unwrap();
        let out = build_high_risk_zone(&refined, 3.0).unwrap();
        assert_eq!(out.at([2, 3, 5]), RefinedAnatomyLabel::Liver.id());
        assert_eq!(out.at([2, 3, 6]), RefinedAnatomyLabel::HighRiskZone.id());
    }

    #[test]
    fn tiny_radius_is_identity() {
        let g = VolumeGeometry::new([5, 6, 9], [7.8, 0.625, 0.625], [0.0; 3], AxisRoles::CANONICAL).unwrap();
        let refined = spine_column(&g);
        let out = build_high_risk_zone(&refined, 0.1).unwrap();
        assert_eq!(out.data(), refined.data());
    }

    #[test]
    fn errors() {
        let g = VolumeGeometry::canonical([3, 3, 3], [1.0; 3]).unwrap();
        let empty = LabelVolume::new(g.clone(), vec![0; 27], RefinedAnatomyLabel::dictionary()).unwrap();
        assert!(matches!(build_high_risk_zone(&empty, 5.0), Err(Error::NoSeedStructures)));
        let refined = spine_column(&VolumeGeometry::canonical([5, 3, 9], [1.0; 3]).unwrap());
        assert!(build_high_risk_zone(&refined, 0.0).is_err());
        assert!(build_high_risk_zone(&refined, -1.0).is_err());
    }

    #[test]
    fn idempotent_for_fixed_radius() {
        let g = VolumeGeometry::canonical([5, 6, 9], [1.0; 3]).unwrap();
        let once = build_high_risk_zone(&spine_column(&g), 2.0).unwrap();
        let twice = build_high_risk_zone(&once, 2.0).unwrap();
        assert_eq!(once, twice);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn dilation_is_monotone(seed in 0u64..1000, r1 in 0.2f64..4.0, extra in 0.0f64..3.0) {
            let g = VolumeGeometry::new([4, 10, 10], [2.0, 0.625, 1.0], [0.0; 3], AxisRoles::CANONICAL).unwrap();
            let seeds = seeded_mask(g.len(), seed, 0.02);
            let a = dilate_ellipsoid(&g, &seeds, r1);
            let b = dilate_ellipsoid(&g, &seeds, r1 + extra);
            prop_assert!(a.iter().zip(&b).all(|(&x, &y)| !x || y));
        }
    }
}
