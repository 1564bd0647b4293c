use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};

use super::{FeatureVector, VoxelRegion};
use crate::error::{Error, Result};
use crate::volume::VolumeGeometry;

pub const SHAPE_NAMES: [&str; 10] = [
    "shape_volume_mm3",
    "shape_surface_area_mm2",
    "shape_surface_to_volume_ratio",
    "shape_sphericity",
    "shape_max_3d_diameter",
    "shape_pca_major_axis",
    "shape_pca_minor_axis",
    "shape_pca_least_axis",
    "shape_elongation",
    "shape_flatness",
];

const FACES: [([i64; 3], usize); 6] = [
    ([1, 0, 0], 0),
    ([-1, 0, 0], 0),
    ([0, 1, 0], 1),
    ([0, -1, 0], 1),
    ([0, 0, 1], 2),
    ([0, 0, -1], 2),
];

pub fn shape_features<R: VoxelRegion + ?Sized>(region: &R, geometry: &VolumeGeometry) -> Result<FeatureVector> {
    let mut voxels = region.voxels().to_vec();
    if voxels.is_empty() {
        return Err(Error::EmptyCandidate);
    }
    voxels.sort_unstable();
    voxels.dedup();
    let sp = geometry.spacing();
    let face_area = [sp[1] * sp[2], sp[0] * sp[2], sp[0] * sp[1]];
    let set: HashSet<[i64; 3]> = voxels.iter().map(|v| v.map(|c| c as i64)).collect();

    let mut area = 0.0;
    let mut boundary: Vec<[f64; 3]> = Vec::new();
    for v in &voxels {
        let p = v.map(|c| c as i64);
        let mut exposed = false;
        for (d, axis) in FACES {
            if !set.contains(&[p[0] + d[0], p[1] + d[1], p[2] + d[2]]) {
                area += face_area[axis];
                exposed = true;
            }
        }
        if exposed {
            boundary.push(physical(v, sp));
        }
    }
    let volume = voxels.len() as f64 * geometry.voxel_volume();
    let sphericity = PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area;

    let mut diameter2: f64 = 0.0;
    for (i, a) in boundary.iter().enumerate() {
        for b in &boundary[i + 1..] {
            diameter2 = diameter2.max((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2));
        }
    }

    let [l1, l2, l3] = covariance_eigenvalues(&voxels, sp);
    let (elongation, flatness) = if l1 > 0.0 {
        ((l2 / l1).sqrt(), (l3 / l1).sqrt())
    } else {
        (1.0, 1.0)
    };
    FeatureVector::from_named(
        &SHAPE_NAMES,
        &[
            volume,
            area,
            area / volume,
            sphericity,
            diameter2.sqrt(),
            4.0 * l1.sqrt(),
            4.0 * l2.sqrt(),
            4.0 * l3.sqrt(),
            elongation,
            flatness,
        ],
    )
}

fn physical(v: &[usize; 3], sp: [f64; 3]) -> [f64; 3] {
    [v[0] as f64 * sp[0], v[1] as f64 * sp[1], v[2] as f64 * sp[2]]
}

/// Population covariance eigenvalues of physical coordinates, descending,
/// clamped at zero.
fn covariance_eigenvalues(voxels: &[[usize; 3]], sp: [f64; 3]) -> [f64; 3] {
    let n = voxels.len() as f64;
    let mut mean = [0.0; 3];
    for v in voxels {
        let p = physical(v, sp);
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    let mean = mean.map(|m| m / n);
    let mut cov = Matrix3::<f64>::zeros();
    for v in voxels {
        let p = physical(v, sp);
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    cov /= n;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}
