//! Anisotropic 3D volumes shared by every pipeline stage.
//!
//! All volumes are stored in one canonical orientation: axis 0 runs
//! anterior-posterior (anterior increasing), axis 1 runs cranio-caudal
//! (superior increasing) and axis 2 runs laterally (patient left increasing).
//! Voxel data is a flat row-major buffer with axis 2 varying fastest, so the
//! linear index of `(i, j, k)` is `(i * ny + j) * nz + k`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod nifti;
mod normalize;
mod resample;

pub use nifti::{read_volume, write_volume, NiftiPayload};
pub use normalize::{rescale_labels_unit, zscore_normalize};
pub use resample::{resample, ResampleMode};

/// Anatomical axis together with its positive direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnatomicalAxis {
    /// Increases toward anterior.
    AnteriorPosterior,
    /// Increases toward the head.
    CranioCaudal,
    /// Increases toward patient left.
    Lateral,
}

impl AnatomicalAxis {
    /// Unit direction of the positive index direction in RAS+ world space.
    pub fn world_direction(self) -> [f64; 3] {
        match self {
            AnatomicalAxis::AnteriorPosterior => [0.0, 1.0, 0.0],
            AnatomicalAxis::CranioCaudal => [0.0, 0.0, 1.0],
            AnatomicalAxis::Lateral => [-1.0, 0.0, 0.0],
        }
    }
}

/// Assignment of grid axes to anatomical axes; always a bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[AnatomicalAxis; 3]", into = "[AnatomicalAxis; 3]")]
pub struct AxisRoles([AnatomicalAxis; 3]);

impl AxisRoles {
    pub const CANONICAL: AxisRoles = AxisRoles([
        AnatomicalAxis::AnteriorPosterior,
        AnatomicalAxis::CranioCaudal,
        AnatomicalAxis::Lateral,
    ]);

    pub fn new(roles: [AnatomicalAxis; 3]) -> Result<Self> {
        let distinct = roles[0] != roles[1] && roles[1] != roles[2] && roles[0] != roles[2];
        if !distinct {
            return Err(Error::InvalidGeometry(format!(
                "axis roles {roles:?} are not a bijection"
            )));
        }
        Ok(AxisRoles(roles))
    }

    pub fn roles(&self) -> [AnatomicalAxis; 3] {
        self.0
    }

    pub fn axis_of(&self, role: AnatomicalAxis) -> usize {
        self.0.iter().position(|r| *r == role).expect("bijection")
    }
}

impl Default for AxisRoles {
    fn default() -> Self {
        Self::CANONICAL
    }
}

impl TryFrom<[AnatomicalAxis; 3]> for AxisRoles {
    type Error = Error;
    fn try_from(value: [AnatomicalAxis; 3]) -> Result<Self> {
        AxisRoles::new(value)
    }
}

impl From<AxisRoles> for [AnatomicalAxis; 3] {
    fn from(value: AxisRoles) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    #[serde(default)]
    axis_roles: AxisRoles,
}

impl VolumeGeometry {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        axis_roles: AxisRoles,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!("dims {dims:?} must be >= 1")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "spacing {spacing:?} must be positive and finite"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!("origin {origin:?} not finite")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            axis_roles,
        })
    }

    /// Canonically oriented geometry with the origin at zero.
    pub fn canonical(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3], AxisRoles::CANONICAL)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn axis_roles(&self) -> AxisRoles {
        self.axis_roles
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Grid axis that runs cranio-caudally.
    pub fn cc_axis(&self) -> usize {
        self.axis_roles.axis_of(AnatomicalAxis::CranioCaudal)
    }

    #[inline]
    pub fn index(&self, [i, j, k]: [usize; 3]) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    /// Offset of a voxel center from the origin along each grid axis, in mm.
    pub fn grid_mm(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.spacing[0],
            p[1] * self.spacing[1],
            p[2] * self.spacing[2],
        ]
    }

    /// RAS+ world position of a (possibly fractional) voxel coordinate.
    pub fn world(&self, p: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (a, role) in self.axis_roles.roles().iter().enumerate() {
            let dir = role.world_direction();
            for (wc, d) in w.iter_mut().zip(dir) {
                *wc += d * p[a] * self.spacing[a];
            }
        }
        w
    }

    pub fn same_grid(&self, other: &VolumeGeometry) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.axis_roles == other.axis_roles
    }

    pub fn ensure_same(&self, other: &VolumeGeometry, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: dims {:?}/{:?}, spacing {:?}/{:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    geometry: VolumeGeometry,
    data: Vec<f32>,
}

impl ImageVolume {
    pub fn new(geometry: VolumeGeometry, data: Vec<f32>) -> Result<Self> {
        check_len(&geometry, data.len())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite intensity {v}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: VolumeGeometry, value: f32) -> Self {
        let data = vec![value; geometry.len()];
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, p: [usize; 3]) -> f32 {
        self.data[self.geometry.index(p)]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceVolume {
    geometry: VolumeGeometry,
    data: Vec<f32>,
}

impl ConfidenceVolume {
    pub fn new(geometry: VolumeGeometry, data: Vec<f32>) -> Result<Self> {
        check_len(&geometry, data.len())?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ConfidenceOutOfRange(*v as f64));
        }
        Ok(Self { geometry, data })
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, p: [usize; 3]) -> f32 {
        self.data[self.geometry.index(p)]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

pub type LabelDictionary = BTreeMap<u32, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: VolumeGeometry,
    data: Vec<u32>,
    dictionary: LabelDictionary,
}

impl LabelVolume {
    /// Label 0 must be named "background"; every voxel label must be named.
    pub fn new(geometry: VolumeGeometry, data: Vec<u32>, dictionary: LabelDictionary) -> Result<Self> {
        check_len(&geometry, data.len())?;
        match dictionary.get(&0) {
            Some(name) if name == "background" => {}
            _ => {
                return Err(Error::InvalidVolume(
                    "label 0 must be named \"background\"".into(),
                ))
            }
        }
        let mut seen = vec![false; dictionary.keys().next_back().map_or(1, |m| *m as usize + 1)];
        for &v in &data {
            if (v as usize) < seen.len() {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    if !dictionary.contains_key(&v) {
                        return Err(Error::InvalidVolume(format!("label {v} not in dictionary")));
                    }
                }
            } else {
                return Err(Error::InvalidVolume(format!("label {v} not in dictionary")));
            }
        }
        Ok(Self {
            geometry,
            data,
            dictionary,
        })
    }

    /// Binary mask with labels {0: background, 1: foreground}.
    pub fn binary(geometry: VolumeGeometry, mask: Vec<bool>) -> Result<Self> {
        let data = mask.into_iter().map(u32::from).collect();
        Self::new(geometry, data, binary_dictionary())
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn dictionary(&self) -> &LabelDictionary {
        &self.dictionary
    }

    pub fn at(&self, p: [usize; 3]) -> u32 {
        self.data[self.geometry.index(p)]
    }

    pub fn label_id(&self, name: &str) -> Option<u32> {
        self.dictionary
            .iter()
            .find_map(|(id, n)| (n == name).then_some(*id))
    }

    pub fn foreground(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != 0).collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn into_parts(self) -> (VolumeGeometry, Vec<u32>, LabelDictionary) {
        (self.geometry, self.data, self.dictionary)
    }
}

pub fn binary_dictionary() -> LabelDictionary {
    BTreeMap::from([(0, "background".to_string()), (1, "foreground".to_string())])
}

/// Which volume type a file is interpreted as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Image,
    Label,
    Confidence,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Image(ImageVolume),
    Label(LabelVolume),
    Confidence(ConfidenceVolume),
}

impl Volume {
    pub fn geometry(&self) -> &VolumeGeometry {
        match self {
            Volume::Image(v) => v.geometry(),
            Volume::Label(v) => v.geometry(),
            Volume::Confidence(v) => v.geometry(),
        }
    }

    pub fn into_image(self) -> Result<ImageVolume> {
        match self {
            Volume::Image(v) => Ok(v),
            _ => Err(Error::InvalidArgument("expected an image volume".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            Volume::Label(v) => Ok(v),
            _ => Err(Error::InvalidArgument("expected a label volume".into())),
        }
    }

    pub fn into_confidence(self) -> Result<ConfidenceVolume> {
        match self {
            Volume::Confidence(v) => Ok(v),
            _ => Err(Error::InvalidArgument("expected a confidence volume".into())),
        }
    }
}

fn check_len(geometry: &VolumeGeometry, len: usize) -> Result<()> {
    if geometry.len() != len {
        return Err(Error::InvalidVolume(format!(
            "data length {len} does not match dims {:?}",
            geometry.dims()
        )));
    }
    Ok(())
}

/// 26-neighborhood offsets (excluding the center).
pub(crate) fn neighbors26() -> impl Iterator<Item = [i64; 3]> {
    (-1..=1).flat_map(|a| {
        (-1..=1).flat_map(move |b| {
            (-1..=1).filter_map(move |c| (a != 0 || b != 0 || c != 0).then_some([a, b, c]))
        })
    })
}
