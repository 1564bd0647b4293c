use super::{ImageVolume, LabelVolume};
use crate::error::{Error, Result};

/// Z-score normalization over all voxels (population std).
///
/// A constant image maps to all zeros.
pub fn zscore_normalize(image: &ImageVolume) -> ImageVolume {
    let n = image.data().len() as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let data = if std > 0.0 {
        image
            .data()
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect()
    } else {
        vec![0.0; image.data().len()]
    };
    ImageVolume::new(image.geometry().clone(), data).expect("finite by construction")
}

/// Maps each label id to `id / max_id`, where `max_id` is the largest id in
/// the dictionary (not the largest observed).
pub fn rescale_labels_unit(labels: &LabelVolume) -> Result<ImageVolume> {
    let max = labels
        .dictionary()
        .keys()
        .copied()
        .max()
        .filter(|&m| m > 0)
        .ok_or(Error::NoForegroundLabels)?;
    let data = labels
        .data()
        .iter()
        .map(|&v| (v as f64 / max as f64) as f32)
        .collect();
    ImageVolume::new(labels.geometry().clone(), data)
}
