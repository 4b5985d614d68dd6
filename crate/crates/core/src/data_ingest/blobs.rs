use super::{DatasetHandle, IngestError};
use crate::samplers::{shuffle_in_place, RngStream};

/// Gaussian classes with unit covariance and mean `separation · e_{c mod dim}`,
/// min-max rescaled per feature to `[0, 1]` and row-shuffled.
pub fn make_gaussian_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<DatasetHandle, IngestError> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(IngestError::Invalid(
            "classes, per_class and dim must be positive".into(),
        ));
    }
    let samples = classes * per_class;
    let mut rng = RngStream::new(seed, 0);
    let mut raw = Vec::with_capacity(samples * dim);
    let mut raw_labels = Vec::with_capacity(samples);
    for c in 0..classes {
        for _ in 0..per_class {
            for k in 0..dim {
                let mean = if k == c % dim { separation } else { 0.0 };
                raw.push(mean + rng.standard_normal());
            }
            raw_labels.push(c);
        }
    }
    for k in 0..dim {
        let (lo, hi) = (0..samples)
            .map(|s| raw[s * dim + k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for s in 0..samples {
            let v = &mut raw[s * dim + k];
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
        }
    }
    let mut order: Vec<usize> = (0..samples).collect();
    shuffle_in_place(&mut rng, &mut order);
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for &s in &order {
        features.extend_from_slice(&raw[s * dim..(s + 1) * dim]);
        labels.push(raw_labels[s]);
    }
    DatasetHandle::new(samples, dim, features, labels, classes)
}
