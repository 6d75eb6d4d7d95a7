//! Mean-pixel sensor prototypes and nearest-prototype sensor resolution.

use crate::datagen::{mean_rgb, TactileImage};
use crate::error::{Error, Result};

/// Prototype of sensor `k` = average over its images of each image's mean RGB.
pub fn compute_prototypes<'a>(
    images: impl IntoIterator<Item = &'a TactileImage>,
    num_sensors: usize,
) -> Result<Vec<[f64; 3]>> {
    let mut sums = vec![[0.0f64; 3]; num_sensors];
    let mut counts = vec![0usize; num_sensors];
    for img in images {
        if img.sensor_id >= num_sensors {
            return Err(Error::SensorOutOfRange {
                index: img.sensor_id,
                count: num_sensors,
            });
        }
        let m = img.mean_pixel();
        for c in 0..3 {
            sums[img.sensor_id][c] += m[c];
        }
        counts[img.sensor_id] += 1;
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Empty(format!("sensor {k} has no training images")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.map(|v| v / n as f64))
        .collect())
}

pub fn resolve_sensor(image: &TactileImage, prototypes: &[[f64; 3]]) -> Result<usize> {
    resolve_sensor_pixels(&image.pixels, prototypes)
}

/// Index of the prototype nearest (L1) to the image's mean pixel; ties go to
/// the lowest index.
pub fn resolve_sensor_pixels(pixels: &[f32], prototypes: &[[f64; 3]]) -> Result<usize> {
    if prototypes.is_empty() {
        return Err(Error::Empty("no sensor prototypes".into()));
    }
    let m = mean_rgb(pixels);
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (k, p) in prototypes.iter().enumerate() {
        let d: f64 = (0..3).map(|c| (m[c] - p[c]).abs()).sum();
        if d < best_dist {
            best = k;
            best_dist = d;
        }
    }
    Ok(best)
}
