use rand::Rng;

use super::cloud::PointCloud;
use crate::error::Result;

/// Random rotation about the up (z) axis and uniform scale in [0.8, 1.2].
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R) -> Result<PointCloud> {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let scale = rng.random_range(0.8..=1.2);
    let (s, c) = angle.sin_cos();
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            [
                scale * (c * p[0] - s * p[1]),
                scale * (s * p[0] + c * p[1]),
                scale * p[2],
            ]
        })
        .collect();
    cloud.with_points(points)
}
