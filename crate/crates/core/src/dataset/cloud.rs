use crate::error::{Error, Result};

/// A non-empty set of finite 3-D points with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, label: Option<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Degenerate(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points, label })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }

    /// Translates the centroid to the origin and scales the farthest point to
    /// unit norm.
    pub fn normalize_unit_sphere(&self) -> Result<PointCloud> {
        let c = self.centroid();
        let centered: Vec<[f64; 3]> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let r = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
        if !(r > 0.0) {
            return Err(Error::Degenerate(
                "all points coincide; the cloud has no scale".into(),
            ));
        }
        let points = centered.iter().map(|p| p.map(|v| v / r)).collect();
        Ok(PointCloud {
            points,
            label: self.label,
        })
    }

    /// Rebuilds the cloud with new coordinates, keeping the label.
    pub fn with_points(&self, points: Vec<[f64; 3]>) -> Result<PointCloud> {
        PointCloud::new(points, self.label)
    }
}

pub(crate) fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    cloud.normalize_unit_sphere()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![], None).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]], None).is_err());
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0]; 5], None).unwrap();
        assert!(matches!(c.normalize_unit_sphere(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalized_input_is_unchanged() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, -0.5, 0.0]], Some(2))
            .unwrap();
        let n = c.normalize_unit_sphere().unwrap();
        for (a, b) in c.points().iter().zip(n.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        assert_eq!(n.label, Some(2));
    }
}
