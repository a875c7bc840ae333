//! Food-location selection over a bowl point cloud.
//!
//! Every candidate site is scored by summing a multivariate Gaussian density,
//! centered at the site with the sample covariance of the masked cloud, over
//! the masked points. The highest-scoring site wins; ties go to the lowest
//! index.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::geometry::{PoseSE3, Vec3};
use crate::perception::PerceptionError;

/// Bowl geometry known in advance. The pose origin is the center of the
/// bowl's interior bottom; z points up out of the bowl.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowlGeometry {
    pub pose: PoseSE3,
    pub diameter: f64,
    /// Height of the spill guard above the bottom, meters.
    pub guard_height: f64,
}

impl BowlGeometry {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn center(&self) -> Vec3 {
        self.pose.position
    }

    pub fn to_bowl_frame(&self, world: &Vec3) -> Vec3 {
        self.pose.inverse().transform_point(world)
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.pose.transform_point(local)
    }
}

/// Point cloud of the food surface with the bowl prior attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodCloud {
    /// World-frame points, meters.
    pub points: Vec<Vec3>,
    pub bowl: BowlGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoodEstimatorConfig {
    /// Semi-axes of the horizontal mask ellipse as fractions of the radius.
    pub mask_shrink: [f64; 2],
    /// Covariance regularization added to the diagonal, m².
    pub covariance_epsilon: f64,
    /// Isotropic std used when fewer than four points survive the mask, m.
    pub fallback_sigma: f64,
    /// Height of the candidate sites above the bowl bottom, m.
    pub site_height: f64,
}

impl Default for FoodEstimatorConfig {
    fn default() -> Self {
        Self {
            mask_shrink: [0.8, 0.8],
            covariance_epsilon: 1e-6,
            fallback_sigma: 0.01,
            site_height: 0.03,
        }
    }
}

/// Binary mask: 1 inside the shrunken ellipse and the guard-height band.
pub fn psi_mask(x: &Vec3, bowl: &BowlGeometry, cfg: &FoodEstimatorConfig) -> u8 {
    psi_mask_local(&bowl.to_bowl_frame(x), bowl, cfg)
}

fn psi_mask_local(local: &Vec3, bowl: &BowlGeometry, cfg: &FoodEstimatorConfig) -> u8 {
    let a = cfg.mask_shrink[0] * bowl.radius();
    let b = cfg.mask_shrink[1] * bowl.radius();
    let inside = (local.x / a).powi(2) + (local.y / b).powi(2) <= 1.0;
    let in_band = local.z >= 0.0 && local.z <= bowl.guard_height;
    u8::from(inside && in_band)
}

/// Five candidate scooping/stabbing sites in the bowl frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoopSiteSet {
    pub sites: [Vec3; 5],
}

impl ScoopSiteSet {
    /// Center first, then ±half-radius along the bowl x and y axes.
    pub fn standard(bowl: &BowlGeometry, cfg: &FoodEstimatorConfig) -> Self {
        let h = 0.5 * bowl.radius();
        let z = cfg.site_height;
        Self {
            sites: [
                Vec3::new(0.0, 0.0, z),
                Vec3::new(h, 0.0, z),
                Vec3::new(-h, 0.0, z),
                Vec3::new(0.0, h, z),
                Vec3::new(0.0, -h, z),
            ],
        }
    }

    pub fn validate(&self, bowl: &BowlGeometry, cfg: &FoodEstimatorConfig) -> Result<(), PerceptionError> {
        let a = cfg.mask_shrink[0] * bowl.radius();
        let b = cfg.mask_shrink[1] * bowl.radius();
        for s in &self.sites {
            if !s.iter().all(|v| v.is_finite()) || (s.x / a).powi(2) + (s.y / b).powi(2) > 1.0 {
                return Err(PerceptionError::InvalidSites);
            }
        }
        Ok(())
    }

    pub fn world(&self, bowl: &BowlGeometry, i: usize) -> Vec3 {
        bowl.to_world(&self.sites[i])
    }
}

/// Result of scoring: chosen index, its world position and all log-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSelection {
    pub index: usize,
    pub site: Vec3,
    pub log_scores: [f64; 5],
    pub masked_points: usize,
}

/// Masked points in the bowl frame.
pub fn masked_local_points(cloud: &FoodCloud, cfg: &FoodEstimatorConfig) -> Vec<Vec3> {
    let inv = cloud.bowl.pose.inverse();
    cloud
        .points
        .iter()
        .map(|p| inv.transform_point(p))
        .filter(|p| psi_mask_local(p, &cloud.bowl, cfg) == 1)
        .collect()
}

/// Sample covariance (n − 1 normalization) plus `epsilon * I`, or the
/// isotropic fallback for fewer than four points.
pub fn cloud_covariance(points: &[Vec3], cfg: &FoodEstimatorConfig) -> Matrix3<f64> {
    if points.len() < 4 {
        return Matrix3::identity() * cfg.fallback_sigma.powi(2);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / (n - 1.0) + Matrix3::identity() * cfg.covariance_epsilon
}

/// Picks the site with the highest Gaussian-weighted food score.
pub fn select_scoop_site(
    cloud: &FoodCloud,
    sites: &ScoopSiteSet,
    cfg: &FoodEstimatorConfig,
) -> Result<SiteSelection, PerceptionError> {
    sites.validate(&cloud.bowl, cfg)?;
    if cloud.bowl.diameter <= 0.0 {
        return Err(PerceptionError::InvalidBowl);
    }
    let pts = masked_local_points(cloud, cfg);
    if pts.is_empty() {
        return Err(PerceptionError::NoFood);
    }
    let cov = cloud_covariance(&pts, cfg);
    let chol = cov.cholesky().ok_or(PerceptionError::Numerical("covariance not positive definite"))?;
    let det = cov.determinant();
    let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + det.ln());

    let mut log_scores = [f64::NEG_INFINITY; 5];
    for (i, s) in sites.sites.iter().enumerate() {
        let exponents: Vec<f64> = pts
            .iter()
            .map(|p| {
                let d = p - s;
                -0.5 * d.dot(&chol.solve(&d)) + log_norm
            })
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        log_scores[i] = m + exponents.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    }
    let mut index = 0;
    for i in 1..5 {
        if log_scores[i] > log_scores[index] {
            index = i;
        }
    }
    Ok(SiteSelection {
        index,
        site: sites.world(&cloud.bowl, index),
        log_scores,
        masked_points: pts.len(),
    })
}

/// Food surface height near a bowl-frame location, estimated from the
/// masked cloud as the median height of points within `radius`.
pub fn local_surface_height(cloud: &FoodCloud, cfg: &FoodEstimatorConfig, site: &Vec3, radius: f64) -> Option<f64> {
    let mut zs: Vec<f64> = masked_local_points(cloud, cfg)
        .into_iter()
        .filter(|p| (p.xy() - site.xy()).norm() <= radius)
        .map(|p| p.z)
        .collect();
    if zs.is_empty() {
        return None;
    }
    zs.sort_by(|a, b| a.total_cmp(b));
    Some(zs[zs.len() / 2])
}
