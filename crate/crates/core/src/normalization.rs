//! Isotropic similarity normalization of pixels and world points.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::ProjectionMatrix;

const MIN_MEAN_RADIUS: f64 = 1e-12;

/// `T_u`: recenters pixels on their centroid and scales them to a mean
/// radius of sqrt(2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelNormalization {
    scale: f64,
    centroid: Vector2<f64>,
}

/// `T_p`: recenters world points on their centroid and scales them to a
/// mean radius of sqrt(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointNormalization {
    scale: f64,
    centroid: Vector3<f64>,
}

impl PixelNormalization {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            centroid: Vector2::zeros(),
        }
    }

    pub fn fit(us: &[Vector2<f64>]) -> Result<Self> {
        let (centroid, scale) = fit_isotropic(us, std::f64::consts::SQRT_2)?;
        Ok(Self { scale, centroid })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, u: &Vector2<f64>) -> Vector2<f64> {
        (u - self.centroid) * self.scale
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let s = self.scale;
        Matrix3::new(
            s,
            0.0,
            -s * self.centroid.x, //
            0.0,
            s,
            -s * self.centroid.y, //
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let s = 1.0 / self.scale;
        Matrix3::new(
            s,
            0.0,
            self.centroid.x, //
            0.0,
            s,
            self.centroid.y, //
            0.0,
            0.0,
            1.0,
        )
    }
}

impl PointNormalization {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            centroid: Vector3::zeros(),
        }
    }

    pub fn fit(ps: &[Vector3<f64>]) -> Result<Self> {
        let (centroid, scale) = fit_isotropic(ps, 3f64.sqrt())?;
        Ok(Self { scale, centroid })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.centroid) * self.scale
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let s = self.scale;
        let c = &self.centroid;
        Matrix4::new(
            s,
            0.0,
            0.0,
            -s * c.x, //
            0.0,
            s,
            0.0,
            -s * c.y, //
            0.0,
            0.0,
            s,
            -s * c.z, //
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix4<f64> {
        let s = 1.0 / self.scale;
        let c = &self.centroid;
        Matrix4::new(
            s, 0.0, 0.0, c.x, //
            0.0, s, 0.0, c.y, //
            0.0, 0.0, s, c.z, //
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

fn fit_isotropic<const D: usize>(
    xs: &[nalgebra::SVector<f64, D>],
    target_radius: f64,
) -> Result<(nalgebra::SVector<f64, D>, f64)> {
    if xs.is_empty() {
        return Err(Error::DegeneratePoints(0.0));
    }
    let n = xs.len() as f64;
    let centroid = xs.iter().sum::<nalgebra::SVector<f64, D>>() / n;
    let mean_radius = xs.iter().map(|x| (x - centroid).norm()).sum::<f64>() / n;
    if !(mean_radius >= MIN_MEAN_RADIUS) {
        return Err(Error::DegeneratePoints(mean_radius));
    }
    Ok((centroid, target_radius / mean_radius))
}

/// Maps a projection matrix estimated on normalized data back to the
/// original pixel and world frames: `P = T_u^-1 P~ T_p`.
pub fn denormalize_projection(
    p_norm: &ProjectionMatrix,
    tu: &PixelNormalization,
    tp: &PointNormalization,
) -> ProjectionMatrix {
    let m: Matrix3x4<f64> = tu.inverse_matrix() * p_norm.matrix() * tp.matrix();
    ProjectionMatrix::new(m).expect("similarities preserve a nonzero finite matrix")
}
