//! Shared helpers for unit tests.

use nalgebra::{Matrix3, UnitQuaternion, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}
