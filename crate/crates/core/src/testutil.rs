use crate::instance::{build_instance, InstanceSpec};
use crate::moments::Moments;

/// Moments of the first full-rank instance at or after `seed`.
pub fn desk_moments(seed: u64, n_agents: usize, n_samples: usize, dim: usize, rho: f64) -> Moments {
    (0..50)
        .find_map(|k| {
            build_instance(&InstanceSpec::new(
                seed + 1000 * k,
                n_agents,
                n_samples,
                dim,
                rho,
            ))
            .ok()
        })
        .expect("no full-rank instance found")
        .moments
}

/// A primal step comfortably inside the stable range, paired with
/// `gamma2 = beta gamma1`.
pub fn stable_gamma1(mo: &Moments) -> f64 {
    0.1 / (mo.beta() * crate::linalg::spectral_norm(mo.c_hat()))
}
