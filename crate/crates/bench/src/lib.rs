//! Fixtures shared by the benchmarks in `benches/`.

use tpi_core::simulate::{contrast_for_vm, NoiseModel, Polarization, SimConfig};
use tpi_core::model;

/// Pulsed run with `frames` frames and two photons per pulse.
pub fn pulsed(polarization: Polarization, frames: u64) -> SimConfig {
    let noise = match polarization {
        Polarization::Parallel => NoiseModel::Gaussian {
            sigma_mhz: model::sigma_from_tc(50.0).expect("positive t_c"),
        },
        Polarization::Orthogonal => NoiseModel::None,
    };
    SimConfig {
        polarization,
        noise,
        interference_contrast: contrast_for_vm(0.46).expect("v_m in range"),
        mean_photons_per_pulse: 2.0,
        num_frames: frames,
        seed: 5,
        ..SimConfig::default()
    }
}
