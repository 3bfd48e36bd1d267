use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, NoiseSpec, PoseSample};
use crate::error::{Error, Result};

/// Copy of `dataset` with contact error `eps ~ N(0, sigma_touch^2 I3)` per
/// sample and `N(0, sigma_camera^2)` added to every visible pixel coordinate.
pub fn apply_noise<R: Rng + ?Sized>(dataset: &Dataset, spec: NoiseSpec, rng: &mut R) -> Result<Dataset> {
    if !dataset.noise.is_zero() {
        return Err(Error::AlreadyNoisy);
    }
    Ok(Dataset {
        noise: spec,
        samples: noisy_samples(&dataset.samples, spec, rng)?,
        ..dataset.clone()
    })
}

/// [`apply_noise`] on a bare sample list, assumed clean.
pub fn noisy_samples<R: Rng + ?Sized>(samples: &[PoseSample], spec: NoiseSpec, rng: &mut R) -> Result<Vec<PoseSample>> {
    spec.validate()?;
    let touch = Normal::new(0.0, spec.sigma_touch).map_err(|e| Error::Config(e.to_string()))?;
    let camera = Normal::new(0.0, spec.sigma_camera).map_err(|e| Error::Config(e.to_string()))?;
    Ok(samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for e in &mut s.contact_noise {
                *e = touch.sample(rng);
            }
            for px in s.observations.iter_mut().filter_map(|o| o.pixel.as_mut()) {
                px.u += camera.sample(rng);
                px.v += camera.sample(rng);
            }
            s
        })
        .collect())
}
