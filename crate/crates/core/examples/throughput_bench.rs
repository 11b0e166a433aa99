//! Compares the per-image cost of the logit penalty with Macenko
//! normalization.

use spectral_decoupling::rng;
use spectral_decoupling::stain::{throughput_bench, StainReference};
use spectral_decoupling::synthgen::HeImageSpec;

fn main() -> spectral_decoupling::Result<()> {
    let spec = HeImageSpec { size: 64, ..HeImageSpec::default() };
    let mut r = rng::seeded(0);
    let images: Vec<_> = (0..16).map(|i| spec.render((i % 2) as u8, &mut r)).collect();
    let reference = StainReference::from_images(&images[..4])?;
    let report = throughput_bench(&images, 2, &reference)?;
    println!(
        "logit penalty {:.0} images/s, Macenko {:.0} images/s, ratio {:.0}",
        report.sd_penalty_per_sec,
        report.macenko_per_sec,
        report.ratio()
    );
    Ok(())
}
