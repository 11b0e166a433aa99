//! Separates a rendered H&E tile into its two stains, halves the eosin, and
//! maps a stain-shifted tile back onto a reference appearance.

use spectral_decoupling::image::psnr;
use spectral_decoupling::rng;
use spectral_decoupling::stain::{
    estimate_stain_matrix, modify_intensity, normalize_to_reference, rgb_to_od, separate, StainMatrix, StainReference,
    DEFAULT_ALPHA, DEFAULT_BETA,
};
use spectral_decoupling::synthgen::HeImageSpec;

fn main() -> spectral_decoupling::Result<()> {
    let spec = HeImageSpec { size: 128, ..HeImageSpec::default() };
    let mut r = rng::seeded(7);
    let tile = spec.render(1, &mut r);

    let stains = estimate_stain_matrix(&rgb_to_od(&tile)?, DEFAULT_BETA, DEFAULT_ALPHA)?;
    let truth = StainMatrix::standard();
    println!(
        "estimated H off by {:.2}°, E off by {:.2}°",
        StainMatrix::angle_between(&stains.h(), &truth.h()),
        StainMatrix::angle_between(&stains.e(), &truth.e())
    );
    let conc = separate(&tile, &stains)?;
    println!("99th percentile concentrations {:?}", conc.max_concentrations());

    let pale = modify_intensity(&tile, 1.0, 0.5)?;
    println!("eosin halved: mean intensity {:.3} -> {:.3}", tile.mean(), pale.mean());

    let reference = StainReference::from_images(&[spec.render(0, &mut r), spec.render(1, &mut r)])?;
    let shifted = HeImageSpec { intensity: [1.4, 0.7], ..spec.with_stains(truth.spread(-10.0)?) }.render(1, &mut r);
    let normalized = normalize_to_reference(&shifted, &reference)?;
    println!(
        "mean intensity: reference tile {:.3}, shifted {:.3}, normalized {:.3}; PSNR normalized vs shifted {:.1} dB",
        tile.mean(),
        shifted.mean(),
        normalized.mean(),
        psnr(&normalized, &shifted)?
    );
    Ok(())
}
