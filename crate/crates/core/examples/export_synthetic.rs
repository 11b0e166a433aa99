//! Writes the cutout benchmark as PNGs with a manifest and reads the test
//! split back.

use spectral_decoupling::synthgen::{load_manifest, make_cutout_dataset, CutoutSpec, SyntheticImageSpec};
use spectral_decoupling::specnet::Split;

fn main() -> spectral_decoupling::Result<()> {
    let data = make_cutout_dataset(&SyntheticImageSpec::default(), &CutoutSpec::desk(), 200, 100, 0)?;
    let with_cutouts = data.train_meta.iter().filter(|m| m.has_cutouts).count();
    println!("train: {} images, {with_cutouts} with cutouts", data.train.len());
    let dir = std::env::temp_dir().join("sdlab-export-example");
    data.export(&dir)?;
    let test = load_manifest(dir.join("manifest.csv"), Some(Split::Test))?;
    println!("reloaded {} test images, class counts {:?}, from {}", test.len(), test.class_counts(), dir.display());
    Ok(())
}
