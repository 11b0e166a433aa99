//! Cuts a synthetic slide (tissue blob on a white background) into
//! overlapping tiles and drops the background ones.

use spectral_decoupling::tiler::{plan_grid, scan, BackgroundFilter};
use spectral_decoupling::Image;

fn main() -> spectral_decoupling::Result<()> {
    let slide = Image::from_fn(2600, 1800, 3, |x, y, c| {
        let (dx, dy) = (x as f64 - 1000.0, y as f64 - 800.0);
        if dx * dx / 700.0_f64.powi(2) + dy * dy / 500.0_f64.powi(2) < 1.0 {
            [0.7, 0.35, 0.6][c]
        } else {
            0.97
        }
    });
    let grid = plan_grid(slide.width(), slide.height(), 1024, 0.2)?;
    println!("stride {}, origins x {:?}, y {:?}", grid.stride, grid.xs, grid.ys);
    for rec in scan(&slide, &grid, &BackgroundFilter::default())? {
        println!(
            "({:>4}, {:>4}) tissue {:.3} {}",
            rec.x,
            rec.y,
            rec.tissue_fraction,
            if rec.kept { "kept" } else { "dropped" }
        );
    }
    Ok(())
}
