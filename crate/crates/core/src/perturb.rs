//! Blur and sharpening perturbations, sharpness profiling, and severity
//! sweeps over a test set.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{mirror_index, Image};
use crate::metrics::mean_sd;
use crate::specnet::{evaluate_balanced_accuracy, LabeledDataset, Model};
use crate::stain;

pub const MIN_BLUR: usize = 2;
pub const MAX_BLUR: usize = 20;

/// Mean over an `n`×`n` window with mirrored borders, clipped to `[0, 1]`.
///
/// For even `n` the window covers `(n−1)/2` pixels before the centre and
/// one more after it.
pub fn box_blur(image: &Image, n: usize) -> Result<Image> {
    if !(MIN_BLUR..=MAX_BLUR).contains(&n) {
        return Err(Error::Config(format!(
            "blur kernel size must be in {MIN_BLUR}..={MAX_BLUR}, got {n}"
        )));
    }
    let lo = (n as isize - 1) / 2;
    let hi = n as isize - 1 - lo;
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let inv = 1.0 / n as f64;
    let horizontal = Image::from_fn(w, h, c, |x, y, ch| {
        (-lo..=hi)
            .map(|k| image.get(mirror_index(x as isize + k, w), y, ch))
            .sum::<f64>()
            * inv
    });
    Ok(Image::from_fn(w, h, c, |x, y, ch| {
        (-lo..=hi)
            .map(|k| horizontal.get(x, mirror_index(y as isize + k, h), ch))
            .sum::<f64>()
            * inv
    })
    .clamp01())
}

const SHARPEN: [[f64; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 9.0, -1.0], [-1.0, -1.0, -1.0]];
const LAPLACE: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

fn convolve3(image: &Image, kernel: &[[f64; 3]; 3]) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    Image::from_fn(w, h, c, |x, y, ch| {
        let mut acc = 0.0;
        for (dy, row) in kernel.iter().enumerate() {
            let sy = mirror_index(y as isize + dy as isize - 1, h);
            for (dx, k) in row.iter().enumerate() {
                if *k != 0.0 {
                    acc += k * image.get(mirror_index(x as isize + dx as isize - 1, w), sy, ch);
                }
            }
        }
        acc
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `(1−α)·x + α·sharpen(x)` before clipping.
pub fn sharpen_blend_unclipped(image: &Image, alpha: f64) -> Result<Image> {
    check_alpha(alpha)?;
    let sharp = convolve3(image, &SHARPEN);
    let mut out = image.clone();
    for (o, s) in out.data_mut().iter_mut().zip(sharp.data()) {
        *o = (1.0 - alpha) * *o + alpha * s;
    }
    Ok(out)
}

pub fn sharpen_blend(image: &Image, alpha: f64) -> Result<Image> {
    Ok(sharpen_blend_unclipped(image, alpha)?.clamp01())
}

/// Variance of the 4-neighbour Laplacian of the luminance.
pub fn laplace_variance(image: &Image) -> f64 {
    let lap = convolve3(&image.luminance(), &LAPLACE);
    let n = lap.data().len() as f64;
    let mean = lap.data().iter().sum::<f64>() / n;
    lap.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Number of grid points of a density profile.
pub const KDE_GRID: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct KdeProfile {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeProfile {
    /// Trapezoid integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) / 2.0)
            .sum()
    }

    pub fn mode(&self) -> f64 {
        let i = self
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.grid[i]
    }
}

/// Gaussian kernel density estimate with Silverman's bandwidth, evaluated
/// on an even grid over `[min − 3h, max + 3h]` and rescaled so the
/// trapezoid integral is exactly one.
pub fn kde_profile(values: &[f64]) -> Result<KdeProfile> {
    if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("density needs at least two finite values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = crate::metrics::percentile_sorted(&sorted, 0.75) - crate::metrics::percentile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = 0.9 * spread * n.powf(-0.2);
    if !(bandwidth > 0.0) {
        return Err(Error::Input("all values identical: zero bandwidth".into()));
    }
    let (lo, hi) = (sorted[0] - 3.0 * bandwidth, sorted[sorted.len() - 1] + 3.0 * bandwidth);
    let step = (hi - lo) / (KDE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = grid
        .par_iter()
        .map(|&g| {
            values
                .iter()
                .map(|v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    let mut profile = KdeProfile {
        grid,
        density,
        bandwidth,
    };
    let total = profile.integral();
    profile.density.iter_mut().for_each(|d| *d /= total);
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Blur,
    Sharpen,
    StainH,
    StainE,
}

impl SweepKind {
    pub const ALL: [SweepKind; 4] = [SweepKind::Blur, SweepKind::Sharpen, SweepKind::StainH, SweepKind::StainE];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Blur => "blur",
            SweepKind::Sharpen => "sharpen",
            SweepKind::StainH => "stain-h",
            SweepKind::StainE => "stain-e",
        }
    }

    /// Level that leaves images untouched.
    pub fn identity_level(self) -> f64 {
        match self {
            SweepKind::Blur => 1.0,
            SweepKind::Sharpen => 0.0,
            SweepKind::StainH | SweepKind::StainE => 1.0,
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(SweepKind::Blur),
            "sharpen" => Ok(SweepKind::Sharpen),
            "stain-h" | "stain_h" => Ok(SweepKind::StainH),
            "stain-e" | "stain_e" => Ok(SweepKind::StainE),
            other => Err(Error::Parse(format!("unknown sweep kind `{other}`"))),
        }
    }
}

/// Severity levels of one perturbation, from identity to most severe.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSweep {
    pub kind: SweepKind,
    pub levels: Vec<f64>,
}

impl PerturbationSweep {
    /// Blur: identity then `n = 2..=20`; sharpen: `α = 0, 0.1, …, 1`;
    /// stain: multipliers `1.0, 0.9, …, 0.0`.
    pub fn standard(kind: SweepKind) -> Self {
        let levels = match kind {
            SweepKind::Blur => std::iter::once(1.0)
                .chain((MIN_BLUR..=MAX_BLUR).map(|n| n as f64))
                .collect(),
            SweepKind::Sharpen => (0..=10).map(|i| i as f64 / 10.0).collect(),
            SweepKind::StainH | SweepKind::StainE => (0..=10).map(|i| (10 - i) as f64 / 10.0).collect(),
        };
        Self { kind, levels }
    }

    pub fn new(kind: SweepKind, levels: Vec<f64>) -> Result<Self> {
        let sweep = Self { kind, levels };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("a sweep needs at least one level".into()));
        }
        for &l in &self.levels {
            let ok = match self.kind {
                SweepKind::Blur => l == 1.0 || (l.fract() == 0.0 && (MIN_BLUR as f64..=MAX_BLUR as f64).contains(&l)),
                SweepKind::Sharpen | SweepKind::StainH | SweepKind::StainE => (0.0..=1.0).contains(&l),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "level {l} is not valid for a {} sweep",
                    self.kind.as_str()
                )));
            }
        }
        let severity = |l: f64| match self.kind {
            SweepKind::Blur | SweepKind::Sharpen => l,
            SweepKind::StainH | SweepKind::StainE => -l,
        };
        if self.levels.windows(2).any(|w| severity(w[1]) < severity(w[0])) {
            return Err(Error::Config(
                "levels must be ordered from identity to most severe".into(),
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self, level: f64) -> bool {
        level == self.kind.identity_level()
    }

    /// Applies one level to an image, quantizing the result to 8 bits once.
    pub fn apply(&self, image: &Image, level: f64) -> Result<Image> {
        if self.is_identity(level) {
            return Ok(image.clone());
        }
        let out = match self.kind {
            SweepKind::Blur => box_blur(image, level as usize)?,
            SweepKind::Sharpen => sharpen_blend(image, level)?,
            SweepKind::StainH => stain::modify_intensity(image, level, 1.0)?,
            SweepKind::StainE => stain::modify_intensity(image, 1.0, level)?,
        };
        Ok(out.quantized())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    pub mean_balanced_accuracy: f64,
    /// Sample standard deviation across seed-models (0 for one model).
    pub sd: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: [&str; 5] = ["kind", "level", "mean_balanced_accuracy", "sd", "n_seeds"];

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_HEADER)?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.rows {
            w.write_record([
                self.kind.as_str().to_string(),
                r.level.to_string(),
                r.mean_balanced_accuracy.to_string(),
                r.sd.to_string(),
                r.per_seed.len().to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn row(&self, level: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.level == level)
    }
}

/// Evaluates every model on the test set transformed at each level.
pub fn run_sweep(models: &[Model], data: &LabeledDataset, sweep: &PerturbationSweep) -> Result<SweepTable> {
    if models.is_empty() {
        return Err(Error::Input("sweep needs at least one model".into()));
    }
    sweep.validate()?;
    let originals = data.images()?;
    let rows = sweep
        .levels
        .par_iter()
        .map(|&level| {
            let transformed;
            let eval_data = if sweep.is_identity(level) {
                data
            } else {
                let imgs: Vec<Image> = originals.iter().map(|img| sweep.apply(img, level)).collect::<Result<_>>()?;
                transformed = LabeledDataset::from_images(&imgs, data.labels().to_vec(), data.split())?;
                &transformed
            };
            let per_seed: Vec<f64> = models
                .iter()
                .map(|m| evaluate_balanced_accuracy(m, eval_data))
                .collect::<Result<_>>()?;
            let (mean, sd) = mean_sd(&per_seed);
            Ok(SweepRow {
                level,
                mean_balanced_accuracy: mean,
                sd,
                per_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        kind: sweep.kind,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut r = rng::seeded(seed);
        Image::from_fn(w, h, c, |_, _, _| r.random_range(0.0..1.0))
    }

    #[test]
    fn blur_examples() {
        let flat = Image::filled(7, 5, 3, 0.4);
        let b = box_blur(&flat, 5).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.4).abs() < 1e-15));
        let img = Image::from_vec(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(box_blur(&img, 2).unwrap().get(0, 0, 0), 0.5);
        assert!(box_blur(&img, 1).is_err());
        assert!(box_blur(&img, 21).is_err());
        let noisy = random_image(1, 16, 16, 1);
        assert!(laplace_variance(&box_blur(&noisy, 3).unwrap()) < laplace_variance(&noisy));
    }

    #[test]
    fn blur_matches_direct_window_mean() {
        let img = random_image(2, 9, 6, 2);
        for n in [2, 3, 4, 7] {
            let lo = (n as isize - 1) / 2;
            let b = box_blur(&img, n).unwrap();
            for y in 0..6 {
                for x in 0..9 {
                    let mut acc = 0.0;
                    for dy in 0..n as isize {
                        for dx in 0..n as isize {
                            acc += img.get(mirror_index(x as isize - lo + dx, 9), mirror_index(y as isize - lo + dy, 6), 1);
                        }
                    }
                    assert!((b.get(x, y, 1) - acc / (n * n) as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sharpen_examples() {
        let img = random_image(3, 8, 8, 3);
        assert_eq!(sharpen_blend(&img, 0.0).unwrap(), img);
        let flat = Image::filled(4, 4, 1, 0.3);
        let s = sharpen_blend(&flat, 0.7).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let mut dot = Image::new(5, 5, 1);
        dot.set(2, 2, 0, 0.1);
        let s = sharpen_blend_unclipped(&dot, 1.0).unwrap();
        assert!((s.get(2, 2, 0) - 0.9).abs() < 1e-15);
        assert!(sharpen_blend(&img, 1.1).is_err());
    }

    #[test]
    fn laplace_of_constant_is_zero() {
        assert_eq!(laplace_variance(&Image::filled(6, 6, 3, 0.2)), 0.0);
        let checker = Image::from_fn(8, 8, 1, |x, y, _| ((x + y) % 2) as f64);
        assert!(laplace_variance(&checker) > laplace_variance(&box_blur(&checker, 2).unwrap()));
    }

    #[test]
    fn kde_examples() {
        let p = kde_profile(&[-1.0, 1.0]).unwrap();
        assert!((p.integral() - 1.0).abs() < 1e-12);
        for i in 0..KDE_GRID {
            assert!((p.density[i] - p.density[KDE_GRID - 1 - i]).abs() < 1e-12);
        }
        assert!(kde_profile(&[2.0, 2.0, 2.0]).is_err());
        assert!(kde_profile(&[2.0]).is_err());
    }

    #[test]
    fn sweep_levels() {
        let blur = PerturbationSweep::standard(SweepKind::Blur);
        assert_eq!(blur.levels.len(), 20);
        assert_eq!(blur.levels[1], 2.0);
        assert!(blur.validate().is_ok());
        let stain = PerturbationSweep::standard(SweepKind::StainE);
        assert_eq!(stain.levels.first(), Some(&1.0));
        assert_eq!(stain.levels.last(), Some(&0.0));
        assert!(PerturbationSweep::new(SweepKind::Sharpen, vec![0.5, 0.2]).is_err());
        assert!(PerturbationSweep::new(SweepKind::Blur, vec![2.5]).is_err());
        assert_eq!("stain-h".parse::<SweepKind>().unwrap(), SweepKind::StainH);
    }
}
