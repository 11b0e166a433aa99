//! Synthetic benchmarks: a texture-frequency classification task with
//! cutouts as a controllable shortcut, a two-feature gradient-starvation
//! dataset, and rendered H&E-like images.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::specnet::{LabeledDataset, Split};
use crate::stain::{recombine, ConcentrationMap, StainMatrix};

/// Placement attempts per cutout before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("{name} must be an increasing range, got ({lo}, {hi})")));
    }
    Ok(())
}

/// Core class signal: a horizontal sinusoid whose frequency (cycles per
/// image width) is drawn from a class-specific uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureSignal {
    pub base: f64,
    pub amplitude: f64,
    pub freq_neg: (f64, f64),
    pub freq_pos: (f64, f64),
}

impl Default for TextureSignal {
    fn default() -> Self {
        Self {
            base: 0.2,
            amplitude: 0.15,
            freq_neg: (2.0, 5.0),
            freq_pos: (4.0, 7.0),
        }
    }
}

impl TextureSignal {
    fn density(range: (f64, f64), f: f64) -> f64 {
        if f >= range.0 && f <= range.1 {
            1.0 / (range.1 - range.0)
        } else {
            0.0
        }
    }

    /// Label chosen by the Bayes rule on the true frequency. Where the two
    /// densities are equal the midpoint of the overlap splits the classes.
    pub fn oracle_label(&self, frequency: f64) -> u8 {
        let pn = Self::density(self.freq_neg, frequency);
        let pp = Self::density(self.freq_pos, frequency);
        if pp != pn {
            return u8::from(pp > pn);
        }
        let lo = self.freq_neg.0.max(self.freq_pos.0);
        let hi = self.freq_neg.1.min(self.freq_pos.1);
        u8::from(frequency >= (lo + hi) / 2.0)
    }

    /// Balanced accuracy of the Bayes rule, `½ ∫ max(p_neg, p_pos)`.
    pub fn bayes_accuracy(&self) -> f64 {
        let mut cuts = vec![self.freq_neg.0, self.freq_neg.1, self.freq_pos.0, self.freq_pos.1];
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2)
            .map(|w| {
                let mid = (w[0] + w[1]) / 2.0;
                let d = Self::density(self.freq_neg, mid).max(Self::density(self.freq_pos, mid));
                0.5 * d * (w[1] - w[0])
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticImageSpec {
    pub width: usize,
    pub height: usize,
    pub signal: TextureSignal,
    pub noise_sigma: f64,
    /// Accuracy the core signal alone must support.
    pub core_accuracy_ceiling: f64,
}

impl Default for SyntheticImageSpec {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            signal: TextureSignal::default(),
            noise_sigma: 0.1,
            core_accuracy_ceiling: 0.8,
        }
    }
}

impl SyntheticImageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        check_range("freq_neg", self.signal.freq_neg)?;
        check_range("freq_pos", self.signal.freq_pos)?;
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        let bayes = self.signal.bayes_accuracy();
        if bayes <= 0.5 || bayes < self.core_accuracy_ceiling {
            return Err(Error::Config(format!(
                "core signal supports accuracy {bayes:.4}, below the required {}",
                self.core_accuracy_ceiling
            )));
        }
        Ok(())
    }

    /// Draws one grayscale image; returns it with its frequency.
    pub fn render(&self, label: u8, rng: &mut rng::Rng) -> (Image, f64) {
        let range = if label == 1 { self.signal.freq_pos } else { self.signal.freq_neg };
        let f = rng.random_range(range.0..range.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
        let w = self.width as f64;
        let row: Vec<f64> = (0..self.width)
            .map(|x| self.signal.base + self.signal.amplitude * (2.0 * PI * f * x as f64 / w + phase).sin())
            .collect();
        let img = Image::from_fn(self.width, self.height, 1, |x, _, _| {
            (row[x] + noise.sample(rng)).clamp(0.0, 1.0)
        });
        (img, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoutSpec {
    pub n_cutouts: usize,
    pub cutout_size: usize,
    pub fill: f64,
    pub train_rate_neg: f64,
    pub train_rate_pos: f64,
    pub test_rate_pos: f64,
    pub test_rate_neg: f64,
    pub control: bool,
}

impl Default for CutoutSpec {
    fn default() -> Self {
        Self {
            n_cutouts: 16,
            cutout_size: 8,
            fill: 0.5,
            train_rate_neg: 0.25,
            train_rate_pos: 0.025,
            test_rate_pos: 1.0,
            test_rate_neg: 0.0,
            control: false,
        }
    }
}

impl CutoutSpec {
    /// Default rates with 4×4 cutouts, sized for 32×32 images.
    pub fn desk() -> Self {
        Self {
            cutout_size: 4,
            ..Self::default()
        }
    }

    /// Cutouts on every image of every split.
    pub fn control(self) -> Self {
        Self {
            control: true,
            train_rate_neg: 1.0,
            train_rate_pos: 1.0,
            test_rate_pos: 1.0,
            test_rate_neg: 1.0,
            ..self
        }
    }

    fn rates(&self) -> [f64; 4] {
        [self.train_rate_neg, self.train_rate_pos, self.test_rate_pos, self.test_rate_neg]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates().iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("cutout rates must be in [0, 1]".into()));
        }
        if self.control && self.rates().iter().any(|&r| r != 1.0) {
            return Err(Error::Config("a control spec must use rate 1 everywhere".into()));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return Err(Error::Config("cutout fill must be in [0, 1]".into()));
        }
        if self.n_cutouts > 0 && self.cutout_size == 0 {
            return Err(Error::Config("cutout size must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        if self.n_cutouts > 0
            && (self.cutout_size > width
                || self.cutout_size > height
                || self.n_cutouts * self.cutout_size * self.cutout_size > width * height)
        {
            return Err(Error::Config(format!(
                "{} cutouts of {}x{} do not fit a {width}x{height} image",
                self.n_cutouts, self.cutout_size, self.cutout_size
            )));
        }
        Ok(())
    }
}

/// Stamps `n_cutouts` non-overlapping squares of the fill value. Returns the
/// image and the mask of overwritten pixels.
pub fn apply_cutouts_with_mask(image: &Image, spec: &CutoutSpec, rng: &mut rng::Rng) -> Result<(Image, Vec<bool>)> {
    let (w, h) = (image.width(), image.height());
    spec.validate_for(w, h)?;
    let s = spec.cutout_size;
    let mut out = image.clone();
    let mut mask = vec![false; w * h];
    for index in 0..spec.n_cutouts {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x0 = rng.random_range(0..=w - s);
            let y0 = rng.random_range(0..=h - s);
            let free = (y0..y0 + s).all(|y| (x0..x0 + s).all(|x| !mask[y * w + x]));
            if !free {
                continue;
            }
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    mask[y * w + x] = true;
                    for c in 0..image.channels() {
                        out.set(x, y, c, spec.fill);
                    }
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Placement {
                index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok((out, mask))
}

pub fn apply_cutouts(image: &Image, spec: &CutoutSpec, rng: &mut rng::Rng) -> Result<Image> {
    Ok(apply_cutouts_with_mask(image, spec, rng)?.0)
}

/// Ground truth kept alongside each generated image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub label: u8,
    pub has_cutouts: bool,
    /// Texture frequency of the core signal.
    pub frequency: f64,
}

#[derive(Debug, Clone)]
pub struct CutoutDataset {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    pub train_meta: Vec<SampleMeta>,
    pub val_meta: Vec<SampleMeta>,
    pub test_meta: Vec<SampleMeta>,
}

fn split_salt(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    }
}

/// Balanced labels with exactly `round(rate · class_count)` cutout carriers
/// per class, in a seeded random order.
fn stratified_plan(n: usize, rate_neg: f64, rate_pos: f64, rng: &mut rng::Rng) -> Vec<(u8, bool)> {
    let half = n / 2;
    let k_neg = (rate_neg * half as f64).round() as usize;
    let k_pos = (rate_pos * half as f64).round() as usize;
    let mut plan: Vec<(u8, bool)> = (0..half)
        .map(|i| (0, i < k_neg))
        .chain((0..half).map(|i| (1, i < k_pos)))
        .collect();
    plan.shuffle(rng);
    plan
}

fn generate_split(
    img: &SyntheticImageSpec,
    cut: &CutoutSpec,
    n: usize,
    rates: (f64, f64),
    split: Split,
    seed: u64,
) -> Result<(LabeledDataset, Vec<SampleMeta>)> {
    let split_seed = rng::derive(seed, split_salt(split));
    let plan = stratified_plan(n, rates.0, rates.1, &mut rng::stream(split_seed, 0));
    let samples: Vec<(Image, SampleMeta)> = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(label, has_cutouts))| {
            let mut r = rng::stream(split_seed, i as u64 + 1);
            let (image, frequency) = img.render(label, &mut r);
            let image = if has_cutouts { apply_cutouts(&image, cut, &mut r)? } else { image };
            Ok((
                image,
                SampleMeta {
                    label,
                    has_cutouts,
                    frequency,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (images, meta): (Vec<Image>, Vec<SampleMeta>) = samples.into_iter().unzip();
    let labels = meta.iter().map(|m| m.label).collect();
    Ok((LabeledDataset::from_images(&images, labels, split)?, meta))
}

fn check_even(name: &str, n: usize) -> Result<()> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Config(format!("{name} must be even and positive, got {n}")));
    }
    Ok(())
}

/// Train, validation and test splits of the cutout benchmark.
///
/// The validation split holds `n_train / 10` images (rounded to an even
/// count) drawn with the training rates.
pub fn make_cutout_dataset(
    img: &SyntheticImageSpec,
    cut: &CutoutSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<CutoutDataset> {
    img.validate()?;
    cut.validate_for(img.width, img.height)?;
    check_even("n_train", n_train)?;
    check_even("n_test", n_test)?;
    let n_val = ((n_train / 20) * 2).max(2);
    let train_rates = (cut.train_rate_neg, cut.train_rate_pos);
    let test_rates = (cut.test_rate_neg, cut.test_rate_pos);
    let (train, train_meta) = generate_split(img, cut, n_train, train_rates, Split::Train, seed)?;
    let (val, val_meta) = generate_split(img, cut, n_val, train_rates, Split::Val, seed)?;
    let (test, test_meta) = generate_split(img, cut, n_test, test_rates, Split::Test, seed)?;
    Ok(CutoutDataset {
        train,
        val,
        test,
        train_meta,
        val_meta,
        test_meta,
    })
}

impl CutoutDataset {
    /// Writes every image as an 8-bit PNG under `dir/<split>/` plus
    /// `dir/manifest.csv` with columns `path,label,has_cutouts,split`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        export_splits(
            dir,
            &[
                (&self.train, Some(&self.train_meta)),
                (&self.val, Some(&self.val_meta)),
                (&self.test, Some(&self.test_meta)),
            ],
        )
    }
}

/// Exports image datasets as PNGs plus a manifest; `has_cutouts` is false
/// for splits without metadata.
pub fn export_splits(dir: impl AsRef<Path>, splits: &[(&LabeledDataset, Option<&Vec<SampleMeta>>)]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    w.write_record(["path", "label", "has_cutouts", "split"])?;
    for (data, meta) in splits {
        let name = data.split().as_str();
        std::fs::create_dir_all(dir.join(name))?;
        for (i, &label) in data.labels().iter().enumerate() {
            let rel = format!("{name}/{i:05}.png");
            data.image(i)?.save_png(dir.join(&rel))?;
            let cut = meta.is_some_and(|m| m[i].has_cutouts);
            w.write_record([rel, label.to_string(), cut.to_string(), name.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Two features: `A` agrees with the label for a `correlation` fraction of
/// training samples at a large margin, `B` always agrees at a small margin.
/// In the test split `A` agrees for exactly half the samples.
pub fn make_linear_starvation_dataset(
    n: usize,
    margin_strong: f64,
    margin_weak: f64,
    noise: f64,
    correlation: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    check_even("n", n)?;
    if !(0.5..1.0).contains(&correlation) {
        return Err(Error::Config(format!("correlation must be in [0.5, 1), got {correlation}")));
    }
    if !(margin_weak > 0.0 && margin_strong > 0.0 && (0.0..margin_weak).contains(&noise)) {
        return Err(Error::Config(
            "margins must be positive and noise in [0, margin_weak)".into(),
        ));
    }
    let build = |agree_frac: f64, split: Split| -> Result<LabeledDataset> {
        let mut r = rng::stream(seed, split_salt(split));
        let n_agree = (agree_frac * n as f64).round() as usize;
        let mut agree: Vec<bool> = (0..n).map(|i| i < n_agree).collect();
        agree.shuffle(&mut r);
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for (i, &a) in agree.iter().enumerate() {
            let label = (i % 2) as u8;
            let s = if label == 1 { 1.0 } else { -1.0 };
            let jitter = |r: &mut rng::Rng| if noise > 0.0 { r.random_range(-noise..noise) } else { 0.0 };
            x[[i, 0]] = if a { s } else { -s } * margin_strong + jitter(&mut r);
            x[[i, 1]] = s * margin_weak + jitter(&mut r);
            labels.push(label);
        }
        LabeledDataset::new(x, labels, split)
    };
    Ok((build(correlation, Split::Train)?, build(0.5, Split::Test)?))
}

/// Rendered H&E-like tiles. Haematoxylin carries a fine horizontal texture
/// and a coarse vertical texture whose frequencies depend on the class, plus
/// a small class-dependent level shift; eosin carries class-independent
/// texture. The default fine texture sits above the cutoff of heavy blur, so
/// blurred tiles lose most of their class signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeImageSpec {
    pub size: usize,
    #[serde(skip)]
    pub stains: StainMatrix,
    pub h_base: f64,
    /// Added to the haematoxylin level of positive samples.
    pub h_shift_pos: f64,
    /// Standard deviation of a per-image haematoxylin offset.
    pub h_jitter: f64,
    pub fine_amp: f64,
    pub fine_freq_neg: (f64, f64),
    pub fine_freq_pos: (f64, f64),
    pub coarse_amp: f64,
    pub coarse_freq_neg: (f64, f64),
    pub coarse_freq_pos: (f64, f64),
    pub e_base: f64,
    pub e_amp: f64,
    pub noise_sigma: f64,
    /// Multipliers on the rendered haematoxylin and eosin concentrations.
    pub intensity: [f64; 2],
}

impl Default for HeImageSpec {
    fn default() -> Self {
        Self {
            size: 32,
            stains: StainMatrix::standard(),
            h_base: 0.5,
            h_shift_pos: 0.05,
            h_jitter: 0.1,
            fine_amp: 0.4,
            fine_freq_neg: (6.0, 9.0),
            fine_freq_pos: (9.0, 12.0),
            coarse_amp: 0.1,
            coarse_freq_neg: (2.5, 3.5),
            coarse_freq_pos: (1.0, 2.0),
            e_base: 0.4,
            e_amp: 0.15,
            noise_sigma: 0.1,
            intensity: [1.0, 1.0],
        }
    }
}

impl HeImageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        for (name, r) in [
            ("fine_freq_neg", self.fine_freq_neg),
            ("fine_freq_pos", self.fine_freq_pos),
            ("coarse_freq_neg", self.coarse_freq_neg),
            ("coarse_freq_pos", self.coarse_freq_pos),
        ] {
            check_range(name, r)?;
        }
        if !(self.noise_sigma >= 0.0 && self.h_jitter >= 0.0) {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        if self.intensity.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Config("intensity multipliers must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn with_stains(self, stains: StainMatrix) -> Self {
        Self { stains, ..self }
    }

    pub fn concentrations(&self, label: u8, rng: &mut rng::Rng) -> ConcentrationMap {
        let s = self.size;
        let sf = s as f64;
        let pick = |neg: (f64, f64), pos: (f64, f64)| if label == 1 { pos } else { neg };
        let fine = pick(self.fine_freq_neg, self.fine_freq_pos);
        let coarse = pick(self.coarse_freq_neg, self.coarse_freq_pos);
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
        let f_fine = rng.random_range(fine.0..fine.1);
        let p_fine = rng.random_range(0.0..2.0 * PI);
        let f_coarse = rng.random_range(coarse.0..coarse.1);
        let p_coarse = rng.random_range(0.0..2.0 * PI);
        let offset = if self.h_jitter > 0.0 {
            Normal::new(0.0, self.h_jitter).expect("validated").sample(rng)
        } else {
            0.0
        };
        let h0 = self.h_base + if label == 1 { self.h_shift_pos } else { 0.0 } + offset;
        let f_e = rng.random_range(1.0..3.0);
        let p_e = rng.random_range(0.0..2.0 * PI);
        let mut values = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let (xf, yf) = (x as f64, y as f64);
                let h = h0
                    + self.fine_amp * (2.0 * PI * f_fine * xf / sf + p_fine).sin()
                    + self.coarse_amp * (2.0 * PI * f_coarse * yf / sf + p_coarse).sin()
                    + noise.sample(rng);
                let e = self.e_base + self.e_amp * (2.0 * PI * f_e * xf / sf + p_e).sin() + noise.sample(rng);
                values.push([h.max(0.0), e.max(0.0)]);
            }
        }
        ConcentrationMap::new(s, s, values).expect("nonnegative by construction")
    }

    pub fn render(&self, label: u8, rng: &mut rng::Rng) -> Image {
        recombine(&self.stains, &self.concentrations(label, rng).scaled(self.intensity))
    }
}

/// Balanced H&E dataset; sample `i` draws from stream `(seed, i)`.
pub fn make_he_dataset(spec: &HeImageSpec, n: usize, split: Split, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    check_even("n", n)?;
    let split_seed = rng::derive(seed, split_salt(split));
    let images: Vec<Image> = (0..n)
        .into_par_iter()
        .map(|i| spec.render((i % 2) as u8, &mut rng::stream(split_seed, i as u64)))
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    LabeledDataset::from_images(&images, labels, split)
}

/// Reads images listed in an exported manifest (`path,label,...,split`),
/// keeping rows of `split` when given. Paths resolve against the manifest's
/// directory.
pub fn load_manifest(manifest: impl AsRef<Path>, split: Option<Split>) -> Result<LabeledDataset> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_reader(std::fs::File::open(manifest).map_err(Error::file(manifest))?);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("manifest lacks a `{name}` column")))
    };
    let (path_col, label_col) = (col("path")?, col("label")?);
    let split_col = headers.iter().position(|h| h == "split");
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row_split = match split_col {
            Some(c) => Some(record[c].parse::<Split>()?),
            None => None,
        };
        if split.is_some() && row_split.is_some() && split != row_split {
            continue;
        }
        let label: u8 = record[label_col]
            .parse()
            .map_err(|_| Error::Parse(format!("bad label `{}`", &record[label_col])))?;
        images.push(Image::load(base.join(&record[path_col]))?);
        labels.push(label);
    }
    if images.is_empty() {
        return Err(Error::Input(format!("no images selected from {}", manifest.display())));
    }
    LabeledDataset::from_images(&images, labels, split.unwrap_or(Split::Test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_cutouts_is_identity() {
        let img = Image::filled(32, 32, 1, 0.2);
        let spec = CutoutSpec {
            n_cutouts: 0,
            ..CutoutSpec::default()
        };
        assert_eq!(apply_cutouts(&img, &spec, &mut rng::seeded(0)).unwrap(), img);
    }

    #[test]
    fn cutout_pixel_count_and_determinism() {
        let img = Image::filled(64, 64, 1, 0.2);
        let spec = CutoutSpec::default();
        let out = apply_cutouts(&img, &spec, &mut rng::seeded(3)).unwrap();
        assert_eq!(out.data().iter().filter(|&&v| v == 0.5).count(), 1024);
        assert_eq!(out, apply_cutouts(&img, &spec, &mut rng::seeded(3)).unwrap());
        let desk = apply_cutouts(&Image::filled(32, 32, 1, 0.2), &CutoutSpec::desk(), &mut rng::seeded(3)).unwrap();
        assert_eq!(desk.data().iter().filter(|&&v| v == 0.5).count(), 256);
    }

    #[test]
    fn impossible_placement_errors() {
        let spec = CutoutSpec {
            n_cutouts: 2,
            cutout_size: 5,
            ..CutoutSpec::default()
        };
        // two 5x5 squares never fit without overlap in 9x9
        assert!(matches!(
            apply_cutouts(&Image::new(9, 9, 1), &spec, &mut rng::seeded(0)),
            Err(Error::Placement { .. })
        ));
        assert!(apply_cutouts(&Image::new(8, 8, 1), &CutoutSpec::default(), &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn bayes_accuracy_of_default_signal() {
        let s = TextureSignal::default();
        assert!((s.bayes_accuracy() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(s.oracle_label(4.4), 0);
        assert_eq!(s.oracle_label(4.6), 1);
        assert_eq!(s.oracle_label(6.0), 1);
    }

    #[test]
    fn stratified_counts_and_determinism() {
        let img = SyntheticImageSpec::default();
        let d = make_cutout_dataset(&img, &CutoutSpec::desk(), 400, 100, 9).unwrap();
        assert_eq!(d.train.class_counts(), [200, 200]);
        let cut = |meta: &[SampleMeta], l: u8| meta.iter().filter(|m| m.label == l && m.has_cutouts).count();
        assert_eq!(cut(&d.train_meta, 0), 50);
        assert_eq!(cut(&d.train_meta, 1), 5);
        assert_eq!(cut(&d.test_meta, 1), 50);
        assert_eq!(cut(&d.test_meta, 0), 0);
        assert_eq!(d.val.len(), 40);
        let again = make_cutout_dataset(&img, &CutoutSpec::desk(), 400, 100, 9).unwrap();
        assert_eq!(again.train, d.train);
        assert_eq!(again.test, d.test);
        let control = make_cutout_dataset(&img, &CutoutSpec::desk().control(), 40, 20, 9).unwrap();
        assert!(control.train_meta.iter().all(|m| m.has_cutouts));
        assert!(make_cutout_dataset(&img, &CutoutSpec::desk(), 41, 20, 9).is_err());
    }

    #[test]
    fn export_round_trip() {
        let img = SyntheticImageSpec::default();
        let d = make_cutout_dataset(&img, &CutoutSpec::desk(), 20, 10, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.export(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert!(text.starts_with("path,label,has_cutouts,split\n"));
        assert_eq!(text.lines().count(), 1 + 20 + 2 + 10);
        let test = load_manifest(dir.path().join("manifest.csv"), Some(Split::Test)).unwrap();
        assert_eq!(test.labels(), d.test.labels());
        let bytes = |d: &LabeledDataset| d.images().unwrap().iter().map(Image::to_u8).collect::<Vec<_>>();
        assert_eq!(bytes(&test), bytes(&d.test));
    }

    #[test]
    fn starvation_dataset_rules() {
        let (train, test) = make_linear_starvation_dataset(200, 2.0, 0.5, 0.1, 0.95, 1).unwrap();
        let acc = |d: &LabeledDataset, f: usize| {
            d.inputs()
                .rows()
                .into_iter()
                .zip(d.labels())
                .filter(|(r, &l)| u8::from(r[f] > 0.0) == l)
                .count() as f64
                / d.len() as f64
        };
        assert_eq!(acc(&train, 0), 0.95);
        assert_eq!(acc(&test, 0), 0.5);
        assert_eq!(acc(&train, 1), 1.0);
        assert_eq!(acc(&test, 1), 1.0);
        assert!(make_linear_starvation_dataset(200, 2.0, 0.5, 0.6, 0.9, 1).is_err());
        assert!(make_linear_starvation_dataset(200, 2.0, 0.5, 0.1, 1.0, 1).is_err());
    }

    #[test]
    fn he_images_are_rgb_and_balanced() {
        let spec = HeImageSpec {
            size: 16,
            ..HeImageSpec::default()
        };
        let d = make_he_dataset(&spec, 10, Split::Test, 2).unwrap();
        assert_eq!(d.dim(), 16 * 16 * 3);
        assert_eq!(d.class_counts(), [5, 5]);
        assert_eq!(d, make_he_dataset(&spec, 10, Split::Test, 2).unwrap());
    }
}
