//! Macenko stain separation for H&E images.
//!
//! Intensities are converted to optical density `od = −ln(max(I, 1) / 255)`
//! on 8-bit values, where stains mix linearly: `od = S · c` with `S` the 3×2
//! stain matrix and `c` the per-pixel (haematoxylin, eosin) concentrations.

use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, SymmetricEigen, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::{to_u8, Image};
use crate::metrics::percentile;
use crate::specnet::sd_penalty_eq1;

/// Optical-density threshold below which a pixel counts as background.
pub const DEFAULT_BETA: f64 = 0.15;
/// Angle percentile (and `100 − α`) used to pick the extreme stain directions.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Percentile of concentrations used as the per-stain maximum.
pub const MAX_PERCENTILE: f64 = 99.0;
/// Second/first eigenvalue ratio under which the OD cloud is treated as a
/// single direction.
pub const RANK_TOLERANCE: f64 = 1e-3;

/// Per-pixel optical density, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalDensity {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vector3<f64>>,
}

fn check_rgb(image: &Image) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::Shape(format!(
            "stain operations need RGB images, got {} channels",
            image.channels()
        )));
    }
    Ok(())
}

/// OD of an 8-bit level.
#[inline]
pub fn level_to_od(level: u8) -> f64 {
    -(f64::from(level.max(1)) / 255.0).ln()
}

pub fn rgb_to_od(image: &Image) -> Result<OpticalDensity> {
    check_rgb(image)?;
    let lut: Vec<f64> = (0..=255u8).map(level_to_od).collect();
    let pixels = image
        .data()
        .chunks_exact(3)
        .map(|p| Vector3::new(lut[to_u8(p[0]) as usize], lut[to_u8(p[1]) as usize], lut[to_u8(p[2]) as usize]))
        .collect();
    Ok(OpticalDensity {
        width: image.width(),
        height: image.height(),
        pixels,
    })
}

/// `I = 255 · exp(−od)` rounded to 8 bits.
pub fn od_to_rgb(od: &OpticalDensity) -> Image {
    let data = od
        .pixels
        .iter()
        .flat_map(|v| v.iter().map(|&d| f64::from(to_u8((-d).exp())) / 255.0).collect::<Vec<_>>())
        .collect();
    Image::from_vec(od.width, od.height, 3, data).expect("dimensions preserved")
}

/// Unit-norm, nonnegative haematoxylin (column 0) and eosin (column 1)
/// optical-density vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainMatrix {
    m: Matrix3x2<f64>,
}

impl StainMatrix {
    pub fn new(h: [f64; 3], e: [f64; 3]) -> Result<Self> {
        let h = unit_nonnegative(Vector3::from(h))?;
        let e = unit_nonnegative(Vector3::from(e))?;
        if h.cross(&e).norm() < 1e-6 {
            return Err(Error::SingularStain);
        }
        Ok(Self {
            m: Matrix3x2::from_columns(&[h, e]),
        })
    }

    /// Conventional H&E optical-density vectors.
    pub fn standard() -> Self {
        Self::new([0.65, 0.70, 0.29], [0.07, 0.99, 0.11]).expect("valid constants")
    }

    pub fn h(&self) -> Vector3<f64> {
        self.m.column(0).into()
    }

    pub fn e(&self) -> Vector3<f64> {
        self.m.column(1).into()
    }

    pub fn matrix(&self) -> &Matrix3x2<f64> {
        &self.m
    }

    /// Unit vector orthogonal to both stains, completing a 3×3 basis.
    pub fn complement(&self) -> Vector3<f64> {
        self.h().cross(&self.e()).normalize()
    }

    /// Least-squares solver `(SᵀS)⁻¹Sᵀ`.
    fn pseudo_inverse(&self) -> Result<Matrix2x3<f64>> {
        let gram: Matrix2<f64> = self.m.transpose() * self.m;
        if gram.determinant().abs() < 1e-10 {
            return Err(Error::SingularStain);
        }
        let inv = gram.try_inverse().ok_or(Error::SingularStain)?;
        Ok(inv * self.m.transpose())
    }

    /// Rotates both stain vectors by `degrees` about the complement axis,
    /// moving them apart (positive) or together (negative). Used to build
    /// stain-shifted test data.
    pub fn spread(&self, degrees: f64) -> Result<Self> {
        let axis = nalgebra::Unit::new_normalize(self.complement());
        let half = degrees.to_radians() / 2.0;
        let h = nalgebra::Rotation3::from_axis_angle(&axis, -half) * self.h();
        let e = nalgebra::Rotation3::from_axis_angle(&axis, half) * self.e();
        Self::new(h.into(), e.into())
    }

    /// Angle in degrees between two unit vectors.
    pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

fn unit_nonnegative(v: Vector3<f64>) -> Result<Vector3<f64>> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Input(format!(
            "stain vector must be nonnegative and finite, got {v:?}"
        )));
    }
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::SingularStain);
    }
    Ok(v / n)
}

/// Macenko estimate of the stain matrix from the OD of tissue pixels.
pub fn estimate_stain_matrix(od: &OpticalDensity, beta: f64, alpha: f64) -> Result<StainMatrix> {
    estimate_from_pixels(od.pixels.iter(), beta, alpha)
}

fn estimate_from_pixels<'a>(
    pixels: impl Iterator<Item = &'a Vector3<f64>>,
    beta: f64,
    alpha: f64,
) -> Result<StainMatrix> {
    if !(0.0..50.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 50), got {alpha}")));
    }
    let tissue: Vec<Vector3<f64>> = pixels.filter(|v| v.iter().any(|&c| c >= beta)).copied().collect();
    if tissue.len() < 2 {
        return Err(Error::NoTissue(format!(
            "{} pixels above the OD threshold {beta}",
            tissue.len()
        )));
    }
    let n = tissue.len() as f64;
    let mean = tissue.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for v in &tissue {
        let d = v - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let ratio = l2.max(0.0) / l1;
    if ratio < RANK_TOLERANCE {
        return Err(Error::RankDeficient { ratio });
    }
    let orient = |v: Vector3<f64>| if v.sum() < 0.0 { -v } else { v };
    let v1 = orient(eig.eigenvectors.column(order[0]).into());
    let v2 = orient(eig.eigenvectors.column(order[1]).into());

    let mut angles: Vec<f64> = tissue.iter().map(|v| v.dot(&v2).atan2(v.dot(&v1))).collect();
    let lo = percentile(&mut angles, alpha / 100.0);
    let hi = percentile(&mut angles, 1.0 - alpha / 100.0);
    let direction = |phi: f64| -> Vector3<f64> {
        let v = v1 * phi.cos() + v2 * phi.sin();
        v.map(|c| c.max(0.0))
    };
    let (a, b) = (direction(lo), direction(hi));
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(Error::RankDeficient { ratio });
    }
    let (a, b) = (a.normalize(), b.normalize());
    let a_is_h = a[0] > b[0] || (a[0] == b[0] && a[2] >= b[2]);
    let (h, e) = if a_is_h { (a, b) } else { (b, a) };
    StainMatrix::new(h.into(), e.into()).map_err(|err| match err {
        Error::SingularStain => Error::RankDeficient { ratio },
        other => other,
    })
}

/// Per-pixel stain concentrations, `[h, e]` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<[f64; 2]>,
}

impl ConcentrationMap {
    pub fn new(width: usize, height: usize, values: Vec<[f64; 2]>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} concentration pairs for a {width}x{height} image",
                values.len()
            )));
        }
        if values.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Input("concentrations must be finite and nonnegative".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Percentile (`0..=100`) of one stain's concentrations.
    pub fn percentile(&self, stain: usize, p: f64) -> f64 {
        let mut v: Vec<f64> = self.values.iter().map(|c| c[stain]).collect();
        percentile(&mut v, p / 100.0)
    }

    pub fn max_concentrations(&self) -> [f64; 2] {
        [self.percentile(0, MAX_PERCENTILE), self.percentile(1, MAX_PERCENTILE)]
    }

    pub fn scaled(&self, factors: [f64; 2]) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .map(|c| [c[0] * factors[0], c[1] * factors[1]])
                .collect(),
        }
    }
}

/// Least-squares concentrations from OD, clipped at zero.
pub fn separate_od(od: &OpticalDensity, stains: &StainMatrix) -> Result<ConcentrationMap> {
    let pinv = stains.pseudo_inverse()?;
    let values = od
        .pixels
        .iter()
        .map(|v| {
            let c: Vector2<f64> = pinv * v;
            [c[0].max(0.0), c[1].max(0.0)]
        })
        .collect();
    Ok(ConcentrationMap {
        width: od.width,
        height: od.height,
        values,
    })
}

pub fn separate(image: &Image, stains: &StainMatrix) -> Result<ConcentrationMap> {
    separate_od(&rgb_to_od(image)?, stains)
}

/// `od = S · c` for every pixel, without quantization.
pub fn recombine_od(stains: &StainMatrix, conc: &ConcentrationMap) -> OpticalDensity {
    OpticalDensity {
        width: conc.width,
        height: conc.height,
        pixels: conc
            .values
            .iter()
            .map(|c| stains.matrix() * Vector2::new(c[0], c[1]))
            .collect(),
    }
}

/// `I = 255 · exp(−S · c)`, rounded to 8 bits.
pub fn recombine(stains: &StainMatrix, conc: &ConcentrationMap) -> Image {
    od_to_rgb(&recombine_od(stains, conc))
}

fn check_multiplier(name: &str, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Config(format!("{name} must be in [0, 1], got {m}")));
    }
    Ok(())
}

/// Scales the haematoxylin and eosin concentrations of an image, estimating
/// its stain matrix first.
pub fn modify_intensity(image: &Image, m_h: f64, m_e: f64) -> Result<Image> {
    let stains = estimate_stain_matrix(&rgb_to_od(image)?, DEFAULT_BETA, DEFAULT_ALPHA)?;
    modify_intensity_with(image, &stains, m_h, m_e)
}

pub fn modify_intensity_with(image: &Image, stains: &StainMatrix, m_h: f64, m_e: f64) -> Result<Image> {
    check_multiplier("m_h", m_h)?;
    check_multiplier("m_e", m_e)?;
    let conc = separate(image, stains)?;
    Ok(recombine(stains, &conc.scaled([m_h, m_e])))
}

/// Target stain appearance for normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainReference {
    pub stains: StainMatrix,
    /// 99th-percentile haematoxylin and eosin concentrations.
    pub max_concentrations: [f64; 2],
}

impl StainReference {
    pub fn new(stains: StainMatrix, max_concentrations: [f64; 2]) -> Result<Self> {
        if max_concentrations.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Input(format!(
                "reference maxima must be positive, got {max_concentrations:?}"
            )));
        }
        Ok(Self {
            stains,
            max_concentrations,
        })
    }

    /// Estimates the stain matrix on the pooled pixels of `images` and takes
    /// the 99th percentile of the pooled concentrations.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Input("reference needs at least one image".into()));
        }
        let ods: Vec<OpticalDensity> = images.iter().map(rgb_to_od).collect::<Result<_>>()?;
        let stains = estimate_from_pixels(ods.iter().flat_map(|o| o.pixels.iter()), DEFAULT_BETA, DEFAULT_ALPHA)?;
        let pinv = stains.pseudo_inverse()?;
        let mut h = Vec::new();
        let mut e = Vec::new();
        for v in ods.iter().flat_map(|o| o.pixels.iter()) {
            let c: Vector2<f64> = pinv * v;
            h.push(c[0].max(0.0));
            e.push(c[1].max(0.0));
        }
        let q = MAX_PERCENTILE / 100.0;
        Self::new(stains, [percentile(&mut h, q), percentile(&mut e, q)])
    }

    /// Text form: three lines holding the rows `H`, `E` and their unit
    /// complement (the 3×3 stain basis), then one line with the two maxima.
    pub fn to_text(&self) -> String {
        let row = |v: Vector3<f64>| format!("{} {} {}", v[0], v[1], v[2]);
        format!(
            "{}\n{}\n{}\n{} {}\n",
            row(self.stains.h()),
            row(self.stains.e()),
            row(self.stains.complement()),
            self.max_concentrations[0],
            self.max_concentrations[1]
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Parse(format!("stain reference: cannot parse `{t}`")))
            })
            .collect::<Result<_>>()?;
        if nums.len() != 11 {
            return Err(Error::Parse(format!(
                "stain reference needs 9 matrix entries and 2 maxima, found {} numbers",
                nums.len()
            )));
        }
        let stains = StainMatrix::new([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5]])?;
        Self::new(stains, [nums[9], nums[10]])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }
}

/// Rescales concentrations so their 99th percentiles match the reference and
/// recombines them with the reference stain matrix.
pub fn normalize_to_reference(image: &Image, reference: &StainReference) -> Result<Image> {
    let od = rgb_to_od(image)?;
    let stains = estimate_stain_matrix(&od, DEFAULT_BETA, DEFAULT_ALPHA)?;
    let conc = separate_od(&od, &stains)?;
    let own = conc.max_concentrations();
    if own.iter().any(|&m| m <= 0.0) {
        return Err(Error::NoTissue(
            "a stain has zero 99th-percentile concentration".into(),
        ));
    }
    let factors = [
        reference.max_concentrations[0] / own[0],
        reference.max_concentrations[1] / own[1],
    ];
    Ok(recombine(&reference.stains, &conc.scaled(factors)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputReport {
    /// Images per second for the logit penalty on a 512×1 batch.
    pub sd_penalty_per_sec: f64,
    /// Images per second for Macenko normalization.
    pub macenko_per_sec: f64,
}

impl ThroughputReport {
    pub fn ratio(&self) -> f64 {
        self.sd_penalty_per_sec / self.macenko_per_sec
    }
}

/// Batch size of the logit penalty benchmark.
pub const BENCH_LOGIT_BATCH: usize = 512;

/// Measures the cost of the logit penalty (per image of a 512-image batch)
/// against Macenko normalization of each image in `images`.
pub fn throughput_bench(images: &[Image], warmup: usize, reference: &StainReference) -> Result<ThroughputReport> {
    if images.is_empty() {
        return Err(Error::Input("benchmark needs at least one image".into()));
    }
    let logits = ndarray::Array2::from_shape_fn((BENCH_LOGIT_BATCH, 1), |(i, _)| (i as f64 * 0.37).sin());
    let mut sink = 0.0;
    for _ in 0..warmup {
        sink += sd_penalty_eq1(logits.view(), 0.01)?;
    }
    let iters = warmup.max(100) * 10;
    let start = Instant::now();
    for _ in 0..iters {
        sink += sd_penalty_eq1(std::hint::black_box(logits.view()), 0.01)?;
    }
    let sd_secs = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);

    for img in images.iter().cycle().take(warmup.min(images.len())) {
        std::hint::black_box(normalize_to_reference(img, reference)?);
    }
    let start = Instant::now();
    for img in images {
        std::hint::black_box(normalize_to_reference(img, reference)?);
    }
    let mac_secs = start.elapsed().as_secs_f64();

    Ok(ThroughputReport {
        sd_penalty_per_sec: (iters * BENCH_LOGIT_BATCH) as f64 / sd_secs.max(1e-12),
        macenko_per_sec: images.len() as f64 / mac_secs.max(1e-12),
    })
}
