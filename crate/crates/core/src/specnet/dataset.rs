use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

/// Geometry of the images a dataset's rows were flattened from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn of(image: &Image) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            channels: image.channels(),
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offset subtracted from `[0, 1]` pixel values when images become model
/// inputs, so inputs are centred on zero.
pub const PIXEL_CENTER: f64 = 0.5;

/// `N×D` real inputs with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Array2<f64>,
    labels: Vec<u8>,
    split: Split,
    image_shape: Option<ImageShape>,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Input("dataset must contain at least one sample".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("labels must be 0 or 1, found {bad}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("inputs contain non-finite values".into()));
        }
        Ok(Self {
            inputs,
            labels,
            split,
            image_shape: None,
        })
    }

    /// Flattens equally shaped images into rows, centring pixel values by
    /// [`PIXEL_CENTER`].
    pub fn from_images(images: &[Image], labels: Vec<u8>, split: Split) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Input("dataset must contain at least one image".into()))?;
        let shape = ImageShape::of(first);
        let mut inputs = Array2::zeros((images.len(), shape.len()));
        for (mut row, img) in inputs.axis_iter_mut(Axis(0)).zip(images) {
            if ImageShape::of(img) != shape {
                return Err(Error::Shape("all images must share one shape".into()));
            }
            for (dst, &src) in row.iter_mut().zip(img.data()) {
                *dst = src - PIXEL_CENTER;
            }
        }
        let mut ds = Self::new(inputs, labels, split)?;
        ds.image_shape = Some(shape);
        Ok(ds)
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image_shape
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - pos, pos]
    }

    /// Rebuilds the `i`-th sample as an image (undoing the centring).
    pub fn image(&self, i: usize) -> Result<Image> {
        let shape = self
            .image_shape
            .ok_or_else(|| Error::Input("dataset was not built from images".into()))?;
        Image::from_vec(
            shape.width,
            shape.height,
            shape.channels,
            self.inputs.row(i).iter().map(|v| v + PIXEL_CENTER).collect(),
        )
    }

    pub fn images(&self) -> Result<Vec<Image>> {
        (0..self.len()).map(|i| self.image(i)).collect()
    }

    /// Subset by row indices, preserving order.
    pub fn select(&self, indices: &[usize], split: Split) -> Result<Self> {
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut ds = Self::new(inputs, labels, split)?;
        ds.image_shape = self.image_shape;
        Ok(ds)
    }
}
