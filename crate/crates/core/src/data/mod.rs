//! Image/mask samples: synthetic generation, PNG datasets on disk, resizing,
//! splitting and mask-safe augmentation.

mod augment;
mod io;
mod synth;

pub use augment::{augment, Augmentation};
pub use io::{
    load_dataset, load_gray, load_image, load_mask, read_manifest, save_dataset, save_gray, save_image, save_mask,
    save_probability, write_manifest,
    Layout, LoadReport, ManifestEntry, Rejection,
};
pub use synth::{synth_generate, SynthSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image with its lesion mask.
///
/// The image is stored channels-first (`[3, H, W]`, values in [0, 1]) so it
/// feeds the networks directly; the mask is `[H, W]` with values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: Tensor,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let s = Self {
            id: id.into(),
            image,
            mask,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.mask.shape() else {
            return Err(Error::shape(format!("{}: mask must be [H, W]", self.id)));
        };
        if self.image.shape() != [3, *h, *w] {
            return Err(Error::shape(format!(
                "{}: image {:?} vs mask {:?}",
                self.id,
                self.image.shape(),
                self.mask.shape()
            )));
        }
        if !self.mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidSpec(format!("{}: mask is not binary", self.id)));
        }
        if !self.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSpec(format!("{}: image outside [0, 1]", self.id)));
        }
        Ok(())
    }

    pub fn lesion_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.len() as f64
    }
}

pub type Dataset = Vec<Sample>;

/// Nearest-neighbour resize of image and mask with the same index map
/// (`src = floor(dst·in/out)`), so masks stay binary.
pub fn resize_nearest(sample: &Sample, (th, tw): (usize, usize)) -> Result<Sample> {
    if th == 0 || tw == 0 {
        return Err(Error::InvalidTarget(format!("{th}x{tw}")));
    }
    let (h, w) = (sample.height(), sample.width());
    let ys: Vec<usize> = (0..th).map(|o| o * h / th).collect();
    let xs: Vec<usize> = (0..tw).map(|o| o * w / tw).collect();
    let pick = |src: &[f64], planes: usize| {
        let mut out = Vec::with_capacity(planes * th * tw);
        for p in 0..planes {
            for &y in &ys {
                out.extend(xs.iter().map(|&x| src[(p * h + y) * w + x]));
            }
        }
        out
    };
    Ok(Sample {
        id: sample.id.clone(),
        image: Tensor::new(vec![3, th, tw], pick(sample.image.data(), 3))?,
        mask: Tensor::new(vec![th, tw], pick(sample.mask.data(), 1))?,
    })
}

/// Deterministic shuffled split; `fraction` of the samples go to validation.
pub fn split(dataset: &[Sample], fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidSpec(format!("split fraction {fraction}")));
    }
    let n = dataset.len();
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::DegenerateSplit {
            train: n - n_val,
            val: n_val,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train: Dataset = train_idx.iter().map(|&i| dataset[i].clone()).collect();
    let mut val: Dataset = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    train.sort_by(|a, b| a.id.cmp(&b.id));
    val.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((train, val))
}

/// Stack samples into an `[N, 3, H, W]` image batch and `[N, 1, H, W]` mask batch.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    let masks = samples
        .iter()
        .map(|s| s.mask.clone().reshape(vec![1, s.height(), s.width()]))
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}
