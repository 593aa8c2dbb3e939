//! Flips and quarter turns applied identically to image and mask.

use rand::Rng;

use super::Sample;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Number of counter-clockwise quarter turns (0..4); only used for square samples.
    pub quarter_turns: u8,
}

impl Augmentation {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_h: rng.random(),
            flip_v: rng.random(),
            quarter_turns: rng.random_range(0..4),
        }
    }

    /// Source coordinate for destination `(y, x)` in an `h`×`w` plane.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        let (mut y, mut x) = (y, x);
        if self.flip_v {
            y = h - 1 - y;
        }
        if self.flip_h {
            x = w - 1 - x;
        }
        if h == w {
            for _ in 0..self.quarter_turns {
                (y, x) = (x, w - 1 - y);
            }
        }
        (y, x)
    }
}

fn remap(t: &Tensor, planes: usize, h: usize, w: usize, a: &Augmentation) -> Tensor {
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = a.source(y, x, h, w);
                out.push(src[(p * h + sy) * w + sx]);
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same extents")
}

pub fn augment(sample: &Sample, a: &Augmentation) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    Sample {
        id: sample.id.clone(),
        image: remap(&sample.image, 3, h, w, a),
        mask: remap(&sample.mask, 1, h, w, a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_quarter_turns_are_identity() {
        let image = Tensor::from_fn(vec![3, 4, 4], |i| i as f64 / 48.0);
        let mask = Tensor::from_fn(vec![4, 4], |i| (i % 5 == 0) as u8 as f64);
        let s = Sample::new("a", image, mask).unwrap();
        let turn = Augmentation {
            quarter_turns: 1,
            ..Default::default()
        };
        let mut t = s.clone();
        for _ in 0..4 {
            t = augment(&t, &turn);
        }
        assert_eq!(t, s);
        assert_ne!(augment(&s, &turn), s);
    }

    #[test]
    fn image_and_mask_move_together() {
        let image = Tensor::from_fn(vec![3, 3, 3], |i| ((i % 9) == 2) as u8 as f64);
        let mask = Tensor::from_fn(vec![3, 3], |i| (i == 2) as u8 as f64);
        let s = Sample::new("a", image, mask).unwrap();
        let a = Augmentation {
            flip_h: true,
            flip_v: true,
            quarter_turns: 3,
        };
        let t = augment(&s, &a);
        for c in 0..3 {
            assert_eq!(&t.image.data()[c * 9..(c + 1) * 9], t.mask.data());
        }
    }
}
