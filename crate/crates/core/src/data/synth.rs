//! Synthetic dermoscopy-like images: skin background, soft-edged ellipse
//! lesions, hair strokes drawn over the image only, and pixel noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    /// Inclusive range of ellipses per lesion.
    pub ellipses: (usize, usize),
    /// Ellipse semi-axes as fractions of the image size.
    pub radius: (f64, f64),
    /// Mean skin colour and per-channel jitter.
    pub skin: [f64; 3],
    pub skin_jitter: f64,
    /// Lesion colour relative to the skin: channel-wise darkening weights.
    pub lesion_tint: [f64; 3],
    /// Darkening strength range.
    pub contrast: (f64, f64),
    /// Inclusive range of hair strokes.
    pub hairs: (usize, usize),
    /// Width of the soft lesion border in pixels.
    pub edge_softness: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 250,
            size: 64,
            ellipses: (1, 3),
            radius: (0.1, 0.26),
            skin: [0.86, 0.66, 0.56],
            skin_jitter: 0.07,
            lesion_tint: [0.55, 0.75, 0.8],
            contrast: (0.3, 0.7),
            hairs: (0, 12),
            edge_softness: 1.5,
            noise: 0.02,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.count < 1 {
            return bad("count must be at least 1");
        }
        if self.size < 16 {
            return bad("size must be at least 16");
        }
        if self.ellipses.0 < 1 || self.ellipses.0 > self.ellipses.1 {
            return bad("ellipse range must be non-empty and start at 1 or more");
        }
        if !(0.0 < self.radius.0 && self.radius.0 <= self.radius.1 && self.radius.1 < 0.5) {
            return bad("radius range must lie in (0, 0.5)");
        }
        if !(0.0 <= self.contrast.0 && self.contrast.0 <= self.contrast.1 && self.contrast.1 <= 1.0) {
            return bad("contrast range must lie in [0, 1]");
        }
        if self.hairs.0 > self.hairs.1 {
            return bad("hair range is empty");
        }
        if self.noise < 0.0 || self.edge_softness <= 0.0 || self.skin_jitter < 0.0 {
            return bad("noise, jitter and edge softness must be non-negative");
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalized radius: ≤ 1 inside.
    fn q(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

/// Generate `spec.count` samples; sample `i` draws from its own ChaCha stream,
/// so the result depends only on these settings.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let width = spec.count.to_string().len().max(4);
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let (image, mask) = render(spec, &mut rng);
            Sample::new(format!("synth_{i:0width$}"), image, mask)
        })
        .collect()
}

fn render(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let n = spec.size;
    let s = n as f64;
    let skin: Vec<f64> = spec
        .skin
        .iter()
        .map(|c| (c + rng.random_range(-spec.skin_jitter..=spec.skin_jitter)).clamp(0.05, 1.0))
        .collect();
    let shade_dir = rng.random_range(0.0..std::f64::consts::TAU);
    let shade_amp = rng.random_range(0.0..0.12);

    let count = rng.random_range(spec.ellipses.0..=spec.ellipses.1);
    let mut ellipses: Vec<Ellipse> = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(spec.radius.0..=spec.radius.1) * s;
        let b = rng.random_range(spec.radius.0..=spec.radius.1) * s;
        let (cx, cy) = match ellipses.first() {
            None => (rng.random_range(0.3..0.7) * s, rng.random_range(0.3..0.7) * s),
            Some(e) => {
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                let r = rng.random_range(0.3..0.9) * e.a.min(e.b);
                ((e.cx + r * t.cos()).clamp(0.0, s), (e.cy + r * t.sin()).clamp(0.0, s))
            }
        };
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        ellipses.push(Ellipse {
            cx,
            cy,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
        });
    }
    let contrast = rng.random_range(spec.contrast.0..=spec.contrast.1);
    let mottling = (rng.random_range(0.05..0.3), rng.random_range(0.0..std::f64::consts::TAU));

    let mut image = vec![0.0; 3 * n * n];
    let mut mask = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = (px / s - 0.5, py / s - 0.5);
            let shade = 1.0 + shade_amp * (u * shade_dir.cos() + v * shade_dir.sin()) - 0.15 * (u * u + v * v);
            let mut alpha: f64 = 0.0;
            let mut inside = false;
            for e in &ellipses {
                let q = e.q(px, py);
                inside |= q <= 1.0;
                let dist = (1.0 - q) * e.a.min(e.b);
                alpha = alpha.max((0.5 + dist / spec.edge_softness).clamp(0.0, 1.0));
            }
            mask[y * n + x] = inside as u8 as f64;
            let texture = 1.0 + 0.1 * (mottling.0 * (px + 0.7 * py) + mottling.1).sin();
            for c in 0..3 {
                let base = skin[c] * shade;
                let lesion = base * (1.0 - contrast * spec.lesion_tint[c] * texture.min(1.0 / contrast.max(1e-9)));
                image[(c * n + y) * n + x] = base + alpha * (lesion - base);
            }
        }
    }

    let strokes = rng.random_range(spec.hairs.0..=spec.hairs.1);
    for _ in 0..strokes {
        draw_hair(&mut image, n, rng);
    }

    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("noise level validated");
        for v in &mut image {
            *v += normal.sample(rng);
        }
    }
    for v in &mut image {
        *v = v.clamp(0.0, 1.0);
    }
    (
        Tensor::new(vec![3, n, n], image).expect("image extents"),
        Tensor::new(vec![n, n], mask).expect("mask extents"),
    )
}

/// Cubic Bézier stroke, anti-aliased by distance to sampled curve points.
fn draw_hair(image: &mut [f64], n: usize, rng: &mut ChaCha8Rng) {
    let s = n as f64;
    let pts: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.random_range(-0.1..1.1) * s, rng.random_range(-0.1..1.1) * s))
        .collect();
    let radius = rng.random_range(0.35..0.8);
    let colour = [
        rng.random_range(0.08..0.25),
        rng.random_range(0.06..0.2),
        rng.random_range(0.05..0.18),
    ];
    let mut cover = vec![0.0f64; n * n];
    let steps = 6 * n;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let mt = 1.0 - t;
        let w = [mt * mt * mt, 3.0 * mt * mt * t, 3.0 * mt * t * t, t * t * t];
        let cx: f64 = w.iter().zip(&pts).map(|(w, p)| w * p.0).sum();
        let cy: f64 = w.iter().zip(&pts).map(|(w, p)| w * p.1).sum();
        let reach = radius + 1.0;
        let (x0, x1) = ((cx - reach).floor().max(0.0) as usize, (cx + reach).ceil().min(s - 1.0).max(0.0) as usize);
        let (y0, y1) = ((cy - reach).floor().max(0.0) as usize, (cy + reach).ceil().min(s - 1.0).max(0.0) as usize);
        if cx + reach < 0.0 || cy + reach < 0.0 || cx - reach > s || cy - reach > s {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let a = (radius + 0.5 - d).clamp(0.0, 1.0);
                let c = &mut cover[y * n + x];
                *c = c.max(a);
            }
        }
    }
    for (p, &a) in cover.iter().enumerate() {
        if a > 0.0 {
            for (c, col) in colour.iter().enumerate() {
                let v = &mut image[c * n * n + p];
                *v += a * (col - *v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            count: 5,
            ..SynthSpec::default()
        };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
    }

    #[test]
    fn hair_never_touches_the_mask() {
        let with = SynthSpec {
            count: 20,
            hairs: (12, 12),
            ..SynthSpec::default()
        };
        let without = SynthSpec { hairs: (0, 0), ..with.clone() };
        let a = synth_generate(&with).unwrap();
        let b = synth_generate(&without).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mask, y.mask);
        }
        assert!(a.iter().zip(&b).any(|(x, y)| x.image != y.image));
    }

    #[test]
    fn lesion_fraction_over_a_thousand_samples() {
        let spec = SynthSpec {
            count: 1000,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let mean = ds.iter().map(Sample::lesion_fraction).sum::<f64>() / ds.len() as f64;
        assert!((0.05..=0.40).contains(&mean), "mean lesion fraction {mean}");
        assert!(ds.iter().all(|s| s.lesion_fraction() > 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec { count: 0, ..SynthSpec::default() },
            SynthSpec { size: 8, ..SynthSpec::default() },
            SynthSpec { ellipses: (0, 2), ..SynthSpec::default() },
        ] {
            assert!(matches!(synth_generate(&spec), Err(Error::InvalidSpec(_))));
        }
    }
}
