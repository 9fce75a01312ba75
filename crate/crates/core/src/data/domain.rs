use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIZE: usize = 32;

/// Shared shape vocabulary. A domain's labels index into its own class list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
    Cross,
    Bar,
    Ring,
}

impl ShapeClass {
    /// Nominal `(width, height)` for extent `s`.
    fn extent(self, s: f64) -> (f64, f64) {
        match self {
            ShapeClass::Bar => (s, s / 3.0),
            _ => (s, s),
        }
    }

    /// Whether offset `(dx, dy)` from the centre lies inside the shape of extent `s`.
    fn contains(self, dx: f64, dy: f64, s: f64) -> bool {
        if s <= 0.0 {
            return false;
        }
        let r = s / 2.0;
        match self {
            ShapeClass::Circle => dx * dx + dy * dy <= r * r,
            ShapeClass::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeClass::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
            ShapeClass::Cross => {
                let arm = s / 6.0;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
            ShapeClass::Bar => dx.abs() <= r && dy.abs() <= s / 6.0,
            ShapeClass::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Flat,
    Stripes,
    /// Uniform per-pixel jitter of the background colour.
    Noise,
}

/// Per-channel RGB range colours are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorRange {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl ColorRange {
    pub const fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R, grayscale: bool) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (i, v) in c.iter_mut().enumerate() {
            *v = lerp(self.lo[i], self.hi[i], rng.gen::<f64>());
        }
        if grayscale {
            let l = (c[0] + c[1] + c[2]) / 3.0;
            c = [l; 3];
        }
        c
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Style {
    pub foreground: ColorRange,
    pub background: ColorRange,
    pub texture: Texture,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Draw only a band along the shape boundary.
    pub outline: bool,
    /// Replace every pixel `v` by `1 − v` after rendering.
    pub inverted: bool,
    pub grayscale: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub domain_id: usize,
    pub style: Style,
    pub classes: Vec<ShapeClass>,
    pub sizes: SplitSizes,
    /// Object extent range in pixels.
    pub object_size: (f64, f64),
    pub seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.classes.is_empty() {
            errs.push(format!("domain {}: classes must be nonempty", self.name));
        }
        let (lo, hi) = self.object_size;
        if !(lo > 0.0 && lo <= hi && hi <= IMAGE_SIZE as f64) {
            errs.push(format!(
                "domain {}: object_size must satisfy 0 < lo ≤ hi ≤ {IMAGE_SIZE}",
                self.name
            ));
        }
        if !(self.style.noise_sigma >= 0.0 && self.style.noise_sigma.is_finite()) {
            errs.push(format!("domain {}: noise_sigma must be ≥ 0", self.name));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Normalised `(cx, cy, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.w * self.h + other.w * other.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn is_inside_unit_square(&self) -> bool {
        let (x0, y0, x1, y1) = self.corners();
        x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 && y1 <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3×32×32`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub spec: DomainSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DomainDataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classes.len()
    }

    /// Image statistics of the training split: per-channel mean and
    /// standard deviation, mean horizontal edge magnitude and mean
    /// cross-channel spread.
    pub fn style_descriptor(&self) -> Vec<f64> {
        let mut sum = [0.0; IMAGE_CHANNELS];
        let mut sq = [0.0; IMAGE_CHANNELS];
        let (mut edge, mut chroma, mut n) = (0.0, 0.0, 0.0f64);
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        for s in &self.train {
            let d = s.image.data();
            for p in 0..plane {
                let px: Vec<f64> = (0..IMAGE_CHANNELS).map(|c| d[c * plane + p]).collect();
                let m = px.iter().sum::<f64>() / IMAGE_CHANNELS as f64;
                for (c, v) in px.iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                chroma += (px.iter().map(|v| (v - m).powi(2)).sum::<f64>() / IMAGE_CHANNELS as f64)
                    .sqrt();
                if p % IMAGE_SIZE + 1 < IMAGE_SIZE {
                    edge += (0..IMAGE_CHANNELS)
                        .map(|c| (d[c * plane + p + 1] - px[c]).abs())
                        .sum::<f64>()
                        / IMAGE_CHANNELS as f64;
                }
                n += 1.0;
            }
        }
        let n = n.max(1.0);
        let mut out: Vec<f64> = sum.iter().map(|s| s / n).collect();
        out.extend((0..IMAGE_CHANNELS).map(|c| (sq[c] / n - (sum[c] / n).powi(2)).max(0.0).sqrt()));
        out.push(edge / n);
        out.push(chroma / n);
        out
    }

    /// SHA-256 over every sample's label, box and pixels, in split order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            h.update((s.label as u64).to_le_bytes());
            for v in [s.bbox.cx, s.bbox.cy, s.bbox.w, s.bbox.h] {
                h.update(v.to_le_bytes());
            }
            for v in s.image.data() {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

/// The pair of datasets whose style descriptors are furthest apart in
/// Euclidean distance; `None` for fewer than two datasets.
pub fn most_distant_pair(datasets: &[DomainDataset]) -> Option<(usize, usize)> {
    let desc: Vec<Vec<f64>> = datasets
        .iter()
        .map(DomainDataset::style_descriptor)
        .collect();
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..desc.len() {
        for j in i + 1..desc.len() {
            let d: f64 = desc[i]
                .iter()
                .zip(&desc[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if best.is_none_or(|(_, b)| d > b) {
                best = Some(((i, j), d));
            }
        }
    }
    best.map(|(p, _)| p)
}

fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    // splitmix64 over the triple
    let mut z = seed
        ^ split.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders sample `index` of `split`; a pure function of its arguments.
pub fn render_sample(spec: &DomainSpec, split: Split, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, split, index));
    let style = &spec.style;
    let n = IMAGE_SIZE as f64;

    let label = rng.gen_range(0..spec.classes.len());
    let class = spec.classes[label];
    let s = lerp(spec.object_size.0, spec.object_size.1, rng.gen::<f64>());
    let (w, h) = class.extent(s);
    let cx = lerp(w / 2.0, n - w / 2.0, rng.gen::<f64>());
    let cy = lerp(h / 2.0, n - h / 2.0, rng.gen::<f64>());

    let fg = style.foreground.sample(&mut rng, style.grayscale);
    let bg = style.background.sample(&mut rng, style.grayscale);
    let stripe_period = rng.gen_range(3..7) as f64;
    let stripe_vertical = rng.gen::<bool>();
    let noise = Normal::new(0.0, style.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma ≥ 0");

    let mut data = vec![0.0; IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE];
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (px - cx, py - cy);
            let on_shape =
                class.contains(dx, dy, s) && !(style.outline && class.contains(dx, dy, s - 4.0));
            let base = if on_shape {
                fg
            } else {
                match style.texture {
                    Texture::Flat => bg,
                    Texture::Stripes => {
                        let t = if stripe_vertical { px } else { py };
                        if ((t / stripe_period).floor() as i64) % 2 == 0 {
                            bg
                        } else {
                            bg.map(|v| 0.5 * v)
                        }
                    }
                    Texture::Noise => {
                        let j = rng.gen_range(-0.2..0.2);
                        bg.map(|v| v + j)
                    }
                }
            };
            for c in 0..IMAGE_CHANNELS {
                let mut v = base[c];
                if style.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                v = v.clamp(0.0, 1.0);
                if style.inverted {
                    v = 1.0 - v;
                }
                data[c * plane + y * IMAGE_SIZE + x] = v;
            }
        }
    }
    Sample {
        image: Tensor::new([IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data).expect("fixed shape"),
        label,
        bbox: BoundingBox {
            cx: cx / n,
            cy: cy / n,
            w: w / n,
            h: h / n,
        },
    }
}

/// Deterministic dataset for a domain: every sample is a pure function of
/// `(spec, split, index)`.
pub fn generate_domain(spec: &DomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let gen = |split: Split, n: usize| (0..n).map(|i| render_sample(spec, split, i)).collect();
    Ok(DomainDataset {
        spec: spec.clone(),
        train: gen(Split::Train, spec.sizes.train),
        val: gen(Split::Val, spec.sizes.val),
        test: gen(Split::Test, spec.sizes.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::presets;

    #[test]
    fn boxes_lie_inside_image() {
        for spec in presets::default6() {
            for i in 0..20 {
                let s = render_sample(&spec, Split::Train, i);
                assert!(s.bbox.is_inside_unit_square(), "{:?}", s.bbox);
                assert!(s.label < spec.classes.len());
                assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn iou_basics() {
        let a = BoundingBox {
            cx: 0.5,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
        };
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        let b = BoundingBox {
            cx: 0.6,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
        };
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        let c = BoundingBox {
            cx: 0.9,
            cy: 0.9,
            w: 0.1,
            h: 0.1,
        };
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn empty_class_list_rejected() {
        let mut spec = presets::default6().remove(0);
        spec.classes.clear();
        assert!(matches!(generate_domain(&spec), Err(Error::Validation(_))));
    }
}
