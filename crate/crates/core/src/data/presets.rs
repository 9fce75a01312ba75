//! Built-in domain collections.

use super::domain::{ColorRange, DomainSpec, ShapeClass, SplitSizes, Style, Texture};
use crate::error::{Error, Result};

use ShapeClass::*;

pub const PRESET_NAMES: &[&str] = &["default6", "imbalanced"];

pub const DEFAULT_SIZES: SplitSizes = SplitSizes {
    train: 300,
    val: 0,
    test: 300,
};

const BRIGHT: ColorRange = ColorRange::new([0.55, 0.55, 0.55], [1.0, 1.0, 1.0]);
const DARK: ColorRange = ColorRange::new([0.0, 0.0, 0.0], [0.35, 0.35, 0.35]);

fn domain(
    id: usize,
    name: &str,
    style: Style,
    classes: &[ShapeClass],
    sizes: SplitSizes,
) -> DomainSpec {
    DomainSpec {
        name: name.to_owned(),
        domain_id: id,
        style,
        classes: classes.to_vec(),
        sizes,
        object_size: (12.0, 22.0),
        seed: 0x5eed_0000 + id as u64,
    }
}

fn plain(texture: Texture, noise_sigma: f64) -> Style {
    Style {
        foreground: BRIGHT,
        background: DARK,
        texture,
        noise_sigma,
        outline: false,
        inverted: false,
        grayscale: false,
    }
}

/// Six styles: flat, stripes, noise, inverted, outline, grayscale. `flat`
/// and `stripes` share one class set.
pub fn default6() -> Vec<DomainSpec> {
    let s = DEFAULT_SIZES;
    vec![
        domain(
            0,
            "flat",
            plain(Texture::Flat, 0.02),
            &[Circle, Square, Triangle, Cross],
            s,
        ),
        domain(
            1,
            "stripes",
            plain(Texture::Stripes, 0.02),
            &[Circle, Square, Triangle, Cross],
            s,
        ),
        domain(
            2,
            "noisy",
            plain(Texture::Noise, 0.2),
            &[Circle, Ring, Bar, Cross],
            s,
        ),
        domain(
            3,
            "inverted",
            Style {
                inverted: true,
                ..plain(Texture::Flat, 0.02)
            },
            &[Square, Triangle, Bar, Ring],
            s,
        ),
        domain(
            4,
            "outline",
            Style {
                outline: true,
                ..plain(Texture::Flat, 0.02)
            },
            &[Circle, Square, Ring, Triangle],
            s,
        ),
        domain(
            5,
            "grayscale",
            Style {
                grayscale: true,
                ..plain(Texture::Noise, 0.05)
            },
            &[Cross, Bar, Circle, Triangle],
            s,
        ),
    ]
}

/// `default6` with the last domain's training split shrunk tenfold.
pub fn imbalanced() -> Vec<DomainSpec> {
    let mut specs = default6();
    let last = specs.last_mut().expect("six domains");
    last.sizes.train /= 10;
    last.sizes.test /= 10;
    specs
}

pub fn preset(name: &str) -> Result<Vec<DomainSpec>> {
    match name {
        "default6" => Ok(default6()),
        "imbalanced" => Ok(imbalanced()),
        other => Err(Error::Lookup(format!(
            "unknown data preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
