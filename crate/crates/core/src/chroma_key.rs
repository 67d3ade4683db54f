//! Green-screen mask extraction.
//!
//! A pixel is background when the Euclidean distance of its (Cb, Cr)
//! chroma to the key color's chroma, normalized to [0, 1], falls below
//! the configured tolerance. Keying on chroma only keeps the decision
//! invariant to green-screen shading. `clean_mask` then removes specks
//! and closes pinholes with binary morphology.

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data_model::Mask;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyConfig {
    /// Key color as an RGB triple.
    pub key_color: [u8; 3],
    /// Normalized chroma-distance threshold in [0, 1] below which a pixel
    /// counts as background.
    pub chroma_tolerance: f64,
    /// Connected foreground components smaller than this are removed.
    pub min_component_area: usize,
    /// Disk radius for the morphological close/open passes.
    pub morphology_radius: usize,
}

impl Default for KeyConfig {
    fn default() -> Self {
        KeyConfig {
            key_color: [0, 255, 0],
            chroma_tolerance: 0.15,
            min_component_area: 64,
            morphology_radius: 2,
        }
    }
}

impl KeyConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.chroma_tolerance) {
            return Err(crate::Error::InvalidConfig(format!(
                "chroma_tolerance {} outside [0, 1]",
                self.chroma_tolerance
            )));
        }
        Ok(())
    }
}

/// (Cb, Cr) of an RGB pixel, BT.601 full range.
fn chroma(rgb: [u8; 3]) -> (f64, f64) {
    let r = rgb[0] as f64;
    let g = rgb[1] as f64;
    let b = rgb[2] as f64;
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (cb, cr)
}

/// Normalized chroma distance between a pixel and the key color.
pub fn chroma_distance(rgb: [u8; 3], key: [u8; 3]) -> f64 {
    let (cb, cr) = chroma(rgb);
    let (kb, kr) = chroma(key);
    ((cb - kb).powi(2) + (cr - kr).powi(2)).sqrt() / 255.0
}

/// Per-pixel foreground classification; 1 = ego-hand, 0 = key background.
pub fn extract_mask(frame: &RgbImage, config: &KeyConfig) -> Mask {
    let (w, h) = frame.dimensions();
    let mut data = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in frame.enumerate_pixels() {
        let fg = chroma_distance(p.0, config.key_color) >= config.chroma_tolerance;
        data[[y as usize, x as usize]] = u8::from(fg);
    }
    Mask(data)
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dy, dx));
            }
        }
    }
    offsets
}

/// Dilation; out-of-bounds counts as background.
fn dilate(mask: &Array2<u8>, offsets: &[(isize, isize)]) -> Array2<u8> {
    let (h, w) = mask.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 {
                continue;
            }
            for &(dy, dx) in offsets {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out[[ny as usize, nx as usize]] = 1;
                }
            }
        }
    }
    out
}

/// Erosion; out-of-bounds counts as foreground so the image border does
/// not shave blobs that touch it.
fn erode(mask: &Array2<u8>, offsets: &[(isize, isize)]) -> Array2<u8> {
    let (h, w) = mask.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 {
                continue;
            }
            let keep = offsets.iter().all(|&(dy, dx)| {
                let ny = y as isize + dy;
                let nx = x as isize + dx;
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    mask[[ny as usize, nx as usize]] != 0
                } else {
                    true
                }
            });
            if keep {
                out[[y, x]] = 1;
            }
        }
    }
    out
}

/// Remove 8-connected foreground components smaller than `min_area`.
fn filter_small_components(mask: &Array2<u8>, min_area: usize) -> Array2<u8> {
    if min_area <= 1 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let mut out = mask.clone();
    let mut visited = Array2::<u8>::zeros((h, w));
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if mask[[sy, sx]] == 0 || visited[[sy, sx]] != 0 {
                continue;
            }
            component.clear();
            stack.push((sy, sx));
            visited[[sy, sx]] = 1;
            while let Some((y, x)) = stack.pop() {
                component.push((y, x));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let ny = y as isize + dy;
                        let nx = x as isize + dx;
                        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] != 0 && visited[[ny, nx]] == 0 {
                            visited[[ny, nx]] = 1;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            if component.len() < min_area {
                for &(y, x) in &component {
                    out[[y, x]] = 0;
                }
            }
        }
    }
    out
}

fn clean_pass(mask: &Array2<u8>, config: &KeyConfig) -> Array2<u8> {
    let offsets = disk_offsets(config.morphology_radius);
    // close: fill pinholes, then open: shave protrusions/specks
    let closed = erode(&dilate(mask, &offsets), &offsets);
    let opened = dilate(&erode(&closed, &offsets), &offsets);
    filter_small_components(&opened, config.min_component_area)
}

/// Denoise a keyed mask: morphological close, open, then small-component
/// removal, iterated to a fixed point so the operation is idempotent.
pub fn clean_mask(mask: &Mask, config: &KeyConfig) -> Mask {
    let mut current = mask.0.clone();
    for _ in 0..32 {
        let next = clean_pass(&current, config);
        if next == current {
            break;
        }
        current = next;
    }
    Mask(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb(rgb))
    }

    #[test]
    fn uniform_key_color_is_all_background() {
        let config = KeyConfig::default();
        let mask = extract_mask(&flat(16, 12, config.key_color), &config);
        assert_eq!(mask.foreground_area(), 0);
        assert_eq!((mask.width(), mask.height()), (16, 12));
    }

    #[test]
    fn uniform_gray_is_all_foreground() {
        let config = KeyConfig::default();
        let mask = extract_mask(&flat(16, 12, [128, 128, 128]), &config);
        assert_eq!(mask.foreground_area(), 16 * 12);
    }

    #[test]
    fn shaded_green_still_keys_out() {
        // darker green: different luminance, nearly identical chroma
        let config = KeyConfig::default();
        let mask = extract_mask(&flat(8, 8, [0, 200, 0]), &config);
        assert_eq!(mask.foreground_area(), 0);
    }

    #[test]
    fn half_green_half_skin_splits_at_midline() {
        let config = KeyConfig::default();
        let (w, h) = (40u32, 20u32);
        let skin = [200u8, 160, 130];
        let mut frame = RgbImage::new(w, h);
        for (x, _, p) in frame.enumerate_pixels_mut() {
            *p = image::Rgb(if x < w / 2 { config.key_color } else { skin });
        }
        let mask = extract_mask(&frame, &config);
        // oracle: plain per-pixel chroma rule, no morphology involved
        for y in 0..h as usize {
            for x in 0..w as usize {
                let rgb = if (x as u32) < w / 2 { config.key_color } else { skin };
                let expect = u8::from(chroma_distance(rgb, config.key_color) >= config.chroma_tolerance);
                assert_eq!(mask.0[[y, x]], expect, "pixel ({x},{y})");
            }
        }
        // after cleaning, the boundary stays within morphology_radius of the midline
        let cleaned = clean_mask(&mask, &config);
        for y in 0..h as usize {
            for x in 0..w as usize {
                let dist_from_midline = (x as isize - w as isize / 2).unsigned_abs();
                if dist_from_midline > config.morphology_radius {
                    let expect = u8::from(x as u32 >= w / 2);
                    assert_eq!(cleaned.0[[y, x]], expect, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn clean_all_zero_is_fixed_point() {
        let config = KeyConfig::default();
        let mask = Mask::zeros(10, 10);
        assert_eq!(clean_mask(&mask, &config), mask);
    }

    #[test]
    fn clean_removes_isolated_pixel_below_area() {
        let config = KeyConfig {
            min_component_area: 5,
            morphology_radius: 0,
            ..KeyConfig::default()
        };
        let mut mask = Mask::zeros(9, 9);
        mask.0[[4, 4]] = 1;
        assert_eq!(clean_mask(&mask, &config).foreground_area(), 0);
    }

    #[test]
    fn clean_closes_interior_hole() {
        let config = KeyConfig {
            min_component_area: 4,
            morphology_radius: 1,
            ..KeyConfig::default()
        };
        // 20x20 solid square with one interior hole pixel
        let mut mask = Mask(Array2::ones((20, 20)));
        mask.0[[10, 10]] = 0;
        let cleaned = clean_mask(&mask, &config);
        // oracle on the 20x20 grid: the hole's 4-neighborhood is foreground,
        // so dilation refills it and the result is the solid square
        assert_eq!(cleaned.foreground_area(), 400);
    }

    fn arb_mask() -> impl Strategy<Value = Mask> {
        (2usize..14, 2usize..14).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..2, h * w)
                .prop_map(move |v| Mask(Array2::from_shape_vec((h, w), v).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn clean_mask_is_idempotent(mask in arb_mask()) {
            let config = KeyConfig { min_component_area: 3, morphology_radius: 1, ..KeyConfig::default() };
            let once = clean_mask(&mask, &config);
            let twice = clean_mask(&once, &config);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn raising_tolerance_never_adds_foreground(
            pixels in proptest::collection::vec((0u8..=255, 0u8..=255, 0u8..=255), 48),
            t_low in 0.0f64..0.5,
            dt in 0.0f64..0.5,
        ) {
            let mut frame = RgbImage::new(8, 6);
            for (i, p) in frame.pixels_mut().enumerate() {
                let (r, g, b) = pixels[i];
                *p = image::Rgb([r, g, b]);
            }
            let lo = KeyConfig { chroma_tolerance: t_low, ..KeyConfig::default() };
            let hi = KeyConfig { chroma_tolerance: t_low + dt, ..KeyConfig::default() };
            let m_lo = extract_mask(&frame, &lo);
            let m_hi = extract_mask(&frame, &hi);
            for (a, b) in m_lo.0.iter().zip(m_hi.0.iter()) {
                // background at low tolerance stays background at high
                prop_assert!(!(*a == 0 && *b == 1));
            }
        }

        #[test]
        fn output_dimensions_match_input(w in 1u32..20, h in 1u32..20) {
            let config = KeyConfig::default();
            let mask = extract_mask(&flat(w, h, [90, 40, 200]), &config);
            prop_assert_eq!((mask.width(), mask.height()), (w, h));
        }
    }
}
