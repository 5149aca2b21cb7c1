//! Image operators behind each distortion type.
//!
//! All operators take and return `[0, 1]` images of the same size. Border
//! handling is edge replication throughout.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise sigma {sigma}: {e}")))
}

pub fn gaussian_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let dist = normal(sigma)?;
    let mut r = rng(seed);
    Ok(img.map_samples(|_, _, _, v| (f64::from(v) + dist.sample(&mut r)) as f32))
}

/// `v · (1 + η)`, `η ~ N(0, σ²)`.
pub fn multiplicative_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let dist = normal(sigma)?;
    let mut r = rng(seed);
    Ok(img.map_samples(|_, _, _, v| (f64::from(v) * (1.0 + dist.sample(&mut r))) as f32))
}

/// `v^γ`: γ < 1 brightens, γ > 1 darkens.
pub fn gamma_curve(img: &ImageBuffer, gamma: f64) -> ImageBuffer {
    img.map_samples(|_, _, _, v| f64::from(v).powf(gamma) as f32)
}

/// Each pixel is replaced by the pixel at a uniform random offset in
/// `[-amp, amp]²`, rounded to the pixel grid.
pub fn jitter(img: &ImageBuffer, amplitude: f64, seed: u64) -> ImageBuffer {
    let mut r = rng(seed);
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let dx = r.random_range(-amplitude..=amplitude).round() as isize;
            let dy = r.random_range(-amplitude..=amplitude).round() as isize;
            for c in 0..3 {
                data.push(img.get_clamped(x as isize + dx, y as isize + dy, c));
            }
        }
    }
    ImageBuffer::new(w, h, data).expect("same geometry")
}

/// Copies `count` square patches of side `size` from random source
/// locations to random destinations. Sources are read from the input.
pub fn patches(img: &ImageBuffer, size: usize, count: usize, seed: u64) -> Result<ImageBuffer> {
    let (w, h) = (img.width(), img.height());
    if size == 0 || w < size || h < size {
        return Err(Error::invalid(format!(
            "patch size {size} does not fit a {w}x{h} image"
        )));
    }
    let mut r = rng(seed);
    let mut data = img.data().to_vec();
    for _ in 0..count {
        let (sx, sy) = (r.random_range(0..=w - size), r.random_range(0..=h - size));
        let (dx, dy) = (r.random_range(0..=w - size), r.random_range(0..=h - size));
        for j in 0..size {
            for i in 0..size {
                for c in 0..3 {
                    data[((dy + j) * w + dx + i) * 3 + c] = img.get(sx + i, sy + j, c);
                }
            }
        }
    }
    ImageBuffer::new(w, h, data)
}

/// Block-average downsample by `factor`, nearest-neighbour upsample back.
pub fn pixelate(img: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    if factor == 0 {
        return Err(Error::invalid("pixelate factor must be >= 1"));
    }
    let (w, h) = (img.width(), img.height());
    let (bw, bh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut means = vec![0.0f64; bw * bh * 3];
    let mut counts = vec![0usize; bw * bh];
    for y in 0..h {
        for x in 0..w {
            let b = (y / factor) * bw + x / factor;
            counts[b] += 1;
            for c in 0..3 {
                means[b * 3 + c] += f64::from(img.get(x, y, c));
            }
        }
    }
    for (b, &n) in counts.iter().enumerate() {
        for c in 0..3 {
            means[b * 3 + c] /= n as f64;
        }
    }
    Ok(img.map_samples(|x, y, c, _| means[((y / factor) * bw + x / factor) * 3 + c] as f32))
}

/// Uniform quantization to `2^bits` levels.
pub fn quantize(img: &ImageBuffer, bits: u32) -> Result<ImageBuffer> {
    if !(1..=16).contains(&bits) {
        return Err(Error::invalid(format!("quantization bits {bits} outside 1..=16")));
    }
    let levels = f64::from((1u32 << bits) - 1);
    Ok(img.map_samples(|_, _, _, v| ((f64::from(v) * levels).round() / levels) as f32))
}

/// `α · white + (1 − α) · v`.
pub fn fog(img: &ImageBuffer, alpha: f64) -> ImageBuffer {
    img.map_samples(|_, _, _, v| (alpha + (1.0 - alpha) * f64::from(v)) as f32)
}

/// Blue up by `s`, red down by `s`.
pub fn color_cast_cool(img: &ImageBuffer, shift: f64) -> ImageBuffer {
    img.map_samples(|_, _, c, v| match c {
        0 => (f64::from(v) - shift) as f32,
        2 => (f64::from(v) + shift) as f32,
        _ => v,
    })
}

/// Red sampled `shift` px to the right, blue `shift` px to the left.
pub fn chromatic_aberration(img: &ImageBuffer, shift: isize) -> ImageBuffer {
    img.map_samples(|x, y, c, v| match c {
        0 => img.get_clamped(x as isize + shift, y as isize, 0),
        2 => img.get_clamped(x as isize - shift, y as isize, 2),
        _ => v,
    })
}

/// Drops `round(fraction · W·H)` random pixels and fills each from its
/// nearest kept pixel (4-connected breadth-first order).
pub fn sparse_sampling(img: &ImageBuffer, fraction: f64, seed: u64) -> Result<ImageBuffer> {
    let (w, h) = (img.width(), img.height());
    let total = w * h;
    let drop = ((fraction * total as f64).round() as usize).min(total);
    if drop == total {
        return Err(Error::invalid("sparse sampling would drop every pixel"));
    }
    let mut r = rng(seed);
    let mut source: Vec<Option<usize>> = (0..total).map(Some).collect();
    for i in index::sample(&mut r, total, drop) {
        source[i] = None;
    }
    let mut queue: VecDeque<usize> = (0..total).filter(|&i| source[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut neighbours = [None; 4];
        if x > 0 {
            neighbours[0] = Some(i - 1);
        }
        if x + 1 < w {
            neighbours[1] = Some(i + 1);
        }
        if y > 0 {
            neighbours[2] = Some(i - w);
        }
        if y + 1 < h {
            neighbours[3] = Some(i + w);
        }
        for n in neighbours.into_iter().flatten() {
            if source[n].is_none() {
                source[n] = source[i];
                queue.push_back(n);
            }
        }
    }
    Ok(img.map_samples(|x, y, c, _| {
        let s = source[y * w + x].expect("filled by BFS");
        img.get(s % w, s / w, c)
    }))
}

/// Baseline JPEG round trip at `quality` with 4:2:0 chroma subsampling
/// (2×2 box-averaged chroma), decoded back to 8-bit RGB.
pub fn jpeg(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let (w, h) = (img.width(), img.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::invalid(format!("{w}x{h} exceeds JPEG dimensions"))),
    };
    let encoded = jpeg_bytes(img, quality)?;
    let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?
        .to_rgb8();
    debug_assert_eq!((decoded.width(), decoded.height()), (u32::from(w16), u32::from(h16)));
    ImageBuffer::from_rgb8(w, h, decoded.as_raw())
}

/// Encoded JPEG stream used by [`jpeg`].
pub fn jpeg_bytes(img: &ImageBuffer, quality: u8) -> Result<Vec<u8>> {
    let (w, h) = (img.width(), img.height());
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::invalid(format!("{w}x{h} exceeds JPEG dimensions"))),
    };
    let mut out = Vec::new();
    let mut enc = jpeg_encoder::Encoder::new(&mut out, quality);
    enc.set_sampling_factor(jpeg_encoder::SamplingFactor::R_4_2_0);
    // libjpeg-style box average; the crate default decimates to one pixel
    enc.set_chroma_subsampling_method(jpeg_encoder::ChromaSubsamplingMethod::Average);
    enc.encode(&img.to_rgb8(), w16, h16, jpeg_encoder::ColorType::Rgb)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out)
}

fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Convolves with a normalized kernel given as `(dx, dy, weight)` taps.
fn convolve(img: &ImageBuffer, taps: &[(isize, isize, f64)]) -> ImageBuffer {
    img.map_samples(|x, y, c, _| {
        taps.iter()
            .map(|&(dx, dy, wt)| wt * f64::from(img.get_clamped(x as isize + dx, y as isize + dy, c)))
            .sum::<f64>() as f32
    })
}

pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let w = gaussian_weights(sigma);
    let r = (w.len() / 2) as isize;
    let horiz: Vec<_> = w.iter().enumerate().map(|(i, &v)| (i as isize - r, 0, v)).collect();
    let vert: Vec<_> = w.iter().enumerate().map(|(i, &v)| (0, i as isize - r, v)).collect();
    convolve(&convolve(img, &horiz), &vert)
}

/// Normalized disk of radius `r` (taps with `dx² + dy² ≤ r²`).
pub fn lens_blur(img: &ImageBuffer, radius: usize) -> ImageBuffer {
    let r = radius as isize;
    let mut taps = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                taps.push((dx, dy, 1.0));
            }
        }
    }
    let n = taps.len() as f64;
    taps.iter_mut().for_each(|t| t.2 /= n);
    convolve(img, &taps)
}

/// Normalized horizontal box of `length` taps.
pub fn motion_blur(img: &ImageBuffer, length: usize) -> ImageBuffer {
    let length = length.max(1);
    let start = -((length as isize - 1) / 2);
    let taps: Vec<_> = (0..length as isize).map(|i| (start + i, 0, 1.0 / length as f64)).collect();
    convolve(img, &taps)
}

/// Horizontal scale by `scale` about the image centre, bilinear, then
/// cropped/padded (edge replicate) back to the original width.
pub fn tilt_stretch(img: &ImageBuffer, scale: f64) -> Result<ImageBuffer> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("stretch scale must be positive, got {scale}")));
    }
    let cx = img.width() as f64 / 2.0;
    Ok(img.map_samples(|x, y, c, _| {
        let sx = (x as f64 + 0.5 - cx) / scale + cx - 0.5;
        let x0 = sx.floor();
        let t = sx - x0;
        let a = f64::from(img.get_clamped(x0 as isize, y as isize, c));
        let b = f64::from(img.get_clamped(x0 as isize + 1, y as isize, c));
        (a + (b - a) * t) as f32
    }))
}

/// Radial darkening `1 − strength · (r / r_max)²`, where `r_max` is the
/// distance from the centre to the corner pixel centres.
pub fn vignette(img: &ImageBuffer, strength: f64) -> ImageBuffer {
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let rmax2 = cx * cx + cy * cy;
    img.map_samples(|x, y, _, v| {
        if rmax2 == 0.0 {
            return v;
        }
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let f = 1.0 - strength * (dx * dx + dy * dy) / rmax2;
        (f64::from(v) * f) as f32
    })
}

/// `α · (v − 0.5) + 0.5`.
pub fn contrast_compression(img: &ImageBuffer, alpha: f64) -> ImageBuffer {
    img.map_samples(|_, _, _, v| (alpha * (f64::from(v) - 0.5) + 0.5) as f32)
}

/// Gaussian blur whose σ ramps linearly from `sigma_lo` at the left column
/// to `sigma_hi` at the right column.
pub fn non_uniform_blur(img: &ImageBuffer, sigma_lo: f64, sigma_hi: f64) -> ImageBuffer {
    let w = img.width();
    let per_column: Vec<Vec<f64>> = (0..w)
        .map(|x| {
            let t = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
            let sigma = sigma_lo + (sigma_hi - sigma_lo) * t;
            if sigma <= 0.0 {
                vec![1.0]
            } else {
                gaussian_weights(sigma)
            }
        })
        .collect();
    img.map_samples(|x, y, c, _| {
        let k = &per_column[x];
        let r = (k.len() / 2) as isize;
        let mut acc = 0.0;
        for (j, wy) in k.iter().enumerate() {
            for (i, wx) in k.iter().enumerate() {
                acc += wx
                    * wy
                    * f64::from(img.get_clamped(x as isize + i as isize - r, y as isize + j as isize - r, c));
            }
        }
        acc as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ImageBuffer {
        let data = (0..w * h * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        ImageBuffer::new(w, h, data).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = ramp(9, 7);
        assert_eq!(gaussian_noise(&img, 0.0, 3).unwrap(), img);
        assert_eq!(multiplicative_noise(&img, 0.0, 3).unwrap(), img);
    }

    #[test]
    fn gaussian_noise_std_matches_sigma() {
        let img = ImageBuffer::filled(200, 200, [0.5; 3]).unwrap();
        for sigma in [0.002, 0.011, 0.022] {
            let out = gaussian_noise(&img, sigma, 11).unwrap();
            let n = out.data().len() as f64;
            let mean = out.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            let var = out.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            assert!((sd / sigma - 1.0).abs() < 0.05, "sigma {sigma}: measured {sd}");
        }
    }

    #[test]
    fn vignette_centre_and_corner() {
        let img = ImageBuffer::filled(33, 33, [0.5; 3]).unwrap();
        let out = vignette(&img, 0.18);
        assert_eq!(out.get(16, 16, 0), 0.5);
        for (x, y) in [(0, 0), (32, 0), (0, 32), (32, 32)] {
            let v = f64::from(out.get(x, y, 1));
            assert!((v - 0.5 * (1.0 - 0.18)).abs() < 1e-6, "{v}");
        }
        // monotone along the diagonal
        for i in 0..16 {
            assert!(out.get(i, i, 0) <= out.get(i + 1, i + 1, 0));
        }
    }

    #[test]
    fn five_bit_quantization_level_count() {
        let img = ramp(64, 64);
        let out = quantize(&img, 5).unwrap();
        for c in 0..3 {
            let mut vals: Vec<u32> = (0..64 * 64).map(|i| out.data()[i * 3 + c].to_bits()).collect();
            vals.sort_unstable();
            vals.dedup();
            assert!(vals.len() <= 32, "{}", vals.len());
        }
    }

    #[test]
    fn blurs_preserve_constants() {
        let img = ImageBuffer::filled(12, 10, [0.25, 0.5, 0.75]).unwrap();
        for out in [
            gaussian_blur(&img, 0.4),
            lens_blur(&img, 2),
            motion_blur(&img, 4),
            non_uniform_blur(&img, 0.8, 2.5),
            pixelate(&img, 3).unwrap(),
            tilt_stretch(&img, 0.95).unwrap(),
        ] {
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stochastic_operators_are_seeded() {
        let img = ramp(20, 16);
        assert_eq!(jitter(&img, 2.3, 5), jitter(&img, 2.3, 5));
        assert_ne!(jitter(&img, 2.3, 5), jitter(&img, 2.3, 6));
        assert_eq!(patches(&img, 5, 2, 1).unwrap(), patches(&img, 5, 2, 1).unwrap());
        assert_eq!(
            sparse_sampling(&img, 0.08, 4).unwrap(),
            sparse_sampling(&img, 0.08, 4).unwrap()
        );
    }

    #[test]
    fn patch_larger_than_image_is_rejected() {
        assert!(patches(&ramp(8, 8), 9, 1, 0).is_err());
    }

    #[test]
    fn sparse_sampling_changes_only_dropped_pixels() {
        let img = ramp(16, 16);
        let out = sparse_sampling(&img, 0.08, 2).unwrap();
        let changed = (0..256)
            .filter(|&i| (0..3).any(|c| out.data()[i * 3 + c] != img.data()[i * 3 + c]))
            .count();
        assert!(changed <= (0.08f64 * 256.0).round() as usize);
    }

    #[test]
    fn jpeg_size_decreases_with_quality() {
        let img = ramp(64, 48);
        let mut last = usize::MAX;
        for q in [95u8, 87, 80, 72] {
            let n = jpeg_bytes(&img, q).unwrap().len();
            assert!(n < last, "quality {q}: {n} bytes");
            last = n;
        }
        let out = jpeg(&img, 90).unwrap();
        assert_eq!((out.width(), out.height()), (64, 48));
    }

    #[test]
    fn pointwise_operators() {
        let img = ImageBuffer::new(1, 1, vec![0.25, 0.5, 1.0]).unwrap();
        assert_eq!(fog(&img, 0.1).data(), &[0.325, 0.55, 1.0]);
        assert_eq!(contrast_compression(&img, 0.5).data(), &[0.375, 0.5, 0.75]);
        assert_eq!(color_cast_cool(&img, 0.25).data(), &[0.0, 0.5, 1.0]);
        let b = gamma_curve(&img, 0.5);
        assert_eq!(b.data(), &[0.5, 0.5f32.sqrt(), 1.0]);
    }

    #[test]
    fn chromatic_aberration_shifts_opposite_directions() {
        let mut data = vec![0.0; 5 * 3];
        data[2 * 3] = 1.0; // red impulse at x=2
        data[2 * 3 + 2] = 1.0; // blue impulse at x=2
        let img = ImageBuffer::new(5, 1, data).unwrap();
        let out = chromatic_aberration(&img, 1);
        assert_eq!(out.get(1, 0, 0), 1.0);
        assert_eq!(out.get(3, 0, 2), 1.0);
    }
}
