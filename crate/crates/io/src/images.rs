//! Image files in and out, and the on-disk degradation tree.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gmmd_core::degrade::{DegradationMatrix, DegradationSpec};
use gmmd_core::{ImageBuffer, NamedImage};
use image::{ImageFormat, RgbImage};
use rayon::prelude::*;

use crate::error::{read, IoError, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Decodes PNG or JPEG (any bit depth; alpha dropped) into RGB `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    decode_image(&read(path)?, path)
}

/// [`load_image`] on bytes already read; `path` is only used in messages.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let decoded = image::load_from_memory(bytes).map_err(|e| IoError::format(path, e))?;
    let rgb = decoded.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(ImageBuffer::new(w, h, rgb.into_raw())?)
}

/// Writes an 8-bit PNG (samples rounded).
pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("buffer length matches geometry");
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| IoError::format(path, e))?;
    crate::error::write_atomic(path, &bytes)
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| IoError::file(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| IoError::file(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image in `dir`; ids are file stems and must be unique.
pub fn load_image_dir(dir: &Path) -> Result<Vec<NamedImage>> {
    let paths = list_images(dir)?;
    let mut seen = BTreeSet::new();
    for p in &paths {
        if !seen.insert(stem(p)) {
            return Err(IoError::format(dir, format!("two images share the id {}", stem(p))));
        }
    }
    paths
        .par_iter()
        .map(|p| Ok(NamedImage::new(stem(p), load_image(p)?)))
        .collect()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `<root>/<typeId>_<tag>/<level>/`
pub fn degraded_dir(root: &Path, spec: &DegradationSpec) -> PathBuf {
    root.join(spec.dir_name()).join(spec.level.to_string())
}

/// Writes `deg/<typeId>_<tag>/<level>/<imageId>.png` for every cell.
pub fn write_degraded_tree(root: &Path, matrix: &DegradationMatrix, ids: &[String]) -> Result<()> {
    matrix.par_iter().try_for_each(|(&(t, l), images)| {
        if images.len() != ids.len() {
            return Err(IoError::format(root, "image ids do not match the degraded set"));
        }
        let dir = degraded_dir(root, &DegradationSpec::new(t, l)?);
        images
            .iter()
            .zip(ids)
            .try_for_each(|(img, id)| save_png(&dir.join(format!("{id}.png")), img))
    })
}

/// Reads back the cells of `types` written by [`write_degraded_tree`].
pub fn read_degraded_tree(root: &Path, types: &[u8]) -> Result<DegradationMatrix> {
    let mut out = DegradationMatrix::new();
    for &t in types {
        for l in 1..=gmmd_core::degrade::LEVEL_COUNT {
            let spec = DegradationSpec::new(t, l)?;
            let images = load_image_dir(&degraded_dir(root, &spec))?;
            out.insert((t, l), images.into_iter().map(|n| n.image).collect());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let img = ImageBuffer::from_rgb8(4, 3, &bytes).unwrap();
        let p = dir.path().join("a.png");
        save_png(&p, &img).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn directory_listing_is_sorted_and_filtered() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::filled(2, 2, [0.5; 3]).unwrap();
        for name in ["b.png", "a.png", "c.PNG"] {
            save_png(&dir.path().join(name), &img).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let ids: Vec<String> = load_image_dir(dir.path()).unwrap().into_iter().map(|n| n.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn duplicate_stems_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::filled(2, 2, [0.5; 3]).unwrap();
        save_png(&dir.path().join("x.png"), &img).unwrap();
        std::fs::copy(dir.path().join("x.png"), dir.path().join("x.jpg")).unwrap();
        assert!(load_image_dir(dir.path()).is_err());
    }

    #[test]
    fn missing_file_is_an_input_error() {
        let e = load_image(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(e.is_input_error());
    }
}
