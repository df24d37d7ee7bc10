//! Reading and writing images and SIDD-style instance folders.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::{pack_raw, parse_instance_dir, ColorSpace, Image, ImagePair};
use crate::error::{Error, Result};

/// Magic bytes that open a raw mosaic file.
pub const RAW_MAGIC: &[u8; 4] = b"RAWF";
const DTYPE_F32: u32 = 1;

/// Reads an 8-bit PNG as a 3-plane image with integer values in `[0, 255]`.
pub fn read_png_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Image::zeros(3, h, w);
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out.data[c * h * w + i] = px.0[c] as f32;
        }
    }
    Ok(out)
}

/// Writes a 3-plane image as an 8-bit PNG, rounding and clipping to `[0, 255]`.
pub fn write_png_rgb(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Shape(format!("PNG output needs 3 planes, got {}", img.channels)));
    }
    let (h, w) = (img.height, img.width);
    let mut buf = vec![0u8; h * w * 3];
    for i in 0..h * w {
        for c in 0..3 {
            buf[i * 3 + c] = img.data[c * h * w + i].round().clamp(0.0, 255.0) as u8;
        }
    }
    let rgb = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized for image");
    rgb.save(path)?;
    Ok(())
}

/// Reads a single-plane float mosaic: 16-byte header (magic, dtype code,
/// height, width as little-endian `u32`) followed by `f32` values.
pub fn read_raw_bin(path: &Path) -> Result<Image> {
    let mut f = fs::File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header).map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &header[0..4] != RAW_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]);
    if word(4) != DTYPE_F32 {
        return Err(Error::Format(format!("{}: unsupported dtype code {}", path.display(), word(4))));
    }
    let (h, w) = (word(8) as usize, word(12) as usize);
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.len() != h * w * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            h * w * 4,
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Image::new(1, h, w, data)
}

pub fn write_raw_bin(path: &Path, mosaic: &Image) -> Result<()> {
    if mosaic.channels != 1 {
        return Err(Error::Shape(format!("raw files hold one plane, got {}", mosaic.channels)));
    }
    let mut buf = Vec::with_capacity(16 + mosaic.data.len() * 4);
    buf.extend_from_slice(RAW_MAGIC);
    for v in [DTYPE_F32, mosaic.height as u32, mosaic.width as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &mosaic.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn find_file(dir: &Path, prefix: &str) -> Result<Option<PathBuf>> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Ingest(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix))
                && matches!(ext(p).as_deref(), Some("png" | "bin"))
        })
        .collect();
    hits.sort();
    Ok(hits.into_iter().next())
}

fn ext(p: &Path) -> Option<String> {
    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

fn read_any(path: &Path) -> Result<(Image, ColorSpace)> {
    match ext(path).as_deref() {
        Some("png") => Ok((read_png_rgb(path)?, ColorSpace::Srgb)),
        _ => Ok((pack_raw(&read_raw_bin(path)?)?, ColorSpace::Raw)),
    }
}

/// Loads the `GT_*` / `NOISY_*` pair of an instance folder. PNG files are
/// sRGB; `.bin` files are raw mosaics and get packed to four planes.
pub fn load_instance(dir: &Path) -> Result<ImagePair> {
    let name = parse_instance_dir(dir)?;
    let clean = find_file(dir, "GT_")?.ok_or_else(|| Error::Ingest(format!("{}: no GT_ file", dir.display())))?;
    let noisy =
        find_file(dir, "NOISY_")?.ok_or_else(|| Error::Ingest(format!("{}: no NOISY_ file", dir.display())))?;
    let (c, sc) = read_any(&clean)?;
    let (n, sn) = read_any(&noisy)?;
    if sc != sn {
        return Err(Error::Ingest(format!("{}: clean and noisy files differ in format", dir.display())));
    }
    ImagePair::new(c, n, sc, name.descriptor)
}

/// Loads every parseable instance folder under `root`, sorted by name.
/// Entries whose names do not follow the grammar are skipped.
pub fn load_instance_pairs(root: &Path) -> Result<Vec<(String, ImagePair)>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::Ingest(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if parse_instance_dir(&d).is_err() {
            log::debug!("skipping {}", d.display());
            continue;
        }
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        out.push((name, load_instance(&d)?));
    }
    Ok(out)
}

/// One instance directory name per non-empty line.
pub fn read_list_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
