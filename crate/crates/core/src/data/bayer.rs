//! RGGB mosaic packing.

use super::Image;
use crate::error::{Error, Result};

/// Offsets of the R, G1, G2 and B sites inside a 2x2 cell.
const SITES: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Packs an `H x W` single-plane RGGB mosaic into 4 planes of `H/2 x W/2`.
pub fn pack_raw(bayer: &Image) -> Result<Image> {
    if bayer.channels != 1 {
        return Err(Error::Shape(format!("a Bayer mosaic has one plane, got {}", bayer.channels)));
    }
    if bayer.height % 2 != 0 || bayer.width % 2 != 0 || bayer.height == 0 || bayer.width == 0 {
        return Err(Error::Shape(format!(
            "Bayer mosaic must have even, non-zero sides, got {}x{}",
            bayer.height, bayer.width
        )));
    }
    let (h, w) = (bayer.height / 2, bayer.width / 2);
    let mut out = Image::zeros(4, h, w);
    for (c, &(dy, dx)) in SITES.iter().enumerate() {
        let plane = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = bayer.data[(2 * y + dy) * bayer.width + 2 * x + dx];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack_raw`].
pub fn unpack_raw(packed: &Image) -> Result<Image> {
    if packed.channels != 4 {
        return Err(Error::Shape(format!("packed raw has 4 planes, got {}", packed.channels)));
    }
    let (h, w) = (packed.height, packed.width);
    let mut out = Image::zeros(1, 2 * h, 2 * w);
    for (c, &(dy, dx)) in SITES.iter().enumerate() {
        let plane = packed.plane(c);
        for y in 0..h {
            for x in 0..w {
                out.data[(2 * y + dy) * 2 * w + 2 * x + dx] = plane[y * w + x];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sites_land_in_their_planes() {
        // 2x4 mosaic with R=1, G1=2, G2=3, B=4 in every cell.
        let m = Image::new(1, 2, 4, vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]).unwrap();
        let p = pack_raw(&m).unwrap();
        assert_eq!((p.channels, p.height, p.width), (4, 1, 2));
        for c in 0..4 {
            assert!(p.plane(c).iter().all(|&v| v == (c + 1) as f32));
        }
        assert_eq!(unpack_raw(&p).unwrap(), m);
    }

    #[test]
    fn odd_sizes_rejected() {
        assert!(pack_raw(&Image::zeros(1, 3, 4)).is_err());
        assert!(pack_raw(&Image::zeros(3, 4, 4)).is_err());
    }
}
