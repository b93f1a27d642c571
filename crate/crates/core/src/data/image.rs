//! Image decoding (binary PPM and 8-bit PNG), channel handling and bilinear
//! resizing. Images are `[H, W, C]` tensors.

use std::fs;
use std::io::{self, ErrorKind};
use std::path::Path;

use crate::error::{shape_str, Error, Result};
use crate::tensor::Tensor;

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::io(path, io::Error::new(ErrorKind::InvalidData, msg.into()))
}

/// Decodes a P6 PPM or 8-bit PNG into `[H, W, C]` with values in `[0, 255]`.
/// Greyscale PNGs load with `C = 1`.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes).map_err(|m| corrupt(path, m))
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes).map_err(|m| corrupt(path, m))
    } else {
        Err(corrupt(path, "unsupported image format (expected P6 PPM or PNG)"))
    }
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    // Header: "P6" width height maxval, whitespace separated, '#' comments.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PPM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field =
            std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or("malformed PPM header")?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PPM header".into());
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err("PPM with zero dimension".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    let n = width * height * 3;
    let pixels = bytes.get(pos..pos + n).ok_or("truncated PPM pixel data")?;
    let scale = 255.0 / maxval as f64;
    let data = pixels.iter().map(|&b| b as f64 * scale).collect();
    Tensor::from_vec(data, &[height, width, 3]).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    use image::{DynamicImage, ImageFormat};
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (raw, c) = match img {
        DynamicImage::ImageLuma8(b) => (b.into_raw(), 1),
        DynamicImage::ImageLumaA8(b) => (DynamicImage::ImageLumaA8(b).to_luma8().into_raw(), 1),
        DynamicImage::ImageRgb8(b) => (b.into_raw(), 3),
        DynamicImage::ImageRgba8(b) => (DynamicImage::ImageRgba8(b).to_rgb8().into_raw(), 3),
        other => return Err(format!("unsupported PNG pixel format {:?}", other.color())),
    };
    let data = raw.into_iter().map(f64::from).collect();
    Tensor::from_vec(data, &[h, w, c]).map_err(|e| e.to_string())
}

/// Writes `[H, W, 3]` values in `[0, 255]` as a binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::Dimension(format!("PPM needs [H, W, 3], got {}", shape_str(image.shape()))));
    };
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Converts to `channels` channels. Greyscale replicates into RGB; RGB to
/// greyscale averages the channels.
pub fn to_channels(image: &Tensor, channels: usize) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Dimension(format!("image must be [H, W, C], got {}", shape_str(image.shape()))));
    };
    if c == channels {
        return Ok(image.clone());
    }
    let data: Vec<f64> = match (c, channels) {
        (1, n) => image.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect(),
        (n, 1) => image.data().chunks(n).map(|px| px.iter().sum::<f64>() / n as f64).collect(),
        _ => return Err(Error::Data(format!("cannot convert {c}-channel image to {channels} channels"))),
    };
    Tensor::from_vec(data, &[h, w, channels])
}

/// Bilinear resize with corner-aligned sampling: output corners coincide
/// with input corners.
pub fn resize(image: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::Dimension(format!("image must be [H, W, C], got {}", shape_str(image.shape()))));
    };
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!("resize target {th}x{tw} must be positive")));
    }
    if (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    let coord = |i: usize, out: usize, inp: usize| -> f64 {
        if out == 1 {
            (inp - 1) as f64 / 2.0
        } else {
            i as f64 * (inp - 1) as f64 / (out - 1) as f64
        }
    };
    let x = image.data();
    let mut out = Vec::with_capacity(th * tw * c);
    for oy in 0..th {
        let sy = coord(oy, th, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..tw {
            let sx = coord(ox, tw, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let at = |y: usize, xx: usize| x[(y * w + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_vec(out, &[th, tw, c])
}

/// Decode, convert channels, resize and rescale to `[0, 1]`.
pub fn load_sample_pixels(path: &Path, resolution: (usize, usize), channels: usize) -> Result<Tensor> {
    let img = decode_image(path)?;
    let img = to_channels(&img, channels).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let img = resize(&img, resolution)?;
    let data = img.data().iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect();
    Tensor::from_vec(data, img.shape())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_hand_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let mut bytes = b"P6\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30]);
        fs::write(&path, bytes).unwrap();
        let t = decode_image(&path).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3]);
        assert_eq!(t.data(), &[255., 0., 0., 0., 255., 0., 0., 0., 255., 10., 20., 30.]);
    }

    #[test]
    fn png_greyscale_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let grey = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 1, vec![7, 200]).unwrap().save(&grey).unwrap();
        let g = decode_image(&grey).unwrap();
        assert_eq!(g.shape(), &[1, 2, 1]);
        let rgb = to_channels(&g, 3).unwrap();
        assert_eq!(rgb.data(), &[7., 7., 7., 200., 200., 200.]);

        let color = dir.path().join("c.png");
        image::RgbImage::from_raw(1, 1, vec![1, 2, 3]).unwrap().save(&color).unwrap();
        assert_eq!(decode_image(&color).unwrap().data(), &[1., 2., 3.]);
    }

    #[test]
    fn ppm_write_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ppm");
        let img = Tensor::from_vec((0..12).map(|v| (v * 20) as f64).collect(), &[2, 2, 3]).unwrap();
        write_ppm(&path, &img).unwrap();
        assert_eq!(decode_image(&path).unwrap().data(), img.data());
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.ppm");
        assert!(matches!(decode_image(&missing), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.ppm");
        fs::write(&bad, b"P6\n4 4\n255\n\x00\x01").unwrap();
        let err = decode_image(&bad).unwrap_err().to_string();
        assert!(err.contains("bad.ppm"), "{err}");
        let other = dir.path().join("x.gif");
        fs::write(&other, b"GIF89a").unwrap();
        assert!(decode_image(&other).is_err());
    }

    #[test]
    fn resize_identity_constant_and_center() {
        let img = Tensor::from_vec(vec![0., 100., 100., 200.], &[2, 2, 1]).unwrap();
        assert_eq!(resize(&img, (2, 2)).unwrap().data(), img.data());
        let up = resize(&img, (3, 3)).unwrap();
        assert_eq!(up.data()[4], 100.0);
        assert_eq!(up.data()[0], 0.0);
        assert_eq!(up.data()[8], 200.0);

        let flat = Tensor::full(&[5, 7, 3], 42.0);
        let r = resize(&flat, (3, 11)).unwrap();
        assert!(r.data().iter().all(|&v| (v - 42.0).abs() < 1e-12));
    }

    #[test]
    fn resize_stays_in_input_range() {
        let img = Tensor::from_vec((0..30).map(|v| ((v * 37) % 255) as f64).collect(), &[5, 6, 1]).unwrap();
        let (lo, hi) = (0.0, 254.0);
        for target in [(1, 1), (2, 9), (13, 4)] {
            let r = resize(&img, target).unwrap();
            assert!(r.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
