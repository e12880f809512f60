//! Lossless 8-bit image file I/O: PNG (8-bit RGB) and binary PPM (P6).
//!
//! 8-bit code `k` loads as `k / 255.0`; saving quantizes with
//! round-half-away-from-zero, so load/save is a fixed point on 8-bit data.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::ImageEncoder;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// Load a PNG or binary PPM file. The format is sniffed from the leading
/// bytes, not the extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path, &bytes)
    } else {
        Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "expected PNG or binary PPM (P6)".into(),
        })
    }
}

/// Save as PNG or PPM depending on the file extension (`.png`, `.ppm`).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => save_png(img, path),
        Some("ppm") => save_ppm(img, path),
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!(
                "cannot infer output format from extension {:?}; use .png or .ppm",
                other.unwrap_or("")
            ),
        }),
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}

fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
    let data = bytes.iter().map(|&k| k as f32 / 255.0).collect();
    Image::new(height, width, data)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image> {
    use image::{ColorType, DynamicImage};

    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Truncated {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageRgb8(buf) => from_bytes(h, w, buf.as_raw()),
        DynamicImage::ImageRgba8(buf) => {
            log::warn!("{}: stripping alpha channel", path.display());
            let rgb: Vec<u8> = buf
                .as_raw()
                .chunks(4)
                .flat_map(|px| px[..3].to_vec())
                .collect();
            from_bytes(h, w, &rgb)
        }
        other => Err(Error::ChannelCount {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit RGB, got {:?}", ColorType::from(other.color())),
        }),
    }
}

fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes = to_bytes(img);
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let encoder = image::codecs::png::PngEncoder::new(std::io::BufWriter::new(file));
    encoder
        .write_image(
            &bytes,
            img.width() as u32,
            img.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let err = |detail: &str| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: detail.into(),
    };
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = parse_ppm_field(bytes, &mut pos).ok_or_else(|| err("malformed header"))?;
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(err(&format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(err("zero dimension"));
    }
    let need = height * width * CHANNELS;
    let payload = bytes.get(pos..pos + need).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        detail: format!(
            "pixel payload has {} bytes, expected {need}",
            bytes.len().saturating_sub(pos)
        ),
    })?;
    from_bytes(height, width, payload)
}

/// Scan one whitespace/comment-separated decimal field of a PPM header.
fn parse_ppm_field(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        match bytes.get(*pos)? {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()?
        .parse()
        .ok()
}

fn save_ppm(img: &Image, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend(to_bytes(img));
    fs::write(path, out).map_err(io_err)
}
