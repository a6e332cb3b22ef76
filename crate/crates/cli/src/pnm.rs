//! Portable graymap/pixmap I/O.
//!
//! Reads P2, P3, P5 and P6 with any maxval up to 65535. Color images are
//! converted to luminance `0.299 R + 0.587 G + 0.114 B`. Intensities come out
//! in `[0, 1]`.

use std::fmt::Write as _;

use lrt::GrayImage;

use crate::CliError;

/// Refuse headers describing more than this many pixels.
const MAX_PIXELS: usize = 1 << 26;

struct Header<'a> {
    magic: u8,
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset just past the maxval token.
    end: usize,
    /// Everything after the single whitespace byte ending the header.
    body: &'a [u8],
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Image(msg.into())
}

/// Byte-level tokenizer for the ASCII parts of a PNM file.
struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while self.data.get(self.pos).is_some_and(|&c| c != b'\n' && c != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next(&mut self) -> Option<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while self
            .data
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, CliError> {
        let tok = self.next().ok_or_else(|| bad(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("invalid {what} `{}`", String::from_utf8_lossy(tok))))
    }
}

fn header(data: &[u8]) -> Result<Header<'_>, CliError> {
    if data.len() < 2 || data[0] != b'P' {
        return Err(bad("not a PNM file (missing P magic)"));
    }
    let magic = data[1];
    if !matches!(magic, b'2' | b'3' | b'5' | b'6') {
        return Err(bad(format!(
            "unsupported PNM variant P{} (expected P2, P3, P5 or P6)",
            magic as char
        )));
    }
    let mut t = Tokens { data, pos: 2 };
    let width = t.number("width")? as usize;
    let height = t.number("height")? as usize;
    let maxval = t.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad(format!("empty image {width}x{height}")));
    }
    if width.checked_mul(height).map_or(true, |n| n > MAX_PIXELS) {
        return Err(bad(format!("image {width}x{height} is too large")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    // exactly one whitespace byte separates the header from binary data
    let body_start = (t.pos + 1).min(data.len());
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        end: t.pos,
        body: &data[body_start..],
    })
}

fn ascii_samples(data: &[u8], skip: usize, count: usize, maxval: u32) -> Result<Vec<f64>, CliError> {
    let mut t = Tokens { data, pos: skip };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let v = t
            .number("sample")
            .map_err(|_| bad(format!("pixel data ends or is malformed at sample {i} of {count}")))?;
        if v > maxval {
            return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
        }
        out.push(v as f64 / maxval as f64);
    }
    Ok(out)
}

fn binary_samples(body: &[u8], count: usize, maxval: u32) -> Result<Vec<f64>, CliError> {
    let wide = maxval > 255;
    let need = if wide { 2 * count } else { count };
    if body.len() < need {
        return Err(bad(format!(
            "truncated pixel data: {} bytes, expected {need}",
            body.len()
        )));
    }
    let scale = maxval as f64;
    let samples = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    } else {
        body[..need].iter().map(|&b| b as f64 / scale).collect()
    };
    Ok(samples)
}

/// Decodes a PNM byte stream into a grayscale image.
pub fn decode(data: &[u8]) -> Result<GrayImage, CliError> {
    let h = header(data)?;
    let channels = if matches!(h.magic, b'3' | b'6') { 3 } else { 1 };
    let count = h.width * h.height * channels;
    let samples = match h.magic {
        b'2' | b'3' => ascii_samples(data, h.end, count, h.maxval)?,
        _ => binary_samples(h.body, count, h.maxval)?,
    };
    let w = h.width;
    Ok(GrayImage::from_fn(h.width, h.height, |x, y| {
        let i = (y * w + x) * channels;
        if channels == 1 {
            samples[i]
        } else {
            0.299 * samples[i] + 0.587 * samples[i + 1] + 0.114 * samples[i + 2]
        }
    }))
}

pub fn read(path: &std::path::Path) -> Result<GrayImage, CliError> {
    let data = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&data).map_err(|e| match e {
        CliError::Image(msg) => CliError::Image(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Min-max rescaling to `[0, 255]`, returning the bytes and `(min, max)`.
/// A constant input maps to 0.
pub fn to_bytes(values: impl Iterator<Item = f64> + Clone) -> (Vec<u8>, (f64, f64)) {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let bytes = values
        .map(|v| {
            if span > 0.0 && span.is_finite() {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    (bytes, (lo, hi))
}

/// Binary P5 encoding of row-major 8-bit samples.
pub fn encode_p5(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut head = String::new();
    let _ = write!(head, "P5\n{width} {height}\n255\n");
    let mut out = head.into_bytes();
    out.extend_from_slice(bytes);
    out
}

/// Min-max scaled P5 encoding of an image; also returns the `(min, max)`
/// that maps to `(0, 255)`.
pub fn encode_scaled(image: &GrayImage) -> (Vec<u8>, (f64, f64)) {
    let (w, h) = (image.width(), image.height());
    let values = (0..h).flat_map(move |y| (0..w).map(move |x| image.get(x, y)));
    let (bytes, range) = to_bytes(values);
    (encode_p5(w, h, &bytes), range)
}
