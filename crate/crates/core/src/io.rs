//! Image files: binary PGM (P5) and PPM (P6) with maxval 255, and MCF, a raw
//! float container.
//!
//! 8-bit samples map to `[0, 1]` by `v / 255`; writing clamps to `[0, 1]` and rounds
//! `255 v`. MCF stores the field losslessly:
//!
//! ```text
//! MCF1\n<H> <W> <N>\n<8·H·W·N bytes: f64 little-endian, row-major, channels interleaved>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ImageField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
    Mcf,
}

impl ImageFormat {
    /// Format implied by the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "ppm" => Ok(ImageFormat::Ppm),
            "mcf" => Ok(ImageFormat::Mcf),
            _ => Err(Error::Usage(format!(
                "cannot infer image format from '{}' (expected .pgm, .ppm or .mcf)",
                path.display()
            ))),
        }
    }
}

/// Header of an MCF file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McfHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

const MCF_MAGIC: &[u8] = b"MCF1\n";

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset,
        message: message.into(),
    })
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageField> {
    decode(&fs::read(path)?)
}

/// Write `field` in the format given by the extension of `path`.
pub fn write_image(path: impl AsRef<Path>, field: &ImageField) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(field, ImageFormat::from_path(path)?)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Decode any supported format, recognized by its magic bytes.
pub fn decode(bytes: &[u8]) -> Result<ImageField> {
    if bytes.starts_with(b"MCF1") {
        decode_mcf(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        format_err(0, "unrecognized magic (expected P5, P6 or MCF1)")
    }
}

pub fn encode(field: &ImageField, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Mcf => Ok(encode_mcf(field)),
        ImageFormat::Pgm | ImageFormat::Ppm => {
            let (magic, channels) = if format == ImageFormat::Pgm { ("P5", 1) } else { ("P6", 3) };
            if field.channels() != channels {
                return Err(Error::ShapeMismatch {
                    expected: format!("{channels} channel(s) for {magic}"),
                    found: format!("{} channels", field.channels()),
                });
            }
            let mut out = format!("{magic}\n{} {}\n255\n", field.width(), field.height()).into_bytes();
            out.extend(field.as_slice().iter().map(|&v| to_byte(v)));
            Ok(out)
        }
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_mcf(field: &ImageField) -> Vec<u8> {
    let (h, w, n) = field.shape();
    let mut out = MCF_MAGIC.to_vec();
    out.extend(format!("{h} {w} {n}\n").bytes());
    out.reserve(8 * field.as_slice().len());
    for v in field.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse the MCF header; returns it with the payload offset.
pub fn parse_mcf_header(bytes: &[u8]) -> Result<(McfHeader, usize)> {
    if !bytes.starts_with(MCF_MAGIC) {
        return format_err(0, "bad magic (expected \"MCF1\\n\")");
    }
    let start = MCF_MAGIC.len();
    let Some(len) = bytes[start..].iter().position(|&b| b == b'\n') else {
        return format_err(start, "unterminated dimension line");
    };
    let mut dims = [0usize; 3];
    let mut offset = start;
    let line = &bytes[start..start + len];
    let mut fields = line.split(|&b| b == b' ');
    for (slot, name) in dims.iter_mut().zip(["height", "width", "channels"]) {
        let Some(token) = fields.next() else {
            return format_err(start + len, format!("missing {name}"));
        };
        match parse_decimal(token) {
            Some(v) if v > 0 => *slot = v,
            _ => return format_err(offset, format!("{name} must be a positive decimal integer")),
        }
        offset += token.len() + 1;
    }
    if fields.next().is_some() {
        return format_err(offset, "unexpected data after the channel count");
    }
    let header = McfHeader {
        height: dims[0],
        width: dims[1],
        channels: dims[2],
    };
    Ok((header, start + len + 1))
}

fn parse_decimal(token: &[u8]) -> Option<usize> {
    if token.is_empty() || !token.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(token).ok()?.parse().ok()
}

fn decode_mcf(bytes: &[u8]) -> Result<ImageField> {
    let (header, payload) = parse_mcf_header(bytes)?;
    let count = header
        .height
        .checked_mul(header.width)
        .and_then(|v| v.checked_mul(header.channels))
        .filter(|v| v.checked_mul(8).is_some());
    let Some(count) = count else {
        return format_err(MCF_MAGIC.len(), "dimensions overflow");
    };
    let expected = payload + 8 * count;
    if bytes.len() < expected {
        return format_err(
            bytes.len(),
            format!("truncated payload: expected {} bytes, found {}", 8 * count, bytes.len() - payload),
        );
    }
    if bytes.len() > expected {
        return format_err(expected, "trailing bytes after payload");
    }
    let mut data = Vec::with_capacity(count);
    for (idx, chunk) in bytes[payload..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8 bytes"));
        if !v.is_finite() {
            return format_err(payload + 8 * idx, "non-finite sample");
        }
        data.push(v);
    }
    ImageField::new(header.height, header.width, header.channels, data)
}

/// Cursor over a PNM header: whitespace-separated tokens with `#` comments.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmHeader<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, name: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        match parse_decimal(&self.bytes[start..self.pos]) {
            Some(v) => Ok(v),
            None => format_err(start, format!("expected {name}")),
        }
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<ImageField> {
    let channels = if bytes.starts_with(b"P5") { 1 } else { 3 };
    let mut cur = PnmHeader { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return format_err(2, "bad magic");
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    if width == 0 || height == 0 {
        return format_err(cur.pos, "image dimensions must be positive");
    }
    let maxval_at = {
        cur.skip_space();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return format_err(maxval_at, format!("maxval must be 255, got {maxval}"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return format_err(cur.pos, "expected a single whitespace byte after maxval");
    }
    let payload = cur.pos + 1;
    let Some(count) = width.checked_mul(height).and_then(|v| v.checked_mul(channels)) else {
        return format_err(0, "dimensions overflow");
    };
    let expected = payload + count;
    if bytes.len() < expected {
        return format_err(
            bytes.len(),
            format!("truncated payload: expected {count} bytes, found {}", bytes.len() - payload),
        );
    }
    if bytes.len() > expected {
        return format_err(expected, "trailing bytes after payload");
    }
    let data = bytes[payload..].iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageField::new(height, width, channels, data)
}
