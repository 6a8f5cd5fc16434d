//! Netpbm reading and writing (P2/P3 ASCII, P5/P6 binary, 8-bit).
//! <https://netpbm.sourceforge.net/doc/>

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded 8-bit Netpbm image. `channels` is 1 for PGM and 3 for PPM;
/// samples are interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("{what} out of range"))
    }
}

/// Decode a PNM byte buffer; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<PnmImage> {
    let err = |msg: String| Error::Pnm {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(err("not a PNM file (bad magic number)".into()));
    }
    let (channels, ascii) = match bytes[1] {
        b'2' => (1, true),
        b'3' => (3, true),
        b'5' => (1, false),
        b'6' => (3, false),
        other => {
            return Err(err(format!(
                "unsupported magic number P{}",
                char::from(other)
            )))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width").map_err(err)?;
    let height = h.number("height").map_err(err)?;
    let maxval = h.number("maxval").map_err(err)?;
    if width == 0 || height == 0 {
        return Err(err(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(format!("unsupported maxval {maxval} (only 8-bit images)")));
    }
    let count = width * height * channels;
    let data = if ascii {
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let v = h.number("sample").map_err(err)?;
            if v > maxval {
                return Err(err(format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as u8);
        }
        data
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
            return Err(err("missing raster".into()));
        }
        let raster = bytes
            .get(start..start + count)
            .ok_or_else(|| err(format!("truncated raster: expected {count} bytes")))?;
        if let Some(v) = raster.iter().find(|&&v| v as usize > maxval) {
            return Err(err(format!("sample {v} exceeds maxval {maxval}")));
        }
        raster.to_vec()
    };
    Ok(PnmImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        data,
    })
}

pub fn read(path: &Path) -> Result<PnmImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Binary encoding: P6 for 3 channels, P5 for 1 channel, maxval 255.
pub fn encode(img: &PnmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write(path: &Path, img: &PnmImage) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&encode(img))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}
