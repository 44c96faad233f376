//! Binary PPM (P6) images and PGM (P5) label maps.
//!
//! Only 8-bit rasters (maxval 255) are accepted. The writers emit the
//! canonical header `P<n>\n<width> <height>\n255\n`, so output is
//! byte-deterministic.

use thiserror::Error;

/// Label value excluded from every metric count.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: String,
    },
    #[error("malformed header at byte {offset}: {reason}")]
    Header { offset: usize, reason: String },
    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),
    #[error("dimensions {width}x{height} are zero or overflow")]
    Dimensions { width: u64, height: u64 },
    #[error("truncated pixel data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("data length {actual} does not match {width}x{height}x{channels}")]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        actual: usize,
    },
}

/// An 8-bit RGB raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, CodecError> {
        check_dims(width as u64, height as u64, Self::CHANNELS)?;
        if data.len() != width * height * Self::CHANNELS {
            return Err(CodecError::DataLength {
                width,
                height,
                channels: Self::CHANNELS,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, CodecError> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let o = (row * self.width + col) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
}

/// Per-pixel class ids; [`IGNORE_LABEL`] marks pixels excluded from scoring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, CodecError> {
        check_dims(width as u64, height as u64, 1)?;
        if labels.len() != width * height {
            return Err(CodecError::DataLength {
                width,
                height,
                channels: 1,
                actual: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

fn check_dims(width: u64, height: u64, channels: usize) -> Result<usize, CodecError> {
    let err = CodecError::Dimensions { width, height };
    if width == 0 || height == 0 {
        return Err(err);
    }
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels as u64))
        .and_then(|n| usize::try_from(n).ok())
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or(err)
}

pub fn read_ppm(bytes: &[u8]) -> Result<Image, CodecError> {
    let (width, height, body) = parse_netpbm(bytes, "P6", 3)?;
    Ok(Image {
        width,
        height,
        data: body.to_vec(),
    })
}

pub fn write_ppm(img: &Image) -> Vec<u8> {
    write_netpbm("P6", img.width, img.height, &img.data)
}

pub fn read_pgm_labels(bytes: &[u8]) -> Result<LabelMap, CodecError> {
    let (width, height, body) = parse_netpbm(bytes, "P5", 1)?;
    Ok(LabelMap {
        width,
        height,
        labels: body.to_vec(),
    })
}

pub fn write_pgm_labels(labels: &LabelMap) -> Vec<u8> {
    write_netpbm("P5", labels.width, labels.height, &labels.labels)
}

fn write_netpbm(magic: &str, width: usize, height: usize, body: &[u8]) -> Vec<u8> {
    let header = format!("{magic}\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + body.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(body);
    out
}

/// Returns (width, height, exactly the declared pixel bytes). Bytes past the
/// declared raster are left unread.
fn parse_netpbm<'a>(
    bytes: &'a [u8],
    magic: &'static str,
    channels: usize,
) -> Result<(usize, usize, &'a [u8]), CodecError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(CodecError::BadMagic {
            expected: magic,
            found,
        });
    }
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    let width = cursor.field("width")?;
    let height = cursor.field("height")?;
    let maxval = cursor.field("maxval")?;
    if maxval != 255 {
        return Err(CodecError::UnsupportedMaxval(
            u32::try_from(maxval).unwrap_or(u32::MAX),
        ));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => {
            return Err(CodecError::Header {
                offset: cursor.pos,
                reason: "expected whitespace after maxval".into(),
            })
        }
    }
    let len = check_dims(width, height, channels)?;
    let body = &bytes[cursor.pos..];
    if body.len() < len {
        return Err(CodecError::Truncated {
            expected: len,
            actual: body.len(),
        });
    }
    Ok((width as usize, height as usize, &body[..len]))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    /// Skips whitespace and `#` comments, then reads one decimal field.
    fn field(&mut self, name: &str) -> Result<u64, CodecError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or(CodecError::Header {
                    offset: start,
                    reason: format!("{name} overflows"),
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(CodecError::Header {
                offset: start,
                reason: format!("expected {name}"),
            });
        }
        Ok(value)
    }
}
