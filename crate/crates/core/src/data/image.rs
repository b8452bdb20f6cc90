//! 8-bit images and the binary PPM (P6) / PGM (P5) codecs.

use std::io::Write;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit image with 1 (gray / class id) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Invalid(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Image {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * self.channels;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// `1 × C × H × W` tensor with `v / 127.5 − 1`.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0.0; w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = self.get(x, y, ch) as f64 / 127.5 - 1.0;
                }
            }
        }
        Tensor::new(data, &[1, c, h, w]).expect("shape matches data")
    }

    /// Inverse of [`Image::to_tensor`], clamping to `[−1, 1]` and rounding.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4("Image::from_tensor")?;
        if n != 1 || (c != 1 && c != 3) {
            return Err(shape_err(
                "Image::from_tensor",
                format!("expected 1x1xHxW or 1x3xHxW, got {:?}", t.shape()),
            ));
        }
        let mut img = Image::filled(w, h, c, 0);
        let d = t.data();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = (d[(ch * h + y) * w + x].clamp(-1.0, 1.0) + 1.0) * 127.5;
                    img.set(x, y, ch, v.round() as u8);
                }
            }
        }
        Ok(img)
    }
}

/// Serializes as P6 (3 channels) or P5 (1 channel), maxval 255.
pub fn encode_image(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed {
        what: "image header".into(),
        detail: detail.into(),
    }
}

/// Header tokenizer: whitespace-separated fields with `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<&str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(malformed("header ends early")),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| malformed("non-ASCII header"))
    }

    fn number(&mut self, name: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| malformed(format!("{name} `{tok}` is not a number")))
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match h.token()? {
        "P6" => 3,
        "P5" => 1,
        other => return Err(malformed(format!("unsupported magic `{other}`"))),
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(malformed(format!("maxval {maxval} unsupported, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(malformed(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the payload
    let start = h.pos + 1;
    let expected = width * height * channels;
    let actual = bytes.len().saturating_sub(start);
    if actual < expected {
        return Err(Error::Truncated {
            what: "image payload".into(),
            expected,
            actual,
        });
    }
    Image::new(width, height, channels, bytes[start..start + expected].to_vec())
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_image(img))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_image(&std::fs::read(path)?)
}
