//! Binary PPM (P6, maxval 255) codec and the small raster helpers used by
//! every image export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: fill.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&px);
    }

    pub fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            for x in 0..src.width.min(self.width.saturating_sub(x0)) {
                self.put(x0 + x, y0 + y, src.pixel(x, y));
            }
        }
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale(&self, factor: usize) -> RgbImage {
        let f = factor.max(1);
        let mut out = RgbImage::new(self.width * f, self.height * f, [0; 3]);
        for y in 0..out.height {
            for x in 0..out.width {
                out.put(x, y, self.pixel(x / f, y / f));
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut token = || -> std::result::Result<String, String> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    Some(c) if c.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err("unexpected end of header".into()),
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        if magic != "P6" {
            return Err(format!("expected P6 magic, found `{magic}`"));
        }
        let num = |t: String, what: &str| t.parse::<u32>().map_err(|_| format!("bad {what} `{t}`"));
        let width = num(token()?, "width")? as usize;
        let height = num(token()?, "height")? as usize;
        let maxval = num(token()?, "maxval")?;
        if maxval != 255 {
            return Err(format!("maxval:{maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(pos) {
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            _ => return Err("missing whitespace after maxval".into()),
        }
        let need = width * height * 3;
        let raster = &bytes[pos..];
        if raster.len() < need {
            return Err(format!("raster has {} bytes, expected {need}", raster.len()));
        }
        Ok(RgbImage {
            width,
            height,
            data: raster[..need].to_vec(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|reason| match reason.strip_prefix("maxval:") {
            Some(v) => Error::UnsupportedMaxval(v.parse().unwrap_or(0)),
            None => Error::Image {
                path: path.to_path_buf(),
                reason,
            },
        })
    }

    /// `(1, 3, H, W)` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let max = T::from_f64_lossy(255.0);
        Tensor::from_fn((1, 3, self.height, self.width), |_, c, y, x| {
            T::from_f64_lossy(self.data[(y * self.width + x) * 3 + c] as f64) / max
        })
    }
}

/// Maps a float in `[0, 1]` (clamped) to a byte.
pub fn to_byte<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64_lossy();
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Renders item `n` of a tensor with values already in `[0, 1]`.
///
/// Three channels map to RGB, anything else to the grey mean of channels.
pub fn render<T: Scalar>(t: &Tensor<T>, n: usize) -> RgbImage {
    let s = t.shape();
    let mut img = RgbImage::new(s.w, s.h, [0; 3]);
    for y in 0..s.h {
        for x in 0..s.w {
            let px = if s.c == 3 {
                [to_byte(t.at(n, 0, y, x)), to_byte(t.at(n, 1, y, x)), to_byte(t.at(n, 2, y, x))]
            } else {
                let mean = (0..s.c).map(|c| t.at(n, c, y, x)).sum::<T>() / T::from_usize(s.c.max(1)).unwrap();
                let g = to_byte(mean);
                [g, g, g]
            };
            img.put(x, y, px);
        }
    }
    img
}

/// Min-max normalises to `[0, 1]`; a constant tensor becomes uniform 0.5.
pub fn min_max_normalize<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = t
        .data()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let half = T::from_f64_lossy(0.5);
    if !(hi > lo) {
        return t.map(|_| half);
    }
    let range = hi - lo;
    t.map(|v| (v - lo) / range)
}

pub const SEPARATOR: [u8; 3] = [255, 255, 255];

/// Tiles images into a grid with `cols` columns and 1-px separators. Cells
/// are sized to the largest tile; smaller tiles sit at the cell origin.
pub fn grid(tiles: &[RgbImage], cols: usize) -> RgbImage {
    if tiles.is_empty() {
        return RgbImage::new(0, 0, [0; 3]);
    }
    let cols = cols.clamp(1, tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let cw = tiles.iter().map(|t| t.width).max().unwrap_or(0);
    let ch = tiles.iter().map(|t| t.height).max().unwrap_or(0);
    let mut out = RgbImage::new(cols * cw + (cols - 1), rows * ch + (rows - 1), SEPARATOR);
    for (k, t) in tiles.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        out.blit(t, c * (cw + 1), r * (ch + 1));
    }
    out
}

/// Grid side for `k` tiles: `⌈√k⌉`.
pub fn grid_cols(k: usize) -> usize {
    let mut c = 1;
    while c * c < k {
        c += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_red_then_blue() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = RgbImage::decode(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(1, 0), [0, 0, 255]);
        let t = img.to_tensor::<f32>();
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert_eq!(t.at(0, 2, 0, 1), 1.0);
        assert_eq!(t.at(0, 1, 0, 0), 0.0);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6 # made by hand\n1 1 # size\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(RgbImage::decode(&bytes).unwrap().data, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_wide_maxval_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        fs::write(&p, b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap();
        assert!(matches!(RgbImage::load(&p), Err(Error::UnsupportedMaxval(65535))));
        fs::write(&p, b"P3\n1 1\n255\n0 0 0").unwrap();
        assert!(matches!(RgbImage::load(&p), Err(Error::Image { .. })));
        fs::write(&p, b"P6\n2 2\n255\n\0\0\0").unwrap();
        assert!(matches!(RgbImage::load(&p), Err(Error::Image { .. })));
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut img = RgbImage::new(3, 2, [10, 20, 30]);
        img.put(2, 1, [255, 0, 7]);
        assert_eq!(RgbImage::decode(&img.encode()).unwrap(), img);
    }

    #[test]
    fn constant_normalises_to_grey() {
        let t = Tensor::<f32>::full((1, 3, 2, 2), 4.2);
        let img = render(&min_max_normalize(&t), 0);
        assert!(img.data.iter().all(|&b| b == 128));
    }

    #[test]
    fn grid_layout() {
        let tiles = vec![RgbImage::new(2, 2, [1, 1, 1]); 5];
        assert_eq!(grid_cols(5), 3);
        assert_eq!(grid_cols(16), 4);
        assert_eq!(grid_cols(1), 1);
        let g = grid(&tiles, 3);
        assert_eq!((g.width, g.height), (8, 5));
        assert_eq!(g.pixel(2, 0), SEPARATOR);
        assert_eq!(g.pixel(3, 0), [1, 1, 1]);
        assert_eq!(g.pixel(7, 4), [255, 255, 255]);
    }
}
