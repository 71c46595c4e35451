//! Deterministic rendering of a 12-lead record to a small grayscale image.
//!
//! Each lead gets its own horizontal band. Traces are drawn with integer
//! line rasterization on a canvas `supersample` times larger in each
//! direction, then box-averaged down and quantized. Every step is integer
//! or IEEE-exact, so the output is byte-identical across platforms.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{EcgRecord, N_LEADS};

pub const IMAGE_WIDTH: usize = 506;
pub const IMAGE_HEIGHT: usize = 187;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub width: usize,
    pub height: usize,
    pub supersample: usize,
    pub background: u8,
    pub trace: u8,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            supersample: 4,
            background: 255,
            trace: 0,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.supersample == 0 {
            return Err(Error::domain("supersample must be >= 1"));
        }
        if self.width < 2 || self.height < N_LEADS {
            return Err(Error::domain(format!(
                "image {}x{} too small for {N_LEADS} bands",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Output rows `[start, end)` of band `k`.
    pub fn band_rows(&self, k: usize) -> (usize, usize) {
        (k * self.height / N_LEADS, (k + 1) * self.height / N_LEADS)
    }
}

/// Row-major 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// `round_half_even(num / den)` for non-negative integers.
fn div_round_even(num: u64, den: u64) -> u64 {
    let q = num / den;
    let r = num % den;
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
        std::cmp::Ordering::Less => q,
    }
}

/// Supersampled x coordinate of sample `i` out of `n`.
pub fn sample_x(i: usize, n: usize, canvas_width: usize) -> usize {
    if n < 2 {
        return 0;
    }
    div_round_even((i * (canvas_width - 1)) as u64, (n - 1) as u64) as usize
}

struct Canvas {
    width: usize,
    ink: Vec<bool>,
}

impl Canvas {
    fn plot(&mut self, x: i64, y: i64) {
        self.ink[y as usize * self.width + x as usize] = true;
    }

    /// Bresenham line, both endpoints inclusive.
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64)) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y) = (x0, y0);
        let mut err = dx + dy;
        loop {
            self.plot(x, y);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

pub fn rasterize(record: &EcgRecord, cfg: &RasterConfig) -> Result<RasterImage> {
    cfg.validate()?;
    let n = record.n_samples();
    if n == 0 {
        return Err(Error::domain("cannot rasterize a zero-length lead"));
    }
    let s = cfg.supersample;
    let cw = cfg.width * s;
    let ch = cfg.height * s;
    let mut canvas = Canvas {
        width: cw,
        ink: vec![false; cw * ch],
    };

    for (k, lead) in record.leads().iter().enumerate() {
        let (start, end) = cfg.band_rows(k);
        let top = (start * s) as i64;
        let bottom = (end * s - 1) as i64;
        let span = (bottom - top) as f64;
        let (lo, hi) = lead.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        let y_of = |v: f64| -> i64 {
            if range > 0.0 {
                bottom - ((v - lo) / range * span).round_ties_even() as i64
            } else {
                top + (bottom - top) / 2
            }
        };

        let mut prev = (sample_x(0, n, cw) as i64, y_of(lead[0]));
        canvas.plot(prev.0, prev.1);
        for (i, &v) in lead.iter().enumerate().skip(1) {
            let p = (sample_x(i, n, cw) as i64, y_of(v));
            canvas.line(prev, p);
            prev = p;
        }
    }

    let cells = (s * s) as u64;
    let bg = u64::from(cfg.background);
    let fg = u64::from(cfg.trace);
    let mut img = RasterImage::new(cfg.width, cfg.height, cfg.background);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let mut covered = 0u64;
            for sy in 0..s {
                let row = (y * s + sy) * cw + x * s;
                covered += canvas.ink[row..row + s].iter().filter(|&&b| b).count() as u64;
            }
            // Linear blend between background and trace by coverage.
            let v = if bg >= fg {
                bg - div_round_even((bg - fg) * covered, cells)
            } else {
                bg + div_round_even((fg - bg) * covered, cells)
            };
            img.set(x, y, v as u8);
        }
    }
    Ok(img)
}

/// Writes an 8-bit grayscale, non-interlaced PNG.
pub fn write_png(img: &RasterImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::data("pixel buffer does not match image dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format(format!("png header: {e}")))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::format(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<RasterImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(format!(
            "{}: expected 8-bit grayscale PNG",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Ok(RasterImage {
        width: info.width as usize,
        height: info.height as usize,
        pixels: buf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(n: usize) -> EcgRecord {
        EcgRecord::new("z", 500.0, vec![vec![0.0; n]; N_LEADS], None).unwrap()
    }

    #[test]
    fn rounding_helper() {
        assert_eq!(div_round_even(5, 2), 2);
        assert_eq!(div_round_even(7, 2), 4);
        assert_eq!(div_round_even(8, 3), 3);
        assert_eq!(div_round_even(0, 3), 0);
    }

    #[test]
    fn x_mapping_endpoints_and_monotone() {
        let cw = 2024;
        assert_eq!(sample_x(0, 5000, cw), 0);
        assert_eq!(sample_x(4999, 5000, cw), cw - 1);
        let xs: Vec<usize> = (0..5000).map(|i| sample_x(i, 5000, cw)).collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bands_tile_the_image() {
        let cfg = RasterConfig::default();
        let mut next = 0;
        for k in 0..N_LEADS {
            let (a, b) = cfg.band_rows(k);
            assert_eq!(a, next);
            assert!(b - a >= 15);
            next = b;
        }
        assert_eq!(next, IMAGE_HEIGHT);
    }

    #[test]
    fn flat_record_draws_midlines() {
        let cfg = RasterConfig::default();
        let img = rasterize(&zeros(100), &cfg).unwrap();
        assert_eq!((img.width, img.height), (IMAGE_WIDTH, IMAGE_HEIGHT));
        for y in 0..img.height {
            let row = &img.pixels[y * img.width..(y + 1) * img.width];
            let k = (0..N_LEADS)
                .find(|&k| {
                    let (a, b) = cfg.band_rows(k);
                    (a..b).contains(&y)
                })
                .unwrap();
            let (a, b) = cfg.band_rows(k);
            let (top, bottom) = (a * 4, b * 4 - 1);
            let mid_row = (top + (bottom - top) / 2) / 4;
            if y == mid_row {
                // one ink row of four per output row: 255 - 255/4 rounds to 191
                assert!(row.iter().all(|&v| v == 191), "row {y}");
            } else {
                assert!(row.iter().all(|&v| v == 255), "row {y}");
            }
        }
    }

    #[test]
    fn png_round_trip_and_header() {
        let img = rasterize(&zeros(50), &RasterConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        write_png(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &[0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A]);
        assert_eq!(&bytes[12..16], b"IHDR");
        assert_eq!(u32::from_be_bytes(bytes[16..20].try_into().unwrap()), 506);
        assert_eq!(u32::from_be_bytes(bytes[20..24].try_into().unwrap()), 187);
        assert_eq!(bytes[24], 8);
        assert_eq!(bytes[25], 0);
        assert_eq!(bytes[28], 0, "no interlace");
        assert_eq!(read_png(&path).unwrap(), img);
    }

    #[test]
    fn supersample_zero_rejected() {
        let cfg = RasterConfig {
            supersample: 0,
            ..RasterConfig::default()
        };
        assert!(rasterize(&zeros(10), &cfg).is_err());
    }
}
