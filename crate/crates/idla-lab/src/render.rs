//! Raster rendering of cluster figures as binary PPM (P6).

use std::io::Write;

use crate::cluster::{unpack, ClusterHistory, LatenessField};
use crate::error::{Error, Result};
use crate::util::radius_for_volume;

/// 8-bit RGB raster; a deterministic function of (field, palette,
/// bounds).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn count_pixels(&self, rgb: [u8; 3]) -> usize {
        self.pixels.chunks_exact(3).filter(|c| *c == rgb).count()
    }

    /// Binary PPM with maxval 255 and a provenance comment.
    pub fn write_ppm<W: Write>(&self, w: &mut W, comment: &str) -> Result<()> {
        writeln!(w, "P6")?;
        if !comment.is_empty() {
            writeln!(w, "# {comment}")?;
        }
        writeln!(w, "{} {}", self.width, self.height)?;
        writeln!(w, "255")?;
        w.write_all(&self.pixels)?;
        Ok(())
    }
}

pub const RED: [u8; 3] = [220, 50, 47];
pub const BLUE: [u8; 3] = [38, 89, 210];
pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

fn bounding_half_width(sites: impl Iterator<Item = u64>, d: usize) -> i64 {
    let mut hw = 1i64;
    for site in sites {
        let c = unpack(site, d);
        for &v in &c[..d] {
            hw = hw.max(v.abs());
        }
    }
    hw
}

/// Diverging red-white-blue map of the lateness field: early sites
/// (negative `L`) shade toward red, late sites toward blue, symmetric
/// clamp at `bound`; unoccupied pixels stay black.
pub fn render_lateness(field: &LatenessField, bound: f64) -> Result<RasterImage> {
    if field.entries.is_empty() {
        return Err(Error::InvalidConfig("empty lateness field".into()));
    }
    if bound <= 0.0 {
        return Err(Error::InvalidConfig("palette bound must be positive".into()));
    }
    let hw = bounding_half_width(field.entries.iter().map(|e| e.0), 2);
    let size = (2 * hw + 1) as usize;
    let mut img = RasterImage::filled(size, size, BLACK);
    for &(site, l) in &field.entries {
        let c = unpack(site, 2);
        let x = (c[0] + hw) as usize;
        let y = (hw - c[1]) as usize;
        let f = (l.abs() / bound).min(1.0);
        let fade = (255.0 * (1.0 - f)).round() as u8;
        let rgb = if l < 0.0 {
            [255, fade, fade]
        } else if l > 0.0 {
            [fade, fade, 255]
        } else {
            WHITE
        };
        img.put(x, y, rgb);
    }
    Ok(img)
}

/// Symmetric difference at clock time `t`: sites of the cluster outside
/// the disk of radius `sqrt(t/pi)` in red, unoccupied sites inside the
/// disk in blue, on white.
pub fn render_symmetric_difference(history: &ClusterHistory, t: f64) -> Result<RasterImage> {
    if history.d != 2 {
        return Err(Error::UnsupportedDimension(history.d));
    }
    let r = radius_for_volume(t, 2);
    let count = history.count_at(t);
    let hw = bounding_half_width(history.sites()[..count].iter().copied(), 2)
        .max(r.ceil() as i64);
    let size = (2 * hw + 1) as usize;
    let mut img = RasterImage::filled(size, size, WHITE);
    let r2 = r * r;
    let in_prefix = |site: u64| {
        history
            .order_index(site)
            .is_some_and(|i| (i as usize) < count)
    };
    for gx in -hw..=hw {
        for gy in -hw..=hw {
            let site = crate::cluster::pack(&[gx, gy]);
            let inside_disk = ((gx * gx + gy * gy) as f64) <= r2;
            let occupied = in_prefix(site);
            let rgb = match (occupied, inside_disk) {
                (true, false) => RED,
                (false, true) => BLUE,
                _ => continue,
            };
            img.put((gx + hw) as usize, (hw - gy) as usize, rgb);
        }
    }
    Ok(img)
}
