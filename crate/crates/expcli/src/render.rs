//! Lossless raster output. Angle snapshots map the (φ¹, φ²) plane angle to
//! hue, exit sets overlay as a dimmed mask, and decay fits render as simple
//! log-scale plots. Everything is written as binary PPM.

use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use gfflab::exploration::ExitSet;
use gfflab::gff::VectorField;
use gfflab::percolation::{DecayFit, DecayRow};

pub struct Raster {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Raster {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(
            std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?,
        );
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + t * (x1 - x0);
            let y = y0 + t * (y1 - y0);
            if x >= 0.0 && y >= 0.0 {
                self.set(x.round() as usize, y.round() as usize, rgb);
            }
        }
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Hue-mapped angles of two field components on the bounding grid.
pub fn render_angles(field: &VectorField, comps: (usize, usize)) -> Result<Raster> {
    if field.ncomp < 2 {
        bail!(
            "angle rendering needs at least two components; got {}",
            field.ncomp
        );
    }
    if comps.0 >= field.ncomp || comps.1 >= field.ncomp || comps.0 == comps.1 {
        bail!(
            "component pair ({}, {}) invalid for a {}-component field; pick two distinct \
             components with --comps",
            comps.0,
            comps.1,
            field.ncomp
        );
    }
    let side = field.graph.side();
    let mut raster = Raster::new(side, side, [0, 0, 0]);
    let mut min_c = (i32::MAX, i32::MAX);
    for s in 0..field.graph.nsites() {
        let c = field.graph.coord(s);
        min_c.0 = min_c.0.min(c.0);
        min_c.1 = min_c.1.min(c.1);
    }
    for s in 0..field.graph.nsites() {
        let c = field.graph.coord(s);
        let angle = field.comp(s, comps.1).atan2(field.comp(s, comps.0));
        let hue = (angle + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
        raster.set(
            (c.0 - min_c.0) as usize,
            (c.1 - min_c.1) as usize,
            hsv_to_rgb(hue, 0.9, 0.95),
        );
    }
    Ok(raster)
}

/// Dim everything outside the exit set so the explored region stands out.
pub fn overlay_exit_set(raster: &mut Raster, set: &ExitSet) -> Result<()> {
    let side = set.graph.side();
    if raster.width != side || raster.height != side {
        bail!(
            "overlay size mismatch: raster {}x{}, exit set side {side}",
            raster.width,
            raster.height
        );
    }
    let mut min_c = (i32::MAX, i32::MAX);
    for s in 0..set.graph.nsites() {
        let c = set.graph.coord(s);
        min_c.0 = min_c.0.min(c.0);
        min_c.1 = min_c.1.min(c.1);
    }
    for s in 0..set.graph.nsites() {
        if set.contains(s) {
            continue;
        }
        let c = set.graph.coord(s);
        let (x, y) = ((c.0 - min_c.0) as usize, (c.1 - min_c.1) as usize);
        let px = raster.get(x, y);
        raster.set(x, y, [px[0] / 4, px[1] / 4, px[2] / 4]);
    }
    Ok(())
}

/// Log-scale decay plot: points with error bars, the fitted line and its
/// 95% rate band.
pub fn render_decay_plot(rows: &[DecayRow], fit: Option<&DecayFit>) -> Result<Raster> {
    let (w, h) = (640usize, 480usize);
    let margin = 60.0;
    let mut raster = Raster::new(w, h, [255, 255, 255]);
    let usable: Vec<&DecayRow> = rows.iter().filter(|r| r.probability > 0.0).collect();
    if usable.len() < 2 {
        bail!("decay plot needs at least two nonzero rows");
    }
    let xmax = usable.iter().map(|r| r.distance).fold(0.0, f64::max) * 1.05;
    let ys: Vec<f64> = usable.iter().map(|r| r.probability.ln()).collect();
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = margin + x / xmax * (w as f64 - 2.0 * margin);
        let py = (h as f64 - margin) - (y - ymin) / (ymax - ymin) * (h as f64 - 2.0 * margin);
        (px, py)
    };
    // axes
    let (ox, oy) = to_px(0.0, ymin);
    let (tx, _) = to_px(xmax, ymin);
    let (_, ty) = to_px(0.0, ymax);
    raster.line(ox, oy, tx, oy, [0, 0, 0]);
    raster.line(ox, oy, ox, ty, [0, 0, 0]);
    if let Some(f) = fit {
        // 95% band around the fitted line
        let (lo, hi) = f.rate_ci();
        for (r0, r1, color) in [(lo, hi, [255, 200, 200u8])] {
            for s in 0..200 {
                let x = xmax * s as f64 / 200.0;
                let (px, py0) = to_px(x, f.log_intercept - r0 * x);
                let (_, py1) = to_px(x, f.log_intercept - r1 * x);
                let (a, b) = (py0.min(py1), py0.max(py1));
                let mut y = a;
                while y <= b {
                    if y >= 0.0 {
                        raster.set(px as usize, y as usize, color);
                    }
                    y += 1.0;
                }
            }
        }
        let (p0x, p0y) = to_px(0.0, f.log_intercept);
        let (p1x, p1y) = to_px(xmax, f.log_intercept - f.rate * xmax);
        raster.line(p0x, p0y, p1x, p1y, [200, 0, 0]);
    }
    for r in &usable {
        let y = r.probability.ln();
        let (px, py) = to_px(r.distance, y);
        let sigma_log = r.stderr / r.probability;
        let (_, pe0) = to_px(r.distance, y - sigma_log);
        let (_, pe1) = to_px(r.distance, y + sigma_log);
        raster.line(px, pe0, px, pe1, [0, 0, 200]);
        for dx in -2i32..=2 {
            for dy in -2i32..=2 {
                if dx * dx + dy * dy <= 4 {
                    raster.set(
                        (px as i32 + dx).max(0) as usize,
                        (py as i32 + dy).max(0) as usize,
                        [0, 0, 200],
                    );
                }
            }
        }
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gfflab::gff::FieldSampler;
    use gfflab::rngutil::stream_rng;

    #[test]
    fn constant_field_renders_constant_hue() {
        let g = gfflab::lattice::build_window(3).unwrap();
        let mut f = VectorField::zeros(&g, 2);
        for s in 0..g.nsites() {
            f.value_mut(s)[0] = 0.5;
            f.value_mut(s)[1] = 0.5;
        }
        let r = render_angles(&f, (0, 1)).unwrap();
        let first = r.get(0, 0);
        for x in 0..r.width {
            for y in 0..r.height {
                assert_eq!(r.get(x, y), first);
            }
        }
    }

    #[test]
    fn rejects_bad_component_choice() {
        let g = gfflab::lattice::build_window(2).unwrap();
        let f = VectorField::zeros(&g, 1);
        assert!(render_angles(&f, (0, 1)).is_err());
        let f3 = VectorField::zeros(&g, 3);
        assert!(render_angles(&f3, (1, 1)).is_err());
        assert!(render_angles(&f3, (0, 2)).is_ok());
    }

    #[test]
    fn ppm_roundtrip_and_overlay() {
        let sampler = FieldSampler::box_zero_boundary(6, 0.0).unwrap();
        let mut rng = stream_rng(3, 0);
        let f = sampler.sample(2, &mut rng);
        let mut raster = render_angles(&f, (0, 1)).unwrap();
        let set = gfflab::exploration::explore(&f, 1.0, 1, gfflab::lattice::JumpMetric::L1, false)
            .unwrap();
        overlay_exit_set(&mut raster, &set).unwrap();
        let dir = std::env::temp_dir().join("expcli_render_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("angles.ppm");
        raster.save_ppm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n13 13\n255\n"));
        assert_eq!(bytes.len(), 13 + 13 * 13 * 3);
    }

    #[test]
    fn decay_plot_writes() {
        let rows: Vec<DecayRow> = (1..8)
            .map(|r| DecayRow {
                distance: r as f64,
                probability: (-0.4 * r as f64).exp(),
                stderr: 0.01,
            })
            .collect();
        let fit = gfflab::percolation::decay_scan(&rows).unwrap();
        let raster = render_decay_plot(&rows, Some(&fit)).unwrap();
        assert_eq!(raster.width, 640);
    }
}
