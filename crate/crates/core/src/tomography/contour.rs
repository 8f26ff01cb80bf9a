//! Half-maximum contour of a reconstructed density by marching squares.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::radon::PhaseSpaceDensity;
use crate::error::{Error, Result};

pub const GAUSSIAN_FWHM_PER_SD: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwhmContour {
    /// Closed polyline `(x, p)` of the largest half-maximum contour.
    pub points: Vec<[f64; 2]>,
    /// Mean diameter through the contour centroid.
    pub mean_fwhm: f64,
    pub level: f64,
    pub warnings: Vec<String>,
}

// Edge identifiers: horizontal edge between (i, j) and (i + 1, j) is
// (i, j, 0); vertical edge between (i, j) and (i, j + 1) is (i, j, 1).
type EdgeId = (usize, usize, u8);

fn edge_point(d: &PhaseSpaceDensity, e: EdgeId, level: f64) -> [f64; 2] {
    let (i, j, dir) = e;
    let (i2, j2) = if dir == 0 { (i + 1, j) } else { (i, j + 1) };
    let (a, b) = (d.at(i, j), d.at(i2, j2));
    let t = if a == b { 0.5 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
    let x = d.axis.point(i) + t * (d.axis.point(i2) - d.axis.point(i));
    let p = d.axis.point(j) + t * (d.axis.point(j2) - d.axis.point(j));
    [x, p]
}

fn segments(d: &PhaseSpaceDensity, level: f64) -> Vec<(EdgeId, EdgeId)> {
    let n = d.n();
    let mut out = Vec::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let v = [d.at(i, j), d.at(i + 1, j), d.at(i + 1, j + 1), d.at(i, j + 1)];
            let case = v
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, &x)| acc | (((x >= level) as u8) << k));
            // Cell edges: bottom (i,j)-(i+1,j), right (i+1,j)-(i+1,j+1),
            // top (i,j+1)-(i+1,j+1), left (i,j)-(i,j+1).
            let bottom = (i, j, 0);
            let right = (i + 1, j, 1);
            let top = (i, j + 1, 0);
            let left = (i, j, 1);
            let centre_high = v.iter().sum::<f64>() / 4.0 >= level;
            match case {
                0 | 15 => {}
                1 | 14 => out.push((left, bottom)),
                2 | 13 => out.push((bottom, right)),
                3 | 12 => out.push((left, right)),
                4 | 11 => out.push((right, top)),
                6 | 9 => out.push((bottom, top)),
                7 | 8 => out.push((left, top)),
                5 => {
                    if centre_high {
                        out.push((left, top));
                        out.push((bottom, right));
                    } else {
                        out.push((left, bottom));
                        out.push((right, top));
                    }
                }
                10 => {
                    if centre_high {
                        out.push((left, bottom));
                        out.push((right, top));
                    } else {
                        out.push((left, top));
                        out.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    out
}

/// Chain segments into polylines through shared edges.
fn chain(segs: &[(EdgeId, EdgeId)]) -> Vec<Vec<EdgeId>> {
    let mut adj: HashMap<EdgeId, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segs.iter().enumerate() {
        adj.entry(*a).or_default().push(k);
        adj.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut lines = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut line = vec![segs[start].0, segs[start].1];
        // Extend forward, then backward.
        for _ in 0..2 {
            loop {
                let tail = *line.last().unwrap();
                let next = adj[&tail].iter().copied().find(|&k| !used[k]);
                match next {
                    Some(k) => {
                        used[k] = true;
                        let (a, b) = segs[k];
                        line.push(if a == tail { b } else { a });
                    }
                    None => break,
                }
            }
            line.reverse();
        }
        lines.push(line);
    }
    lines
}

fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|k| {
            let (a, b) = (pts[k], pts[(k + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
}

/// Distance from `c` to the polygon boundary along direction `phi`.
fn ray_hit(pts: &[[f64; 2]], c: [f64; 2], phi: f64) -> Option<f64> {
    let (s, co) = phi.sin_cos();
    let n = pts.len();
    let mut best: Option<f64> = None;
    for k in 0..n {
        let (a, b) = (pts[k], pts[(k + 1) % n]);
        let e = [b[0] - a[0], b[1] - a[1]];
        let den = co * e[1] - s * e[0];
        if den.abs() < 1e-15 {
            continue;
        }
        let w = [a[0] - c[0], a[1] - c[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / den;
        let u = (w[0] * s - w[1] * co) / den;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
            best = Some(best.map_or(t, |b: f64| b.max(t)));
        }
    }
    best
}

fn local_maxima_above(d: &PhaseSpaceDensity, level: f64) -> usize {
    let n = d.n();
    let mut count = 0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let v = d.at(i, j);
            if v < level {
                continue;
            }
            let mut is_max = true;
            for di in [-1i64, 0, 1] {
                for dj in [-1i64, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let w = d.at((i as i64 + di) as usize, (j as i64 + dj) as usize);
                    if w >= v && !(w == v && (di, dj) < (0, 0)) {
                        is_max = false;
                    }
                }
            }
            if is_max {
                count += 1;
            }
        }
    }
    count
}

/// Half-maximum contour and its mean diameter.
pub fn fwhm_contour(d: &PhaseSpaceDensity) -> Result<FwhmContour> {
    if d.n() < 3 {
        return Err(Error::invalid("density grid too small for a contour"));
    }
    let (_, _, peak) = d.peak();
    if !(peak > 0.0) {
        return Err(Error::Statistics("density has no positive maximum".into()));
    }
    let level = 0.5 * peak;
    let lines: Vec<Vec<[f64; 2]>> = chain(&segments(d, level))
        .into_iter()
        .map(|l| l.into_iter().map(|e| edge_point(d, e, level)).collect::<Vec<_>>())
        .filter(|l| l.len() >= 4)
        .collect();
    // Islands under 5% of the main contour's area are reconstruction noise.
    let largest = lines.iter().map(|l| polygon_area(l)).fold(0.0, f64::max);
    let significant = lines.iter().filter(|l| polygon_area(l) >= 0.05 * largest).count();
    let mut warnings = Vec::new();
    if significant > 1 || local_maxima_above(d, 0.8 * peak) > 1 {
        let msg = format!(
            "density is multimodal at half maximum ({significant} significant contours); using the largest"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut points = lines
        .into_iter()
        .max_by(|a, b| polygon_area(a).total_cmp(&polygon_area(b)))
        .ok_or_else(|| Error::Statistics("no half-maximum contour found".into()))?;
    if points.first() == points.last() {
        points.pop();
    }
    let m = points.len() as f64;
    let c = [
        points.iter().map(|p| p[0]).sum::<f64>() / m,
        points.iter().map(|p| p[1]).sum::<f64>() / m,
    ];
    let rays = 180;
    let mut total = 0.0;
    let mut hits = 0;
    for k in 0..rays {
        let phi = PI * k as f64 / rays as f64;
        if let (Some(a), Some(b)) = (ray_hit(&points, c, phi), ray_hit(&points, c, phi + PI)) {
            total += a + b;
            hits += 1;
        }
    }
    if hits == 0 {
        return Err(Error::Statistics("half-maximum contour does not enclose its centroid".into()));
    }
    Ok(FwhmContour {
        points,
        mean_fwhm: total / hits as f64,
        level,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::marginal::Axis;

    fn gaussian_grid(sx: f64, sp: f64, half: f64, step: f64) -> PhaseSpaceDensity {
        let axis = Axis::symmetric(half, step).unwrap();
        let mut values = Vec::with_capacity(axis.len * axis.len);
        for i in 0..axis.len {
            for j in 0..axis.len {
                let (x, p) = (axis.point(i), axis.point(j));
                values.push((-0.5 * (x * x / (sx * sx) + p * p / (sp * sp))).exp());
            }
        }
        PhaseSpaceDensity { axis, values, scale: 1.0 }
    }

    #[test]
    fn unit_gaussian_fwhm() {
        let c = fwhm_contour(&gaussian_grid(1.0, 1.0, 4.0, 0.05)).unwrap();
        assert!((c.mean_fwhm / GAUSSIAN_FWHM_PER_SD - 1.0).abs() < 0.02, "{}", c.mean_fwhm);
        assert!(c.warnings.is_empty());
        assert!(c.points.len() > 50);
    }

    #[test]
    fn thermal_state_fwhm() {
        let c = fwhm_contour(&gaussian_grid(290.2, 290.2, 1200.0, 10.0)).unwrap();
        assert!((c.mean_fwhm - 683.0).abs() < 7.0, "{}", c.mean_fwhm);
    }

    #[test]
    fn bimodal_warns() {
        let mut d = gaussian_grid(0.5, 0.5, 4.0, 0.05);
        let n = d.n();
        let shifted = gaussian_grid(0.5, 0.5, 4.0, 0.05);
        let shift = 40;
        for i in 0..n {
            for j in 0..n {
                let a = if i >= shift { shifted.at(i - shift, j) } else { 0.0 };
                let b = if i + shift < n { shifted.at(i + shift, j) } else { 0.0 };
                d.values[i * n + j] = a + 0.9 * b;
            }
        }
        let c = fwhm_contour(&d).unwrap();
        assert!(!c.warnings.is_empty());
    }
}
