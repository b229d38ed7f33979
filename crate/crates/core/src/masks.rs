//! Temporally-varying cartesian k-space sampling masks.
//!
//! Coordinates are stored in the centered (fftshift) convention: DC sits at
//! grid index (W/2, H/2). `flat_indices` converts to positions in the
//! natural (unshifted) FFT array. Grid sizes must be even.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Golden angle in degrees; default per-frame rotation of the spiral arm.
pub fn golden_angle_deg() -> f64 {
    180.0 * (3.0 - 5.0f64.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPattern {
    Spiral,
    Epi,
}

impl std::fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskPattern::Spiral => write!(f, "spiral"),
            MaskPattern::Epi => write!(f, "epi"),
        }
    }
}

impl std::str::FromStr for MaskPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spiral" => Ok(MaskPattern::Spiral),
            "epi" => Ok(MaskPattern::Epi),
            other => Err(Error::Config(format!(
                "unknown sampling pattern '{other}' (expected spiral or epi)"
            ))),
        }
    }
}

/// Exactly `m` unique in-bounds (kx, ky) samples per timeframe.
#[derive(Clone, Debug)]
pub struct SamplingMask {
    pub pattern: MaskPattern,
    pub h: usize,
    pub w: usize,
    pub m: usize,
    /// Per frame, centered-convention (kx, ky) pairs.
    pub frames: Vec<Vec<(u32, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    pattern: MaskPattern,
    h: usize,
    w: usize,
    m: usize,
    t_frames: usize,
    /// Centered convention: DC at (W/2, H/2); see `flat_indices`.
    convention: String,
    id: String,
}

fn check_dims(h: usize, w: usize, m: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!("grid must be even-sized, got {h}x{w}")));
    }
    if m == 0 || m > h * w {
        return Err(Error::Config(format!("m = {m} out of range for {h}x{w} grid")));
    }
    Ok(())
}

impl SamplingMask {
    pub fn t_frames(&self) -> usize {
        self.frames.len()
    }

    /// Flat indices into the unshifted H x W FFT array, per frame.
    pub fn flat_indices(&self) -> Vec<Vec<u32>> {
        let (h, w) = (self.h as u32, self.w as u32);
        self.frames
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|&(kx, ky)| {
                        let ux = (kx + w / 2) % w;
                        let uy = (ky + h / 2) % h;
                        uy * w + ux
                    })
                    .collect()
            })
            .collect()
    }

    fn index_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.frames.len() * self.m * 8);
        for frame in &self.frames {
            for &(kx, ky) in frame {
                bytes.extend_from_slice(&kx.to_le_bytes());
                bytes.extend_from_slice(&ky.to_le_bytes());
            }
        }
        bytes
    }

    /// Content id tying datasets and operators to the exact mask.
    pub fn id(&self) -> String {
        crate::io::sha256_hex(&self.index_bytes())
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let header = MaskHeader {
            pattern: self.pattern,
            h: self.h,
            w: self.w,
            m: self.m,
            t_frames: self.t_frames(),
            convention: "centered; DC at (W/2, H/2); uint32 LE (kx, ky) pairs, frame-major".into(),
            id: self.id(),
        };
        crate::io::write_json(&base.with_extension("json"), &header)?;
        std::fs::write(base.with_extension("idx.bin"), self.index_bytes())?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let header: MaskHeader = crate::io::read_json(&base.with_extension("json"))?;
        let bytes = std::fs::read(base.with_extension("idx.bin"))?;
        let expect = header.t_frames * header.m * 8;
        if bytes.len() != expect {
            return Err(Error::Parse {
                path: base.display().to_string(),
                detail: format!("index file holds {} bytes, expected {expect}", bytes.len()),
            });
        }
        let mut frames = Vec::with_capacity(header.t_frames);
        let mut it = bytes.chunks_exact(4);
        for _ in 0..header.t_frames {
            let mut frame = Vec::with_capacity(header.m);
            for _ in 0..header.m {
                let kx = u32::from_le_bytes(it.next().unwrap().try_into().unwrap());
                let ky = u32::from_le_bytes(it.next().unwrap().try_into().unwrap());
                frame.push((kx, ky));
            }
            frames.push(frame);
        }
        let mask = SamplingMask {
            pattern: header.pattern,
            h: header.h,
            w: header.w,
            m: header.m,
            frames,
        };
        if mask.id() != header.id {
            return Err(Error::HashMismatch {
                kind: "mask",
                expected: header.id,
                got: mask.id(),
            });
        }
        Ok(mask)
    }
}

/// Rasterize one Archimedean arm r = a*theta rotated by `rot_rad`, center
/// outwards, keeping the first `m` unique in-bounds lattice points.
fn rasterize_spiral_frame(
    h: usize,
    w: usize,
    m: usize,
    theta_max: f64,
    rot_rad: f64,
    visited: &mut [bool],
) -> Vec<(u32, u32)> {
    visited.fill(false);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let r_corner = (cx * cx + cy * cy).sqrt();
    let a = r_corner / theta_max;
    let mut pts = Vec::with_capacity(m);
    let mut theta = 0.0f64;
    while theta <= theta_max && pts.len() < m {
        let r = a * theta;
        let ang = theta + rot_rad;
        let x = (cx + r * ang.cos()).round();
        let y = (cy + r * ang.sin()).round();
        if x >= 0.0 && (x as usize) < w && y >= 0.0 && (y as usize) < h {
            let (xi, yi) = (x as usize, y as usize);
            if !visited[yi * w + xi] {
                visited[yi * w + xi] = true;
                pts.push((xi as u32, yi as u32));
            }
        }
        // Advance by ~0.4 px of arc length.
        let speed = a * (1.0 + theta * theta).sqrt();
        theta += 0.4 / speed.max(1e-9);
    }
    pts
}

/// Rotating single-arm Archimedean spiral. The arm is parametrized to reach
/// the corner radius; the number of turns is grown until every frame yields
/// at least m unique lattice points, then each frame keeps the first m
/// points along the arm (center outwards).
pub fn make_spiral_mask(
    h: usize,
    w: usize,
    m: usize,
    t_frames: usize,
    rotation_increment_deg: f64,
) -> Result<SamplingMask> {
    check_dims(h, w, m)?;
    let r_corner = ((h * h + w * w) as f64).sqrt() / 2.0;
    let mut turns = (m as f64 / (std::f64::consts::PI * r_corner)).max(0.3);
    let mut visited = vec![false; h * w];

    'grow: for _ in 0..64 {
        let theta_max = turns * 2.0 * std::f64::consts::PI;
        let mut frames = Vec::with_capacity(t_frames);
        for f in 0..t_frames {
            let rot = (f as f64 * rotation_increment_deg).rem_euclid(360.0).to_radians();
            let pts = rasterize_spiral_frame(h, w, m, theta_max, rot, &mut visited);
            if pts.len() < m {
                turns *= 1.25;
                continue 'grow;
            }
            frames.push(pts);
        }
        return Ok(SamplingMask {
            pattern: MaskPattern::Spiral,
            h,
            w,
            m,
            frames,
        });
    }
    Err(Error::Numerical(format!(
        "spiral cannot supply {m} unique samples on a {h}x{w} grid"
    )))
}

/// Largest stride near h * (golden ratio conjugate) that is coprime with h,
/// so shifting by it cycles through every row.
fn epi_stride(h: usize) -> usize {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let target = (h as f64 * 0.618_033_988_749_894_9).round() as usize;
    for delta in 0..h {
        for cand in [target.saturating_sub(delta), target + delta] {
            let c = cand % h;
            if c >= 1 && gcd(c, h) == 1 {
                return c;
            }
        }
    }
    1
}

/// Shifting multi-shot EPI: ceil(m/W) evenly spaced full rows per frame,
/// base row advancing by a fixed stride each frame, last row truncated so
/// each frame holds exactly m samples.
pub fn make_epi_mask(h: usize, w: usize, m: usize, t_frames: usize) -> Result<SamplingMask> {
    check_dims(h, w, m)?;
    let lines = m.div_ceil(w);
    if lines > h {
        return Err(Error::Config(format!("m = {m} needs {lines} rows but grid has {h}")));
    }
    let stride = epi_stride(h);
    let mut frames = Vec::with_capacity(t_frames);
    for f in 0..t_frames {
        let base = (f * stride) % h;
        let mut pts = Vec::with_capacity(m);
        for j in 0..lines {
            let row = (base + j * h / lines) % h;
            let cols = if j + 1 == lines { m - j * w } else { w };
            for kx in 0..cols {
                pts.push((kx as u32, row as u32));
            }
        }
        frames.push(pts);
    }
    Ok(SamplingMask {
        pattern: MaskPattern::Epi,
        h,
        w,
        m,
        frames,
    })
}

pub fn make_mask(
    pattern: MaskPattern,
    h: usize,
    w: usize,
    m: usize,
    t_frames: usize,
) -> Result<SamplingMask> {
    match pattern {
        MaskPattern::Spiral => make_spiral_mask(h, w, m, t_frames, golden_angle_deg()),
        MaskPattern::Epi => make_epi_mask(h, w, m, t_frames),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn spiral_frames_have_exactly_m_unique_points() {
        let mask = make_spiral_mask(64, 64, 63, 20, golden_angle_deg()).unwrap();
        for frame in &mask.frames {
            assert_eq!(frame.len(), 63);
            let set: HashSet<_> = frame.iter().collect();
            assert_eq!(set.len(), 63);
            assert!(frame.iter().all(|&(x, y)| x < 64 && y < 64));
        }
    }

    #[test]
    fn spiral_full_scale_frame_count() {
        let mask = make_spiral_mask(224, 224, 771, 4, golden_angle_deg()).unwrap();
        for frame in &mask.frames {
            assert_eq!(frame.len(), 771);
        }
    }

    #[test]
    fn spiral_rotation_periodicity() {
        let mask = make_spiral_mask(64, 64, 63, 8, 90.0).unwrap();
        assert_eq!(mask.frames[0], mask.frames[4]);
        assert_ne!(mask.frames[0], mask.frames[1]);
    }

    #[test]
    fn epi_single_line_case() {
        let mask = make_epi_mask(64, 64, 64, 6).unwrap();
        let stride = epi_stride(64);
        for (f, frame) in mask.frames.iter().enumerate() {
            assert_eq!(frame.len(), 64);
            let row = frame[0].1 as usize;
            assert_eq!(row, (f * stride) % 64);
            assert!(frame.iter().all(|&(_, y)| y as usize == row));
        }
    }

    #[test]
    fn epi_771_decomposes_into_three_lines_plus_99() {
        let mask = make_epi_mask(224, 224, 771, 2).unwrap();
        let frame = &mask.frames[0];
        assert_eq!(frame.len(), 771);
        let mut per_row = std::collections::HashMap::new();
        for &(_, y) in frame {
            *per_row.entry(y).or_insert(0usize) += 1;
        }
        let mut counts: Vec<usize> = per_row.values().copied().collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![99, 224, 224, 224]);
    }

    #[test]
    fn epi_covers_every_row_over_200_frames() {
        let mask = make_epi_mask(64, 64, 63, 200).unwrap();
        let mut rows = HashSet::new();
        for frame in &mask.frames {
            for &(_, y) in frame {
                rows.insert(y);
            }
        }
        assert_eq!(rows.len(), 64);
    }

    #[test]
    fn spiral_union_covers_low_frequency_disc() {
        let mask = make_spiral_mask(64, 64, 63, 200, golden_angle_deg()).unwrap();
        let mut hit = vec![false; 64 * 64];
        for frame in &mask.frames {
            for &(x, y) in frame {
                hit[y as usize * 64 + x as usize] = true;
            }
        }
        let (mut inside, mut covered) = (0usize, 0usize);
        let r = 64.0 / 8.0;
        for y in 0..64 {
            for x in 0..64 {
                let dx = x as f64 - 32.0;
                let dy = y as f64 - 32.0;
                if (dx * dx + dy * dy).sqrt() <= r {
                    inside += 1;
                    if hit[y * 64 + x] {
                        covered += 1;
                    }
                }
            }
        }
        let frac = covered as f64 / inside as f64;
        assert!(frac >= 0.95, "low-frequency coverage {frac}");
    }

    #[test]
    fn mask_io_roundtrip() {
        let dir = std::env::temp_dir().join("mrfkit-mask-test");
        std::fs::create_dir_all(&dir).unwrap();
        let mask = make_epi_mask(32, 32, 40, 5).unwrap();
        let base = dir.join("mask");
        mask.save(&base).unwrap();
        let loaded = SamplingMask::load(&base).unwrap();
        assert_eq!(loaded.frames, mask.frames);
        assert_eq!(loaded.id(), mask.id());
    }

    #[test]
    fn rejects_oversized_m() {
        assert!(make_spiral_mask(8, 8, 65, 2, 137.5).is_err());
        assert!(make_epi_mask(8, 8, 65, 2).is_err());
    }
}
