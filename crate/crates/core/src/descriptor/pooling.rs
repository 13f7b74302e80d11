use crate::error::{Error, Result};

use super::l2_normalize;

/// Fixed GeM exponent.
pub const DEFAULT_GEM_P: f64 = 3.0;
pub const DEFAULT_RMAC_LEVELS: usize = 3;
const RMAC_OVERLAP: f64 = 0.4;

/// H x W x C activation tensor, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Invalid(
                "feature map dimensions must be positive".into(),
            ));
        }
        if values.len() != height * width * channels {
            return Err(Error::DimMismatch {
                expected: height * width * channels,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite activation".into()));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels)
    }
}

/// Generalized mean per channel: `(mean(x^p))^(1/p)`.
///
/// Evaluated as `m * mean((x/m)^p)^(1/p)` with `m` the channel's largest
/// magnitude so that large `p` does not underflow.
pub fn gem_pool(map: &FeatureMap, p: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Domain(format!(
            "GeM exponent must be finite and >= 1, got {p}"
        )));
    }
    let integer_p = p.fract() == 0.0;
    if !integer_p && map.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain(
            "negative activation with fractional GeM exponent".into(),
        ));
    }
    let count = (map.height * map.width) as f64;
    let mut out = Vec::with_capacity(map.channels);
    for c in 0..map.channels {
        let scale = map.pixels().map(|px| px[c].abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            out.push(0.0);
            continue;
        }
        let mean = map.pixels().map(|px| (px[c] / scale).powf(p)).sum::<f64>() / count;
        // Odd integer exponents admit a negative mean; take the real root.
        let root = mean.signum() * mean.abs().powf(1.0 / p);
        out.push(scale * root);
    }
    Ok(out)
}

/// Per-channel spatial maximum (GeM limit p -> inf).
pub fn mac_pool(map: &FeatureMap) -> Vec<f64> {
    (0..map.channels)
        .map(|c| {
            map.pixels()
                .map(|px| px[c])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Per-channel spatial mean (GeM with p = 1).
pub fn spoc_pool(map: &FeatureMap) -> Vec<f64> {
    let count = (map.height * map.width) as f64;
    (0..map.channels)
        .map(|c| map.pixels().map(|px| px[c]).sum::<f64>() / count)
        .collect()
}

/// Square pooling region, `[y, y + side) x [x, x + side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub y: usize,
    pub x: usize,
    pub side: usize,
}

/// Regional grid for R-MAC.
///
/// At level `l` the side is `floor(2 * min(H, W) / (l + 1))` (at least 1).
/// The short dimension holds `l` regions and the long dimension `l + extra`,
/// where `extra` is picked from 1..=6 so that consecutive level-1 regions
/// overlap closest to 40%. Starts are spaced uniformly from 0 to
/// `dim - side` and floored.
pub fn rmac_regions(height: usize, width: usize, levels: usize) -> Vec<Region> {
    let short = height.min(width);
    let long = height.max(width);
    let extra = if long == short {
        0
    } else {
        let w = short as f64;
        (2..=7usize)
            .map(|steps| {
                let b = (long - short) as f64 / (steps - 1) as f64;
                ((w * w - w * b) / (w * w) - RMAC_OVERLAP).abs()
            })
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(idx, _)| idx + 1)
            .unwrap()
    };
    let starts = |dim: usize, side: usize, n: usize| -> Vec<usize> {
        if n <= 1 || dim <= side {
            return vec![0; n.max(1)];
        }
        let span = (dim - side) as f64;
        (0..n)
            .map(|k| (k as f64 * span / (n - 1) as f64).floor() as usize)
            .collect()
    };
    let mut regions = Vec::new();
    for level in 1..=levels {
        let side = ((2 * short) / (level + 1)).max(1);
        let (ny, nx) = if height < width {
            (level, level + extra)
        } else if height > width {
            (level + extra, level)
        } else {
            (level, level)
        };
        let ys = starts(height, side, ny);
        let xs = starts(width, side, nx);
        for &y in &ys {
            for &x in &xs {
                regions.push(Region { y, x, side });
            }
        }
    }
    regions
}

/// Regional MAC: per-region max pooling, per-region L2 normalization, sum,
/// and final L2 normalization. Zero regions contribute nothing.
pub fn rmac_pool(map: &FeatureMap, levels: usize) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(Error::Invalid("R-MAC needs at least one level".into()));
    }
    let mut total = vec![0.0; map.channels];
    let mut region_max = vec![0.0; map.channels];
    for r in rmac_regions(map.height, map.width, levels) {
        region_max.fill(f64::NEG_INFINITY);
        for y in r.y..(r.y + r.side).min(map.height) {
            for x in r.x..(r.x + r.side).min(map.width) {
                for (c, m) in region_max.iter_mut().enumerate() {
                    *m = m.max(map.at(y, x, c));
                }
            }
        }
        if let Ok(unit) = l2_normalize(&region_max) {
            for (t, v) in total.iter_mut().zip(unit) {
                *t += v;
            }
        }
    }
    l2_normalize(&total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_1x2(a: f64, b: f64) -> FeatureMap {
        FeatureMap::new(1, 2, 1, vec![a, b]).unwrap()
    }

    #[test]
    fn gem_small_cases() {
        let m = map_1x2(1.0, 3.0);
        assert!((gem_pool(&m, 1.0).unwrap()[0] - 2.0).abs() < 1e-12);
        assert_eq!(mac_pool(&m), vec![3.0]);
        assert_eq!(spoc_pool(&m), vec![2.0]);
        assert!((gem_pool(&m, 2.0).unwrap()[0] - 5f64.sqrt()).abs() < 1e-12);
        assert!((gem_pool(&m, 2.0).unwrap()[0] - 2.23607).abs() < 1e-5);
    }

    #[test]
    fn gem_domain_errors() {
        let m = map_1x2(-1.0, 3.0);
        assert!(matches!(gem_pool(&m, 2.5), Err(Error::Domain(_))));
        assert!(gem_pool(&m, 3.0).is_ok());
        assert!(gem_pool(&map_1x2(1.0, 1.0), 0.5).is_err());
    }

    #[test]
    fn gem_huge_p_does_not_underflow() {
        let m = map_1x2(1e-3, 2e-3);
        let out = gem_pool(&m, 1e6).unwrap();
        assert!((out[0] - 2e-3).abs() < 1e-8);
    }

    #[test]
    fn square_grid_counts() {
        // 1 + 4 + 9 regions on a square map.
        assert_eq!(rmac_regions(8, 8, 3).len(), 14);
        let r = rmac_regions(4, 4, 2);
        assert_eq!(
            r[0],
            Region {
                y: 0,
                x: 0,
                side: 4
            }
        );
        assert_eq!(
            &r[1..],
            &[
                Region {
                    y: 0,
                    x: 0,
                    side: 2
                },
                Region {
                    y: 0,
                    x: 2,
                    side: 2
                },
                Region {
                    y: 2,
                    x: 0,
                    side: 2
                },
                Region {
                    y: 2,
                    x: 2,
                    side: 2
                },
            ]
        );
    }

    #[test]
    fn wide_grid_adds_long_side_regions() {
        let r = rmac_regions(10, 20, 1);
        assert!(r.len() > 1);
        assert!(r
            .iter()
            .all(|g| g.y == 0 && g.side == 10 && g.x + g.side <= 20));
    }

    #[test]
    fn single_pixel_rmac_is_normalized_pixel() {
        let m = FeatureMap::new(1, 1, 3, vec![1.0, 2.0, 2.0]).unwrap();
        let out = rmac_pool(&m, 3).unwrap();
        let expected = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_map_rmac_is_uniform() {
        let m = FeatureMap::new(5, 7, 4, vec![0.3; 5 * 7 * 4]).unwrap();
        let out = rmac_pool(&m, 3).unwrap();
        for v in out {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }
}
