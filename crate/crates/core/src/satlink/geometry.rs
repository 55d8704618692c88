//! Propagation delay from orbit geometry and the fiber comparison.

use serde::Serialize;
use thiserror::Error;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Great-circle distance multiplier for terrestrial fiber routes.
pub const DEFAULT_FIBER_STRETCH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("altitude {0} km must be finite and non-negative")]
    Altitude(f64),
    #[error("elevation {0}° must lie in (0, 90]")]
    Elevation(f64),
    #[error("path length {0} km must be positive")]
    PathLength(f64),
    #[error("at least 2 hops (up and down) are required, got {0}")]
    Hops(u32),
    #[error("stretch factor {0} must be at least 1")]
    Stretch(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitGeometry {
    altitude_km: f64,
    elevation_deg: f64,
}

impl OrbitGeometry {
    pub fn new(altitude_km: f64, elevation_deg: f64) -> Result<Self, GeometryError> {
        if !(altitude_km.is_finite() && altitude_km >= 0.0) {
            return Err(GeometryError::Altitude(altitude_km));
        }
        if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
            return Err(GeometryError::Elevation(elevation_deg));
        }
        Ok(OrbitGeometry {
            altitude_km,
            elevation_deg,
        })
    }

    pub fn altitude_km(&self) -> f64 {
        self.altitude_km
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Ground-to-satellite line of sight over a spherical Earth:
    /// `(R+h)² = R² + s² + 2·R·s·sin(e)` solved for `s`.
    pub fn slant_range_km(&self) -> f64 {
        if self.elevation_deg == 90.0 {
            return self.altitude_km;
        }
        let r = EARTH_RADIUS_KM;
        let h = self.altitude_km;
        let r_sin = r * self.elevation_deg.to_radians().sin();
        (r_sin * r_sin + h * h + 2.0 * r * h).sqrt() - r_sin
    }
}

pub fn propagation_delay_us(geom: &OrbitGeometry) -> f64 {
    geom.slant_range_km() * 1e3 / SPEED_OF_LIGHT_M_S * 1e6
}

/// Light in fiber covers `path_km` at two thirds of c.
pub fn fiber_latency_us(path_km: f64) -> Result<f64, GeometryError> {
    if !(path_km > 0.0 && path_km.is_finite()) {
        return Err(GeometryError::PathLength(path_km));
    }
    Ok(path_km * 1e3 / (2.0 / 3.0 * SPEED_OF_LIGHT_M_S) * 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyComparison {
    pub fiber_us: f64,
    pub leo_us: f64,
    pub improvement_ratio: f64,
}

/// One-way latency of a fiber route (great circle × stretch) against a LEO
/// path of `hops` ground-satellite legs plus inter-satellite transit along
/// the great circle in vacuum.
pub fn compare_fiber_vs_leo(
    great_circle_km: f64,
    geom: &OrbitGeometry,
    hops: u32,
    stretch: f64,
) -> Result<LatencyComparison, GeometryError> {
    if hops < 2 {
        return Err(GeometryError::Hops(hops));
    }
    if !(stretch >= 1.0 && stretch.is_finite()) {
        return Err(GeometryError::Stretch(stretch));
    }
    let fiber_us = fiber_latency_us(great_circle_km * stretch)?;
    let isl_us = great_circle_km * 1e3 / SPEED_OF_LIGHT_M_S * 1e6;
    let leo_us = f64::from(hops) * propagation_delay_us(geom) + isl_us;
    Ok(LatencyComparison {
        fiber_us,
        leo_us,
        improvement_ratio: 1.0 - leo_us / fiber_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Slant range from the triangle (Earth centre, ground station,
    /// satellite): nadir angle by the sine rule, central angle from the
    /// angle sum, then the side opposite the central angle.
    fn slant_oracle(h: f64, e_deg: f64) -> f64 {
        let r = EARTH_RADIUS_KM;
        let e = e_deg.to_radians();
        let nadir = (r * e.cos() / (r + h)).asin();
        let central = std::f64::consts::FRAC_PI_2 - e - nadir;
        (r * r + (r + h) * (r + h) - 2.0 * r * (r + h) * central.cos()).sqrt()
    }

    #[test]
    fn zenith_600km() {
        let g = OrbitGeometry::new(600.0, 90.0).unwrap();
        assert_eq!(g.slant_range_km(), 600.0);
        let d = propagation_delay_us(&g);
        assert!((d - 600_000.0 / SPEED_OF_LIGHT_M_S * 1e6).abs() < 1e-9);
        assert!((d - 2001.4).abs() < 0.5);
    }

    #[test]
    fn low_elevation_against_oracle() {
        let g = OrbitGeometry::new(550.0, 30.0).unwrap();
        let oracle = slant_oracle(550.0, 30.0);
        assert!((g.slant_range_km() - oracle).abs() < 1e-6);
        // 992.78 km, 3311.6 µs.
        assert!((g.slant_range_km() - 992.778).abs() < 1e-3);
        assert!((propagation_delay_us(&g) - 3311.55).abs() < 0.01);
        for &(h, e) in &[(500.0, 10.0), (1000.0, 45.0), (750.0, 89.0), (550.0, 5.0)] {
            let g = OrbitGeometry::new(h, e).unwrap();
            assert!((g.slant_range_km() - slant_oracle(h, e)).abs() < 1e-6);
            assert!(g.slant_range_km() >= h);
        }
    }

    #[test]
    fn degenerate_zero_altitude() {
        let g = OrbitGeometry::new(0.0, 90.0).unwrap();
        assert_eq!(propagation_delay_us(&g), 0.0);
    }

    #[test]
    fn invalid_geometry() {
        assert!(OrbitGeometry::new(-1.0, 45.0).is_err());
        assert!(OrbitGeometry::new(550.0, 0.0).is_err());
        assert!(OrbitGeometry::new(550.0, 90.5).is_err());
    }

    #[test]
    fn fiber_examples() {
        let d = fiber_latency_us(1000.0).unwrap();
        assert!((d - 1e6 / (2.0 / 3.0 * SPEED_OF_LIGHT_M_S) * 1e6).abs() < 1e-9);
        assert!((d - 5003.46).abs() < 0.01);
        assert!((fiber_latency_us(0.2).unwrap() - 1.0006923).abs() < 1e-6);
        let a = fiber_latency_us(123.0).unwrap();
        assert!((fiber_latency_us(246.0).unwrap() - 2.0 * a).abs() < 1e-9);
        assert!(fiber_latency_us(0.0).is_err());
    }

    #[test]
    fn fiber_vs_leo_reference_case() {
        let g = OrbitGeometry::new(550.0, 90.0).unwrap();
        let c = compare_fiber_vs_leo(10_000.0, &g, 2, DEFAULT_FIBER_STRETCH).unwrap();
        // 15 000 km at 2c/3; 2 × 550 km + 10 000 km at c.
        let fiber = 15_000e3 / (2.0 / 3.0 * SPEED_OF_LIGHT_M_S) * 1e6;
        let leo = (2.0 * 550e3 + 10_000e3) / SPEED_OF_LIGHT_M_S * 1e6;
        assert!((c.fiber_us - fiber).abs() < 1e-6);
        assert!((c.leo_us - leo).abs() < 1e-6);
        assert!((c.fiber_us - 75_051.9).abs() < 0.1);
        assert!((c.leo_us - 37_025.6).abs() < 0.1);
        assert!((c.improvement_ratio - 0.5067).abs() < 1e-3);
    }

    #[test]
    fn improvement_grows_with_distance() {
        let g = OrbitGeometry::new(550.0, 90.0).unwrap();
        let r: Vec<f64> = [5_000.0, 10_000.0, 20_000.0]
            .iter()
            .map(|d| {
                compare_fiber_vs_leo(*d, &g, 2, DEFAULT_FIBER_STRETCH)
                    .unwrap()
                    .improvement_ratio
            })
            .collect();
        assert!(r[0] < r[1] && r[1] < r[2], "{r:?}");
        assert!(compare_fiber_vs_leo(0.0, &g, 2, 1.5).is_err());
        assert!(compare_fiber_vs_leo(100.0, &g, 1, 1.5).is_err());
    }
}
