//! Directions on the unit sphere.

/// Direction of arrival in degrees. Azimuth is counter-clockwise from the
/// front (x axis) towards the left (y axis); elevation is up from the
/// horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Doa {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Doa {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    /// `(cosφ·cosθ, sinφ·cosθ, sinθ)`
    pub fn unit_vector(&self) -> [f64; 3] {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        [az.cos() * el.cos(), az.sin() * el.cos(), el.sin()]
    }

    /// Direction of a non-zero vector; azimuth wrapped to [-180, 180).
    pub fn from_vector(v: [f64; 3]) -> Option<Doa> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        let az = v[1].atan2(v[0]).to_degrees();
        let el = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        Some(Doa::new(wrap_azimuth(az), el))
    }

    /// Great-circle distance in degrees.
    pub fn angle_to(&self, other: &Doa) -> f64 {
        angular_distance(&self.unit_vector(), &other.unit_vector())
    }
}

/// Wraps an azimuth into [-180, 180).
pub fn wrap_azimuth(az: f64) -> f64 {
    let w = (az + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Angle between two vectors in degrees, computed with atan2 for accuracy
/// near 0° and 180°.
pub fn angular_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    cn.atan2(dot).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_azimuth(180.0), -180.0);
        assert_eq!(wrap_azimuth(420.0), 60.0);
        assert_eq!(wrap_azimuth(-190.0), 170.0);
        assert!(wrap_azimuth(-1e-18) < 180.0);
    }

    #[test]
    fn vector_round_trip() {
        let d = Doa::new(30.0, 10.0);
        let back = Doa::from_vector(d.unit_vector()).unwrap();
        assert!((back.azimuth - 30.0).abs() < 1e-12);
        assert!((back.elevation - 10.0).abs() < 1e-12);
        assert!(Doa::from_vector([0.0; 3]).is_none());
    }

    #[test]
    fn distances() {
        assert!((Doa::new(0.0, 0.0).angle_to(&Doa::new(10.0, 0.0)) - 10.0).abs() < 1e-12);
        assert!((Doa::new(0.0, 90.0).angle_to(&Doa::new(123.0, 90.0))).abs() < 1e-12);
        assert!((Doa::new(0.0, 0.0).angle_to(&Doa::new(180.0, 0.0)) - 180.0).abs() < 1e-12);
    }
}
