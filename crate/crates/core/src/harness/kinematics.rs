use crate::error::{Error, Result};
use crate::model::ActionVector;
use std::f64::consts::PI;

/// Ground-truth joint labeller for a target at pixel `(cx, cy)` in a
/// `width x height` image. With `x = cx / W`, `y = cy / H`:
///
/// ```text
/// j1 = pi (x - 1/2)      j2 = pi/4 (y - 1/2)    j3 = pi/6 x y
/// j4 = pi/8 (x - y)      j5 = pi/3 y            j6 = 0
/// ```
pub fn kinematic_map(center: (f64, f64), dims: (usize, usize)) -> Result<ActionVector> {
    let (cx, cy) = center;
    let (w, h) = (dims.0 as f64, dims.1 as f64);
    if !(cx.is_finite() && cy.is_finite())
        || cx < 0.0
        || cy < 0.0
        || cx > w
        || cy > h
        || w == 0.0
        || h == 0.0
    {
        return Err(Error::invalid(format!(
            "center ({cx}, {cy}) lies outside the {}x{} image",
            dims.0, dims.1
        )));
    }
    let (x, y) = (cx / w, cy / h);
    Ok([
        PI * (x - 0.5),
        PI / 4.0 * (y - 0.5),
        PI / 6.0 * (x * y),
        PI / 8.0 * (x - y),
        PI / 3.0 * y,
        0.0,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_centre() {
        let a = kinematic_map((64.0, 64.0), (128, 128)).unwrap();
        let want = [0.0, 0.0, PI / 24.0, 0.0, PI / 6.0, 0.0];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a[2] - 0.1309).abs() < 1e-4 && (a[4] - 0.5236).abs() < 1e-4);
    }

    #[test]
    fn origin() {
        let a = kinematic_map((0.0, 0.0), (128, 128)).unwrap();
        assert_eq!(a, [-PI / 2.0, -PI / 8.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn outside_rejected() {
        assert!(kinematic_map((129.0, 3.0), (128, 128)).is_err());
        assert!(kinematic_map((-0.1, 3.0), (128, 128)).is_err());
    }
}
