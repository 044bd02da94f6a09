use crate::error::{Error, Result};
use crate::gss::types::{BoundingBox, Observation, ShapeCategory};

pub const CYLINDRICAL_ASPECT: f64 = 1.4;
pub const CYLINDRICAL_FILL: f64 = 0.6;
pub const SQUASHED_ASPECT: f64 = 0.7;
/// Mask area, as a fraction of the image, below which an object is thin/small.
pub const SMALL_AREA_FRACTION: f64 = 0.02;
/// RGB distance from the background colour that marks a foreground pixel.
pub const MASK_THRESHOLD: f64 = 0.2;

/// Foreground statistics of the crop inside a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskStats {
    /// Pixels in the mask.
    pub area: usize,
    /// Height over width of the mask's tight extent.
    pub aspect: f64,
    /// Mask area over the area of its tight extent.
    pub fill: f64,
    /// Mask area over the image area.
    pub image_fraction: f64,
}

pub fn shape_from_stats(s: &MaskStats) -> ShapeCategory {
    if s.aspect >= CYLINDRICAL_ASPECT && s.fill >= CYLINDRICAL_FILL {
        ShapeCategory::Cylindrical
    } else if s.aspect <= SQUASHED_ASPECT {
        ShapeCategory::Squashed
    } else if s.image_fraction < SMALL_AREA_FRACTION {
        ShapeCategory::ThinSmall
    } else {
        ShapeCategory::Other
    }
}

/// Thresholds the crop against the mean colour of the image border.
pub fn mask_stats(obs: &Observation, bbox: &BoundingBox) -> Result<MaskStats> {
    let image = obs
        .image
        .as_ref()
        .ok_or_else(|| Error::invalid("observation has no image to segment"))?;
    let (h, w) = (obs.height, obs.width);
    bbox.validate(w, h)?;
    let px = |c: usize, y: usize, x: usize| image.data()[(c * h + y) * w + x];

    let mut bg = [0.0; 3];
    let mut count = 0.0;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                for (c, b) in bg.iter_mut().enumerate() {
                    *b += px(c, y, x);
                }
                count += 1.0;
            }
        }
    }
    bg.iter_mut().for_each(|b| *b /= count);

    let (x0, x1) = (bbox.x1.floor() as usize, (bbox.x2.ceil() as usize).min(w));
    let (y0, y1) = (bbox.y1.floor() as usize, (bbox.y2.ceil() as usize).min(h));
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::invalid(format!("crop {bbox} contains no pixels")));
    }
    let (mut area, mut min_x, mut max_x, mut min_y, mut max_y) =
        (0usize, usize::MAX, 0, usize::MAX, 0);
    for y in y0..y1 {
        for x in x0..x1 {
            let d2: f64 = (0..3).map(|c| (px(c, y, x) - bg[c]).powi(2)).sum();
            if d2.sqrt() > MASK_THRESHOLD {
                area += 1;
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
            }
        }
    }
    if area == 0 {
        return Err(Error::invalid(format!(
            "crop {bbox} contains no foreground pixels"
        )));
    }
    let (mw, mh) = ((max_x - min_x + 1) as f64, (max_y - min_y + 1) as f64);
    Ok(MaskStats {
        area,
        aspect: mh / mw,
        fill: area as f64 / (mw * mh),
        image_fraction: area as f64 / (w * h) as f64,
    })
}

/// Returns the observation's own label when present, otherwise classifies
/// the thresholded crop.
pub fn classify_shape(obs: &Observation, bbox: &BoundingBox) -> Result<ShapeCategory> {
    if let Some(label) = obs.shape_label {
        bbox.validate(obs.width, obs.height)?;
        return Ok(label);
    }
    mask_stats(obs, bbox).map(|s| shape_from_stats(&s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseTensor;

    fn scene(w: usize, h: usize, rect: (usize, usize, usize, usize)) -> Observation {
        let (rx0, ry0, rx1, ry1) = rect;
        let img = DenseTensor::from_fn(&[3, h, w], |i| {
            let (y, x) = ((i / w) % h, i % w);
            if (rx0..rx1).contains(&x) && (ry0..ry1).contains(&y) {
                0.9
            } else {
                0.1
            }
        });
        Observation::from_image(img).unwrap()
    }

    #[test]
    fn provided_label_passes_through() {
        let mut obs = Observation::blank();
        obs.shape_label = Some(ShapeCategory::Cylindrical);
        let b = BoundingBox {
            x1: 1.0,
            y1: 1.0,
            x2: 2.0,
            y2: 2.0,
        };
        assert_eq!(
            classify_shape(&obs, &b).unwrap(),
            ShapeCategory::Cylindrical
        );
    }

    #[test]
    fn tall_solid_rectangle_is_cylindrical() {
        let obs = scene(200, 100, (50, 20, 70, 60));
        let b = BoundingBox {
            x1: 40.0,
            y1: 10.0,
            x2: 80.0,
            y2: 70.0,
        };
        let s = mask_stats(&obs, &b).unwrap();
        assert_eq!((s.aspect, s.fill), (2.0, 1.0));
        assert_eq!(
            classify_shape(&obs, &b).unwrap(),
            ShapeCategory::Cylindrical
        );
    }

    #[test]
    fn wide_rectangle_is_squashed() {
        let obs = scene(200, 100, (20, 40, 120, 60));
        let b = BoundingBox {
            x1: 10.0,
            y1: 30.0,
            x2: 130.0,
            y2: 70.0,
        };
        assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::Squashed);
    }

    #[test]
    fn one_percent_mask_is_thin_small() {
        // 10x10 square in a 100x100 image.
        let obs = scene(100, 100, (40, 40, 50, 50));
        let b = BoundingBox {
            x1: 35.0,
            y1: 35.0,
            x2: 55.0,
            y2: 55.0,
        };
        let s = mask_stats(&obs, &b).unwrap();
        assert_eq!(s.image_fraction, 0.01);
        assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::ThinSmall);
    }

    #[test]
    fn large_square_is_other() {
        let obs = scene(100, 100, (20, 20, 60, 60));
        let b = BoundingBox {
            x1: 10.0,
            y1: 10.0,
            x2: 70.0,
            y2: 70.0,
        };
        assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::Other);
    }

    #[test]
    fn empty_crop_rejected() {
        let obs = scene(100, 100, (20, 20, 30, 30));
        let b = BoundingBox {
            x1: 60.0,
            y1: 60.0,
            x2: 80.0,
            y2: 80.0,
        };
        assert!(classify_shape(&obs, &b).is_err());
    }
}
