use crate::error::{Error, Result};
use crate::gss::Skill;
use crate::harness::dataset::{quantize_unit, Dataset, Demonstration};
use crate::harness::kinematics::kinematic_map;
use crate::numerics::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Normalised `(x, y)` workspace slots used by [`Placement::Slots`].
pub const SLOTS: [(f64, f64); 6] = [
    (0.25, 0.3),
    (0.5, 0.3),
    (0.75, 0.3),
    (0.25, 0.7),
    (0.5, 0.7),
    (0.75, 0.7),
];

/// Half-width in pixels of the uniform jitter around a slot.
pub const SLOT_JITTER_PX: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// One of [`SLOTS`] at random, jittered by up to one pixel.
    #[default]
    Slots,
    /// Uniform centre, keeping `radius_max` clear of every border.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Mean background intensity.
    pub background: f64,
    /// Peak-to-peak amplitude of the uniform background noise.
    pub noise: f64,
    pub placement: Placement,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            radius_min: 6.0,
            radius_max: 12.0,
            background: 0.5,
            noise: 0.1,
            placement: Placement::Slots,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene extents must be positive"));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::invalid(format!(
                "radius range [{}, {}] is empty or non-positive",
                self.radius_min, self.radius_max
            )));
        }
        if 2.0 * self.radius_max >= self.width.min(self.height) as f64 {
            return Err(Error::invalid("radius range does not fit inside the image"));
        }
        if self.placement == Placement::Slots {
            for (sx, sy) in SLOTS {
                let (cx, cy) = (sx * self.width as f64, sy * self.height as f64);
                let m = self.radius_max + SLOT_JITTER_PX;
                if cx < m || cy < m || cx + m > self.width as f64 || cy + m > self.height as f64 {
                    return Err(Error::invalid("slot layout does not fit the radius range"));
                }
            }
        }
        if !(0.0..=1.0).contains(&(self.background - self.noise / 2.0))
            || !(0.0..=1.0).contains(&(self.background + self.noise / 2.0))
        {
            return Err(Error::invalid("background intensity range leaves [0, 1]"));
        }
        Ok(())
    }
}

/// RGB of the target disk for each skill.
pub fn skill_color(skill: Skill) -> [f64; 3] {
    match skill {
        Skill::SideGrasp => [0.9, 0.4, 0.1],
        Skill::LiftUp => [0.2, 0.7, 0.3],
        Skill::TopPinch => [0.9, 0.9, 0.95],
    }
}

/// Scene `index` of a run: each sample has its own ChaCha stream so samples
/// can be produced independently.
pub fn generate_scene(spec: &SceneSpec, skill: Skill, index: u64) -> Result<Demonstration> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (cx, cy) = match spec.placement {
        Placement::Slots => {
            let (sx, sy) = SLOTS[rng.random_range(0..SLOTS.len())];
            let jx = rng.random_range(-SLOT_JITTER_PX..=SLOT_JITTER_PX);
            let jy = rng.random_range(-SLOT_JITTER_PX..=SLOT_JITTER_PX);
            (sx * w + jx, sy * h + jy)
        }
        Placement::Uniform => {
            let m = spec.radius_max;
            (rng.random_range(m..=w - m), rng.random_range(m..=h - m))
        }
    };
    let radius = rng.random_range(spec.radius_min..=spec.radius_max);
    let color = skill_color(skill);
    let plane = spec.width * spec.height;
    let mut data = vec![0.0; 3 * plane];
    for v in data.iter_mut() {
        *v = quantize_unit(spec.background + spec.noise * (rng.random::<f64>() - 0.5));
    }
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= radius * radius {
                for (c, &col) in color.iter().enumerate() {
                    data[c * plane + y * spec.width + x] = quantize_unit(col);
                }
            }
        }
    }
    Ok(Demonstration {
        joints: kinematic_map((cx, cy), (spec.width, spec.height))?,
        image: DenseTensor::new(&[3, spec.height, spec.width], data)?,
        center: [cx, cy],
        radius,
    })
}

/// `n` demonstrations of one skill; deterministic in `spec.seed`.
pub fn generate_dataset(n: usize, spec: &SceneSpec, skill: Skill) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    spec.validate()?;
    let mut ds = Dataset::new(skill, n, spec.seed, spec.height, spec.width);
    for i in 0..n {
        ds.push(generate_scene(spec, skill, i as u64)?)?;
    }
    Ok(ds)
}
