use crate::error::{Error, Result};
use crate::gss::Skill;
use crate::model::{check_action, ActionVector};
use crate::numerics::DenseTensor;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const METADATA_FILE: &str = "dataset.json";
pub const FORMAT_VERSION: u32 = 1;

/// One `(joints, image)` pair plus the scene geometry it was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub joints: ActionVector,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: DenseTensor,
    /// Target centre `(cx, cy)` in pixels.
    pub center: [f64; 2],
    pub radius: f64,
}

/// Ordered demonstrations of one skill, all with the same image extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub demos: Vec<Demonstration>,
    pub capacity: usize,
    pub skill: Skill,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    count: usize,
    capacity: usize,
    skill: Skill,
    seed: u64,
    height: usize,
    width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    image: String,
    joints: Vec<f64>,
    center: [f64; 2],
    radius: f64,
    skill: Skill,
}

impl Dataset {
    pub fn new(skill: Skill, capacity: usize, seed: u64, height: usize, width: usize) -> Self {
        Self {
            demos: Vec::new(),
            capacity,
            skill,
            seed,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn push(&mut self, demo: Demonstration) -> Result<()> {
        if self.demos.len() >= self.capacity {
            return Err(Error::invalid(format!(
                "dataset capacity {} reached",
                self.capacity
            )));
        }
        let expected = [3, self.height, self.width];
        if demo.image.shape() != expected {
            return Err(Error::invalid(format!(
                "image shape {:?} differs from dataset extents {:?}",
                demo.image.shape(),
                expected
            )));
        }
        check_action(&demo.joints)?;
        if demo.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        self.demos.push(demo);
        Ok(())
    }

    pub fn labels(&self) -> Vec<ActionVector> {
        self.demos.iter().map(|d| d.joints).collect()
    }

    /// Stacks the selected images into `[n, 3, H, W]`.
    pub fn image_batch(&self, indices: &[usize]) -> Result<DenseTensor> {
        let per = 3 * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let d = self
                .demos
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            data.extend_from_slice(d.image.data());
        }
        DenseTensor::new(&[indices.len(), 3, self.height, self.width], data)
    }

    pub fn all_images(&self) -> Result<DenseTensor> {
        self.image_batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Writes `manifest.jsonl`, `dataset.json` and `images/NNNNN.png` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        let mut manifest = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        for (i, d) in self.demos.iter().enumerate() {
            let rel = format!("images/{i:05}.png");
            write_png(&dir.join(&rel), &d.image)?;
            let rec = Record {
                image: rel,
                joints: d.joints.to_vec(),
                center: d.center,
                radius: d.radius,
                skill: self.skill,
            };
            serde_json::to_writer(&mut manifest, &rec)?;
            manifest.write_all(b"\n")?;
        }
        manifest.flush()?;
        let meta = Metadata {
            format_version: FORMAT_VERSION,
            count: self.len(),
            capacity: self.capacity,
            skill: self.skill,
            seed: self.seed,
            height: self.height,
            width: self.width,
        };
        let mut f = BufWriter::new(File::create(dir.join(METADATA_FILE))?);
        serde_json::to_writer_pretty(&mut f, &meta)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Metadata =
            serde_json::from_reader(BufReader::new(File::open(dir.join(METADATA_FILE))?))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        let mut ds = Dataset::new(
            meta.skill,
            meta.capacity,
            meta.seed,
            meta.height,
            meta.width,
        );
        let manifest = BufReader::new(File::open(dir.join(MANIFEST_FILE))?);
        for (line_no, line) in manifest.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{MANIFEST_FILE} line {}: {e}", line_no + 1)))?;
            let joints: ActionVector = rec.joints.as_slice().try_into().map_err(|_| {
                Error::Format(format!(
                    "{MANIFEST_FILE} line {}: expected 6 joints",
                    line_no + 1
                ))
            })?;
            let image = read_png(&dir.join(&rec.image))?;
            ds.push(Demonstration {
                joints,
                image,
                center: rec.center,
                radius: rec.radius,
            })?;
        }
        if ds.len() != meta.count {
            return Err(Error::Format(format!(
                "manifest lists {} samples, metadata says {}",
                ds.len(),
                meta.count
            )));
        }
        Ok(ds)
    }
}

/// Snaps a `[0, 1]` value to the nearest multiple of 1/255.
pub fn quantize_unit(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// 8-bit RGB PNG bytes from a `[3, H, W]` image in `[0, 1]`.
pub fn encode_png(image: &DenseTensor) -> Result<Vec<u8>> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::invalid(format!(
            "expected a [3, H, W] image, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut bytes = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            bytes.push((image.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    Ok(out)
}

pub fn write_png(path: &Path, image: &DenseTensor) -> Result<()> {
    let bytes = encode_png(image)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads an 8-bit RGB or RGBA PNG into `[3, H, W]` with values `k / 255`.
pub fn read_png(path: &Path) -> Result<DenseTensor> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png {}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = buf[p * stride + c] as f64 / 255.0;
        }
    }
    DenseTensor::new(&[3, h, w], data)
}
