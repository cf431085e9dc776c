//! Built-in stick-figure generator and detectors.

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector2;

use super::raster::{self, Rgb, RgbImage};
use super::{
    apply_drift, derive_seed, frame_file_name, io_err, list_frames, synth_detect, CorruptionKnob,
    DetectorAdapter, DetectorNoiseConfig, GeneratorAdapter, GeneratorRequest, Result, SynthError,
};
use crate::pipeline::tensor::{read_pose_with, write_pose, PoseTensor};
use crate::skeleton::{JointSchema, Pose2DSequence};

/// File the mock generator writes next to its frames with the realized
/// (drifted) keypoints.
pub const TRUTH_SIDECAR: &str = "truth_2d.pseq";

const BACKGROUND: Rgb = [128, 128, 128];
const BONE: Rgb = [235, 235, 235];

/// Fully saturated, pairwise distinct joint colours.
fn palette(n: usize) -> Vec<Rgb> {
    (0..n)
        .map(|j| {
            let h = j as f64 / n as f64 * 6.0;
            let v = if j % 2 == 0 { 255.0 } else { 190.0 };
            let f = h.fract();
            let (r, g, b) = match h as u32 {
                0 => (1.0, f, 0.0),
                1 => (1.0 - f, 1.0, 0.0),
                2 => (0.0, 1.0, f),
                3 => (0.0, 1.0 - f, 1.0),
                4 => (f, 0.0, 1.0),
                _ => (1.0, 0.0, 1.0 - f),
            };
            [(r * v) as u8, (g * v) as u8, (b * v) as u8]
        })
        .collect()
}

fn disc_radius(width: u32) -> f64 {
    (width as f64 / 200.0).max(3.0)
}

fn bone_width(width: u32) -> f64 {
    (width as f64 / 320.0).max(1.5)
}

fn load_background(req: &GeneratorRequest) -> RgbImage {
    let (w, h) = (req.image_width, req.image_height);
    match req.reference_frame_paths.first().map(|p| raster::read_png(p)) {
        Some(Ok(img)) => img.resized(w, h),
        Some(Err(e)) => {
            log::debug!("background unreadable ({e}); using flat gray");
            RgbImage::filled(w, h, BACKGROUND)
        }
        None => RgbImage::filled(w, h, BACKGROUND),
    }
}

fn resolver(schema: &Arc<JointSchema>) -> impl Fn(&str) -> Option<Arc<JointSchema>> + '_ {
    move |name| {
        if name == schema.name() {
            Some(schema.clone())
        } else {
            JointSchema::builtin(name).map(Arc::new)
        }
    }
}

/// Renders guidance (plus corruption drift) as bones and coloured joint
/// discs over the first reference frame.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    schema: Arc<JointSchema>,
    knob: CorruptionKnob,
    colors: Vec<Rgb>,
}

impl MockGenerator {
    pub fn new(schema: Arc<JointSchema>, knob: CorruptionKnob) -> Result<Self> {
        knob.validate()?;
        let colors = palette(schema.len());
        Ok(MockGenerator {
            schema,
            knob,
            colors,
        })
    }

    pub fn knob(&self) -> &CorruptionKnob {
        &self.knob
    }

    pub fn render_frame(&self, background: &RgbImage, kps: &Pose2DSequence, t: usize) -> RgbImage {
        let mut img = background.clone();
        let pts = kps.frame(t);
        let conf = kps.frame_confidence(t);
        let bw = bone_width(img.width);
        for &(a, b) in self.schema.bones() {
            if conf[a] > 0.0 && conf[b] > 0.0 {
                img.draw_segment([pts[a].x, pts[a].y], [pts[b].x, pts[b].y], bw, BONE);
            }
        }
        let r = disc_radius(img.width);
        for (j, p) in pts.iter().enumerate() {
            if conf[j] > 0.0 {
                img.fill_disc([p.x, p.y], r, self.colors[j]);
            }
        }
        img
    }
}

impl GeneratorAdapter for MockGenerator {
    fn name(&self) -> &str {
        "mock"
    }

    fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    fn run(&self, req: &GeneratorRequest) -> Result<()> {
        let drifted = apply_drift(
            &req.guidance,
            &self.knob,
            req.image_width,
            derive_seed(req.seed, "drift"),
        )?;
        write_pose(
            &req.output_dir.join(TRUTH_SIDECAR),
            &PoseTensor::Pose2D(drifted.clone()),
        )?;
        let background = load_background(req);
        for t in 0..drifted.num_frames() {
            let img = self.render_frame(&background, &drifted, t);
            raster::write_png(&req.output_dir.join(frame_file_name(t)), &img)?;
        }
        Ok(())
    }
}

fn first_frame_width(frames_dir: &Path) -> Result<u32> {
    let frames = list_frames(frames_dir)?;
    let first = frames
        .first()
        .ok_or_else(|| SynthError::MissingInput(frames_dir.to_path_buf()))?;
    Ok(raster::png_dimensions(first)?.0)
}

/// Reads the mock generator's sidecar and perturbs it with simulated
/// detector noise at the frames' resolution.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    schema: Arc<JointSchema>,
    noise: DetectorNoiseConfig,
}

impl SyntheticDetector {
    pub fn new(schema: Arc<JointSchema>, noise: DetectorNoiseConfig) -> Result<Self> {
        noise.validate()?;
        Ok(SyntheticDetector { schema, noise })
    }

    pub fn noise(&self) -> &DetectorNoiseConfig {
        &self.noise
    }
}

impl DetectorAdapter for SyntheticDetector {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    fn run(&self, frames_dir: &Path, seed: u64) -> Result<Pose2DSequence> {
        let width = first_frame_width(frames_dir)?;
        let sidecar = frames_dir.join(TRUTH_SIDECAR);
        if !sidecar.exists() {
            return Err(SynthError::AdapterFailed {
                adapter: self.name().into(),
                reason: format!("missing {}", sidecar.display()),
            });
        }
        let truth = read_pose_with(&sidecar, resolver(&self.schema))?.into_2d()?;
        let cfg = DetectorNoiseConfig {
            seed: derive_seed(self.noise.seed, &format!("detect:{seed}")),
            ..self.noise.clone()
        };
        synth_detect(&truth, &cfg, width)
    }
}

/// Locates each joint disc by its palette colour. Joints whose colour is
/// absent get zero confidence and keep their previous position.
#[derive(Debug, Clone)]
pub struct PixelDetector {
    schema: Arc<JointSchema>,
    colors: Vec<Rgb>,
}

impl PixelDetector {
    pub fn new(schema: Arc<JointSchema>) -> Self {
        let colors = palette(schema.len());
        PixelDetector { schema, colors }
    }
}

impl DetectorAdapter for PixelDetector {
    fn name(&self) -> &str {
        "pixel"
    }

    fn schema(&self) -> &Arc<JointSchema> {
        &self.schema
    }

    fn run(&self, frames_dir: &Path, _seed: u64) -> Result<Pose2DSequence> {
        let frames = list_frames(frames_dir)?;
        let joints = self.schema.len();
        let mut data: Vec<Vector2<f64>> = Vec::with_capacity(frames.len() * joints);
        let mut conf = Vec::with_capacity(frames.len() * joints);
        for (t, path) in frames.iter().enumerate() {
            let img = raster::read_png(path)?;
            let area = std::f64::consts::PI * disc_radius(img.width).powi(2);
            let mut sums = vec![(0.0, 0.0, 0usize); joints];
            for y in 0..img.height {
                for x in 0..img.width {
                    let px = img.get(x, y);
                    if let Some(j) = self.colors.iter().position(|c| *c == px) {
                        let s = &mut sums[j];
                        s.0 += x as f64 + 0.5;
                        s.1 += y as f64 + 0.5;
                        s.2 += 1;
                    }
                }
            }
            for (j, &(sx, sy, n)) in sums.iter().enumerate() {
                if n == 0 {
                    let prev = if t > 0 { data[(t - 1) * joints + j] } else { Vector2::zeros() };
                    data.push(prev);
                    conf.push(0.0);
                } else {
                    data.push(Vector2::new(sx / n as f64, sy / n as f64));
                    conf.push((n as f64 / area).min(1.0));
                }
            }
        }
        Ok(Pose2DSequence::new(self.schema.clone(), data, conf)?)
    }
}

/// Creates `dir` if needed; shared by adapters that write outputs.
pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn palette_is_distinct_and_avoids_grays() {
        for n in [5, 17, 33] {
            let p = palette(n);
            assert_eq!(p.iter().collect::<HashSet<_>>().len(), n);
            assert!(p.iter().all(|c| c[0] != c[1] || c[1] != c[2]));
        }
    }
}
