//! Synthetic repetitive-motion videos, one archetype per behavior class.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, Record};
use super::video::Video;
use super::vtf::write_tensor_file;
use crate::classes::CANONICAL;
use crate::rng::{Rng, Stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// One of the canonical class names.
    pub archetype: String,
    pub frame_size: usize,
    pub frames: usize,
    /// Radius of the moving blob in pixels.
    pub scale: f64,
    /// Motion period in frames.
    pub period: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<usize> {
        let class = CANONICAL
            .iter()
            .position(|c| *c == self.archetype)
            .ok_or_else(|| Error::Config(format!("unknown archetype {:?}", self.archetype)))?;
        if self.period < 2 {
            return Err(Error::Config(format!("period must be >= 2, got {}", self.period)));
        }
        if !(self.noise_std >= 0.0) || !(self.scale > 0.0) {
            return Err(Error::Config("noise_std must be >= 0 and scale > 0".into()));
        }
        if self.frame_size < 8 || self.frames == 0 {
            return Err(Error::Config("frame_size must be >= 8 and frames >= 1".into()));
        }
        Ok(class)
    }
}

struct Blob {
    x: f64,
    y: f64,
    radius: f64,
    color: [f64; 3],
}

/// Render a normalized `[frames, size, size, 3]` video and its class id.
pub fn synth_generate(spec: &SynthSpec) -> Result<(Video, usize)> {
    let class = spec.validate()?;
    let mut rng = Rng::stream(spec.seed, Stream::Synth);
    let s = spec.frame_size as f64;
    let background = rng.uniform(0.05, 0.2);
    let mut color = || [rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)];
    let (body_color, hand_color) = (color(), color());
    let cx = s / 2.0 + rng.uniform(-s / 10.0, s / 10.0);
    let cy = s / 2.0 + rng.uniform(-s / 10.0, s / 10.0);
    let phase = rng.below(spec.period);
    let amplitude = 0.25 * s;
    let r = spec.scale;

    let size = spec.frame_size;
    let mut data = Vec::with_capacity(spec.frames * size * size * 3);
    for t in 0..spec.frames {
        // depends on t only through the phase index, so the video is exactly periodic
        let k = (t + phase) % spec.period;
        let theta = TAU * k as f64 / spec.period as f64;
        let body = Blob {
            x: cx,
            y: cy,
            radius: 1.5 * r,
            color: body_color.map(|c| 0.35 * c),
        };
        let mut blobs = vec![body];
        let hand = |x, y, gain: f64| Blob {
            x,
            y,
            radius: r,
            color: hand_color.map(|c| gain * c),
        };
        match class {
            0 => blobs.push(hand(cx + amplitude * theta.sin(), cy, 1.0)),
            1 => blobs.push(hand(cx, cy + amplitude * theta.sin(), 1.0)),
            2 => {
                let rad = 0.2 * s;
                blobs.push(hand(cx + rad * theta.cos(), cy + rad * theta.sin(), 1.0));
                blobs.push(hand(cx - rad * theta.cos(), cy - rad * theta.sin(), 1.0));
            }
            _ => {
                let gain = if 2 * k < spec.period { 1.0 } else { 0.15 };
                blobs.push(hand(cx + 0.15 * s, cy - 0.1 * s, gain));
            }
        }
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut rgb = [background; 3];
                for b in &blobs {
                    let d = ((px - b.x).powi(2) + (py - b.y).powi(2)).sqrt();
                    let cover = (b.radius + 0.5 - d).clamp(0.0, 1.0);
                    rgb.iter_mut().zip(b.color).for_each(|(v, c)| *v += cover * c);
                }
                for v in rgb {
                    let noisy = if spec.noise_std > 0.0 {
                        v + spec.noise_std * rng.normal()
                    } else {
                        v
                    };
                    data.push(noisy.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Ok((Video::new(spec.frames, size, size, data, true)?, class))
}

/// Parameters for a balanced synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetSpec {
    pub videos_per_class: usize,
    pub frames: usize,
    pub frame_size: usize,
    pub scale: f64,
    pub noise_std: f64,
    /// Inclusive period range drawn per video.
    pub period_range: [usize; 2],
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        Self {
            videos_per_class: 60,
            frames: 16,
            frame_size: 32,
            scale: 4.0,
            noise_std: 0.03,
            period_range: [4, 8],
        }
    }
}

impl SynthDatasetSpec {
    /// Per-video specs, in class-major order; each video has its own derived seed.
    pub fn specs(&self, seed: u64) -> Result<Vec<(String, SynthSpec)>> {
        let [lo, hi] = self.period_range;
        if lo < 2 || hi < lo {
            return Err(Error::Config(format!("bad period_range {:?}", self.period_range)));
        }
        let mut out = Vec::with_capacity(4 * self.videos_per_class);
        for (c, name) in CANONICAL.iter().enumerate() {
            for i in 0..self.videos_per_class {
                let vseed = Rng::derive_seed(seed, (c * self.videos_per_class + i) as u64);
                let period = lo + Rng::stream(vseed, Stream::Synth).below(hi - lo + 1);
                out.push((
                    format!("{name}_{i:03}"),
                    SynthSpec {
                        archetype: name.to_string(),
                        frame_size: self.frame_size,
                        frames: self.frames,
                        scale: self.scale,
                        period,
                        noise_std: self.noise_std,
                        // the per-video stream differs from the period draw above
                        seed: Rng::derive_seed(vseed, 1),
                    },
                ));
            }
        }
        Ok(out)
    }

    /// Write `videos/<id>.vtf` (8-bit) and `manifest.jsonl` under `dir`.
    pub fn write(&self, dir: &Path, seed: u64) -> Result<Vec<Record>> {
        let vdir = dir.join("videos");
        std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        let mut records = Vec::new();
        for (id, spec) in self.specs(seed)? {
            let (video, _) = synth_generate(&spec)?;
            let rel = format!("videos/{id}.vtf");
            write_tensor_file(&dir.join(&rel), &video.to_u8_array())?;
            records.push(Record {
                video_id: id,
                tensor_path: rel,
                label_name: spec.archetype,
                boxes: None,
            });
        }
        write_manifest(&dir.join("manifest.jsonl"), &records)?;
        Ok(records)
    }
}

/// Motion-energy summary of a video: total thresholded frame-difference
/// energy and its spatial spread along x and y.
pub fn motion_features(v: &Video) -> [f64; 3] {
    let (h, w) = (v.height, v.width);
    let mut energy = vec![0.0f64; h * w];
    let scale = if v.normalized { 1.0 } else { 1.0 / 255.0 };
    for t in 1..v.frames {
        let (a, b) = (v.frame(t - 1), v.frame(t));
        for (i, e) in energy.iter_mut().enumerate() {
            let d: f64 = (0..3).map(|c| ((b[i * 3 + c] - a[i * 3 + c]) as f64 * scale).abs()).sum::<f64>() / 3.0;
            if d > 0.1 {
                *e += d;
            }
        }
    }
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return [0.0; 3];
    }
    let (mut mx, mut my) = (0.0, 0.0);
    for (i, e) in energy.iter().enumerate() {
        mx += e * (i % w) as f64;
        my += e * (i / w) as f64;
    }
    let (mx, my) = (mx / total, my / total);
    let (mut vx, mut vy) = (0.0, 0.0);
    for (i, e) in energy.iter().enumerate() {
        vx += e * ((i % w) as f64 - mx).powi(2);
        vy += e * ((i / w) as f64 - my).powi(2);
    }
    [total / (v.frames - 1).max(1) as f64, (vx / total).sqrt(), (vy / total).sqrt()]
}
