//! In-memory frame stacks, resizing, box cropping and clip segmentation.

use serde::{Deserialize, Serialize};

use super::vtf::{TensorData, VtfArray};
use crate::{Error, Result};

/// `[frames, height, width, 3]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    /// Values are in [0, 1] rather than raw 8-bit levels.
    pub normalized: bool,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        if frames * height * width * 3 != data.len() {
            return Err(Error::Data(format!(
                "{} values for a {frames}x{height}x{width}x3 video",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
            normalized,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, 3]
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// u8 arrays are raw levels; float arrays are taken as already normalized.
    pub fn from_array(a: &VtfArray) -> Result<Self> {
        if a.shape.len() != 4 || a.shape[3] != 3 || a.shape[..3].contains(&0) {
            return Err(Error::Data(format!("expected a [T, H, W, 3] video, got {:?}", a.shape)));
        }
        let normalized = !matches!(a.data, TensorData::U8(_));
        Self::new(a.shape[0], a.shape[1], a.shape[2], a.data.to_f32(), normalized)
    }

    /// Quantize normalized values to 8-bit levels.
    pub fn to_u8_array(&self) -> VtfArray {
        let scale = if self.normalized { 255.0 } else { 1.0 };
        let data = self
            .data
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        VtfArray {
            shape: self.shape().to_vec(),
            data: TensorData::U8(data),
        }
    }

    /// Frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Video {
        let n = self.frame_len();
        Video {
            frames: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
            normalized: self.normalized,
        }
    }
}

/// Source coordinate of output index `i` under half-pixel-centre scaling.
#[inline]
pub(crate) fn source_coord(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, f: f32) -> f32 {
    a + f * (b - a)
}

/// Bilinear resize of one `[h, w, 3]` image, sampling only the output window
/// starting at (`oy`, `ox`) of size `crop_h x crop_w` within the full `out_h x out_w` result.
#[allow(clippy::too_many_arguments)]
pub(crate) fn resize_window(
    src: &[f32],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    (oy, ox): (usize, usize),
    (crop_h, crop_w): (usize, usize),
    dst: &mut Vec<f32>,
) {
    let cols: Vec<_> = (ox..ox + crop_w).map(|x| source_coord(x, w, out_w)).collect();
    for y in oy..oy + crop_h {
        let (y0, y1, fy) = source_coord(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c];
                let top = lerp(p(y0, x0), p(y0, x1), fx);
                let bottom = lerp(p(y1, x0), p(y1, x1), fx);
                dst.push(lerp(top, bottom, fy));
            }
        }
    }
}

/// Bilinear resize of every frame to `out_h x out_w`.
pub fn resize_video(v: &Video, out_h: usize, out_w: usize) -> Video {
    if (out_h, out_w) == (v.height, v.width) {
        return v.clone();
    }
    let mut data = Vec::with_capacity(v.frames * out_h * out_w * 3);
    for t in 0..v.frames {
        resize_window(v.frame(t), v.height, v.width, out_h, out_w, (0, 0), (out_h, out_w), &mut data);
    }
    Video {
        frames: v.frames,
        height: out_h,
        width: out_w,
        data,
        normalized: v.normalized,
    }
}

/// Pixel box `[x0, y0, x1, y1]`; the covered pixels are `floor(x0)..ceil(x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    /// Integer pixel bounds `(x0, y0, x1, y1)` after validation.
    pub fn pixels(&self, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let [x0, y0, x1, y1] = self.0;
        if !self.0.iter().all(|v| v.is_finite()) || !(x0 < x1 && y0 < y1) {
            return Err(Error::Data(format!("degenerate box {:?}", self.0)));
        }
        if x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64 {
            return Err(Error::Data(format!("box {:?} outside {width}x{height} frame", self.0)));
        }
        let (px0, py0) = (x0.floor() as usize, y0.floor() as usize);
        let (px1, py1) = (x1.ceil() as usize, y1.ceil() as usize);
        Ok((px0, py0, px1, py1))
    }
}

/// Crop each frame to its box, then resize all crops to the median box size.
pub fn crop_with_boxes(v: &Video, boxes: &[BBox]) -> Result<Video> {
    if boxes.len() != v.frames {
        return Err(Error::Data(format!("{} boxes for {} frames", boxes.len(), v.frames)));
    }
    let px: Vec<_> = boxes.iter().map(|b| b.pixels(v.height, v.width)).collect::<Result<_>>()?;
    let median = |mut xs: Vec<usize>| {
        xs.sort_unstable();
        xs[xs.len() / 2]
    };
    let out_w = median(px.iter().map(|b| b.2 - b.0).collect());
    let out_h = median(px.iter().map(|b| b.3 - b.1).collect());
    let mut data = Vec::with_capacity(v.frames * out_h * out_w * 3);
    for (t, &(x0, y0, x1, y1)) in px.iter().enumerate() {
        let (cw, ch) = (x1 - x0, y1 - y0);
        let frame = v.frame(t);
        let mut crop = Vec::with_capacity(ch * cw * 3);
        for y in y0..y1 {
            crop.extend_from_slice(&frame[(y * v.width + x0) * 3..(y * v.width + x1) * 3]);
        }
        if (ch, cw) == (out_h, out_w) {
            data.extend(crop);
        } else {
            resize_window(&crop, ch, cw, out_h, out_w, (0, 0), (out_h, out_w), &mut data);
        }
    }
    Video::new(v.frames, out_h, out_w, data, v.normalized)
}

/// Non-overlapping windows of `clip_len` frames; a shorter tail is dropped.
pub fn segment_clips(v: &Video, clip_len: usize) -> Vec<Video> {
    if clip_len == 0 {
        return Vec::new();
    }
    (0..v.frames / clip_len)
        .map(|i| v.slice_frames(i * clip_len, (i + 1) * clip_len))
        .collect()
}
