//! Attention saliency: capture, collapse to the token grid, upsample to input
//! resolution, normalize and overlay on frames.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Video;
use crate::swin::{window_reverse, AttentionRecord, Bound, SwinModel};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Dense `[batch, t, h, w]` scalar volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub batch: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(batch: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if batch * dims.iter().product::<usize>() != data.len() {
            return Err(Error::Data(format!(
                "volume [{batch}, {dims:?}] needs {} values, got {}",
                batch * dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { batch, dims, data })
    }

    pub fn clip_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn clip(&self, b: usize) -> &[f64] {
        let n = self.clip_len();
        &self.data[b * n..(b + 1) * n]
    }
}

/// Forward `video` `[B, T, H, W, 3]` and return the captured attention.
pub fn capture_attention(model: &SwinModel, params: &Bound<f64>, video: &Tensor<f64>) -> Result<AttentionRecord> {
    model
        .forward(params, video, true)?
        .attention
        .ok_or_else(|| Error::Data("forward returned no attention record".into()))
}

/// Max over keys, mean over heads, windows scattered back to the token grid.
pub fn collapse_attention(rec: &AttentionRecord) -> Result<Volume> {
    let n = rec.tokens;
    let windows = rec.batch * rec.num_windows;
    if rec.weights.len() != windows * rec.heads * n * n {
        return Err(Error::Data(format!(
            "attention record {:?} holds {} values",
            rec.shape(),
            rec.weights.len()
        )));
    }
    let mut per_window = vec![0.0; windows * n];
    for (w, out) in per_window.chunks_mut(n).enumerate() {
        for h in 0..rec.heads {
            let base = (w * rec.heads + h) * n * n;
            for (q, o) in out.iter_mut().enumerate() {
                let row = &rec.weights[base + q * n..base + (q + 1) * n];
                *o += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        out.iter_mut().for_each(|v| *v /= rec.heads as f64);
    }
    let grid = Tensor::new(&[windows, n, 1], per_window)?;
    let vol = window_reverse(&grid, rec.window, rec.grid, rec.batch)?;
    Volume::new(rec.batch, rec.grid, vol.to_vec())
}

/// Source position and lower index for endpoint-aligned resampling.
fn taps(input: usize, output: usize) -> Vec<(usize, f64)> {
    (0..output)
        .map(|i| {
            if input == 1 || output == 1 {
                return (0, 0.0);
            }
            let pos = (i * (input - 1)) as f64 / (output - 1) as f64;
            let lo = (pos.floor() as usize).min(input - 2);
            (lo, pos - lo as f64)
        })
        .collect()
}

/// Resample one axis of a row-major `[outer, len, inner]` buffer.
fn resize_axis(src: &[f64], outer: usize, len: usize, inner: usize, out_len: usize) -> Vec<f64> {
    let taps = taps(len, out_len);
    let mut dst = Vec::with_capacity(outer * out_len * inner);
    for o in 0..outer {
        let block = &src[o * len * inner..(o + 1) * len * inner];
        for &(lo, f) in &taps {
            let a = &block[lo * inner..(lo + 1) * inner];
            if len == 1 {
                dst.extend_from_slice(a);
                continue;
            }
            let b = &block[(lo + 1) * inner..(lo + 2) * inner];
            dst.extend(a.iter().zip(b).map(|(&a, &b)| a + f * (b - a)));
        }
    }
    dst
}

/// Separable trilinear resampling where corner samples map to corners.
pub fn trilinear_resize(vol: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.contains(&0) || vol.dims.contains(&0) {
        return Err(Error::Data(format!("cannot resize {:?} to {target:?}", vol.dims)));
    }
    let [t, h, w] = vol.dims;
    let [nt, nh, nw] = target;
    let x = resize_axis(&vol.data, vol.batch * t * h, w, 1, nw);
    let x = resize_axis(&x, vol.batch * t, h, nw, nh);
    let x = resize_axis(&x, vol.batch, t, nh * nw, nt);
    Volume::new(vol.batch, target, x)
}

/// How a mask is mapped to [0, 1] before it multiplies the frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `(m - min) / (max - min)` per clip; a constant mask becomes all zeros.
    MinMax,
    /// Use the mask as given; values must already lie in [0, 1].
    None,
}

/// Per-clip min-max normalization. Returns the mask and its original range.
pub fn normalize(mask: &[f64]) -> (Vec<f64>, f64, f64) {
    let lo = mask.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mask.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let out = if range > 0.0 {
        mask.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; mask.len()]
    };
    (out, lo, hi)
}

/// Saliency for every clip of `video`, at input resolution, min-max normalized
/// per clip.
pub fn attention_mask(model: &SwinModel, params: &Bound<f64>, video: &Tensor<f64>) -> Result<Volume> {
    let rec = capture_attention(model, params, video)?;
    let s = video.shape();
    let up = trilinear_resize(&collapse_attention(&rec)?, [s[1], s[2], s[3]])?;
    let mut data = Vec::with_capacity(up.data.len());
    for b in 0..up.batch {
        data.extend(normalize(up.clip(b)).0);
    }
    Volume::new(up.batch, up.dims, data)
}

/// Range information written next to the exported frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlaySidecar {
    pub mode: NormMode,
    pub min: f64,
    pub max: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// 8-bit RGB frames of `video` scaled by the mask `[T, H, W]`.
pub fn overlay(mask: &[f64], video: &Video) -> Result<Vec<u8>> {
    if mask.len() != video.frames * video.height * video.width {
        return Err(Error::Data(format!(
            "mask of {} values does not match video {:?}",
            mask.len(),
            video.shape()
        )));
    }
    let scale = if video.normalized { 255.0 } else { 1.0 };
    Ok(video
        .data
        .chunks(3)
        .zip(mask)
        .flat_map(|(px, &m)| px.iter().map(move |&c| (c as f64 * scale * m).round().clamp(0.0, 255.0) as u8))
        .collect())
}

/// Normalize `mask`, multiply it into `video` and write `frame_%04d.ppm` plus
/// `overlay.json` into `out_dir`.
pub fn overlay_and_export(mask: &[f64], video: &Video, out_dir: &Path, mode: NormMode) -> Result<OverlaySidecar> {
    let (mask, min, max) = match mode {
        NormMode::MinMax => normalize(mask),
        NormMode::None => {
            if let Some(v) = mask.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("mask value {v} outside [0, 1]")));
            }
            let (_, lo, hi) = normalize(mask);
            (mask.to_vec(), lo, hi)
        }
    };
    let pixels = overlay(&mask, video)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (t, frame) in pixels.chunks(video.frame_len()).enumerate() {
        write_ppm(&out_dir.join(format!("frame_{t:04}.ppm")), video.width, video.height, frame)?;
    }
    let sidecar = OverlaySidecar {
        mode,
        min,
        max,
        frames: video.frames,
        height: video.height,
        width: video.width,
    };
    let path = out_dir.join("overlay.json");
    fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Data(format!("{} bytes for a {width}x{height} image", rgb.len())));
    }
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Read a P6 file written by [`write_ppm`]: `(width, height, rgb)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a P6 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h * 3 {
        return Err(bad("pixel data length does not match header"));
    }
    Ok((w, h, data.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn record(batch: usize, grid: [usize; 3], window: [usize; 3], heads: usize, seed: u64) -> AttentionRecord {
        let nw: usize = (0..3).map(|a| grid[a] / window[a]).product();
        let n: usize = window.iter().product();
        let mut r = Rng::new(seed);
        let mut weights = Vec::new();
        for _ in 0..batch * nw * heads * n {
            let row: Vec<f64> = (0..n).map(|_| r.uniform(0.0, 1.0)).collect();
            let s: f64 = row.iter().sum();
            weights.extend(row.iter().map(|v| v / s));
        }
        AttentionRecord {
            batch,
            num_windows: nw,
            heads,
            tokens: n,
            grid,
            window,
            weights,
        }
    }

    /// Direct index arithmetic over every (b, t, y, x) grid position.
    fn loop_oracle(rec: &AttentionRecord) -> Vec<f64> {
        let [t, h, w] = rec.grid;
        let [wt, wh, ww] = rec.window;
        let n = rec.tokens;
        let mut out = vec![0.0; rec.batch * t * h * w];
        for b in 0..rec.batch {
            for ti in 0..t {
                for yi in 0..h {
                    for xi in 0..w {
                        let win = ((ti / wt) * (h / wh) + yi / wh) * (w / ww) + xi / ww;
                        let q = ((ti % wt) * wh + yi % wh) * ww + xi % ww;
                        let mut acc = 0.0;
                        for head in 0..rec.heads {
                            let mut m = f64::NEG_INFINITY;
                            for k in 0..n {
                                let idx = (((b * rec.num_windows + win) * rec.heads + head) * n + q) * n + k;
                                if rec.weights[idx] > m {
                                    m = rec.weights[idx];
                                }
                            }
                            acc += m;
                        }
                        out[((b * t + ti) * h + yi) * w + xi] = acc / rec.heads as f64;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn collapse_matches_loop_oracle() {
        for (seed, (grid, window)) in [([8, 1, 1], [2, 1, 1]), ([4, 4, 4], [2, 2, 2]), ([2, 6, 4], [2, 3, 2])]
            .into_iter()
            .enumerate()
        {
            let rec = record(2, grid, window, 3, seed as u64);
            assert_eq!(collapse_attention(&rec).unwrap().data, loop_oracle(&rec));
        }
    }

    #[test]
    fn collapse_uniform_and_one_hot() {
        let mut rec = record(1, [4, 2, 2], [2, 2, 2], 2, 0);
        rec.weights.iter_mut().for_each(|v| *v = 1.0 / 8.0);
        assert!(collapse_attention(&rec).unwrap().data.iter().all(|&v| v == 0.125));
        rec.weights.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 8 == 3 { 1.0 } else { 0.0 });
        assert!(collapse_attention(&rec).unwrap().data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn resize_ramp_endpoints() {
        let v = Volume::new(1, [1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(trilinear_resize(&v, [1, 1, 3]).unwrap().data, vec![0.0, 0.5, 1.0]);
        let c = Volume::new(2, [2, 3, 2], vec![0.3; 24]).unwrap();
        assert!(trilinear_resize(&c, [5, 4, 7]).unwrap().data.iter().all(|&v| v == 0.3));
        assert!(trilinear_resize(&c, [0, 4, 7]).is_err());
    }

    #[test]
    fn resize_reproduces_linear_field() {
        let field = |dims: [usize; 3], scale: [f64; 3]| -> Vec<f64> {
            let mut out = Vec::new();
            for t in 0..dims[0] {
                for y in 0..dims[1] {
                    for x in 0..dims[2] {
                        out.push(t as f64 * scale[0] + y as f64 * scale[1] + x as f64 * scale[2]);
                    }
                }
            }
            out
        };
        // coarse grid spacing is 4 / 2 / 2 fine steps, so sample positions are exact
        let coarse = Volume::new(1, [3, 5, 2], field([3, 5, 2], [4.0, 2.0, 2.0])).unwrap();
        let fine = trilinear_resize(&coarse, [9, 9, 3]).unwrap();
        assert_eq!(fine.data, field([9, 9, 3], [1.0, 1.0, 1.0]));
        // and back down
        let down = trilinear_resize(&fine, [3, 5, 2]).unwrap();
        assert_eq!(down.data, coarse.data);
    }

    #[test]
    fn normalize_range_and_degenerate() {
        let (m, lo, hi) = normalize(&[2.0, 4.0, 3.0]);
        assert_eq!((m, lo, hi), (vec![0.0, 1.0, 0.5], 2.0, 4.0));
        assert_eq!(normalize(&[0.7; 4]).0, vec![0.0; 4]);
    }

    fn frames(seed: u64) -> Video {
        let mut r = Rng::new(seed);
        let data = (0..2 * 3 * 4 * 3).map(|_| r.below(256) as f32).collect();
        Video::new(2, 3, 4, data, false).unwrap()
    }

    #[test]
    fn overlay_identities() {
        let v = frames(1);
        let bytes: Vec<u8> = v.data.iter().map(|&c| c as u8).collect();
        assert_eq!(overlay(&[1.0; 24], &v).unwrap(), bytes);
        assert!(overlay(&[0.0; 24], &v).unwrap().iter().all(|&b| b == 0));
        let normed = Video::new(2, 3, 4, v.data.iter().map(|c| c / 255.0).collect(), true).unwrap();
        assert_eq!(overlay(&[1.0; 24], &normed).unwrap(), bytes);
        assert!(overlay(&[1.0; 23], &v).is_err());
    }

    #[test]
    fn export_writes_frames_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let v = frames(2);
        let bytes: Vec<u8> = v.data.iter().map(|&c| c as u8).collect();
        let side = overlay_and_export(&[1.0; 24], &v, dir.path(), NormMode::None).unwrap();
        assert_eq!((side.min, side.max), (1.0, 1.0));
        for t in 0..2 {
            let (w, h, px) = read_ppm(&dir.path().join(format!("frame_{t:04}.ppm"))).unwrap();
            assert_eq!((w, h), (4, 3));
            assert_eq!(px, &bytes[t * 36..(t + 1) * 36]);
        }
        // a constant mask normalizes to zeros
        overlay_and_export(&[0.7; 24], &v, dir.path(), NormMode::MinMax).unwrap();
        let (_, _, px) = read_ppm(&dir.path().join("frame_0001.ppm")).unwrap();
        assert!(px.iter().all(|&b| b == 0));
        let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("overlay.json")).unwrap()).unwrap();
        assert_eq!(json["mode"], "min_max");
        assert!(overlay_and_export(&[1.5; 24], &v, dir.path(), NormMode::None).is_err());
    }

    #[test]
    fn export_to_unwritable_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, b"x").unwrap();
        let err = overlay_and_export(&[1.0; 24], &frames(3), &file.join("sub"), NormMode::MinMax).unwrap_err();
        assert_eq!(err.kind(), "io");
    }

    #[test]
    fn read_ppm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        fs::write(&p, b"P3\n1 1\n255\n\0\0\0").unwrap();
        assert!(read_ppm(&p).is_err());
        fs::write(&p, b"P6\n2 1\n255\n\0\0\0").unwrap();
        assert!(read_ppm(&p).is_err());
    }

    proptest! {
        #[test]
        fn ppm_roundtrip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let px: Vec<u8> = (0..w * h * 3).map(|_| r.below(256) as u8).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.ppm");
            write_ppm(&p, w, h, &px).unwrap();
            prop_assert_eq!(read_ppm(&p).unwrap(), (w, h, px));
        }

        #[test]
        fn normalized_mask_in_unit_range(vals in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let (m, _, _) = normalize(&vals);
            prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
