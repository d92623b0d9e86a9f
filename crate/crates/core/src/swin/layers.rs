//! Building blocks of the visual branch. All functions are differentiable
//! compositions of tensor ops and work at either precision.

use super::config::StagePlan;
use super::params::Bound;
use crate::tensor::{Element, Tensor, TensorError};
use crate::{Error, Result};

/// Additive score for key positions outside the query's region. exp(-1e4)
/// underflows to exactly zero at both precisions after max subtraction.
pub const MASK_NEG: f64 = -1.0e4;

fn dims5(op: &'static str, x: &Tensor<impl Element>) -> Result<[usize; 5]> {
    x.shape()
        .try_into()
        .map_err(|_| Error::Tensor(TensorError::Invalid(format!("{op}: expected rank-5 input, got {:?}", x.shape()))))
}

/// Split `[B, T, H, W, 3]` into `pt x ph x pw x 3` patches, flatten each
/// (time, row, column, channel order) and project to `C`.
pub fn patch_embed<T: Element>(
    video: &Tensor<T>,
    patch: [usize; 3],
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, t, h, w, ch] = dims5("patch_embed", video)?;
    let [pt, ph, pw] = patch;
    if t % pt != 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Config(format!(
            "patch_embed: input {t}x{h}x{w} not divisible by patch {pt}x{ph}x{pw}"
        )));
    }
    let (gt, gh, gw) = (t / pt, h / ph, w / pw);
    let patches = video
        .reshape(&[b, gt, pt, gh, ph, gw, pw, ch])?
        .permute(&[0, 1, 3, 5, 2, 4, 6, 7])?
        .reshape(&[b * gt * gh * gw, pt * ph * pw * ch])?;
    let c = weight.shape()[1];
    Ok(patches.linear(weight, Some(bias))?.reshape(&[b, gt, gh, gw, c])?)
}

fn check_window(op: &'static str, grid: [usize; 3], window: [usize; 3]) -> Result<()> {
    if (0..3).any(|a| window[a] == 0 || grid[a] % window[a] != 0) {
        return Err(Error::Config(format!("{op}: grid {grid:?} not divisible by window {window:?}")));
    }
    Ok(())
}

/// `[B, t, h, w, C] -> [B * nW, wt * wh * ww, C]`, windows in row-major
/// (t, h, w) order within each sample.
pub fn window_partition<T: Element>(x: &Tensor<T>, window: [usize; 3]) -> Result<Tensor<T>> {
    let [b, t, h, w, c] = dims5("window_partition", x)?;
    check_window("window_partition", [t, h, w], window)?;
    let [wt, wh, ww] = window;
    Ok(x.reshape(&[b, t / wt, wt, h / wh, wh, w / ww, ww, c])?
        .permute(&[0, 1, 3, 5, 2, 4, 6, 7])?
        .reshape(&[b * (t / wt) * (h / wh) * (w / ww), wt * wh * ww, c])?)
}

/// Inverse of [`window_partition`].
pub fn window_reverse<T: Element>(
    windows: &Tensor<T>,
    window: [usize; 3],
    grid: [usize; 3],
    batch: usize,
) -> Result<Tensor<T>> {
    check_window("window_reverse", grid, window)?;
    let [t, h, w] = grid;
    let [wt, wh, ww] = window;
    let c = *windows.shape().last().unwrap();
    Ok(windows
        .reshape(&[batch, t / wt, h / wh, w / ww, wt, wh, ww, c])?
        .permute(&[0, 1, 4, 2, 5, 3, 6, 7])?
        .reshape(&[batch, t, h, w, c])?)
}

/// Toroidal roll of the token grid axes of `[B, t, h, w, C]` by `offset`.
pub fn cyclic_shift<T: Element>(x: &Tensor<T>, offset: [isize; 3]) -> Result<Tensor<T>> {
    dims5("cyclic_shift", x)?;
    let mut y = x.clone();
    for (a, &o) in offset.iter().enumerate() {
        if o != 0 {
            y = y.roll(a + 1, o)?;
        }
    }
    Ok(y)
}

/// Region labels of the shifted grid: tokens that wrapped around during the
/// roll form separate regions on each shifted axis.
fn region_labels(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<usize> {
    let axis_region = |a: usize, i: usize| -> usize {
        if shift[a] == 0 {
            0
        } else if i < grid[a] - window[a] {
            0
        } else if i < grid[a] - shift[a] {
            1
        } else {
            2
        }
    };
    let [t, h, w] = grid;
    let mut labels = Vec::with_capacity(t * h * w);
    for it in 0..t {
        for ih in 0..h {
            for iw in 0..w {
                labels.push(axis_region(0, it) * 9 + axis_region(1, ih) * 3 + axis_region(2, iw));
            }
        }
    }
    labels
}

/// Additive attention mask `[nW, n, n]` for the shifted layer: 0 within a
/// region, [`MASK_NEG`] across regions.
pub fn shift_mask_values(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<f64> {
    let labels = region_labels(grid, window, shift);
    let [t, h, w] = grid;
    let [wt, wh, ww] = window;
    let n = wt * wh * ww;
    let mut out = Vec::with_capacity((t / wt) * (h / wh) * (w / ww) * n * n);
    for bt in 0..t / wt {
        for bh in 0..h / wh {
            for bw in 0..w / ww {
                let mut win = Vec::with_capacity(n);
                for dt in 0..wt {
                    for dh in 0..wh {
                        for dw in 0..ww {
                            let (it, ih, iw) = (bt * wt + dt, bh * wh + dh, bw * ww + dw);
                            win.push(labels[(it * h + ih) * w + iw]);
                        }
                    }
                }
                for &qi in &win {
                    for &kj in &win {
                        out.push(if qi == kj { 0.0 } else { MASK_NEG });
                    }
                }
            }
        }
    }
    out
}

pub fn shift_mask<T: Element>(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Result<Tensor<T>> {
    check_window("shift_mask", grid, window)?;
    let n: usize = window.iter().product();
    let nw = (0..3).map(|a| grid[a] / window[a]).product::<usize>();
    let vals = shift_mask_values(grid, window, shift);
    Ok(Tensor::new(&[nw, n, n], vals.into_iter().map(T::of).collect())?)
}

/// Weights of one attention layer.
pub struct AttentionWeights<'a, T: Element> {
    pub q: &'a Tensor<T>,
    pub k: &'a Tensor<T>,
    pub v: &'a Tensor<T>,
    pub proj_weight: &'a Tensor<T>,
    pub proj_bias: &'a Tensor<T>,
}

impl<'a, T: Element> AttentionWeights<'a, T> {
    pub fn bind(params: &'a Bound<T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            q: params.get(&format!("{prefix}.q.weight"))?,
            k: params.get(&format!("{prefix}.k.weight"))?,
            v: params.get(&format!("{prefix}.v.weight"))?,
            proj_weight: params.get(&format!("{prefix}.proj.weight"))?,
            proj_bias: params.get(&format!("{prefix}.proj.bias"))?,
        })
    }
}

/// Multi-head self-attention inside each window.
///
/// `windows` is `[Bw, n, C]`; `mask`, when given, is `[nW, n, n]` and `Bw`
/// must be a multiple of `nW` (windows of each sample are contiguous).
/// Returns the projected output `[Bw, n, C]` and the attention probabilities
/// `[Bw, heads, n, n]`.
pub fn window_attention<T: Element>(
    windows: &Tensor<T>,
    weights: &AttentionWeights<'_, T>,
    heads: usize,
    mask: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [bw, n, c]: [usize; 3] = windows
        .shape()
        .try_into()
        .map_err(|_| Error::Tensor(TensorError::Invalid(format!("window_attention: rank-3 input expected, got {:?}", windows.shape()))))?;
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("window_attention: width {c} not divisible into {heads} heads")));
    }
    let d = c / heads;
    let q = windows.linear(weights.q, None)?.reshape(&[bw, n, heads, d])?.permute(&[0, 2, 1, 3])?;
    let k_t = windows.linear(weights.k, None)?.reshape(&[bw, n, heads, d])?.permute(&[0, 2, 3, 1])?;
    let v = windows.linear(weights.v, None)?.reshape(&[bw, n, heads, d])?.permute(&[0, 2, 1, 3])?;
    let mut scores = q.matmul(&k_t)?.scale(1.0 / (d as f64).sqrt())?;
    if let Some(mask) = mask {
        let nw = mask.shape()[0];
        if mask.shape() != [nw, n, n] || bw % nw != 0 {
            return Err(Error::Tensor(TensorError::ShapeMismatch {
                op: "window_attention mask",
                lhs: vec![bw, heads, n, n],
                rhs: mask.shape().to_vec(),
            }));
        }
        scores = scores
            .reshape(&[bw / nw, nw, heads, n, n])?
            .add(&mask.reshape(&[nw, 1, n, n])?)?
            .reshape(&[bw, heads, n, n])?;
    }
    let attn = scores.softmax_last()?;
    let out = attn
        .matmul(&v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[bw, n, c])?
        .linear(weights.proj_weight, Some(weights.proj_bias))?;
    Ok((out, attn))
}

/// One transformer layer: pre-norm windowed attention and MLP, both residual.
/// With `shifted`, the grid is rolled by `-shift` before partitioning and
/// rolled back afterwards, and `mask` separates wrapped regions.
pub fn swin_layer<T: Element>(
    x: &Tensor<T>,
    params: &Bound<T>,
    prefix: &str,
    plan: &StagePlan,
    shifted: bool,
    mask: Option<&Tensor<T>>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let batch = x.shape()[0];
    let p = |s: &str| params.get(&format!("{prefix}.{s}"));
    let mut h = x.layer_norm(p("norm1.weight")?, p("norm1.bias")?, eps)?;
    let offset = plan.shift.map(|s| s as isize);
    if shifted {
        h = cyclic_shift(&h, offset.map(|o| -o))?;
    }
    let windows = window_partition(&h, plan.window)?;
    let weights = AttentionWeights::bind(params, &format!("{prefix}.attn"))?;
    let (attended, attn) = window_attention(&windows, &weights, plan.heads, if shifted { mask } else { None })?;
    let mut h = window_reverse(&attended, plan.window, plan.grid, batch)?;
    if shifted {
        h = cyclic_shift(&h, offset)?;
    }
    let x = x.add(&h)?;
    let y = x
        .layer_norm(p("norm2.weight")?, p("norm2.bias")?, eps)?
        .linear(p("mlp.fc1.weight")?, Some(p("mlp.fc1.bias")?))?
        .gelu()?
        .linear(p("mlp.fc2.weight")?, Some(p("mlp.fc2.bias")?))?;
    Ok((x.add(&y)?, attn))
}

/// Regular layer followed by its shifted-window partner. Returns the output
/// and the first (unshifted) layer's attention probabilities.
pub fn swin_block_pair<T: Element>(
    x: &Tensor<T>,
    params: &Bound<T>,
    plan: &StagePlan,
    pair: usize,
    mask: Option<&Tensor<T>>,
    eps: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let base = format!("stages.{}.blocks", plan.index);
    let (x, attn) = swin_layer(x, params, &format!("{base}.{}", 2 * pair), plan, false, None, eps)?;
    let (x, _) = swin_layer(&x, params, &format!("{base}.{}", 2 * pair + 1), plan, true, mask, eps)?;
    Ok((x, attn))
}

/// `[B, t, h, w, C] -> [B, t, h/2, w/2, 2C]`: concatenate each spatial 2x2
/// neighbourhood, normalize, reduce 4C -> 2C.
pub fn patch_merging<T: Element>(
    x: &Tensor<T>,
    norm_weight: &Tensor<T>,
    norm_bias: &Tensor<T>,
    reduction: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let [b, t, h, w, c] = dims5("patch_merging", x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!("patch_merging: odd spatial grid {h}x{w}")));
    }
    // neighbourhood order: (0,0), (1,0), (0,1), (1,1) as (row, col)
    Ok(x.reshape(&[b, t, h / 2, 2, w / 2, 2, c])?
        .permute(&[0, 1, 2, 4, 5, 3, 6])?
        .reshape(&[b, t, h / 2, w / 2, 4 * c])?
        .layer_norm(norm_weight, norm_bias, eps)?
        .linear(reduction, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::swin::config::ModelConfig;
    use crate::swin::params::ParamStore;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::Fill;
    use proptest::prelude::*;

    fn rand_t(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::make(shape, Fill::Uniform { low: -1.0, high: 1.0, rng }).unwrap()
    }

    fn iota(shape: &[usize]) -> Tensor<f64> {
        Tensor::new(shape, (0..shape.iter().product::<usize>()).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn patch_embed_shapes() {
        let mut rng = Rng::new(0);
        let w = rand_t(&[96, 8], &mut rng);
        let b = rand_t(&[8], &mut rng);
        let v = rand_t(&[1, 8, 16, 16, 3], &mut rng);
        let tok = patch_embed(&v, [2, 4, 4], &w, &b).unwrap();
        assert_eq!(tok.shape(), &[1, 4, 4, 4, 8]);
        let odd = Tensor::<f64>::zeros(&[1, 7, 16, 16, 3]).unwrap();
        assert!(patch_embed(&odd, [2, 4, 4], &w, &b).is_err());
    }

    #[test]
    fn patch_embed_flattens_in_t_h_w_c_order() {
        // weight selects raw patch element j into output channel 0
        let v = iota(&[1, 2, 4, 4, 3]);
        for j in [0, 1, 5, 47, 95] {
            let mut wd = vec![0.0; 96];
            wd[j] = 1.0;
            let w = Tensor::new(&[96, 1], wd).unwrap();
            let b = Tensor::zeros(&[1]).unwrap();
            let out = patch_embed(&v, [2, 4, 4], &w, &b).unwrap();
            // with a single patch the flattened patch is the whole video, row-major
            assert_eq!(out.data()[0], j as f64);
        }
    }

    #[test]
    fn partition_counts() {
        let x = Tensor::<f32>::zeros(&[1, 16, 56, 56, 1]).unwrap();
        let w = window_partition(&x, [2, 4, 4]).unwrap();
        assert_eq!(w.shape(), &[1568, 32, 1]);
        let y = Tensor::<f32>::zeros(&[2, 4, 4, 4, 3]).unwrap();
        assert_eq!(window_partition(&y, [4, 4, 4]).unwrap().shape(), &[2, 64, 3]);
        assert!(window_partition(&y, [3, 4, 4]).is_err());
    }

    #[test]
    fn partition_groups_window_tokens() {
        let x = iota(&[1, 2, 4, 4, 1]);
        let w = window_partition(&x, [1, 2, 2]).unwrap();
        assert_eq!(w.shape(), &[8, 4, 1]);
        assert_eq!(&w.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&w.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn shift_identity_and_row_example() {
        let x = iota(&[1, 2, 4, 4, 2]);
        assert_eq!(cyclic_shift(&x, [0, 0, 0]).unwrap().data(), x.data());
        let row = Tensor::<f64>::new(&[1, 1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cyclic_shift(&row, [0, 0, 2]).unwrap().data(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn mask_separates_wrapped_regions() {
        // 1-D along w: grid 8, window 4, shift 2. The last window holds
        // tokens 4..8 of the rolled grid: 4,5 (region 1) and 6,7 (region 2).
        let m = shift_mask_values([1, 1, 8], [1, 1, 4], [0, 0, 2]);
        let n = 4;
        assert!(m[..n * n].iter().all(|&v| v == 0.0));
        let last = &m[n * n..];
        assert_eq!(last[0 * n + 1], 0.0);
        assert_eq!(last[0 * n + 2], MASK_NEG);
        assert_eq!(last[2 * n + 3], 0.0);
        assert_eq!(last[3 * n + 1], MASK_NEG);
        // no shift -> no masking
        assert!(shift_mask_values([2, 8, 8], [2, 4, 4], [0, 0, 0]).iter().all(|&v| v == 0.0));
    }

    fn attn_weights(rng: &mut Rng, c: usize) -> Vec<Tensor<f64>> {
        vec![
            rand_t(&[c, c], rng),
            rand_t(&[c, c], rng),
            rand_t(&[c, c], rng),
            rand_t(&[c, c], rng),
            rand_t(&[c], rng),
        ]
    }

    fn as_weights(t: &[Tensor<f64>]) -> AttentionWeights<'_, f64> {
        AttentionWeights {
            q: &t[0],
            k: &t[1],
            v: &t[2],
            proj_weight: &t[3],
            proj_bias: &t[4],
        }
    }

    /// Scalar-loop multi-head attention for one window.
    fn naive_attention(x: &[f64], n: usize, c: usize, heads: usize, w: &[Tensor<f64>]) -> Vec<f64> {
        let d = c / heads;
        let mm = |x: &[f64], w: &[f64], cols: usize| -> Vec<f64> {
            let rows = x.len() / c;
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                for j in 0..cols {
                    for i in 0..c {
                        out[r * cols + j] += x[r * c + i] * w[i * cols + j];
                    }
                }
            }
            out
        };
        let (q, k, v) = (mm(x, w[0].data(), c), mm(x, w[1].data(), c), mm(x, w[2].data(), c));
        let mut concat = vec![0.0; n * c];
        for h in 0..heads {
            for i in 0..n {
                let mut s: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|e| q[i * c + h * d + e] * k[j * c + h * d + e]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
                s.iter_mut().for_each(|v| *v = (*v - mx).exp() / z);
                for e in 0..d {
                    concat[i * c + h * d + e] = (0..n).map(|j| s[j] * v[j * c + h * d + e]).sum();
                }
            }
        }
        let mut out = mm(&concat, w[3].data(), c);
        for r in 0..n {
            for j in 0..c {
                out[r * c + j] += w[4].data()[j];
            }
        }
        out
    }

    #[test]
    fn attention_matches_scalar_loop() {
        let mut rng = Rng::new(31);
        let (n, c, heads) = (2, 4, 2);
        let x = rand_t(&[3, n, c], &mut rng);
        let w = attn_weights(&mut rng, c);
        let (out, attn) = window_attention(&x, &as_weights(&w), heads, None).unwrap();
        assert_eq!(attn.shape(), &[3, heads, n, n]);
        for b in 0..3 {
            let want = naive_attention(&x.data()[b * n * c..(b + 1) * n * c], n, c, heads, &w);
            for (g, w) in out.data()[b * n * c..(b + 1) * n * c].iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_window_is_value_projection() {
        let mut rng = Rng::new(4);
        let x = rand_t(&[1, 1, 4], &mut rng);
        let w = attn_weights(&mut rng, 4);
        let (out, attn) = window_attention(&x, &as_weights(&w), 2, None).unwrap();
        assert!(attn.data().iter().all(|&a| a == 1.0));
        let want = x.linear(&w[2], None).unwrap().linear(&w[3], Some(&w[4])).unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut rng = Rng::new(5);
        let x = rand_t(&[2, 5, 4], &mut rng);
        let mut w = attn_weights(&mut rng, 4);
        w[0] = Tensor::zeros(&[4, 4]).unwrap();
        w[1] = Tensor::zeros(&[4, 4]).unwrap();
        let (out, attn) = window_attention(&x, &as_weights(&w), 2, None).unwrap();
        assert!(attn.data().iter().all(|&a| (a - 0.2).abs() < 1e-15));
        let v = x.linear(&w[2], None).unwrap().mean_axis(1).unwrap();
        let want = v.linear(&w[3], Some(&w[4])).unwrap();
        for b in 0..2 {
            for j in 0..4 {
                for i in 0..5 {
                    assert!((out.data()[(b * 5 + i) * 4 + j] - want.data()[b * 4 + j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_rejects_bad_heads() {
        let mut rng = Rng::new(6);
        let x = rand_t(&[1, 2, 4], &mut rng);
        let w = attn_weights(&mut rng, 4);
        assert!(window_attention(&x, &as_weights(&w), 3, None).is_err());
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let mut rng = Rng::new(7);
        let grid = [2, 8, 8];
        let (window, shift) = ([2, 4, 4], [1, 2, 2]);
        let mask = shift_mask::<f64>(grid, window, shift).unwrap();
        let nw = mask.shape()[0];
        let x = rand_t(&[2 * nw, 32, 8], &mut rng).scale(3.0).unwrap();
        let w = attn_weights(&mut rng, 8);
        let (_, attn) = window_attention(&x, &as_weights(&w), 2, Some(&mask)).unwrap();
        let n = 32;
        for (row_idx, row) in attn.data().chunks(n).enumerate() {
            let win = (row_idx / (2 * n)) % nw;
            let q = row_idx % n;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (k, &a) in row.iter().enumerate() {
                if mask.data()[(win * n + q) * n + k] != 0.0 {
                    assert!(a < 1e-6);
                }
            }
        }
    }

    #[test]
    fn attention_is_window_permutation_equivariant() {
        let mut rng = Rng::new(8);
        let x = rand_t(&[4, 6, 4], &mut rng);
        let w = attn_weights(&mut rng, 4);
        let (out, _) = window_attention(&x, &as_weights(&w), 2, None).unwrap();
        let perm = [2, 0, 3, 1];
        let parts: Vec<_> = perm.iter().map(|&i| x.slice(0, i, i + 1).unwrap()).collect();
        let xp = Tensor::concat(&parts, 0).unwrap();
        let (outp, _) = window_attention(&xp, &as_weights(&w), 2, None).unwrap();
        for (pos, &i) in perm.iter().enumerate() {
            assert_eq!(&outp.data()[pos * 24..(pos + 1) * 24], &out.data()[i * 24..(i + 1) * 24]);
        }
    }

    fn tiny_plan() -> StagePlan {
        StagePlan {
            index: 0,
            grid: [2, 4, 4],
            dim: 8,
            heads: 2,
            window: [2, 2, 2],
            shift: [1, 1, 1],
            pairs: 1,
            merge: false,
        }
    }

    fn block_store(plan: &StagePlan, seed: u64) -> ParamStore<f64> {
        let mut cfg = ModelConfig::tiny(2);
        cfg.embed_dim = plan.dim;
        let specs: Vec<_> = crate::swin::params::param_specs(&cfg)
            .unwrap()
            .into_iter()
            .filter(|s| s.name.starts_with("stages.0.blocks."))
            .collect();
        let mut store = ParamStore::from_specs(&specs, &mut Rng::new(seed));
        // non-trivial norms and biases so every parameter path is exercised
        let mut r = Rng::new(seed + 1);
        for (_, p) in store.iter_mut() {
            for v in p.data.iter_mut() {
                *v += 0.3 * r.uniform(-1.0, 1.0);
            }
        }
        store
    }

    #[test]
    fn zero_weights_make_block_identity() {
        let plan = tiny_plan();
        let mut store = block_store(&plan, 1);
        for (name, p) in store.iter_mut() {
            let fill = if name.contains("norm") && name.ends_with("weight") { 1.0 } else { 0.0 };
            p.data.iter_mut().for_each(|v| *v = fill);
        }
        let bound = store.bind(false).unwrap();
        let mut rng = Rng::new(2);
        let x = rand_t(&[2, 2, 4, 4, 8], &mut rng);
        let mask = shift_mask(plan.grid, plan.window, plan.shift).unwrap();
        let (y, _) = swin_block_pair(&x, &bound, &plan, 0, Some(&mask), 1e-5).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn degenerate_shift_equals_unshifted() {
        let mut plan = tiny_plan();
        plan.shift = [0, 0, 0];
        let store = block_store(&plan, 3);
        let bound = store.bind(false).unwrap();
        let x = rand_t(&[1, 2, 4, 4, 8], &mut Rng::new(4));
        let zero_mask = shift_mask(plan.grid, plan.window, plan.shift).unwrap();
        let (a, _) = swin_layer(&x, &bound, "stages.0.blocks.1", &plan, true, Some(&zero_mask), 1e-5).unwrap();
        let (b, _) = swin_layer(&x, &bound, "stages.0.blocks.1", &plan, false, None, 1e-5).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn block_pair_gradcheck() {
        let plan = tiny_plan();
        let mask = shift_mask(plan.grid, plan.window, plan.shift).unwrap();
        for seed in 0..5 {
            let store = block_store(&plan, 10 + seed);
            let names: Vec<String> = store.names().map(String::from).collect();
            let mut inputs = vec![rand_t(&[1, 2, 4, 4, 8], &mut Rng::new(seed))];
            for n in &names {
                let p = store.get(n).unwrap();
                inputs.push(Tensor::new(&p.shape, p.data.clone()).unwrap());
            }
            let probe = rand_t(&[1, 2, 4, 4, 8], &mut Rng::new(99 + seed));
            let err = check_gradients(&inputs, 1e-5, |t| {
                let bound = Bound::from_tensors(names.iter().cloned().zip(t[1..].iter().cloned()));
                let (y, _) = swin_block_pair(&t[0], &bound, &plan, 0, Some(&mask), 1e-5)?;
                Ok::<_, Error>(y.mul(&probe)?.sum_all()?)
            })
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn merging_shapes_and_constant_input() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 4, 3], 0.7).unwrap();
        let gamma = Tensor::full(&[12], 1.0).unwrap();
        let beta = Tensor::full(&[12], 0.25).unwrap();
        // averaging reduction: each output channel is the mean of its 4 inputs
        let mut rd = vec![0.0; 12 * 6];
        for i in 0..12 {
            rd[i * 6 + i % 6] = 0.5;
        }
        let red = Tensor::new(&[12, 6], rd).unwrap();
        let y = patch_merging(&x, &gamma, &beta, &red, 1e-5).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2, 6]);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let odd = Tensor::<f64>::zeros(&[1, 2, 3, 4, 3]).unwrap();
        assert!(patch_merging(&odd, &gamma, &beta, &red, 1e-5).is_err());
    }

    proptest! {
        #[test]
        fn partition_reverse_roundtrip(
            wins in proptest::array::uniform3(1usize..3),
            mult in proptest::array::uniform3(1usize..3),
            b in 1usize..3,
            c in 1usize..4,
        ) {
            let grid = [wins[0] * mult[0], wins[1] * mult[1], wins[2] * mult[2]];
            let x = iota(&[b, grid[0], grid[1], grid[2], c]);
            let w = window_partition(&x, wins).unwrap();
            let y = window_reverse(&w, wins, grid, b).unwrap();
            prop_assert_eq!(x.data(), y.data());
        }

        #[test]
        fn shift_roundtrip(s in proptest::array::uniform3(0isize..5)) {
            let x = iota(&[2, 3, 4, 5, 2]);
            let y = cyclic_shift(&cyclic_shift(&x, s).unwrap(), s.map(|v| -v)).unwrap();
            prop_assert_eq!(x.data(), y.data());
        }
    }
}
