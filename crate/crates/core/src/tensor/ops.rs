//! Arithmetic and neural-network ops with their backward rules.

use super::gemm::{gemm, Transpose};
use super::{numel, Element, Result, Tensor, TensorError};

/// sqrt(2/pi), the tanh-GELU argument scale.
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh-GELU approximation.
const GELU_CUBIC: f64 = 0.044_715;

/// Numpy-style broadcast of two shapes (dims equal or 1, right-aligned).
pub(crate) fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// How elements of a broadcast input map onto the output.
enum BroadcastMap {
    Same,
    /// Input is a suffix of the output: input index = out index % len.
    Cyclic(usize),
    General(Vec<usize>),
}

impl BroadcastMap {
    fn new(out: &[usize], input: &[usize]) -> Self {
        let n_in = numel(input);
        if out == input {
            return Self::Same;
        }
        let pad = out.len() - input.len();
        let squeezed: Vec<usize> = input.iter().copied().skip_while(|&d| d == 1).collect();
        // leading singleton dims of the input behave like missing dims
        if out.ends_with(&squeezed) {
            return Self::Cyclic(n_in);
        }
        let mut in_strides = vec![0usize; out.len()];
        let mut s = 1;
        for i in (0..input.len()).rev() {
            in_strides[i + pad] = if input[i] == 1 { 0 } else { s };
            s *= input[i];
        }
        let total = numel(out);
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; out.len()];
        let mut off = 0usize;
        for _ in 0..total {
            map.push(off);
            for ax in (0..out.len()).rev() {
                idx[ax] += 1;
                off += in_strides[ax];
                if idx[ax] < out[ax] {
                    break;
                }
                off -= in_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Self::General(map)
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Self::Same => i,
            Self::Cyclic(n) => i % n,
            Self::General(m) => m[i],
        }
    }

    fn reduce<T: Element>(&self, grad_out: &[T], in_len: usize) -> Vec<T> {
        match self {
            Self::Same => grad_out.to_vec(),
            _ => {
                let mut g = vec![T::zero(); in_len];
                for (i, &v) in grad_out.iter().enumerate() {
                    g[self.index(i)] += v;
                }
                g
            }
        }
    }
}

fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: fn(T, T) -> T,
    backward: fn(T, T, T) -> (T, T),
) -> Result<Tensor<T>> {
    let shape = broadcast_shapes(op, a.shape(), b.shape())?;
    let ma = BroadcastMap::new(&shape, a.shape());
    let mb = BroadcastMap::new(&shape, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = (0..numel(&shape)).map(|i| f(ad[ma.index(i)], bd[mb.index(i)])).collect();
    Tensor::from_op(
        op,
        shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |_, g, p| {
            let (ad, bd) = (p[0].data(), p[1].data());
            let mut ga = Vec::with_capacity(g.len());
            let mut gb = Vec::with_capacity(g.len());
            for (i, &go) in g.iter().enumerate() {
                let (x, y) = backward(ad[ma.index(i)], bd[mb.index(i)], go);
                ga.push(x);
                gb.push(y);
            }
            let ra = p[0].requires_grad().then(|| ma.reduce(&ga, p[0].numel()));
            let rb = p[1].requires_grad().then(|| mb.reduce(&gb, p[1].numel()));
            vec![ra, rb]
        }),
    )
}

impl<T: Element> Tensor<T> {
    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("add", self, other, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("sub", self, other, |x, y| x - y, |_, _, g| (g, -g))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("mul", self, other, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<T>> {
        let c = T::of(c);
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(g.iter().map(|&v| v * c).collect())]),
        )
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |_, g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        self.sum_all()?.scale(1.0 / n as f64)
    }

    /// Batched matrix product `[.., m, k] @ [.., k, n]` with broadcast batch dims.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = if ba.is_empty() && bb.is_empty() {
            vec![]
        } else {
            let ba1 = if ba.is_empty() { vec![1] } else { ba.to_vec() };
            let bb1 = if bb.is_empty() { vec![1] } else { bb.to_vec() };
            broadcast_shapes("matmul", &ba1, &bb1).map_err(|_| TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })?
        };
        let nb = numel(&batch).max(1);
        let bshape = if batch.is_empty() { vec![1] } else { batch.clone() };
        let map_a = batch_map(&bshape, ba);
        let map_b = batch_map(&bshape, bb);

        let mut out = vec![T::zero(); nb * m * n];
        let (ad, bd) = (self.data(), other.data());
        for i in 0..nb {
            let (ia, ib) = (map_a[i], map_b[i]);
            gemm(
                m,
                k,
                n,
                &ad[ia * m * k..(ia + 1) * m * k],
                Transpose::No,
                &bd[ib * k * n..(ib + 1) * k * n],
                Transpose::No,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g, p| {
                let (ad, bd) = (p[0].data(), p[1].data());
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![T::zero(); ad.len()];
                    for i in 0..nb {
                        let (ia, ib) = (map_a[i], map_b[i]);
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            Transpose::No,
                            &bd[ib * k * n..(ib + 1) * k * n],
                            Transpose::Yes,
                            &mut ga[ia * m * k..(ia + 1) * m * k],
                            true,
                        );
                    }
                    ga
                });
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![T::zero(); bd.len()];
                    for i in 0..nb {
                        let (ia, ib) = (map_a[i], map_b[i]);
                        gemm(
                            k,
                            m,
                            n,
                            &ad[ia * m * k..(ia + 1) * m * k],
                            Transpose::Yes,
                            &g[i * m * n..(i + 1) * m * n],
                            Transpose::No,
                            &mut gb[ib * k * n..(ib + 1) * k * n],
                            true,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Affine map over the last axis: `x @ weight + bias`, weight `[d_in, d_out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let d_in = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != d_in {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let d_out = ws[1];
        if let Some(b) = bias {
            if b.shape() != [d_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    lhs: ws.to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let rows = self.numel() / d_in;
        let mut out = vec![T::zero(); rows * d_out];
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(
            rows,
            d_in,
            d_out,
            self.data(),
            Transpose::No,
            weight.data(),
            Transpose::No,
            &mut out,
            bias.is_some(),
        );
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = d_out;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::from_op(
            "linear",
            shape,
            out,
            parents,
            Box::new(move |_, g, p| {
                let (xd, wd) = (p[0].data(), p[1].data());
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); rows * d_in];
                    gemm(rows, d_out, d_in, g, Transpose::No, wd, Transpose::Yes, &mut gx, false);
                    gx
                });
                let gw = p[1].requires_grad().then(|| {
                    let mut gw = vec![T::zero(); d_in * d_out];
                    gemm(d_in, rows, d_out, xd, Transpose::Yes, g, Transpose::No, &mut gw, false);
                    gw
                });
                let mut grads = vec![gx, gw];
                if p.len() == 3 {
                    grads.push(p[2].requires_grad().then(|| {
                        let mut gb = vec![T::zero(); d_out];
                        for row in g.chunks_exact(d_out) {
                            gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                        }
                        gb
                    }));
                }
                grads
            }),
        )
    }

    /// Softmax over the last axis, computed after subtracting each row's max.
    pub fn softmax_last(&self) -> Result<Tensor<T>> {
        let d = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_row(row);
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |y, g, _| {
                let mut gx = vec![T::zero(); y.len()];
                for ((gx, y), g) in gx.chunks_exact_mut(d).zip(y.chunks_exact(d)).zip(g.chunks_exact(d)) {
                    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for i in 0..d {
                        gx[i] = y[i] * (g[i] - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Layer normalization over the last axis (biased variance).
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = *self.shape().last().unwrap();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::Invalid(format!("layer_norm: eps must be > 0, got {eps}")));
        }
        let eps = T::of(eps);
        let (gd, bd) = (gamma.data(), beta.data());
        let mut out = vec![T::zero(); self.numel()];
        for (o, x) in out.chunks_exact_mut(d).zip(self.data().chunks_exact(d)) {
            let (mean, rstd) = row_moments(x, eps);
            for i in 0..d {
                o[i] = (x[i] - mean) * rstd * gd[i] + bd[i];
            }
        }
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |_, g, p| {
                let (xd, gd) = (p[0].data(), p[1].data());
                let dn = T::of(d as f64);
                let mut gx = vec![T::zero(); xd.len()];
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for ((gx, x), g) in gx.chunks_exact_mut(d).zip(xd.chunks_exact(d)).zip(g.chunks_exact(d)) {
                    let (mean, rstd) = row_moments(x, eps);
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for i in 0..d {
                        xhat[i] = (x[i] - mean) * rstd;
                        dxhat[i] = g[i] * gd[i];
                        sum_d += dxhat[i];
                        sum_dx += dxhat[i] * xhat[i];
                        ggamma[i] += g[i] * xhat[i];
                        gbeta[i] += g[i];
                    }
                    let (mean_d, mean_dx) = (sum_d / dn, sum_dx / dn);
                    for i in 0..d {
                        gx[i] = rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
                    }
                }
                vec![
                    p[0].requires_grad().then_some(gx),
                    p[1].requires_grad().then_some(ggamma),
                    p[2].requires_grad().then_some(gbeta),
                ]
            }),
        )
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let out = self.data().iter().map(|&x| gelu_scalar(x)).collect();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|_, g, p| {
                let gx = p[0].data().iter().zip(g).map(|(&x, &g)| g * gelu_grad(x)).collect();
                vec![Some(gx)]
            }),
        )
    }
}

/// Mean cross-entropy of `logits [B, K]` against integer labels, via log-sum-exp.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            lhs: s.to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let (b, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(TensorError::Invalid(format!("cross_entropy: label {bad} out of range for {k} classes")));
    }
    let mut total = T::zero();
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        total += log_sum_exp(row) - row[y];
    }
    let labels = labels.to_vec();
    Tensor::from_op(
        "cross_entropy",
        vec![1],
        vec![total / T::of(b as f64)],
        vec![logits.clone()],
        Box::new(move |_, g, p| {
            let scale = g[0] / T::of(b as f64);
            let mut gx = p[0].to_vec();
            for (row, &y) in gx.chunks_exact_mut(k).zip(&labels) {
                softmax_row(row);
                row[y] -= T::one();
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(gx)]
        }),
    )
}

pub(crate) fn softmax_row<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(row[0], T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp<T: Element>(row: &[T]) -> T {
    let max = row.iter().copied().fold(row[0], T::max);
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

fn row_moments<T: Element>(x: &[T], eps: T) -> (T, T) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    let u = T::of(GELU_SCALE) * (x + T::of(GELU_CUBIC) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::of(GELU_SCALE);
    let a = T::of(GELU_CUBIC);
    let th = (c * (x + a * x * x * x)).tanh();
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Offset (in batch units) into an operand's batch for each broadcast batch index.
fn batch_map(out_batch: &[usize], operand_batch: &[usize]) -> Vec<usize> {
    if operand_batch.is_empty() {
        return vec![0; numel(out_batch)];
    }
    match BroadcastMap::new(out_batch, operand_batch) {
        BroadcastMap::Same => (0..numel(out_batch)).collect(),
        m => (0..numel(out_batch)).map(|i| m.index(i)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::gradcheck::{check_gradients, max_relative_error};
    use crate::tensor::Fill;

    fn rand_t(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::make(shape, Fill::Uniform { low: -1.0, high: 1.0, rng }).unwrap()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let i2 = Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(i2.matmul(&m).unwrap().data(), m.data());
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let c = a.matmul(&ones).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = rand_t(&[3, 4], &mut rng);
        let b = rand_t(&[4, 2], &mut rng);
        let c = a.matmul(&b).unwrap();
        let want = naive_matmul(a.data(), b.data(), 3, 4, 2);
        for (x, y) in c.data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_broadcasts_batch() {
        let mut rng = Rng::new(12);
        let a = rand_t(&[2, 3, 3, 4], &mut rng);
        let b = rand_t(&[3, 4, 5], &mut rng);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3, 5]);
        for bi in 0..2 {
            for hi in 0..3 {
                let sa = &a.data()[(bi * 3 + hi) * 12..(bi * 3 + hi + 1) * 12];
                let sb = &b.data()[hi * 20..(hi + 1) * 20];
                let want = naive_matmul(sa, sb, 3, 4, 5);
                let got = &c.data()[(bi * 3 + hi) * 15..(bi * 3 + hi + 1) * 15];
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert!(matches!(a.matmul(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::<f64>::new(&[2], vec![0.0, 0.0]).unwrap().softmax_last().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Tensor::<f64>::new(&[2], vec![1f64.ln(), 3f64.ln()])
            .unwrap()
            .softmax_last()
            .unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let s = Tensor::<f32>::new(&[2], vec![1000.0, 1000.0]).unwrap().softmax_last().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::<f64>::full(&[3], 1.0).unwrap();
        let zero = Tensor::<f64>::zeros(&[3]).unwrap();
        let y = Tensor::new(&[3], vec![5.0, 5.0, 5.0])
            .unwrap()
            .layer_norm(&one, &zero, 1e-5)
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let one = Tensor::<f64>::full(&[2], 1.0).unwrap();
        let zero = Tensor::<f64>::zeros(&[2]).unwrap();
        let y = Tensor::new(&[2], vec![1.0, -1.0]).unwrap().layer_norm(&one, &zero, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::make(&[4, 16], Fill::Uniform { low: -3.0, high: 7.0, rng: &mut rng }).unwrap();
        let one = Tensor::full(&[16], 1.0).unwrap();
        let zero = Tensor::zeros(&[16]).unwrap();
        let y = x.layer_norm(&one, &zero, 1e-5).unwrap();
        for row in y.data().chunks(16) {
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_shape_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let g = Tensor::zeros(&[2]).unwrap();
        assert!(x.layer_norm(&g, &g, 1e-5).is_err());
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 0.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[1.0, 0.0]);
        let x = Tensor::<f64>::new(&[2], vec![1.0, 1.0]).unwrap();
        let w = Tensor::new(&[2, 1], vec![2.0, 3.0]).unwrap();
        let b = Tensor::new(&[1], vec![1.0]).unwrap();
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[6.0]);
        assert!(x.linear(&Tensor::zeros(&[3, 1]).unwrap(), None).is_err());
    }

    #[test]
    fn linear_matches_row_loop() {
        let mut rng = Rng::new(9);
        let x = rand_t(&[2, 3, 4], &mut rng);
        let w = rand_t(&[4, 5], &mut rng);
        let b = rand_t(&[5], &mut rng);
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5]);
        for (r, row) in x.data().chunks(4).enumerate() {
            for j in 0..5 {
                let want: f64 = b.data()[j] + (0..4).map(|i| row[i] * w.data()[i * 5 + j]).sum::<f64>();
                assert!((y.data()[r * 5 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_examples() {
        let x = Tensor::<f64>::new(&[3], vec![0.0, 20.0, -20.0]).unwrap();
        let y = x.gelu().unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 20.0).abs() < 1e-12);
        assert!(y.data()[2].abs() < 1e-12);
        // x = 1: 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
        let want = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044715f64).tanh());
        let y1 = Tensor::<f64>::new(&[1], vec![1.0]).unwrap().gelu().unwrap().item();
        assert!((y1 - want).abs() < 1e-15);
        assert!((y1 - 0.841_191_990_607_477_4).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let logits = Tensor::<f64>::zeros(&[3, 4]).unwrap();
        let l = cross_entropy(&logits, &[0, 1, 3]).unwrap().item();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_is_zero() {
        let logits = Tensor::<f64>::new(&[1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        assert!(cross_entropy(&logits, &[0]).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_direct_sum() {
        let mut rng = Rng::new(21);
        let logits = rand_t(&[5, 4], &mut rng).scale(3.0).unwrap();
        let labels = [0, 3, 2, 1, 1];
        let got = cross_entropy(&logits, &labels).unwrap().item();
        let mut want = 0.0;
        for (row, &y) in logits.data().chunks(4).zip(&labels) {
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[y].exp() / denom).ln();
        }
        assert!((got - want / 5.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 4]).unwrap();
        assert!(cross_entropy(&logits, &[4]).is_err());
    }

    #[test]
    fn broadcast_add_grad_reduces() {
        let a = Tensor::<f64>::param(&[2, 3, 2], vec![0.0; 12]).unwrap();
        let b = Tensor::<f64>::param(&[3, 1], vec![0.0; 3]).unwrap();
        a.add(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![4.0; 3]);
        assert_eq!(a.grad().unwrap(), vec![1.0; 12]);
    }

    #[test]
    fn gradcheck_primitives_f64() {
        for seed in 0..5 {
            let mut rng = Rng::new(100 + seed);
            let x = rand_t(&[3, 5], &mut rng);
            let w = rand_t(&[5, 4], &mut rng);
            let b = rand_t(&[4], &mut rng);
            let probe = rand_t(&[3, 4], &mut rng);
            let err = check_gradients(&[x, w, b], 1e-5, |t| {
                t[0].linear(&t[1], Some(&t[2]))?.gelu()?.softmax_last()?.mul(&probe)?.sum_all()
            })
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
            let a = rand_t(&[2, 3, 4], &mut rng);
            let m = rand_t(&[4, 2], &mut rng);
            let err = check_gradients(&[a, m], 1e-5, |t| {
                let y = t[0].matmul(&t[1])?;
                y.mul(&y)?.sum_all()
            })
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn relative_error_helper() {
        assert_eq!(max_relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
    }
}
