//! Pure data movement: reshape, permute, roll, slice, concat, and axis mean.
//! Each backward applies the inverse movement.

use super::{check_shape, numel, Element, Result, Tensor, TensorError};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output position of `permute(axes)`, the source index.
fn permute_gather(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(shape);
    let rank = shape.len();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn axis_check(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange { op, axis, rank });
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        check_shape(shape)?;
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|_, g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(TensorError::Invalid(format!("permute: {axes:?} is not a permutation of rank {rank}")));
        }
        for &a in axes {
            axis_check("permute", a, rank)?;
            if std::mem::replace(&mut seen[a], true) {
                return Err(TensorError::Invalid(format!("permute: repeated axis in {axes:?}")));
            }
        }
        let map = permute_gather(self.shape(), axes);
        let src = self.data();
        let data = map.iter().map(|&i| src[i]).collect();
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Tensor::from_op(
            "permute",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |_, g, _| {
                let mut gx = vec![T::zero(); g.len()];
                for (o, &i) in map.iter().enumerate() {
                    gx[i] = g[o];
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Cyclic roll along `axis`: element at position `i` moves to `i + offset (mod n)`.
    pub fn roll(&self, axis: usize, offset: isize) -> Result<Tensor<T>> {
        axis_check("roll", axis, self.rank())?;
        let shape = self.shape().to_vec();
        let n = shape[axis];
        let shift = offset.rem_euclid(n as isize) as usize;
        if shift == 0 {
            return self.reshape(&shape);
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let movement = move |src: &[T], dst: &mut [T], shift: usize| {
            for o in 0..outer {
                let base = o * n * inner;
                for i in 0..n {
                    let j = (i + shift) % n;
                    dst[base + j * inner..base + (j + 1) * inner]
                        .copy_from_slice(&src[base + i * inner..base + (i + 1) * inner]);
                }
            }
        };
        let mut out = vec![T::zero(); self.numel()];
        movement(self.data(), &mut out, shift);
        Tensor::from_op(
            "roll",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |_, g, _| {
                let mut gx = vec![T::zero(); g.len()];
                movement(g, &mut gx, n - shift);
                vec![Some(gx)]
            }),
        )
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        axis_check("slice", axis, self.rank())?;
        let shape = self.shape().to_vec();
        if start >= end || end > shape[axis] {
            return Err(TensorError::Invalid(format!(
                "slice: range {start}..{end} invalid for axis of length {}",
                shape[axis]
            )));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let (n, len) = (shape[axis], end - start);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let total = self.numel();
        Tensor::from_op(
            "slice",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |_, g, _| {
                let mut gx = vec![T::zero(); total];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Join tensors that agree on every axis except `axis`.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat: no inputs".into()))?;
        axis_check("concat", axis, first.rank())?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_len;
        Tensor::from_op(
            "concat",
            shape,
            out,
            parts.to_vec(),
            Box::new(move |_, g, _| {
                let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gp, &len) in grads.iter_mut().zip(&lens) {
                        gp.extend_from_slice(&g[pos..pos + len * inner]);
                        pos += len * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        )
    }

    /// Mean over `axis`, which is removed (a rank-1 input gives shape `[1]`).
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        axis_check("mean", axis, self.rank())?;
        let shape = self.shape().to_vec();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let inv = T::of(1.0 / n as f64);
        let mut out = vec![T::zero(); outer * inner];
        let x = self.data();
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for i in 0..n {
                let src = &x[(o * n + i) * inner..(o * n + i + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Tensor::from_op(
            "mean",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |_, g, _| {
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for i in 0..n {
                        gx[(o * n + i) * inner..(o * n + i + 1) * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &s)| *d = s * inv);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
