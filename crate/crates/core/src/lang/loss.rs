use crate::tensor::{Element, Tensor, TensorError};
use crate::Result;

/// Lower bound applied to each vector norm.
pub const COSINE_EPS: f64 = 1e-8;

/// `v [B, 8C] @ P [8C, D]`.
pub fn project_visual<T: Element>(v: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>> {
    if v.rank() != 2 || p.rank() != 2 || v.shape()[1] != p.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "project_visual",
            lhs: v.shape().to_vec(),
            rhs: p.shape().to_vec(),
        }
        .into());
    }
    Ok(v.linear(p, None)?)
}

fn norm<T: Element>(x: &[T]) -> T {
    x.iter().map(|&a| a * a).sum::<T>().sqrt()
}

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Mean over rows of `-(v . l) / (|v| |l|)`, each norm floored at [`COSINE_EPS`].
pub fn cosine_contrastive_loss<T: Element>(v: &Tensor<T>, l: &Tensor<T>) -> Result<Tensor<T>> {
    if v.rank() != 2 || v.shape() != l.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_contrastive_loss",
            lhs: v.shape().to_vec(),
            rhs: l.shape().to_vec(),
        }
        .into());
    }
    let (b, d) = (v.shape()[0], v.shape()[1]);
    let eps = T::of(COSINE_EPS);
    let mut total = T::zero();
    for (vr, lr) in v.data().chunks_exact(d).zip(l.data().chunks_exact(d)) {
        total += dot(vr, lr) / (norm(vr).max(eps) * norm(lr).max(eps));
    }
    Ok(Tensor::from_op(
        "cosine_contrastive_loss",
        vec![1],
        vec![-total / T::of(b as f64)],
        vec![v.clone(), l.clone()],
        Box::new(move |_, g, p| {
            let scale = -g[0] / T::of(b as f64);
            let mut gv = vec![T::zero(); b * d];
            let mut gl = vec![T::zero(); b * d];
            let rows = p[0].data().chunks_exact(d).zip(p[1].data().chunks_exact(d));
            for (i, (vr, lr)) in rows.enumerate() {
                let (nv, nl) = (norm(vr), norm(lr));
                let (dv, dl) = (nv.max(eps), nl.max(eps));
                let c = dot(vr, lr) / (dv * dl);
                // d cos / d v = l / (|v||l|) - cos v / |v|^2 while |v| > eps
                let kv = if nv > eps { c / (dv * dv) } else { T::zero() };
                let kl = if nl > eps { c / (dl * dl) } else { T::zero() };
                for j in 0..d {
                    gv[i * d + j] = scale * (lr[j] / (dv * dl) - kv * vr[j]);
                    gl[i * d + j] = scale * (vr[j] / (dv * dl) - kl * lr[j]);
                }
            }
            vec![Some(gv), Some(gl)]
        }),
    )?)
}

/// Training objective: cross-entropy plus, when enabled, the unweighted alignment term.
pub fn total_loss<T: Element>(ce: &Tensor<T>, contrastive: &Tensor<T>, enabled: bool) -> Result<Tensor<T>> {
    if enabled {
        Ok(ce.add(contrastive)?)
    } else {
        Ok(ce.clone())
    }
}

/// Mean cosine of projected features to their own class embedding and to every other class.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlignmentStats {
    pub matched: f64,
    pub mismatched: f64,
}

/// Computed at f64 from plain buffers; `v` is `[B, D]` row-major, `classes` is `[K, D]`.
pub fn alignment_stats(v: &[f64], classes: &[f64], d: usize, labels: &[usize]) -> AlignmentStats {
    let (mut matched, mut mismatched, mut n_mis) = (0.0, 0.0, 0usize);
    for (row, &y) in v.chunks_exact(d).zip(labels) {
        for (c, lc) in classes.chunks_exact(d).enumerate() {
            let cos = dot(row, lc) / (norm(row).max(COSINE_EPS) * norm(lc).max(COSINE_EPS));
            if c == y {
                matched += cos;
            } else {
                mismatched += cos;
                n_mis += 1;
            }
        }
    }
    AlignmentStats {
        matched: matched / labels.len().max(1) as f64,
        mismatched: if n_mis == 0 { 0.0 } else { mismatched / n_mis as f64 },
    }
}
