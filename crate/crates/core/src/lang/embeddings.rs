use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::ClassSet;
use crate::rng::{Rng, Stream};
use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    File,
    Pseudo,
}

/// One fixed vector per class id. Never modified after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbeddings {
    dim: usize,
    vectors: Vec<Vec<f64>>,
    source: EmbeddingSource,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingFile {
    dim: usize,
    classes: BTreeMap<String, Vec<f64>>,
}

impl ClassEmbeddings {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn vector(&self, class_id: usize) -> &[f64] {
        &self.vectors[class_id]
    }

    /// All vectors as `[K, D]`.
    pub fn matrix<T: Element>(&self) -> Result<Tensor<T>> {
        let data = self.vectors.iter().flatten().map(|&v| T::of(v)).collect();
        Ok(Tensor::new(&[self.vectors.len(), self.dim], data)?)
    }

    /// The vector of each label as `[B, D]`.
    pub fn gather<T: Element>(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(labels.len() * self.dim);
        for &y in labels {
            let v = self
                .vectors
                .get(y)
                .ok_or_else(|| Error::Data(format!("no embedding for class id {y}")))?;
            data.extend(v.iter().map(|&x| T::of(x)));
        }
        Ok(Tensor::new(&[labels.len(), self.dim], data)?)
    }
}

/// Read `{"dim": D, "classes": {name: [..]}}`, keeping the classes of `set` in id order.
pub fn load_embeddings(path: &Path, set: &ClassSet) -> Result<ClassEmbeddings> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: EmbeddingFile = serde_json::from_slice(&bytes)?;
    if file.dim == 0 {
        return Err(Error::Data("embedding dim must be >= 1".into()));
    }
    let mut vectors = Vec::with_capacity(set.len());
    for name in set.names() {
        let v = file
            .classes
            .get(name)
            .ok_or_else(|| Error::Data(format!("embedding file has no vector for class {name}")))?;
        if v.len() != file.dim {
            return Err(Error::Data(format!(
                "embedding for {name} has length {}, expected {}",
                v.len(),
                file.dim
            )));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Data(format!("embedding for {name} has non-finite values")));
        }
        vectors.push(v.clone());
    }
    Ok(ClassEmbeddings {
        dim: file.dim,
        vectors,
        source: EmbeddingSource::File,
    })
}

/// Deterministic orthonormal stand-ins: Gaussian draws, then Gram-Schmidt.
pub fn pseudo_embeddings(num_classes: usize, dim: usize, seed: u64) -> Result<ClassEmbeddings> {
    if num_classes == 0 || dim < num_classes {
        return Err(Error::Config(format!(
            "pseudo embeddings need dim >= class count, got dim {dim} for {num_classes} classes"
        )));
    }
    let mut rng = Rng::stream(seed, Stream::Embedding);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while vectors.len() < num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        // two passes keep the residual dot products at rounding level
        for _ in 0..2 {
            for u in &vectors {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        vectors.push(v);
    }
    Ok(ClassEmbeddings {
        dim,
        vectors,
        source: EmbeddingSource::Pseudo,
    })
}
