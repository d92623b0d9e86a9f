//! Named parameter storage.

use indexmap::IndexMap;

use super::config::ModelConfig;
use crate::rng::{Rng, Stream};
use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

/// Weight init std for truncated-normal matrices.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    }
}

fn layer_norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    out.push(spec(format!("{prefix}.weight"), &[dim], Init::Ones));
    out.push(spec(format!("{prefix}.bias"), &[dim], Init::Zeros));
}

/// Every backbone parameter in canonical order. A pure function of the config.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let stages = cfg.stages()?;
    let c = cfg.embed_dim;
    let mut out = vec![
        spec("patch_embed.weight".into(), &[cfg.patch_dim(), c], Init::TruncNormal),
        spec("patch_embed.bias".into(), &[c], Init::Zeros),
    ];
    for st in &stages {
        let d = st.dim;
        let hidden = d * cfg.mlp_ratio;
        for layer in 0..2 * st.pairs {
            let p = format!("stages.{}.blocks.{layer}", st.index);
            layer_norm_specs(&mut out, &format!("{p}.norm1"), d);
            for w in ["q", "k", "v"] {
                out.push(spec(format!("{p}.attn.{w}.weight"), &[d, d], Init::TruncNormal));
            }
            out.push(spec(format!("{p}.attn.proj.weight"), &[d, d], Init::TruncNormal));
            out.push(spec(format!("{p}.attn.proj.bias"), &[d], Init::Zeros));
            layer_norm_specs(&mut out, &format!("{p}.norm2"), d);
            out.push(spec(format!("{p}.mlp.fc1.weight"), &[d, hidden], Init::TruncNormal));
            out.push(spec(format!("{p}.mlp.fc1.bias"), &[hidden], Init::Zeros));
            out.push(spec(format!("{p}.mlp.fc2.weight"), &[hidden, d], Init::TruncNormal));
            out.push(spec(format!("{p}.mlp.fc2.bias"), &[d], Init::Zeros));
        }
        if st.merge {
            let p = format!("stages.{}.merge", st.index);
            layer_norm_specs(&mut out, &format!("{p}.norm"), 4 * d);
            out.push(spec(format!("{p}.reduction.weight"), &[4 * d, 2 * d], Init::TruncNormal));
        }
    }
    let f = cfg.feature_dim();
    layer_norm_specs(&mut out, "norm", f);
    out.push(spec("head.weight".into(), &[f, cfg.num_classes], Init::TruncNormal));
    out.push(spec("head.bias".into(), &[cfg.num_classes], Init::Zeros));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered name -> buffer map. Names are unique by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    /// Draw initial values for `specs` from the given rng, in order.
    pub fn from_specs(specs: &[ParamSpec], rng: &mut Rng) -> Self {
        let mut store = Self::default();
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::TruncNormal => (0..n).map(|_| T::of(rng.truncated_normal(INIT_STD))).collect(),
            };
            store.insert(&s.name, s.shape.clone(), data).expect("spec names are unique");
        }
        store
    }

    /// Backbone parameters for `cfg`, initialized from the init stream of `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let specs = param_specs(cfg)?;
        Ok(Self::from_specs(&specs, &mut Rng::stream(seed, Stream::Init)))
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("parameter {name}: {} values for shape {shape:?}", data.len())));
        }
        if self.entries.contains_key(name) {
            return Err(Error::Format(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name.to_string(), Param { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<T>> {
        self.entries.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    /// Check names and shapes against the specs of `cfg`.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            match self.get(&s.name) {
                None => return Err(Error::Format(format!("missing parameter {}", s.name))),
                Some(p) if p.shape != s.shape => {
                    return Err(Error::Format(format!(
                        "parameter {} has shape {:?}, config expects {:?}",
                        s.name, p.shape, s.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.names().find(|n| !specs.iter().any(|s| s.name == *n)) {
            return Err(Error::Format(format!("unknown parameter {extra} for this config")));
        }
        Ok(())
    }

    /// Leaf tensors for one forward pass.
    pub fn bind(&self, requires_grad: bool) -> Result<Bound<T>> {
        let mut map = IndexMap::with_capacity(self.len());
        for (name, p) in &self.entries {
            let t = if requires_grad {
                Tensor::param(&p.shape, p.data.clone())?
            } else {
                Tensor::new(&p.shape, p.data.clone())?
            };
            map.insert(name.clone(), t);
        }
        Ok(Bound { map })
    }

    /// Element type conversion, e.g. f32 training weights to f64 for checking.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            shape: p.shape.clone(),
                            data: p.data.iter().map(|&v| U::of(v.to_f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Parameters bound as tensors for a single graph.
pub struct Bound<T: Element> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Element> Bound<T> {
    /// Bind caller-owned tensors, e.g. for gradient checks.
    pub fn from_tensors(items: impl IntoIterator<Item = (String, Tensor<T>)>) -> Self {
        Self {
            map: items.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Format(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradients after backward, in store order (zeros where none flowed).
    pub fn grads(&self) -> Vec<Vec<T>> {
        self.map
            .values()
            .map(|t| t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form parameter count, written independently of `param_specs`.
    fn closed_form_count(cfg: &ModelConfig) -> usize {
        let r = cfg.mlp_ratio;
        let mut total = cfg.patch_dim() * cfg.embed_dim + cfg.embed_dim;
        let mut c = cfg.embed_dim;
        for (s, &pairs) in cfg.depths.iter().enumerate() {
            // 2 LNs (4C) + Q,K,V,proj (4C^2 + C) + MLP (2rC^2 + rC + C)
            let per_layer = 4 * c + 4 * c * c + c + 2 * r * c * c + r * c + c;
            total += 2 * pairs * per_layer;
            if s < 3 {
                total += 8 * c + 8 * c * c;
                c *= 2;
            }
        }
        total + 2 * c + c * cfg.num_classes + cfg.num_classes
    }

    #[test]
    fn count_matches_closed_form() {
        for cfg in [ModelConfig::tiny(4), ModelConfig::paper(4), ModelConfig::tiny(3)] {
            let store = ParamStore::<f32>::init(&cfg, 0).unwrap();
            assert_eq!(store.count(), closed_form_count(&cfg));
        }
    }

    #[test]
    fn names_unique_and_init_rules() {
        let cfg = ModelConfig::tiny(4);
        let specs = param_specs(&cfg).unwrap();
        let store = ParamStore::<f64>::init(&cfg, 1).unwrap();
        assert_eq!(store.len(), specs.len());
        assert!(store.get("norm.weight").unwrap().data.iter().all(|&v| v == 1.0));
        assert!(store.get("head.bias").unwrap().data.iter().all(|&v| v == 0.0));
        let w = &store.get("patch_embed.weight").unwrap().data;
        assert!(w.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        assert!(w.iter().any(|&v| v != 0.0));
        store.check_against(&specs).unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny(4);
        let a = ParamStore::<f32>::init(&cfg, 9).unwrap();
        let b = ParamStore::<f32>::init(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ParamStore::<f32>::init(&cfg, 10).unwrap());
    }

    #[test]
    fn check_against_other_config_fails() {
        let a = ParamStore::<f32>::init(&ModelConfig::tiny(4), 0).unwrap();
        let mut other = ModelConfig::tiny(4);
        other.embed_dim = 32;
        assert!(a.check_against(&param_specs(&other).unwrap()).is_err());
    }
}
