use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{normal_matrix, read_f32, write_f32, Fingerprint, INIT_STD};
use crate::model::ModelConfig;
use crate::numerics::{Matrix, ParamKey, Scalar};

const ADAPTER_BASE: u32 = 1 << 20;
const ADAPTER_STRIDE: u32 = 8;
pub const ADAPTER_TENSORS: usize = 6;

pub fn adapter_key(layer: usize, index: usize) -> ParamKey {
    ParamKey(ADAPTER_BASE + layer as u32 * ADAPTER_STRIDE + index as u32)
}

/// Shape of a bottleneck adapter stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub reduction_factor: usize,
}

impl AdapterConfig {
    pub fn new(reduction_factor: usize) -> Result<Self> {
        if reduction_factor == 0 {
            return Err(Error::Config("adapter reduction factor must be >= 1".into()));
        }
        Ok(Self { reduction_factor })
    }

    /// `max(1, round(d / c))`
    pub fn bottleneck(&self, d_model: usize) -> usize {
        ((d_model as f64 / self.reduction_factor as f64).round() as usize).max(1)
    }

    /// Per layer: layer norm (2d), down projection (d·b + b), up projection (b·d + d).
    pub fn param_count(&self, config: &ModelConfig) -> usize {
        let d = config.d_model;
        let b = self.bottleneck(d);
        config.n_layers * (2 * d + d * b + b + b * d + d)
    }
}

/// One adapter: `x + up(gelu(down(norm(x))))`, placed after a block's
/// feed-forward sub-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterLayer<S> {
    pub norm_gain: Matrix<S>,
    pub norm_bias: Matrix<S>,
    pub down_weight: Matrix<S>,
    pub down_bias: Matrix<S>,
    pub up_weight: Matrix<S>,
    pub up_bias: Matrix<S>,
}

impl<S: Scalar> AdapterLayer<S> {
    pub fn tensors(&self) -> [&Matrix<S>; ADAPTER_TENSORS] {
        [
            &self.norm_gain,
            &self.norm_bias,
            &self.down_weight,
            &self.down_bias,
            &self.up_weight,
            &self.up_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<S>; ADAPTER_TENSORS] {
        [
            &mut self.norm_gain,
            &mut self.norm_bias,
            &mut self.down_weight,
            &mut self.down_bias,
            &mut self.up_weight,
            &mut self.up_bias,
        ]
    }
}

/// Adapters for every block of one base model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet<S> {
    pub config: AdapterConfig,
    pub layers: Vec<AdapterLayer<S>>,
}

impl<S: Scalar> AdapterSet<S> {
    /// Down projections start at `N(0, 0.02²)`, up projections at zero, so a
    /// fresh adapter is the identity.
    pub fn init(config: AdapterConfig, model: &ModelConfig, seed: u64) -> Self {
        let d = model.d_model;
        let b = config.bottleneck(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..model.n_layers)
            .map(|_| AdapterLayer {
                norm_gain: Matrix::filled(1, d, S::one()),
                norm_bias: Matrix::zeros(1, d),
                down_weight: normal_matrix(d, b, INIT_STD, &mut rng),
                down_bias: Matrix::zeros(1, b),
                up_weight: Matrix::zeros(b, d),
                up_bias: Matrix::zeros(1, d),
            })
            .collect();
        Self { config, layers }
    }

    pub fn keys(&self) -> Vec<ParamKey> {
        (0..self.layers.len())
            .flat_map(|l| (0..ADAPTER_TENSORS).map(move |i| adapter_key(l, i)))
            .collect()
    }

    pub fn tensor_mut(&mut self, key: ParamKey) -> Option<&mut Matrix<S>> {
        let offset = key.0.checked_sub(ADAPTER_BASE)?;
        let layer = (offset / ADAPTER_STRIDE) as usize;
        let index = (offset % ADAPTER_STRIDE) as usize;
        if index >= ADAPTER_TENSORS {
            return None;
        }
        self.layers
            .get_mut(layer)
            .map(|l| l.tensors_mut().into_iter().nth(index).expect("index < 6"))
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .map(|t| t.len())
            .sum()
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.count() * 4);
        for l in &self.layers {
            for t in l.tensors() {
                write_f32(&mut out, t);
            }
        }
        out
    }

    pub fn from_blob(config: AdapterConfig, model: &ModelConfig, blob: &[u8]) -> Result<Self> {
        let mut set = Self::init(config, model, 0);
        if blob.len() != set.count() * 4 {
            return Err(Error::Format {
                what: "adapter blob",
                message: format!("{} bytes, expected {}", blob.len(), set.count() * 4),
            });
        }
        let mut offset = 0;
        for l in &mut set.layers {
            for t in l.tensors_mut() {
                offset += read_f32(&blob[offset..], t);
            }
        }
        Ok(set)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.to_blob())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottleneck_dimension() {
        let c = AdapterConfig::new(16).unwrap();
        assert_eq!(c.bottleneck(64), 4);
        assert_eq!(AdapterConfig::new(64).unwrap().bottleneck(64), 1);
        assert_eq!(AdapterConfig::new(512).unwrap().bottleneck(64), 1);
        assert!(AdapterConfig::new(0).is_err());
    }

    #[test]
    fn count_matches_allocated_shapes() {
        let m = ModelConfig::toy(100);
        for c in [1, 4, 16, 64, 512] {
            let cfg = AdapterConfig::new(c).unwrap();
            let set = AdapterSet::<f32>::init(cfg, &m, 1);
            assert_eq!(set.count(), cfg.param_count(&m));
        }
    }

    #[test]
    fn blob_round_trip() {
        let m = ModelConfig::toy(50);
        let cfg = AdapterConfig::new(8).unwrap();
        let set = AdapterSet::<f32>::init(cfg, &m, 9);
        assert_eq!(AdapterSet::from_blob(cfg, &m, &set.to_blob()).unwrap(), set);
    }

    #[test]
    fn key_lookup() {
        let m = ModelConfig::toy(50);
        let mut set = AdapterSet::<f32>::init(AdapterConfig::new(8).unwrap(), &m, 9);
        for key in set.keys() {
            assert!(set.tensor_mut(key).is_some());
        }
        assert!(set.tensor_mut(ParamKey(0)).is_none());
    }
}
