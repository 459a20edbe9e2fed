use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::spec::ConvBlockSpec;

/// Named weight arrays for a set of conv blocks. Block `b` layer `i` owns
/// `"b.i.weight"` (`[out, in, k, k]`) and `"b.i.bias"` (`[out]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub seed: u64,
    pub blocks: BTreeMap<String, ConvBlockSpec>,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Graph handles for every parameter tensor of a [`ModelParameters`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    pub ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }
}

pub fn weight_name(block: &str, layer: usize) -> String {
    format!("{block}.{layer}.weight")
}

pub fn bias_name(block: &str, layer: usize) -> String {
    format!("{block}.{layer}.bias")
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the block name so blocks initialize independently.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

impl ModelParameters {
    pub fn new(seed: u64) -> Self {
        ModelParameters {
            seed,
            blocks: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    /// Add a block with He-normal weights and zero biases. With
    /// `zero_final` the last layer starts at exactly zero.
    pub fn add_block(&mut self, name: &str, spec: ConvBlockSpec, zero_final: bool) -> Result<()> {
        spec.validate()?;
        if self.blocks.contains_key(name) {
            return Err(Error::Config(format!("duplicate block {name}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let n = spec.layers.len();
        for (i, l) in spec.layers.iter().enumerate() {
            let fan_in = (l.in_channels * l.kernel_h * l.kernel_w) as f64;
            let shape = [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w];
            let count = shape.iter().product();
            let w = if zero_final && i + 1 == n {
                vec![0.0; count]
            } else {
                let gain = if i + 1 == n { 1.0 } else { 2.0 };
                let dist = Normal::new(0.0, (gain / fan_in).sqrt()).expect("finite std");
                (0..count).map(|_| dist.sample(&mut rng)).collect()
            };
            self.tensors.insert(weight_name(name, i), Tensor::from_vec(&shape, w)?);
            self.tensors.insert(bias_name(name, i), Tensor::zeros(&[l.out_channels]));
        }
        self.blocks.insert(name.to_string(), spec);
        Ok(())
    }

    pub fn block(&self, name: &str) -> Result<&ConvBlockSpec> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Config(format!("model has no block {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Shapes agree with the block specs and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for (name, spec) in &self.blocks {
            spec.validate()?;
            for (i, l) in spec.layers.iter().enumerate() {
                let w = self.get(&weight_name(name, i))?;
                let b = self.get(&bias_name(name, i))?;
                let ws = [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w];
                if w.shape() != ws {
                    return Err(Error::shape(weight_name(name, i), format!("{ws:?}"), format!("{:?}", w.shape())));
                }
                if b.shape() != [l.out_channels] {
                    return Err(Error::shape(bias_name(name, i), l.out_channels, format!("{:?}", b.shape())));
                }
                if !w.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidArgument(format!("non-finite parameters in {name}.{i}")));
                }
                expected += 2;
            }
        }
        if expected != self.tensors.len() {
            return Err(Error::Config(format!(
                "{} parameter arrays present but the block specs declare {expected}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    /// Register every tensor in `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let ids = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let id = if trainable { g.variable(t.clone()) } else { g.constant(t.clone()) };
                (k.clone(), id)
            })
            .collect();
        BoundParams { ids }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_blocks::ArchConfig;

    #[test]
    fn init_is_seeded_and_per_block() {
        let a = ArchConfig::default();
        let mut p1 = ModelParameters::new(3);
        p1.add_block("decoder", a.decoder(4), false).unwrap();
        let mut p2 = ModelParameters::new(3);
        p2.add_block("extra", a.decoder(2), false).unwrap();
        p2.add_block("decoder", a.decoder(4), false).unwrap();
        assert_eq!(p1.get("decoder.0.weight").unwrap(), p2.get("decoder.0.weight").unwrap());
        let mut p3 = ModelParameters::new(4);
        p3.add_block("decoder", a.decoder(4), false).unwrap();
        assert_ne!(p1.get("decoder.0.weight").unwrap(), p3.get("decoder.0.weight").unwrap());
        p1.validate().unwrap();
    }

    #[test]
    fn zero_final_layer() {
        let mut p = ModelParameters::new(0);
        p.add_block("m", ArchConfig::default().motion(3), true).unwrap();
        assert!(p.get("m.5.weight").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(p.get("m.4.weight").unwrap().norm() > 0.0);
    }

    #[test]
    fn validate_catches_shape_edits() {
        let mut p = ModelParameters::new(0);
        p.add_block("d", ArchConfig::default().decoder(2), false).unwrap();
        p.tensors.insert("d.0.bias".into(), Tensor::zeros(&[3]));
        assert!(p.validate().is_err());
    }
}
