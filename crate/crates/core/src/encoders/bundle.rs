use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EncoderConfig;
use crate::error::{HptError, Result};
use crate::numerics::{AffineMap, Parameter, ParameterSet, Tensor2};

/// Last-token states of one description at the input of each of the `N`
/// layers: the embedding output feeds layer 1, layer `l`'s output feeds
/// layer `l + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStates {
    pub states: Vec<Vec<f64>>,
}

impl LayerStates {
    pub fn num_layers(&self) -> usize {
        self.states.len()
    }
}

/// Every learnable tensor of the prompted encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Per-layer `N_g × d` category-agnostic prompts.
    pub global_prompts: Vec<Parameter>,
    /// `f`: maps frozen description states to high-level prompts.
    pub generator: AffineMap,
    /// `φ`: sits on top of the prompted text encoder.
    pub adapter: AffineMap,
    /// `N × 2` matrix of `(λ_e2e, λ_e2a)` per layer.
    pub relation_scalars: Parameter,
    /// Per-layer `N_v × d` prompts of the visual encoder.
    pub visual_prompts: Vec<Parameter>,
}

pub const PROMPT_INIT_STD: f64 = 0.02;

impl PromptBundle {
    pub fn new(config: &EncoderConfig, n_global: usize, n_visual: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let n = config.num_layers;
        let global_prompts = (0..n)
            .map(|l| {
                Parameter::new(
                    format!("global_prompts.{l}"),
                    Tensor2::random_normal(n_global, d, PROMPT_INIT_STD, &mut rng),
                )
            })
            .collect();
        let visual_prompts = (0..n)
            .map(|l| {
                Parameter::new(
                    format!("visual_prompts.{l}"),
                    Tensor2::random_normal(n_visual, d, PROMPT_INIT_STD, &mut rng),
                )
            })
            .collect();
        Self {
            global_prompts,
            generator: AffineMap::identity("generator", d),
            adapter: AffineMap::identity("adapter", d),
            relation_scalars: Parameter::new("relation_scalars", Tensor2::zeros(n, 2)),
            visual_prompts,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.global_prompts.len()
    }

    pub fn n_global(&self) -> usize {
        self.global_prompts.first().map_or(0, |p| p.value.rows())
    }

    pub fn n_visual(&self) -> usize {
        self.visual_prompts.first().map_or(0, |p| p.value.rows())
    }

    pub fn global_values(&self) -> Vec<Tensor2> {
        self.global_prompts
            .iter()
            .map(|p| p.value.clone())
            .collect()
    }

    pub fn visual_values(&self) -> Vec<Tensor2> {
        self.visual_prompts
            .iter()
            .map(|p| p.value.clone())
            .collect()
    }

    pub fn lambda_e2e(&self, layer: usize) -> f64 {
        self.relation_scalars.value.get(layer, 0)
    }

    pub fn lambda_e2a(&self, layer: usize) -> f64 {
        self.relation_scalars.value.get(layer, 1)
    }

    /// Order-sensitive digest of every parameter value, for change detection.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for i in 0..self.param_count() {
            for v in self.param(i).value.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl ParameterSet for PromptBundle {
    fn param_count(&self) -> usize {
        2 * self.global_prompts.len() + 5
    }

    fn param(&self, index: usize) -> &Parameter {
        let n = self.global_prompts.len();
        match index {
            i if i < n => &self.global_prompts[i],
            i if i == n => &self.generator.weight,
            i if i == n + 1 => &self.generator.bias,
            i if i == n + 2 => &self.adapter.weight,
            i if i == n + 3 => &self.adapter.bias,
            i if i == n + 4 => &self.relation_scalars,
            i => &self.visual_prompts[i - n - 5],
        }
    }

    fn param_mut(&mut self, index: usize) -> &mut Parameter {
        let n = self.global_prompts.len();
        match index {
            i if i < n => &mut self.global_prompts[i],
            i if i == n => &mut self.generator.weight,
            i if i == n + 1 => &mut self.generator.bias,
            i if i == n + 2 => &mut self.adapter.weight,
            i if i == n + 3 => &mut self.adapter.bias,
            i if i == n + 4 => &mut self.relation_scalars,
            i => &mut self.visual_prompts[i - n - 5],
        }
    }
}

/// `p_h^l = [f(h_1^l); …; f(h_{N_h}^l)]` for every layer `l`.
pub fn generate_high_prompts(
    states: &[LayerStates],
    generator: &AffineMap,
) -> Result<Vec<Tensor2>> {
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    let n_layers = first.num_layers();
    if let Some(bad) = states.iter().position(|s| s.num_layers() != n_layers) {
        return Err(HptError::Shape(format!(
            "description {bad} has {} layer states, expected {n_layers}",
            states[bad].num_layers()
        )));
    }
    let d = generator.dim();
    (0..n_layers)
        .map(|l| {
            let rows: Vec<Vec<f64>> = states.iter().map(|s| s.states[l].clone()).collect();
            if rows.iter().any(|r| r.len() != d) {
                return Err(HptError::Shape(format!(
                    "layer {l} state width differs from generator dim {d}"
                )));
            }
            Ok(generator.forward(&Tensor2::from_rows(&rows)?))
        })
        .collect()
}

/// Stacks the layer-`l` states of every description as an `N_h × d` matrix.
pub(crate) fn stacked_states(states: &[LayerStates], layer: usize, dim: usize) -> Tensor2 {
    if states.is_empty() {
        return Tensor2::zeros(0, dim);
    }
    let rows: Vec<Vec<f64>> = states.iter().map(|s| s.states[layer].clone()).collect();
    Tensor2::from_rows(&rows).expect("uniform state width")
}

/// `φ(z)`.
pub fn apply_adapter(z: &[f64], adapter: &AffineMap) -> Result<Vec<f64>> {
    if z.len() != adapter.dim() {
        return Err(HptError::Shape(format!(
            "adapter expects {} values, got {}",
            adapter.dim(),
            z.len()
        )));
    }
    Ok(adapter.apply(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states(n_layers: usize, d: usize, seed: u64) -> LayerStates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayerStates {
            states: (0..n_layers)
                .map(|_| Tensor2::random_normal(1, d, 1.0, &mut rng).into_data())
                .collect(),
        }
    }

    #[test]
    fn identity_generator_copies_states() {
        let s = states(3, 4, 1);
        let f = AffineMap::identity("f", 4);
        let p = generate_high_prompts(std::slice::from_ref(&s), &f).unwrap();
        assert_eq!(p.len(), 3);
        for l in 0..3 {
            assert_eq!(p[l].row(0), s.states[l].as_slice());
        }
    }

    #[test]
    fn permuting_descriptions_permutes_rows() {
        let a = states(2, 4, 1);
        let b = states(2, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = AffineMap::identity("f", 4);
        f.weight.value = Tensor2::random_normal(4, 4, 1.0, &mut rng);
        f.bias.value = Tensor2::random_normal(1, 4, 1.0, &mut rng);
        let ab = generate_high_prompts(&[a.clone(), b.clone()], &f).unwrap();
        let ba = generate_high_prompts(&[b, a], &f).unwrap();
        for l in 0..2 {
            assert_eq!(ab[l].row(0), ba[l].row(1));
            assert_eq!(ab[l].row(1), ba[l].row(0));
        }
    }

    #[test]
    fn random_generator_matches_per_vector_reference() {
        let ss: Vec<LayerStates> = (0..3).map(|i| states(3, 5, 10 + i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = AffineMap::identity("f", 5);
        f.weight.value = Tensor2::random_normal(5, 5, 1.0, &mut rng);
        f.bias.value = Tensor2::random_normal(1, 5, 1.0, &mut rng);
        let p = generate_high_prompts(&ss, &f).unwrap();
        for l in 0..3 {
            for (i, s) in ss.iter().enumerate() {
                for c in 0..5 {
                    let mut expect = f.bias.value.get(0, c);
                    for k in 0..5 {
                        expect += s.states[l][k] * f.weight.value.get(k, c);
                    }
                    assert!((p[l].get(i, c) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mismatched_layer_counts_error() {
        let f = AffineMap::identity("f", 4);
        assert!(generate_high_prompts(&[states(3, 4, 1), states(2, 4, 2)], &f).is_err());
    }

    #[test]
    fn adapter_contracts() {
        let phi = AffineMap::identity("phi", 3);
        assert_eq!(
            apply_adapter(&[1.0, -2.0, 0.5], &phi).unwrap(),
            vec![1.0, -2.0, 0.5]
        );
        assert_eq!(apply_adapter(&[0.0; 3], &phi).unwrap(), vec![0.0; 3]);
        assert!(apply_adapter(&[1.0; 2], &phi).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut phi = AffineMap::identity("phi", 3);
        phi.weight.value = Tensor2::random_normal(3, 3, 1.0, &mut rng);
        phi.bias.value = Tensor2::random_normal(1, 3, 1.0, &mut rng);
        let z = [0.7, -0.1, 2.0];
        let out = apply_adapter(&z, &phi).unwrap();
        for c in 0..3 {
            let expect: f64 = phi.bias.value.get(0, c)
                + (0..3)
                    .map(|k| z[k] * phi.weight.value.get(k, c))
                    .sum::<f64>();
            assert!((out[c] - expect).abs() < 1e-12);
        }
    }
}
