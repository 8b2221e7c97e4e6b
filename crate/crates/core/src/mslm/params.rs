use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::backend::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Names and shapes of every model parameter, in serialization order.
///
/// ```text
/// embed                [V, d]     input embeddings, tied to the output layer
/// out_bias             [V]
/// enc{l}.ln_q.{g,b}    [d]        normalizes the running stream (queries)
/// enc{l}.ln_kv.{g,b}   [d]        normalizes the embedding input (keys, values)
/// enc{l}.w{q,k,v,o}    [d, d]     with biases enc{l}.b{q,k,v,o} [d]
/// enc{l}.ln_ff.{g,b}   [d]
/// enc{l}.w1 [d, ff]  enc{l}.b1 [ff]  enc{l}.w2 [ff, d]  enc{l}.b2 [d]
/// enc.ln_out.{g,b}     [d]
/// dec.w_init [d, 2d]   dec.b_init [2d]   encoding -> (cell, hidden)
/// dec.w_ih [d, 4d]     dec.w_hh [d, 4d]  dec.b [4d]   gates i, f, g, o
/// ```
pub fn param_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, ff, v) = (c.hidden, c.feedforward, c.vocab_size);
    let mut s: Vec<(String, Vec<usize>)> = vec![("embed".into(), vec![v, d]), ("out_bias".into(), vec![v])];
    for l in 0..c.layers {
        let p = |n: &str| format!("enc{l}.{n}");
        for ln in ["ln_q", "ln_kv"] {
            s.push((p(&format!("{ln}.g")), vec![d]));
            s.push((p(&format!("{ln}.b")), vec![d]));
        }
        for w in ["q", "k", "v", "o"] {
            s.push((p(&format!("w{w}")), vec![d, d]));
            s.push((p(&format!("b{w}")), vec![d]));
        }
        s.push((p("ln_ff.g"), vec![d]));
        s.push((p("ln_ff.b"), vec![d]));
        s.push((p("w1"), vec![d, ff]));
        s.push((p("b1"), vec![ff]));
        s.push((p("w2"), vec![ff, d]));
        s.push((p("b2"), vec![d]));
    }
    s.push(("enc.ln_out.g".into(), vec![d]));
    s.push(("enc.ln_out.b".into(), vec![d]));
    s.push(("dec.w_init".into(), vec![d, 2 * d]));
    s.push(("dec.b_init".into(), vec![2 * d]));
    s.push(("dec.w_ih".into(), vec![d, 4 * d]));
    s.push(("dec.w_hh".into(), vec![d, 4 * d]));
    s.push(("dec.b".into(), vec![4 * d]));
    s
}

/// Model parameters, in the order of [`param_specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct MslmParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> MslmParams<T> {
    /// Gaussian weights scaled by fan-in, unit layer-norm gains, zero biases
    /// and a forget-gate bias of one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |std: f64| -> T {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z * std)
        };
        let d = config.hidden;
        let residual_scale = 1.0 / (2.0 * config.layers as f64).sqrt();
        let (names, tensors) = param_specs(config)
            .into_iter()
            .map(|(name, shape)| {
                let fan_in = shape[0] as f64;
                let t = if name.ends_with(".g") {
                    Tensor::full(&shape, T::one())
                } else if name == "embed" {
                    Tensor::from_fn(&shape, |_| normal(1.0 / (d as f64).sqrt()))
                } else if name == "dec.b" {
                    Tensor::from_fn(&shape, |i| if (d..2 * d).contains(&i) { T::one() } else { T::zero() })
                } else if shape.len() == 2 {
                    let mut std = 1.0 / fan_in.sqrt();
                    if name.ends_with(".wo") || name.ends_with(".w2") {
                        std *= residual_scale;
                    }
                    Tensor::from_fn(&shape, |_| normal(std))
                } else {
                    Tensor::zeros(&shape)
                };
                (name, t)
            })
            .unzip();
        Ok(MslmParams { names, tensors })
    }

    /// Checks names and shapes against `config`.
    pub fn from_parts(config: &ModelConfig, names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let specs = param_specs(config);
        if specs.len() != names.len() || names.len() != tensors.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((sn, ss), (n, t)) in specs.iter().zip(names.iter().zip(&tensors)) {
            if sn != n || ss.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "parameter {n} {:?} does not match expected {sn} {ss:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Data(format!("parameter {n} has non-finite entries")));
            }
        }
        Ok(MslmParams { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> MslmParams<U> {
        MslmParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_model_size() {
        // ~250 characters, the standard architecture lands near 3M scalars
        let p = MslmParams::<f32>::init(&ModelConfig::standard(250), 0).unwrap();
        let n = p.num_scalars();
        assert!((2_500_000..3_500_000).contains(&n), "{n}");
        assert!(p.is_finite());
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::tiny(12, 2, 8, 3);
        let a = MslmParams::<f64>::init(&c, 5).unwrap();
        assert_eq!(a, MslmParams::init(&c, 5).unwrap());
        assert_ne!(a, MslmParams::init(&c, 6).unwrap());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let c = ModelConfig::tiny(12, 1, 8, 3);
        let p = MslmParams::<f32>::init(&c, 0).unwrap();
        let mut tensors = p.tensors().to_vec();
        assert!(MslmParams::from_parts(&c, p.names().to_vec(), tensors.clone()).is_ok());
        tensors[0] = Tensor::zeros(&[3, 3]);
        assert!(MslmParams::from_parts(&c, p.names().to_vec(), tensors).is_err());
    }
}
