//! Model configuration and parameter storage for the toy decoder-only LM.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, StreamRng};
use crate::store::{Container, TensorData};

/// Scalar the model math is generic over; f32 for training, f64 for the
/// finite-difference oracle.
pub trait Scalar:
    num_traits::Float + num_traits::NumCast + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Transformer blocks; 0 degenerates to embedding -> unembedding.
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "d")]
    pub d_model: usize,
    #[serde(rename = "H")]
    pub heads: usize,
    #[serde(rename = "v")]
    pub vocab: usize,
    pub n_ctx: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidConfig("vocabulary must have >= 2 tokens".into()));
        }
        if self.n_ctx < 2 {
            return Err(Error::InvalidConfig("context window must be >= 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn hidden(&self) -> usize {
        4 * self.d_model
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Row-major dense tensor; vectors have a single dim.
#[derive(Clone, Debug)]
pub struct Tensor<S> {
    pub dims: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![S::zero(); n] }
    }

    pub fn rows(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().expect("tensor has dims")
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn map<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerParams<S> {
    pub ln1_g: Tensor<S>,
    pub ln1_b: Tensor<S>,
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub w_o: Tensor<S>,
    pub ln2_g: Tensor<S>,
    pub ln2_b: Tensor<S>,
    pub w_in: Tensor<S>,
    pub b_in: Tensor<S>,
    pub w_out: Tensor<S>,
    pub b_out: Tensor<S>,
}

/// All weights of the toy LM. `W_U` is untied from `W_E`.
#[derive(Clone, Debug)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub w_e: Tensor<S>,
    pub w_p: Tensor<S>,
    pub layers: Vec<LayerParams<S>>,
    pub ln_f_g: Tensor<S>,
    pub ln_f_b: Tensor<S>,
    pub w_u: Tensor<S>,
}

pub const INIT_STD: f64 = 0.02;

impl<S: Scalar> ModelParams<S> {
    /// All-zero parameters (biases and gains included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let h = config.hidden();
        let layer = || LayerParams {
            ln1_g: Tensor::zeros(vec![d]),
            ln1_b: Tensor::zeros(vec![d]),
            w_q: Tensor::zeros(vec![d, d]),
            w_k: Tensor::zeros(vec![d, d]),
            w_v: Tensor::zeros(vec![d, d]),
            w_o: Tensor::zeros(vec![d, d]),
            ln2_g: Tensor::zeros(vec![d]),
            ln2_b: Tensor::zeros(vec![d]),
            w_in: Tensor::zeros(vec![d, h]),
            b_in: Tensor::zeros(vec![h]),
            w_out: Tensor::zeros(vec![h, d]),
            b_out: Tensor::zeros(vec![d]),
        };
        Ok(ModelParams {
            config: *config,
            w_e: Tensor::zeros(vec![config.vocab, d]),
            w_p: Tensor::zeros(vec![config.n_ctx, d]),
            layers: (0..config.layers).map(|_| layer()).collect(),
            ln_f_g: Tensor::zeros(vec![d]),
            ln_f_b: Tensor::zeros(vec![d]),
            w_u: Tensor::zeros(vec![d, config.vocab]),
        })
    }

    /// Gradient container: same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.config).expect("config already validated")
    }

    /// normal(0, 0.02) for projection matrices, zeros for biases, ones for
    /// norm gains, drawn from the addressed stream so initialization is a
    /// pure function of the seed.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let rng = StreamRng::new(config.seed);
        let mut tensor_index = 0u64;
        p.for_each_tensor_mut(|name, t| {
            let stream = rng.stream(tags::LM_INIT, tensor_index);
            tensor_index += 1;
            if name.ends_with(".g") || name == "ln_f.g" {
                for x in &mut t.data {
                    *x = S::one();
                }
            } else if name.ends_with(".b") || name.starts_with("b_") || name.contains(".b_") {
                // biases stay zero
            } else {
                for (i, x) in t.data.iter_mut().enumerate() {
                    *x = S::from_f64(INIT_STD * stream.gauss_at(i as u64));
                }
            }
        });
        Ok(p)
    }

    /// Canonical tensor names in visitation order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["W_E".to_string(), "W_P".to_string()];
        for i in 0..self.layers.len() {
            names.push(format!("layer{i}.ln1.g"));
            names.push(format!("layer{i}.ln1.b"));
            names.push(format!("layer{i}.attn.W_Q"));
            names.push(format!("layer{i}.attn.W_K"));
            names.push(format!("layer{i}.attn.W_V"));
            names.push(format!("layer{i}.attn.W_O"));
            names.push(format!("layer{i}.ln2.g"));
            names.push(format!("layer{i}.ln2.b"));
            names.push(format!("layer{i}.mlp.W_in"));
            names.push(format!("layer{i}.mlp.b_in"));
            names.push(format!("layer{i}.mlp.W_out"));
            names.push(format!("layer{i}.mlp.b_out"));
        }
        names.push("ln_f.g".to_string());
        names.push("ln_f.b".to_string());
        names.push("W_U".to_string());
        names
    }

    /// Tensors in the same order as [`Self::tensor_names`].
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut ts: Vec<&Tensor<S>> = vec![&self.w_e, &self.w_p];
        for l in &self.layers {
            ts.extend([
                &l.ln1_g, &l.ln1_b, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_g, &l.ln2_b, &l.w_in,
                &l.b_in, &l.w_out, &l.b_out,
            ]);
        }
        ts.extend([&self.ln_f_g, &self.ln_f_b, &self.w_u]);
        ts
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut ts: Vec<&mut Tensor<S>> = vec![&mut self.w_e, &mut self.w_p];
        for l in &mut self.layers {
            ts.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.w_q,
                &mut l.w_k,
                &mut l.w_v,
                &mut l.w_o,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w_in,
                &mut l.b_in,
                &mut l.w_out,
                &mut l.b_out,
            ]);
        }
        ts.extend([&mut self.ln_f_g, &mut self.ln_f_b, &mut self.w_u]);
        ts
    }

    /// Visit tensors in a fixed order with their canonical names.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<S>)) {
        let names = self.tensor_names();
        for (name, t) in names.iter().zip(self.tensors_mut()) {
            f(name, t);
        }
    }

    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &Tensor<S>)) {
        let names = self.tensor_names();
        for (name, t) in names.iter().zip(self.tensors()) {
            f(name, t);
        }
    }

    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config,
            w_e: self.w_e.map(),
            w_p: self.w_p.map(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: l.ln1_g.map(),
                    ln1_b: l.ln1_b.map(),
                    w_q: l.w_q.map(),
                    w_k: l.w_k.map(),
                    w_v: l.w_v.map(),
                    w_o: l.w_o.map(),
                    ln2_g: l.ln2_g.map(),
                    ln2_b: l.ln2_b.map(),
                    w_in: l.w_in.map(),
                    b_in: l.b_in.map(),
                    w_out: l.w_out.map(),
                    b_out: l.b_out.map(),
                })
                .collect(),
            ln_f_g: self.ln_f_g.map(),
            ln_f_b: self.ln_f_b.map(),
            w_u: self.w_u.map(),
        }
    }
}

impl ModelParams<f32> {
    /// Tensor map for a WTS1 checkpoint.
    pub fn to_tensor_map(&self) -> BTreeMap<String, TensorData> {
        let mut map = BTreeMap::new();
        self.for_each_tensor(|name, t| {
            map.insert(name.to_string(), TensorData::f32(t.dims.clone(), t.data.clone()));
        });
        map
    }

    /// Rebuild parameters from a checkpoint container.
    pub fn from_container(config: &ModelConfig, container: &Container) -> Result<Self> {
        let mut p = ModelParams::<f32>::zeros(config)?;
        let mut err = None;
        p.for_each_tensor_mut(|name, t| {
            if err.is_some() {
                return;
            }
            match container.tensor_f32(name) {
                Ok(vals) if vals.len() == t.data.len() => t.data = vals,
                Ok(vals) => {
                    err = Some(Error::ValueCountMismatch {
                        name: name.to_string(),
                        got: vals.len(),
                        want: t.data.len(),
                    })
                }
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(p),
        }
    }
}
