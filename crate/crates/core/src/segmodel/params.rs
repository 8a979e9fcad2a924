use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fsutil::{f32_le_bytes, read_f32_le, read_with_header, write_with_header};
use crate::tensor::Tensor;

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Channels of the first two encoder blocks.
    pub enc_channels: [usize; 2],
    /// Feature width `d` shared by encoder output, prompts and attention.
    pub dim: usize,
    /// Channels of the two transposed-convolution decoder blocks.
    pub dec_channels: [usize; 2],
    /// Memory bank capacity `K`.
    pub memory_k: usize,
    /// Sinusoid frequencies per axis of the positional encoding.
    pub pe_freqs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            enc_channels: [16, 32],
            dim: 32,
            dec_channels: [16, 8],
            memory_k: 4,
            pe_freqs: 4,
        }
    }
}

impl ModelConfig {
    /// Small configuration for finite-difference checks.
    pub fn micro(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            enc_channels: [3, 4],
            dim: 4,
            dec_channels: [3, 2],
            memory_k: 2,
            pe_freqs: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "frame size {}x{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        if self.dim == 0 || self.memory_k == 0 || self.pe_freqs == 0 {
            return Err(Error::Config("dim, memory_k and pe_freqs must be positive".into()));
        }
        if self.enc_channels.contains(&0) || self.dec_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of the feature map (`H/4 x W/4`).
    pub fn feature_hw(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    pub fn pe_dim(&self) -> usize {
        4 * self.pe_freqs
    }

    fn layout(&self) -> Vec<(&'static str, Vec<usize>, bool)> {
        let [c1, c2] = self.enc_channels;
        let [d1, d2] = self.dec_channels;
        let d = self.dim;
        vec![
            ("enc1.w", vec![c1, 3, 3, 3], true),
            ("enc1.b", vec![c1], false),
            ("enc2.w", vec![c2, c1, 3, 3], true),
            ("enc2.b", vec![c2], false),
            ("enc3.w", vec![d, c2, 3, 3], true),
            ("enc3.b", vec![d], false),
            ("pe.w", vec![self.pe_dim(), d], true),
            ("prompt.point", vec![1, d], false),
            ("prompt.box", vec![1, d], false),
            ("attn.sink", vec![1, d], false),
            ("attn.q", vec![d, d], true),
            ("attn.k", vec![d, d], true),
            ("attn.v", vec![d, d], true),
            ("attn.o", vec![d, d], true),
            ("dec1.w", vec![d, d1, 2, 2], true),
            ("dec1.b", vec![d1], false),
            ("dec2.w", vec![d1, d2, 2, 2], true),
            ("dec2.b", vec![d2], false),
            ("head.w", vec![1, d2, 3, 3], true),
            ("head.b", vec![1], false),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub tensor: Tensor,
    /// Whether magnitude pruning may zero this array.
    pub prunable: bool,
}

/// All learnable weights of the segmentation model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub arrays: Vec<ParamArray>,
}

impl ModelParams {
    /// Seeded initialization: uniform fan-in scaling for weights, zero
    /// biases, small random prompt/sink vectors.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrays = config
            .layout()
            .into_iter()
            .map(|(name, shape, prunable)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = if name.ends_with(".b") {
                    vec![0.0; n]
                } else if name.starts_with("prompt.") || name == "attn.sink" {
                    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
                } else {
                    let fan_in = match name {
                        // Transposed convs: each output sums over input channels.
                        "dec1.w" | "dec2.w" => shape[0],
                        _ if shape.len() == 4 => shape[1] * shape[2] * shape[3],
                        _ => shape[0],
                    };
                    let bound = (3.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Ok(ParamArray {
                    name: name.to_string(),
                    tensor: Tensor::new(shape, data)?,
                    prunable,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, arrays })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|a| a.name == name).map(|a| &a.tensor)
    }

    pub fn num_values(&self) -> usize {
        self.arrays.iter().map(|a| a.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.tensor.all_finite())
    }

    /// Rounds every value to `f32`, matching what a checkpoint round trip
    /// produces.
    pub fn round_to_f32(&mut self) {
        for a in &mut self.arrays {
            for v in a.tensor.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Writes the checkpoint: `u64` header length, JSON header (config and
    /// per-array name/shape/prunable), then little-endian `f32` payloads in
    /// header order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = json!({
            "format": "uapsam-params",
            "version": 1,
            "config": self.config,
            "arrays": self.arrays.iter().map(|a| json!({
                "name": a.name,
                "shape": a.tensor.shape(),
                "prunable": a.prunable,
            })).collect::<Vec<_>>(),
        });
        let payload = f32_le_bytes(self.arrays.iter().flat_map(|a| a.tensor.data().iter().copied()));
        write_with_header(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        const KIND: &str = "params checkpoint";
        let (header, payload) = read_with_header(path, KIND)?;
        if header.get("format").and_then(|v| v.as_str()) != Some("uapsam-params") {
            return Err(Error::format(KIND, "format", "not a uapsam-params file"));
        }
        let config: ModelConfig = serde_json::from_value(
            header.get("config").cloned().ok_or_else(|| Error::format(KIND, "config", "missing"))?,
        )
        .map_err(|e| Error::format(KIND, "config", e.to_string()))?;
        config.validate()?;
        let metas = header
            .get("arrays")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::format(KIND, "arrays", "missing or not an array"))?;
        let values = read_f32_le(&payload);
        if payload.len() % 4 != 0 {
            return Err(Error::format(KIND, "payload", "length not a multiple of 4"));
        }
        let mut offset = 0;
        let mut arrays = Vec::with_capacity(metas.len());
        for m in metas {
            let name = m
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::format(KIND, "arrays.name", "missing"))?;
            let shape: Vec<usize> = serde_json::from_value(
                m.get("shape").cloned().ok_or_else(|| Error::format(KIND, "arrays.shape", "missing"))?,
            )
            .map_err(|e| Error::format(KIND, "arrays.shape", e.to_string()))?;
            let prunable = m
                .get("prunable")
                .and_then(|v| v.as_bool())
                .ok_or_else(|| Error::format(KIND, "arrays.prunable", "missing"))?;
            let n: usize = shape.iter().product();
            if offset + n > values.len() {
                return Err(Error::format(KIND, "payload", format!("truncated inside `{name}`")));
            }
            arrays.push(ParamArray {
                name: name.to_string(),
                tensor: Tensor::new(shape, values[offset..offset + n].to_vec())?,
                prunable,
            });
            offset += n;
        }
        if offset != values.len() {
            return Err(Error::format(KIND, "payload", "trailing bytes after last array"));
        }
        let params = Self { config, arrays };
        let expected = params.config.layout();
        if expected.len() != params.arrays.len()
            || expected
                .iter()
                .zip(&params.arrays)
                .any(|((n, s, _), a)| *n != a.name || s.as_slice() != a.tensor.shape())
        {
            return Err(Error::format(KIND, "arrays", "layout does not match config"));
        }
        Ok(params)
    }
}
