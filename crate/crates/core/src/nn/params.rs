use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NnError;

/// Current parameter-file version.
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered named blocks inside one flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<Block>,
}

impl Layout {
    /// Append a block and return its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len();
        self.blocks.push(Block {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn fan_in(&self, block: &Block) -> usize {
        let weights = match block.name.strip_suffix(".b") {
            Some(layer) => self.block(&format!("{layer}.w")).unwrap_or(block),
            None => block,
        };
        weights.shape.get(1).copied().unwrap_or(1)
    }
}

/// Flat parameter vector plus its layout. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub version: u32,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len()];
        Self {
            version: PARAMS_VERSION,
            layout,
            values,
        }
    }

    /// Uniform(−s, s) per block, `s = 1/sqrt(fan_in)`. Weight blocks use
    /// their column count; a bias `<layer>.b` uses the columns of `<layer>.w`.
    pub fn uniform_init<R: Rng>(layout: Layout, rng: &mut R) -> Self {
        let mut params = Self::zeros(layout);
        for block in &params.layout.blocks {
            let s = 1.0 / (params.layout.fan_in(block).max(1) as f64).sqrt();
            for v in &mut params.values[block.range()] {
                *v = rng.random_range(-s..s);
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn compatible(&self, other: &ModelParams) -> bool {
        self.layout == other.layout && self.values.len() == other.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the layout and the exact bit patterns of the values
    /// (optionally restricted to blocks whose name starts with `prefix`).
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for block in self.layout.blocks.iter().filter(|b| b.name.starts_with(prefix)) {
            hasher.update(block.name.as_bytes());
            for d in &block.shape {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in &self.values[block.range()] {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// θ ← θ − η·g.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<(), NnError> {
    if !params.compatible(grads) {
        return Err(NnError::LayoutMismatch);
    }
    if !grads.is_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    for (p, g) in params.values.iter_mut().zip(&grads.values) {
        *p -= lr * g;
    }
    Ok(())
}
