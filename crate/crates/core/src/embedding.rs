//! ViT patch embedding: the linear map from a flattened `P×P×3` patch to a
//! `D`-dimensional token, and its key adaptation.
//!
//! The weight is stored as a `D × 3P²` matrix whose columns follow the same
//! channel-major order as [`flatten_block`](crate::blockcipher::flatten_block).
//! Adapting with σ gathers columns, `weight'[d, i] = weight[d, σ(i)]`, which
//! pairs with the encryption rule `x'[i] = x[σ(i)]` so that
//! `Σ_i weight'[d,i]·x'[i] = Σ_j weight[d,j]·x[j]`.

use serde::Serialize;
use thiserror::Error;

use crate::blockcipher::{permute_blocks, BlockGeometry, GeometryError};
use crate::imagecodec::Image;
use crate::keyschedule::{KeyError, Permutation, SecretKey};

pub const DEFAULT_NORM_MEAN: f64 = 0.5;
pub const DEFAULT_NORM_STD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{what}: expected {expected} values, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("patch size and embedding dimension must be at least 1")]
    EmptyLayer,
    #[error("normalization std must be positive and finite, got {0}")]
    InvalidStd(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Key(#[from] KeyError),
}

/// Input normalization `v = (x/255 − mean[c]) / std[c]`.
///
/// Only a channel-uniform normalization commutes with a shuffle that moves
/// values across channels; the per-channel form exists so that failure can be
/// demonstrated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub fn uniform(mean: f64, std: f64) -> Self {
        Self {
            mean: [mean; 3],
            std: [std; 3],
        }
    }

    pub fn per_channel(mean: [f64; 3], std: [f64; 3]) -> Self {
        Self { mean, std }
    }

    pub fn is_uniform(&self) -> bool {
        self.mean.iter().all(|&m| m == self.mean[0]) && self.std.iter().all(|&s| s == self.std[0])
    }

    fn validate(&self) -> Result<(), EmbeddingError> {
        match self.std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            Some(&s) => Err(EmbeddingError::InvalidStd(s)),
            None => Ok(()),
        }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::uniform(DEFAULT_NORM_MEAN, DEFAULT_NORM_STD)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbedding {
    patch_size: usize,
    dim: usize,
    /// Row-major `dim × 3·patch_size²`.
    weight: Vec<f32>,
    bias: Vec<f32>,
    norm: Normalization,
}

impl PatchEmbedding {
    pub fn new(
        patch_size: usize,
        dim: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
        norm: Normalization,
    ) -> Result<Self, EmbeddingError> {
        if patch_size == 0 || dim == 0 {
            return Err(EmbeddingError::EmptyLayer);
        }
        let cols = 3 * patch_size * patch_size;
        if weight.len() != dim * cols {
            return Err(EmbeddingError::Shape {
                what: "weight",
                expected: dim * cols,
                actual: weight.len(),
            });
        }
        if bias.len() != dim {
            return Err(EmbeddingError::Shape {
                what: "bias",
                expected: dim,
                actual: bias.len(),
            });
        }
        norm.validate()?;
        Ok(Self {
            patch_size,
            dim,
            weight,
            bias,
            norm,
        })
    }

    /// Builds the layer from a `[D, 3, P, P]` convolution kernel.
    ///
    /// `w4[d][c][r][s]` lands at `weight[d, c·P² + r·P + s]`. In row-major
    /// storage the two layouts coincide element for element.
    pub fn from_conv_layout(
        w4: &[f32],
        bias: &[f32],
        patch_size: usize,
        dim: usize,
        norm: Normalization,
    ) -> Result<Self, EmbeddingError> {
        let mut weight = vec![0f32; w4.len()];
        let cols = 3 * patch_size * patch_size;
        if w4.len() == dim * cols {
            for d in 0..dim {
                for c in 0..3 {
                    for r in 0..patch_size {
                        for s in 0..patch_size {
                            let src = ((d * 3 + c) * patch_size + r) * patch_size + s;
                            let col = c * patch_size * patch_size + r * patch_size + s;
                            weight[d * cols + col] = w4[src];
                        }
                    }
                }
            }
        }
        Self::new(patch_size, dim, weight, bias.to_vec(), norm)
    }

    /// The weight as a `[D, 3, P, P]` kernel, row-major.
    pub fn to_conv_layout(&self) -> Vec<f32> {
        // Same memory order as the matrix form.
        self.weight.clone()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `3·P²`.
    pub fn input_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn weight_row(&self, d: usize) -> &[f32] {
        let n = self.input_len();
        &self.weight[d * n..(d + 1) * n]
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn norm(&self) -> Normalization {
        self.norm
    }

    pub fn with_norm(mut self, norm: Normalization) -> Result<Self, EmbeddingError> {
        norm.validate()?;
        self.norm = norm;
        Ok(self)
    }

    /// Projects every `P×P` block of `img` to a token.
    ///
    /// Each token is `bias[d] + Σ_i weight[d,i]·v_i`, accumulated in `f64`
    /// in ascending canonical index order.
    pub fn forward(&self, img: &Image) -> Result<TokenGrid, EmbeddingError> {
        let geom = BlockGeometry::for_image(img, self.patch_size)?;
        let n = self.input_len();
        let area = self.patch_size * self.patch_size;
        let weight: Vec<f64> = self.weight.iter().map(|&w| f64::from(w)).collect();

        // value lookup per (channel, byte): normalization is applied to raw
        // 8-bit values, so precompute all 3×256 of them.
        let mut lut = [[0f64; 256]; 3];
        for (c, table) in lut.iter_mut().enumerate() {
            for (x, v) in table.iter_mut().enumerate() {
                *v = (x as f64 / 255.0 - self.norm.mean[c]) / self.norm.std[c];
            }
        }

        let width = img.width();
        let data = img.data();
        let mut tokens = Vec::with_capacity(geom.block_count() * self.dim);
        let mut v = vec![0f64; n];
        for by in 0..geom.blocks_y {
            for bx in 0..geom.blocks_x {
                for (i, slot) in v.iter_mut().enumerate() {
                    let (c, rs) = (i / area, i % area);
                    let (r, s) = (rs / self.patch_size, rs % self.patch_size);
                    let row = by * self.patch_size + r;
                    let col = bx * self.patch_size + s;
                    *slot = lut[c][data[(row * width + col) * 3 + c] as usize];
                }
                for d in 0..self.dim {
                    let row = &weight[d * n..(d + 1) * n];
                    let mut acc = 0f64;
                    for (w, x) in row.iter().zip(&v) {
                        acc += w * x;
                    }
                    tokens.push(acc + f64::from(self.bias[d]));
                }
            }
        }
        Ok(TokenGrid {
            rows: geom.blocks_y,
            cols: geom.blocks_x,
            dim: self.dim,
            tokens,
        })
    }

    /// Reorders weight columns so the layer accepts images encrypted with
    /// `key`. Bias, patch size, dimension and normalization are unchanged.
    pub fn adapt(&self, key: &SecretKey) -> Result<Self, EmbeddingError> {
        let perm = Permutation::generate(key, self.input_len())?;
        self.adapt_with_permutation(&perm)
    }

    /// `weight'[d, i] = weight[d, σ(i)]`.
    pub fn adapt_with_permutation(&self, perm: &Permutation) -> Result<Self, EmbeddingError> {
        let n = self.input_len();
        if perm.len() != n {
            return Err(EmbeddingError::Shape {
                what: "permutation",
                expected: n,
                actual: perm.len(),
            });
        }
        let weight = self
            .weight
            .chunks_exact(n)
            .flat_map(|row| perm.gather(row))
            .collect();
        Ok(Self {
            weight,
            ..self.clone()
        })
    }
}

/// Tokens laid out `[rows][cols][dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub tokens: Vec<f64>,
}

impl TokenGrid {
    pub fn token_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn token(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.tokens[start..start + self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    #[serde(rename = "tokens")]
    pub token_count: usize,
    pub pass: bool,
}

impl EquivalenceReport {
    /// Compares two token grids elementwise.
    ///
    /// # Panics
    /// If the grids have different shapes.
    pub fn compare(a: &TokenGrid, b: &TokenGrid, tol: f64) -> Self {
        assert_eq!(
            (a.rows, a.cols, a.dim),
            (b.rows, b.cols, b.dim),
            "token grids differ in shape"
        );
        let mut max = 0f64;
        let mut sum = 0f64;
        for (x, y) in a.tokens.iter().zip(&b.tokens) {
            let d = (x - y).abs();
            max = max.max(d);
            sum += d;
        }
        let mean = if a.tokens.is_empty() {
            0.0
        } else {
            sum / a.tokens.len() as f64
        };
        Self {
            max_abs_diff: max,
            // rounding in the running sum can push the mean a hair past max
            mean_abs_diff: mean.min(max),
            token_count: a.token_count(),
            pass: max <= tol,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Checks `forward(pe, img) == forward(adapt(pe, key), encrypt(img, key))`.
pub fn verify_equivariance(
    pe: &PatchEmbedding,
    key: &SecretKey,
    img: &Image,
    tol: f64,
) -> Result<EquivalenceReport, EmbeddingError> {
    let perm = Permutation::generate(key, pe.input_len())?;
    verify_with_permutations(pe, &perm, &perm, img, tol)
}

/// Like [`verify_equivariance`], but the layer is adapted with `adapt_perm`
/// while the image is encrypted with `encrypt_perm`. With distinct
/// permutations this is the wrong-key control.
pub fn verify_with_permutations(
    pe: &PatchEmbedding,
    adapt_perm: &Permutation,
    encrypt_perm: &Permutation,
    img: &Image,
    tol: f64,
) -> Result<EquivalenceReport, EmbeddingError> {
    let plain = pe.forward(img)?;
    let adapted = pe.adapt_with_permutation(adapt_perm)?;
    let encrypted = permute_blocks(img, encrypt_perm, pe.patch_size)?;
    let cipher = adapted.forward(&encrypted)?;
    Ok(EquivalenceReport::compare(&plain, &cipher, tol))
}
