//! Key-driven block-wise image encryption for Vision Transformers.
//!
//! A secret key derives one permutation of the `3·P²` values inside a `P×P`
//! patch. Images are encrypted by shuffling every patch with that
//! permutation, and the ViT patch-embedding weight is adapted by reordering
//! its columns with the same permutation. The adapted layer applied to an
//! encrypted image produces the same tokens as the original layer applied to
//! the plain image, so everything downstream of the embedding is unaffected.
//!
//! ```
//! use patchcrypt::{encrypt_image, verify_equivariance, Image, Normalization, PatchEmbedding, SecretKey};
//!
//! let key = SecretKey::from_bytes([7; 32]);
//! let img = Image::new(4, 4, (0..48).collect()).unwrap();
//! let weight: Vec<f32> = (0..2 * 12).map(|i| i as f32 * 0.1 - 1.0).collect();
//! let pe = PatchEmbedding::new(2, 2, weight, vec![0.0, 0.5], Normalization::default()).unwrap();
//!
//! let encrypted = encrypt_image(&img, &key, 2).unwrap();
//! assert_ne!(encrypted, img);
//! let report = verify_equivariance(&pe, &key, &img, 1e-9).unwrap();
//! assert!(report.pass);
//! ```

pub mod blockcipher;
pub mod embedding;
pub mod imagecodec;
pub mod keyschedule;
pub mod segmetrics;
pub mod tensorarchive;

pub use blockcipher::{
    decrypt_image, encrypt_image, flatten_block, permute_blocks, unflatten_block, BlockGeometry,
    CipherError, GeometryError,
};
pub use embedding::{
    verify_equivariance, verify_with_permutations, EmbeddingError, EquivalenceReport,
    Normalization, PatchEmbedding, TokenGrid,
};
pub use imagecodec::{
    read_pgm_labels, read_ppm, write_pgm_labels, write_ppm, CodecError, Image, LabelMap,
    IGNORE_LABEL,
};
pub use keyschedule::{KeyError, Permutation, SecretKey, SplitMix64};
pub use segmetrics::{ConfusionMatrix, MetricsError, MetricsReport};
pub use tensorarchive::{
    adapt_archive, load_patch_embedding, read_archive, write_archive, ArchiveError, Dtype,
    EmbeddingLocator, TensorArchive, TensorRecord,
};

/// Default patch size (ViT-B/16 and ViT-L/16).
pub const DEFAULT_PATCH_SIZE: usize = 16;
/// Default equivariance tolerance with 64-bit accumulation.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Any error the library can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
