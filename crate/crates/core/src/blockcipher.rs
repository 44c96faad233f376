//! Block-wise pixel shuffling.
//!
//! An image is cut into non-overlapping `P×P` blocks aligned with the ViT
//! patch grid. Each block is flattened channel-major into `3·P²` values and
//! every block is shuffled with the same key-derived permutation σ:
//! `out[i] = in[σ(i)]`. Decryption applies σ⁻¹ the same way.

use thiserror::Error;

use crate::imagecodec::Image;
use crate::keyschedule::{KeyError, Permutation, SecretKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("patch size must be at least 1")]
    ZeroPatch,
    #[error(
        "image is {width}x{height}, but both dimensions must be multiples of the patch size {patch}"
    )]
    NotDivisible {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("block ({bx}, {by}) is outside the {blocks_x}x{blocks_y} block grid")]
    BlockOutOfRange {
        bx: usize,
        by: usize,
        blocks_x: usize,
        blocks_y: usize,
    },
    #[error("permutation has length {actual}, expected 3*P^2 = {expected}")]
    PermutationLength { expected: usize, actual: usize },
    #[error("block vector has length {actual}, expected {expected}")]
    BlockLength { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum CipherError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Key(#[from] KeyError),
}

/// The patch grid over an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGeometry {
    pub patch_size: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl BlockGeometry {
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self, GeometryError> {
        if patch_size == 0 {
            return Err(GeometryError::ZeroPatch);
        }
        if width % patch_size != 0 || height % patch_size != 0 {
            return Err(GeometryError::NotDivisible {
                width,
                height,
                patch: patch_size,
            });
        }
        Ok(Self {
            patch_size,
            blocks_x: width / patch_size,
            blocks_y: height / patch_size,
        })
    }

    pub fn for_image(img: &Image, patch_size: usize) -> Result<Self, GeometryError> {
        Self::new(img.width(), img.height(), patch_size)
    }

    /// Values per block, `3·P²`.
    pub fn block_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn block_count(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    fn check_block(&self, bx: usize, by: usize) -> Result<(), GeometryError> {
        if bx >= self.blocks_x || by >= self.blocks_y {
            return Err(GeometryError::BlockOutOfRange {
                bx,
                by,
                blocks_x: self.blocks_x,
                blocks_y: self.blocks_y,
            });
        }
        Ok(())
    }
}

/// Byte offset, relative to the block's top-left pixel, of each canonical
/// index `c·P² + r·P + s`.
fn canonical_offsets(patch: usize, width: usize) -> Vec<usize> {
    let area = patch * patch;
    (0..3 * area)
        .map(|i| {
            let (c, rs) = (i / area, i % area);
            let (r, s) = (rs / patch, rs % patch);
            (r * width + s) * 3 + c
        })
        .collect()
}

fn block_origin(img: &Image, patch: usize, bx: usize, by: usize) -> usize {
    (by * patch * img.width() + bx * patch) * 3
}

/// Flattens block `(bx, by)` channel-major:
/// `flat[c·P² + r·P + s] = pixel(by·P + r, bx·P + s)[c]`.
pub fn flatten_block(
    img: &Image,
    bx: usize,
    by: usize,
    patch: usize,
) -> Result<Vec<u8>, GeometryError> {
    let geom = BlockGeometry::for_image(img, patch)?;
    geom.check_block(bx, by)?;
    let base = block_origin(img, patch, bx, by);
    Ok(canonical_offsets(patch, img.width())
        .into_iter()
        .map(|o| img.data()[base + o])
        .collect())
}

/// Inverse of [`flatten_block`]: writes `flat` back into block `(bx, by)`.
pub fn unflatten_block(
    img: &mut Image,
    bx: usize,
    by: usize,
    patch: usize,
    flat: &[u8],
) -> Result<(), GeometryError> {
    let geom = BlockGeometry::for_image(img, patch)?;
    geom.check_block(bx, by)?;
    if flat.len() != geom.block_len() {
        return Err(GeometryError::BlockLength {
            expected: geom.block_len(),
            actual: flat.len(),
        });
    }
    let base = block_origin(img, patch, bx, by);
    let offsets = canonical_offsets(patch, img.width());
    let data = img.data_mut();
    for (&o, &v) in offsets.iter().zip(flat) {
        data[base + o] = v;
    }
    Ok(())
}

/// Applies `out_flat[i] = in_flat[perm(i)]` to every block.
pub fn permute_blocks(
    img: &Image,
    perm: &Permutation,
    patch: usize,
) -> Result<Image, GeometryError> {
    let geom = BlockGeometry::for_image(img, patch)?;
    if perm.len() != geom.block_len() {
        return Err(GeometryError::PermutationLength {
            expected: geom.block_len(),
            actual: perm.len(),
        });
    }
    let width = img.width();
    let dst = canonical_offsets(patch, width);
    // (dst, src) byte offsets within a block, sorted by destination so the
    // inner loop walks output memory in order.
    let mut moves: Vec<(usize, usize)> = dst
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, dst[perm.get(i)]))
        .collect();
    moves.sort_unstable_by_key(|&(d, _)| d);
    let src_rows: Vec<usize> = moves.iter().map(|&(_, s)| s).collect();

    let input = img.data();
    let mut out = img.clone();
    let output = out.data_mut();
    let row_bytes = patch * 3;
    let stride = width * 3;
    for by in 0..geom.blocks_y {
        for bx in 0..geom.blocks_x {
            let base = block_origin(img, patch, bx, by);
            // Destination offsets sorted ascending are exactly the block's
            // rows laid out one after another.
            for (r, srcs) in src_rows.chunks_exact(row_bytes).enumerate() {
                let row = &mut output[base + r * stride..base + r * stride + row_bytes];
                for (o, &s) in row.iter_mut().zip(srcs) {
                    *o = input[base + s];
                }
            }
        }
    }
    Ok(out)
}

/// Encrypts `img` with the key's permutation of length `3·P²`.
pub fn encrypt_image(img: &Image, key: &SecretKey, patch: usize) -> Result<Image, CipherError> {
    let geom = BlockGeometry::for_image(img, patch)?;
    let perm = Permutation::generate(key, geom.block_len())?;
    Ok(permute_blocks(img, &perm, patch)?)
}

pub fn decrypt_image(img: &Image, key: &SecretKey, patch: usize) -> Result<Image, CipherError> {
    let geom = BlockGeometry::for_image(img, patch)?;
    let perm = Permutation::generate(key, geom.block_len())?.invert();
    Ok(permute_blocks(img, &perm, patch)?)
}
