//! Spatial-pyramid word-response vectors.
//!
//! An image is tiled into 9 blocks: the whole image, its 4 quadrants, and the
//! 4 quadrants of the half-resolution image. Inside each block every patch
//! matches one ITW and one HTW; the per-word counts pass through a saturating
//! response `tanh(count / s)`. The representation concatenates the 9 blocks,
//! block-major: component `b * m + word`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::codebook::{assign_word, Dictionary};
use crate::error::{Error, Result};
use crate::imaging::{cslbp, extract_patches, hog, CslbpParams, GrayImage, Patch, Rect};
use crate::scalar::Scalar;

pub const N_BLOCKS: usize = 9;

/// Largest `f32` below 1. Responses are capped here so they stay below 1
/// after a round trip through the `f32` matrix file.
pub const MAX_RESPONSE: f64 = 1.0 - f32::EPSILON as f64 / 2.0;

/// `tanh(count / s)`: 0 at 0, non-decreasing, capped at [`MAX_RESPONSE`].
pub fn saturating_response<S: Scalar>(count: usize, s: S) -> S {
    (S::from_count(count) / s).tanh().min(S::lit(MAX_RESPONSE))
}

/// Which raster a block lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Full,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub id: usize,
    pub level: Level,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidLayout {
    pub blocks: [Block; N_BLOCKS],
}

fn quadrants(width: usize, height: usize) -> [Rect; 4] {
    let (w0, h0) = (width / 2, height / 2);
    let (w1, h1) = (width - w0, height - h0);
    [
        Rect {
            x: 0,
            y: 0,
            width: w0,
            height: h0,
        },
        Rect {
            x: w0,
            y: 0,
            width: w1,
            height: h0,
        },
        Rect {
            x: 0,
            y: h0,
            width: w0,
            height: h1,
        },
        Rect {
            x: w0,
            y: h0,
            width: w1,
            height: h1,
        },
    ]
}

impl PyramidLayout {
    /// Block 0 is the full image, blocks 1-4 its quadrants (row-major), and
    /// blocks 5-8 the quadrants of the 2x-downsampled image.
    pub fn for_image(width: usize, height: usize) -> Self {
        let full = Rect {
            x: 0,
            y: 0,
            width,
            height,
        };
        let q1 = quadrants(width, height);
        let q2 = quadrants(width / 2, height / 2);
        let mut blocks = [Block {
            id: 0,
            level: Level::Full,
            rect: full,
        }; N_BLOCKS];
        for i in 0..4 {
            blocks[1 + i] = Block {
                id: 1 + i,
                level: Level::Full,
                rect: q1[i],
            };
            blocks[5 + i] = Block {
                id: 5 + i,
                level: Level::Half,
                rect: q2[i],
            };
        }
        Self { blocks }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeParams<S> {
    pub sides: Vec<usize>,
    pub stride_fraction: f64,
    /// Count at which the response reaches `tanh(1)`.
    pub saturation: S,
    pub cslbp: CslbpParams<S>,
}

impl<S: Scalar> Default for EncodeParams<S> {
    fn default() -> Self {
        Self {
            sides: vec![16, 24, 32],
            stride_fraction: 0.5,
            saturation: S::lit(8.0),
            cslbp: CslbpParams::default(),
        }
    }
}

/// Word responses of one image, `N_BLOCKS * m` values in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRepresentation<S> {
    pub id: String,
    pub responses: Vec<S>,
}

impl<S: Scalar> ImageRepresentation<S> {
    pub fn new(id: impl Into<String>, responses: Vec<S>) -> Self {
        Self {
            id: id.into(),
            responses,
        }
    }

    pub fn dim(&self) -> usize {
        self.responses.len()
    }
}

/// Component index of `(block, word)` for a dictionary of `m` words.
#[inline]
pub fn component(block: usize, word: usize, m: usize) -> usize {
    block * m + word
}

/// Every patch of every block, with the raster it must be read from.
pub fn block_patches(layout: &PyramidLayout, sides: &[usize], stride_fraction: f64) -> Result<Vec<(Level, Patch)>> {
    let mut out = Vec::new();
    for block in &layout.blocks {
        for p in extract_patches(block.rect, block.id, sides, stride_fraction)? {
            out.push((block.level, p));
        }
    }
    Ok(out)
}

/// Per-block word counts, `N_BLOCKS * m` integers in component order.
pub fn block_counts<S: Scalar>(img: &GrayImage<S>, dict: &Dictionary<S>, params: &EncodeParams<S>) -> Result<Vec<u32>> {
    let m = dict.len();
    let half = img.downsample2();
    let layout = PyramidLayout::for_image(img.width(), img.height());
    let mut counts = vec![0u32; N_BLOCKS * m];
    for (level, patch) in block_patches(&layout, &params.sides, params.stride_fraction)? {
        let raster = match level {
            Level::Full => img,
            Level::Half => &half,
        };
        let words = assign_word(
            dict,
            hog(raster, &patch)?.as_slice(),
            cslbp(raster, &patch, &params.cslbp)?.as_slice(),
        );
        counts[component(patch.block, words.itw, m)] += 1;
        counts[component(patch.block, words.htw, m)] += 1;
    }
    Ok(counts)
}

pub fn responses_from_counts<S: Scalar>(counts: &[u32], saturation: S) -> Vec<S> {
    counts
        .iter()
        .map(|c| saturating_response(*c as usize, saturation))
        .collect()
}

/// Checks that the smallest pyramid block admits at least one patch.
pub fn check_encodable(id: &str, width: usize, height: usize, sides: &[usize]) -> Result<()> {
    let smallest = sides
        .iter()
        .copied()
        .min()
        .ok_or_else(|| Error::Config("patch sides must not be empty".into()))?;
    let layout = PyramidLayout::for_image(width, height);
    for b in &layout.blocks {
        if b.rect.width < smallest || b.rect.height < smallest {
            return Err(Error::ImageTooSmall {
                id: id.to_string(),
                width,
                height,
                reason: format!(
                    "block {} is {}x{}, smaller than the {smallest}px patch",
                    b.id, b.rect.width, b.rect.height
                ),
            });
        }
    }
    Ok(())
}

pub fn encode<S: Scalar>(
    id: &str,
    img: &GrayImage<S>,
    dict: &Dictionary<S>,
    params: &EncodeParams<S>,
) -> Result<ImageRepresentation<S>> {
    if params.saturation.is_nan() || params.saturation <= S::zero() {
        return Err(Error::Config(format!(
            "saturation {} must be positive",
            params.saturation
        )));
    }
    check_encodable(id, img.width(), img.height(), &params.sides)?;
    let counts = block_counts(img, dict, params)?;
    Ok(ImageRepresentation::new(
        id,
        responses_from_counts(&counts, params.saturation),
    ))
}

/// Encodes images in parallel; output order follows input order.
pub fn encode_all<S: Scalar>(
    images: &[(String, GrayImage<S>)],
    dict: &Dictionary<S>,
    params: &EncodeParams<S>,
) -> Result<Vec<ImageRepresentation<S>>> {
    images
        .par_iter()
        .map(|(id, img)| encode(id, img, dict, params))
        .collect()
}

// Representation matrix file, little-endian:
//
//   0  8  n_images (u64)
//   8  8  components per image, 9 * m (u64)
//  16  .  n_images rows of f32 responses
//
// Image ids live in a sidecar text file, one per line, in row order.

/// Sidecar path holding image ids: the matrix path with `.ids` appended.
pub fn ids_path(matrix: &Path) -> PathBuf {
    let mut name = matrix.as_os_str().to_owned();
    name.push(".ids");
    PathBuf::from(name)
}

pub fn representations_to_bytes<S: Scalar>(reps: &[ImageRepresentation<S>]) -> Result<Vec<u8>> {
    let dim = reps.first().map_or(0, |r| r.dim());
    if let Some(bad) = reps.iter().find(|r| r.dim() != dim) {
        return Err(Error::Config(format!(
            "representation {} has {} components, expected {dim}",
            bad.id,
            bad.dim()
        )));
    }
    let mut out = Vec::with_capacity(16 + 4 * dim * reps.len());
    out.extend_from_slice(&(reps.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for r in reps {
        for v in &r.responses {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn representations_from_bytes<S: Scalar>(bytes: &[u8], ids: &[String]) -> Result<Vec<ImageRepresentation<S>>> {
    let err = |offset: usize, reason: String| Error::Format {
        what: "representation file",
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 16 {
        return Err(err(bytes.len(), "header needs 16 bytes".into()));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(16))
        .ok_or_else(|| err(0, "header counts overflow".into()))?;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("file is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    if ids.len() != n {
        return Err(err(0, format!("{} ids for {n} rows", ids.len())));
    }
    let row_bytes = 4 * dim;
    let reps = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let row = &bytes[16 + i * row_bytes..16 + (i + 1) * row_bytes];
            let responses = row
                .chunks_exact(4)
                .map(|b| S::lit(f64::from(f32::from_le_bytes(b.try_into().unwrap()))))
                .collect();
            ImageRepresentation::new(id.clone(), responses)
        })
        .collect();
    Ok(reps)
}

pub fn save_representations<S: Scalar>(reps: &[ImageRepresentation<S>], path: &Path) -> Result<()> {
    fs::write(path, representations_to_bytes(reps)?)?;
    let mut ids = fs::File::create(ids_path(path))?;
    for r in reps {
        writeln!(ids, "{}", r.id)?;
    }
    Ok(())
}

pub fn load_representations<S: Scalar>(path: &Path) -> Result<Vec<ImageRepresentation<S>>> {
    let read = |p: &Path| {
        fs::read(p).map_err(|e| Error::Input {
            path: p.to_path_buf(),
            reason: e.to_string(),
        })
    };
    let bytes = read(path)?;
    let ids_raw = read(&ids_path(path))?;
    let ids: Vec<String> = String::from_utf8_lossy(&ids_raw).lines().map(str::to_string).collect();
    representations_from_bytes(&bytes, &ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{DescriptorPool, Provenance};
    use crate::imaging::{CSLBP_DIM, HOG_DIM};

    #[test]
    fn saturating_response_fixtures() {
        assert_eq!(saturating_response(0, 8.0f64), 0.0);
        assert!((saturating_response(8, 8.0f64) - 0.761_594_155_955_764_9).abs() < 1e-12);
        let mut prev = 0.0;
        for c in 0..200 {
            let r = saturating_response(c, 8.0f64);
            assert!(r >= prev && r < 1.0);
            prev = r;
        }
    }

    #[test]
    fn layout_has_nine_tiling_blocks() {
        let l = PyramidLayout::for_image(257, 130);
        assert_eq!(l.blocks.len(), 9);
        for (i, b) in l.blocks.iter().enumerate() {
            assert_eq!(b.id, i);
        }
        let area = |r: &[Block]| r.iter().map(|b| b.rect.width * b.rect.height).sum::<usize>();
        assert_eq!(area(&l.blocks[1..5]), 257 * 130);
        assert_eq!(area(&l.blocks[5..9]), 128 * 65);
        assert!(l.blocks[5..].iter().all(|b| b.level == Level::Half));
    }

    #[test]
    fn empty_block_has_zero_responses() {
        let layout = PyramidLayout::for_image(64, 64);
        let patches = extract_patches(layout.blocks[6].rect, 6, &[40], 0.5).unwrap();
        assert!(patches.is_empty());
        let counts = vec![0u32; 5];
        assert!(responses_from_counts(&counts, 8.0f64).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn single_patch_block_has_two_responses() {
        let m = 900;
        let mut counts = vec![0u32; m];
        counts[5] += 1;
        counts[812] += 1;
        let r = responses_from_counts(&counts, 8.0f64);
        let nz: Vec<usize> = (0..m).filter(|i| r[*i] != 0.0).collect();
        assert_eq!(nz, vec![5, 812]);
        assert_eq!(r[5], saturating_response(1, 8.0));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let dict = Dictionary::new(
            DescriptorPool::from_rows(HOG_DIM, vec![0.0f64; HOG_DIM]).unwrap(),
            DescriptorPool::from_rows(CSLBP_DIM, vec![0.0f64; CSLBP_DIM]).unwrap(),
            Provenance::default(),
        )
        .unwrap();
        let img = GrayImage::from_fn(40, 40, |x, _| x as f64);
        match encode("tiny.png", &img, &dict, &EncodeParams::default()) {
            Err(Error::ImageTooSmall { id, .. }) => assert_eq!(id, "tiny.png"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matrix_file_round_trip() {
        let reps = vec![
            ImageRepresentation::new("a", vec![0.25f64, 0.5, 0.0]),
            ImageRepresentation::new("b", vec![0.125, 0.75, 0.5]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reps.bin");
        save_representations(&reps, &path).unwrap();
        assert_eq!(load_representations::<f64>(&path).unwrap(), reps);

        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * 3 * 4);
        assert!(matches!(
            representations_from_bytes::<f64>(&bytes[..20], &["a".into(), "b".into()]),
            Err(Error::Format { .. })
        ));
    }
}
