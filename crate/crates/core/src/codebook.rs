//! Two-type visual-word dictionary.
//!
//! ITWs (inhomogeneous textural words) are k-means centroids of HOG
//! descriptors; HTWs (homogeneous textural words) are k-means centroids of
//! CS-LBP descriptors. Word ids are dense: `0..n_itw` are ITWs and
//! `n_itw..n_itw + n_htw` are HTWs.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{cslbp, hog, CslbpParams, GrayImage, Patch, CSLBP_DIM, HOG_DIM};
use crate::scalar::Scalar;

/// Flat row-major collection of equal-length descriptor vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorPool<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> DescriptorPool<S> {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, data: Vec<S>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} values do not form rows of length {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, row: &[S]) {
        assert_eq!(row.len(), self.dim, "descriptor length mismatch");
        self.data.extend_from_slice(row);
    }

    fn subsample(&self, keep: usize, rng: &mut impl Rng) -> Self {
        let mut picked = index::sample(rng, self.len(), keep).into_vec();
        picked.sort_unstable();
        let mut out = Self::new(self.dim);
        for i in picked {
            out.push(self.row(i));
        }
        out
    }
}

#[inline]
pub fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// Index of the nearest row of `centroids` to `x`; ties go to the lowest index.
pub fn nearest<S: Scalar>(centroids: &[S], dim: usize, x: &[S]) -> (usize, S) {
    let mut best = (0, S::infinity());
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSampling<S> {
    pub sides: Vec<usize>,
    pub per_image: usize,
    /// Upper bound on each pool; larger pools are subsampled reproducibly.
    pub max_pool: usize,
    pub cslbp: CslbpParams<S>,
}

impl<S: Scalar> Default for PatchSampling<S> {
    fn default() -> Self {
        Self {
            sides: vec![16, 24, 32],
            per_image: 200,
            max_pool: 200_000,
            cslbp: CslbpParams::default(),
        }
    }
}

/// Randomly placed patches at random scales from every image, described both ways.
///
/// Returns `(itw_pool, htw_pool)`. Flat patches (all-zero HOG) are left out of
/// the ITW pool. Image `i` draws from its own ChaCha stream, so the result
/// does not depend on how images are scheduled across workers.
pub fn sample_training_patches<S: Scalar>(
    images: &[GrayImage<S>],
    sampling: &PatchSampling<S>,
    seed: u64,
) -> Result<(DescriptorPool<S>, DescriptorPool<S>)> {
    if sampling.per_image == 0 {
        return Err(Error::Config("per_image must be at least 1".into()));
    }
    if sampling.sides.is_empty() {
        return Err(Error::Config("patch sides must not be empty".into()));
    }

    let per_image: Vec<Result<(Vec<S>, Vec<S>)>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let fitting: Vec<usize> = sampling
                .sides
                .iter()
                .copied()
                .filter(|s| *s <= img.width() && *s <= img.height())
                .collect();
            let (mut hogs, mut lbps) = (Vec::new(), Vec::new());
            if fitting.is_empty() {
                return Ok((hogs, lbps));
            }
            for _ in 0..sampling.per_image {
                let side = fitting[rng.random_range(0..fitting.len())];
                let patch = Patch {
                    x: rng.random_range(0..=img.width() - side),
                    y: rng.random_range(0..=img.height() - side),
                    side,
                    block: 0,
                };
                let h = hog(img, &patch)?;
                if !h.is_flat() {
                    hogs.extend_from_slice(h.as_slice());
                }
                lbps.extend_from_slice(cslbp(img, &patch, &sampling.cslbp)?.as_slice());
            }
            Ok((hogs, lbps))
        })
        .collect();

    let mut itw = DescriptorPool::new(HOG_DIM);
    let mut htw = DescriptorPool::new(CSLBP_DIM);
    for r in per_image {
        let (h, l) = r?;
        itw.data.extend(h);
        htw.data.extend(l);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe_f00d_d00d);
    if itw.len() > sampling.max_pool {
        itw = itw.subsample(sampling.max_pool, &mut rng);
    }
    if htw.len() > sampling.max_pool {
        htw = htw.subsample(sampling.max_pool, &mut rng);
    }
    Ok((itw, htw))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<S> {
    /// `k` rows of `dim` values.
    pub centroids: DescriptorPool<S>,
    /// Inertia after each assignment step.
    pub inertia: Vec<S>,
    pub iterations: usize,
}

impl<S: Scalar> KMeansResult<S> {
    pub fn final_inertia(&self) -> S {
        self.inertia.last().copied().unwrap_or_else(S::zero)
    }
}

fn kmeans_pp_init<S: Scalar>(pool: &DescriptorPool<S>, k: usize, rng: &mut ChaCha8Rng) -> DescriptorPool<S> {
    let n = pool.len();
    let mut centroids = DescriptorPool::new(pool.dim());
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(pool.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(pool.row(i), pool.row(first)).as_f64())
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(i);
                    if u < *w {
                        break;
                    }
                    u -= *w;
                }
            }
            pick.expect("positive total weight has a positive entry")
        } else {
            // Every remaining point duplicates a centroid.
            (0..n).find(|i| !chosen[*i]).expect("pool holds at least k points")
        };
        chosen[pick] = true;
        centroids.push(pool.row(pick));
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(squared_distance(pool.row(i), pool.row(pick)).as_f64());
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Iteration stops once no centroid moves by `tol` or more (Euclidean), or after
/// `max_iters` assignment steps. A cluster left empty is reseeded at the point
/// farthest from its current centroid.
pub fn kmeans<S: Scalar>(pool: &DescriptorPool<S>, params: &KMeansParams) -> Result<KMeansResult<S>> {
    let (n, dim, k) = (pool.len(), pool.dim(), params.k);
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Config(format!(
            "pool of {n} descriptors is smaller than k = {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_pp_init(pool, k, &mut rng);
    let mut inertia = Vec::new();
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let assigned: Vec<(usize, S)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids.data, dim, pool.row(i)))
            .collect();
        inertia.push(assigned.iter().map(|a| a.1).sum());

        let mut sums = vec![S::zero(); k * dim];
        let mut counts = vec![0usize; k];
        for (i, (c, _)) in assigned.iter().enumerate() {
            counts[*c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(pool.row(i)) {
                *s += *v;
            }
        }

        let mut farthest: Vec<(usize, S)> = assigned.iter().enumerate().map(|(i, a)| (i, a.1)).collect();
        // Largest distance first, lowest index on ties.
        farthest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut reseeds = farthest.into_iter().map(|f| f.0);

        let mut shift = 0.0f64;
        for c in 0..k {
            let new: Vec<S> = if counts[c] > 0 {
                let inv = S::one() / S::from_count(counts[c]);
                sums[c * dim..(c + 1) * dim].iter().map(|s| *s * inv).collect()
            } else {
                let p = reseeds.next().expect("n >= k leaves a point to reseed with");
                pool.row(p).to_vec()
            };
            let old = &mut centroids.data[c * dim..(c + 1) * dim];
            shift = shift.max(squared_distance(old, &new).as_f64().sqrt());
            old.copy_from_slice(&new);
        }
        if shift < params.tol {
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        inertia,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordKind {
    Itw,
    Htw,
}

impl fmt::Display for WordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordKind::Itw => "ITW",
            WordKind::Htw => "HTW",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualWord<'a, S> {
    pub id: usize,
    pub kind: WordKind,
    pub centroid: &'a [S],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
}

/// ITW and HTW centroids. Centroids are held at `f32` precision so that the
/// on-disk form round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<S> {
    itw: Vec<S>,
    htw: Vec<S>,
    pub provenance: Provenance,
}

impl<S: Scalar> Dictionary<S> {
    pub fn new(itw: DescriptorPool<S>, htw: DescriptorPool<S>, provenance: Provenance) -> Result<Self> {
        if itw.dim() != HOG_DIM || htw.dim() != CSLBP_DIM {
            return Err(Error::Config(format!(
                "centroid dims {}/{} do not match {HOG_DIM}/{CSLBP_DIM}",
                itw.dim(),
                htw.dim()
            )));
        }
        if itw.is_empty() || htw.is_empty() {
            return Err(Error::Config("dictionary needs at least one word of each kind".into()));
        }
        let round = |v: Vec<S>| v.into_iter().map(|x| S::lit(f64::from(x.as_f32()))).collect();
        Ok(Self {
            itw: round(itw.data),
            htw: round(htw.data),
            provenance,
        })
    }

    pub fn n_itw(&self) -> usize {
        self.itw.len() / HOG_DIM
    }

    pub fn n_htw(&self) -> usize {
        self.htw.len() / CSLBP_DIM
    }

    /// Total word count `m`.
    pub fn len(&self) -> usize {
        self.n_itw() + self.n_htw()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, id: usize) -> WordKind {
        if id < self.n_itw() {
            WordKind::Itw
        } else {
            WordKind::Htw
        }
    }

    pub fn word(&self, id: usize) -> VisualWord<'_, S> {
        let n_itw = self.n_itw();
        let centroid = if id < n_itw {
            &self.itw[id * HOG_DIM..(id + 1) * HOG_DIM]
        } else {
            let j = id - n_itw;
            &self.htw[j * CSLBP_DIM..(j + 1) * CSLBP_DIM]
        };
        VisualWord {
            id,
            kind: self.kind(id),
            centroid,
        }
    }

    pub fn words(&self) -> impl Iterator<Item = VisualWord<'_, S>> + '_ {
        (0..self.len()).map(|id| self.word(id))
    }
}

/// Word ids matched by one patch: one ITW (by HOG) and one HTW (by CS-LBP).
/// `htw` is a global id in `n_itw..m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordAssignment {
    pub itw: usize,
    pub htw: usize,
}

pub fn assign_word<S: Scalar>(dict: &Dictionary<S>, hog: &[S], lbp: &[S]) -> WordAssignment {
    let (itw, _) = nearest(&dict.itw, HOG_DIM, hog);
    let (htw, _) = nearest(&dict.htw, CSLBP_DIM, lbp);
    WordAssignment {
        itw,
        htw: dict.n_itw() + htw,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryBuild<S> {
    pub dictionary: Dictionary<S>,
    pub itw_pool_size: usize,
    pub htw_pool_size: usize,
    pub itw_inertia: S,
    pub htw_inertia: S,
}

/// Samples patches and clusters both pools.
pub fn build_dictionary<S: Scalar>(
    images: &[GrayImage<S>],
    sampling: &PatchSampling<S>,
    n_itw: usize,
    n_htw: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<DictionaryBuild<S>> {
    let (itw_pool, htw_pool) = sample_training_patches(images, sampling, seed)?;
    let itw = kmeans(
        &itw_pool,
        &KMeansParams {
            k: n_itw,
            seed,
            max_iters,
            tol,
        },
    )?;
    let htw = kmeans(
        &htw_pool,
        &KMeansParams {
            k: n_htw,
            seed: seed.wrapping_add(1),
            max_iters,
            tol,
        },
    )?;
    let (itw_inertia, htw_inertia) = (itw.final_inertia(), htw.final_inertia());
    Ok(DictionaryBuild {
        dictionary: Dictionary::new(itw.centroids, htw.centroids, Provenance { seed })?,
        itw_pool_size: itw_pool.len(),
        htw_pool_size: htw_pool.len(),
        itw_inertia,
        htw_inertia,
    })
}

// Dictionary file layout, all integers little-endian:
//
//   0   8  magic "CSWCDICT"
//   8   4  format version (u32) = 1
//  12   2  ITW descriptor length (u16) = 32
//  14   2  HTW descriptor length (u16) = 64
//  16   4  n_itw (u32)
//  20   4  n_htw (u32)
//  24   .  centroids as f32, ITWs then HTWs, in id order
//   .   8  build seed (u64)
//   .   4  footer magic "DEND"
const DICT_MAGIC: &[u8; 8] = b"CSWCDICT";
const DICT_FOOTER: &[u8; 4] = b"DEND";
const DICT_VERSION: u32 = 1;

pub fn dictionary_to_bytes<S: Scalar>(dict: &Dictionary<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 4 * (dict.itw.len() + dict.htw.len()));
    out.extend_from_slice(DICT_MAGIC);
    out.extend_from_slice(&DICT_VERSION.to_le_bytes());
    out.extend_from_slice(&(HOG_DIM as u16).to_le_bytes());
    out.extend_from_slice(&(CSLBP_DIM as u16).to_le_bytes());
    out.extend_from_slice(&(dict.n_itw() as u32).to_le_bytes());
    out.extend_from_slice(&(dict.n_htw() as u32).to_le_bytes());
    for v in dict.itw.iter().chain(&dict.htw) {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    out.extend_from_slice(&dict.provenance.seed.to_le_bytes());
    out.extend_from_slice(DICT_FOOTER);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("need {n} more bytes, file ends")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn error(&self, reason: String) -> Error {
        Error::Format {
            what: "dictionary file",
            offset: self.pos as u64,
            reason,
        }
    }
}

pub fn dictionary_from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Dictionary<S>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != DICT_MAGIC {
        r.pos = 0;
        return Err(r.error("bad magic".into()));
    }
    let version = r.u32()?;
    if version != DICT_VERSION {
        r.pos -= 4;
        return Err(r.error(format!("unsupported version {version}")));
    }
    let (hd, ld) = (r.u16()? as usize, r.u16()? as usize);
    if hd != HOG_DIM || ld != CSLBP_DIM {
        r.pos -= 4;
        return Err(r.error(format!("descriptor lengths {hd}/{ld}, expected {HOG_DIM}/{CSLBP_DIM}")));
    }
    let (n_itw, n_htw) = (r.u32()? as usize, r.u32()? as usize);
    if n_itw == 0 || n_htw == 0 {
        r.pos -= 8;
        return Err(r.error("word counts must be positive".into()));
    }
    let expected = 24 + 4 * (n_itw * HOG_DIM + n_htw * CSLBP_DIM) + 12;
    if bytes.len() != expected {
        return Err(r.error(format!("file is {} bytes, counts imply {expected}", bytes.len())));
    }
    let mut read =
        |count: usize| -> Result<Vec<S>> { (0..count).map(|_| r.f32().map(|v| S::lit(f64::from(v)))).collect() };
    let itw = read(n_itw * HOG_DIM)?;
    let htw = read(n_htw * CSLBP_DIM)?;
    let seed = r.u64()?;
    if r.take(4)? != DICT_FOOTER {
        r.pos -= 4;
        return Err(r.error("bad footer magic".into()));
    }
    Ok(Dictionary {
        itw,
        htw,
        provenance: Provenance { seed },
    })
}

pub fn save_dictionary<S: Scalar>(dict: &Dictionary<S>, path: &Path) -> Result<()> {
    fs::write(path, dictionary_to_bytes(dict))?;
    Ok(())
}

pub fn load_dictionary<S: Scalar>(path: &Path) -> Result<Dictionary<S>> {
    let bytes = fs::read(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    dictionary_from_bytes(&bytes)
}
