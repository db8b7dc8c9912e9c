use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::resample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
const FEATURE_VERSION: u32 = 1;
const POOL_SIDE: usize = 8;
const RANDPROJ_SEED: u64 = 0x4645_4154_5052_4A31;

/// n×d matrix of feature vectors tagged with the extractor that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet<T: Scalar> {
    pub matrix: Tensor<T>,
    pub extractor_id: String,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(matrix: Tensor<T>, extractor_id: impl Into<String>) -> Result<Self> {
        let extractor_id = extractor_id.into();
        match matrix.shape() {
            [n, _] if *n >= 2 => {}
            [_, _] => {
                return Err(Error::InsufficientSamples(format!(
                    "feature set needs at least 2 rows, got {:?}",
                    matrix.shape()
                )))
            }
            s => return Err(Error::Shape(format!("feature matrix must be n x d, got {s:?}"))),
        }
        if !matrix.all_finite() {
            return Err(Error::Numeric("feature matrix has non-finite values".into()));
        }
        if extractor_id.len() > u16::MAX as usize {
            return Err(Error::Config("extractor id too long".into()));
        }
        Ok(FeatureSet {
            matrix,
            extractor_id,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }

    /// Fails unless both sets share an extractor and a feature dimension.
    pub fn check_comparable(&self, other: &Self) -> Result<()> {
        if self.extractor_id != other.extractor_id {
            return Err(Error::Contract(format!(
                "feature sets come from different extractors: {:?} vs {:?}",
                self.extractor_id, other.extractor_id
            )));
        }
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "feature dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Built-in deterministic image embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extractor {
    /// Area-average to 3×8×8 and flatten (d = 192).
    Pool,
    /// Fixed seeded Gaussian projection of raw pixels to `k` dimensions.
    RandProj(usize),
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extractor::Pool => write!(f, "pool"),
            Extractor::RandProj(k) => write!(f, "randproj-{k}"),
        }
    }
}

impl FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pool" {
            return Ok(Extractor::Pool);
        }
        if let Some(k) = s.strip_prefix("randproj-") {
            if let Ok(k) = k.parse::<usize>() {
                if k > 0 {
                    return Ok(Extractor::RandProj(k));
                }
            }
        }
        Err(Error::Config(format!("unknown extractor {s:?}")))
    }
}

/// Embeds a list of equally sized 3×R×R images.
pub fn extract_features<T: Scalar>(images: &[Tensor<T>], extractor: Extractor) -> Result<FeatureSet<T>> {
    if images.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "feature extraction needs at least 2 images, got {}",
            images.len()
        )));
    }
    let shape = images[0].shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 || images.iter().any(|i| i.shape() != shape.as_slice()) {
        return Err(Error::Shape(format!(
            "images must all be 3 x R x R, first is {shape:?}"
        )));
    }
    let rows: Vec<Vec<T>> = match extractor {
        Extractor::Pool => images
            .iter()
            .map(|img| resample(img, POOL_SIDE, POOL_SIDE).map(Tensor::into_data))
            .collect::<Result<_>>()?,
        Extractor::RandProj(k) => {
            let din = images[0].numel();
            let proj = projection_matrix::<T>(din, k);
            images
                .iter()
                .map(|img| {
                    let x = img.reshape(&[1, din])?;
                    Ok(x.matmul(&proj)?.into_data())
                })
                .collect::<Result<_>>()?
        }
    };
    let d = rows[0].len();
    let n = rows.len();
    let matrix = Tensor::new(vec![n, d], rows.into_iter().flatten().collect())?;
    FeatureSet::new(matrix, extractor.to_string())
}

/// Same embedding for the same `(din, k)` in every process.
fn projection_matrix<T: Scalar>(din: usize, k: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(RANDPROJ_SEED ^ (din as u64).rotate_left(32) ^ k as u64);
    let scale = 1.0 / (din as f64).sqrt();
    Tensor::from_fn(&[din, k], |_| T::lit(rng.sample::<f64, _>(StandardNormal) * scale))
}

/// Serializes features as f32 with a trailing CRC32.
pub fn encode_features<T: Scalar>(features: &FeatureSet<T>) -> Result<Vec<u8>> {
    let n = u32::try_from(features.n()).map_err(|_| Error::Format("too many rows".into()))?;
    let d = u32::try_from(features.dim()).map_err(|_| Error::Format("feature dimension too large".into()))?;
    let id = features.extractor_id.as_bytes();
    let mut buf = Vec::with_capacity(18 + id.len() + features.matrix.numel() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
    buf.extend_from_slice(id);
    for v in features.matrix.data() {
        let f = v.to_f32().ok_or_else(|| Error::Numeric("feature not representable".into()))?;
        buf.extend_from_slice(&f.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corruption("feature file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_features<T: Scalar>(bytes: &[u8]) -> Result<FeatureSet<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("not a feature file".into()))? != FEATURE_MAGIC {
        return Err(Error::Format("bad feature file magic".into()));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let id_len = r.u16()? as usize;
    let id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|_| Error::Format("extractor id is not UTF-8".into()))?
        .to_string();
    let count = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("feature dimensions {n} x {d} overflow")))?;
    if count > bytes.len() {
        return Err(Error::Corruption(format!(
            "feature file declares {n} x {d} values but holds {} bytes",
            bytes.len()
        )));
    }
    let raw = r.take(count)?;
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(Error::Corruption("trailing bytes after feature checksum".into()));
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::Corruption("feature file checksum mismatch".into()));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    FeatureSet::new(Tensor::new(vec![n, d], data)?, id)
}

pub fn save_features<T: Scalar>(features: &FeatureSet<T>, path: &Path) -> Result<()> {
    let bytes = encode_features(features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<FeatureSet<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// True when the file starts with the feature-file magic.
pub fn is_feature_file(path: &Path) -> bool {
    use std::io::Read;
    let mut head = [0u8; 4];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == FEATURE_MAGIC)
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_set(n: usize, d: usize, seed: u64) -> FeatureSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Tensor::from_fn(&[n, d], |_| rng.sample::<f32, _>(StandardNormal));
        FeatureSet::new(m, "randproj-16").unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let f = random_set(10, 16, 1);
        let back: FeatureSet<f32> = decode_features(&encode_features(&f).unwrap()).unwrap();
        assert_eq!(back.extractor_id, f.extractor_id);
        assert!(back
            .matrix
            .data()
            .iter()
            .zip(f.matrix.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = encode_features(&random_set(10, 16, 2)).unwrap();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(decode_features::<f64>(cut), Err(Error::Corruption(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode_features::<f64>(&flipped), Err(Error::Corruption(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_features::<f64>(&magic), Err(Error::Format(_))));
    }

    #[test]
    fn overflowing_header_rejected() {
        let mut bytes = encode_features(&random_set(3, 2, 3)).unwrap();
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_features::<f64>(&bytes).is_err());
    }

    #[test]
    fn extractor_ids() {
        assert_eq!("pool".parse::<Extractor>().unwrap(), Extractor::Pool);
        assert_eq!("randproj-64".parse::<Extractor>().unwrap(), Extractor::RandProj(64));
        assert!("inception".parse::<Extractor>().is_err());
        assert!("randproj-0".parse::<Extractor>().is_err());
    }

    #[test]
    fn pool_dimension_and_constant_rows() {
        let imgs: Vec<Tensor<f64>> = (0..4).map(|_| Tensor::full(&[3, 64, 64], 0.25)).collect();
        let f = extract_features(&imgs, Extractor::Pool).unwrap();
        assert_eq!(f.dim(), 192);
        for i in 1..4 {
            assert_eq!(f.row(i), f.row(0));
        }
        let p = extract_features(&imgs, Extractor::RandProj(64)).unwrap();
        assert_eq!(p.dim(), 64);
        assert_eq!(p.row(0), p.row(3));
    }

    #[test]
    fn mismatched_extractors_not_comparable() {
        let a = random_set(4, 16, 4);
        let mut b = random_set(4, 16, 5);
        b.extractor_id = "pool".into();
        assert!(matches!(a.check_comparable(&b), Err(Error::Contract(_))));
    }
}
