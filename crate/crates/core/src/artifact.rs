//! Single-file model artifact holding the CVAE and the latent mixture.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "FDAY" | u32 version | u32 Z | u32 L
//! per network (encoder, decoder): u32 layers, then per layer u32 in, u32 out, u8 activation
//! f64 lambda_mmd | f64 lambda_q | u32 n_bw | n_bw x f64
//! u8 scheme | 48 x f64 location | 48 x f64 scale
//! encoder params | decoder params            (per layer: W row-major [in x out], then b)
//! "GMM\0" | u32 K | u32 D | u32 booleans | u32 group0 | u32 group1
//! K x f64 weights | K x D f64 means | K x D(D+1)/2 f64 packed lower Cholesky rows
//! u32 n_combos | per combo: 5 x u8 labels, u64 households
//! u32 CRC32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::cvae::{CvaeModel, LossWeights};
use crate::error::{Error, Result};
use crate::latent_gmm::{GaussianMixture, LatentMixture, Population};
use crate::nn::{Activation, Dense, DenseNet};
use crate::profile_store::{
    EnergyRating, LabelLayout, LabelVector, NormalizationParams, NormalizationScheme, PropertyType, LABEL_DIM, PERIODS,
};

pub const MAGIC: &[u8; 4] = b"FDAY";
pub const FORMAT_VERSION: u32 = 1;
const MIXTURE_TAG: &[u8; 4] = b"GMM\0";
const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub model: CvaeModel,
    pub mixture: LatentMixture,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Artifact(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Artifact("count overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.buf.len() / 8 {
            return Err(Error::Artifact(format!("block of {n} values exceeds file size")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn width(&mut self, what: &str) -> Result<usize> {
        let v = self.u32()?;
        if v == 0 || v > MAX_WIDTH {
            return Err(Error::Artifact(format!("{what} {v} out of range")));
        }
        Ok(v)
    }
}

fn write_net_header(w: &mut Writer, net: &DenseNet) {
    w.u32(net.layers().len());
    for l in net.layers() {
        w.u32(l.inputs());
        w.u32(l.outputs());
        w.u8(l.activation.tag());
    }
}

fn read_net_header(r: &mut Reader) -> Result<DenseNet> {
    let n = r.u32()?;
    if n == 0 || n > MAX_LAYERS {
        return Err(Error::Artifact(format!("layer count {n} out of range")));
    }
    let layers = (0..n)
        .map(|_| {
            let (i, o) = (r.width("layer input")?, r.width("layer output")?);
            let tag = r.u8()?;
            let activation =
                Activation::from_tag(tag).ok_or_else(|| Error::Artifact(format!("unknown activation tag {tag}")))?;
            Ok(Dense { weights: DMatrix::zeros(i, o), bias: DVector::zeros(o), activation })
        })
        .collect::<Result<Vec<_>>>()?;
    DenseNet::from_layers(layers).map_err(|e| Error::Artifact(e.to_string()))
}

fn label_bytes(l: &LabelVector) -> [u8; 5] {
    [
        u8::from(l.has_ev),
        u8::from(l.has_heat_pump),
        u8::from(l.smart_tariff),
        l.property_type.index() as u8,
        l.energy_rating.index() as u8,
    ]
}

fn read_label(r: &mut Reader) -> Result<LabelVector> {
    let b = r.take(5)?;
    let flag = |v: u8| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Artifact(format!("invalid boolean byte {v}"))),
    };
    Ok(LabelVector {
        has_ev: flag(b[0])?,
        has_heat_pump: flag(b[1])?,
        smart_tariff: flag(b[2])?,
        property_type: *PropertyType::ALL
            .get(b[3] as usize)
            .ok_or_else(|| Error::Artifact(format!("property index {}", b[3])))?,
        energy_rating: *EnergyRating::ALL
            .get(b[4] as usize)
            .ok_or_else(|| Error::Artifact(format!("rating index {}", b[4])))?,
    })
}

impl Artifact {
    pub fn new(model: CvaeModel, mixture: LatentMixture) -> Result<Self> {
        if mixture.latent_dim != model.latent_dim {
            return Err(Error::DimensionMismatch(format!(
                "mixture latent dim {} vs model {}",
                mixture.latent_dim, model.latent_dim
            )));
        }
        Ok(Artifact { model, mixture })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION as usize);
        w.u32(m.latent_dim);
        w.u32(LABEL_DIM);
        write_net_header(&mut w, &m.encoder);
        write_net_header(&mut w, &m.decoder);
        w.f64(m.loss_weights.mmd);
        w.f64(m.loss_weights.quantile);
        w.u32(m.bandwidths.len());
        w.f64s(&m.bandwidths);
        w.u8(m.normalization.scheme.tag());
        w.f64s(&m.normalization.location);
        w.f64s(&m.normalization.scale);
        w.f64s(&m.encoder.flat_params());
        w.f64s(&m.decoder.flat_params());

        let g = &self.mixture.gmm;
        w.0.extend_from_slice(MIXTURE_TAG);
        w.u32(g.components());
        w.u32(g.dim());
        let layout = self.mixture.label_layout;
        w.u32(layout.booleans as usize);
        w.u32(layout.groups[0] as usize);
        w.u32(layout.groups[1] as usize);
        w.f64s(g.weights());
        for mean in g.means() {
            w.f64s(mean.iter());
        }
        for l in g.cholesky_factors() {
            for i in 0..g.dim() {
                for j in 0..=i {
                    w.f64(l[(i, j)]);
                }
            }
        }
        let counts = self.mixture.population.counts();
        w.u32(counts.len());
        for (label, n) in counts {
            w.0.extend_from_slice(&label_bytes(label));
            w.u64(*n);
        }
        let crc = crc32fast::hash(&w.0);
        w.0.extend_from_slice(&crc.to_le_bytes());
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Artifact("not a model artifact (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::ChecksumMismatch);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Artifact(format!("unsupported format version {version}")));
        }
        let z = r.width("latent dimension")?;
        let l = r.u32()?;
        if l != LABEL_DIM {
            return Err(Error::Artifact(format!("label width {l}, expected {LABEL_DIM}")));
        }
        let mut encoder = read_net_header(&mut r)?;
        let mut decoder = read_net_header(&mut r)?;
        let loss_weights = LossWeights { mmd: r.f64()?, quantile: r.f64()? };
        let n_bw = r.u32()?;
        let bandwidths = r.f64s(n_bw)?;
        let tag = r.u8()?;
        let scheme = NormalizationScheme::from_tag(tag)
            .ok_or_else(|| Error::Artifact(format!("unknown normalization tag {tag}")))?;
        let location = r.f64s(PERIODS)?;
        let scale = r.f64s(PERIODS)?;
        let normalization = NormalizationParams::new(scheme, location, scale)?;
        encoder.set_flat_params(&r.f64s(encoder.param_count())?)?;
        decoder.set_flat_params(&r.f64s(decoder.param_count())?)?;
        let model = CvaeModel::from_parts(encoder, decoder, z, loss_weights, bandwidths, normalization)?;

        if r.take(4)? != MIXTURE_TAG {
            return Err(Error::Artifact("missing mixture section".into()));
        }
        let k = r.width("component count")?;
        let d = r.width("mixture dimension")?;
        let layout = LabelLayout { booleans: r.u32()? as u32, groups: [r.u32()? as u32, r.u32()? as u32] };
        if !layout.is_canonical() {
            return Err(Error::Artifact(format!("unsupported label layout {layout:?}")));
        }
        let weights = r.f64s(k)?;
        let means = (0..k).map(|_| r.f64s(d).map(DVector::from_vec)).collect::<Result<Vec<_>>>()?;
        let cholesky = (0..k)
            .map(|_| {
                let packed = r.f64s(d * (d + 1) / 2)?;
                let mut m = DMatrix::zeros(d, d);
                let mut it = packed.into_iter();
                for i in 0..d {
                    for j in 0..=i {
                        m[(i, j)] = it.next().expect("packed length");
                    }
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let gmm = GaussianMixture::from_cholesky(weights, means, cholesky)?;
        let n_combos = r.u32()?;
        let mut counts = BTreeMap::new();
        for _ in 0..n_combos {
            let label = read_label(&mut r)?;
            counts.insert(label, r.u64()?);
        }
        if r.pos != body.len() {
            return Err(Error::Artifact(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let mixture = LatentMixture::new(gmm, z, Population::new(counts))?;
        Artifact::new(model, mixture)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Short identifier derived from the serialized bytes.
    pub fn version_id(&self) -> String {
        let bytes = self.to_bytes();
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        format!("v{FORMAT_VERSION}-{crc:08x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::Architecture;
    use crate::latent_gmm::{fit_gmm, GmmConfig};
    use crate::profile_store::PropertyType;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_artifact() -> Artifact {
        let z = 3;
        let arch = Architecture { latent_dim: z, encoder_hidden: vec![6], decoder_hidden: vec![5, 4], ..Default::default() };
        let norm = NormalizationParams::new(
            NormalizationScheme::GlobalLog1pStandard,
            (0..48).map(|t| t as f64 * 0.01).collect(),
            vec![0.7; 48],
        )
        .unwrap();
        let model = CvaeModel::new(&arch, LossWeights { mmd: 1.5, quantile: 0.5 }, vec![1.0, 2.0], norm, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<LabelVector> = LabelVector::all().step_by(37).collect();
        let data = DMatrix::from_fn(200, z + LABEL_DIM, |i, j| {
            if j < z {
                rng.random::<f64>()
            } else {
                labels[i % labels.len()].encode_onehot()[j - z]
            }
        });
        let (gmm, _) = fit_gmm(&data, &GmmConfig { components: 3, seed: 2, ..Default::default() }).unwrap();
        let counts = labels.iter().enumerate().map(|(i, l)| (*l, 3 + i)).collect();
        let mixture = LatentMixture::new(gmm, z, Population::new(counts)).unwrap();
        Artifact::new(model, mixture).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let a = small_artifact();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"FDAY");
        let b = Artifact::from_bytes(&bytes).unwrap();
        assert_eq!(b.to_bytes(), bytes);
        assert_eq!(a.model, b.model);
        assert_eq!(a.mixture.gmm.cholesky_factors(), b.mixture.gmm.cholesky_factors());
        assert_eq!(a.mixture.population, b.mixture.population);
        assert_eq!(a.mixture.sample(50, 4), b.mixture.sample(50, 4));
    }

    #[test]
    fn trailing_checksum_covers_everything() {
        let bytes = small_artifact().to_bytes();
        let n = bytes.len();
        let stored = u32::from_le_bytes(bytes[n - 4..].try_into().unwrap());
        assert_eq!(stored, crc32fast::hash(&bytes[..n - 4]));
        for pos in [5, n / 2, n - 5, n - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            let err = Artifact::from_bytes(&bad).unwrap_err();
            assert!(matches!(err, Error::ChecksumMismatch), "{err}");
            assert_eq!(err.to_string(), "checksum mismatch");
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(Artifact::from_bytes(b"nope"), Err(Error::Artifact(_))));
        let bytes = small_artifact().to_bytes();
        let mut cut = bytes[..bytes.len() / 2].to_vec();
        let crc = crc32fast::hash(&cut);
        cut.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(Artifact::from_bytes(&cut), Err(Error::Artifact(_))));
    }

    #[test]
    fn label_bytes_round_trip() {
        for l in LabelVector::all() {
            let b = label_bytes(&l);
            assert_eq!(read_label(&mut Reader { buf: &b, pos: 0 }).unwrap(), l);
        }
        let bad = [0, 0, 2, PropertyType::COUNT as u8, 0];
        assert!(read_label(&mut Reader { buf: &bad, pos: 0 }).is_err());
    }

    #[test]
    fn save_load_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fday");
        let a = small_artifact();
        a.save(&path).unwrap();
        assert_eq!(Artifact::load(&path).unwrap().to_bytes(), a.to_bytes());
        assert!(matches!(Artifact::load(dir.path().join("absent")), Err(Error::MissingFile(_))));
        assert!(a.version_id().starts_with("v1-"));
    }
}
