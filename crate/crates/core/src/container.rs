//! Little-endian binary containers for fingerprints (`SPNF`) and networks
//! (`SPNN`).
//!
//! ```text
//! SPNF: "SPNF" | u8 version=1 | u8 kind | u32 width | u32 height | f32 × width·height
//! SPNN: "SPNN" | u8 version=1 | u16 layers | per layer:
//!       u8 tag | u16 in | u16 out | f32 kernels × out·in·9 | f32 bias × out
//!       | f32 × out for each of mean, var, gamma, beta (batch-norm layers only)
//! ```
//!
//! Layer tag bits: `0x01` ReLU follows, `0x02` batch norm follows.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{BatchNormLayer, Block, ConvLayer, Network};
use crate::signal::{Fingerprint, FingerprintKind};

pub const FINGERPRINT_MAGIC: &[u8; 4] = b"SPNF";
pub const NETWORK_MAGIC: &[u8; 4] = b"SPNN";
pub const VERSION: u8 = 1;

const TAG_RELU: u8 = 0x01;
const TAG_BN: u8 = 0x02;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptContainer(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len().saturating_sub(self.pos)
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptContainer("payload size overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::CorruptContainer(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u8()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::CorruptContainer(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_floats(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_fingerprint(fp: &Fingerprint) -> Result<Vec<u8>> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::CorruptContainer(format!("dimension {v} exceeds u32")))
    };
    let (w, h) = (dim(fp.width())?, dim(fp.height())?);
    let mut out = Vec::with_capacity(14 + 4 * fp.data().len());
    out.extend_from_slice(FINGERPRINT_MAGIC);
    out.push(VERSION);
    out.push(fp.kind().tag());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    push_floats(&mut out, fp.data());
    Ok(out)
}

pub fn decode_fingerprint(bytes: &[u8]) -> Result<Fingerprint> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(FINGERPRINT_MAGIC)?;
    let tag = r.u8()?;
    let kind = FingerprintKind::from_tag(tag)
        .ok_or_else(|| Error::CorruptContainer(format!("unknown fingerprint kind {tag}")))?;
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::CorruptContainer("dimensions overflow".into()))?;
    let data = r.floats(n)?;
    r.finish()?;
    Fingerprint::new(w, h, data, kind)
}

pub fn save_fingerprint(fp: &Fingerprint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_fingerprint(fp)?).map_err(|e| Error::io(path, e))
}

pub fn load_fingerprint(path: impl AsRef<Path>) -> Result<Fingerprint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fingerprint(&bytes)
}

pub fn encode_network(net: &Network<f32>) -> Result<Vec<u8>> {
    net.validate()?;
    let count = u16::try_from(net.blocks.len())
        .map_err(|_| Error::CorruptContainer("more than 65535 layers".into()))?;
    let ch = |v: usize| {
        u16::try_from(v).map_err(|_| Error::CorruptContainer(format!("{v} channels exceed u16")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(NETWORK_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    for b in &net.blocks {
        let mut tag = 0;
        if b.relu {
            tag |= TAG_RELU;
        }
        if b.bn.is_some() {
            tag |= TAG_BN;
        }
        out.push(tag);
        out.extend_from_slice(&ch(b.conv.in_ch)?.to_le_bytes());
        out.extend_from_slice(&ch(b.conv.out_ch)?.to_le_bytes());
        push_floats(&mut out, &b.conv.kernels);
        push_floats(&mut out, &b.conv.bias);
        if let Some(bn) = &b.bn {
            push_floats(&mut out, &bn.running_mean);
            push_floats(&mut out, &bn.running_var);
            push_floats(&mut out, &bn.gamma);
            push_floats(&mut out, &bn.beta);
        }
    }
    Ok(out)
}

pub fn decode_network(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(NETWORK_MAGIC)?;
    let count = r.u16()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for i in 0..count {
        let tag = r.u8()?;
        if tag & !(TAG_RELU | TAG_BN) != 0 {
            return Err(Error::CorruptContainer(format!(
                "layer {i}: unknown tag {tag:#x}"
            )));
        }
        let in_ch = r.u16()? as usize;
        let out_ch = r.u16()? as usize;
        let kernels = r.floats(out_ch * in_ch * 9)?;
        let bias = r.floats(out_ch)?;
        let bn = if tag & TAG_BN != 0 {
            let running_mean = r.floats(out_ch)?;
            let running_var = r.floats(out_ch)?;
            let gamma = r.floats(out_ch)?;
            let beta = r.floats(out_ch)?;
            if running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::CorruptContainer(format!(
                    "layer {i}: negative running variance"
                )));
            }
            Some(BatchNormLayer {
                gamma,
                beta,
                running_mean,
                running_var,
            })
        } else {
            None
        };
        blocks.push(Block {
            conv: ConvLayer {
                in_ch,
                out_ch,
                kernels,
                bias,
            },
            bn,
            relu: tag & TAG_RELU != 0,
        });
    }
    r.finish()?;
    let net = Network { blocks };
    if net
        .params()
        .iter()
        .flat_map(|p| p.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::CorruptContainer(
            "non-finite network parameter".into(),
        ));
    }
    net.validate()?;
    Ok(net)
}

pub fn save_network(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_network(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_layout() {
        let fp = Fingerprint::new(1, 1, vec![0.5], FingerprintKind::MleEstimate).unwrap();
        let bytes = encode_fingerprint(&fp).unwrap();
        assert_eq!(bytes.len(), 14 + 4);
        assert_eq!(&bytes[..4], b"SPNF");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..14], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[14..], &0.5f32.to_le_bytes());
        assert_eq!(decode_fingerprint(&bytes).unwrap().data(), &[0.5]);
    }

    #[test]
    fn truncated_fingerprint_is_corrupt() {
        let fp =
            Fingerprint::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], FingerprintKind::GroundTruth).unwrap();
        let bytes = encode_fingerprint(&fp).unwrap();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(
                decode_fingerprint(&bytes[..cut]),
                Err(Error::CorruptContainer(_))
            ));
        }
    }

    #[test]
    fn magic_and_version_checked() {
        let fp = Fingerprint::zeros(1, 1, FingerprintKind::GroundTruth);
        let mut bytes = encode_fingerprint(&fp).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_fingerprint(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_fingerprint(&bytes),
            Err(Error::CorruptContainer(_))
        ));
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = b"SPNF\x01\x00".to_vec();
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_fingerprint(&bytes),
            Err(Error::CorruptContainer(_))
        ));
    }

    #[test]
    fn network_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNormLayer::new(3);
        bn.running_mean = vec![0.1, -0.2, 0.3];
        bn.running_var = vec![1.5, 0.5, 2.0];
        let net = Network {
            blocks: vec![
                Block {
                    conv: ConvLayer::he_normal(1, 3, &mut rng),
                    bn: None,
                    relu: true,
                },
                Block {
                    conv: ConvLayer::he_normal(3, 3, &mut rng),
                    bn: Some(bn),
                    relu: true,
                },
                Block {
                    conv: ConvLayer::he_normal(3, 1, &mut rng),
                    bn: None,
                    relu: false,
                },
            ],
        };
        let bytes = encode_network(&net).unwrap();
        assert_eq!(&bytes[..4], b"SPNN");
        assert_eq!(decode_network(&bytes).unwrap(), net);
        assert!(decode_network(&bytes[..bytes.len() - 2]).is_err());
    }

    proptest! {
        #[test]
        fn fingerprint_roundtrip_is_bit_exact(
            w in 1usize..9,
            h in 1usize..9,
            seed in any::<u64>(),
            kind in 0u8..3,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..w * h).map(|_| rng.random::<f32>() - 0.5).collect();
            let fp = Fingerprint::new(w, h, data, FingerprintKind::from_tag(kind).unwrap()).unwrap();
            let back = decode_fingerprint(&encode_fingerprint(&fp).unwrap()).unwrap();
            prop_assert_eq!(back.kind(), fp.kind());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = fp.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
