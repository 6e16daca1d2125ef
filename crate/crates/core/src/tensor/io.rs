//! PLTT v1 binary container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..8  | magic `PLTTv1\r\n` |
//! | 8..12 | u32 version (1) |
//! | 12..16 | u32 payload kind |
//! | 16..44 | u32 dims `(S_cam_w, S_cam_h, S_proj_w, S_proj_h, 4, 4, Γ)` |
//! | 44 | u8 coaxial flag |
//! | 45.. | f64 payload in index order `(s, s', p, p', t)` |
//! | rest | UTF-8 TOML metadata |
//!
//! Reduced arrays keep unit axes: illumination is `(1, 1, pw, ph, 1, 4, Γ)`,
//! detected light `(cw, ch, 1, 1, 4, 1, Γ)`, and measurements put the row count
//! in the first polarimetric slot `(cw, ch, pw, ph, K', 1, Γ)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{DetectedTensor, IlluminationTensor, PixelGrid, TensorMeta, TransportTensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PLTTv1\r\n";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16 + 7 * 4 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum ContainerKind {
    Transport = 0,
    Illumination = 1,
    Detected = 2,
    Measurement = 3,
}

impl ContainerKind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => ContainerKind::Transport,
            1 => ContainerKind::Illumination,
            2 => ContainerKind::Detected,
            3 => ContainerKind::Measurement,
            other => return Err(Error::Format(format!("unknown PLTT payload kind {other}"))),
        })
    }
}

/// Raw contents of a PLTT file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub dims: [u32; 7],
    pub coaxial: bool,
    pub payload: Vec<f64>,
    pub metadata: String,
}

impl Container {
    pub fn expected_len(dims: &[u32; 7]) -> usize {
        dims.iter().map(|&d| d as usize).product()
    }

    fn expect_kind(&self, kind: ContainerKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind:?} payload, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn write_container<W: Write>(mut w: W, c: &Container) -> Result<()> {
    if c.payload.len() != Container::expected_len(&c.dims) {
        return Err(Error::DimensionMismatch(format!(
            "payload has {} values, dims {:?} require {}",
            c.payload.len(),
            c.dims,
            Container::expected_len(&c.dims)
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * c.payload.len() + c.metadata.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(c.kind as u32).to_le_bytes());
    for d in c.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.push(c.coaxial as u8);
    for v in &c.payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(c.metadata.as_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<Container> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a PLTT v1 file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PLTT version {version}")));
    }
    let kind = ContainerKind::from_u32(u32_at(12))?;
    let mut dims = [0u32; 7];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32_at(16 + 4 * i);
    }
    let coaxial = match bytes[44] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("invalid coaxial flag {other}"))),
    };
    let n = Container::expected_len(&dims);
    let payload_end = HEADER_LEN
        .checked_add(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("dims overflow".into()))?,
        )
        .ok_or_else(|| Error::Format("dims overflow".into()))?;
    if bytes.len() < payload_end {
        return Err(Error::Format(format!(
            "truncated payload: need {payload_end} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = bytes[HEADER_LEN..payload_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let metadata = String::from_utf8(bytes[payload_end..].to_vec())
        .map_err(|_| Error::Format("metadata block is not UTF-8".into()))?;
    Ok(Container {
        kind,
        dims,
        coaxial,
        payload,
        metadata,
    })
}

fn grid(w: u32, h: u32) -> PixelGrid {
    PixelGrid::new(w as usize, h as usize)
}

fn check_polarimetric(dims: &[u32; 7], expect: (u32, u32)) -> Result<()> {
    if (dims[4], dims[5]) != expect {
        return Err(Error::Format(format!(
            "polarimetric dims {}x{} where {}x{} expected",
            dims[4], dims[5], expect.0, expect.1
        )));
    }
    Ok(())
}

pub(crate) fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Format(format!("metadata serialization: {e}")))
}

pub(crate) fn from_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(format!("metadata: {e}")))
}

impl TransportTensor {
    pub fn to_container(&self) -> Result<Container> {
        let (c, p) = (self.camera(), self.projector());
        Ok(Container {
            kind: ContainerKind::Transport,
            dims: [
                c.width as u32,
                c.height as u32,
                p.width as u32,
                p.height as u32,
                4,
                4,
                self.bins() as u32,
            ],
            coaxial: self.is_coaxial(),
            payload: self.data().to_vec(),
            metadata: to_toml(&self.meta)?,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind(ContainerKind::Transport)?;
        check_polarimetric(&c.dims, (4, 4))?;
        let meta: TensorMeta = from_toml(&c.metadata)?;
        TransportTensor::from_vec(
            grid(c.dims[0], c.dims[1]),
            grid(c.dims[2], c.dims[3]),
            c.coaxial,
            c.dims[6] as usize,
            c.payload,
            meta,
        )
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_container(w, &self.to_container()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::from_container(read_container(r)?)
    }
}

#[derive(Serialize, Deserialize)]
struct IlluminationMeta {
    time_bin_width: Option<f64>,
}

impl IlluminationTensor {
    pub fn to_container(&self) -> Result<Container> {
        let p = self.projector();
        Ok(Container {
            kind: ContainerKind::Illumination,
            dims: [
                1,
                1,
                p.width as u32,
                p.height as u32,
                1,
                4,
                self.bins() as u32,
            ],
            coaxial: false,
            payload: self.data().to_vec(),
            metadata: to_toml(&IlluminationMeta {
                time_bin_width: self.time_bin_width,
            })?,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind(ContainerKind::Illumination)?;
        check_polarimetric(&c.dims, (1, 4))?;
        let meta: IlluminationMeta = from_toml(&c.metadata)?;
        IlluminationTensor::from_vec(
            grid(c.dims[2], c.dims[3]),
            c.dims[6] as usize,
            c.payload,
            meta.time_bin_width,
        )
    }
}

impl DetectedTensor {
    pub fn to_container(&self) -> Result<Container> {
        let c = self.camera();
        Ok(Container {
            kind: ContainerKind::Detected,
            dims: [
                c.width as u32,
                c.height as u32,
                1,
                1,
                4,
                1,
                self.bins() as u32,
            ],
            coaxial: false,
            payload: self.data().to_vec(),
            metadata: String::new(),
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind(ContainerKind::Detected)?;
        check_polarimetric(&c.dims, (4, 1))?;
        DetectedTensor::from_vec(grid(c.dims[0], c.dims[1]), c.dims[6] as usize, c.payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::StokesVector;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn transport_round_trip_is_bit_exact(
            cw in 1usize..3, ch in 1usize..3, pw in 1usize..3, bins in 1usize..4,
            coaxial in any::<bool>(), seed in any::<u64>(), width in 1e-13f64..1e-9,
        ) {
            let proj = if coaxial { PixelGrid::single() } else { PixelGrid::new(pw, 1) };
            let n = cw * ch * proj.len() * 16 * bins;
            let mut state = seed | 1;
            let data: Vec<f64> = (0..n).map(|_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                f64::from_bits(state >> 2) % 1e6
            }).map(|v| if v.is_finite() { v } else { 0.5 }).collect();
            let meta = TensorMeta { time_bin_width: width, channel_id: "g".into(), provenance: "test".into() };
            let t = TransportTensor::from_vec(PixelGrid::new(cw, ch), proj, coaxial, bins, data, meta).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = TransportTensor::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn header_layout() {
        let t = TransportTensor::zeros(
            PixelGrid::new(2, 3),
            PixelGrid::new(4, 5),
            6,
            TensorMeta::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        let dims: Vec<u32> = (0..7)
            .map(|i| u32::from_le_bytes(buf[16 + 4 * i..20 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![2, 3, 4, 5, 4, 4, 6]);
        assert_eq!(buf[44], 0);
        let meta = std::str::from_utf8(&buf[45 + 8 * 6 * 20 * 16..]).unwrap();
        assert!(meta.contains("time_bin_width"));
    }

    #[test]
    fn reduced_arrays_round_trip() {
        let p = IlluminationTensor::steady(
            PixelGrid::new(2, 1),
            &[
                StokesVector::unpolarized(1.0),
                StokesVector::new(1.0, 0.5, 0.0, 0.0),
            ],
        )
        .unwrap();
        let back = IlluminationTensor::from_container(p.to_container().unwrap()).unwrap();
        assert_eq!(back, p);
        let d = DetectedTensor::from_vec(PixelGrid::new(1, 2), 2, (0..16).map(f64::from).collect())
            .unwrap();
        let mut buf = Vec::new();
        write_container(&mut buf, &d.to_container().unwrap()).unwrap();
        assert_eq!(
            DetectedTensor::from_container(read_container(buf.as_slice()).unwrap()).unwrap(),
            d
        );
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(read_container(&b"NOTPLTT"[..]).is_err());
        let t = TransportTensor::zeros(
            PixelGrid::single(),
            PixelGrid::single(),
            2,
            TensorMeta::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert!(read_container(&buf[..60]).is_err());
        let c = read_container(buf.as_slice()).unwrap();
        assert!(IlluminationTensor::from_container(c).is_err());
    }
}
