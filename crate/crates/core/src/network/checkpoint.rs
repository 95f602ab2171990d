//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "GUNW" | u32 version (1) | u8 scalar width
//! topology: u8 mode (0 = ratio, 1 = explicit sizes)
//!           mode 0: u32 num, u32 den    mode 1: u32 lr_h, lr_w, hr_h, hr_w
//!           u32 steps | u32 depth | u32 channels | u8 bn_on_input | u8 backward_resample
//! u32 tensor count, then per tensor:
//!           u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | raw scalars
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{GunError, Result};
use crate::layers::BackwardResample;
use crate::network::model::GunModel;
use crate::network::topology::{GunTopology, Magnification};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"GUNW";
pub const VERSION: u32 = 1;

/// Serializes a model to bytes.
pub fn encode_checkpoint<T: Scalar>(model: &GunModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::WIDTH);
    let t = model.topology();
    match t.magnification {
        Magnification::Ratio { num, den } => {
            out.push(0);
            out.extend_from_slice(&num.to_le_bytes());
            out.extend_from_slice(&den.to_le_bytes());
        }
        Magnification::Explicit { lr, hr } => {
            out.push(1);
            for v in [lr.0, lr.1, hr.0, hr.1] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for v in [t.steps, t.depth, t.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(t.bn_on_input as u8);
    out.push(match t.backward_resample {
        BackwardResample::Adjoint => 0,
        BackwardResample::Plain => 1,
    });
    let tensors = model.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, values) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save_checkpoint<T: Scalar>(model: &GunModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(model);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<GunModel<T>> {
    decode_checkpoint(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GunError::checkpoint(
                field,
                format!("file truncated at byte {} (needed {n} more)", self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

fn read_scalar<T: Scalar>(bytes: &[u8], width: u8) -> T {
    match width {
        4 => T::from_f64_lossy(f32::read_le(bytes) as f64),
        _ => T::from_f64_lossy(f64::read_le(bytes)),
    }
}

/// Parses a model from bytes. Scalars stored at a different width than `T`
/// are converted.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<GunModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(GunError::checkpoint("magic", "not a GUNW checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(GunError::checkpoint("version", format!("unsupported version {version}")));
    }
    let width = r.u8("scalar width")?;
    if width != 4 && width != 8 {
        return Err(GunError::checkpoint("scalar width", format!("unsupported scalar width {width}")));
    }
    let magnification = match r.u8("topology.mode")? {
        0 => Magnification::Ratio {
            num: r.u32("topology.scale_num")?,
            den: r.u32("topology.scale_den")?,
        },
        1 => Magnification::Explicit {
            lr: (r.u32("topology.lr_h")?, r.u32("topology.lr_w")?),
            hr: (r.u32("topology.hr_h")?, r.u32("topology.hr_w")?),
        },
        m => return Err(GunError::checkpoint("topology.mode", format!("unknown mode {m}"))),
    };
    let steps = r.u32("topology.steps")? as usize;
    let depth = r.u32("topology.depth")? as usize;
    let channels = r.u32("topology.channels")? as usize;
    let bn_on_input = match r.u8("topology.bn_on_input")? {
        0 => false,
        1 => true,
        v => return Err(GunError::checkpoint("topology.bn_on_input", format!("invalid flag {v}"))),
    };
    let backward_resample = match r.u8("topology.backward_resample")? {
        0 => BackwardResample::Adjoint,
        1 => BackwardResample::Plain,
        v => return Err(GunError::checkpoint("topology.backward_resample", format!("invalid mode {v}"))),
    };
    let topology = GunTopology {
        magnification,
        steps,
        depth,
        channels,
        bn_on_input,
        backward_resample,
    };
    topology
        .validate()
        .map_err(|e| GunError::checkpoint("topology", e.to_string()))?;
    // reject absurd sizes before allocating a model for them
    let expected_bytes = (channels * channels * 9) as u128 * (steps * depth) as u128 * width as u128;
    if expected_bytes > bytes.len() as u128 * 2 + 1024 {
        return Err(GunError::checkpoint("topology", "declared topology is larger than the file"));
    }
    let mut model = GunModel::<T>::zeros(topology).map_err(|e| GunError::checkpoint("topology", e.to_string()))?;

    let expected: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(name, dims, _)| (name, dims))
        .collect();
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(GunError::checkpoint(
            "tensor count",
            format!("expected {} tensors for this topology, found {count}", expected.len()),
        ));
    }
    let mut seen = vec![false; expected.len()];
    let mut bn_eps = None;
    let mut bn_momentum = None;
    for i in 0..count {
        let len = r.u16(&format!("tensor[{i}].name length"))? as usize;
        let name = std::str::from_utf8(r.take(len, &format!("tensor[{i}].name"))?)
            .map_err(|_| GunError::checkpoint(format!("tensor[{i}].name"), "invalid UTF-8"))?
            .to_string();
        let idx = expected
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| GunError::checkpoint(&name, "unexpected tensor for this topology"))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(GunError::checkpoint(&name, "duplicate tensor"));
        }
        let ndim = r.u8(&format!("{name}.ndim"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for d in 0..ndim {
            dims.push(r.u32(&format!("{name}.dims[{d}]"))? as usize);
        }
        if dims != expected[idx].1 {
            return Err(GunError::checkpoint(
                &name,
                format!("shape mismatch: expected {:?}, found {:?}", expected[idx].1, dims),
            ));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * width as usize, &format!("{name}.data"))?;
        let values: Vec<T> = raw.chunks_exact(width as usize).map(|c| read_scalar(c, width)).collect();
        match name.as_str() {
            "bn.eps" => bn_eps = Some(values[0]),
            "bn.momentum" => bn_momentum = Some(values[0]),
            _ => model
                .tensor_mut(&name)
                .ok_or_else(|| GunError::checkpoint(&name, "no slot for tensor"))?
                .copy_from_slice(&values),
        }
    }
    if r.pos != bytes.len() {
        return Err(GunError::checkpoint("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    for bn in model.bn_states_mut() {
        if let Some(e) = bn_eps {
            bn.eps = e;
        }
        if let Some(m) = bn_momentum {
            bn.momentum = m;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::model::build_gun;

    fn small() -> GunModel<f32> {
        let mut t = GunTopology::for_scale(3);
        t.steps = 2;
        t.depth = 2;
        t.channels = 3;
        build_gun(t, 17).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&small());
        assert_eq!(&bytes[..4], b"GUNW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 4);
        assert_eq!(bytes[9], 0);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 1);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = small();
        m.set_bn_hyper(1e-3, 0.8);
        m.steps[1][0].bn.as_mut().unwrap().running_var[2] = 0.123;
        let back: GunModel<f32> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), encode_checkpoint(&m));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let bytes = encode_checkpoint(&small());
        for cut in [0, 3, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_checkpoint::<f32>(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, GunError::Checkpoint { .. }), "{err}");
        }
    }

    #[test]
    fn unsupported_version_is_named() {
        let mut bytes = encode_checkpoint(&small());
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        let err = decode_checkpoint::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported version"), "{err}");
        assert!(err.contains("version"));
    }

    #[test]
    fn bad_magic_and_shape_mismatch() {
        let mut bytes = encode_checkpoint(&small());
        bytes[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bytes).unwrap_err().to_string().contains("magic"));

        // claim 4 channels while the tensors hold 3
        let mut bytes = encode_checkpoint(&small());
        let channels_at = 4 + 4 + 1 + 1 + 8 + 8;
        bytes[channels_at..channels_at + 4].copy_from_slice(&4u32.to_le_bytes());
        let err = decode_checkpoint::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("input.weight") || err.contains("tensor count"), "{err}");
    }

    #[test]
    fn width_conversion_loads_f64_into_f32() {
        let mut t = GunTopology::for_scale(2);
        t.steps = 1;
        t.depth = 1;
        t.channels = 2;
        let m64 = build_gun::<f64>(t, 4).unwrap();
        let m32: GunModel<f32> = decode_checkpoint(&encode_checkpoint(&m64)).unwrap();
        assert_eq!(m32.input.conv.weight.data()[0], m64.input.conv.weight.data()[0] as f32);
    }
}
