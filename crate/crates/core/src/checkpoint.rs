//! Model checkpoint serialization.
//!
//! Little-endian binary layout:
//!   magic  "RGSG" (4 bytes)
//!   version u32 (= 1)
//!   config: num_classes, conv1, conv2, head, pooled as u32;
//!           arch, fusion, loss_mode, softmax_order as u8
//!   param count u32, then per parameter:
//!     name length u16, name bytes, ndim u8, dims u32 each, values f64 each
//! Only parameter values are stored; gradient and momentum buffers are
//! rebuilt zeroed on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossMode;
use crate::models::{Architecture, FusionMode, ModelConfig, ModelState, SoftmaxOrder};
use crate::tensor::{Param, Tensor};

const MAGIC: &[u8; 4] = b"RGSG";
const VERSION: u32 = 1;

fn arch_tag(a: Architecture) -> u8 {
    match a {
        Architecture::EndToEnd => 0,
        Architecture::Baseline => 1,
    }
}

fn fusion_tag(f: FusionMode) -> u8 {
    match f {
        FusionMode::BoxOnly => 0,
        FusionMode::RegionOnly => 1,
        FusionMode::Tied => 2,
        FusionMode::Separate => 3,
    }
}

fn loss_tag(l: LossMode) -> u8 {
    match l {
        LossMode::Balanced => 0,
        LossMode::Unbalanced => 1,
    }
}

fn order_tag(o: SoftmaxOrder) -> u8 {
    match o {
        SoftmaxOrder::MaxThenSoftmax => 0,
        SoftmaxOrder::SoftmaxThenMax => 1,
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint(out: &mut impl Write, state: &ModelState) -> Result<()> {
    let c = &state.config;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [
        c.num_classes as u32,
        c.conv1_channels as u32,
        c.conv2_channels as u32,
        c.head_width as u32,
        c.pooled_size as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&[
        arch_tag(c.arch),
        fusion_tag(c.fusion),
        loss_tag(c.loss_mode),
        order_tag(c.softmax_order),
    ])?;
    let params = state.named_params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, param) in params {
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[param.value.ndim() as u8])?;
        for &d in param.value.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in param.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<ModelState> {
    let mut r = Reader { inner: input };
    if &r.bytes::<4>()? != MAGIC {
        return Err(bad("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(bad("unsupported version"));
    }
    let num_classes = r.u32()? as usize;
    let conv1_channels = r.u32()? as usize;
    let conv2_channels = r.u32()? as usize;
    let head_width = r.u32()? as usize;
    let pooled_size = r.u32()? as usize;
    let arch = match r.u8()? {
        0 => Architecture::EndToEnd,
        1 => Architecture::Baseline,
        t => return Err(bad(format!("unknown architecture tag {}", t))),
    };
    let fusion = match r.u8()? {
        0 => FusionMode::BoxOnly,
        1 => FusionMode::RegionOnly,
        2 => FusionMode::Tied,
        3 => FusionMode::Separate,
        t => return Err(bad(format!("unknown fusion tag {}", t))),
    };
    let loss_mode = match r.u8()? {
        0 => LossMode::Balanced,
        1 => LossMode::Unbalanced,
        t => return Err(bad(format!("unknown loss tag {}", t))),
    };
    let softmax_order = match r.u8()? {
        0 => SoftmaxOrder::MaxThenSoftmax,
        1 => SoftmaxOrder::SoftmaxThenMax,
        t => return Err(bad(format!("unknown softmax order tag {}", t))),
    };
    let config = ModelConfig {
        arch,
        num_classes,
        conv1_channels,
        conv2_channels,
        head_width,
        pooled_size,
        fusion,
        loss_mode,
        softmax_order,
    };
    config.validate().map_err(|e| bad(format!("invalid config: {}", e)))?;

    let mut state = ModelState::new(config, 0)?;
    let count = r.u32()? as usize;
    let expected = state.named_params().len();
    if count != expected {
        return Err(bad(format!("expected {} params, found {}", expected, count)));
    }
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.inner.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("param name not utf-8"))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(r.bytes()?));
        }
        let value = Tensor::from_vec(&shape, data)?;
        let mut slot = None;
        for (n, p) in state.params_mut() {
            if n == name {
                slot = Some(p);
                break;
            }
        }
        let Some(param) = slot else {
            return Err(bad(format!("unknown param `{}`", name)));
        };
        // shapes must match the config-derived layout
        if param.value.shape() != value.shape() {
            return Err(bad(format!(
                "param `{}` shape {:?} does not match config {:?}",
                name,
                value.shape(),
                param.value.shape()
            )));
        }
        *param = Param::new(value);
    }
    Ok(state)
}

pub fn save(path: &Path, state: &ModelState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, state)?;
    Ok(fs::write(path, buf)?)
}

pub fn load(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_config() {
        let mut config = ModelConfig::end_to_end(5);
        config.fusion = FusionMode::Tied;
        config.loss_mode = LossMode::Unbalanced;
        let state = ModelState::new(config.clone(), 77).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &state).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, config);
        for ((_, a), (_, b)) in state.named_params().iter().zip(back.named_params()) {
            assert_eq!(a.value, b.value);
            assert!(b.grad.data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        let state = ModelState::new(ModelConfig::end_to_end(3), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &state).unwrap();
        buf[0] = b'X';
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());

        let mut truncated = Vec::new();
        write_checkpoint(&mut truncated, &state).unwrap();
        truncated.truncate(truncated.len() / 2);
        assert!(read_checkpoint(&mut truncated.as_slice()).is_err());
    }
}
