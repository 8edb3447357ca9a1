//! Binary network checkpoints: magic string, version, serialized spec,
//! little-endian f64 parameter vector.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::netcore::net::NetHandle;
use crate::netcore::spec::{Activation, ConvLayer, NetSpec, Skip, SkipFrom};

const MAGIC: &[u8; 6] = b"BFNET\0";
const VERSION: u32 = 1;

pub fn save_params(net: &NetHandle, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let spec = net.spec();
    buf.extend_from_slice(&(spec.input_channels as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
    for layer in &spec.layers {
        buf.extend_from_slice(&(layer.kernel as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.in_channels as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.out_channels as u32).to_le_bytes());
        buf.push(layer.activation.code());
    }
    buf.extend_from_slice(&(spec.skips.len() as u32).to_le_bytes());
    for skip in &spec.skips {
        match skip.from {
            SkipFrom::Input => {
                buf.push(0);
                buf.extend_from_slice(&0u32.to_le_bytes());
            }
            SkipFrom::Layer(i) => {
                buf.push(1);
                buf.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&(skip.to as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!(
                "corrupt checkpoint: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_params(path: &Path) -> Result<NetHandle> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a network checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let input_channels = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kernel = r.u32()? as usize;
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let activation = Activation::from_code(r.u8()?)?;
        layers.push(ConvLayer { kernel, in_channels, out_channels, activation });
    }
    let n_skips = r.u32()? as usize;
    let mut skips = Vec::with_capacity(n_skips);
    for _ in 0..n_skips {
        let kind = r.u8()?;
        let idx = r.u32()? as usize;
        let to = r.u32()? as usize;
        let from = match kind {
            0 => SkipFrom::Input,
            1 => SkipFrom::Layer(idx),
            other => {
                return Err(Error::Checkpoint(format!("unknown skip source kind {other}")))
            }
        };
        skips.push(Skip { from, to });
    }
    let spec = NetSpec { input_channels, layers, skips };
    let declared = r.u64()? as usize;
    if declared != spec.param_count() {
        return Err(Error::Checkpoint(format!(
            "corrupt checkpoint: declares {declared} parameters, spec needs {}",
            spec.param_count()
        )));
    }
    let mut params = Vec::with_capacity(declared);
    for _ in 0..declared {
        params.push(r.f64()?);
    }
    if r.pos != data.len() {
        return Err(Error::Checkpoint(format!(
            "corrupt checkpoint: {} trailing bytes",
            data.len() - r.pos
        )));
    }
    NetHandle::from_parts(spec, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::ChannelStack;
    use crate::netcore::net::build_net;
    use crate::netcore::spec::{Activation, NetSpec, SkipFrom};

    fn sample_spec() -> NetSpec {
        NetSpec::conv_stack(2, &[6, 6], 1, 3, Activation::LeakyRelu, Activation::Sigmoid)
            .with_skip(SkipFrom::Input, 2)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = build_net(&sample_spec(), 17).unwrap();
        save_params(&net, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.spec(), net.spec());
        assert_eq!(loaded.params(), net.params());
        let input = ChannelStack::from_data(2, 16, 16, vec![0.25; 2 * 256]).unwrap();
        assert_eq!(
            net.forward(&input).unwrap().data(),
            loaded.forward(&input).unwrap().data()
        );
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = build_net(&sample_spec(), 1).unwrap();
        save_params(&net, &path).unwrap();
        let mut data = std::fs::read(&path).unwrap();
        data[6] = 99; // version field
        std::fs::write(&path, data).unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_params(&path).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = build_net(&sample_spec(), 1).unwrap();
        save_params(&net, &path).unwrap();
        let data = std::fs::read(&path).unwrap();
        std::fs::write(&path, &data[..data.len() - 12]).unwrap();
        assert!(load_params(&path).is_err());
    }

    #[test]
    fn file_size_scales_linearly_with_params() {
        let dir = tempfile::tempdir().unwrap();
        let small = build_net(
            &NetSpec::conv_stack(1, &[4], 1, 3, Activation::Relu, Activation::Sigmoid),
            0,
        )
        .unwrap();
        let large = build_net(
            &NetSpec::conv_stack(1, &[16], 1, 3, Activation::Relu, Activation::Sigmoid),
            0,
        )
        .unwrap();
        let ps = dir.path().join("s.bin");
        let pl = dir.path().join("l.bin");
        save_params(&small, &ps).unwrap();
        save_params(&large, &pl).unwrap();
        let ss = std::fs::metadata(&ps).unwrap().len();
        let sl = std::fs::metadata(&pl).unwrap().len();
        let delta = sl - ss;
        let param_delta = (large.param_count() - small.param_count()) as u64;
        assert_eq!(delta, 8 * param_delta, "8 bytes per extra parameter");
    }
}
