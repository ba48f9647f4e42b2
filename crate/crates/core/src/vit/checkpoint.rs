//! Binary checkpoint: `TVIT` magic, a u32 version, the configuration as
//! little-endian u32 words (real-valued fields as f32 bit patterns), then
//! every parameter group in storage order as a u64 length followed by that
//! many little-endian f32 values.

use std::fs;
use std::path::Path;

use super::{ViTConfig, ViTParameters};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TVIT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(config: &ViTConfig, params: &ViTParameters) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut out = Vec::with_capacity(64 + params.num_params() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for w in config_words(config)? {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for g in params.groups() {
        out.extend_from_slice(&(g.len() as u64).to_le_bytes());
        for &v in g {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ViTConfig, ViTParameters)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut int = || r.u32().map(|v| v as usize);
    let image_h = int()?;
    let image_w = int()?;
    let channels = int()?;
    let patch_size = int()?;
    let latent_dim = int()?;
    let num_layers = int()?;
    let num_heads = int()?;
    let mlp_hidden_dim = int()?;
    let num_classes = int()?;
    let head_hidden_dim = int()?;
    let mut real = || r.u32().map(|v| f32::from_bits(v) as f64);
    let dropout_p = real()?;
    let channel_mean = [real()?, real()?, real()?];
    let channel_std = [real()?, real()?, real()?];
    let config = ViTConfig {
        image_h,
        image_w,
        channels,
        patch_size,
        latent_dim,
        num_layers,
        num_heads,
        mlp_hidden_dim,
        num_classes,
        head_hidden_dim,
        dropout_p,
        channel_mean,
        channel_std,
    };
    config.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;

    let mut params = ViTParameters::zeros(&config);
    for (name, g) in ViTParameters::group_names(&config).iter().zip(params.groups_mut()) {
        let len = r.u64()? as usize;
        if len != g.len() {
            return Err(Error::Format(format!("{name}: stored length {len}, expected {}", g.len())));
        }
        for v in g.iter_mut() {
            *v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &ViTConfig, params: &ViTParameters) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_checkpoint(config, params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ViTConfig, ViTParameters)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn config_words(c: &ViTConfig) -> Result<Vec<u32>> {
    let ints = [
        c.image_h,
        c.image_w,
        c.channels,
        c.patch_size,
        c.latent_dim,
        c.num_layers,
        c.num_heads,
        c.mlp_hidden_dim,
        c.num_classes,
        c.head_hidden_dim,
    ];
    let mut words = Vec::with_capacity(17);
    for v in ints {
        words.push(u32::try_from(v).map_err(|_| Error::Argument(format!("config value {v} exceeds u32")))?);
    }
    words.push((c.dropout_p as f32).to_bits());
    words.extend(c.channel_mean.iter().map(|&v| (v as f32).to_bits()));
    words.extend(c.channel_std.iter().map(|&v| (v as f32).to_bits()));
    Ok(words)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_config_and_f32_values() {
        let c = ViTConfig {
            head_hidden_dim: 5,
            ..ViTConfig::tiny(16, 8)
        };
        let p = ViTParameters::init(&c, 2);
        let bytes = write_checkpoint(&c, &p).unwrap();
        assert_eq!(&bytes[..4], b"TVIT");
        let (c2, p2) = read_checkpoint(&bytes).unwrap();
        assert_eq!(c2.latent_dim, c.latent_dim);
        assert_eq!(c2.head_hidden_dim, 5);
        assert!((c2.dropout_p - 0.1).abs() < 1e-7);
        for (a, b) in p.groups().iter().zip(p2.groups()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // Already f32-representable parameters survive exactly.
        assert_eq!(write_checkpoint(&c2, &p2).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let c = ViTConfig::tiny(16, 8);
        let bytes = write_checkpoint(&c, &ViTParameters::init(&c, 0)).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_checkpoint(b"NOPE").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }
}
