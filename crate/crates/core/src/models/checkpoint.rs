//! Checkpoint files.
//!
//! Layout: a manifest record (`u32` name length, `"__manifest__"`, `u32`
//! text length, `key=value` lines describing the architecture), a `u32`
//! record count, then one record per parameter: `u32` name length, name
//! bytes, and the tensor in the SRDT codec. Integers are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Arch, DiscriminatorSpec, GeneratorKind, GeneratorSpec, Model};
use crate::error::{Error, Result};
use crate::tensor::codec::{read_exactly, read_u32};
use crate::tensor::{decode_tensor, encode_tensor};

const MANIFEST: &str = "__manifest__";

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    let bytes = read_exactly(r, len, what)?;
    String::from_utf8(bytes).map_err(|_| Error::Malformed {
        what: what.into(),
        detail: "name is not UTF-8".into(),
    })
}

fn manifest_text(model: &Model) -> String {
    let mut lines = Vec::new();
    match model.arch() {
        Arch::Generator(g) => {
            lines.push("kind=generator".to_string());
            lines.push(format!("generator={}", g.kind));
            lines.push(format!("n_blocks={}", g.n_blocks));
            lines.push(format!("ngf={}", g.ngf));
            lines.push(format!("in_channels={}", g.in_channels));
            lines.push(format!("out_channels={}", g.out_channels));
            lines.push(format!("resolution={}", g.resolution));
        }
        Arch::Discriminator(d) => {
            lines.push("kind=discriminator".to_string());
            lines.push(format!("ndf={}", d.ndf));
            lines.push(format!("n_layers={}", d.n_layers));
            lines.push(format!("in_channels={}", d.in_channels));
        }
    }
    lines.push(format!("endpoint={}", model.encoder_endpoint()));
    lines.join("\n") + "\n"
}

fn parse_manifest(text: &str) -> Result<(Arch, String)> {
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
            what: "checkpoint manifest".into(),
            detail: format!("line `{line}` is not key=value"),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        kv.get(k).ok_or_else(|| Error::Malformed {
            what: "checkpoint manifest".into(),
            detail: format!("missing `{k}`"),
        })
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::Malformed {
            what: "checkpoint manifest".into(),
            detail: format!("`{k}` is not an integer"),
        })
    };
    let arch = match get("kind")?.as_str() {
        "generator" => Arch::Generator(GeneratorSpec {
            kind: get("generator")?.parse::<GeneratorKind>()?,
            n_blocks: num("n_blocks")?,
            ngf: num("ngf")?,
            in_channels: num("in_channels")?,
            out_channels: num("out_channels")?,
            resolution: num("resolution")?,
        }),
        "discriminator" => Arch::Discriminator(DiscriminatorSpec {
            ndf: num("ndf")?,
            n_layers: num("n_layers")?,
            in_channels: num("in_channels")?,
        }),
        other => {
            return Err(Error::Malformed {
                what: "checkpoint manifest".into(),
                detail: format!("unknown kind `{other}`"),
            })
        }
    };
    Ok((arch, get("endpoint")?.clone()))
}

pub fn write_model<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    write_str(w, MANIFEST)?;
    write_str(w, &manifest_text(model))?;
    w.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for (name, t) in model.params() {
        write_str(w, name)?;
        encode_tensor(w, t)?;
    }
    Ok(())
}

/// Reads only the architecture record of a checkpoint stream.
pub fn read_manifest<R: Read>(r: &mut R) -> Result<(Arch, String)> {
    let tag = read_str(r, "checkpoint manifest")?;
    if tag != MANIFEST {
        return Err(Error::Malformed {
            what: "checkpoint".into(),
            detail: format!("first record is `{tag}`, expected `{MANIFEST}`"),
        });
    }
    parse_manifest(&read_str(r, "checkpoint manifest")?)
}

fn read_model<R: Read>(r: &mut R) -> Result<Model> {
    let (arch, endpoint) = read_manifest(r)?;
    let count = read_u32(r, "checkpoint")? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(r, "checkpoint record")?;
        params.push((name, decode_tensor(r)?.with_grad()));
    }
    let mut model = Model::from_params(arch, params)?;
    model.set_encoder_endpoint(&endpoint)?;
    Ok(model)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(&mut buf, model)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    read_model(&mut bytes.as_slice())
}
