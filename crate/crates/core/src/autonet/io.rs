//! Weight file: an ASCII manifest followed by a little-endian `f64` payload.
//!
//! ```text
//! gradex-weights 1
//! arch net-a
//! input 1 32 32
//! labels square disk triangle
//! layers 11
//! conv 1 8
//! relu
//! maxpool
//! ...
//! linear 512 3
//! tensors 8
//! layer0.weight 72
//! layer0.bias 8
//! ...
//! payload
//! <raw bytes>
//! ```
//!
//! Every line ends in `\n`. Tensors are listed in layer order (weight then
//! bias) and their payloads follow in the same order, 8 bytes per value.

use std::fs;
use std::path::Path;

use super::{LayerSpec, Model, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "gradex-weights";

pub fn serialize_model(model: &Model) -> Vec<u8> {
    let mut head = String::new();
    let [c, h, w] = model.input_dims();
    head += &format!("{MAGIC} {FORMAT_VERSION}\n");
    head += &format!("arch {}\n", model.arch());
    head += &format!("input {c} {h} {w}\n");
    head += &format!("labels {}\n", model.labels().join(" "));
    head += &format!("layers {}\n", model.num_layers());
    for spec in model.specs() {
        head += &match *spec {
            LayerSpec::Conv { in_ch, out_ch } => format!("conv {in_ch} {out_ch}\n"),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => format!("linear {in_features} {out_features}\n"),
            other => format!("{}\n", other.name()),
        };
    }
    let tensors = tensor_list(model);
    head += &format!("tensors {}\n", tensors.len());
    for (name, t) in &tensors {
        head += &format!("{name} {}\n", t.len());
    }
    head += "payload\n";

    let mut bytes = head.into_bytes();
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn tensor_list(model: &Model) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (i, p) in model.params().iter().enumerate() {
        if let Some(p) = p {
            out.push((format!("layer{i}.weight"), &p.weight));
            out.push((format!("layer{i}.bias"), &p.bias));
        }
    }
    out
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    crate::fsutil::write_atomic(path.as_ref(), &serialize_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    parse_model(&fs::read(path)?)
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next `\n`-terminated line and its starting offset.
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(self.bytes.len(), "unexpected end of header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|e| Error::parse(start + e.valid_up_to(), "header is not UTF-8"))?;
        self.pos = start + end + 1;
        Ok((start, line))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (off, line) = self.next_line()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(Error::parse(off, format!("expected `{key}` line, got {line:?}")));
        }
        Ok((off, parts.collect()))
    }
}

fn num(off: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(off, format!("expected an unsigned integer, got {s:?}")))
}

fn count_field(off: usize, fields: &[&str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::parse(off, format!("expected {n} fields, got {}", fields.len())));
    }
    Ok(())
}

/// Parses a complete weight file. Nothing is returned unless the whole file
/// is consistent.
pub fn parse_model(bytes: &[u8]) -> Result<Model> {
    let mut lines = Lines { bytes, pos: 0 };

    let (off, magic) = lines.keyed(MAGIC)?;
    count_field(off, &magic, 1)?;
    let version = num(off, magic[0])?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::parse(off, format!("unsupported format version {version}")));
    }
    let (off, arch) = lines.keyed("arch")?;
    count_field(off, &arch, 1)?;
    let arch = arch[0].to_string();

    let (off, input) = lines.keyed("input")?;
    count_field(off, &input, 3)?;
    let input_dims = [num(off, input[0])?, num(off, input[1])?, num(off, input[2])?];

    let (_, labels) = lines.keyed("labels")?;
    let labels: Vec<String> = labels.into_iter().map(str::to_string).collect();

    let (off, n) = lines.keyed("layers")?;
    count_field(off, &n, 1)?;
    let n_layers = num(off, n[0])?;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let (off, line) = lines.next_line()?;
        let f: Vec<&str> = line.split(' ').collect();
        let spec = match f[0] {
            "conv" => {
                count_field(off, &f[1..], 2)?;
                LayerSpec::Conv {
                    in_ch: num(off, f[1])?,
                    out_ch: num(off, f[2])?,
                }
            }
            "linear" => {
                count_field(off, &f[1..], 2)?;
                LayerSpec::Linear {
                    in_features: num(off, f[1])?,
                    out_features: num(off, f[2])?,
                }
            }
            "relu" | "maxpool" | "flatten" => {
                count_field(off, &f[1..], 0)?;
                match f[0] {
                    "relu" => LayerSpec::Relu,
                    "maxpool" => LayerSpec::MaxPool,
                    _ => LayerSpec::Flatten,
                }
            }
            other => return Err(Error::parse(off, format!("unknown layer kind {other:?}"))),
        };
        specs.push(spec);
    }

    let (off, n) = lines.keyed("tensors")?;
    count_field(off, &n, 1)?;
    let n_tensors = num(off, n[0])?;
    let mut declared = Vec::with_capacity(n_tensors.min(1024));
    for _ in 0..n_tensors {
        let (off, line) = lines.next_line()?;
        let f: Vec<&str> = line.split(' ').collect();
        count_field(off, &f, 2)?;
        declared.push((f[0].to_string(), num(off, f[1])?));
    }
    let (off, tail) = lines.next_line()?;
    if tail != "payload" {
        return Err(Error::parse(off, format!("expected `payload`, got {tail:?}")));
    }

    // Shape table check: names and lengths must follow from the layer list.
    let mut expected = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        if let Some((wd, bd)) = spec.param_dims() {
            expected.push((format!("layer{i}.weight"), wd));
            expected.push((format!("layer{i}.bias"), bd));
        }
    }
    if expected.len() != declared.len() {
        return Err(Error::validation(format!(
            "{} tensors declared, layer list implies {}",
            declared.len(),
            expected.len()
        )));
    }
    for ((name, len), (want_name, dims)) in declared.iter().zip(&expected) {
        let want_len: usize = dims.iter().product();
        if name != want_name {
            return Err(Error::validation(format!("tensor {name}: expected {want_name} here")));
        }
        if *len != want_len {
            return Err(Error::validation(format!(
                "tensor {name}: declared length {len}, shape {dims:?} implies {want_len}"
            )));
        }
    }

    let payload_start = lines.pos;
    let total: usize = declared.iter().map(|(_, l)| l).sum();
    let need = total * 8;
    let have = bytes.len() - payload_start;
    if have < need {
        return Err(Error::parse(
            bytes.len(),
            format!("payload truncated: need {need} bytes, have {have}"),
        ));
    }
    if have > need {
        return Err(Error::parse(
            payload_start + need,
            format!("{} trailing bytes after payload", have - need),
        ));
    }

    let mut cursor = payload_start;
    let mut read_tensor = |name: &str, dims: &[usize]| -> Result<Tensor> {
        let len: usize = dims.iter().product();
        let start = cursor;
        let data: Vec<f64> = bytes[start..start + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += len * 8;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(start + i * 8, format!("tensor {name}: non-finite value")));
        }
        Tensor::from_vec(dims, data)
    };
    let mut params = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        params.push(match spec.param_dims() {
            None => None,
            Some((wd, bd)) => Some(Params {
                weight: read_tensor(&format!("layer{i}.weight"), &wd)?,
                bias: read_tensor(&format!("layer{i}.bias"), &bd)?,
            }),
        });
    }
    Model::new(arch, input_dims, specs, params, labels)
}
