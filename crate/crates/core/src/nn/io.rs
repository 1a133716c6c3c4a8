//! Model files: a JSON layer list, optionally with parameter vectors moved
//! into a binary sidecar.
//!
//! Sidecar layout: magic `AESW`, version `u8 = 1`, encoding `u8`
//! (0 = IEEE-754 f64, 1 = fixed point), `frac_bits u8`, `modulus u64`,
//! vector count `u64`, one `u64` length per vector, then every value as
//! 8 little-endian bytes. Fixed-point values are field elements of
//! `round(v * 2^f)`. Vectors appear in depth-first layer order.

use super::{LayerSpec, ModelGraph, NnError};
use crate::field::{FieldElement, FieldParams, FixedPointCodec};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const SIDECAR_MAGIC: &[u8; 4] = b"AESW";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SidecarEncoding {
    F64,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRef {
    pub file: String,
    pub encoding: SidecarEncoding,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(flatten)]
    model: ModelGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<SidecarRef>,
}

const FORMAT: &str = "hermite-pi-model/1";

fn param_vectors(layers: &mut [LayerSpec]) -> Vec<&mut Vec<f64>> {
    let mut out = Vec::new();
    collect_params(layers, &mut out);
    out
}

fn collect_params<'a>(layers: &'a mut [LayerSpec], out: &mut Vec<&'a mut Vec<f64>>) {
    for l in layers {
        match l {
            LayerSpec::Linear { weight, bias, .. } | LayerSpec::Conv2d { weight, bias, .. } => {
                out.extend([weight, bias]);
            }
            LayerSpec::BatchNorm(p) => out.extend([
                &mut p.running_mean,
                &mut p.running_var,
                &mut p.gamma,
                &mut p.beta,
            ]),
            LayerSpec::Herpn(p) => out.extend([
                &mut p.coeffs,
                &mut p.running_mean,
                &mut p.running_var,
                &mut p.gamma,
                &mut p.beta,
            ]),
            LayerSpec::Residual(b) => {
                collect_params(&mut b.branch, out);
                if let Some(s) = &mut b.shortcut {
                    collect_params(s, out);
                }
            }
            _ => {}
        }
    }
}

/// Write `model` as JSON. With `sidecar`, parameters go to `<path>.bin`.
pub fn save_model(
    model: &ModelGraph,
    path: &Path,
    sidecar: Option<(SidecarEncoding, FieldParams)>,
) -> Result<(), NnError> {
    let mut model = model.clone();
    let sidecar_ref = match sidecar {
        None => None,
        Some((encoding, params)) => {
            let bin = sidecar_path(path);
            let mut vectors = param_vectors(&mut model.layers);
            write_sidecar(&bin, &vectors, encoding, params)?;
            vectors.iter_mut().for_each(|v| v.clear());
            Some(SidecarRef {
                file: bin
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                encoding,
            })
        }
    };
    let file = ModelFile {
        format: FORMAT.into(),
        model,
        sidecar: sidecar_ref,
    };
    fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelGraph, NnError> {
    let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.format != FORMAT {
        return Err(NnError::Format(format!("unknown format tag {:?}", file.format)));
    }
    let mut model = file.model;
    if let Some(side) = file.sidecar {
        let bin = path.parent().unwrap_or(Path::new(".")).join(&side.file);
        let values = read_sidecar(&bin)?;
        let mut vectors = param_vectors(&mut model.layers);
        if values.len() != vectors.len() {
            return Err(NnError::Format(format!(
                "sidecar holds {} vectors, model needs {}",
                values.len(),
                vectors.len()
            )));
        }
        for (dst, src) in vectors.iter_mut().zip(values) {
            **dst = src;
        }
    }
    model.shapes()?;
    Ok(model)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

fn write_sidecar(
    path: &Path,
    vectors: &[&mut Vec<f64>],
    encoding: SidecarEncoding,
    params: FieldParams,
) -> Result<(), NnError> {
    let codec = FixedPointCodec::new(params);
    let mut buf = Vec::new();
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.push(1);
    buf.push(match encoding {
        SidecarEncoding::F64 => 0,
        SidecarEncoding::Fixed => 1,
    });
    buf.push(params.frac_bits() as u8);
    buf.extend_from_slice(&params.modulus().to_le_bytes());
    buf.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    for v in vectors {
        buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    }
    for v in vectors {
        for &x in v.iter() {
            let bytes = match encoding {
                SidecarEncoding::F64 => x.to_le_bytes(),
                SidecarEncoding::Fixed => codec
                    .encode(x)
                    .map_err(|e| NnError::Format(format!("sidecar value {x}: {e}")))?
                    .to_le_bytes(),
            };
            buf.extend_from_slice(&bytes);
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_sidecar(path: &Path) -> Result<Vec<Vec<f64>>, NnError> {
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if &head[..4] != SIDECAR_MAGIC || head[4] != 1 {
        return Err(NnError::Format("bad sidecar header".into()));
    }
    let modulus = read_u64(&mut r)?;
    let fixed = match head[5] {
        0 => None,
        1 => Some(FixedPointCodec::new(
            FieldParams::new(modulus, head[6] as u32)
                .map_err(|e| NnError::Format(format!("sidecar field: {e}")))?,
        )),
        t => return Err(NnError::Format(format!("unknown sidecar encoding {t}"))),
    };
    let count = read_u64(&mut r)? as usize;
    let lens = (0..count)
        .map(|_| read_u64(&mut r).map(|n| n as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(count);
    for n in lens {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            v.push(match &fixed {
                None => f64::from_le_bytes(b),
                Some(c) => c.decode(FieldElement::from_le_bytes(b, modulus)),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// Input, expected output and tolerance for regression checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenVector {
    pub input: Tensor,
    pub expected: Tensor,
    pub tolerance: f64,
}

impl GoldenVector {
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Largest element-wise deviation, or `None` on a shape mismatch.
    pub fn deviation(&self, actual: &Tensor) -> Option<f64> {
        (actual.shape() == self.expected.shape()).then(|| actual.max_abs_diff(&self.expected))
    }

    pub fn matches(&self, actual: &Tensor) -> bool {
        self.deviation(actual).is_some_and(|d| d <= self.tolerance)
    }
}
