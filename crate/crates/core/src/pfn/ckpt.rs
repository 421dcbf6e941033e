//! Checkpoint serialization. Little-endian binary layout:
//!
//! ```text
//! magic "NSLX" | format version u32 | header length u32 | header JSON
//! | entry count u32 | entries...
//! entry: name length u32 | name bytes | ndim u32 | dims u64 each | f64 data
//! ```
//!
//! The header JSON carries the model configuration and the prior digest.
//! Entry 0 is always `bins.edges`; the remaining entries are the parameters
//! in storage order, so saving a loaded checkpoint reproduces the original
//! bytes exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pfn::{param_specs, ModelConfig, PfnModel};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NSLX";
pub const FORMAT_VERSION: u32 = 1;
const MAX_NAME_LEN: u32 = 4096;
const MAX_HEADER_LEN: u32 = 1 << 24;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    prior_digest: String,
}

fn w_u32(w: &mut dyn Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn r_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_entry(w: &mut dyn Write, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    w_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w_u32(w, shape.len() as u32)?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_entry(r: &mut dyn Read) -> Result<(String, Tensor)> {
    let name_len = r_u32(r)?;
    if name_len > MAX_NAME_LEN {
        return Err(Error::invalid(format!("entry name of {name_len} bytes")));
    }
    let mut name = vec![0u8; name_len as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::invalid("entry name is not UTF-8"))?;
    let ndim = r_u32(r)?;
    if ndim > 8 {
        return Err(Error::invalid(format!("entry '{name}' claims {ndim} dimensions")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let numel: usize = shape.iter().product();
    if numel > (1 << 31) {
        return Err(Error::invalid(format!("entry '{name}' claims {numel} elements")));
    }
    let mut data = Vec::with_capacity(numel);
    let mut b = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok((name, Tensor { shape, data }))
}

pub fn save_to(model: &PfnModel, w: &mut dyn Write) -> Result<()> {
    model.config.validate()?;
    let specs = param_specs(&model.config);
    if specs.len() != model.params.len() {
        return Err(Error::invalid(format!(
            "{} parameters but the layout wants {}",
            model.params.len(),
            specs.len()
        )));
    }
    w.write_all(MAGIC)?;
    w_u32(w, FORMAT_VERSION)?;
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        prior_digest: model.prior_digest.clone(),
    })
    .map_err(|e| Error::invalid(format!("header serialization: {e}")))?;
    w_u32(w, header.len() as u32)?;
    w.write_all(&header)?;
    w_u32(w, (1 + specs.len()) as u32)?;
    write_entry(w, "bins.edges", &[model.edges.len()], &model.edges)?;
    for ((name, shape), tensor) in specs.iter().zip(&model.params) {
        if &tensor.shape != shape {
            return Err(Error::invalid(format!(
                "parameter '{name}' has shape {:?}, layout wants {shape:?}",
                tensor.shape
            )));
        }
        write_entry(w, name, shape, &tensor.data)?;
    }
    Ok(())
}

pub fn load_from(r: &mut dyn Read) -> Result<PfnModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a model checkpoint (bad magic bytes)"));
    }
    let version = r_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "checkpoint format version {version}; this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = r_u32(r)?;
    if hlen > MAX_HEADER_LEN {
        return Err(Error::invalid(format!("header of {hlen} bytes")));
    }
    let mut hb = vec![0u8; hlen as usize];
    r.read_exact(&mut hb)?;
    let header: Header =
        serde_json::from_slice(&hb).map_err(|e| Error::invalid(format!("header: {e}")))?;
    header.config.validate()?;
    let specs = param_specs(&header.config);
    let count = r_u32(r)? as usize;
    if count != 1 + specs.len() {
        return Err(Error::invalid(format!(
            "{count} entries; configuration wants {}",
            1 + specs.len()
        )));
    }
    let (name, edges_t) = read_entry(r)?;
    if name != "bins.edges" || edges_t.shape != vec![header.config.nbins + 1] {
        return Err(Error::invalid(format!(
            "first entry '{name}' with shape {:?} is not the expected bin edge table",
            edges_t.shape
        )));
    }
    if edges_t.data.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("bin edges are not strictly increasing"));
    }
    let mut params = Vec::with_capacity(specs.len());
    for (want_name, want_shape) in &specs {
        let (name, tensor) = read_entry(r)?;
        if &name != want_name || &tensor.shape != want_shape {
            return Err(Error::invalid(format!(
                "entry '{name}' with shape {:?}; expected '{want_name}' with {want_shape:?}",
                tensor.shape
            )));
        }
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("entry '{name}' holds non-finite values")));
        }
        params.push(tensor);
    }
    Ok(PfnModel {
        config: header.config,
        edges: edges_t.data,
        params,
        prior_digest: header.prior_digest,
    })
}

pub fn save_checkpoint(model: &PfnModel, path: &Path) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    save_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PfnModel> {
    let f = File::open(path)?;
    load_from(&mut BufReader::new(f))
}
