//! Parameter blob serialization: a small tagged binary format with a JSON
//! header carrying the architecture spec, plus named f32 tensors in traversal
//! order. Training writes a sidecar JSON manifest next to each blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Autoencoder, EncoderSpec};

const MAGIC: &[u8; 8] = b"GLMPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor {name}: expected {want} values, found {got}")]
    TensorSize { name: String, want: usize, got: usize },
    #[error("model build failed: {0}")]
    Model(#[from] super::ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: EncoderSpec,
    init_seed: u64,
    tensor_count: u32,
}

fn tensor_names(model: &Autoencoder<f32>) -> Vec<(String, usize)> {
    // (name, id); two tensors per layer, named for debuggability.
    let enc_blocks = model.encoder.blocks.len();
    let mut out = Vec::new();
    for (bi, block) in
        model.encoder.blocks.iter().chain(model.decoder.blocks.iter()).enumerate()
    {
        let (side, idx) =
            if bi < enc_blocks { ("enc", bi) } else { ("dec", bi - enc_blocks) };
        for (role, layer) in [("conv1", Some(&block.conv1)), ("conv2", Some(&block.conv2)), ("proj", block.proj.as_ref())]
        {
            if let Some(layer) = layer {
                out.push((format!("{side}.b{idx}.{role}"), layer.id));
            }
        }
    }
    out
}

/// Write all parameters of the model to `path`.
pub fn save_params(model: &Autoencoder<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    let names = tensor_names(model);
    let header = Header {
        spec: *model.spec(),
        init_seed: model.init_seed(),
        tensor_count: (names.len() * 2) as u32,
    };
    let header_json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;

    let by_id: std::collections::HashMap<usize, &crate::nn::ConvLayer<f32>> =
        model.layers().map(|l| (l.id, l)).collect();
    for (name, id) in &names {
        let layer = by_id[id];
        write_tensor(&mut w, &format!("{name}.w"), layer.w.as_slice().unwrap())?;
        write_tensor(&mut w, &format!("{name}.b"), layer.b.as_slice().unwrap())?;
    }
    w.flush()?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, data: &[f32]) -> Result<(), CheckpointError> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Load a model from a parameter blob.
pub fn load_params(path: &Path) -> Result<Autoencoder<f32>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    let mut model = Autoencoder::<f32>::new(&header.spec, header.init_seed)?;
    let names = tensor_names(&model);
    let mut expected: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (name, id) in &names {
        expected.insert(format!("{name}.w"), *id);
        expected.insert(format!("{name}.b"), *id);
    }

    for _ in 0..header.tensor_count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Malformed("non-utf8 tensor name".into()))?;
        let len = read_u32(&mut r)? as usize;
        let mut data = vec![0.0f32; len];
        let mut buf = [0u8; 4];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        let id = *expected
            .get(&name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown tensor {name}")))?;
        for layer in model.layers_mut() {
            if layer.id != id {
                continue;
            }
            let target: &mut [f32] = if name.ends_with(".w") {
                layer.w.as_slice_mut().unwrap()
            } else {
                layer.b.as_slice_mut().unwrap()
            };
            if target.len() != data.len() {
                return Err(CheckpointError::TensorSize {
                    name: name.clone(),
                    want: target.len(),
                    got: data.len(),
                });
            }
            target.copy_from_slice(&data);
        }
    }
    Ok(model)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
