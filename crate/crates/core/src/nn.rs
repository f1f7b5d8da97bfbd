//! Parameter plumbing shared by every model: deterministic name-keyed
//! initialization and checkpoint save/load with a JSON sidecar.
//!
//! All parameters are created through a `VarMap` with zero init and then
//! filled by [`deterministic_init`], so init values depend only on
//! `(seed, parameter name, shape)` and never on construction order or on any
//! global RNG.

use crate::error::{Error, Result};
use crate::rng;
use candle_core::{DType, Device, Tensor, Var};
use candle_nn::VarMap;
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

/// Fill every var in the map with deterministic values keyed by name.
///
/// Rules: rank >= 2 `*.weight` tensors get normal(0, 1/sqrt(fan_in)) values;
/// rank 1 `*.weight` gets ones (layer-norm scales); `*.bias` gets zeros;
/// names matching one of `zero_init` substrings get zeros (adapter output
/// projections); names containing `null` get normal(0, 0.02).
pub fn deterministic_init(varmap: &VarMap, seed: u64, zero_init: &[&str]) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    for (name, var) in data.iter() {
        let t = init_tensor(name, var.shape().dims(), var.dtype(), var.device(), seed, zero_init)?;
        var.set(&t)?;
    }
    Ok(())
}

fn init_tensor(
    name: &str,
    dims: &[usize],
    dtype: DType,
    device: &Device,
    seed: u64,
    zero_init: &[&str],
) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let zeros = || Tensor::zeros(dims, dtype, device).map_err(Error::from);
    if zero_init.iter().any(|z| name.contains(z)) {
        return zeros();
    }
    if name.ends_with(".bias") {
        return zeros();
    }
    if dims.len() == 1 && name.ends_with(".weight") {
        return Ok(Tensor::ones(dims, dtype, device)?);
    }
    let std = if name.contains("null") {
        0.02
    } else {
        let fan_in: usize = dims.iter().skip(1).product::<usize>().max(1);
        (1.0 / fan_in as f64).sqrt()
    };
    // Key the stream by parameter name so values are order independent.
    let mut stream = rng::stream(seed, name, 0);
    let vals: Vec<f64> = rng::normal_vec_f64(&mut stream, n).iter().map(|v| v * std).collect();
    let t = Tensor::from_vec(vals, dims, device)?.to_dtype(dtype)?;
    Ok(t)
}

/// SHA-256 hex digest of a tensor's contents (shape and raw values).
pub fn tensor_sha256(t: &Tensor) -> Result<String> {
    let mut hasher = Sha256::new();
    for d in t.shape().dims() {
        hasher.update((*d as u64).to_le_bytes());
    }
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F64 => {
            for v in flat.to_vec1::<f64>()? {
                hasher.update(v.to_le_bytes());
            }
        }
        _ => {
            for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// SHA-256 hex digests of a set of named vars.
pub fn named_hashes(varmap: &VarMap, names: &[String]) -> Result<HashMap<String, String>> {
    let data = varmap.data().lock().unwrap();
    let mut out = HashMap::new();
    for name in names {
        let var = data
            .get(name)
            .ok_or_else(|| Error::runtime(format!("unknown parameter {name}")))?;
        out.insert(name.clone(), tensor_sha256(var.as_tensor())?);
    }
    Ok(out)
}

/// All parameter names in a varmap, sorted.
pub fn param_names(varmap: &VarMap) -> Vec<String> {
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<String> = data.keys().cloned().collect();
    names.sort();
    names
}

/// Vars whose names satisfy `pred`, sorted by name for stable optimizer order.
pub fn vars_matching(varmap: &VarMap, pred: impl Fn(&str) -> bool) -> Vec<Var> {
    let data = varmap.data().lock().unwrap();
    let mut named: Vec<(&String, &Var)> = data.iter().filter(|(n, _)| pred(n)).collect();
    named.sort_by(|a, b| a.0.cmp(b.0));
    named.into_iter().map(|(_, v)| v.clone()).collect()
}

/// SHA-256 of a serializable config, for checkpoint stamping.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    Ok(format!("{:x}", Sha256::digest(json.as_bytes())))
}

/// Write weights (safetensors) plus a JSON sidecar, atomically.
pub fn save_checkpoint<S: Serialize>(varmap: &VarMap, path: &Path, sidecar: &S) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    varmap.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    let json = serde_json::to_string_pretty(sidecar)?;
    let sidecar_path = sidecar_path(path);
    let tmp_json = sidecar_path.with_extension("json.tmp");
    std::fs::write(&tmp_json, json)?;
    std::fs::rename(&tmp_json, &sidecar_path)?;
    Ok(())
}

/// Load weights saved by [`save_checkpoint`] into an already-built varmap.
pub fn load_checkpoint(varmap: &mut VarMap, path: &Path) -> Result<()> {
    varmap.load(path)?;
    Ok(())
}

/// Read back the sidecar JSON next to a checkpoint.
pub fn load_sidecar<S: DeserializeOwned>(path: &Path) -> Result<S> {
    let raw = std::fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&raw)?)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_nn::VarBuilder;

    #[test]
    fn init_is_order_independent_and_seeded() {
        let dev = Device::Cpu;
        let build = |order_flip: bool, seed: u64| -> (VarMap, Tensor, Tensor) {
            let varmap = VarMap::new();
            let vb = VarBuilder::from_varmap(&varmap, DType::F32, &dev);
            let (a, b);
            if order_flip {
                b = vb.get_with_hints((4, 3), "b.weight", candle_nn::init::ZERO).unwrap();
                a = vb.get_with_hints((2, 3), "a.weight", candle_nn::init::ZERO).unwrap();
            } else {
                a = vb.get_with_hints((2, 3), "a.weight", candle_nn::init::ZERO).unwrap();
                b = vb.get_with_hints((4, 3), "b.weight", candle_nn::init::ZERO).unwrap();
            }
            deterministic_init(&varmap, seed, &[]).unwrap();
            (varmap, a, b)
        };
        let (_m1, a1, b1) = build(false, 1);
        let (_m2, a2, b2) = build(true, 1);
        let (_m3, a3, _b3) = build(false, 2);
        assert_eq!(a1.to_vec2::<f32>().unwrap(), a2.to_vec2::<f32>().unwrap());
        assert_eq!(b1.to_vec2::<f32>().unwrap(), b2.to_vec2::<f32>().unwrap());
        assert_ne!(a1.to_vec2::<f32>().unwrap(), a3.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn hashes_change_with_values() {
        let dev = Device::Cpu;
        let t1 = Tensor::from_vec(vec![1f32, 2.0], (2,), &dev).unwrap();
        let t2 = Tensor::from_vec(vec![1f32, 2.5], (2,), &dev).unwrap();
        assert_ne!(tensor_sha256(&t1).unwrap(), tensor_sha256(&t2).unwrap());
        assert_eq!(tensor_sha256(&t1).unwrap(), tensor_sha256(&t1).unwrap());
    }
}
