//! Flat binary checkpoint container plus the JSON meta sidecar.
//!
//! Container layout: 8-byte magic `DDCEQNET`, a u32 version, then tensors
//! back to back until end of file, each as
//! `(name_len: u32, name bytes, rank: u32, dims: u32 × rank, payload: f64 LE)`.
//! All integers little-endian; payloads are raw IEEE-754 bits, so round
//! trips are bit-exact. The classifier and the fitted mixture share one
//! container (`net.*` and `gmm.*` tensors).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::classifier::{TrainConfig, TrainedModel};
use crate::density::FeatureGMM;
use crate::error::{Error, Result};
use crate::nn::{LayerParams, NetworkParams, ResidualBlock};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 8] = b"DDCEQNET";
pub const VERSION: u32 = 1;

/// One named tensor in the container.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn scalar(name: &str, v: f64) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(name: &str, v: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![v.len() as u32],
            data: v.to_vec(),
        }
    }

    pub fn matrix(name: &str, m: &Mat) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![m.rows as u32, m.cols as u32],
            data: m.data().to_vec(),
        }
    }
}

pub fn encode_container(entries: &[TensorEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_container(path: &Path, entries: &[TensorEntry]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_container(entries))?;
    Ok(())
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<TensorEntry>> {
    let err = |offset: usize, msg: &str| Error::Checkpoint {
        msg: format!("{msg} at byte {offset}"),
    };
    if bytes.len() < 12 {
        return Err(err(0, "file too short for header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(err(0, "bad magic"));
    }
    let version = LittleEndian::read_u32(&bytes[8..12]);
    if version != VERSION {
        return Err(Error::Checkpoint {
            msg: format!("unsupported version {version}"),
        });
    }
    let mut pos = 12;
    let mut entries = Vec::new();
    let take = |pos: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
        if bytes.len() < *pos + n {
            return Err(err(*pos, "truncated entry"));
        }
        let r = *pos..*pos + n;
        *pos += n;
        Ok(r)
    };
    while pos < bytes.len() {
        let name_len = LittleEndian::read_u32(&bytes[take(&mut pos, 4)?]) as usize;
        let name_range = take(&mut pos, name_len)?;
        let name = std::str::from_utf8(&bytes[name_range])
            .map_err(|_| err(pos, "tensor name is not UTF-8"))?
            .to_string();
        let rank = LittleEndian::read_u32(&bytes[take(&mut pos, 4)?]) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(LittleEndian::read_u32(&bytes[take(&mut pos, 4)?]));
        }
        let count: usize = dims.iter().map(|&d| d as usize).product();
        let payload = take(&mut pos, count * 8)?;
        let data: Vec<f64> = bytes[payload]
            .chunks_exact(8)
            .map(LittleEndian::read_f64)
            .collect();
        entries.push(TensorEntry { name, dims, data });
    }
    Ok(entries)
}

pub fn read_container(path: &Path) -> Result<Vec<TensorEntry>> {
    decode_container(&fs::read(path)?)
}

/// Sidecar metadata written next to the container as `<name>.meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub class_count: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub config: TrainConfig,
    /// FNV-1a 64-bit hash of the training dataset bytes, hex encoded.
    pub data_fingerprint: String,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
}

pub fn meta_path(container: &Path) -> PathBuf {
    let mut name = container
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.json");
    container.with_file_name(name)
}

fn layer_entries(base: &str, layer: &LayerParams, out: &mut Vec<TensorEntry>) {
    out.push(TensorEntry::matrix(&format!("{base}.weight"), &layer.weight));
    out.push(TensorEntry::vector(&format!("{base}.bias"), &layer.bias));
    out.push(TensorEntry::vector(&format!("{base}.sn_u"), &layer.sn_u));
    out.push(TensorEntry::scalar(
        &format!("{base}.sn_enabled"),
        if layer.sn_enabled { 1.0 } else { 0.0 },
    ));
}

/// All `net.*` tensors of a network, canonical order.
pub fn network_entries(params: &NetworkParams) -> Vec<TensorEntry> {
    let mut out = vec![TensorEntry::vector(
        "net.dims",
        &[
            params.input_dim as f64,
            params.feature_dim as f64,
            params.hidden_dim as f64,
            params.num_classes as f64,
            params.blocks.len() as f64,
        ],
    )];
    layer_entries("net.proj", &params.proj, &mut out);
    for (i, b) in params.blocks.iter().enumerate() {
        layer_entries(&format!("net.block{i}.expand"), &b.expand, &mut out);
        layer_entries(&format!("net.block{i}.contract"), &b.contract, &mut out);
    }
    layer_entries("net.head", &params.head, &mut out);
    out
}

fn find<'a>(entries: &'a [TensorEntry], name: &str) -> Result<&'a TensorEntry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Checkpoint {
            msg: format!("missing tensor {name:?}"),
        })
}

fn layer_from_entries(entries: &[TensorEntry], base: &str) -> Result<LayerParams> {
    let weight_entry = find(entries, &format!("{base}.weight"))?;
    if weight_entry.dims.len() != 2 {
        return Err(Error::Checkpoint {
            msg: format!("{base}.weight must have rank 2"),
        });
    }
    let weight = Mat::from_rows(
        weight_entry.dims[0] as usize,
        weight_entry.dims[1] as usize,
        weight_entry.data.clone(),
    )?;
    let sn_enabled = find(entries, &format!("{base}.sn_enabled"))?
        .data
        .first()
        .copied()
        .ok_or_else(|| Error::Checkpoint {
            msg: format!("{base}.sn_enabled is empty"),
        })?;
    Ok(LayerParams {
        weight,
        bias: find(entries, &format!("{base}.bias"))?.data.clone(),
        sn_u: find(entries, &format!("{base}.sn_u"))?.data.clone(),
        sn_enabled: sn_enabled != 0.0,
    })
}

/// Rebuild a network from its `net.*` tensors.
pub fn network_from_entries(entries: &[TensorEntry]) -> Result<NetworkParams> {
    let dims = &find(entries, "net.dims")?.data;
    if dims.len() != 5 {
        return Err(Error::Checkpoint {
            msg: "net.dims must hold 5 values".into(),
        });
    }
    let num_blocks = dims[4] as usize;
    let mut blocks = Vec::with_capacity(num_blocks);
    for i in 0..num_blocks {
        blocks.push(ResidualBlock {
            expand: layer_from_entries(entries, &format!("net.block{i}.expand"))?,
            contract: layer_from_entries(entries, &format!("net.block{i}.contract"))?,
        });
    }
    Ok(NetworkParams {
        input_dim: dims[0] as usize,
        feature_dim: dims[1] as usize,
        hidden_dim: dims[2] as usize,
        num_classes: dims[3] as usize,
        proj: layer_from_entries(entries, "net.proj")?,
        blocks,
        head: layer_from_entries(entries, "net.head")?,
    })
}

/// `gmm.*` tensors: mean and covariance per class, plus the recorded
/// 95th-percentile training NLL when present.
pub fn gmm_entries(gmm: &FeatureGMM) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for c in 0..gmm.class_count() {
        out.push(TensorEntry::vector(&format!("gmm.mean.{c}"), gmm.mean(c)));
        out.push(TensorEntry::matrix(
            &format!("gmm.cov.{c}"),
            gmm.covariance(c),
        ));
    }
    if let Some(p95) = gmm.nll_p95() {
        out.push(TensorEntry::scalar("gmm.nll_p95", p95));
    }
    out
}

/// Rebuild the mixture from `gmm.*` tensors; Ok(None) when absent.
pub fn gmm_from_entries(entries: &[TensorEntry]) -> Result<Option<FeatureGMM>> {
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for c in 0.. {
        let mean = entries.iter().find(|e| e.name == format!("gmm.mean.{c}"));
        let cov = entries.iter().find(|e| e.name == format!("gmm.cov.{c}"));
        match (mean, cov) {
            (Some(m), Some(v)) => {
                if v.dims.len() != 2 {
                    return Err(Error::Checkpoint {
                        msg: format!("gmm.cov.{c} must have rank 2"),
                    });
                }
                means.push(m.data.clone());
                covs.push(Mat::from_rows(
                    v.dims[0] as usize,
                    v.dims[1] as usize,
                    v.data.clone(),
                )?);
            }
            (None, None) => break,
            _ => {
                return Err(Error::Checkpoint {
                    msg: format!("class {c} has mean or covariance but not both"),
                })
            }
        }
    }
    if means.is_empty() {
        return Ok(None);
    }
    let mut gmm = FeatureGMM::from_parts(means, covs)?;
    if let Some(p95) = entries.iter().find(|e| e.name == "gmm.nll_p95") {
        gmm.set_nll_p95(p95.data[0]);
    }
    Ok(Some(gmm))
}

/// Write the model container and its meta sidecar.
pub fn save_model(path: &Path, model: &TrainedModel, meta: &ModelMeta) -> Result<()> {
    write_container(path, &network_entries(&model.params))?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Other {
        msg: format!("meta encode: {e}"),
    })?;
    fs::write(meta_path(path), json)?;
    Ok(())
}

/// Load model, sidecar, and (when fitted into the same container) the GMM.
pub fn load_model(path: &Path) -> Result<(TrainedModel, ModelMeta, Option<FeatureGMM>)> {
    let entries = read_container(path)?;
    let params = network_from_entries(&entries)?;
    let meta_file = meta_path(path);
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(&meta_file)?)
        .map_err(|e| Error::Checkpoint {
            msg: format!("meta sidecar {}: {e}", meta_file.display()),
        })?;
    let gmm = gmm_from_entries(&entries)?;
    if let Some(g) = &gmm {
        if g.dim() != params.feature_dim {
            return Err(Error::FeatureDimMismatch {
                model_dim: params.feature_dim,
                gmm_dim: g.dim(),
            });
        }
    }
    let model = TrainedModel {
        class_count: params.num_classes,
        train_accuracy: meta.train_accuracy,
        test_accuracy: meta.test_accuracy,
        params,
    };
    Ok((model, meta, gmm))
}

/// Append (or replace) the `gmm.*` tensors in a container, writing to `out`.
pub fn append_gmm(container: &Path, out: &Path, gmm: &FeatureGMM) -> Result<()> {
    let mut entries = read_container(container)?;
    entries.retain(|e| !e.name.starts_with("gmm."));
    entries.extend(gmm_entries(gmm));
    write_container(out, &entries)?;
    if container != out {
        let src_meta = meta_path(container);
        if src_meta.exists() {
            fs::copy(&src_meta, meta_path(out))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_entries() -> Vec<TensorEntry> {
        vec![
            TensorEntry::scalar("a.scalar", -3.25),
            TensorEntry::vector("b.vec", &[0.1, 0.2, 0.30000000000000004]),
            TensorEntry {
                name: "c.mat".into(),
                dims: vec![2, 3],
                data: vec![1.0, 2.0, 3.0, 4.0, 5.0, f64::MIN_POSITIVE],
            },
        ]
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let entries = sample_entries();
        let bytes = encode_container(&entries);
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode_container(&bytes).unwrap();
        assert_eq!(entries, back);
        // Re-encoding the decoded entries must reproduce the same bytes.
        assert_eq!(encode_container(&back), bytes);
    }

    #[test]
    fn container_rejects_corruption() {
        let entries = sample_entries();
        let mut bytes = encode_container(&entries);
        bytes[0] = b'X';
        assert!(decode_container(&bytes).is_err());

        let mut truncated = encode_container(&entries);
        truncated.pop();
        assert!(decode_container(&truncated).is_err());

        let mut bad_version = encode_container(&entries);
        bad_version[8] = 0xFF;
        assert!(decode_container(&bad_version).is_err());
    }

    #[test]
    fn network_round_trips_through_entries() {
        let params = NetworkParams::random(9, 4, 6, 3, 2, 77);
        let entries = network_entries(&params);
        let back = network_from_entries(&entries).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn gmm_round_trips_through_entries() {
        let mut gmm = FeatureGMM::from_parts(
            vec![vec![0.0, 1.0], vec![2.0, 3.0]],
            vec![Mat::diag(2, 1.0), Mat::diag(2, 2.0)],
        )
        .unwrap();
        gmm.set_nll_p95(12.5);
        let entries = gmm_entries(&gmm);
        let back = gmm_from_entries(&entries).unwrap().unwrap();
        assert_eq!(back.class_count(), 2);
        assert_eq!(back.mean(1), &[2.0, 3.0]);
        assert_eq!(back.nll_p95(), Some(12.5));
        assert_eq!(
            back.log_density_class(&[0.3, 0.4], 0).unwrap(),
            gmm.log_density_class(&[0.3, 0.4], 0).unwrap()
        );
        assert!(gmm_from_entries(&[]).unwrap().is_none());
    }

    #[test]
    fn save_load_preserves_predictions_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = TrainedModel {
            params: NetworkParams::random(4, 3, 5, 2, 1, 5),
            class_count: 2,
            train_accuracy: 0.975,
            test_accuracy: 0.9125,
        };
        let meta = ModelMeta {
            class_count: 2,
            train_accuracy: model.train_accuracy,
            test_accuracy: model.test_accuracy,
            config: TrainConfig::default(),
            data_fingerprint: "0xdeadbeefdeadbeef".into(),
            input_dim: 4,
            feature_dim: 3,
            hidden_dim: 5,
            num_blocks: 1,
        };
        save_model(&path, &model, &meta).unwrap();
        assert!(meta_path(&path).exists());
        let (loaded, meta_back, gmm) = load_model(&path).unwrap();
        assert!(gmm.is_none());
        assert_eq!(meta_back.data_fingerprint, meta.data_fingerprint);
        assert_eq!(loaded.train_accuracy, model.train_accuracy);

        use crate::classifier::predict;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        use rand::Rng;
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let a = predict(&model, &x).unwrap();
            let b = predict(&loaded, &x).unwrap();
            assert_eq!(a.probs, b.probs);
            assert_eq!(a.predicted_class, b.predicted_class);
        }
    }

    #[test]
    fn append_gmm_extends_container_and_validates_dim() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let out = dir.path().join("model_gmm.ckpt");
        let model = TrainedModel {
            params: NetworkParams::random(4, 3, 5, 2, 1, 5),
            class_count: 2,
            train_accuracy: 1.0,
            test_accuracy: 1.0,
        };
        let meta = ModelMeta {
            class_count: 2,
            train_accuracy: 1.0,
            test_accuracy: 1.0,
            config: TrainConfig::default(),
            data_fingerprint: "0x0".into(),
            input_dim: 4,
            feature_dim: 3,
            hidden_dim: 5,
            num_blocks: 1,
        };
        save_model(&path, &model, &meta).unwrap();

        // Mismatched GMM dimensionality must be refused on load.
        let bad_gmm = FeatureGMM::from_parts(
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![Mat::diag(2, 1.0), Mat::diag(2, 1.0)],
        )
        .unwrap();
        append_gmm(&path, &out, &bad_gmm).unwrap();
        assert!(matches!(
            load_model(&out),
            Err(Error::FeatureDimMismatch { .. })
        ));

        let good_gmm = FeatureGMM::from_parts(
            vec![vec![0.0; 3], vec![1.0; 3]],
            vec![Mat::diag(3, 1.0), Mat::diag(3, 1.0)],
        )
        .unwrap();
        append_gmm(&path, &out, &good_gmm).unwrap();
        let (_, _, gmm) = load_model(&out).unwrap();
        assert_eq!(gmm.unwrap().class_count(), 2);
    }
}
