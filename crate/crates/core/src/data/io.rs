//! Sharded dataset storage: `shard_NNNNN.bin` containers of up to
//! [`SHARD_SIZE`] samples, an `index.json` listing them and `spec.json`.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use parelab_numerics::{ArrayData, Container, NamedArray};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetSpec, Sample};
use crate::error::{CoreError, Result};
use crate::render::Image;

pub const SHARD_SIZE: usize = 256;

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl DatasetSpec {
    pub fn hash(&self) -> String {
        hex(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub start: usize,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub spec_hash: String,
    pub num_samples: usize,
    pub shards: Vec<ShardEntry>,
}

/// Samples together with the spec that produced them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn f64_array(shape: Vec<usize>, data: Vec<f64>) -> NamedArray {
    NamedArray { shape, data: ArrayData::F64(data) }
}

fn shard_container(spec: &DatasetSpec, samples: &[Sample]) -> Container {
    let n = samples.len();
    let (s, l) = (spec.image_size, spec.label_size);
    let k = samples.first().map_or(0, |x| x.pose.len());
    let b = samples.first().map_or(0, |x| x.betas.len());
    let cat = |f: &dyn Fn(&Sample) -> Vec<f64>| samples.iter().flat_map(f).collect::<Vec<f64>>();
    let mut c = Container::new(spec.hash());
    let indices: Vec<u64> = samples.iter().map(|x| x.index).collect();
    c.meta.insert("indices".into(), serde_json::to_value(indices).expect("indices serialize"));
    c.push("image", f64_array(vec![n, s, s, 3], cat(&|x| x.image.data.clone())));
    c.push("pose", f64_array(vec![n, k, 3], cat(&|x| x.pose.concat())));
    c.push("betas", f64_array(vec![n, b], cat(&|x| x.betas.clone())));
    c.push("camera", f64_array(vec![n, 3], cat(&|x| vec![x.scale, x.trans[0], x.trans[1]])));
    c.push("joints3d", f64_array(vec![n, k, 3], cat(&|x| x.joints3d.iter().flat_map(|p| [p.x, p.y, p.z]).collect())));
    c.push("joints2d", f64_array(vec![n, k, 2], cat(&|x| x.joints2d.concat())));
    c.push("confidence", f64_array(vec![n, k], cat(&|x| x.confidence.clone())));
    c.push_u32("visibility", vec![n, k], samples.iter().flat_map(|x| x.visibility.iter().map(|&v| v as u32)).collect());
    c.push_u32("part_labels", vec![n, l, l], samples.iter().flat_map(|x| x.part_labels.iter().copied()).collect());
    c
}

/// Writes `samples` under `dir`, replacing any earlier index.
pub fn write_dataset(dir: impl AsRef<Path>, spec: &DatasetSpec, samples: &[Sample]) -> Result<DatasetIndex> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut shards = Vec::new();
    for (i, chunk) in samples.chunks(SHARD_SIZE).enumerate() {
        let file = format!("shard_{i:05}.bin");
        let bytes = shard_container(spec, chunk).to_bytes();
        fs::write(dir.join(&file), &bytes)?;
        shards.push(ShardEntry { file, start: i * SHARD_SIZE, count: chunk.len(), sha256: hex(&bytes) });
    }
    let index = DatasetIndex { spec_hash: spec.hash(), num_samples: samples.len(), shards };
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

fn array<'a>(c: &'a Container, name: &str, shape: &[usize]) -> Result<&'a NamedArray> {
    let a = c.get(name).ok_or_else(|| CoreError::Data(format!("shard lacks array `{name}`")))?;
    if a.shape != shape {
        return Err(CoreError::Data(format!("array `{name}` has shape {:?}, expected {shape:?}", a.shape)));
    }
    Ok(a)
}

fn f64s<'a>(c: &'a Container, name: &str, shape: &[usize]) -> Result<&'a [f64]> {
    array(c, name, shape)?.as_f64().ok_or_else(|| CoreError::Data(format!("array `{name}` is not f64")))
}

fn u32s<'a>(c: &'a Container, name: &str, shape: &[usize]) -> Result<&'a [u32]> {
    array(c, name, shape)?.as_u32().ok_or_else(|| CoreError::Data(format!("array `{name}` is not u32")))
}

fn read_shard(c: &Container, spec: &DatasetSpec, count: usize) -> Result<Vec<Sample>> {
    let (s, l) = (spec.image_size, spec.label_size);
    let k = c.get("pose").and_then(|a| a.shape.get(1).copied()).unwrap_or(0);
    let b = c.get("betas").and_then(|a| a.shape.get(1).copied()).unwrap_or(0);
    let indices: Vec<u64> = serde_json::from_value(c.meta.get("indices").cloned().unwrap_or_default())
        .map_err(|e| CoreError::Data(format!("shard indices: {e}")))?;
    if indices.len() != count {
        return Err(CoreError::Data(format!("shard lists {} indices, index says {count}", indices.len())));
    }
    let image = f64s(c, "image", &[count, s, s, 3])?;
    let pose = f64s(c, "pose", &[count, k, 3])?;
    let betas = f64s(c, "betas", &[count, b])?;
    let camera = f64s(c, "camera", &[count, 3])?;
    let j3 = f64s(c, "joints3d", &[count, k, 3])?;
    let j2 = f64s(c, "joints2d", &[count, k, 2])?;
    let conf = f64s(c, "confidence", &[count, k])?;
    let vis = u32s(c, "visibility", &[count, k])?;
    let labels = u32s(c, "part_labels", &[count, l, l])?;
    Ok((0..count)
        .map(|i| Sample {
            seed: spec.seed,
            index: indices[i],
            image: Image { height: s, width: s, data: image[i * s * s * 3..(i + 1) * s * s * 3].to_vec() },
            pose: pose[i * k * 3..(i + 1) * k * 3].chunks(3).map(|p| [p[0], p[1], p[2]]).collect(),
            betas: betas[i * b..(i + 1) * b].to_vec(),
            scale: camera[3 * i],
            trans: [camera[3 * i + 1], camera[3 * i + 2]],
            joints3d: j3[i * k * 3..(i + 1) * k * 3].chunks(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            joints2d: j2[i * k * 2..(i + 1) * k * 2].chunks(2).map(|p| [p[0], p[1]]).collect(),
            confidence: conf[i * k..(i + 1) * k].to_vec(),
            visibility: vis[i * k..(i + 1) * k].iter().map(|&v| v != 0).collect(),
            label_size: l,
            part_labels: labels[i * l * l..(i + 1) * l * l].to_vec(),
        })
        .collect())
}

/// Reads a dataset written by [`write_dataset`], checking the index covers
/// every sample and every shard matches its recorded digest.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let read_json = |name: &str| -> Result<Vec<u8>> {
        fs::read(dir.join(name)).map_err(|e| CoreError::Data(format!("{}: {e}", dir.join(name).display())))
    };
    let spec: DatasetSpec = serde_json::from_slice(&read_json("spec.json")?)?;
    let index: DatasetIndex = serde_json::from_slice(&read_json("index.json")?)?;
    if index.spec_hash != spec.hash() {
        return Err(CoreError::HashMismatch { expected: spec.hash(), found: index.spec_hash });
    }
    let mut samples = Vec::with_capacity(index.num_samples);
    for entry in &index.shards {
        if entry.start != samples.len() {
            return Err(CoreError::Data(format!("shard {} starts at {}, expected {}", entry.file, entry.start, samples.len())));
        }
        let bytes = fs::read(dir.join(&entry.file))?;
        let c = Container::from_bytes(&bytes)?;
        if hex(&bytes) != entry.sha256 {
            return Err(CoreError::Data(format!("shard {} does not match its recorded digest", entry.file)));
        }
        if c.config_hash != index.spec_hash {
            return Err(CoreError::HashMismatch { expected: index.spec_hash.clone(), found: c.config_hash });
        }
        samples.extend(read_shard(&c, &spec, entry.count)?);
    }
    if samples.len() != index.num_samples {
        return Err(CoreError::Data(format!("index lists {} samples, shards hold {}", index.num_samples, samples.len())));
    }
    Ok(Dataset { spec, samples })
}
