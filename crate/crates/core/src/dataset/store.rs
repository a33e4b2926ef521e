//! On-disk dataset: `manifest.toml` plus one `samples/<id>.pcsc` file per
//! cloud. A sample file is a 16-byte header (magic `PCSC`, then version,
//! point count and label as little-endian `u32`, label `u32::MAX` meaning
//! unlabeled) followed by `N x 3` little-endian `f32` coordinates.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::off::parse_off_mesh;
use super::synthetic::{generate_synthetic, ShapeClass};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};

pub const SAMPLE_MAGIC: &[u8; 4] = b"PCSC";
pub const SAMPLE_VERSION: u32 = 1;
const UNLABELED: u32 = u32::MAX;

pub fn encode_sample(cloud: &PointCloud) -> Result<Vec<u8>> {
    let n = u32::try_from(cloud.len())
        .map_err(|_| Error::Format("cloud too large for the sample format".into()))?;
    let label = match cloud.label {
        None => UNLABELED,
        Some(l) => u32::try_from(l)
            .ok()
            .filter(|&l| l != UNLABELED)
            .ok_or_else(|| Error::Format(format!("label {l} not representable")))?,
    };
    let mut out = Vec::with_capacity(16 + 12 * cloud.len());
    out.extend_from_slice(SAMPLE_MAGIC);
    for word in [SAMPLE_VERSION, n, label] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for p in cloud.points() {
        for &c in p {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_sample(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 16 || &bytes[..4] != SAMPLE_MAGIC {
        return Err(Error::Format("missing PCSC sample header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let (version, n, label) = (word(1), word(2) as usize, word(3));
    if version != SAMPLE_VERSION {
        return Err(Error::Format(format!("unsupported sample version {version}")));
    }
    if bytes.len() - 16 != n * 12 {
        return Err(Error::Format(format!(
            "header declares {n} points but payload holds {} bytes",
            bytes.len() - 16
        )));
    }
    let coords: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let points = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let label = (label != UNLABELED).then_some(label as usize);
    PointCloud::new(points, label)
}

/// Generation parameters of the synthetic shape dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points_per_cloud: usize,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 8,
            train_per_class: 64,
            test_per_class: 16,
            points_per_cloud: 256,
            jitter: 0.01,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > ShapeClass::ALL.len() {
            return Err(Error::Config(format!(
                "num_classes must be in 1..={}, got {}",
                ShapeClass::ALL.len(),
                self.num_classes
            )));
        }
        if self.train_per_class + self.test_per_class == 0 {
            return Err(Error::Config("dataset would be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub points_per_cloud: usize,
    pub seed: u64,
    pub jitter: f64,
    pub splits: Splits,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        let mut seen = BTreeSet::new();
        for id in self.splits.train.iter().chain(&self.splits.test) {
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return Err(Error::Config(format!("invalid sample id {id:?}")));
            }
            if !seen.insert(id) {
                return Err(Error::Config(format!("sample {id:?} appears twice across splits")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

fn sample_id(class: usize, k: usize) -> String {
    format!("{}_{k:04}", ShapeClass::ALL[class].name())
}

/// Manifest plus the `(class, index)` generator key of every sample.
fn plan(config: &SyntheticConfig) -> Result<(DatasetManifest, BTreeMap<String, (usize, usize)>)> {
    config.validate()?;
    let per_class = config.train_per_class + config.test_per_class;
    let mut keys = BTreeMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..config.num_classes {
        let mut order: Vec<usize> = (0..per_class).collect();
        order.shuffle(&mut rng_for(config.seed, &[0x5911, class as u64]));
        for (pos, &k) in order.iter().enumerate() {
            let id = sample_id(class, k);
            keys.insert(id.clone(), (class, k));
            if pos < config.train_per_class {
                train.push(id);
            } else {
                test.push(id);
            }
        }
    }
    let manifest = DatasetManifest {
        num_classes: config.num_classes,
        class_names: ShapeClass::ALL[..config.num_classes]
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        points_per_cloud: config.points_per_cloud,
        seed: config.seed,
        jitter: config.jitter,
        splits: Splits { train, test },
    };
    manifest.validate()?;
    Ok((manifest, keys))
}

/// Stratified, seeded train/test split of the synthetic dataset.
pub fn make_manifest(config: &SyntheticConfig) -> Result<DatasetManifest> {
    Ok(plan(config)?.0)
}

/// A manifest with its clouds resident in memory, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn synthetic(config: &SyntheticConfig) -> Result<Dataset> {
        let (manifest, keys) = plan(config)?;
        let make = |ids: &[String]| -> Result<Vec<PointCloud>> {
            ids.iter()
                .map(|id| {
                    let (class, k) = keys[id];
                    let seed = derive_seed(config.seed, &[class as u64, k as u64]);
                    generate_synthetic(class, config.points_per_cloud, seed, config.jitter)
                })
                .collect()
        };
        let train = make(&manifest.splits.train)?;
        let test = make(&manifest.splits.test)?;
        Ok(Dataset {
            manifest,
            train,
            test,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    /// Per-class sample counts of a split.
    pub fn class_counts(clouds: &[PointCloud], num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for c in clouds {
            if let Some(l) = c.label.filter(|&l| l < num_classes) {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let samples = dir.join("samples");
        fs::create_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
        let path = dir.join("manifest.toml");
        fs::write(&path, self.manifest.to_toml()?).map_err(|e| Error::io(&path, e))?;
        let pairs = self
            .manifest
            .splits
            .train
            .iter()
            .zip(&self.train)
            .chain(self.manifest.splits.test.iter().zip(&self.test));
        for (id, cloud) in pairs {
            let path = samples.join(format!("{id}.pcsc"));
            fs::write(&path, encode_sample(cloud)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = DatasetManifest::from_toml(&text)?;
        let read = |ids: &[String]| -> Result<Vec<PointCloud>> {
            ids.iter()
                .map(|id| {
                    let path = dir.join("samples").join(format!("{id}.pcsc"));
                    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    let cloud = decode_sample(&bytes)?;
                    match cloud.label {
                        Some(l) if l < manifest.num_classes => {}
                        other => {
                            return Err(Error::Config(format!(
                                "sample {id}: label {other:?} outside 0..{}",
                                manifest.num_classes
                            )))
                        }
                    }
                    if cloud.len() != manifest.points_per_cloud {
                        return Err(Error::Config(format!(
                            "sample {id}: {} points, manifest says {}",
                            cloud.len(),
                            manifest.points_per_cloud
                        )));
                    }
                    Ok(cloud)
                })
                .collect()
        };
        let train = read(&manifest.splits.train)?;
        let test = read(&manifest.splits.test)?;
        Ok(Dataset {
            manifest,
            train,
            test,
        })
    }

    /// Imports a ModelNet-style tree, `<root>/<class>/{train,test}/*.off`.
    /// Classes are the sorted sub-directory names; every mesh is surface
    /// sampled to `points` points and unit-sphere normalized.
    pub fn from_off_tree(root: &Path, points: usize, seed: u64) -> Result<Dataset> {
        let mut class_names = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            if path.is_dir() {
                if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                    class_names.push(name.to_string());
                }
            }
        }
        class_names.sort();
        if class_names.is_empty() {
            return Err(Error::Config(format!("no class directories under {}", root.display())));
        }
        let mut splits = Splits::default();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (class, name) in class_names.iter().enumerate() {
            for (split, ids, clouds) in [
                ("train", &mut splits.train, &mut train),
                ("test", &mut splits.test, &mut test),
            ] {
                let dir = root.join(name).join(split);
                if !dir.is_dir() {
                    continue;
                }
                let mut files: Vec<_> = fs::read_dir(&dir)
                    .map_err(|e| Error::io(&dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("off")))
                    .collect();
                files.sort();
                for (k, file) in files.iter().enumerate() {
                    let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
                    let mesh = parse_off_mesh(&bytes).map_err(|e| match e {
                        Error::Parse { line, msg } => Error::Parse {
                            line,
                            msg: format!("{}: {msg}", file.display()),
                        },
                        other => other,
                    })?;
                    let sample_seed = derive_seed(seed, &[class as u64, (split == "test") as u64, k as u64]);
                    clouds.push(mesh.sample_surface(points, sample_seed, Some(class))?);
                    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
                    ids.push(format!("{name}_{split}_{stem}"));
                }
            }
        }
        let manifest = DatasetManifest {
            num_classes: class_names.len(),
            class_names,
            points_per_cloud: points,
            seed,
            jitter: 0.0,
            splits,
        };
        manifest.validate()?;
        Ok(Dataset {
            manifest,
            train,
            test,
        })
    }

    /// The same dataset after the `f32` round trip of the sample format, so
    /// in-memory and on-disk runs see identical inputs.
    pub fn quantized(&self) -> Result<Dataset> {
        let q = |v: &[PointCloud]| -> Result<Vec<PointCloud>> {
            v.iter().map(|c| decode_sample(&encode_sample(c)?)).collect()
        };
        Ok(Dataset {
            manifest: self.manifest.clone(),
            train: q(&self.train)?,
            test: q(&self.test)?,
        })
    }
}
