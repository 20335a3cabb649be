//! Synthetic non-iid federated datasets, train/test splitting and the
//! JSON-lines dataset file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Shape;
use crate::rng::{self, Purpose, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceShard {
    pub device_id: u32,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Counts shard reads made on behalf of local training.
///
/// Metric evaluation goes through [`FederatedDataset::devices`] and is not
/// counted; only [`FederatedDataset::training_shard`] increments the counter.
#[derive(Debug, Clone, Default)]
pub struct TrainingReads(Arc<AtomicU64>);

impl TrainingReads {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct FederatedDataset {
    devices: Vec<DeviceShard>,
    dim_x: usize,
    classes: usize,
    seed: Option<u64>,
    reads: TrainingReads,
}

impl PartialEq for FederatedDataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim_x == other.dim_x
            && self.classes == other.classes
            && self.seed == other.seed
            && self.devices == other.devices
    }
}

impl FederatedDataset {
    /// Validates the dataset invariants: at least one device, unique ids,
    /// non-empty training shards, consistent feature length and labels.
    pub fn new(
        devices: Vec<DeviceShard>,
        dim_x: usize,
        classes: usize,
        seed: Option<u64>,
    ) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::Contract("a dataset needs at least one device".into()));
        }
        if dim_x == 0 || classes < 2 {
            return Err(Error::Contract(format!(
                "invalid dimensions d_x={dim_x}, C={classes}"
            )));
        }
        let mut ids: Vec<u32> = devices.iter().map(|d| d.device_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("duplicate device id".into()));
        }
        for shard in &devices {
            if shard.train.is_empty() {
                return Err(Error::Contract(format!(
                    "device {} has no training samples",
                    shard.device_id
                )));
            }
            for s in shard.train.iter().chain(&shard.test) {
                if s.features.len() != dim_x {
                    return Err(Error::Contract(format!(
                        "device {}: sample has {} features, expected {dim_x}",
                        shard.device_id,
                        s.features.len()
                    )));
                }
                if s.label >= classes {
                    return Err(Error::Contract(format!(
                        "device {}: label {} out of range for {classes} classes",
                        shard.device_id, s.label
                    )));
                }
                if s.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Contract(format!(
                        "device {}: non-finite feature",
                        shard.device_id
                    )));
                }
            }
        }
        Ok(Self {
            devices,
            dim_x,
            classes,
            seed,
            reads: TrainingReads::default(),
        })
    }

    pub fn devices(&self) -> &[DeviceShard] {
        &self.devices
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn model_shape(&self) -> Shape {
        Shape::new(self.dim_x, self.classes)
    }

    /// Shard access for local training; counted.
    pub fn training_shard(&self, index: usize) -> &DeviceShard {
        self.reads.bump();
        &self.devices[index]
    }

    pub fn training_reads(&self) -> TrainingReads {
        self.reads.clone()
    }

    pub fn train_sizes(&self) -> Vec<usize> {
        self.devices.iter().map(|d| d.train.len()).collect()
    }

    /// `p_i`: each device's share of all training samples.
    pub fn device_weights(&self) -> Vec<f64> {
        let total: usize = self.devices.iter().map(|d| d.train.len()).sum();
        self.devices
            .iter()
            .map(|d| d.train.len() as f64 / total as f64)
            .collect()
    }

    pub fn total_train(&self) -> usize {
        self.devices.iter().map(|d| d.train.len()).sum()
    }

    /// Divides every feature vector by the largest feature norm in the
    /// dataset so that `‖x‖ ≤ 1`. A global scale keeps the labels linearly
    /// realizable.
    pub fn normalized(&self) -> FederatedDataset {
        let max_norm = self
            .devices
            .iter()
            .flat_map(|d| d.train.iter().chain(&d.test))
            .map(|s| s.features.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0_f64, f64::max);
        let mut out = self.clone();
        out.reads = TrainingReads::default();
        if max_norm > 0.0 {
            for s in out
                .devices
                .iter_mut()
                .flat_map(|d| d.train.iter_mut().chain(d.test.iter_mut()))
            {
                for v in &mut s.features {
                    *v /= max_norm;
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Per-device sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SizeSpec {
    Fixed {
        n: usize,
    },
    /// `round(exp(Normal(mu_ln, sigma_ln)))` clamped to `[min, max]`.
    Lognormal {
        mu_ln: f64,
        sigma_ln: f64,
        min: usize,
        max: usize,
    },
}

impl Default for SizeSpec {
    fn default() -> Self {
        SizeSpec::Lognormal {
            mu_ln: 150f64.ln(),
            sigma_ln: 1.0,
            min: 20,
            max: 2000,
        }
    }
}

impl SizeSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            SizeSpec::Fixed { n: 0 } => {
                Err(Error::Config("fixed shard size must be ≥ 1".into()))
            }
            SizeSpec::Lognormal {
                sigma_ln, min, max, ..
            } if sigma_ln < 0.0 || min == 0 || min > max => Err(Error::Config(format!(
                "lognormal sizes need sigma_ln ≥ 0 and 1 ≤ min ≤ max (got sigma_ln={sigma_ln}, min={min}, max={max})"
            ))),
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut Stream) -> usize {
        match *self {
            SizeSpec::Fixed { n } => n,
            SizeSpec::Lognormal {
                mu_ln,
                sigma_ln,
                min,
                max,
            } => {
                let z: f64 = rng.sample(StandardNormal);
                let n = (mu_ln + sigma_ln * z).exp().round();
                (n.max(min as f64).min(max as f64)) as usize
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub beta: f64,
    pub gamma: f64,
    pub iid: bool,
    pub num_devices: usize,
    pub dim_x: usize,
    pub classes: usize,
    pub sizes: SizeSpec,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 30 devices, 20 features, 10 classes.
    pub fn standard(beta: f64, gamma: f64, iid: bool, seed: u64) -> Self {
        Self {
            beta,
            gamma,
            iid,
            num_devices: 30,
            dim_x: 20,
            classes: 10,
            sizes: SizeSpec::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_devices == 0 || self.dim_x == 0 || self.classes < 2 {
            return Err(Error::Config(format!(
                "need ≥1 device, d_x ≥ 1, C ≥ 2 (got {} devices, d_x={}, C={})",
                self.num_devices, self.dim_x, self.classes
            )));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("beta and gamma must be ≥ 0".into()));
        }
        self.sizes.validate()
    }
}

/// The hidden generating state of one device: logit map `(W, b)` and the
/// feature mean `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub mean: Vec<f64>,
    /// Standard deviations `sqrt(j^-1.2)`, `j` counted from 1.
    pub feature_std: Vec<f64>,
}

impl DeviceModel {
    pub fn sample_features(&self, rng: &mut Stream) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.feature_std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }

    /// `argmax(softmax(Wx + b))`, which is the argmax of the logits.
    pub fn label(&self, x: &[f64]) -> usize {
        let classes = self.biases.len();
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for c in 0..classes {
            let row = &self.weights[c * x.len()..(c + 1) * x.len()];
            let z = self.biases[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if z > best_val {
                best_val = z;
                best = c;
            }
        }
        best
    }
}

fn feature_std(dim_x: usize) -> Vec<f64> {
    (1..=dim_x).map(|j| (j as f64).powf(-1.2).sqrt()).collect()
}

fn normal_vec(rng: &mut Stream, mean: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn scalar_normal(rng: &mut Stream, std: f64) -> f64 {
    // Normal::new only fails for non-finite / negative std, ruled out by validate().
    Normal::new(0.0, std).expect("validated std").sample(rng)
}

/// Draws the generating state of every device.
///
/// Per device `k`: `u_k ~ N(0, β)`, `W_k, b_k ~ N(u_k, 1)` entrywise,
/// `B_k ~ N(0, γ)`, `v_k ~ N(B_k, 1)` entrywise. β and γ are standard
/// deviations. With `iid` a single `(W, b, v)` drawn from the shared stream
/// is used for every device.
pub fn generating_state(spec: &SyntheticSpec) -> Result<Vec<DeviceModel>> {
    spec.validate()?;
    let std = feature_std(spec.dim_x);
    let n_w = spec.classes * spec.dim_x;
    if spec.iid {
        let mut rng = rng::stream(spec.seed, Purpose::DataGen, 1, 0);
        let shared = DeviceModel {
            weights: normal_vec(&mut rng, 0.0, n_w),
            biases: normal_vec(&mut rng, 0.0, spec.classes),
            mean: normal_vec(&mut rng, 0.0, spec.dim_x),
            feature_std: std,
        };
        return Ok(vec![shared; spec.num_devices]);
    }
    Ok((0..spec.num_devices)
        .map(|k| {
            let mut rng = rng::stream(spec.seed, Purpose::DataGen, 2, k as u64);
            let u = scalar_normal(&mut rng, spec.beta);
            let weights = normal_vec(&mut rng, u, n_w);
            let biases = normal_vec(&mut rng, u, spec.classes);
            let b = scalar_normal(&mut rng, spec.gamma);
            let mean = normal_vec(&mut rng, b, spec.dim_x);
            DeviceModel {
                weights,
                biases,
                mean,
                feature_std: std.clone(),
            }
        })
        .collect())
}

/// Generates the synthetic federated dataset. All samples land in the
/// training split; see [`split_train_test`].
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FederatedDataset> {
    let models = generating_state(spec)?;
    let devices: Vec<DeviceShard> = models
        .par_iter()
        .enumerate()
        .map(|(k, model)| {
            let mut rng = rng::stream(spec.seed, Purpose::DataGen, 0, k as u64);
            let n = spec.sizes.draw(&mut rng);
            let train = (0..n)
                .map(|_| {
                    let x = model.sample_features(&mut rng);
                    let label = model.label(&x);
                    Sample { features: x, label }
                })
                .collect();
            DeviceShard {
                device_id: k as u32,
                train,
                test: Vec::new(),
            }
        })
        .collect();
    FederatedDataset::new(devices, spec.dim_x, spec.classes, Some(spec.seed))
}

/// Shuffles each device's samples and moves `floor(f·n)` of them to the test
/// split; train keeps the remaining `ceil((1−f)·n)`.
pub fn split_train_test(
    dataset: &FederatedDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut devices = Vec::with_capacity(dataset.devices.len());
    for shard in &dataset.devices {
        let mut all: Vec<Sample> = shard.train.iter().chain(&shard.test).cloned().collect();
        let n = all.len();
        if test_fraction > 0.0 && n < 2 {
            return Err(Error::Split {
                device: shard.device_id,
                samples: n,
            });
        }
        let mut rng = rng::stream(seed, Purpose::Split, 0, shard.device_id as u64);
        all.shuffle(&mut rng);
        // The epsilon guards products such as 0.1·30 = 3.0000000000000004.
        let n_test = (test_fraction * n as f64 + 1e-9).floor() as usize;
        let test = all.split_off(n - n_test);
        devices.push(DeviceShard {
            device_id: shard.device_id,
            train: all,
            test,
        });
    }
    FederatedDataset::new(devices, dataset.dim_x, dataset.classes, dataset.seed)
}

// ---------------------------------------------------------------------------
// JSON-lines file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    d_x: usize,
    #[serde(rename = "C")]
    classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SplitTag {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record<'a> {
    device: u32,
    #[serde(borrow)]
    x: std::borrow::Cow<'a, [f64]>,
    y: usize,
    split: SplitTag,
}

pub fn save_dataset(dataset: &FederatedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset(dataset: &FederatedDataset, out: &mut impl Write) -> Result<()> {
    let header = Header {
        d_x: dataset.dim_x,
        classes: dataset.classes,
        seed: dataset.seed,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for shard in &dataset.devices {
        for (split, samples) in [(SplitTag::Train, &shard.train), (SplitTag::Test, &shard.test)] {
            for s in samples {
                let rec = Record {
                    device: shard.device_id,
                    x: std::borrow::Cow::Borrowed(&s.features),
                    y: s.label,
                    split,
                };
                serde_json::to_writer(&mut *out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<FederatedDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_dataset(input: impl BufRead) -> Result<FederatedDataset> {
    let mut lines = input.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header line".into(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.d_x == 0 || header.classes < 2 {
        return Err(Error::Schema {
            line: 1,
            message: format!("invalid header d_x={}, C={}", header.d_x, header.classes),
        });
    }

    // Devices keep their order of first appearance.
    let mut devices: Vec<DeviceShard> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record<'_> = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.x.len() != header.d_x {
            return Err(Error::Schema {
                line: lineno,
                message: format!("expected {} features, found {}", header.d_x, rec.x.len()),
            });
        }
        if rec.y >= header.classes {
            return Err(Error::Schema {
                line: lineno,
                message: format!("label {} not below C = {}", rec.y, header.classes),
            });
        }
        let idx = *index_of.entry(rec.device).or_insert_with(|| {
            devices.push(DeviceShard {
                device_id: rec.device,
                train: Vec::new(),
                test: Vec::new(),
            });
            devices.len() - 1
        });
        let sample = Sample {
            features: rec.x.into_owned(),
            label: rec.y,
        };
        match rec.split {
            SplitTag::Train => devices[idx].train.push(sample),
            SplitTag::Test => devices[idx].test.push(sample),
        }
    }
    if devices.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "file lists no devices".into(),
        });
    }
    if let Some(d) = devices.iter().find(|d| d.train.is_empty()) {
        return Err(Error::Schema {
            line: 0,
            message: format!("device {} has no training samples", d.device_id),
        });
    }
    FederatedDataset::new(devices, header.d_x, header.classes, header.seed)
}
