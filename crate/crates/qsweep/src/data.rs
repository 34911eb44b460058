//! Dataset ingestion: synthetic Gaussian class clusters and the CIFAR-10
//! binary record format.
//!
//! CIFAR-10 binary files are sequences of 3073-byte records: one label byte
//! followed by 3072 pixel bytes (32x32, RGB planar). Pixels are normalized
//! with the fixed per-channel constants [`CIFAR10_MEAN`] / [`CIFAR10_STD`].
//! The `QSWEEP_DATA_ROOT` environment variable, when set, is prepended to
//! relative dataset paths.
//!
//! All iteration is deterministic given the seed: per-epoch shuffles and
//! augmentation draws come from a counter-based ChaCha stream.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use nnkit::Tensor;

use crate::error::{Error, Result};

pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

pub const DATA_ROOT_ENV: &str = "QSWEEP_DATA_ROOT";

const RECORD_BYTES: u64 = 3073;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// K Gaussian class clusters in image space: per class, a smooth mean
    /// image (a coarse random grid upsampled bilinearly, so convolutions
    /// have local structure to pick up) scaled to L2 norm `separation`,
    /// plus unit white noise per pixel. Random unit means in high dimension
    /// are near-orthogonal, so the distance between two class means is
    /// about `separation * sqrt(2)` noise standard deviations; separation 0
    /// makes the classes indistinguishable and chance accuracy 1/K is the
    /// best achievable.
    Synthetic {
        classes: usize,
        resolution: usize,
        channels: usize,
        train_size: usize,
        eval_size: usize,
        separation: f64,
    },
    /// Directory with `data_batch_1..5.bin` and `test_batch.bin`, or a
    /// single `.bin` file used for both splits.
    Cifar10 {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_limit: Option<usize>,
        #[serde(default)]
        augment: bool,
    },
}

/// One split held fully in memory, images flattened NHWC.
#[derive(Debug, Clone)]
pub struct Split {
    images: Vec<f32>,
    labels: Vec<u8>,
    image_len: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.image_len..(i + 1) * self.image_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Split,
    pub eval: Split,
    pub classes: usize,
    pub resolution: usize,
    pub channels: usize,
    pub augment_train: bool,
}

pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Synthetic {
            classes,
            resolution,
            channels,
            train_size,
            eval_size,
            separation,
        } => synthetic(
            *classes,
            *resolution,
            *channels,
            *train_size,
            *eval_size,
            *separation,
            seed,
        ),
        DatasetConfig::Cifar10 {
            path,
            train_limit,
            eval_limit,
            augment,
        } => cifar10(path, *train_limit, *eval_limit, *augment),
    }
}

fn synthetic(
    classes: usize,
    resolution: usize,
    channels: usize,
    train_size: usize,
    eval_size: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || resolution == 0 || channels == 0 || train_size == 0 || eval_size == 0 {
        return Err(Error::Dataset("synthetic dataset needs positive sizes".into()));
    }
    if separation < 0.0 || !separation.is_finite() {
        return Err(Error::Dataset(format!("bad separation {separation}")));
    }
    let dims = resolution * resolution * channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5D4E_17A3_9B60_C2F1);
    let means: Vec<Vec<f32>> = (0..classes)
        .map(|_| smooth_mean(&mut rng, resolution, channels, separation))
        .collect();

    let mut draw_split = |n: usize| -> Split {
        let mut images = Vec::with_capacity(n * dims);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % classes) as u8;
            let mean = &means[label as usize];
            for &m in mean.iter() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                images.push(m + noise as f32);
            }
            labels.push(label);
        }
        Split {
            images,
            labels,
            image_len: dims,
        }
    };

    let train = draw_split(train_size);
    let eval = draw_split(eval_size);
    Ok(Dataset {
        train,
        eval,
        classes,
        resolution,
        channels,
        augment_train: false,
    })
}

/// Smooth random mean image: a coarse Gaussian grid (about a quarter of the
/// resolution per side) bilinearly upsampled, then rescaled to L2 norm
/// `separation`.
fn smooth_mean(rng: &mut ChaCha8Rng, resolution: usize, channels: usize, separation: f64) -> Vec<f32> {
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let coarse = (resolution / 4).max(2).min(resolution);
    let grid: Vec<f64> = (0..coarse * coarse * channels)
        .map(|_| normal.sample(rng))
        .collect();
    let at = |y: usize, x: usize, c: usize| grid[(y * coarse + x) * channels + c];

    let mut mean = vec![0.0f64; resolution * resolution * channels];
    for y in 0..resolution {
        for x in 0..resolution {
            let (fy, fx) = if resolution > 1 {
                let s = (coarse - 1) as f64 / (resolution - 1) as f64;
                (y as f64 * s, x as f64 * s)
            } else {
                (0.0, 0.0)
            };
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(coarse - 1), (x0 + 1).min(coarse - 1));
            let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
            for c in 0..channels {
                mean[(y * resolution + x) * channels + c] = at(y0, x0, c) * (1.0 - wy) * (1.0 - wx)
                    + at(y0, x1, c) * (1.0 - wy) * wx
                    + at(y1, x0, c) * wy * (1.0 - wx)
                    + at(y1, x1, c) * wy * wx;
            }
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { separation / norm } else { 0.0 };
    mean.into_iter().map(|v| (v * scale) as f32).collect()
}

fn resolve_root(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            return Path::new(&root).join(path);
        }
    }
    path.to_path_buf()
}

fn cifar10(
    path: &Path,
    train_limit: Option<usize>,
    eval_limit: Option<usize>,
    augment: bool,
) -> Result<Dataset> {
    let root = resolve_root(path);
    let (train_files, eval_files): (Vec<PathBuf>, Vec<PathBuf>) = if root.is_file() {
        (vec![root.clone()], vec![root.clone()])
    } else {
        (
            (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect(),
            vec![root.join("test_batch.bin")],
        )
    };
    let train = read_cifar_files(&train_files, train_limit)?;
    let eval = read_cifar_files(&eval_files, eval_limit)?;
    Ok(Dataset {
        train,
        eval,
        classes: 10,
        resolution: 32,
        channels: 3,
        augment_train: augment,
    })
}

fn read_cifar_files(files: &[PathBuf], limit: Option<usize>) -> Result<Split> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let cap = limit.unwrap_or(usize::MAX);
    'outer: for f in files {
        let bytes = fs::read(f)?;
        if bytes.len() as u64 % RECORD_BYTES != 0 {
            return Err(Error::TruncatedRecord {
                path: f.clone(),
                len: bytes.len() as u64,
                record: RECORD_BYTES,
            });
        }
        for rec in bytes.chunks_exact(RECORD_BYTES as usize) {
            let label = rec[0];
            if label >= 10 {
                return Err(Error::DatasetLabel {
                    path: f.clone(),
                    label,
                    classes: 10,
                });
            }
            labels.push(label);
            // planar RGB -> interleaved NHWC, normalized
            let pixels = &rec[1..];
            for p in 0..1024 {
                for c in 0..3 {
                    let v = pixels[c * 1024 + p] as f32 / 255.0;
                    images.push((v - CIFAR10_MEAN[c]) / CIFAR10_STD[c]);
                }
            }
            if labels.len() >= cap {
                break 'outer;
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Dataset("no CIFAR-10 records found".into()));
    }
    Ok(Split {
        images,
        labels,
        image_len: 3072,
    })
}

// ---- batching -------------------------------------------------------------

/// Deterministic shuffled batches over a split, cycling epochs. Optional
/// CIFAR-style augmentation (horizontal flip + 4-pixel random crop).
pub struct BatchStream<'a> {
    split: &'a Split,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<u32>,
    pos: usize,
    augment: bool,
    resolution: usize,
    channels: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        split: &'a Split,
        batch: usize,
        seed: u64,
        augment: bool,
        resolution: usize,
        channels: usize,
    ) -> Self {
        let mut s = BatchStream {
            split,
            batch,
            seed,
            epoch: 0,
            order: (0..split.len() as u32).collect(),
            pos: 0,
            augment,
            resolution,
            channels,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(self.epoch),
        );
        // Fisher-Yates with the epoch stream
        for i in (1..self.order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    /// Next batch of images (NHWC) and labels, wrapping to the next epoch
    /// when the split is exhausted.
    pub fn next_batch(&mut self) -> (Tensor<f32>, Vec<usize>) {
        let n = self.batch;
        let dims = self.split.image_len;
        let mut images = Vec::with_capacity(n * dims);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos >= self.order.len() {
                self.epoch += 1;
                self.reshuffle();
            }
            let idx = self.order[self.pos] as usize;
            self.pos += 1;
            let img = self.split.image(idx);
            if self.augment {
                let mut buf = img.to_vec();
                self.augment_in_place(&mut buf);
                images.extend_from_slice(&buf);
            } else {
                images.extend_from_slice(img);
            }
            labels.push(self.split.label(idx));
        }
        let t = Tensor::from_vec(&[n, self.resolution, self.resolution, self.channels], images)
            .expect("batch shape");
        (t, labels)
    }

    fn augment_in_place(&mut self, img: &mut [f32]) {
        let (res, ch) = (self.resolution, self.channels);
        // horizontal flip with probability 1/2
        if self.rng.random_range(0..2u32) == 1 {
            for y in 0..res {
                for x in 0..res / 2 {
                    for c in 0..ch {
                        let a = (y * res + x) * ch + c;
                        let b = (y * res + (res - 1 - x)) * ch + c;
                        img.swap(a, b);
                    }
                }
            }
        }
        // random crop from a 4-pixel zero pad
        let pad = 4i32;
        let dy = self.rng.random_range(0..(2 * pad + 1)) - pad;
        let dx = self.rng.random_range(0..(2 * pad + 1)) - pad;
        if dy == 0 && dx == 0 {
            return;
        }
        let src = img.to_vec();
        for y in 0..res as i32 {
            for x in 0..res as i32 {
                let (sy, sx) = (y + dy, x + dx);
                for c in 0..ch {
                    let dst = (y as usize * res + x as usize) * ch + c;
                    img[dst] = if sy < 0 || sx < 0 || sy >= res as i32 || sx >= res as i32 {
                        0.0
                    } else {
                        src[(sy as usize * res + sx as usize) * ch + c]
                    };
                }
            }
        }
    }
}

/// Sequential batches for evaluation, covering every example exactly once
/// (the final batch may be short).
pub fn eval_batches(
    split: &Split,
    batch: usize,
    resolution: usize,
    channels: usize,
) -> impl Iterator<Item = (Tensor<f32>, Vec<usize>)> + '_ {
    let n = split.len();
    (0..n.div_ceil(batch)).map(move |b| {
        let start = b * batch;
        let end = (start + batch).min(n);
        let mut images = Vec::with_capacity((end - start) * split.image_len);
        let mut labels = Vec::with_capacity(end - start);
        for i in start..end {
            images.extend_from_slice(split.image(i));
            labels.push(split.label(i));
        }
        let t = Tensor::from_vec(&[end - start, resolution, resolution, channels], images)
            .expect("eval batch shape");
        (t, labels)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_cfg() -> DatasetConfig {
        DatasetConfig::Synthetic {
            classes: 4,
            resolution: 8,
            channels: 3,
            train_size: 64,
            eval_size: 32,
            separation: 3.0,
        }
    }

    #[test]
    fn synthetic_shapes_and_balance() {
        let ds = load_dataset(&synth_cfg(), 42).unwrap();
        assert_eq!(ds.train.len(), 64);
        assert_eq!(ds.eval.len(), 32);
        assert_eq!(ds.train.image(0).len(), 8 * 8 * 3);
        // round-robin labels are exactly balanced
        let mut counts = [0usize; 4];
        for i in 0..ds.train.len() {
            counts[ds.train.label(i)] += 1;
        }
        assert_eq!(counts, [16, 16, 16, 16]);
    }

    #[test]
    fn same_seed_same_data_different_seed_different_data() {
        let a = load_dataset(&synth_cfg(), 1).unwrap();
        let b = load_dataset(&synth_cfg(), 1).unwrap();
        let c = load_dataset(&synth_cfg(), 2).unwrap();
        assert_eq!(a.train.image(0), b.train.image(0));
        assert_ne!(a.train.image(0), c.train.image(0));
    }

    #[test]
    fn separation_zero_means_identical_class_distributions() {
        let ds = load_dataset(
            &DatasetConfig::Synthetic {
                classes: 4,
                resolution: 4,
                channels: 1,
                train_size: 16,
                eval_size: 8,
                separation: 0.0,
            },
            3,
        )
        .unwrap();
        // all class means are exactly zero, so images are pure noise
        let sum: f32 = (0..ds.train.len())
            .map(|i| ds.train.image(i).iter().sum::<f32>())
            .sum();
        assert!(sum.abs() < 100.0); // loose sanity: zero-mean noise
    }

    #[test]
    fn batches_cycle_deterministically() {
        let ds = load_dataset(&synth_cfg(), 9).unwrap();
        let collect = || {
            let mut s = BatchStream::new(&ds.train, 16, 5, false, 8, 3);
            let mut out = Vec::new();
            for _ in 0..6 {
                let (t, l) = s.next_batch();
                out.push((t.data().to_vec(), l));
            }
            out
        };
        let a = collect();
        let b = collect();
        assert_eq!(a, b, "same seed reproduces the batch sequence");
        // one epoch covers all 64 examples exactly once
        let mut s = BatchStream::new(&ds.train, 16, 5, false, 8, 3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..4 {
            let (_, labels) = s.next_batch();
            let _ = labels;
        }
        for &i in &s.order {
            seen.insert(i);
        }
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn cifar_record_parsing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("batch.bin");

        // two valid records
        let mut bytes = vec![0u8; 3073 * 2];
        bytes[0] = 3; // label of record 0
        bytes[1] = 255; // an R pixel
        bytes[3073] = 9; // label of record 1
        fs::write(&file, &bytes).unwrap();
        let cfg = DatasetConfig::Cifar10 {
            path: file.clone(),
            train_limit: None,
            eval_limit: None,
            augment: false,
        };
        let ds = load_dataset(&cfg, 0).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.train.label(0), 3);
        assert_eq!(ds.train.label(1), 9);
        // first pixel of record 0: (255/255 - mean) / std for channel R
        let expect = (1.0 - CIFAR10_MEAN[0]) / CIFAR10_STD[0];
        assert!((ds.train.image(0)[0] - expect).abs() < 1e-6);

        // truncated file
        fs::write(&file, &bytes[..3073 + 100]).unwrap();
        assert!(matches!(
            load_dataset(&cfg, 0),
            Err(Error::TruncatedRecord { .. })
        ));

        // label out of range
        let mut bad = vec![0u8; 3073];
        bad[0] = 10;
        fs::write(&file, &bad).unwrap();
        assert!(matches!(
            load_dataset(&cfg, 0),
            Err(Error::DatasetLabel { .. })
        ));
    }

    #[test]
    fn record_count_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("batch.bin");
        let n = 7;
        fs::write(&file, vec![0u8; 3073 * n]).unwrap();
        let ds = load_dataset(
            &DatasetConfig::Cifar10 {
                path: file,
                train_limit: None,
                eval_limit: None,
                augment: false,
            },
            0,
        )
        .unwrap();
        assert_eq!(ds.train.len(), n);
    }

    #[test]
    fn eval_batches_cover_split_once() {
        let ds = load_dataset(&synth_cfg(), 11).unwrap();
        let mut total = 0;
        for (t, labels) in eval_batches(&ds.eval, 10, 8, 3) {
            assert_eq!(t.shape()[0], labels.len());
            total += labels.len();
        }
        assert_eq!(total, 32);
    }

    #[test]
    fn env_root_prepends_relative_paths() {
        let got = {
            std::env::set_var(DATA_ROOT_ENV, "/data/root");
            let p = resolve_root(Path::new("cifar"));
            std::env::remove_var(DATA_ROOT_ENV);
            p
        };
        assert_eq!(got, PathBuf::from("/data/root/cifar"));
        assert_eq!(resolve_root(Path::new("/abs/x")), PathBuf::from("/abs/x"));
    }
}
