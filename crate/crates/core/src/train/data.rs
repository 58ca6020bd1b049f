//! Desk-scale dataset assembly.
//!
//! Rate-coded splits hold intensity images that are re-encoded into fresh
//! Bernoulli spike trains every epoch; event splits hold binned frame
//! stacks computed once. When `TACSNN_DATA_DIR` contains the IDX files the
//! digit split downsamples real images; otherwise it falls back to the
//! synthetic glyph corpus so the full pipeline runs offline.

use std::path::Path;

use crate::encoding::{
    self, rate_encode_batch, sample_seed, synth_digits, synth_gesture, FrameStack,
};
use crate::exec::Exec;
use crate::temporal::SpikeTrain;
use crate::tensor::Tensor;

use super::TrainError;

/// One labeled split.
#[derive(Debug, Clone)]
pub enum Split {
    /// Intensity images in `[0,1]`, shape `[C, H, W]` each.
    RateCoded { images: Vec<Tensor>, labels: Vec<u8> },
    /// Pre-binned event frames, `[T, C, H, W]` each.
    Event { stacks: Vec<FrameStack>, labels: Vec<u8> },
}

impl Split {
    pub fn len(&self) -> usize {
        match self {
            Split::RateCoded { labels, .. } | Split::Event { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[u8] {
        match self {
            Split::RateCoded { labels, .. } | Split::Event { labels, .. } => labels,
        }
    }

    /// Assemble the batch at `indices` into a `[T, B, C, H, W]` train.
    ///
    /// Rate-coded data draws fresh Bernoulli frames from `encode_seed`;
    /// event data is deterministic and ignores it.
    pub fn batch(
        &self,
        indices: &[usize],
        t: usize,
        encode_seed: u64,
    ) -> Result<(SpikeTrain, Vec<usize>), TrainError> {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels()[i] as usize).collect();
        let train = match self {
            Split::RateCoded { images, .. } => {
                let selected: Vec<Tensor> = indices.iter().map(|&i| images[i].clone()).collect();
                rate_encode_batch(&selected, t, encode_seed, Exec::default())?
            }
            Split::Event { stacks, .. } => {
                let first = stacks[indices[0]].shape();
                let (st, c, h, w) = (first[0], first[1], first[2], first[3]);
                if st != t {
                    return Err(TrainError::Config(format!(
                        "event data has {st} timesteps but the model expects {t}"
                    )));
                }
                let b = indices.len();
                let frame_len = c * h * w;
                let mut data = vec![0.0f32; t * b * frame_len];
                for (bi, &idx) in indices.iter().enumerate() {
                    let src = stacks[idx].tensor().data();
                    for step in 0..t {
                        let dst = &mut data
                            [(step * b + bi) * frame_len..(step * b + bi + 1) * frame_len];
                        dst.copy_from_slice(&src[step * frame_len..(step + 1) * frame_len]);
                    }
                }
                SpikeTrain::new(Tensor::from_vec(&[t, b, c, h, w], data)?, false)?
            }
        };
        Ok((train, labels))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub classes: usize,
}

/// Average-pool a `[rows, cols]` image by 2x into `[1, rows/2, cols/2]`.
fn downsample2(image: &[f32], rows: usize, cols: usize) -> Tensor {
    let (oh, ow) = (rows / 2, cols / 2);
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    acc += image[(y * 2 + dy) * cols + (x * 2 + dx)];
                }
            }
            out[y * ow + x] = acc / 4.0;
        }
    }
    Tensor::from_vec(&[1, oh, ow], out).expect("downsample shape")
}

/// Digit dataset at 14x14: real MNIST from `dir` when the IDX files are
/// present there, synthetic glyphs otherwise.
pub fn digits_dataset(
    dir: Option<&Path>,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset, TrainError> {
    if let Some(dir) = dir {
        let train_images = dir.join("train-images-idx3-ubyte");
        let train_labels = dir.join("train-labels-idx1-ubyte");
        let test_images = dir.join("t10k-images-idx3-ubyte");
        let test_labels = dir.join("t10k-labels-idx1-ubyte");
        if train_images.exists() && train_labels.exists() && test_images.exists() && test_labels.exists() {
            let load = |img_path: &Path, lab_path: &Path, n: usize| -> Result<Split, TrainError> {
                let images = encoding::load_idx_images(&std::fs::read(img_path)?)?;
                let labels = encoding::load_idx_labels(&std::fs::read(lab_path)?)?;
                let (count, rows, cols) = (images.shape()[0], images.shape()[1], images.shape()[2]);
                let take = n.min(count);
                let mut imgs = Vec::with_capacity(take);
                for i in 0..take {
                    let sample = &images.data()[i * rows * cols..(i + 1) * rows * cols];
                    imgs.push(downsample2(sample, rows, cols));
                }
                Ok(Split::RateCoded {
                    images: imgs,
                    labels: labels[..take].to_vec(),
                })
            };
            return Ok(Dataset {
                train: load(&train_images, &train_labels, n_train)?,
                test: load(&test_images, &test_labels, n_test)?,
                classes: 10,
            });
        }
    }
    let (train_images, train_labels) = synth_digits(n_train, seed);
    let (test_images, test_labels) = synth_digits(n_test, seed.wrapping_add(0x5eed));
    Ok(Dataset {
        train: Split::RateCoded {
            images: train_images,
            labels: train_labels,
        },
        test: Split::RateCoded {
            images: test_images,
            labels: test_labels,
        },
        classes: 10,
    })
}

/// Synthetic moving-blob gesture dataset (4 motion classes).
pub fn gesture_dataset(
    n_train: usize,
    n_test: usize,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Dataset, TrainError> {
    let make = |n: usize, base: u64| -> Result<Split, TrainError> {
        let mut stacks = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % encoding::SYNTH_GESTURE_CLASSES;
            let (stack, label) = synth_gesture(class, t, h, w, sample_seed(base, i))?;
            stacks.push(stack);
            labels.push(label as u8);
        }
        Ok(Split::Event { stacks, labels })
    };
    Ok(Dataset {
        train: make(n_train, seed)?,
        test: make(n_test, seed.wrapping_add(0xe5e5))?,
        classes: encoding::SYNTH_GESTURE_CLASSES,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_digit_dataset_is_balanced_and_offline() {
        let ds = digits_dataset(None, 50, 20, 1).unwrap();
        assert_eq!(ds.train.len(), 50);
        assert_eq!(ds.test.len(), 20);
        assert_eq!(ds.classes, 10);
    }

    #[test]
    fn rate_batches_resample_per_seed() {
        let ds = digits_dataset(None, 10, 5, 2).unwrap();
        let (a, la) = ds.train.batch(&[0, 1, 2], 8, 100).unwrap();
        let (b, _) = ds.train.batch(&[0, 1, 2], 8, 101).unwrap();
        let (c, lc) = ds.train.batch(&[0, 1, 2], 8, 100).unwrap();
        assert_eq!(a.tensor().data(), c.tensor().data());
        assert_eq!(la, lc);
        assert_ne!(a.tensor().data(), b.tensor().data());
    }

    #[test]
    fn event_batches_are_deterministic() {
        let ds = gesture_dataset(8, 4, 8, 16, 16, 3).unwrap();
        let (a, _) = ds.train.batch(&[1, 3, 5], 8, 0).unwrap();
        let (b, _) = ds.train.batch(&[1, 3, 5], 8, 999).unwrap();
        assert_eq!(a.tensor().data(), b.tensor().data());
        assert_eq!(a.frame_shape(), [3, 2, 16, 16]);
    }

    #[test]
    fn event_batch_wrong_t_is_an_error() {
        let ds = gesture_dataset(4, 2, 8, 16, 16, 3).unwrap();
        assert!(ds.train.batch(&[0], 16, 0).is_err());
    }

    #[test]
    fn downsampling_averages_windows() {
        let img: Vec<f32> = vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5];
        // 2x4 image -> 1x2.
        let t = downsample2(&img, 2, 4);
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[0.5, 0.5]);
    }
}
