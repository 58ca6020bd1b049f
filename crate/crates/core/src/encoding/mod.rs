//! Data ingestion: rate coding, event binning, format parsers, and
//! synthetic desk-scale datasets.

mod aedat;
mod idx;
mod synth;

pub use aedat::{parse_aedat, AedatParseError, Event, EventStream};
pub use idx::{load_idx_images, load_idx_labels, IdxError};
pub use synth::{synth_digit, synth_digits, synth_gesture, SYNTH_GESTURE_CLASSES};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::exec::{self, Exec};
use crate::temporal::SpikeTrain;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("pixel value {value} at flat index {index} outside [0,1]")]
    PixelOutOfRange { value: f32, index: usize },
    #[error("sensor extent {sensor} is not an integer multiple of output extent {out}")]
    BadGeometry { sensor: usize, out: usize },
    #[error("temporal bin count must be >= 1")]
    NoBins,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Normalized event-count frames, `[T, 2, H, W]` with values in `[0, 1]`.
///
/// Cell values are `log(1 + f) / log(1 + f_max)`: zero counts map to zero
/// and the maximum-count cell maps to exactly 1 whenever any event exists.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: Tensor,
}

impl FrameStack {
    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_tensor(self) -> Tensor {
        self.frames
    }

    pub fn steps(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn shape(&self) -> &[usize] {
        self.frames.shape()
    }
}

/// Derive the per-sample seed for encoding sample `index` of a batch.
///
/// Splitting by sample keeps the draw stream independent of any thread
/// schedule or batch order.
pub fn sample_seed(base_seed: u64, index: usize) -> u64 {
    base_seed
        .wrapping_mul(0x5851_f42d_4c95_7f2d)
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1))
}

/// Rate-code one `[C, H, W]` image into `t` binary frames: each frame
/// element is an independent Bernoulli draw with probability equal to the
/// pixel intensity.
pub fn rate_encode(image: &Tensor, t: usize, seed: u64) -> Result<SpikeTrain, EncodingError> {
    if let Some(index) = image.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(EncodingError::PixelOutOfRange {
            value: image.data()[index],
            index,
        });
    }
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(EncodingError::Tensor(TensorError::RankMismatch {
                context: "rate_encode",
                expected: 3,
                shape: other.to_vec(),
            }))
        }
    };
    let mut rng = StdRng::seed_from_u64(seed);
    let n = image.len();
    let mut data = vec![0.0f32; t * n];
    for frame in data.chunks_mut(n) {
        for (v, &p) in frame.iter_mut().zip(image.iter()) {
            *v = if rng.random::<f32>() < p { 1.0 } else { 0.0 };
        }
    }
    let train = SpikeTrain::new(Tensor::from_vec(&[t, 1, c, h, w], data)?, true)
        .expect("generated frames are binary");
    Ok(train)
}

/// Rate-code a batch of same-shaped images into one `[T, B, C, H, W]`
/// train. Sample `i` draws from `sample_seed(base_seed, i)`, so results
/// are identical under either execution strategy.
pub fn rate_encode_batch(
    images: &[Tensor],
    t: usize,
    base_seed: u64,
    exec: Exec,
) -> Result<SpikeTrain, EncodingError> {
    assert!(!images.is_empty());
    let per_sample: Vec<SpikeTrain> = exec::map_indexed(exec, images.len(), |i| {
        rate_encode(&images[i], t, sample_seed(base_seed, i))
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let (c, h, w) = (
        per_sample[0].frame_shape()[1],
        per_sample[0].frame_shape()[2],
        per_sample[0].frame_shape()[3],
    );
    let b = images.len();
    let mut data = vec![0.0f32; t * b * c * h * w];
    let frame_len = c * h * w;
    for (i, train) in per_sample.iter().enumerate() {
        for step in 0..t {
            let src = train.frame_data(step);
            let dst = &mut data[(step * b + i) * frame_len..(step * b + i + 1) * frame_len];
            dst.copy_from_slice(src);
        }
    }
    Ok(SpikeTrain::new(Tensor::from_vec(&[t, b, c, h, w], data)?, true)
        .expect("binary by construction"))
}

/// Raw per-bin event counts, `[T, 2, H, W]`, before normalization.
pub fn bin_events_counts(
    stream: &EventStream,
    t: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor, EncodingError> {
    if t == 0 {
        return Err(EncodingError::NoBins);
    }
    let fy = divide_exact(stream.sensor_height as usize, out_h)?;
    let fx = divide_exact(stream.sensor_width as usize, out_w)?;
    let mut counts = Tensor::zeros(&[t, 2, out_h, out_w]);
    if stream.events.is_empty() {
        return Ok(counts);
    }
    let t_min = stream.events[0].t;
    let duration = stream.duration;
    for ev in &stream.events {
        // Equal division of the recording; the right edge clamps into the
        // last bin. Zero duration puts everything in bin 0.
        let bin = if duration == 0 {
            0
        } else {
            (((t as u64) * (ev.t - t_min)) / duration).min(t as u64 - 1) as usize
        };
        let y = ev.y as usize / fy;
        let x = ev.x as usize / fx;
        let idx = ((bin * 2 + ev.p as usize) * out_h + y) * out_w + x;
        counts.data_mut()[idx] += 1.0;
    }
    Ok(counts)
}

/// Bin events into `t` equally spaced frames at `out_h x out_w` (integer
/// coordinate downsampling), then log-normalize counts into `[0, 1]`.
pub fn bin_events(
    stream: &EventStream,
    t: usize,
    out_h: usize,
    out_w: usize,
) -> Result<FrameStack, EncodingError> {
    let counts = bin_events_counts(stream, t, out_h, out_w)?;
    Ok(log_normalize(counts))
}

/// `f -> log(1 + f) / log(1 + f_max)`, all-zero when `f_max` is 0.
pub fn log_normalize(counts: Tensor) -> FrameStack {
    let f_max = counts.iter().fold(0.0f32, |m, &v| m.max(v));
    if f_max == 0.0 {
        return FrameStack { frames: counts };
    }
    let denom = (1.0 + f_max).ln();
    FrameStack {
        frames: counts.map(|f| (1.0 + f).ln() / denom),
    }
}

fn divide_exact(sensor: usize, out: usize) -> Result<usize, EncodingError> {
    if out == 0 || sensor % out != 0 {
        return Err(EncodingError::BadGeometry { sensor, out });
    }
    Ok(sensor / out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream_of(events: Vec<Event>, w: u16, h: u16) -> EventStream {
        let duration = match (events.first(), events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        };
        EventStream {
            events,
            sensor_width: w,
            sensor_height: h,
            duration,
            dropped_invalid: 0,
            dropped_out_of_bounds: 0,
        }
    }

    #[test]
    fn all_zero_image_yields_silent_train() {
        let image = Tensor::zeros(&[1, 4, 4]);
        let train = rate_encode(&image, 8, 0).unwrap();
        assert!(train.tensor().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_one_image_yields_dense_train() {
        let image = Tensor::filled(&[1, 3, 3], 1.0);
        let train = rate_encode(&image, 8, 0).unwrap();
        assert!(train.tensor().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn firing_rate_converges_to_intensity() {
        let image = Tensor::filled(&[1, 1, 1], 0.3);
        let t = 10_000;
        let train = rate_encode(&image, t, 42).unwrap();
        let rate = train.tensor().sum() / t as f32;
        let se = (0.3f32 * 0.7 / t as f32).sqrt();
        assert!((rate - 0.3).abs() <= 3.0 * se, "rate {rate}");
    }

    #[test]
    fn out_of_range_pixel_is_an_error() {
        let image = Tensor::from_vec(&[1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(matches!(
            rate_encode(&image, 4, 0),
            Err(EncodingError::PixelOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn batch_encoding_is_exec_independent() {
        let images: Vec<Tensor> = (0..4).map(|i| Tensor::filled(&[1, 3, 3], 0.1 * (i + 1) as f32)).collect();
        let a = rate_encode_batch(&images, 6, 9, Exec::Sequential).unwrap();
        let b = rate_encode_batch(&images, 6, 9, Exec::Parallel).unwrap();
        assert_eq!(a.tensor().data(), b.tensor().data());
    }

    #[test]
    fn single_event_normalizes_to_one() {
        let stream = stream_of(vec![Event { x: 3, y: 5, t: 100, p: 1 }], 16, 16);
        let stack = bin_events(&stream, 4, 16, 16).unwrap();
        let nonzero: Vec<f32> = stack.tensor().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
        // Zero duration: the single event lands in bin 0.
        let idx = ((0 * 2 + 1) * 16 + 5) * 16 + 3;
        assert_eq!(stack.tensor().data()[idx], 1.0);
    }

    #[test]
    fn log_normalization_matches_hand_values() {
        // Counts {0, 3, 7}: {0, log4/log8, 1}.
        let counts = Tensor::from_vec(&[1, 2, 1, 3], vec![0.0, 3.0, 7.0, 0.0, 0.0, 0.0]).unwrap();
        let stack = log_normalize(counts);
        let d = stack.tensor().data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - (4.0f32.ln() / 8.0f32.ln())).abs() < 1e-6);
        assert!((d[1] - 0.6667).abs() < 1e-4);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn binning_conserves_event_count() {
        let events: Vec<Event> = (0..50)
            .map(|i| Event {
                x: (i * 7) % 16,
                y: (i * 3) % 16,
                t: 1000 + i as u64 * 13,
                p: (i % 2) as u8,
            })
            .collect();
        let stream = stream_of(events, 16, 16);
        let counts = bin_events_counts(&stream, 4, 8, 8).unwrap();
        assert_eq!(counts.sum(), 50.0);
    }

    #[test]
    fn last_timestamp_clamps_into_final_bin() {
        let events = vec![
            Event { x: 0, y: 0, t: 0, p: 0 },
            Event { x: 0, y: 0, t: 1000, p: 0 },
        ];
        let stream = stream_of(events, 8, 8);
        let counts = bin_events_counts(&stream, 4, 8, 8).unwrap();
        // First event in bin 0, last exactly at the right edge in bin 3.
        assert_eq!(counts.data()[0], 1.0);
        assert_eq!(counts.data()[3 * 2 * 64], 1.0);
    }

    #[test]
    fn coordinates_downsample_by_integer_division() {
        let events = vec![Event { x: 15, y: 9, t: 0, p: 0 }];
        let stream = stream_of(events, 16, 16);
        let counts = bin_events_counts(&stream, 1, 8, 8).unwrap();
        // (x, y) = (15, 9) / 2 = (7, 4).
        assert_eq!(counts.data()[(0 * 8 + 4) * 8 + 7], 1.0);
    }

    #[test]
    fn non_integer_downsampling_is_an_error() {
        let stream = stream_of(vec![], 10, 10);
        assert!(matches!(
            bin_events(&stream, 2, 3, 3),
            Err(EncodingError::BadGeometry { sensor: 10, out: 3 })
        ));
    }

    #[test]
    fn values_stay_in_unit_interval_with_max_one() {
        let events: Vec<Event> = (0..200)
            .map(|i| Event {
                x: (i % 4) as u16,
                y: ((i / 4) % 4) as u16,
                t: i as u64 * 10,
                p: 0,
            })
            .collect();
        let stream = stream_of(events, 4, 4);
        let stack = bin_events(&stream, 2, 4, 4).unwrap();
        assert!(stack.tensor().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = stack.tensor().iter().fold(0.0f32, |m, &v| m.max(v));
        assert_eq!(max, 1.0);
    }
}
