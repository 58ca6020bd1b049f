//! Synthetic desk-scale datasets.
//!
//! `synth_gesture` generates moving-blob event recordings whose class is
//! the motion direction, so single frames are nearly class-ambiguous while
//! the frame sequence is not. `synth_digits` renders jittered glyph images
//! for rate-coded classification without any external downloads.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::tensor::Tensor;

use super::{bin_events, EncodingError, Event, EventStream, FrameStack};

pub const SYNTH_GESTURE_CLASSES: usize = 4;

/// Unit direction per class: up, down, left, right (y grows downward).
fn class_direction(class_id: usize) -> (f32, f32) {
    match class_id % SYNTH_GESTURE_CLASSES {
        0 => (0.0, -1.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (1.0, 0.0),
    }
}

fn gaussian(rng: &mut StdRng) -> f32 {
    // Box-Muller; the draw count per event stays fixed regardless of the
    // class, which keeps paired classes aligned draw-for-draw.
    let u1: f32 = rng.random::<f32>().max(1e-7);
    let u2: f32 = rng.random::<f32>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// One moving-blob recording: a Gaussian cloud of events drifts across the
/// frame in the class direction, plus uniform background noise.
///
/// The blob's anchor is re-jittered every frame, so any single frame's
/// position says almost nothing about the class; only the drift across
/// many frames does. Identical seeds with different classes produce the
/// same event times, jitters, and scatter, differing only in the drift
/// direction; time-reversing a class-0 recording yields a class-1
/// trajectory and vice versa.
pub fn synth_gesture(
    class_id: usize,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<(FrameStack, usize), EncodingError> {
    assert!(t >= 4, "synth_gesture needs at least 4 timesteps");
    let label = class_id % SYNTH_GESTURE_CLASSES;
    let (dx, dy) = class_direction(label);
    let mut rng = StdRng::seed_from_u64(seed);

    let duration: u64 = 1_000_000;
    let n_blob = 40 * t;
    let n_bg = 6 * t;
    // Total drift over the recording, in pixels.
    let span = (h.min(w) as f32) * 0.28;
    // Anchor jitter, re-drawn every other frame (the jitter bandwidth is
    // below the frame rate), and per-event scatter.
    let jitter = 1.7f32;
    let sigma = 1.5f32;
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let frame_jitter: Vec<(f32, f32)> = {
        let draws: Vec<(f32, f32)> = (0..t.div_ceil(2))
            .map(|_| (jitter * gaussian(&mut rng), jitter * gaussian(&mut rng)))
            .collect();
        (0..t).map(|f| draws[f / 2]).collect()
    };

    let mut events = Vec::with_capacity(n_blob + n_bg);
    for _ in 0..n_blob {
        let tau = rng.random_range(0..duration);
        let phase = tau as f32 / duration as f32 - 0.5;
        let frame = ((tau as u128 * t as u128) / duration as u128).min(t as u128 - 1) as usize;
        let (jx, jy) = frame_jitter[frame];
        let ex = cx + jx + dx * span * phase + sigma * gaussian(&mut rng);
        let ey = cy + jy + dy * span * phase + sigma * gaussian(&mut rng);
        let p = u8::from(rng.random::<f32>() < 0.5);
        if ex < 0.0 || ey < 0.0 || ex >= w as f32 || ey >= h as f32 {
            continue;
        }
        events.push(Event {
            x: ex as u16,
            y: ey as u16,
            t: tau,
            p,
        });
    }
    for _ in 0..n_bg {
        let tau = rng.random_range(0..duration);
        let x = rng.random_range(0..w) as u16;
        let y = rng.random_range(0..h) as u16;
        let p = u8::from(rng.random::<f32>() < 0.5);
        events.push(Event { x, y, t: tau, p });
    }
    events.sort_by_key(|e| e.t);
    let stream = EventStream {
        duration: match (events.first(), events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        },
        events,
        sensor_width: w as u16,
        sensor_height: h as u16,
        dropped_invalid: 0,
        dropped_out_of_bounds: 0,
    };
    Ok((bin_events(&stream, t, h, w)?, label))
}

const DIGIT_GLYPHS: [[&str; 7]; 10] = [
    [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    ["#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    ["  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "],
];

/// Render one digit as a jittered `[1, 14, 14]` intensity image in
/// `[0, 1]`: a 7x5 glyph upscaled 2x, randomly shifted horizontally, with
/// intensity jitter on strokes and faint background noise.
pub fn synth_digit(digit: usize, seed: u64) -> Tensor {
    let glyph = &DIGIT_GLYPHS[digit % 10];
    let mut rng = StdRng::seed_from_u64(seed);
    let x_off = rng.random_range(0..=4usize);
    let stroke = rng.random_range(0.7..1.0f32);
    let mut data = vec![0.0f32; 14 * 14];
    for (v, slot) in data.iter_mut().enumerate() {
        let (y, x) = (v / 14, v % 14);
        let on = x >= x_off
            && x < x_off + 10
            && glyph[y / 2].as_bytes()[(x - x_off) / 2] == b'#';
        *slot = if on {
            stroke * rng.random_range(0.85..1.0)
        } else {
            rng.random_range(0.0..0.05)
        };
    }
    Tensor::from_vec(&[1, 14, 14], data).expect("fixed shape")
}

/// A balanced labeled set of `n` digit images (class `i % 10`).
pub fn synth_digits(n: usize, base_seed: u64) -> (Vec<Tensor>, Vec<u8>) {
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        images.push(synth_digit(digit, super::sample_seed(base_seed, i)));
        labels.push(digit as u8);
    }
    (images, labels)
}
