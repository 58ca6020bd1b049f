//! Shared oracles for the integration suites: a central finite-difference
//! gradient checker and an independent AEDAT 3.1 byte writer.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tacsnn_core::tape::{Tape, Var};
use tacsnn_core::tensor::Tensor;

/// Builds a scalar loss from leaf variables; called freshly per evaluation
/// so stateful ops (batch norm) see identical conditions every time.
pub type GraphBuilder = dyn Fn(&mut Tape, &[Var]) -> Var;

pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f32,
}

/// Compare tape gradients against central finite differences on randomly
/// probed input elements.
///
/// `h` is the step; agreement is `|fd - g| <= tol * max(|fd|, |g|, floor)`.
pub fn fd_check(
    build: &GraphBuilder,
    inputs: &[Tensor],
    n_probes: usize,
    h: f32,
    tol: f32,
    floor: f32,
    seed: u64,
) -> FdReport {
    let eval = |tensors: &[Tensor]| -> f32 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();

    let mut rng = StdRng::seed_from_u64(seed);
    let mut max_rel = 0.0f32;
    for probe in 0..n_probes {
        let which = rng.random_range(0..inputs.len());
        let elem = rng.random_range(0..inputs[which].len());
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[elem] += h;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[elem] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let g = analytic[which][elem];
        let denom = fd.abs().max(g.abs()).max(floor);
        let rel = (fd - g).abs() / denom;
        assert!(
            rel <= tol,
            "probe {probe}: input {which}[{elem}] fd {fd} vs tape {g} (rel {rel})"
        );
        max_rel = max_rel.max(rel);
    }
    FdReport {
        checked: n_probes,
        max_rel_err: max_rel,
    }
}

/// Weighted sum of all elements against a fixed pseudorandom vector; keeps
/// the gradient informative in every coordinate.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = tape.value(y).len();
    let shape = tape.value(y).shape().to_vec();
    let w = Tensor::from_vec(
        &shape,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>(),
    )
    .unwrap();
    let wv = tape.leaf(w);
    let prod = tape.mul(y, wv).unwrap();
    tape.sum(prod)
}

pub fn random_tensor(rng: &mut StdRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub mod aedat_writer {
    //! AEDAT 3.1 writer assembled straight from the format description;
    //! shares no code with the parser.

    use tacsnn_core::encoding::Event;

    pub fn header(camera: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"#!AER-DAT3.1\r\n");
        out.extend_from_slice(format!("#Source 0: {camera}\r\n").as_bytes());
        out.extend_from_slice(b"#!END-HEADER\r\n");
        out
    }

    pub fn polarity_packet(events: &[Event], ts_overflow: i32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&1i16.to_le_bytes());
        out.extend_from_slice(&0i16.to_le_bytes());
        out.extend_from_slice(&8i32.to_le_bytes());
        out.extend_from_slice(&4i32.to_le_bytes());
        out.extend_from_slice(&ts_overflow.to_le_bytes());
        out.extend_from_slice(&(events.len() as i32).to_le_bytes());
        out.extend_from_slice(&(events.len() as i32).to_le_bytes());
        out.extend_from_slice(&(events.len() as i32).to_le_bytes());
        for ev in events {
            let data: u32 =
                1 | ((ev.p as u32) << 1) | ((ev.y as u32) << 2) | ((ev.x as u32) << 17);
            out.extend_from_slice(&data.to_le_bytes());
            out.extend_from_slice(&((ev.t & 0x7fff_ffff) as u32).to_le_bytes());
        }
        out
    }

    pub fn foreign_packet(event_type: i16, event_size: i32, count: i32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&event_type.to_le_bytes());
        out.extend_from_slice(&0i16.to_le_bytes());
        out.extend_from_slice(&event_size.to_le_bytes());
        out.extend_from_slice(&0i32.to_le_bytes());
        out.extend_from_slice(&0i32.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend(std::iter::repeat(0xabu8).take((event_size * count) as usize));
        out
    }
}
