//! AEDAT 3.1 event-stream parsing.
//!
//! # Format note
//!
//! An AEDAT 3.1 file starts with ASCII header lines, each terminated by
//! `\r\n` (a bare `\n` is tolerated). The first line must begin with
//! `#!AER-DAT3.1`; further lines starting with `#` are metadata and end
//! with the optional `#!END-HEADER` line. The sensor geometry is read from
//! a metadata line naming the camera (`DVS128` gives 128x128,
//! `DAVIS240` gives 240x180); without one, 128x128 is assumed.
//!
//! After the header come binary packets, each with a 28-byte little-endian
//! header:
//!
//! | field            | type | meaning                                |
//! |------------------|------|----------------------------------------|
//! | event_type       | i16  | 1 = polarity event                     |
//! | event_source     | i16  | producing module id                    |
//! | event_size       | i32  | bytes per event (8 for polarity)       |
//! | event_ts_offset  | i32  | byte offset of the timestamp field     |
//! | event_ts_overflow| i32  | upper timestamp bits (see below)       |
//! | event_capacity   | i32  | allocated events                       |
//! | event_number     | i32  | events serialized in this packet       |
//! | event_valid      | i32  | events with the validity bit set       |
//!
//! Each polarity event is 8 bytes: a `u32` data word followed by a `u32`
//! timestamp in microseconds. Data-word bit layout (LSB first):
//! bit 0 validity, bit 1 polarity, bits 2-16 y, bits 17-31 x. The full
//! timestamp is `(event_ts_overflow << 31) | timestamp`. Non-polarity
//! packets are skipped using their declared sizes. Events failing the
//! validity bit or falling outside the sensor are dropped and counted in
//! the stream's diagnostic fields.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AedatParseError {
    #[error("missing #!AER-DAT3.1 signature at byte offset {offset}")]
    BadHeader { offset: usize },
    #[error("unterminated header line starting at byte offset {offset}")]
    UnterminatedHeader { offset: usize },
    #[error("packet {packet_index}: truncated ({needed} bytes needed, {available} available)")]
    TruncatedPacket {
        packet_index: usize,
        needed: usize,
        available: usize,
    },
    #[error("packet {packet_index}: {reason}")]
    MalformedPacket {
        packet_index: usize,
        reason: String,
    },
}

/// One decoded polarity event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds, overflow bits folded in.
    pub t: u64,
    /// 0 = OFF, 1 = ON.
    pub p: u8,
}

/// Decoded stream with sensor geometry and drop diagnostics.
#[derive(Debug, Clone)]
pub struct EventStream {
    /// Events in non-decreasing timestamp order.
    pub events: Vec<Event>,
    pub sensor_width: u16,
    pub sensor_height: u16,
    /// `t_max - t_min` in microseconds; 0 for fewer than two events.
    pub duration: u64,
    pub dropped_invalid: usize,
    pub dropped_out_of_bounds: usize,
}

const POLARITY_EVENT: i16 = 1;
const PACKET_HEADER_LEN: usize = 28;

pub fn parse_aedat(bytes: &[u8]) -> Result<EventStream, AedatParseError> {
    let signature = b"#!AER-DAT3.1";
    if bytes.len() < signature.len() || &bytes[..signature.len()] != signature {
        let offset = bytes
            .iter()
            .zip(signature.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len().min(signature.len()));
        return Err(AedatParseError::BadHeader { offset });
    }

    let mut pos = 0usize;
    let (mut sensor_width, mut sensor_height) = (128u16, 128u16);
    // Consume header lines: every line starting with '#'.
    while pos < bytes.len() && bytes[pos] == b'#' {
        let line_start = pos;
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(AedatParseError::UnterminatedHeader { offset: line_start })?;
        let line = &bytes[pos..pos + nl];
        if let Ok(text) = std::str::from_utf8(line) {
            if text.contains("DAVIS240") {
                (sensor_width, sensor_height) = (240, 180);
            } else if text.contains("DVS128") {
                (sensor_width, sensor_height) = (128, 128);
            }
        }
        pos += nl + 1;
    }

    let mut events = Vec::new();
    let mut dropped_invalid = 0usize;
    let mut dropped_out_of_bounds = 0usize;
    let mut packet_index = 0usize;
    while pos < bytes.len() {
        if bytes.len() - pos < PACKET_HEADER_LEN {
            return Err(AedatParseError::TruncatedPacket {
                packet_index,
                needed: PACKET_HEADER_LEN,
                available: bytes.len() - pos,
            });
        }
        let header = &bytes[pos..pos + PACKET_HEADER_LEN];
        let event_type = i16::from_le_bytes([header[0], header[1]]);
        let event_size = i32::from_le_bytes(header[4..8].try_into().unwrap());
        let ts_overflow = i32::from_le_bytes(header[12..16].try_into().unwrap());
        let event_number = i32::from_le_bytes(header[20..24].try_into().unwrap());
        pos += PACKET_HEADER_LEN;

        if event_size <= 0 || event_number < 0 {
            return Err(AedatParseError::MalformedPacket {
                packet_index,
                reason: format!("event_size {event_size}, event_number {event_number}"),
            });
        }
        let body_len = event_number as usize * event_size as usize;
        if bytes.len() - pos < body_len {
            return Err(AedatParseError::TruncatedPacket {
                packet_index,
                needed: body_len,
                available: bytes.len() - pos,
            });
        }

        if event_type == POLARITY_EVENT {
            if event_size != 8 {
                return Err(AedatParseError::MalformedPacket {
                    packet_index,
                    reason: format!("polarity events are 8 bytes, header says {event_size}"),
                });
            }
            for i in 0..event_number as usize {
                let at = pos + i * 8;
                let data = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                let ts = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
                if data & 1 == 0 {
                    dropped_invalid += 1;
                    continue;
                }
                let p = ((data >> 1) & 1) as u8;
                let y = ((data >> 2) & 0x7fff) as u16;
                let x = ((data >> 17) & 0x7fff) as u16;
                if x >= sensor_width || y >= sensor_height {
                    dropped_out_of_bounds += 1;
                    continue;
                }
                let t = ((ts_overflow as u64) << 31) | ts as u64;
                events.push(Event { x, y, t, p });
            }
        }
        pos += body_len;
        packet_index += 1;
    }

    events.sort_by_key(|e| e.t);
    let duration = match (events.first(), events.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0,
    };
    Ok(EventStream {
        events,
        sensor_width,
        sensor_height,
        duration,
        dropped_invalid,
        dropped_out_of_bounds,
    })
}


#[cfg(test)]
mod tests {
    use super::test_writer::*;
    use super::*;

    #[test]
    fn three_events_round_trip_exactly() {
        let evs = vec![
            Event { x: 10, y: 20, t: 1000, p: 1 },
            Event { x: 0, y: 0, t: 1500, p: 0 },
            Event { x: 127, y: 127, t: 2000, p: 1 },
        ];
        let mut bytes = header("DVS128");
        bytes.extend(polarity_packet(&evs, 0));
        let stream = parse_aedat(&bytes).unwrap();
        assert_eq!(stream.events, evs);
        assert_eq!(stream.sensor_width, 128);
        assert_eq!(stream.duration, 1000);
        assert_eq!(stream.dropped_invalid, 0);
    }

    #[test]
    fn empty_event_section_is_fine() {
        let bytes = header("DVS128");
        let stream = parse_aedat(&bytes).unwrap();
        assert!(stream.events.is_empty());
        assert_eq!(stream.duration, 0);
    }

    #[test]
    fn foreign_packets_are_skipped() {
        let evs = vec![Event { x: 5, y: 6, t: 100, p: 0 }, Event { x: 7, y: 8, t: 200, p: 1 }];
        let mut bytes = header("DVS128");
        bytes.extend(polarity_packet(&evs[..1], 0));
        bytes.extend(foreign_packet(5, 32, 3)); // IMU-like packet
        bytes.extend(polarity_packet(&evs[1..], 0));
        let stream = parse_aedat(&bytes).unwrap();
        assert_eq!(stream.events, evs);
    }

    #[test]
    fn bad_signature_reports_offset() {
        let err = parse_aedat(b"#!AER-DAT2.0\r\n").unwrap_err();
        assert_eq!(err, AedatParseError::BadHeader { offset: 9 });
    }

    #[test]
    fn truncated_packet_names_its_index() {
        let mut bytes = header("DVS128");
        bytes.extend(polarity_packet(&[Event { x: 1, y: 1, t: 10, p: 0 }], 0));
        let mut second = polarity_packet(&[Event { x: 2, y: 2, t: 20, p: 1 }], 0);
        second.truncate(second.len() - 3);
        bytes.extend(second);
        match parse_aedat(&bytes).unwrap_err() {
            AedatParseError::TruncatedPacket { packet_index, .. } => assert_eq!(packet_index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_bit_events_are_dropped_and_counted() {
        let mut bytes = header("DVS128");
        let mut packet_events = Vec::new();
        packet_events.extend_from_slice(&raw_event(3, 4, 50, 1, true));
        packet_events.extend_from_slice(&raw_event(5, 6, 60, 0, false));
        // Hand-assembled packet: 2 events, 1 valid.
        let mut packet = Vec::new();
        packet.extend_from_slice(&1i16.to_le_bytes());
        packet.extend_from_slice(&0i16.to_le_bytes());
        packet.extend_from_slice(&8i32.to_le_bytes());
        packet.extend_from_slice(&4i32.to_le_bytes());
        packet.extend_from_slice(&0i32.to_le_bytes());
        packet.extend_from_slice(&2i32.to_le_bytes());
        packet.extend_from_slice(&2i32.to_le_bytes());
        packet.extend_from_slice(&1i32.to_le_bytes());
        packet.extend(packet_events);
        bytes.extend(packet);
        let stream = parse_aedat(&bytes).unwrap();
        assert_eq!(stream.events.len(), 1);
        assert_eq!(stream.dropped_invalid, 1);
        assert_eq!(stream.events[0], Event { x: 3, y: 4, t: 50, p: 1 });
    }

    #[test]
    fn out_of_order_events_are_sorted() {
        let evs = vec![
            Event { x: 1, y: 1, t: 500, p: 0 },
            Event { x: 2, y: 2, t: 100, p: 1 },
        ];
        let mut bytes = header("DVS128");
        bytes.extend(polarity_packet(&evs, 0));
        let stream = parse_aedat(&bytes).unwrap();
        assert_eq!(stream.events[0].t, 100);
        assert_eq!(stream.events[1].t, 500);
    }

    #[test]
    fn timestamp_overflow_extends_to_64_bits() {
        let evs = vec![Event { x: 0, y: 0, t: 42, p: 0 }];
        let mut bytes = header("DVS128");
        bytes.extend(polarity_packet(&evs, 2));
        let stream = parse_aedat(&bytes).unwrap();
        assert_eq!(stream.events[0].t, (2u64 << 31) | 42);
    }

    #[test]
    fn davis240_geometry_is_detected() {
        let mut bytes = header("DAVIS240C");
        bytes.extend(polarity_packet(&[Event { x: 239, y: 179, t: 1, p: 0 }], 0));
        let stream = parse_aedat(&bytes).unwrap();
        assert_eq!((stream.sensor_width, stream.sensor_height), (240, 180));
        assert_eq!(stream.events.len(), 1);
    }

    #[test]
    fn out_of_bounds_events_are_dropped_and_counted() {
        let mut bytes = header("DVS128");
        bytes.extend(polarity_packet(&[Event { x: 300, y: 4, t: 10, p: 0 }], 0));
        let stream = parse_aedat(&bytes).unwrap();
        assert!(stream.events.is_empty());
        assert_eq!(stream.dropped_out_of_bounds, 1);
    }
}
