//! Four-byte command frames: `[0xA5, command id, sequence, crc]`, where the
//! CRC-8 (polynomial 0x07, initial value 0, no reflection, no final xor)
//! covers the id and sequence bytes.

use super::HandCommand;
use thiserror::Error;

pub const SYNC: u8 = 0xA5;
pub const FRAME_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad sync byte {0:#04x}")]
    BadSync(u8),
    #[error("CRC mismatch: expected {expected:#04x}, found {found:#04x}")]
    CrcMismatch { expected: u8, found: u8 },
    #[error("unknown command id {0}")]
    UnknownCommand(u8),
    #[error("frame must be {FRAME_LEN} bytes, got {0}")]
    Length(usize),
}

pub fn crc8(bytes: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in bytes {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 {
                (crc << 1) ^ 0x07
            } else {
                crc << 1
            };
        }
    }
    crc
}

pub fn encode_frame(cmd: HandCommand, seq: u8) -> [u8; FRAME_LEN] {
    let id = cmd.id();
    [SYNC, id, seq, crc8(&[id, seq])]
}

pub fn decode_frame(bytes: &[u8]) -> Result<(HandCommand, u8), FrameError> {
    if bytes.len() != FRAME_LEN {
        return Err(FrameError::Length(bytes.len()));
    }
    if bytes[0] != SYNC {
        return Err(FrameError::BadSync(bytes[0]));
    }
    let expected = crc8(&bytes[1..3]);
    if bytes[3] != expected {
        return Err(FrameError::CrcMismatch {
            expected,
            found: bytes[3],
        });
    }
    let cmd = HandCommand::from_id(bytes[1]).ok_or(FrameError::UnknownCommand(bytes[1]))?;
    Ok((cmd, bytes[2]))
}

/// Incremental decoder over a byte stream. Bytes before a sync byte are
/// skipped; after a bad frame it resumes at the next sync byte following the
/// bad frame's sync byte.
#[derive(Debug, Clone, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds bytes and returns every frame or error completed by them.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<(HandCommand, u8), FrameError>> {
        let mut out = Vec::new();
        for &b in bytes {
            if self.buf.is_empty() && b != SYNC {
                out.push(Err(FrameError::BadSync(b)));
                continue;
            }
            self.buf.push(b);
            if self.buf.len() < FRAME_LEN {
                continue;
            }
            match decode_frame(&self.buf) {
                Ok(frame) => {
                    out.push(Ok(frame));
                    self.buf.clear();
                }
                Err(e) => {
                    out.push(Err(e));
                    // resynchronize on a later sync byte inside the bad frame
                    let rest: Vec<u8> = self.buf[1..].to_vec();
                    self.buf.clear();
                    for r in rest {
                        if self.buf.is_empty() && r != SYNC {
                            continue;
                        }
                        self.buf.push(r);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Table-free reference: long division over the 16-bit message.
    fn crc8_reference(id: u8, seq: u8) -> u8 {
        let mut reg: u32 = ((id as u32) << 16) | ((seq as u32) << 8);
        let poly: u32 = 0x107 << 15;
        for bit in (8..24).rev() {
            if reg & (1 << bit) != 0 {
                reg ^= poly >> (23 - bit);
            }
        }
        (reg & 0xFF) as u8
    }

    #[test]
    fn crc_matches_reference_and_check_value() {
        assert_eq!(crc8(b"123456789"), 0xF4);
        for id in 0..=255u8 {
            for seq in [0u8, 1, 0x5a, 0xff] {
                assert_eq!(crc8(&[id, seq]), crc8_reference(id, seq));
            }
        }
    }

    #[test]
    fn unknown_command_with_valid_crc() {
        let frame = [SYNC, 9, 0, crc8(&[9, 0])];
        assert_eq!(decode_frame(&frame), Err(FrameError::UnknownCommand(9)));
    }

    #[test]
    fn decoder_resyncs_after_garbage() {
        let mut d = FrameDecoder::new();
        let mut bytes = vec![0x00, 0x13];
        bytes.extend(encode_frame(HandCommand::Grasp, 7));
        let mut broken = encode_frame(HandCommand::Open, 8);
        broken[3] ^= 1;
        bytes.extend(broken);
        bytes.extend(encode_frame(HandCommand::RotateCw, 9));
        let out = d.feed(&bytes);
        let ok: Vec<_> = out
            .iter()
            .filter_map(|r| r.as_ref().ok().copied())
            .collect();
        assert_eq!(
            ok,
            vec![(HandCommand::Grasp, 7), (HandCommand::RotateCw, 9)]
        );
        assert!(out
            .iter()
            .any(|r| matches!(r, Err(FrameError::CrcMismatch { .. }))));
    }

    #[test]
    fn split_delivery_is_equivalent() {
        let mut bytes = Vec::new();
        for (i, c) in HandCommand::ALL.iter().enumerate() {
            bytes.extend(encode_frame(*c, i as u8));
        }
        let mut whole = FrameDecoder::new();
        let a = whole.feed(&bytes);
        let mut pieces = FrameDecoder::new();
        let b: Vec<_> = bytes.chunks(3).flat_map(|c| pieces.feed(c)).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }
}
