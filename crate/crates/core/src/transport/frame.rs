//! TCP frame codec.
//!
//! Layout, all little-endian:
//!
//! | offset | width | field       |
//! |--------|-------|-------------|
//! | 0      | 4     | magic `0x53434845` |
//! | 4      | 4     | context     |
//! | 8      | 4     | src         |
//! | 12     | 4     | dst         |
//! | 16     | 4     | tag (i32)   |
//! | 20     | 4     | dtype code  |
//! | 24     | 8     | payload_len |
//! | 32     | n     | payload     |

use std::io::{self, Read, Write};

use crate::datatype::Datatype;
use crate::error::{Error, Result};
use crate::transport::{Envelope, Frame};

pub const MAGIC: u32 = 0x5343_4845;
pub const HEADER_LEN: usize = 32;

pub fn encode_header(env: &Envelope) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    out[4..8].copy_from_slice(&env.context.to_le_bytes());
    out[8..12].copy_from_slice(&env.src.to_le_bytes());
    out[12..16].copy_from_slice(&env.dst.to_le_bytes());
    out[16..20].copy_from_slice(&env.tag.to_le_bytes());
    out[20..24].copy_from_slice(&env.dtype.code().to_le_bytes());
    out[24..32].copy_from_slice(&env.payload_len.to_le_bytes());
    out
}

pub fn decode_header(bytes: &[u8; HEADER_LEN]) -> Result<Envelope> {
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let magic = u32_at(0);
    if magic != MAGIC {
        return Err(Error::Protocol(format!("bad frame magic {magic:#010x}")));
    }
    Ok(Envelope {
        context: u32_at(4),
        src: u32_at(8),
        dst: u32_at(12),
        tag: i32::from_le_bytes(bytes[16..20].try_into().unwrap()),
        dtype: Datatype::from_code(u32_at(20))?,
        payload_len: u64::from_le_bytes(bytes[24..32].try_into().unwrap()),
    })
}

/// Serializes a whole frame into one contiguous buffer.
pub fn encode_frame(env: &Envelope, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&encode_header(env));
    out.extend_from_slice(payload);
    out
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope, payload: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(env, payload))
}

/// Reads one frame. `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let envelope = decode_header(&header)?;
    let mut payload = vec![0u8; envelope.payload_len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(Frame { envelope, payload }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let env = Envelope {
            context: 0,
            src: 0,
            dst: 1,
            tag: 7,
            dtype: Datatype::Int32,
            payload_len: 4,
        };
        let bytes = encode_frame(&env, &[1, 0, 0, 0]);
        let expected: Vec<u8> = [
            &[0x45, 0x48, 0x43, 0x53][..], // "SCHE" as u32 LE
            &[0, 0, 0, 0],
            &[0, 0, 0, 0],
            &[1, 0, 0, 0],
            &[7, 0, 0, 0],
            &[1, 0, 0, 0],
            &[4, 0, 0, 0, 0, 0, 0, 0],
            &[1, 0, 0, 0],
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn negative_tags_are_twos_complement() {
        let env = Envelope {
            context: 3,
            src: 2,
            dst: 5,
            tag: -2,
            dtype: Datatype::Float64,
            payload_len: 0,
        };
        let header = encode_header(&env);
        assert_eq!(&header[16..20], &[0xfe, 0xff, 0xff, 0xff]);
        assert_eq!(decode_header(&header).unwrap(), env);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut header = [0u8; HEADER_LEN];
        header[0] = 1;
        assert!(matches!(decode_header(&header), Err(Error::Protocol(_))));
    }

    #[test]
    fn truncated_header_is_an_error_but_empty_stream_is_not() {
        let mut empty: &[u8] = &[];
        assert!(read_frame(&mut empty).unwrap().is_none());
        let mut short: &[u8] = &[0x45, 0x48];
        assert!(read_frame(&mut short).is_err());
    }

    fn dtype_strategy() -> impl Strategy<Value = Datatype> {
        prop::sample::select(Datatype::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn frames_round_trip(
            context in any::<u32>(),
            src in any::<u32>(),
            dst in any::<u32>(),
            tag in any::<i32>(),
            dtype in dtype_strategy(),
            payload in prop::collection::vec(any::<u8>(), 0..256),
        ) {
            let env = Envelope { context, src, dst, tag, dtype, payload_len: payload.len() as u64 };
            let bytes = encode_frame(&env, &payload);
            prop_assert_eq!(bytes.len(), HEADER_LEN + payload.len());
            let frame = read_frame(&mut bytes.as_slice()).unwrap().unwrap();
            prop_assert_eq!(frame.envelope, env);
            prop_assert_eq!(frame.payload, payload);
        }
    }
}
