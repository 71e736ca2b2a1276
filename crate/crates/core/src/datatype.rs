//! Element datatypes carried in envelopes and understood by reduce ops.
//!
//! Elements are stored little-endian inside buffers so payload bytes are
//! identical on every host.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u32)]
pub enum Datatype {
    Byte = 0,
    Int32 = 1,
    Int64 = 2,
    Float64 = 3,
}

impl Datatype {
    pub const ALL: [Datatype; 4] = [Datatype::Byte, Datatype::Int32, Datatype::Int64, Datatype::Float64];

    pub const fn code(self) -> u32 {
        self as u32
    }

    pub const fn elem_size(self) -> usize {
        match self {
            Datatype::Byte => 1,
            Datatype::Int32 => 4,
            Datatype::Int64 | Datatype::Float64 => 8,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Datatype::Byte),
            1 => Ok(Datatype::Int32),
            2 => Ok(Datatype::Int64),
            3 => Ok(Datatype::Float64),
            other => Err(Error::Protocol(format!("unknown datatype code {other}"))),
        }
    }

    /// Number of bytes occupied by `count` elements.
    pub const fn bytes_for(self, count: usize) -> usize {
        count * self.elem_size()
    }
}

/// A Rust scalar that maps onto one [`Datatype`].
pub trait Element: Copy + Send + 'static {
    const DATATYPE: Datatype;

    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut [u8]);
}

macro_rules! impl_element {
    ($ty:ty, $dt:expr) => {
        impl Element for $ty {
            const DATATYPE: Datatype = $dt;

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                <$ty>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            #[inline]
            fn write_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }
        }
    };
}

impl_element!(u8, Datatype::Byte);
impl_element!(i32, Datatype::Int32);
impl_element!(i64, Datatype::Int64);
impl_element!(f64, Datatype::Float64);

pub fn encode<T: Element>(values: &[T]) -> Vec<u8> {
    let width = T::DATATYPE.elem_size();
    let mut out = vec![0u8; values.len() * width];
    for (chunk, v) in out.chunks_exact_mut(width).zip(values) {
        v.write_le(chunk);
    }
    out
}

pub fn decode<T: Element>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(T::DATATYPE.elem_size())
        .map(T::read_le)
        .collect()
}
