//! Application memory shared with the runtime.
//!
//! A persistent operation captures a [`Region`] at init time and reads or
//! writes it every time it runs. The application must not touch a region
//! while an operation using it is active; the mutex only keeps that misuse
//! memory-safe, it does not make it meaningful.

use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::datatype::{decode, encode, Element};

/// A fixed-length, shareable byte buffer.
#[derive(Clone, Default)]
pub struct Buffer {
    bytes: Arc<Mutex<Vec<u8>>>,
}

impl Buffer {
    pub fn zeroed(len: usize) -> Self {
        Buffer::from_bytes(vec![0; len])
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Buffer {
            bytes: Arc::new(Mutex::new(bytes)),
        }
    }

    pub fn from_slice<T: Element>(values: &[T]) -> Self {
        Buffer::from_bytes(encode(values))
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.lock().clone()
    }

    pub fn to_vec<T: Element>(&self) -> Vec<T> {
        decode(&self.lock())
    }

    /// Overwrites the buffer from the start with `values`.
    pub fn write<T: Element>(&self, values: &[T]) {
        let encoded = encode(values);
        let mut guard = self.lock();
        assert!(encoded.len() <= guard.len(), "write exceeds buffer length");
        guard[..encoded.len()].copy_from_slice(&encoded);
    }

    pub fn fill(&self, byte: u8) {
        self.lock().fill(byte);
    }

    /// A sub-range of this buffer. Panics when the range is out of bounds.
    pub fn region(&self, offset: usize, len: usize) -> Region {
        let total = self.len();
        assert!(
            offset.checked_add(len).is_some_and(|end| end <= total),
            "region {offset}+{len} out of bounds for buffer of {total} bytes"
        );
        Region {
            buffer: self.clone(),
            offset,
            len,
        }
    }

    pub fn whole(&self) -> Region {
        self.region(0, self.len())
    }

    pub fn same_buffer(&self, other: &Buffer) -> bool {
        Arc::ptr_eq(&self.bytes, &other.bytes)
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, Vec<u8>> {
        self.bytes.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl fmt::Debug for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Buffer").field("len", &self.len()).finish()
    }
}

/// Address-like descriptor of a byte range inside a [`Buffer`].
#[derive(Clone, Debug)]
pub struct Region {
    buffer: Buffer,
    offset: usize,
    len: usize,
}

impl Region {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Copies out the first `len` bytes of the region.
    pub(crate) fn read_prefix(&self, len: usize) -> Vec<u8> {
        debug_assert!(len <= self.len);
        let guard = self.buffer.lock();
        guard[self.offset..self.offset + len].to_vec()
    }

    pub(crate) fn write_prefix(&self, data: &[u8]) {
        debug_assert!(data.len() <= self.len);
        let mut guard = self.buffer.lock();
        guard[self.offset..self.offset + data.len()].copy_from_slice(data);
    }

    pub(crate) fn overlaps(&self, other: &Region) -> bool {
        self.buffer.same_buffer(&other.buffer)
            && self.offset < other.offset + other.len
            && other.offset < self.offset + self.len
    }
}

impl From<&Buffer> for Region {
    fn from(buffer: &Buffer) -> Self {
        buffer.whole()
    }
}

impl From<Buffer> for Region {
    fn from(buffer: Buffer) -> Self {
        buffer.whole()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_view_subranges() {
        let buf = Buffer::from_slice(&[1i32, 2, 3, 4]);
        let r = buf.region(4, 8);
        assert_eq!(r.read_prefix(8), encode(&[2i32, 3]));
        r.write_prefix(&encode(&[9i32]));
        assert_eq!(buf.to_vec::<i32>(), vec![1, 9, 3, 4]);
    }

    #[test]
    fn overlap_detection() {
        let buf = Buffer::zeroed(16);
        assert!(buf.region(0, 8).overlaps(&buf.region(4, 8)));
        assert!(!buf.region(0, 8).overlaps(&buf.region(8, 8)));
        assert!(!buf.region(0, 8).overlaps(&Buffer::zeroed(16).region(0, 8)));
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn region_out_of_bounds_panics() {
        Buffer::zeroed(4).region(2, 4);
    }
}
