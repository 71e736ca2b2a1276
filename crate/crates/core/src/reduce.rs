//! Reduction operators applied between schedule rounds.
//!
//! Every operator follows the `inoutvec[i] = invec[i] op inoutvec[i]`
//! convention. Integer `Sum`/`Prod` wrap; floating point ops use plain IEEE
//! arithmetic element by element, never reassociated.

use std::fmt;
use std::sync::Arc;

use crate::datatype::{Datatype, Element};
use crate::error::{Error, Result};

/// User callback: `(invec, inoutvec, len, datatype)`, with both slices
/// covering exactly `len` elements.
pub type UserFn = dyn Fn(&[u8], &mut [u8], usize, Datatype) + Send + Sync;

#[derive(Clone)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
    Prod,
    User(Arc<UserFn>),
}

impl ReduceOp {
    pub fn user<F>(f: F) -> Self
    where
        F: Fn(&[u8], &mut [u8], usize, Datatype) + Send + Sync + 'static,
    {
        ReduceOp::User(Arc::new(f))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Max => "max",
            ReduceOp::Min => "min",
            ReduceOp::Prod => "prod",
            ReduceOp::User(_) => "user",
        }
    }
}

impl fmt::Debug for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar arithmetic used by the built-in operators.
trait Arith: Element + PartialOrd {
    fn add(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
}

macro_rules! wrapping_arith {
    ($($ty:ty),*) => {$(
        impl Arith for $ty {
            fn add(self, rhs: Self) -> Self { self.wrapping_add(rhs) }
            fn mul(self, rhs: Self) -> Self { self.wrapping_mul(rhs) }
        }
    )*};
}

wrapping_arith!(u8, i32, i64);

impl Arith for f64 {
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
}

fn combine<T: Arith>(op: &ReduceOp, a: T, b: T) -> T {
    match op {
        ReduceOp::Sum => a.add(b),
        ReduceOp::Prod => a.mul(b),
        ReduceOp::Max => {
            if a > b {
                a
            } else {
                b
            }
        }
        ReduceOp::Min => {
            if a < b {
                a
            } else {
                b
            }
        }
        ReduceOp::User(_) => unreachable!("user ops are dispatched directly"),
    }
}

fn fold_typed<T: Arith>(op: &ReduceOp, invec: &[u8], inoutvec: &mut [u8]) {
    let width = T::DATATYPE.elem_size();
    for (src, dst) in invec.chunks_exact(width).zip(inoutvec.chunks_exact_mut(width)) {
        combine(op, T::read_le(src), T::read_le(dst)).write_le(dst);
    }
}

/// Applies `op` to the first `len` elements of both vectors, storing the
/// result in `inoutvec`.
pub fn apply_reduce_op(
    op: &ReduceOp,
    invec: &[u8],
    inoutvec: &mut [u8],
    len: usize,
    dtype: Datatype,
) -> Result<()> {
    let bytes = dtype.bytes_for(len);
    for actual in [invec.len(), inoutvec.len()] {
        if actual < bytes {
            return Err(Error::LengthMismatch { expected: bytes, actual });
        }
    }
    let (invec, inoutvec) = (&invec[..bytes], &mut inoutvec[..bytes]);
    match (op, dtype) {
        (ReduceOp::User(f), _) => f(invec, inoutvec, len, dtype),
        (_, Datatype::Byte) => fold_typed::<u8>(op, invec, inoutvec),
        (_, Datatype::Int32) => fold_typed::<i32>(op, invec, inoutvec),
        (_, Datatype::Int64) => fold_typed::<i64>(op, invec, inoutvec),
        (_, Datatype::Float64) => fold_typed::<f64>(op, invec, inoutvec),
    }
    Ok(())
}
