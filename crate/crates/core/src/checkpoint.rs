//! Text checkpoints of named tensors.
//!
//! ```text
//! CHKPT1
//! arrays 2
//! mu_star 2 3 1
//! 0.1 -0.25 2
//! w_pi 2 2 3
//! 0 0 0 0 0 0
//! ```
//!
//! Line 1 is the magic string, line 2 the array count. Each array is a header
//! line (`name rank extent...`) followed by one line of row-major values in
//! shortest round-trip decimal form, so save/load is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &str = "CHKPT1";

pub fn write_checkpoint<W: Write>(mut out: W, arrays: &[(String, Tensor)]) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "arrays {}", arrays.len())?;
    for (name, t) in arrays {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Config(format!("checkpoint array name {name:?} is not a single token")));
        }
        write!(out, "{name} {}", t.rank())?;
        for d in t.shape() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let line: Vec<String> = t.data().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Vec<(String, Tensor)>> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Data(format!("checkpoint truncated: expected {what}"))),
        }
    };
    let (_, magic) = next("magic")?;
    if magic.trim() != MAGIC {
        return Err(Error::Data(format!("bad checkpoint magic {:?}", magic.trim())));
    }
    let (ln, count) = next("array count")?;
    let count: usize = count
        .strip_prefix("arrays ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| Error::Data(format!("line {ln}: expected `arrays <n>`")))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, header) = next("array header")?;
        let mut tok = header.split_whitespace();
        let name = tok
            .next()
            .ok_or_else(|| Error::Data(format!("line {ln}: empty array header")))?
            .to_string();
        let nums: Vec<usize> = tok
            .map(|t| t.parse().map_err(|_| Error::Data(format!("line {ln}: bad extent {t:?}"))))
            .collect::<Result<_>>()?;
        let (&rank, shape) = nums
            .split_first()
            .ok_or_else(|| Error::Data(format!("line {ln}: missing rank")))?;
        if rank != shape.len() {
            return Err(Error::Data(format!("line {ln}: rank {rank} but {} extents", shape.len())));
        }
        let (ln, body) = next("array values")?;
        let data: Vec<f64> = body
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Data(format!("line {ln}: bad value {t:?}"))))
            .collect::<Result<_>>()?;
        let t = Tensor::new(shape.to_vec(), data).map_err(|e| Error::Data(format!("line {ln}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save(path: &Path, arrays: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, arrays)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(-1e300f64..1e300, 1..40), cols in 1usize..4) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let t = Tensor::new(vec![rows, cols], values[..rows * cols].to_vec()).unwrap();
            let arrays = vec![("w".to_string(), t.clone()), ("s".to_string(), Tensor::scalar(values[0] * 1e-310))];
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &arrays).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back, arrays);
        }
    }

    #[test]
    fn wrong_magic_is_a_data_error() {
        let err = read_checkpoint("CHKPT0\narrays 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn truncated_body_is_a_data_error() {
        let err = read_checkpoint("CHKPT1\narrays 1\nw 1 3\n1 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }
}
