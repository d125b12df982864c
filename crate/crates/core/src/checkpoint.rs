//! Binary checkpoint files for spectral fields.
//!
//! Layout (all little-endian):
//!   magic   4 bytes  "NSE2"
//!   version u32      (currently 1)
//!   n       u32      grid points per dimension
//!   time    f64      simulation time of the snapshot
//!   count   u32      number of fields
//! then for each field, component 0 followed by component 1, each a full
//! n*n complex lattice in row-major order with the k1 index fastest
//! (index i holds wavenumber i for i <= n/2 and i - n otherwise), each
//! coefficient stored as re f64, im f64.  Round-trips are bit exact.

use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::grid::Grid;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rustfft::num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NSE2";
const VERSION: u32 = 1;

pub fn write_fields(path: &Path, time: f64, fields: &[&SpectralField]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let grid = fields
        .first()
        .ok_or_else(|| Error::Checkpoint("no fields to write".into()))?
        .grid();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(grid.n() as u32)?;
    w.write_f64::<LittleEndian>(time)?;
    w.write_u32::<LittleEndian>(fields.len() as u32)?;
    for f in fields {
        if f.grid() != grid {
            return Err(Error::GridMismatch(grid.n(), f.grid().n()));
        }
        for c in 0..2 {
            for v in f.component(c) {
                w.write_f64::<LittleEndian>(v.re)?;
                w.write_f64::<LittleEndian>(v.im)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_field(path: &Path, time: f64, field: &SpectralField) -> Result<()> {
    write_fields(path, time, &[field])
}

pub struct Checkpoint {
    pub time: f64,
    pub fields: Vec<SpectralField>,
}

pub fn read_fields(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let grid = Grid::new(n)?;
    let time = r.read_f64::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let mut f = SpectralField::zero(grid);
        for c in 0..2 {
            for v in f.component_mut(c) {
                let re = r.read_f64::<LittleEndian>()?;
                let im = r.read_f64::<LittleEndian>()?;
                *v = Complex64::new(re, im);
            }
        }
        fields.push(f);
    }
    Ok(Checkpoint { time, fields })
}

pub fn read_field(path: &Path) -> Result<(f64, SpectralField)> {
    let ck = read_fields(path)?;
    let mut fields = ck.fields;
    match fields.len() {
        1 => Ok((ck.time, fields.pop().expect("len checked"))),
        k => Err(Error::Checkpoint(format!("expected 1 field, found {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let grid = Grid::new(16).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let f = SpectralField::random_div_free(grid, 1.0, 25.0, &mut rng);
        let g = SpectralField::random_div_free(grid, 1.0, 25.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.nse2");
        write_fields(&path, 12.5, &[&f, &g]).unwrap();
        let ck = read_fields(&path).unwrap();
        assert_eq!(ck.time, 12.5);
        assert_eq!(ck.fields.len(), 2);
        for (orig, read) in [&f, &g].iter().zip(&ck.fields) {
            for c in 0..2 {
                for (a, b) in orig.component(c).iter().zip(read.component(c)) {
                    assert_eq!(a.re.to_bits(), b.re.to_bits());
                    assert_eq!(a.im.to_bits(), b.im.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nse2");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(read_fields(&path).is_err());
    }
}
