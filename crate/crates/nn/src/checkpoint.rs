//! Model checkpoints.
//!
//! ```text
//! "PRNW"                 magic
//! u32 LE                 version (1)
//! u32 LE x3              input_size, base, bottleneck
//! u64 LE                 parameter count
//! f64 LE x count         parameters in schedule order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use facemap_core::{Error, Result};

use crate::prn::{PrnArchitecture, PrnNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PRNW";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 12 + 8;

pub fn write_checkpoint(net: &PrnNet, mut w: impl Write) -> std::io::Result<()> {
    let a = net.arch();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    for v in [a.input_size, a.base, a.bottleneck] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_u64::<LittleEndian>(net.num_params() as u64)?;
    for p in net.params() {
        for &v in p.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn corrupt(offset: u64, message: impl Into<String>) -> Error {
    Error::Corrupt {
        offset,
        message: message.into(),
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<PrnNet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| corrupt(0, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(corrupt(0, "not a PRNW checkpoint"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt(4, "truncated version"))?;
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = r
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt(8 + 4 * i as u64, "truncated architecture"))? as usize;
    }
    let arch = PrnArchitecture {
        input_size: dims[0],
        base: dims[1],
        bottleneck: dims[2],
    };
    let mut net = PrnNet::new(arch, 0).map_err(|e| corrupt(8, format!("bad architecture: {e}")))?;
    let count = r.read_u64::<LittleEndian>().map_err(|_| corrupt(20, "truncated parameter count"))?;
    if count != net.num_params() as u64 {
        return Err(corrupt(20, format!("{count} parameters stored, architecture has {}", net.num_params())));
    }
    let mut offset = HEADER_LEN;
    let mut params = Vec::with_capacity(net.params().len());
    for p in net.params() {
        let mut data = vec![0.0; p.len()];
        for v in data.iter_mut() {
            *v = r
                .read_f64::<LittleEndian>()
                .map_err(|_| corrupt(offset, "truncated parameters"))?;
            offset += 8;
        }
        params.push(Tensor::new(p.shape().to_vec(), data)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| corrupt(offset, e.to_string()))? != 0 {
        return Err(corrupt(offset, "trailing bytes"));
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn save_checkpoint(net: &PrnNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + 8 * net.num_params());
    write_checkpoint(net, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PrnNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(&bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> PrnNet {
        PrnNet::new(
            PrnArchitecture {
                input_size: 32,
                base: 1,
                bottleneck: 32,
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let n = net();
        let mut buf = Vec::new();
        write_checkpoint(&n, &mut buf).unwrap();
        assert_eq!(buf.len() as u64, HEADER_LEN + 8 * n.num_params() as u64);
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), n);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut buf = Vec::new();
        write_checkpoint(&net(), &mut buf).unwrap();
        let cut = HEADER_LEN as usize + 8 * 10 + 3;
        match read_checkpoint(&buf[..cut]) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, HEADER_LEN + 80),
            other => panic!("{other:?}"),
        }
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(&buf[..]), Err(Error::Corrupt { offset: 0, .. })));
    }
}
