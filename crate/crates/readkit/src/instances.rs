//! Instance files: a header line followed by one JSON record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use readkit_core::text::DataInstance;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INSTANCE_FORMAT: &str = "readkit-instances";
pub const INSTANCE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
}

pub fn save_instances(path: &Path, instances: &[DataInstance]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: INSTANCE_FORMAT.into(),
        version: INSTANCE_VERSION,
        count: instances.len(),
    };
    write_line(&mut w, &header).map_err(Error::io(path))?;
    for inst in instances {
        write_line(&mut w, inst).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Loads a whole file; a wrong header, a bad record or a record count that
/// disagrees with the header is an error.
pub fn load_instances(path: &Path) -> Result<Vec<DataInstance>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::data(path, "empty instance file"))?
        .map_err(Error::io(path))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| Error::data(path, format!("bad header: {e}")))?;
    if header.format != INSTANCE_FORMAT || header.version != INSTANCE_VERSION {
        return Err(Error::data(
            path,
            format!(
                "expected {INSTANCE_FORMAT} version {INSTANCE_VERSION}, found {} version {}",
                header.format, header.version
            ),
        ));
    }
    let mut out = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(Error::io(path))?;
        let inst: DataInstance =
            serde_json::from_str(&line).map_err(|e| Error::data(path, format!("line {}: {e}", n + 2)))?;
        out.push(inst);
    }
    if out.len() != header.count {
        return Err(Error::data(
            path,
            format!("header promises {} records, found {}", header.count, out.len()),
        ));
    }
    Ok(out)
}
