//! Binary container for windowed samples. Values are written as raw
//! little-endian f64 so a save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::data::WindowPair;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"LCWD1\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowSetHeader {
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct WindowSet {
    pub input_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub windows: Vec<WindowPair>,
}

impl WindowSet {
    pub fn new(input_len: usize, horizon: usize, stride: usize, windows: Vec<WindowPair>) -> Self {
        WindowSet { input_len, horizon, stride, windows }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        let header = WindowSetHeader {
            input_len: self.input_len,
            horizon: self.horizon,
            stride: self.stride,
            count: self.windows.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.write_u64::<LittleEndian>(json.len() as u64)?;
        w.write_all(&json)?;
        for pair in &self.windows {
            w.write_u64::<LittleEndian>(pair.household_id)?;
            w.write_i64::<LittleEndian>(pair.t0)?;
            for v in pair.input.data.iter().chain(&pair.target.data) {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WindowSet> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{}: not a window dataset", path.display())));
        }
        let jlen = r.read_u64::<LittleEndian>()? as usize;
        let mut jbuf = vec![0u8; jlen];
        r.read_exact(&mut jbuf)?;
        let header: WindowSetHeader = serde_json::from_slice(&jbuf)
            .map_err(|e| Error::Checkpoint(format!("bad window dataset header: {e}")))?;
        let mut windows = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let household_id = r.read_u64::<LittleEndian>()?;
            let t0 = r.read_i64::<LittleEndian>()?;
            let mut input = Tensor::zeros(header.input_len, 3);
            for v in input.data.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            let mut target = Tensor::zeros(header.horizon, 3);
            for v in target.data.iter_mut() {
                *v = r.read_f64::<LittleEndian>()?;
            }
            windows.push(WindowPair { household_id, t0, input, target });
        }
        Ok(WindowSet {
            input_len: header.input_len,
            horizon: header.horizon,
            stride: header.stride,
            windows,
        })
    }
}
