use std::io::{self, BufRead, Read, Write};

use crate::error::{Error, Result};

/// An `H x W x C` image or field, row-major with the channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.data[(i * self.width + j) * self.channels + c] = v;
    }

    /// Raw little-endian `f64` values, no header.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R, height: usize, width: usize, channels: usize) -> io::Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let n = height * width * channels;
        if bytes.len() != n * 8 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!(
                    "expected {} bytes for {height}x{width}x{channels}, got {}",
                    n * 8,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// One CSV line per grid row holding `W * C` values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let row_len = self.width * self.channels;
        for row in self.data.chunks(row_len) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, channels: usize) -> io::Result<Self> {
        let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut data = Vec::new();
        let mut height = 0;
        let mut row_len = None;
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("line {}: {e}", height + 1)))?;
            match row_len {
                None => row_len = Some(values.len()),
                Some(n) if n != values.len() => {
                    return Err(invalid(format!(
                        "line {} has {} values, expected {n}",
                        height + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            data.extend(values);
            height += 1;
        }
        let row_len = row_len.ok_or_else(|| invalid("empty field".into()))?;
        if channels == 0 || row_len % channels != 0 {
            return Err(invalid(format!(
                "row length {row_len} is not a multiple of {channels} channels"
            )));
        }
        Ok(Self {
            height,
            width: row_len / channels,
            channels,
            data,
        })
    }
}
