use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// File magic of the code grid format.
pub const GRID_MAGIC: &[u8; 4] = b"RVQG";

/// Discrete representation of a clip: one code per (latent position, depth).
///
/// Binary layout (little-endian):
///
/// | bytes      | field                               |
/// |------------|-------------------------------------|
/// | 0..4       | magic `RVQG`                        |
/// | 4..8       | `u32` latent length `T_c`           |
/// | 8..12      | `u32` depth `Q`                     |
/// | 12..16     | `u32` codebook size `N_cb`          |
/// | 16..       | `T_c * Q` `u16` codes, row-major    |
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeGrid {
    codes: Vec<u16>,
    positions: usize,
    depth: usize,
    codebook_size: usize,
}

impl CodeGrid {
    pub fn new(codes: Vec<u16>, positions: usize, depth: usize, codebook_size: usize) -> Result<Self> {
        if codes.len() != positions * depth {
            return Err(Error::Shape(format!(
                "code grid of {positions}x{depth} needs {} codes, got {}",
                positions * depth,
                codes.len()
            )));
        }
        if codebook_size == 0 || codebook_size > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput(format!(
                "codebook size {codebook_size} does not fit 16-bit codes"
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= codebook_size) {
            return Err(Error::CodeOutOfRange {
                index: bad as usize,
                size: codebook_size,
            });
        }
        Ok(Self {
            codes,
            positions,
            depth,
            codebook_size,
        })
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn get(&self, t: usize, d: usize) -> usize {
        self.codes[t * self.depth + d] as usize
    }

    /// Codes of latent position `t`, one per depth.
    pub fn row(&self, t: usize) -> &[u16] {
        &self.codes[t * self.depth..(t + 1) * self.depth]
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    /// `(positions, depth)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.positions, self.depth)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.codes.len());
        out.extend_from_slice(GRID_MAGIC);
        for v in [self.positions, self.depth, self.codebook_size] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &c in &self.codes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != GRID_MAGIC {
            return Err(Error::GridFormat("missing RVQG header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (positions, depth, size) = (word(4), word(8), word(12));
        let body = &bytes[16..];
        let expected = positions
            .checked_mul(depth)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| Error::GridFormat("grid dimensions overflow".into()))?;
        if body.len() != expected {
            return Err(Error::GridFormat(format!(
                "expected {expected} code bytes for {positions}x{depth}, found {}",
                body.len()
            )));
        }
        let codes = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Self::new(codes, positions, depth, size)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
