//! On-disk formats: the "FXSG" sinogram container, the "FXGF" grid-volume
//! container, binary matrix triplets, JSON sidecars, and CSV emission.
//!
//! Both binary containers share a fixed 64-byte header:
//!   bytes  0..4   magic ("FXSG" or "FXGF")
//!   bytes  4..8   version (u32 little-endian, currently 1)
//!   bytes  8..20  three u32 dimensions (meaning per format)
//!   bytes 20..52  geometry digest (32 raw bytes; zero for plain volumes)
//!   bytes 52..64  zero padding
//! followed by little-endian f64 node lists and the data array.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::V3;
use crate::grid::{Grid3, GridFunction};
use crate::modnormal::AssembledOperator;
use crate::transform::Sinogram;

pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

fn io_err(ctx: &str, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", ctx, e)))
}

fn header(magic: &[u8; 4], dims: [u32; 3], digest_hex: &str) -> Result<[u8; HEADER_LEN]> {
    let mut head = [0u8; HEADER_LEN];
    head[0..4].copy_from_slice(magic);
    head[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (k, d) in dims.iter().enumerate() {
        head[8 + 4 * k..12 + 4 * k].copy_from_slice(&d.to_le_bytes());
    }
    let raw = digest_bytes(digest_hex)?;
    head[20..52].copy_from_slice(&raw);
    Ok(head)
}

fn digest_bytes(hex: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if hex.is_empty() {
        return Ok(out);
    }
    if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::Format(format!(
            "geometry digest must be 64 hex characters, got {:?}",
            hex
        )));
    }
    for (k, chunk) in hex.as_bytes().chunks(2).enumerate() {
        let s = std::str::from_utf8(chunk).unwrap();
        out[k] = u8::from_str_radix(s, 16).unwrap();
    }
    Ok(out)
}

fn digest_hex(raw: &[u8]) -> String {
    if raw.iter().all(|&b| b == 0) {
        return String::new();
    }
    raw.iter().map(|b| format!("{:02x}", b)).collect()
}

fn parse_header(head: &[u8; HEADER_LEN], magic: &[u8; 4]) -> Result<([u32; 3], String)> {
    if &head[0..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &head[0..4],
            magic
        )));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {}",
            version
        )));
    }
    let mut dims = [0u32; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(head[8 + 4 * k..12 + 4 * k].try_into().unwrap());
    }
    Ok((dims, digest_hex(&head[20..52])))
}

fn write_f64s(w: &mut impl std::io::Write, vals: &[f64], ctx: &str) -> Result<()> {
    for &v in vals {
        w.write_all(&v.to_le_bytes()).map_err(|e| io_err(ctx, e))?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl std::io::Read, n: usize, ctx: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf).map_err(|e| io_err(ctx, e))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write a sinogram container plus its JSON sidecar (`<path>.json`).
pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    let ctx = path.display().to_string();
    let dims = [
        s.bases.len() as u32,
        s.lambdas.len() as u32,
        s.n_theta as u32,
    ];
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(&ctx, e))?);
    w.write_all(&header(b"FXSG", dims, &s.geometry)?)
        .map_err(|e| io_err(&ctx, e))?;
    let flat_bases: Vec<f64> = s.bases.iter().flat_map(|z| [z.x, z.y, z.z]).collect();
    write_f64s(&mut w, &flat_bases, &ctx)?;
    write_f64s(&mut w, &s.lambdas, &ctx)?;
    write_f64s(&mut w, &s.values, &ctx)?;
    w.flush().map_err(|e| io_err(&ctx, e))?;
    let sidecar = json!({
        "magic": "FXSG",
        "version": FORMAT_VERSION,
        "n_bases": s.bases.len(),
        "n_lambda": s.lambdas.len(),
        "n_theta": s.n_theta,
        "geometry": s.geometry,
    });
    write_json(&path.with_extension("fxsg.json"), &sidecar)
}

/// Read a sinogram container.
pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let ctx = path.display().to_string();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(&ctx, e))?);
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| io_err(&ctx, e))?;
    let (dims, geometry) = parse_header(&head, b"FXSG")?;
    let (nb, nl, nt) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let flat = read_f64s(&mut r, 3 * nb, &ctx)?;
    let bases: Vec<V3> = flat
        .chunks_exact(3)
        .map(|c| V3::new(c[0], c[1], c[2]))
        .collect();
    let lambdas = read_f64s(&mut r, nl, &ctx)?;
    let values = read_f64s(&mut r, nb * nl * nt, &ctx)?;
    Ok(Sinogram::new(bases, lambdas, nt, values, geometry))
}

/// Write a grid-volume container plus its JSON sidecar.
pub fn write_volume(path: &Path, f: &GridFunction) -> Result<()> {
    let ctx = path.display().to_string();
    let n = f.grid.n as u32;
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(&ctx, e))?);
    w.write_all(&header(b"FXGF", [n, n, n], "")?)
        .map_err(|e| io_err(&ctx, e))?;
    let meta = [
        f.grid.origin.x,
        f.grid.origin.y,
        f.grid.origin.z,
        f.grid.spacing,
    ];
    write_f64s(&mut w, &meta, &ctx)?;
    write_f64s(&mut w, &f.values, &ctx)?;
    w.flush().map_err(|e| io_err(&ctx, e))?;
    let sidecar = json!({
        "magic": "FXGF",
        "version": FORMAT_VERSION,
        "n": f.grid.n,
        "origin": [f.grid.origin.x, f.grid.origin.y, f.grid.origin.z],
        "spacing": f.grid.spacing,
    });
    write_json(&path.with_extension("fxgf.json"), &sidecar)
}

/// Read a grid-volume container.
pub fn read_volume(path: &Path) -> Result<GridFunction> {
    let ctx = path.display().to_string();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(&ctx, e))?);
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| io_err(&ctx, e))?;
    let (dims, _) = parse_header(&head, b"FXGF")?;
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(Error::Format("grid volumes must be cubic".into()));
    }
    let n = dims[0] as usize;
    let meta = read_f64s(&mut r, 4, &ctx)?;
    let grid = Grid3 {
        origin: V3::new(meta[0], meta[1], meta[2]),
        spacing: meta[3],
        n,
    };
    let values = read_f64s(&mut r, n * n * n, &ctx)?;
    if values.len() != grid.len() {
        return Err(Error::Format("volume payload length mismatch".into()));
    }
    Ok(GridFunction { grid, values })
}

/// Write an assembled matrix as binary (row u32, col u32, value f64)
/// triplets with a JSON metadata sidecar.
pub fn write_matrix(path: &Path, asm: &AssembledOperator) -> Result<()> {
    let ctx = path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(&ctx, e))?);
    let mut nnz = 0usize;
    for i in 0..asm.matrix.nrows() {
        for j in 0..asm.matrix.ncols() {
            let v = asm.matrix[(i, j)];
            if v != 0.0 {
                w.write_all(&(i as u32).to_le_bytes())
                    .and_then(|_| w.write_all(&(j as u32).to_le_bytes()))
                    .and_then(|_| w.write_all(&v.to_le_bytes()))
                    .map_err(|e| io_err(&ctx, e))?;
                nnz += 1;
            }
        }
    }
    w.flush().map_err(|e| io_err(&ctx, e))?;
    let sidecar = json!({
        "dim": asm.mask.len(),
        "nnz": nnz,
        "grid_n": asm.grid.n,
        "grid_origin": [asm.grid.origin.x, asm.grid.origin.y, asm.grid.origin.z],
        "grid_spacing": asm.grid.spacing,
        "mask": asm.mask,
    });
    write_json(&path.with_extension("mat.json"), &sidecar)
}

/// Read a binary triplet matrix back, using the JSON sidecar for shape.
pub fn read_matrix(path: &Path) -> Result<AssembledOperator> {
    let ctx = path.display().to_string();
    let meta: serde_json::Value = read_json(&path.with_extension("mat.json"))?;
    let dim = meta["dim"]
        .as_u64()
        .ok_or_else(|| Error::Format("matrix sidecar missing dim".into()))? as usize;
    let grid = Grid3 {
        origin: V3::new(
            meta["grid_origin"][0].as_f64().unwrap_or(0.0),
            meta["grid_origin"][1].as_f64().unwrap_or(0.0),
            meta["grid_origin"][2].as_f64().unwrap_or(0.0),
        ),
        spacing: meta["grid_spacing"].as_f64().unwrap_or(1.0),
        n: meta["grid_n"].as_u64().unwrap_or(0) as usize,
    };
    let mask: Vec<usize> = meta["mask"]
        .as_array()
        .ok_or_else(|| Error::Format("matrix sidecar missing mask".into()))?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    if mask.len() != dim {
        return Err(Error::Format("matrix sidecar mask/dim mismatch".into()));
    }
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io_err(&ctx, e))?;
    if buf.len() % 16 != 0 {
        return Err(Error::Format("triplet payload not a multiple of 16 bytes".into()));
    }
    let mut matrix = DMatrix::zeros(dim, dim);
    for t in buf.chunks_exact(16) {
        let i = u32::from_le_bytes(t[0..4].try_into().unwrap()) as usize;
        let j = u32::from_le_bytes(t[4..8].try_into().unwrap()) as usize;
        let v = f64::from_le_bytes(t[8..16].try_into().unwrap());
        if i >= dim || j >= dim {
            return Err(Error::Format("triplet index out of range".into()));
        }
        matrix[(i, j)] = v;
    }
    Ok(AssembledOperator { grid, mask, matrix })
}

/// Write pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let ctx = path.display().to_string();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {}", ctx, e)))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(&ctx, e))
}

/// Read a JSON document.
pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let ctx = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(&ctx, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {}", ctx, e)))
}

/// Write a CSV table: a header row and shortest-round-trip float formatting,
/// which is deterministic for identical inputs.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let ctx = path.display().to_string();
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(&ctx, e))
}

/// Canonical cell formatting for floats in CSV output.
pub fn csv_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{}", v)
    } else {
        format!("{:?}", v)
    }
}
