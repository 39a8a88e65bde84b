//! Binary checkpoint format.
//!
//! Layout: magic `HGN1`; little-endian u32 {vocab, d, d', H, K}; f64
//! {gamma, mu seconds}; then each matrix as a (rows, cols) u32 pair
//! followed by row-major little-endian f64 entries, in the order: X,
//! first-layer head projections (head order), first-layer output
//! projection, second-layer head projections, second-layer output
//! projection, assignment projection. Readers reject unknown magic and
//! any shape that disagrees with the header.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{GatWeights, Hyper, ModelParams};

const MAGIC: &[u8; 4] = b"HGN1";

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    Ok(f64::from_le_bytes(buf))
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    write_u32(w, m.nrows() as u32)?;
    write_u32(w, m.ncols() as u32)?;
    for &v in m.iter() {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let got_rows = read_u32(r)? as usize;
    let got_cols = read_u32(r)? as usize;
    if got_rows != rows || got_cols != cols {
        return Err(Error::Data(format!(
            "checkpoint {name} has shape ({got_rows}, {got_cols}), expected ({rows}, {cols})"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Data(format!("checkpoint {name}: {e}")))
}

/// Serializes parameters to a writer.
pub fn write_params<W: Write>(w: &mut W, params: &ModelParams) -> Result<()> {
    let h = params.hyper;
    w.write_all(MAGIC)?;
    write_u32(w, params.x.nrows() as u32)?;
    write_u32(w, h.d as u32)?;
    write_u32(w, h.d_head as u32)?;
    write_u32(w, h.heads as u32)?;
    write_u32(w, h.factors as u32)?;
    write_f64(w, h.gamma)?;
    write_f64(w, h.mu)?;
    write_matrix(w, &params.x)?;
    for gat in [&params.gat1, &params.gat2] {
        for w_h in &gat.w_heads {
            write_matrix(w, w_h)?;
        }
        write_matrix(w, &gat.w_out)?;
    }
    write_matrix(w, &params.w_assign)?;
    Ok(())
}

/// Deserializes parameters from a reader, validating shapes.
pub fn read_params<R: Read>(r: &mut R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "unknown checkpoint magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let vocab = read_u32(r)? as usize;
    let d = read_u32(r)? as usize;
    let d_head = read_u32(r)? as usize;
    let heads = read_u32(r)? as usize;
    let factors = read_u32(r)? as usize;
    let gamma = read_f64(r)?;
    let mu = read_f64(r)?;
    let hyper = Hyper {
        d,
        d_head,
        heads,
        factors,
        gamma,
        mu,
    };
    hyper.validate()?;
    if vocab == 0 {
        return Err(Error::Data("checkpoint declares an empty vocabulary".into()));
    }

    let x = read_matrix(r, "embedding table", vocab, d)?;
    let mut gats = Vec::new();
    for layer in ["first", "second"] {
        let mut w_heads = Vec::with_capacity(heads);
        for h in 0..heads {
            w_heads.push(read_matrix(
                r,
                &format!("{layer} attention head {h}"),
                d_head,
                d,
            )?);
        }
        let w_out = read_matrix(r, &format!("{layer} attention output"), d, heads * d_head)?;
        gats.push(GatWeights { w_heads, w_out });
    }
    let w_assign = read_matrix(r, "assignment projection", d, factors)?;
    let gat2 = gats.pop().unwrap();
    let gat1 = gats.pop().unwrap();

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Data("checkpoint has trailing bytes".into()));
    }

    let params = ModelParams {
        hyper,
        x,
        gat1,
        gat2,
        w_assign,
    };
    params.validate()?;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_params(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)?;
    read_params(&mut std::io::BufReader::new(file))
}
