//! File formats: binary fields, PGM images and CSV exports.
//!
//! Binary field layout (little-endian): `b"FLD2"`, `u32` rows, `u32` cols,
//! `f64` spacing, then `rows * cols` `f64` values in row-major order. The
//! origin is not stored; fields are read back on a centred lattice.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::shi::GradientMeasurement;
use crate::zernike::{ZernikeFit, ZernikeIndex};

pub const FIELD_MAGIC: &[u8; 4] = b"FLD2";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Format(format!("{other:?}")),
            }
        } else {
            Error::Format(e.to_string())
        }
    }
}

pub fn write_field<W: Write>(mut w: W, f: &Field2D) -> Result<()> {
    let (rows, cols) = f.shape();
    let dim = |v: usize| u32::try_from(v).map_err(|_| format_err("field too large for the format"));
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&dim(rows)?.to_le_bytes())?;
    w.write_all(&dim(cols)?.to_le_bytes())?;
    w.write_all(&f.spacing().to_le_bytes())?;
    for v in f.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field2D> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(format_err("missing FLD2 magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let spacing = f64::from_le_bytes(b8);
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != rows * cols * 8 {
        return Err(format_err(format!(
            "expected {} value bytes for {rows}x{cols}, found {}",
            rows * cols * 8,
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let origin = (
        -0.5 * (cols as f64 - 1.0) * spacing,
        -0.5 * (rows as f64 - 1.0) * spacing,
    );
    Field2D::new(rows, cols, spacing, origin, values)
}

pub fn save_field(path: impl AsRef<Path>, f: &Field2D) -> Result<()> {
    write_field(BufWriter::new(File::create(path)?), f)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field2D> {
    read_field(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Writes `[0, 1]` values (clamped) as binary PGM.
pub fn write_pgm<W: Write>(mut w: W, rows: usize, cols: usize, values: &[f64], depth: BitDepth) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            got: (values.len(), 1),
        });
    }
    let maxval = depth.maxval();
    write!(w, "P5\n{cols} {rows}\n{maxval}\n")?;
    let q = |v: f64| (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
    match depth {
        BitDepth::Eight => {
            let bytes: Vec<u8> = values.iter().map(|&v| q(v) as u8).collect();
            w.write_all(&bytes)?;
        }
        BitDepth::Sixteen => {
            let bytes: Vec<u8> = values.iter().flat_map(|&v| (q(v) as u16).to_be_bytes()).collect();
            w.write_all(&bytes)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Raw 8-bit samples, already quantised.
pub fn write_pgm_bytes<W: Write>(mut w: W, rows: usize, cols: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            got: (bytes.len(), 1),
        });
    }
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn save_pgm(path: impl AsRef<Path>, f: &Field2D, depth: BitDepth) -> Result<()> {
    write_pgm(BufWriter::new(File::create(path)?), f.rows(), f.cols(), f.values(), depth)
}

/// Reads a binary PGM as a unit-spacing field with values in `[0, 1]`.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Field2D> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(format_err("only binary (P5) PGM is supported"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format_err(format!("bad PGM header value {s:?}")));
    let cols = num(token()?)?;
    let rows = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = rows * cols * width;
    if data.len() < start + need {
        return Err(format_err("truncated PGM raster"));
    }
    let raster = &data[start..start + need];
    let values = if width == 1 {
        raster.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    };
    let origin = (-0.5 * (cols as f64 - 1.0), -0.5 * (rows as f64 - 1.0));
    Field2D::new(rows, cols, 1.0, origin, values)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Field2D> {
    read_pgm(BufReader::new(File::open(path)?))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(true).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| format_err(format!("cannot parse {what} from {s:?}")))
}

/// Header `n,M,N_grid,snr_db,seed`, its values, then `channel,lenslet,value` rows.
pub fn write_measurement<W: Write>(w: W, m: &GradientMeasurement) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["n", "M", "N_grid", "snr_db", "seed"])?;
    out.write_record([
        m.n().to_string(),
        m.lenslets.to_string(),
        m.n_grid.to_string(),
        m.snr_db.to_string(),
        m.seed.to_string(),
    ])?;
    out.write_record(["channel", "lenslet", "value"])?;
    for (ch, keep, b) in [("x", &m.keep_x, &m.b_x), ("y", &m.keep_y, &m.b_y)] {
        for (k, v) in keep.iter().zip(b.iter()) {
            out.write_record([ch.to_string(), k.to_string(), format!("{v:e}")])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_measurement<R: Read>(r: R) -> Result<GradientMeasurement> {
    let mut rows = csv_reader(r).into_records();
    let mut next = || -> Result<csv::StringRecord> {
        rows.next().ok_or_else(|| format_err("truncated measurement file"))?.map_err(Error::from)
    };
    let head = next()?;
    if head.iter().collect::<Vec<_>>() != ["n", "M", "N_grid", "snr_db", "seed"] {
        return Err(format_err("measurement header must be n,M,N_grid,snr_db,seed"));
    }
    let vals = next()?;
    if vals.len() != 5 {
        return Err(format_err("measurement metadata needs five values"));
    }
    let n: usize = parse(&vals[0], "n")?;
    let lenslets: usize = parse(&vals[1], "M")?;
    let n_grid: usize = parse(&vals[2], "N_grid")?;
    let snr_db: f64 = parse(&vals[3], "snr_db")?;
    let seed: u64 = parse(&vals[4], "seed")?;
    next()?;
    let (mut keep_x, mut keep_y, mut b_x, mut b_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rows {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(format_err("measurement rows need channel,lenslet,value"));
        }
        let k: usize = parse(&rec[1], "lenslet")?;
        let v: f64 = parse(&rec[2], "value")?;
        match &rec[0] {
            "x" => {
                keep_x.push(k);
                b_x.push(v);
            }
            "y" => {
                keep_y.push(k);
                b_y.push(v);
            }
            other => return Err(format_err(format!("unknown channel {other:?}"))),
        }
    }
    let m = GradientMeasurement {
        b_x,
        b_y,
        keep_x,
        keep_y,
        lenslets,
        n_grid,
        snr_db,
        seed,
    };
    if m.n() != n {
        return Err(format_err(format!("header announces n={n}, file has {}", m.n())));
    }
    m.validate()?;
    Ok(m)
}

/// Columns `index,n,m,coefficient` (Noll index, radial order, azimuthal frequency).
pub fn write_zernike<W: Write>(w: W, fit: &ZernikeFit) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["index", "n", "m", "coefficient"])?;
    for (i, a) in fit.coeffs.iter().enumerate() {
        let z = ZernikeIndex::from_noll(i + 1)?;
        out.write_record([z.noll().to_string(), z.n().to_string(), z.m().to_string(), format!("{a:e}")])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_zernike<R: Read>(r: R) -> Result<ZernikeFit> {
    let mut coeffs = Vec::new();
    for (i, rec) in csv_reader(r).into_records().enumerate() {
        let rec = rec?;
        if i == 0 {
            continue;
        }
        if rec.len() != 4 {
            return Err(format_err("zernike rows need index,n,m,coefficient"));
        }
        let idx: usize = parse(&rec[0], "index")?;
        if idx != coeffs.len() + 1 {
            return Err(format_err(format!("zernike indices must be consecutive from 1, got {idx}")));
        }
        let z = ZernikeIndex::from_noll(idx)?;
        if parse::<u32>(&rec[1], "n")? != z.n() || parse::<i32>(&rec[2], "m")? != z.m() {
            return Err(format_err(format!("(n, m) does not match Noll index {idx}")));
        }
        coeffs.push(parse::<f64>(&rec[3], "coefficient")?);
    }
    if coeffs.is_empty() {
        return Err(format_err("no zernike coefficients"));
    }
    Ok(ZernikeFit {
        order: coeffs.len() - 1,
        coeffs,
        rms_residual: f64::NAN,
    })
}

/// One solver trace row; the residual is blank where it was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub constraint_residual: Option<f64>,
}

pub fn write_trace<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["iteration", "objective", "constraint_residual"])?;
    for r in rows {
        out.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.objective),
            r.constraint_residual.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shi::{decimate, MaskMode};

    #[test]
    fn field_round_trip() {
        let f = Field2D::from_fn(6, 0.25, |x, y| x * 3.0 - y).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 20 + 36 * 8);
        assert_eq!(&buf[..4], b"FLD2");
        let g = read_field(buf.as_slice()).unwrap();
        assert_eq!(f, g);
        assert!(read_field(&buf[..30]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_round_trip_both_depths() {
        let f = Field2D::new(3, 5, 1.0, (-2.0, -1.0), (0..15).map(|i| i as f64 / 14.0).collect()).unwrap();
        for (depth, tol) in [(BitDepth::Eight, 0.5 / 255.0), (BitDepth::Sixteen, 0.5 / 65535.0)] {
            let mut buf = Vec::new();
            write_pgm(&mut buf, 3, 5, f.values(), depth).unwrap();
            let g = read_pgm(buf.as_slice()).unwrap();
            assert_eq!(g.shape(), (3, 5));
            for (a, b) in f.values().iter().zip(g.values()) {
                assert!((a - b).abs() <= tol + 1e-15);
            }
        }
        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(read_pgm(&with_comment[..]).unwrap().values(), &[0.0, 1.0]);
        assert!(read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(read_pgm(&b"P5\n4 4\n255\n\x00"[..]).is_err());
    }

    #[test]
    fn measurement_round_trip() {
        let fx: Vec<f64> = (0..40).map(|i| (i as f64).sin() * 1e3).collect();
        let fy: Vec<f64> = (0..40).map(|i| (i as f64).cos() * 1e-3).collect();
        let m = decimate(&fx, &fy, 0.4, 5, 8, MaskMode::Independent).unwrap();
        let mut buf = Vec::new();
        write_measurement(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,M,N_grid,snr_db,seed\n16,40,8,inf,5\nchannel,lenslet,value\n"));
        assert_eq!(read_measurement(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn zernike_round_trip() {
        let fit = ZernikeFit {
            coeffs: vec![0.0, 1.5, -2.0, 0.25, 1e-9, 3.0],
            order: 5,
            rms_residual: 0.0,
        };
        let mut buf = Vec::new();
        write_zernike(&mut buf, &fit).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,n,m,coefficient\n1,0,0,"));
        assert!(text.contains("\n4,2,0,"));
        let back = read_zernike(buf.as_slice()).unwrap();
        assert_eq!(back.coeffs, fit.coeffs);
        assert_eq!(back.order, 5);
    }

    #[test]
    fn trace_has_blank_residuals() {
        let rows = [
            TraceRow { iteration: 1, objective: 2.0, constraint_residual: None },
            TraceRow { iteration: 2, objective: 1.0, constraint_residual: Some(0.5) },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,objective,constraint_residual\n1,2e0,\n2,1e0,5e-1\n"
        );
    }
}
