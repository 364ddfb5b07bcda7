//! File formats: binary voxel grids (`MVG1`), binary scalar fields (`MEF1`),
//! and the CSV layouts used for points, spheres, and summary curves.
//!
//! Both binary formats share a little-endian header: a 4-byte magic, u32
//! dimensions nx, ny, nz (x-fastest payload order), and an f64 voxel edge
//! length in nm. `MVG1` stores one byte per voxel (0 or 1); `MEF1` stores one
//! f32 per voxel. Readers reject wrong magic, truncated or trailing payloads,
//! and out-of-range values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Sphere, VoxelGrid};

const MVG1_MAGIC: &[u8; 4] = b"MVG1";
const MEF1_MAGIC: &[u8; 4] = b"MEF1";

// 2^31 voxels; anything larger is a corrupt or hostile header
const MAX_VOXELS: u64 = 1 << 31;

pub fn write_mvg1<W: Write>(w: &mut W, grid: &VoxelGrid) -> Result<()> {
    let (nx, ny, nz) = grid.dims();
    write_header(w, MVG1_MAGIC, nx, ny, nz, grid.voxel_size())?;
    w.write_all(grid.data())?;
    Ok(())
}

pub fn read_mvg1<R: Read>(r: &mut R) -> Result<VoxelGrid> {
    let (nx, ny, nz, voxel_size) = read_header(r, MVG1_MAGIC)?;
    let n = nx * ny * nz;
    let mut data = vec![0u8; n];
    r.read_exact(&mut data).map_err(|_| Error::Format("voxel payload is truncated".into()))?;
    expect_eof(r)?;
    if data.iter().any(|&v| v > 1) {
        return Err(Error::Format("voxel values must be 0 or 1".into()));
    }
    VoxelGrid::from_data(nx, ny, nz, voxel_size, data)
}

pub fn save_mvg1<P: AsRef<Path>>(path: P, grid: &VoxelGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mvg1(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn load_mvg1<P: AsRef<Path>>(path: P) -> Result<VoxelGrid> {
    read_mvg1(&mut BufReader::new(File::open(path)?))
}

/// Scalar field payload values are written as f32; callers carrying f64
/// accept the rounding.
pub fn write_mef1<W: Write>(
    w: &mut W,
    dims: (usize, usize, usize),
    voxel_size: f64,
    values: &[f64],
) -> Result<()> {
    let (nx, ny, nz) = dims;
    if values.len() != nx * ny * nz {
        return Err(Error::InvalidParam(format!(
            "field length {} does not match {}x{}x{}",
            values.len(),
            nx,
            ny,
            nz
        )));
    }
    write_header(w, MEF1_MAGIC, nx, ny, nz, voxel_size)?;
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_mef1<R: Read>(r: &mut R) -> Result<((usize, usize, usize), f64, Vec<f64>)> {
    let (nx, ny, nz, voxel_size) = read_header(r, MEF1_MAGIC)?;
    let n = nx * ny * nz;
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(|_| Error::Format("field payload is truncated".into()))?;
        let v = f32::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::Format("field values must be finite".into()));
        }
        values.push(v as f64);
    }
    expect_eof(r)?;
    Ok(((nx, ny, nz), voxel_size, values))
}

pub fn save_mef1<P: AsRef<Path>>(
    path: P,
    dims: (usize, usize, usize),
    voxel_size: f64,
    values: &[f64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mef1(&mut w, dims, voxel_size, values)?;
    w.flush()?;
    Ok(())
}

fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size: f64,
) -> Result<()> {
    w.write_all(magic)?;
    for d in [nx, ny, nz] {
        let d = u32::try_from(d).map_err(|_| Error::InvalidParam("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&voxel_size.to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(usize, usize, usize, f64)> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|_| Error::Format("header is truncated".into()))?;
    if &head[0..4] != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}",
            std::str::from_utf8(magic).unwrap()
        )));
    }
    let nx = u32::from_le_bytes(head[4..8].try_into().unwrap()) as u64;
    let ny = u32::from_le_bytes(head[8..12].try_into().unwrap()) as u64;
    let nz = u32::from_le_bytes(head[12..16].try_into().unwrap()) as u64;
    let voxel_size = f64::from_le_bytes(head[16..24].try_into().unwrap());
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Format("dimensions must be >= 1".into()));
    }
    let total = nx.checked_mul(ny).and_then(|v| v.checked_mul(nz));
    if !matches!(total, Some(n) if n <= MAX_VOXELS) {
        return Err(Error::Format("grid size exceeds supported maximum".into()));
    }
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::Format("voxel size must be finite and > 0".into()));
    }
    Ok((nx as usize, ny as usize, nz as usize, voxel_size))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing data after payload".into())),
    }
}

/// Shortest round-trip float formatting; NaN prints as `nan`.
fn fmt_f64(v: f64) -> String {
    if v.is_nan() { "nan".into() } else { format!("{v}") }
}

/// Rows of `x,y,z,cluster_id` in voxel coordinates.
pub fn write_points_csv<W: Write>(w: &mut W, rows: &[(f64, f64, f64, u64)]) -> Result<()> {
    writeln!(w, "x,y,z,cluster_id")?;
    for &(x, y, z, id) in rows {
        writeln!(w, "{},{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(z), id)?;
    }
    Ok(())
}

/// Rows of `x,y,z,r` in voxel coordinates.
pub fn write_spheres_csv<W: Write>(w: &mut W, spheres: &[Sphere]) -> Result<()> {
    writeln!(w, "x,y,z,r")?;
    for s in spheres {
        writeln!(w, "{},{},{},{}", fmt_f64(s.cx), fmt_f64(s.cy), fmt_f64(s.cz), fmt_f64(s.r))?;
    }
    Ok(())
}

pub fn read_spheres_csv<R: BufRead>(r: &mut R) -> Result<Vec<Sphere>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(line) => {
            if line?.trim() != "x,y,z,r" {
                return Err(Error::Format("expected header x,y,z,r".into()));
            }
        }
        None => return Err(Error::Format("empty sphere file".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_floats(&line, 4, i + 2)?;
        out.push(Sphere { cx: f[0], cy: f[1], cz: f[2], r: f[3] });
    }
    Ok(out)
}

pub fn load_spheres_csv<P: AsRef<Path>>(path: P) -> Result<Vec<Sphere>> {
    read_spheres_csv(&mut BufReader::new(File::open(path)?))
}

/// Two-column curve, e.g. `t,F` for an EDF or `r,kappa` for the mark
/// correlation (empty bins print as nan).
pub fn write_curve_csv<W: Write>(w: &mut W, col_a: &str, col_b: &str, rows: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "{col_a},{col_b}")?;
    for &(a, b) in rows {
        writeln!(w, "{},{}", fmt_f64(a), fmt_f64(b))?;
    }
    Ok(())
}

/// Search trace rows of `lambda_c,a,b,p,objective`.
pub fn write_objective_csv<W: Write>(w: &mut W, rows: &[[f64; 5]]) -> Result<()> {
    writeln!(w, "lambda_c,a,b,p,objective")?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn parse_floats(line: &str, want: usize, line_no: usize) -> Result<Vec<f64>> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != want {
        return Err(Error::Format(format!(
            "line {line_no}: expected {want} columns, found {}",
            cells.len()
        )));
    }
    cells
        .iter()
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {line_no}: bad number {c:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_grid() -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data = (0..5 * 4 * 3).map(|_| (rng.random::<f64>() < 0.4) as u8).collect();
        VoxelGrid::from_data(5, 4, 3, 0.71, data).unwrap()
    }

    #[test]
    fn mvg1_round_trip() {
        let g = sample_grid();
        let mut buf = Vec::new();
        write_mvg1(&mut buf, &g).unwrap();
        assert_eq!(buf.len(), 4 + 12 + 8 + g.len());
        let back = read_mvg1(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn mvg1_exact_bytes_for_unit_grid() {
        let g = VoxelGrid::from_data(1, 1, 1, 1.0, vec![1]).unwrap();
        let mut buf = Vec::new();
        write_mvg1(&mut buf, &g).unwrap();
        let mut want = b"MVG1".to_vec();
        want.extend([1u8, 0, 0, 0]);
        want.extend([1u8, 0, 0, 0]);
        want.extend([1u8, 0, 0, 0]);
        want.extend(1.0f64.to_le_bytes());
        want.push(1);
        assert_eq!(buf, want);
    }

    #[test]
    fn mvg1_rejects_malformed_input() {
        let g = sample_grid();
        let mut buf = Vec::new();
        write_mvg1(&mut buf, &g).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_mvg1(&mut bad_magic.as_slice()).is_err());

        let short_header = &buf[..10];
        assert!(read_mvg1(&mut &short_header[..]).is_err());

        let short_payload = &buf[..buf.len() - 1];
        assert!(read_mvg1(&mut &short_payload[..]).is_err());

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_mvg1(&mut trailing.as_slice()).is_err());

        let mut bad_value = buf.clone();
        *bad_value.last_mut().unwrap() = 2;
        assert!(read_mvg1(&mut bad_value.as_slice()).is_err());

        let mut zero_dim = buf.clone();
        zero_dim[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(read_mvg1(&mut zero_dim.as_slice()).is_err());

        let mut bad_voxel = buf.clone();
        bad_voxel[16..24].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(read_mvg1(&mut bad_voxel.as_slice()).is_err());

        let mut huge = buf.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(read_mvg1(&mut huge.as_slice()).is_err());
    }

    #[test]
    fn mef1_round_trip_with_f32_rounding() {
        let values: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
        let mut buf = Vec::new();
        write_mef1(&mut buf, (2, 3, 4), 0.71, &values).unwrap();
        let (dims, vs, back) = read_mef1(&mut buf.as_slice()).unwrap();
        assert_eq!(dims, (2, 3, 4));
        assert_eq!(vs, 0.71);
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mef1_rejects_nonfinite_and_length_mismatch() {
        assert!(write_mef1(&mut Vec::new(), (2, 2, 2), 1.0, &[0.0; 7]).is_err());
        let mut buf = Vec::new();
        write_mef1(&mut buf, (1, 1, 2), 1.0, &[0.5, 0.5]).unwrap();
        let tail = buf.len() - 4;
        buf[tail..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(read_mef1(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn spheres_csv_round_trip() {
        let spheres = vec![
            Sphere { cx: 1.5, cy: 2.0, cz: 3.25, r: 1.7320508075688772 },
            Sphere { cx: 0.1, cy: 0.2, cz: 0.3, r: 2.733 },
        ];
        let mut buf = Vec::new();
        write_spheres_csv(&mut buf, &spheres).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,z,r\n"));
        let back = read_spheres_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back, spheres);
    }

    #[test]
    fn spheres_csv_rejects_bad_rows() {
        let bad_header = b"a,b,c,d\n1,2,3,4\n";
        assert!(read_spheres_csv(&mut &bad_header[..]).is_err());
        let bad_cols = b"x,y,z,r\n1,2,3\n";
        assert!(read_spheres_csv(&mut &bad_cols[..]).is_err());
        let bad_num = b"x,y,z,r\n1,2,three,4\n";
        let err = read_spheres_csv(&mut &bad_num[..]).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn curve_csv_prints_nan_bins() {
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, "r", "kappa", &[(0.5, 1.25), (1.5, f64::NAN)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "r,kappa\n0.5,1.25\n1.5,nan\n");
    }

    #[test]
    fn points_and_objective_csv_layouts() {
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &[(1.0, 2.0, 3.0, 7)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,y,z,cluster_id\n1,2,3,7\n");
        let mut buf = Vec::new();
        write_objective_csv(&mut buf, &[[9e-5, 45.0, 15.0, 0.987, 0.0123]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda_c,a,b,p,objective\n"));
        assert!(text.contains("0.00009,45,15,0.987,0.0123"));
    }
}
