//! On-disk formats.
//!
//! * Spectrogram (`.spec`): two little-endian `u64` values `F`, `N`, then
//!   `F·N` complex values as interleaved little-endian `f64` pairs
//!   `(re, im)`, frame by frame, bins ascending within a frame. STFT
//!   parameters are implied by `F` (see [`StftParams::for_bins`]).
//! * Visual embeddings: headerless CSV with one row per frame, or binary
//!   (any other extension): little-endian `u32` `N`, `u32` `M`, then `N·M`
//!   row-major little-endian `f64`.
//! * Masks and traces: CSV with a header row.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{save_model, VisualEmbeddings};
use crate::spectral::{ComplexSpectrogram, StftParams};
use crate::synth::SyntheticScene;
use crate::vem::IterationTrace;

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_spectrogram(spec: &ComplexSpectrogram) -> Vec<u8> {
    let (f, n) = spec.values.dim();
    let mut out = Vec::with_capacity(16 + 16 * f * n);
    out.extend_from_slice(&(f as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for frame in 0..n {
        for bin in 0..f {
            let c = spec.values[[bin, frame]];
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8], origin: &Path) -> Result<ComplexSpectrogram> {
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes
            .get(i..i + 8)
            .map(|b| b.try_into().expect("slice of length 8"))
            .ok_or_else(|| parse_err(origin, "truncated spectrogram file"))
    };
    let f = u64::from_le_bytes(word(0)?) as usize;
    let n = u64::from_le_bytes(word(8)?) as usize;
    let expected = f
        .checked_mul(n)
        .and_then(|c| c.checked_mul(16))
        .and_then(|c| c.checked_add(16))
        .ok_or_else(|| parse_err(origin, "spectrogram header overflows"))?;
    if bytes.len() != expected {
        return Err(parse_err(
            origin,
            format!("{f}x{n} spectrogram needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut values = Array2::zeros((f, n));
    let mut pos = 16;
    for frame in 0..n {
        for bin in 0..f {
            let re = f64::from_le_bytes(word(pos)?);
            let im = f64::from_le_bytes(word(pos + 8)?);
            values[[bin, frame]] = Complex64::new(re, im);
            pos += 16;
        }
    }
    ComplexSpectrogram::from_values(values, StftParams::for_bins(f)?)
}

pub fn write_spectrogram(path: impl AsRef<Path>, spec: &ComplexSpectrogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_spectrogram(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: impl AsRef<Path>) -> Result<ComplexSpectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spectrogram(&bytes, path)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<VisualEmbeddings> {
    let path = path.as_ref();
    if is_csv(path) {
        read_embeddings_csv(path)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_embeddings(&bytes, path)
    }
}

fn read_embeddings_csv(path: &Path) -> Result<VisualEmbeddings> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, format!("{other:?}")),
        })?;
    let mut data = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        // A first row that is not numeric is a header.
        if i == 0 && record.iter().any(|field| field.parse::<f64>().is_err()) {
            continue;
        }
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, format!("row {}: {field:?} is not a number", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(path, format!("row {} has {} columns, expected {w}", i + 1, row.len())))
            }
            _ => {}
        }
        data.extend(row);
    }
    let width = width.ok_or_else(|| parse_err(path, "no embedding rows"))?;
    let rows = Array2::from_shape_vec((data.len() / width, width), data)
        .map_err(|e| parse_err(path, e.to_string()))?;
    VisualEmbeddings::new(rows)
}

pub fn encode_embeddings(v: &VisualEmbeddings) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * v.rows.len());
    out.extend_from_slice(&(v.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for x in v.rows.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], origin: &Path) -> Result<VisualEmbeddings> {
    if bytes.len() < 8 {
        return Err(parse_err(origin, "truncated embeddings header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let m = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 8 * n * m {
        return Err(parse_err(
            origin,
            format!("{n}x{m} embeddings need {} bytes, file has {}", 8 + 8 * n * m, bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let rows = Array2::from_shape_vec((n, m), data).map_err(|e| parse_err(origin, e.to_string()))?;
    VisualEmbeddings::new(rows)
}

pub fn write_embeddings(path: impl AsRef<Path>, v: &VisualEmbeddings) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        let mut text = String::new();
        for row in v.rows.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            text.push_str(&line.join(","));
            text.push('\n');
        }
        text.into_bytes()
    } else {
        encode_embeddings(v)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `header` then one line per row.
pub fn write_csv<I, S>(path: impl AsRef<Path>, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let path = path.as_ref();
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row.as_ref());
        text.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[IterationTrace]) -> Result<()> {
    write_csv(
        path,
        "iteration,q,pi,acceptance",
        trace
            .iter()
            .map(|t| format!("{},{},{},{}", t.iteration, t.q, t.pi, t.acceptance)),
    )
}

pub fn write_frame_pi(path: impl AsRef<Path>, pi_n: &[f64]) -> Result<()> {
    write_csv(
        path,
        "frame,pi_n",
        pi_n.iter().enumerate().map(|(n, p)| format!("{n},{p}")),
    )
}

pub fn write_mask(path: impl AsRef<Path>, mask: &[bool]) -> Result<()> {
    write_csv(
        path,
        "frame,corrupted",
        mask.iter().enumerate().map(|(n, m)| format!("{n},{}", u8::from(*m))),
    )
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| match line.split(',').nth(1).map(str::trim) {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            _ => Err(parse_err(path, format!("bad mask row {line:?}"))),
        })
        .collect()
}

/// File names inside an exported scene directory.
pub mod scene_files {
    pub const MIXTURE: &str = "mixture.spec";
    pub const CLEAN: &str = "clean.spec";
    pub const NOISE: &str = "noise.spec";
    pub const VISUAL: &str = "visual.csv";
    pub const VISUAL_CLEAN: &str = "visual_clean.csv";
    pub const MASK: &str = "mask.csv";
    pub const ALPHA: &str = "alpha.csv";
    pub const MODEL: &str = "model.vaemm.json";
}

/// Writes every component of a scene into `dir`, creating it if needed.
pub fn export_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    use scene_files::*;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = |name: &str| dir.join(name);
    write_spectrogram(path(MIXTURE), &scene.mixture)?;
    write_spectrogram(path(CLEAN), &scene.clean)?;
    write_spectrogram(path(NOISE), &scene.noise)?;
    write_embeddings(path(VISUAL), &scene.visuals)?;
    write_embeddings(path(VISUAL_CLEAN), &scene.visuals_clean)?;
    write_mask(path(MASK), &scene.mask)?;
    write_csv(
        path(ALPHA),
        "frame,alpha",
        scene.alpha.iter().enumerate().map(|(n, a)| format!("{n},{}", u8::from(*a))),
    )?;
    save_model(&scene.bundle, path(MODEL))?;
    Ok([MIXTURE, CLEAN, NOISE, VISUAL, VISUAL_CLEAN, MASK, ALPHA, MODEL]
        .iter()
        .map(|n| path(n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn spectrogram_bytes_round_trip(f in 2usize..12, n in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = Array2::from_shape_simple_fn((f, n), || Complex64::new(rng.random(), rng.random::<f64>() - 0.5));
            let spec = ComplexSpectrogram::from_values(values, StftParams::for_bins(f).unwrap()).unwrap();
            let back = decode_spectrogram(&encode_spectrogram(&spec), Path::new("x.spec")).unwrap();
            prop_assert_eq!(back, spec);
        }
    }

    #[test]
    fn embeddings_csv_header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        fs::write(&path, "e0,e1\n1.5,-2\n0,3\n").unwrap();
        let v = read_embeddings(&path).unwrap();
        assert_eq!(v.rows, ndarray::array![[1.5, -2.0], [0.0, 3.0]]);
        fs::write(&path, "1,2\nx,3\n").unwrap();
        assert!(read_embeddings(&path).is_err());
    }

    #[test]
    fn embeddings_csv_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let v = VisualEmbeddings::new(ndarray::array![[0.1, -2.5], [1e-7, 3.0], [4.0, 5.5]]).unwrap();
        for name in ["v.csv", "v.bin"] {
            let p = dir.path().join(name);
            write_embeddings(&p, &v).unwrap();
            assert_eq!(read_embeddings(&p).unwrap(), v);
        }
    }

    #[test]
    fn embeddings_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Parse { .. })));
        fs::write(&p, "1,x\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Parse { .. })));
        assert!(matches!(read_embeddings(dir.path().join("none.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn truncated_spectrogram_rejected() {
        let err = decode_spectrogram(&[0u8; 20], Path::new("t.spec")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mask = vec![true, false, false, true];
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);
    }
}
