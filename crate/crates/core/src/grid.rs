//! Sample grids: binary PPM for image generators, CSV scatter for 2-D ones.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, FganError, Result};
use crate::models::{Classifier, Generator};
use crate::rng::{self, tag};

/// Encoded grid and the file extension it should carry.
pub fn render_sample_grid(g: &Generator, c: Option<&Classifier>, rows: usize, cols: usize, seed: u64) -> Result<(Vec<u8>, &'static str)> {
    if rows == 0 || cols == 0 {
        return Err(FganError::Usage("grid needs at least one row and column".into()));
    }
    let shape = g.sample_shape();
    let n = rows * cols;
    let z = g.sample_latents(&mut rng::stream(seed, &[tag::GRID]), n);
    match *shape.as_slice() {
        [ch, h, w] if ch == 3 || ch == 1 => {
            let x = g.generate(&z)?;
            let (width, height) = (cols * w, rows * h);
            let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
            let header = out.len();
            out.resize(header + width * height * 3, 0);
            for s in 0..n {
                let (gr, gc) = (s / cols, s % cols);
                let img = x.row(s);
                for y in 0..h {
                    for xx in 0..w {
                        let px = header + ((gr * h + y) * width + gc * w + xx) * 3;
                        for k in 0..3 {
                            let v = img[(k % ch) * h * w + y * w + xx];
                            out[px + k] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
                        }
                    }
                }
            }
            Ok((out, "ppm"))
        }
        [2] => {
            let x = g.generate(&z)?;
            let classes = match c {
                Some(c) => Some(c.predict(&x)?),
                None => None,
            };
            let mut s = String::from(if classes.is_some() { "x,y,class\n" } else { "x,y\n" });
            for i in 0..n {
                let p = x.row(i);
                let _ = write!(s, "{:.6},{:.6}", p[0], p[1]);
                if let Some(cl) = &classes {
                    let _ = write!(s, ",{}", cl[i]);
                }
                s.push('\n');
            }
            Ok((s.into_bytes(), "csv"))
        }
        ref other => Err(FganError::Usage(format!("no grid format for samples of shape {other:?}"))),
    }
}

/// Write a `rows x cols` grid to `path` (extension replaced by the format's).
pub fn export_sample_grid(
    g: &Generator,
    c: Option<&Classifier>,
    rows: usize,
    cols: usize,
    seed: u64,
    path: &Path,
) -> Result<std::path::PathBuf> {
    let (bytes, ext) = render_sample_grid(g, c, rows, cols, seed)?;
    let path = path.with_extension(ext);
    std::fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}
