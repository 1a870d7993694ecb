//! Files on disk: frame directories, masks, transforms CSV, moments tensors
//! and the small CSV reports.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use crate::eval::{Annotation, RocCurve};
use crate::ja::EpochLog;
use crate::moments::PanoramicMoments;
use crate::transform::{self, generator, matrix_exp, Matrix3, TransformKind, TransformParams};
use crate::warp::Frame;
use crate::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];
const MOMENTS_MAGIC: &str = "MCBM-MOM v1";

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    require(dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads an 8-bit image as a one-channel frame, or three channels when the
/// file carries color.
pub fn read_frame(path: &Path) -> Result<Frame> {
    require(path)?;
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        Frame::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0)
    } else {
        let gray = img.to_luma8();
        let raw = gray.as_raw();
        Frame::from_fn(1, h, w, |_, y, x| raw[y * w + x] as f64 / 255.0)
    }
}

/// Every image in `dir` with its file name. All frames must share a shape.
pub fn read_frame_dir(dir: &Path) -> Result<(Vec<String>, Vec<Frame>)> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::argument(format!("no images in {}", dir.display())));
    }
    let mut names = Vec::with_capacity(paths.len());
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        let f = read_frame(p)?;
        if let Some(first) = frames.first() {
            if Frame::dims(first) != f.dims() {
                return Err(Error::argument(format!(
                    "{} is {:?}, expected {:?}",
                    p.display(),
                    f.dims(),
                    Frame::dims(first)
                )));
            }
        }
        names.push(file_name(p));
        frames.push(f);
    }
    Ok((names, frames))
}

/// Frames named `names` inside `dir`, in that order.
pub fn read_named_frames(dir: &Path, names: &[String]) -> Result<Vec<Frame>> {
    require(dir)?;
    names.iter().map(|n| read_frame(&dir.join(n))).collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a one- or three-channel frame as an 8-bit image; the format
/// follows the extension.
pub fn write_frame(path: &Path, f: &Frame) -> Result<()> {
    let (c, h, w) = f.dims();
    let img = match c {
        1 => DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(f.get(0, y as usize, x as usize))])
        })),
        3 => DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([to_u8(f.get(0, y, x)), to_u8(f.get(1, y, x)), to_u8(f.get(2, y, x))])
        })),
        _ => return Err(Error::argument(format!("cannot write a {c}-channel image"))),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}

/// Binary annotation mask; any nonzero pixel is foreground.
pub fn read_mask(path: &Path) -> Result<Annotation> {
    require(path)?;
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Annotation::new(h, w, img.as_raw().iter().map(|&v| v != 0).collect())
}

pub fn write_mask(path: &Path, a: &Annotation) -> Result<()> {
    let img = GrayImage::from_fn(a.width as u32, a.height as u32, |x, y| {
        image::Luma([if a.foreground[y as usize * a.width + x as usize] { 255 } else { 0 }])
    });
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(fs::File::create(path)?)
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per frame: index, kind, parameters, realized matrix row-major.
/// Floats carry 17 significant digits so they read back exactly.
pub fn write_transforms(path: &Path, params: &[TransformParams]) -> Result<()> {
    let kind = params.first().map_or(TransformKind::Affine, |p| p.kind);
    if params.iter().any(|p| p.kind != kind) {
        return Err(Error::argument("transforms file needs a single kind"));
    }
    let mut out = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["frame_index".to_string(), "kind".to_string()];
    header.extend((0..kind.dim()).map(|k| format!("theta_{k}")));
    for r in 1..=3 {
        for c in 1..=3 {
            header.push(format!("m{r}{c}"));
        }
    }
    out.write_record(&header).map_err(csv_error)?;
    for (i, p) in params.iter().enumerate() {
        let m = transform::realize(p)?;
        let mut row = vec![i.to_string(), p.kind.to_string()];
        row.extend(p.theta.iter().map(|&v| float(v)));
        for r in 0..3 {
            for c in 0..3 {
                row.push(float(m[(r, c)]));
            }
        }
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::argument(format!("csv: {other:?}")),
    }
}

/// Reads [`write_transforms`] output. A homography's frozen base is
/// recovered from the stored matrix as `M · exp(−G(θ))`.
pub fn read_transforms(path: &Path) -> Result<Vec<TransformParams>> {
    require(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut params = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_error(path, line, e.to_string()))?;
        let kind: TransformKind = rec
            .get(1)
            .ok_or_else(|| parse_error(path, line, "missing kind"))?
            .parse()
            .map_err(|e: Error| parse_error(path, line, e.to_string()))?;
        let d = kind.dim();
        if rec.len() != 2 + d + 9 {
            return Err(parse_error(
                path,
                line,
                format!("{kind} row needs {} columns, got {}", 2 + d + 9, rec.len()),
            ));
        }
        let index: usize = rec[0]
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad frame index `{}`", &rec[0])))?;
        if index != params.len() {
            return Err(parse_error(path, line, format!("expected frame index {}", params.len())));
        }
        let nums = (2..rec.len())
            .map(|k| {
                rec[k]
                    .parse::<f64>()
                    .map_err(|_| parse_error(path, line, format!("bad number `{}`", &rec[k])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let theta = nums[..d].to_vec();
        let m = Matrix3::from_row_slice(&nums[d..]);
        let p = match kind {
            TransformKind::Affine => TransformParams::affine(theta),
            TransformKind::Homography => {
                let undo = matrix_exp(&(-generator(kind, &theta)?))?;
                TransformParams::homography(theta, m * undo)
            }
        }
        .map_err(|e| parse_error(path, line, e.to_string()))?;
        params.push(p);
    }
    if params.is_empty() {
        return Err(parse_error(path, 1, "no transforms"));
    }
    Ok(params)
}

/// Text header `MCBM-MOM v1 C H W alpha`, then little-endian f64 planes:
/// trimmed mean, trimmed variance, stack count.
pub fn write_moments(path: &Path, m: &PanoramicMoments) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    writeln!(
        out,
        "{MOMENTS_MAGIC} {} {} {} {:?}",
        m.channels, m.height, m.width, m.alpha
    )?;
    for v in m.mu_r.iter().chain(&m.v_r) {
        out.write_all(&v.to_le_bytes())?;
    }
    for &c in &m.count {
        out.write_all(&(c as f64).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_moments(path: &Path) -> Result<PanoramicMoments> {
    require(path)?;
    let mut rdr = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    rdr.read_line(&mut header)?;
    let fields: Vec<&str> = header.trim_end().split(' ').collect();
    if fields.len() != 6 || format!("{} {}", fields[0], fields[1]) != MOMENTS_MAGIC {
        return Err(parse_error(path, 1, "not a moments file"));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_error(path, 1, format!("bad dimension `{s}`")))
    };
    let (channels, height, width) = (dim(fields[2])?, dim(fields[3])?, dim(fields[4])?);
    let alpha: f64 = fields[5]
        .parse()
        .map_err(|_| parse_error(path, 1, format!("bad alpha `{}`", fields[5])))?;
    let n = height * width;
    let mut bytes = Vec::new();
    rdr.read_to_end(&mut bytes)?;
    let expected = (2 * channels * n + n) * 8;
    if bytes.len() != expected {
        return Err(parse_error(
            path,
            2,
            format!("expected {expected} data bytes, found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let (mu_r, rest) = values.split_at(channels * n);
    let (v_r, count) = rest.split_at(channels * n);
    let count = count
        .iter()
        .map(|&c| {
            if c >= 0.0 && c.fract() == 0.0 && c <= u32::MAX as f64 {
                Ok(c as u32)
            } else {
                Err(parse_error(path, 2, format!("bad stack count {c}")))
            }
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(PanoramicMoments {
        channels,
        height,
        width,
        alpha,
        mu_r: mu_r.to_vec(),
        v_r: v_r.to_vec(),
        count,
    })
}

/// Trimmed mean as an image, black where no frame contributed.
pub fn moments_preview(m: &PanoramicMoments) -> Result<Frame> {
    let n = m.pixels();
    Frame::from_fn(m.channels, m.height, m.width, |c, y, x| {
        let i = y * m.width + x;
        if m.count[i] > 0 {
            m.mu_r[c * n + i].clamp(0.0, 1.0)
        } else {
            0.0
        }
    })
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    writeln!(out, "epoch,stage,loss,mean_coverage,dropped_frames")?;
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch,
            e.stage.as_str(),
            float(e.loss),
            float(e.mean_coverage),
            e.dropped_frames
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of `frame, masked_mean_abs_residual, invalid_fraction`. A frame
/// with no valid pixel has an empty residual.
pub fn write_residuals(path: &Path, rows: &[(String, Option<f64>, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    writeln!(out, "frame,masked_mean_abs_residual,invalid_fraction")?;
    for (name, res, inv) in rows {
        let res = res.map(float).unwrap_or_default();
        writeln!(out, "{name},{res},{}", float(*inv))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_roc(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    writeln!(out, "alpha,fpr,tpr")?;
    for p in &roc.points {
        writeln!(out, "{},{},{}", float(p.threshold), float(p.fpr), float(p.tpr))?;
    }
    out.flush()?;
    Ok(())
}

/// `auc_raw,auc_normalized,degenerate`; the normalized AUC is `nan` when
/// one class is empty.
pub fn write_summary(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    writeln!(out, "auc_raw,auc_normalized,degenerate")?;
    writeln!(
        out,
        "{},{},{}",
        float(roc.auc_raw),
        float(roc.auc_normalized),
        roc.degenerate
    )?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::TransformKind;

    #[test]
    fn transforms_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let a = vec![
            TransformParams::affine(vec![0.01, -0.2, 3.5, 0.1, 0.02, -7.25]).unwrap(),
            TransformParams::identity(TransformKind::Affine),
        ];
        write_transforms(&path, &a).unwrap();
        assert_eq!(read_transforms(&path).unwrap(), a);

        let h: Vec<TransformParams> = a
            .iter()
            .map(|p| {
                let mut q = p.to_homography().unwrap();
                q.theta = vec![1e-3, -2e-3, 0.5, 3e-3, 1e-3, -0.25, 1e-5, -2e-5];
                q
            })
            .collect();
        write_transforms(&path, &h).unwrap();
        let back = read_transforms(&path).unwrap();
        for (p, q) in h.iter().zip(&back) {
            assert_eq!(p.theta, q.theta);
            let (mp, mq) = (realize_or_panic(p), realize_or_panic(q));
            assert!((mp - mq).abs().max() < 1e-12);
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame_index,kind,theta_0,"));
        assert_eq!(text.lines().next().unwrap().split(',').count(), 19);
    }

    fn realize_or_panic(p: &TransformParams) -> Matrix3 {
        transform::realize(p).unwrap()
    }

    #[test]
    fn transforms_reject_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "frame_index,kind,theta_0\n0,affine,1\n").unwrap();
        assert!(matches!(read_transforms(&path), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            read_transforms(&dir.path().join("none.csv")),
            Err(Error::MissingPath(_))
        ));
    }

    #[test]
    fn moments_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = PanoramicMoments {
            channels: 2,
            height: 2,
            width: 3,
            alpha: 0.3,
            mu_r: (0..12).map(|i| i as f64 / 7.0).collect(),
            v_r: (0..12).map(|i| (i as f64).sqrt() / 100.0).collect(),
            count: vec![0, 1, 2, 3, 40, 5],
        };
        write_moments(&path, &m).unwrap();
        assert_eq!(read_moments(&path).unwrap(), m);
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"MCBM-MOM v1 2 2 3 0.3\n"));
        assert_eq!(bytes.len(), "MCBM-MOM v1 2 2 3 0.3\n".len() + (12 + 12 + 6) * 8);
    }

    #[test]
    fn frames_and_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(1, 5, 7, |_, y, x| ((y * 7 + x) * 7) as f64 / 255.0).unwrap();
        write_frame(&dir.path().join("a.png"), &f).unwrap();
        let rgb = Frame::from_fn(3, 4, 3, |c, y, x| ((c * 50 + y * 10 + x) as f64) / 255.0).unwrap();
        write_frame(&dir.path().join("b.ppm"), &rgb).unwrap();
        let back = read_frame(&dir.path().join("a.png")).unwrap();
        assert!(back.data().iter().zip(f.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(read_frame(&dir.path().join("b.ppm")).unwrap().dims(), (3, 4, 3));

        let a = Annotation::new(2, 3, vec![true, false, false, false, true, true]).unwrap();
        write_mask(&dir.path().join("m.png"), &a).unwrap();
        assert_eq!(read_mask(&dir.path().join("m.png")).unwrap(), a);

        let names = list_images(dir.path()).unwrap();
        assert_eq!(names.iter().map(|p| file_name(p)).collect::<Vec<_>>(), ["a.png", "b.ppm", "m.png"]);
    }
}
