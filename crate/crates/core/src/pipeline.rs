//! The command-line stages as library calls: each reads its inputs from
//! disk, runs one module, and writes the files that stage owns.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::background::{estimate_background, masked_mean_abs_residual};
use crate::config::PipelineConfig;
use crate::eval::{evaluate, Annotation, RocCurve};
use crate::ja::{self, AlignmentState};
use crate::moments::{compute_moments_with, PanoramicMoments};
use crate::synth::{synth, textured_panorama, ForegroundSpec, MotionSpec, SynthSpec};
use crate::transform::TransformParams;
use crate::warp::{scene_bounds, Frame, SceneDomain};
use crate::{io, Error, Result};

pub const TRANSFORMS_CSV: &str = "transforms.csv";
pub const EPOCH_LOG_CSV: &str = "epochs.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const MOMENTS_BIN: &str = "moments.bin";
pub const MU_PREVIEW_PNG: &str = "mu_r.png";
pub const BACKGROUND_DIR: &str = "backgrounds";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const ROC_CSV: &str = "roc.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MANIFEST: &str = "manifest.txt";

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

/// Background and annotation images are PNGs named after the frame stem.
pub fn png_name(frame_name: &str) -> String {
    format!("{}.png", stem(frame_name))
}

fn scene_for(frames: &[Frame], cfg: &PipelineConfig) -> Result<SceneDomain> {
    let (_, h, w) = frames
        .first()
        .ok_or_else(|| Error::argument("no frames"))?
        .dims();
    scene_bounds((h, w), cfg.pad)
}

fn check_counts(frames: usize, params: usize) -> Result<()> {
    if frames != params {
        return Err(Error::argument(format!(
            "{frames} frames but {params} transforms"
        )));
    }
    Ok(())
}

/// Joint alignment of in-memory frames; writes the transforms CSV, the
/// epoch log, and target snapshots when enabled.
pub fn align_frames(frames: &[Frame], out: &Path, cfg: &PipelineConfig) -> Result<AlignmentState> {
    cfg.validate()?;
    let snapshot_dir = out.join(SNAPSHOT_DIR);
    let mut snapshot_error: Option<Error> = None;
    let state = ja::fit_with_observer(frames, &cfg.ja(), |log, state| {
        log::info!(
            "epoch {} {} loss {:.6} coverage {:.4} dropped {}",
            log.epoch,
            log.stage.as_str(),
            log.loss,
            log.mean_coverage,
            log.dropped_frames
        );
        if cfg.snapshot_every == 0 || log.epoch % cfg.snapshot_every != 0 || snapshot_error.is_some() {
            return;
        }
        let target = state.acc.mean();
        let scene = state.scene;
        let n = scene.pixels();
        let written = Frame::from_fn(target.channels, scene.height, scene.width, |c, y, x| {
            target.mu[c * n + y * scene.width + x].clamp(0.0, 1.0)
        })
        .and_then(|f| io::write_frame(&snapshot_dir.join(format!("mu_epoch_{:04}.png", log.epoch)), &f));
        if let Err(e) = written {
            snapshot_error = Some(e);
        }
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    io::write_transforms(&out.join(TRANSFORMS_CSV), &state.params)?;
    io::write_epoch_log(&out.join(EPOCH_LOG_CSV), &state.history)?;
    Ok(state)
}

pub fn align(frames_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<AlignmentState> {
    let (_, frames) = io::read_frame_dir(frames_dir)?;
    align_frames(&frames, out, cfg).map_err(|e| e.in_stage("align"))
}

pub fn moments_frames(
    frames: &[Frame],
    params: &[TransformParams],
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<PanoramicMoments> {
    check_counts(frames.len(), params.len())?;
    let scene = scene_for(frames, cfg)?;
    let warps = ja::warp_all(frames, params, &scene, cfg.serial)?;
    let m = compute_moments_with(&warps, cfg.alpha, cfg.mask_weighted_moments)?;
    io::write_moments(&out.join(MOMENTS_BIN), &m)?;
    io::write_frame(&out.join(MU_PREVIEW_PNG), &io::moments_preview(&m)?)?;
    Ok(m)
}

pub fn moments(
    frames_dir: &Path,
    transforms: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<PanoramicMoments> {
    let run = || {
        let (_, frames) = io::read_frame_dir(frames_dir)?;
        let params = io::read_transforms(transforms)?;
        moments_frames(&frames, &params, out, cfg)
    };
    run().map_err(|e| e.in_stage("moments"))
}

/// Per-frame background images and residual rows.
pub fn background_frames(
    names: &[String],
    frames: &[Frame],
    params: &[TransformParams],
    m: &PanoramicMoments,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<Frame>> {
    check_counts(frames.len(), params.len())?;
    let scene = scene_for(frames, cfg)?;
    let dir = out.join(BACKGROUND_DIR);
    let mut rows = Vec::with_capacity(frames.len());
    let mut images = Vec::with_capacity(frames.len());
    for ((name, f), p) in names.iter().zip(frames).zip(params) {
        let bg = estimate_background(f, p, m, &scene)?;
        io::write_frame(&dir.join(png_name(name)), &bg.image)?;
        rows.push((name.clone(), masked_mean_abs_residual(f, &bg), bg.invalid_fraction()));
        images.push(bg.image);
    }
    io::write_residuals(&out.join(RESIDUALS_CSV), &rows)?;
    Ok(images)
}

pub fn background(
    frames_dir: &Path,
    transforms: &Path,
    moments_file: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<Vec<Frame>> {
    let run = || {
        let (names, frames) = io::read_frame_dir(frames_dir)?;
        let params = io::read_transforms(transforms)?;
        let m = io::read_moments(moments_file)?;
        background_frames(&names, &frames, &params, &m, out, cfg)
    };
    run().map_err(|e| e.in_stage("background"))
}

/// Annotation PNG for every frame name; a missing file is an error naming it.
pub fn read_annotations(dir: &Path, names: &[String]) -> Result<Vec<Annotation>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    names.iter().map(|n| io::read_mask(&dir.join(png_name(n)))).collect()
}

pub fn eval_frames(
    frames: &[Frame],
    backgrounds: &[Frame],
    ann: &[Annotation],
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<RocCurve> {
    let roc = evaluate(frames, backgrounds, ann, cfg.n_thresholds)?;
    io::write_roc(&out.join(ROC_CSV), &roc)?;
    io::write_summary(&out.join(SUMMARY_CSV), &roc)?;
    Ok(roc)
}

pub fn eval(
    frames_dir: &Path,
    backgrounds_dir: &Path,
    annotations_dir: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<RocCurve> {
    let run = || {
        let (names, frames) = io::read_frame_dir(frames_dir)?;
        let bg_names: Vec<String> = names.iter().map(|n| png_name(n)).collect();
        let backgrounds = io::read_named_frames(backgrounds_dir, &bg_names)?;
        let ann = read_annotations(annotations_dir, &names)?;
        eval_frames(&frames, &backgrounds, &ann, out, cfg)
    };
    run().map_err(|e| e.in_stage("eval"))
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub spec: SynthSpec,
    pub channels: usize,
    pub panorama_size: usize,
    /// Use this image instead of generated texture.
    pub panorama: Option<PathBuf>,
    pub pad: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            channels: 1,
            panorama_size: 256,
            panorama: None,
            pad: PipelineConfig::default().pad,
        }
    }
}

impl SynthOptions {
    pub fn with_foreground(mut self) -> Self {
        self.spec.foreground = Some(ForegroundSpec::default());
        self
    }

    pub fn still(mut self) -> Self {
        self.spec.motion = MotionSpec::still();
        self
    }
}

/// Writes `frames/`, `clean/`, `annotations/`, `truth.csv` and
/// `panorama.png` under `out`.
pub fn synth_to_dir(opts: &SynthOptions, out: &Path) -> Result<()> {
    let panorama = match &opts.panorama {
        Some(p) => io::read_frame(p)?,
        None => textured_panorama(opts.channels, opts.panorama_size, opts.panorama_size, opts.spec.seed)?,
    };
    let (_, ph, pw) = panorama.dims();
    let (h, w) = (opts.spec.frame_height, opts.spec.frame_width);
    if (ph as f64) < opts.pad * h as f64 || (pw as f64) < opts.pad * w as f64 {
        return Err(Error::argument(format!(
            "panorama {pw}x{ph} is smaller than {} times the {w}x{h} frame",
            opts.pad
        )));
    }
    let data = synth(&panorama, &opts.spec)?;
    for (i, ((f, c), a)) in data.frames.iter().zip(&data.clean).zip(&data.annotations).enumerate() {
        let name = format!("frame_{i:04}.png");
        io::write_frame(&out.join("frames").join(&name), f)?;
        io::write_frame(&out.join("clean").join(&name), c)?;
        io::write_mask(&out.join("annotations").join(&name), a)?;
    }
    io::write_transforms(&out.join("truth.csv"), &data.truth)?;
    io::write_frame(&out.join("panorama.png"), &panorama)?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunTimes {
    pub align: f64,
    pub moments: f64,
    pub background: f64,
    pub eval: Option<f64>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub state: AlignmentState,
    pub moments: PanoramicMoments,
    pub roc: Option<RocCurve>,
    pub times: RunTimes,
}

/// Manifest text. The non-comment lines form a config file that replays
/// the run.
pub fn manifest(cfg: &PipelineConfig, frames_dir: &Path, annotations: Option<&Path>, times: &RunTimes) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# mcbm {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# frames: {}", frames_dir.display());
    if let Some(a) = annotations {
        let _ = writeln!(out, "# annotations: {}", a.display());
    }
    let _ = writeln!(out, "# seed: {}", cfg.seed);
    let _ = write!(
        out,
        "# wall seconds: align {:.3}, moments {:.3}, background {:.3}",
        times.align, times.moments, times.background
    );
    match times.eval {
        Some(t) => {
            let _ = writeln!(out, ", eval {t:.3}");
        }
        None => out.push('\n'),
    }
    let _ = writeln!(
        out,
        "# replay: mcbm run --frames {} --out <dir> --config {MANIFEST}{}",
        frames_dir.display(),
        annotations.map(|a| format!(" --annotations {}", a.display())).unwrap_or_default()
    );
    out.push_str(&cfg.render());
    out
}

/// align, moments, background, and eval when annotations are given, then
/// the manifest.
pub fn run(
    frames_dir: &Path,
    annotations: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    let (names, frames) = io::read_frame_dir(frames_dir).map_err(|e| e.in_stage("input"))?;
    // Fail on missing annotations before spending time on the fit.
    let ann = annotations
        .map(|dir| read_annotations(dir, &names))
        .transpose()
        .map_err(|e| e.in_stage("eval"))?;
    let mut times = RunTimes::default();

    let t = Instant::now();
    let state = align_frames(&frames, out, cfg).map_err(|e| e.in_stage("align"))?;
    times.align = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let m = moments_frames(&frames, &state.params, out, cfg).map_err(|e| e.in_stage("moments"))?;
    times.moments = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let backgrounds = background_frames(&names, &frames, &state.params, &m, out, cfg)
        .map_err(|e| e.in_stage("background"))?;
    times.background = t.elapsed().as_secs_f64();

    let roc = match ann {
        Some(ann) => {
            let t = Instant::now();
            let roc = eval_frames(&frames, &backgrounds, &ann, out, cfg).map_err(|e| e.in_stage("eval"))?;
            times.eval = Some(t.elapsed().as_secs_f64());
            if roc.degenerate {
                log::warn!("evaluation is degenerate: one pixel class is empty");
            }
            Some(roc)
        }
        None => None,
    };

    std::fs::write(out.join(MANIFEST), manifest(cfg, frames_dir, annotations, &times))?;
    Ok(RunOutput {
        state,
        moments: m,
        roc,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn quick() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.epochs_affine = 3;
        cfg.epochs_homography = 2;
        cfg.serial = true;
        cfg
    }

    fn small_synth(dir: &Path, opts: SynthOptions) {
        let mut opts = opts;
        opts.spec.n_frames = 6;
        opts.spec.frame_height = 24;
        opts.spec.frame_width = 24;
        if opts.spec.motion != MotionSpec::still() {
            opts.spec.motion.max_translation = 4.0;
            opts.spec.motion.max_rotation_deg = 2.0;
        }
        opts.panorama_size = 96;
        synth_to_dir(&opts, dir).unwrap();
    }

    #[test]
    fn run_writes_every_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        small_synth(tmp.path(), SynthOptions::default().with_foreground());
        let out = tmp.path().join("out");
        let cfg = PipelineConfig {
            snapshot_every: 2,
            ..quick()
        };
        let r = run(&tmp.path().join("frames"), Some(&tmp.path().join("annotations")), &out, &cfg).unwrap();
        for f in [TRANSFORMS_CSV, EPOCH_LOG_CSV, MOMENTS_BIN, MU_PREVIEW_PNG, RESIDUALS_CSV, ROC_CSV, SUMMARY_CSV, MANIFEST] {
            assert!(out.join(f).is_file(), "{f}");
        }
        assert_eq!(io::list_images(&out.join(BACKGROUND_DIR)).unwrap().len(), 6);
        assert!(out.join(SNAPSHOT_DIR).join("mu_epoch_0002.png").is_file());
        assert_eq!(fs::read_to_string(out.join(EPOCH_LOG_CSV)).unwrap().lines().count(), 1 + 5);
        assert!(r.roc.is_some());

        let replay = PipelineConfig::from_file(&out.join(MANIFEST)).unwrap();
        assert_eq!(replay, cfg);
    }

    #[test]
    fn identical_frames_give_input_backgrounds_and_degenerate_eval() {
        let tmp = tempfile::tempdir().unwrap();
        small_synth(tmp.path(), SynthOptions::default().still());
        let out = tmp.path().join("out");
        let r = run(&tmp.path().join("frames"), Some(&tmp.path().join("annotations")), &out, &quick()).unwrap();
        assert!(r.roc.unwrap().degenerate);
        let (names, frames) = io::read_frame_dir(&tmp.path().join("frames")).unwrap();
        let bgs = io::read_named_frames(
            &out.join(BACKGROUND_DIR),
            &names.iter().map(|n| png_name(n)).collect::<Vec<_>>(),
        )
        .unwrap();
        for (f, b) in frames.iter().zip(&bgs) {
            assert!(f.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1.5 / 255.0));
        }
    }

    #[test]
    fn missing_annotations_name_the_path() {
        let tmp = tempfile::tempdir().unwrap();
        small_synth(tmp.path(), SynthOptions::default());
        fs::remove_file(tmp.path().join("annotations").join("frame_0003.png")).unwrap();
        let err = run(&tmp.path().join("frames"), Some(&tmp.path().join("annotations")), &tmp.path().join("out"), &quick())
            .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("frame_0003.png"), "{err}");
    }

    #[test]
    fn synth_rejects_small_panorama() {
        let tmp = tempfile::tempdir().unwrap();
        let opts = SynthOptions {
            panorama_size: 100,
            ..SynthOptions::default()
        };
        assert_eq!(synth_to_dir(&opts, tmp.path()).unwrap_err().exit_code(), 1);
    }
}
