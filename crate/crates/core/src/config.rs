//! Pipeline configuration: defaults, `key = value` files, and overrides.

use std::fmt::Write as _;
use std::path::Path;

use crate::background::NovelConfig;
use crate::ja::JaConfig;
use crate::transform::TransformKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kind: TransformKind,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub s: f64,
    pub pad: f64,
    pub batch_size: usize,
    pub epochs_affine: usize,
    pub epochs_homography: usize,
    pub step_size: f64,
    pub n_thresholds: usize,
    pub seed: u64,
    pub coverage_floor: f64,
    pub accumulate: bool,
    pub accumulate_post_step: bool,
    pub mask_weighted_moments: bool,
    /// Write the target mean every this many epochs; 0 disables snapshots.
    pub snapshot_every: usize,
    pub novel_iterations: usize,
    pub serial: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kind: TransformKind::Homography,
            lambda: 0.9,
            beta: 0.35,
            alpha: 0.3,
            s: 0.05,
            pad: 3.0,
            batch_size: 8,
            epochs_affine: 200,
            epochs_homography: 100,
            step_size: 0.05,
            n_thresholds: 100,
            seed: 0,
            coverage_floor: 0.01,
            accumulate: true,
            accumulate_post_step: false,
            mask_weighted_moments: false,
            snapshot_every: 0,
            novel_iterations: 150,
            serial: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "kind",
    "lambda",
    "beta",
    "alpha",
    "s",
    "pad",
    "batch_size",
    "epochs_affine",
    "epochs_homography",
    "step_size",
    "n_thresholds",
    "seed",
    "coverage_floor",
    "accumulate",
    "accumulate_post_step",
    "mask_weighted_moments",
    "snapshot_every",
    "novel_iterations",
    "serial",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::argument(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::argument(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "kind" => self.kind = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "s" => self.s = parse(key, value)?,
            "pad" => self.pad = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs_affine" => self.epochs_affine = parse(key, value)?,
            "epochs_homography" => self.epochs_homography = parse(key, value)?,
            "step_size" => self.step_size = parse(key, value)?,
            "n_thresholds" => self.n_thresholds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "coverage_floor" => self.coverage_floor = parse(key, value)?,
            "accumulate" => self.accumulate = parse_bool(key, value)?,
            "accumulate_post_step" => self.accumulate_post_step = parse_bool(key, value)?,
            "mask_weighted_moments" => self.mask_weighted_moments = parse_bool(key, value)?,
            "snapshot_every" => self.snapshot_every = parse(key, value)?,
            "novel_iterations" => self.novel_iterations = parse(key, value)?,
            "serial" => self.serial = parse_bool(key, value)?,
            other => return Err(Error::argument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: source.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every key, one `key = value` line each. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind = {}", self.kind);
        let _ = writeln!(out, "lambda = {:?}", self.lambda);
        let _ = writeln!(out, "beta = {:?}", self.beta);
        let _ = writeln!(out, "alpha = {:?}", self.alpha);
        let _ = writeln!(out, "s = {:?}", self.s);
        let _ = writeln!(out, "pad = {:?}", self.pad);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "epochs_affine = {}", self.epochs_affine);
        let _ = writeln!(out, "epochs_homography = {}", self.epochs_homography);
        let _ = writeln!(out, "step_size = {:?}", self.step_size);
        let _ = writeln!(out, "n_thresholds = {}", self.n_thresholds);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "coverage_floor = {:?}", self.coverage_floor);
        let _ = writeln!(out, "accumulate = {}", self.accumulate);
        let _ = writeln!(out, "accumulate_post_step = {}", self.accumulate_post_step);
        let _ = writeln!(out, "mask_weighted_moments = {}", self.mask_weighted_moments);
        let _ = writeln!(out, "snapshot_every = {}", self.snapshot_every);
        let _ = writeln!(out, "novel_iterations = {}", self.novel_iterations);
        let _ = writeln!(out, "serial = {}", self.serial);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.ja().validate()?;
        crate::robust::RobustConfig::new(self.beta, self.s)?;
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(Error::argument("alpha must be in [0, 0.5)"));
        }
        if !(self.pad >= 1.0) {
            return Err(Error::argument("pad must be >= 1"));
        }
        if self.n_thresholds < 2 {
            return Err(Error::argument("n_thresholds must be at least 2"));
        }
        Ok(())
    }

    pub fn ja(&self) -> JaConfig {
        JaConfig {
            batch_size: self.batch_size,
            epochs_affine: self.epochs_affine,
            epochs_homography: match self.kind {
                TransformKind::Affine => 0,
                TransformKind::Homography => self.epochs_homography,
            },
            step_size: self.step_size,
            beta: self.beta,
            lambda: self.lambda,
            coverage_floor: self.coverage_floor,
            pad: self.pad,
            seed: self.seed,
            accumulate: self.accumulate,
            accumulate_post_step: self.accumulate_post_step,
            serial: self.serial,
        }
    }

    pub fn novel(&self) -> NovelConfig {
        NovelConfig {
            kind: self.kind,
            beta: self.beta,
            coverage_floor: self.coverage_floor,
            step_size: self.step_size,
            iterations: self.novel_iterations,
            homography_iterations: self.novel_iterations,
            serial: self.serial,
        }
    }
}
