//! Command-line surface: presets, config resolution, run manifests and the
//! three pipeline commands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::codec::{decode, sample_slots, DecodeReport, ThresholdMode};
use crate::engine::{Engine, Mode};
use crate::error::{Error, Result};
use crate::experiments::{
    photograph, run_fig2b_on, AcquisitionParams, Fig2bConfig, PhaseCycle, PhotographyConfig,
};
use crate::waveform::{bits_to_harmonics, centered_f_start, synthesize, BitImage, HarmonicSet};

pub const FORMAT_VERSION: u32 = 1;
/// Exit status of a self-check photograph run that decoded with bit errors.
pub const EXIT_BIT_ERRORS: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-scale 32×32 pulse program, synthesis only.
    PaperEcho,
    /// 4×4 image on an 8-spin cluster, full pipeline.
    #[value(name = "desk-4x4")]
    #[serde(rename = "desk-4x4")]
    Desk4x4,
    /// Second-pulse duration sweep.
    Fig2b,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperEcho => "paper-echo",
            Preset::Desk4x4 => "desk-4x4",
            Preset::Fig2b => "fig2b",
        }
    }
}

/// Pulse-1 synthesis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_hz: f64,
    #[serde(default)]
    pub f_start_hz: Option<f64>,
    pub amp_hz: f64,
    pub duration_s: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Randomize harmonic phases from `seed` to lower the crest factor.
    #[serde(default)]
    pub random_phases: bool,
}

impl SynthConfig {
    pub fn paper_echo() -> Self {
        SynthConfig {
            rows: 32,
            cols: 32,
            spacing_hz: 20.0,
            f_start_hz: None,
            amp_hz: 1.2,
            duration_s: 1.0,
            n_steps: 51200,
            seed: 0,
            random_phases: false,
        }
    }

    pub fn desk_4x4() -> Self {
        let p = desk_4x4_photography();
        SynthConfig {
            rows: 4,
            cols: 4,
            spacing_hz: p.spacing_hz,
            f_start_hz: p.f_start_hz,
            amp_hz: p.amp1_hz,
            duration_s: p.dur1_s,
            n_steps: p.steps1,
            seed: p.seed,
            random_phases: false,
        }
    }

    pub fn harmonics(&self, img: &BitImage) -> Result<HarmonicSet> {
        let f0 = self
            .f_start_hz
            .unwrap_or_else(|| centered_f_start(img.rows(), img.cols(), self.spacing_hz));
        let hs = bits_to_harmonics(img, f0, self.spacing_hz, self.amp_hz)?;
        Ok(if self.random_phases {
            hs.with_random_phases(self.seed)
        } else {
            hs
        })
    }
}

/// Photography run: experiment plus decoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotographRun {
    pub photography: PhotographyConfig,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdMode,
}

fn default_threshold() -> ThresholdMode {
    ThresholdMode::Otsu
}

pub fn desk_4x4_photography() -> PhotographyConfig {
    PhotographyConfig {
        seed: 27,
        n_spins: 8,
        coupling_bound_hz: 792.0,
        spacing_hz: 40.0,
        f_start_hz: Some(100.0),
        amp1_hz: 4.8,
        dur1_s: 0.25,
        steps1: 2560,
        amp2_hz: 18.0,
        dur2_s: 0.025,
        steps2: 256,
        acquisition: AcquisitionParams::default(),
        cycle: PhaseCycle::locked_difference(),
        mode: Mode::Split,
    }
}

/// 4×4 test pattern used when no image is given.
pub fn demo_image_4x4() -> BitImage {
    BitImage::from_rows(&[&[1, 0, 1, 1], &[0, 1, 0, 0], &[1, 1, 0, 1], &[0, 0, 1, 0]])
        .expect("static image")
}

/// Ring-and-bar pattern for the full-size program.
pub fn demo_image(rows: usize, cols: usize) -> Result<BitImage> {
    let mut img = BitImage::zeros(rows, cols)?;
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let radius = 0.35 * rows.min(cols) as f64;
    for r in 0..rows {
        for c in 0..cols {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            img.set(r, c, (d - radius).abs() < 1.5 || (c as f64 - cx).abs() < 1.0);
        }
    }
    Ok(img)
}

/// Deep-merges `patch` into `base`; objects merge key by key, anything else replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Preset values overlaid with an optional (possibly partial) JSON config file.
pub fn resolve<T: Serialize + for<'de> Deserialize<'de>>(base: &T, config: Option<&Path>) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(path) = config {
        let patch: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if !patch.is_object() {
            return Err(Error::validation("config file must hold a JSON object"));
        }
        merge_json(&mut value, patch);
    }
    Ok(serde_json::from_value(value)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub manifest: u32,
    pub waveform: u32,
    pub spectrum: u32,
    pub stack_index: u32,
    pub decode_report: u32,
    pub pbm: String,
}

impl Default for FormatVersions {
    fn default() -> Self {
        FormatVersions {
            manifest: FORMAT_VERSION,
            waveform: FORMAT_VERSION,
            spectrum: FORMAT_VERSION,
            stack_index: FORMAT_VERSION,
            decode_report: FORMAT_VERSION,
            pbm: "P1".into(),
        }
    }
}

/// Record of one run; contains nothing time- or host-dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub preset: String,
    pub seed: u64,
    pub mode: Mode,
    pub config_sha256: String,
    pub config: Value,
    pub formats: FormatVersions,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn new<T: Serialize>(command: &str, preset: Preset, seed: u64, mode: Mode, config: &T) -> Result<Self> {
        let text = serde_json::to_string(config)?;
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            preset: preset.name().into(),
            seed,
            mode,
            config_sha256: sha256_hex(text.as_bytes()),
            config: serde_json::to_value(config)?,
            formats: FormatVersions::default(),
            outputs: Vec::new(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "spinphoto", version, about = "Spin-cluster photography simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config overlaid on the preset; may be partial.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<CliMode>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CliMode {
    Exact,
    Split,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Exact => Mode::Exact,
            CliMode::Split => Mode::Split,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Program a bit image into a pulse-1 waveform.
    Synth {
        /// Plain PBM image; a built-in pattern is used when absent.
        image: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the second-pulse duration and record the signed line amplitude.
    Fig2b {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Store an image, read it back row by row and decode it.
    Photograph {
        image: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn out_dir(common: &CommonArgs) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn load_image(path: Option<&Path>, default: impl FnOnce() -> Result<BitImage>) -> Result<BitImage> {
    match path {
        Some(p) => BitImage::load_pbm(p),
        None => default(),
    }
}

pub fn cmd_synth(image: Option<&Path>, common: &CommonArgs) -> Result<Manifest> {
    let preset = common.preset.unwrap_or(Preset::PaperEcho);
    let base = match preset {
        Preset::PaperEcho => SynthConfig::paper_echo(),
        Preset::Desk4x4 => SynthConfig::desk_4x4(),
        Preset::Fig2b => return Err(Error::validation("preset fig2b has no synthesis stage")),
    };
    let mut cfg = resolve(&base, common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let img = load_image(image, || match preset {
        Preset::Desk4x4 => Ok(demo_image_4x4()),
        _ => demo_image(cfg.rows, cfg.cols),
    })?;
    cfg.rows = img.rows();
    cfg.cols = img.cols();
    let hs = cfg.harmonics(&img)?;
    if hs.total_amplitude() == 0.0 {
        warn!("image has no set bits; the waveform is identically zero");
    }
    let wf = synthesize(&hs, cfg.duration_s, cfg.n_steps)?;
    let dir = out_dir(common)?;
    img.save_pbm(dir.join("image.pbm"))?;
    std::fs::write(dir.join("harmonics.json"), serde_json::to_string_pretty(&hs)? + "\n")?;
    wf.save(dir, "pulse1")?;
    info!("synthesized {} harmonics into {} steps", hs.len(), wf.n_steps);
    let mode = common.mode.map_or(Mode::Split, Mode::from);
    let mut m = Manifest::new("synth", preset, cfg.seed, mode, &cfg)?;
    m.outputs = ["image.pbm", "harmonics.json", "pulse1.csv", "pulse1.json"]
        .map(String::from)
        .to_vec();
    m.save(dir)?;
    Ok(m)
}

pub fn cmd_fig2b(common: &CommonArgs) -> Result<Manifest> {
    let preset = common.preset.unwrap_or(Preset::Fig2b);
    if preset != Preset::Fig2b {
        return Err(Error::validation(format!("preset {} does not define a sweep", preset.name())));
    }
    let mut cfg = resolve(&Fig2bConfig::default(), common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = m.into();
    }
    let eng = Engine::new(&cfg.system()?)?;
    let res = run_fig2b_on(&eng, &cfg)?;
    let dir = out_dir(common)?;
    let spectra = dir.join("spectra");
    std::fs::create_dir_all(&spectra)?;
    let mut outputs = vec!["summary.csv".to_string()];
    for (k, s) in res.spectra.iter().enumerate() {
        let stem = format!("dur_{k:02}");
        s.save(&spectra, &stem)?;
        outputs.push(format!("spectra/{stem}.csv"));
        outputs.push(format!("spectra/{stem}.json"));
    }
    std::fs::write(dir.join("summary.csv"), res.summary_csv())?;
    info!(
        "sign flips: {}, amplification: {:.3}",
        res.sign_flips(),
        res.amplification()
    );
    let mut m = Manifest::new("fig2b", preset, cfg.seed, cfg.mode, &cfg)?;
    m.outputs = outputs;
    m.save(dir)?;
    Ok(m)
}

/// Runs the photography pipeline; the returned report carries bit errors
/// against the input image.
pub fn cmd_photograph(image: Option<&Path>, common: &CommonArgs) -> Result<(Manifest, DecodeReport)> {
    let preset = common.preset.unwrap_or(Preset::Desk4x4);
    if preset != Preset::Desk4x4 {
        return Err(Error::validation(format!(
            "preset {} does not define a photography run",
            preset.name()
        )));
    }
    let base = PhotographRun {
        photography: desk_4x4_photography(),
        threshold: ThresholdMode::Otsu,
    };
    let mut run = resolve(&base, common.config.as_deref())?;
    if let Some(s) = common.seed {
        run.photography.seed = s;
    }
    if let Some(m) = common.mode {
        run.photography.mode = m.into();
    }
    let img = load_image(image, || Ok(demo_image_4x4()))?;
    let cfg = &run.photography;
    cfg.validate()?;
    // synthesize both pulse programs before any output is written
    let pulse1 = cfg.pulse1(&img)?;
    let combs = cfg.row_combs(img.rows(), img.cols())?;
    synthesize(&pulse1, cfg.dur1_s, cfg.steps1)?;
    for c in &combs {
        synthesize(c, cfg.dur2_s, cfg.steps2)?;
    }
    let eng = Engine::new(&cfg.system()?)?;
    let stack = photograph(&eng, &pulse1, &combs, cfg)?;
    let table = sample_slots(&stack, cfg.f_start(img.rows(), img.cols()), cfg.spacing_hz, img.rows(), img.cols())?;
    let report = decode(&table, run.threshold)?.with_reference(&img)?;

    let dir = out_dir(common)?;
    img.save_pbm(dir.join("input.pbm"))?;
    stack.save(dir.join("stack"))?;
    report.save(dir)?;
    let mut m = Manifest::new("photograph", preset, cfg.seed, cfg.mode, &run)?;
    m.outputs = ["input.pbm", "stack/index.json", "decode_report.json", "recovered.pbm"]
        .map(String::from)
        .to_vec();
    m.save(dir)?;
    Ok((m, report))
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Synth { image, common } => cmd_synth(image.as_deref(), common).map(|_| 0),
        Command::Fig2b { common } => cmd_fig2b(common).map(|_| 0),
        Command::Photograph { image, common } => {
            let (_, rep) = cmd_photograph(image.as_deref(), common)?;
            let errors = rep.bit_errors.unwrap_or(0);
            println!(
                "bit_errors={errors} margin={:.3} threshold={:.4e}",
                rep.margin, rep.threshold
            );
            Ok(if errors > 0 { EXIT_BIT_ERRORS } else { 0 })
        }
    }
}

fn jobs(cli: &Cli) -> Option<usize> {
    match &cli.command {
        Command::Synth { common, .. } | Command::Fig2b { common } | Command::Photograph { common, .. } => {
            common.jobs
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPINPHOTO_LOG", "warn"))
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs(&cli) {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(p) => p.install(|| dispatch(&cli)),
        Err(e) => Err(Error::validation(format!("thread pool: {e}"))),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overlays_nested_keys() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_json(&mut base, json!({"b": {"d": 4}, "e": [1]}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": [1]}));
    }

    #[test]
    fn partial_config_resolves_against_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"photography": {"amp2_hz": 7.5}, "threshold": {"mode": "fixed", "value": 0.1}}"#).unwrap();
        let base = PhotographRun {
            photography: desk_4x4_photography(),
            threshold: ThresholdMode::Otsu,
        };
        let run = resolve(&base, Some(&path)).unwrap();
        assert_eq!(run.photography.amp2_hz, 7.5);
        assert_eq!(run.photography.steps1, base.photography.steps1);
        assert_eq!(run.threshold, ThresholdMode::Fixed { value: 0.1 });
    }

    #[test]
    fn paper_echo_program_size() {
        let cfg = SynthConfig::paper_echo();
        let img = demo_image(32, 32).unwrap();
        let hs = cfg.harmonics(&img).unwrap();
        assert_eq!(hs.len(), 1024);
        let h = hs.harmonics();
        assert!((h[1023].freq_hz - h[0].freq_hz - 20460.0).abs() < 1e-9);
        assert_eq!(cfg.n_steps, 51200);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn bad_arguments_exit_2() {
        assert_eq!(main_with_args(["spinphoto", "fig2b", "--mode", "fast"]), 2);
        assert_eq!(main_with_args(["spinphoto", "fig2b", "--preset", "desk-4x4", "--out", "/nonexistent/x"]), 2);
    }
}
