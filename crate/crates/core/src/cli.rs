//! Command-line front end.
//!
//! Every command reads and validates all of its inputs and computes its
//! results before the first output file is written. Exit codes: 0 success,
//! 2 argument or configuration error, 3 input-data or I/O error, 4 numerical
//! divergence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::event_model::{parse_events, write_events, EventFormat, EventStream};
use crate::imageops::{warp_events, Modality, View};
use crate::io::{
    colorize, csv_table, read_file, read_mask_png, read_pfm, read_png, write_file, write_mask_png,
    write_pfm, write_png, write_rgb_png,
};
use crate::losses::{loss_landscape, LandscapeLoss, LossReport};
use crate::metrics::{evaluate, EvalResult};
use crate::reconstruct::integrate_events;
use crate::scenes::simulate_pair;
use crate::stereo::{refine_self_supervised, stereo_match, MatchInput, StopReason};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "evstereo",
    version,
    about = "Stereo matching between an intensity camera and an event camera",
    after_help = "Configuration values can be overridden with --section.key=value \
                  (e.g. --match.d_max=16), plus --seed=N and --out_dir=PATH."
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a stereo scene, simulate both event cameras and write ground truth.
    Simulate,
    /// Reconstruct the event view, match it against the intensity view and refine.
    Match(MatchArgs),
    /// Score a disparity map against ground truth.
    Eval(EvalArgs),
    /// Move right-camera events into the left view along a disparity map.
    WarpEvents(WarpArgs),
    /// Evaluate a similarity measure over a grid of image shifts.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Left intensity image (PNG).
    #[arg(long)]
    left: PathBuf,
    /// Right-camera events.
    #[arg(long)]
    events: PathBuf,
    /// Event file encoding; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<EventFormat>,
    /// Left-view ground truth (PFM); prints the end-point error when given.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Pixels to score (white) when reporting against --gt.
    #[arg(long, requires = "gt")]
    valid: Option<PathBuf>,
    /// Drop the cross-consistency and internal disparity terms.
    #[arg(long)]
    no_general_losses: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Estimated left-view disparity (PFM).
    #[arg(long)]
    disparity: PathBuf,
    /// Ground-truth disparity (PFM).
    #[arg(long)]
    gt: PathBuf,
    /// Pixels to exclude (white).
    #[arg(long, conflicts_with = "valid")]
    mask: Option<PathBuf>,
    /// Pixels to score (white); the complement of --mask.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Also write the JSON record here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WarpArgs {
    /// Right-camera events.
    #[arg(long)]
    events: PathBuf,
    /// Right-view disparity (PFM).
    #[arg(long)]
    disparity: PathBuf,
    #[arg(long)]
    format: Option<EventFormat>,
    /// Destination event file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct LandscapeArgs {
    #[arg(long)]
    left: PathBuf,
    /// Right image, already warped into the left view.
    #[arg(long)]
    right: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_shift: usize,
    /// l1_pixel, l1_gradient, ssim_image or ssim_gradient.
    #[arg(long, default_value = "ssim_gradient")]
    loss: LandscapeLoss,
}

/// Splits `--section.key=value`, `--seed=N` and `--out_dir=P` overrides
/// from the arguments clap should see.
fn split_overrides(argv: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in argv {
        let parsed = arg.strip_prefix("--").and_then(|body| body.split_once('='));
        match parsed {
            Some((key, value)) if key.contains('.') || key == "seed" || key == "out_dir" => {
                overrides.push((key.to_string(), value.to_string()))
            }
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => EXIT_USAGE,
        _ => EXIT_INPUT,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let (argv, overrides) = split_overrides(argv);
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result =
        RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| match &cli.command {
            Command::Simulate => cmd_simulate(&cfg),
            Command::Match(a) => cmd_match(&cfg, a),
            Command::Eval(a) => cmd_eval(a),
            Command::WarpEvents(a) => cmd_warp_events(a),
            Command::Landscape(a) => cmd_landscape(&cfg, a),
        });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn event_format(path: &Path, explicit: Option<EventFormat>) -> EventFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => EventFormat::BinaryLe,
        _ => EventFormat::TextCsv,
    })
}

fn read_events(path: &Path, format: Option<EventFormat>) -> Result<EventStream> {
    parse_events(&read_file(path)?, event_format(path, format)).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let pair = simulate_pair(&cfg.scene, &cfg.sim, &cfg.recon)?;
    let gt = &pair.sequence.gt;
    let right_frame = pair
        .sequence
        .right_frames
        .last()
        .expect("at least two frames");
    let dir = &cfg.out_dir;
    prepare_dir(dir)?;
    write_png(&dir.join("left.png"), &pair.left)?;
    write_png(&dir.join("right.png"), right_frame)?;
    write_png(&dir.join("reconstruction_right.png"), &pair.right)?;
    write_file(
        &dir.join("events_left.csv"),
        &write_events(&pair.events_left, EventFormat::TextCsv),
    )?;
    write_file(
        &dir.join("events_right.csv"),
        &write_events(&pair.events_right, EventFormat::TextCsv),
    )?;
    write_pfm(&dir.join("gt_disparity.pfm"), &gt.left)?;
    write_pfm(&dir.join("gt_disparity_right.pfm"), &gt.right)?;
    write_mask_png(&dir.join("visibility.png"), &gt.occluded.invert())?;
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    println!(
        "simulated {} frames: {} left events, {} right events -> {}",
        pair.sequence.timestamps.len(),
        pair.events_left.len(),
        pair.events_right.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

fn trace_csv(trace: &[LossReport]) -> String {
    csv_table(
        &["iteration", "total", "gd", "sm", "cc", "itn"],
        trace.iter().enumerate().map(|(i, r)| {
            vec![
                i.to_string(),
                r.total.to_string(),
                r.gd.to_string(),
                r.sm.to_string(),
                r.cc.to_string(),
                r.itn.to_string(),
            ]
        }),
    )
}

fn cmd_match(cfg: &RunConfig, a: &MatchArgs) -> Result<i32> {
    let left = read_png(&a.left, Modality::Intensity)?;
    let events = read_events(&a.events, a.format)?;
    if (events.width(), events.height()) != left.shape() {
        return Err(Error::InputData(format!(
            "event sensor is {}x{} but the image is {}x{}",
            events.width(),
            events.height(),
            left.width(),
            left.height()
        )));
    }
    let gt =
        a.gt.as_deref()
            .map(|p| read_pfm(p, View::Left))
            .transpose()?;
    let valid = a.valid.as_deref().map(read_mask_png).transpose()?;
    let p = &cfg.matching;
    if p.d_max >= left.width() {
        return Err(Error::Config(format!(
            "match.d_max {} must be below the image width",
            p.d_max
        )));
    }
    let weights = if a.no_general_losses {
        cfg.weights.clone().without_general_losses()
    } else {
        cfg.weights.clone()
    };

    let right = integrate_events(&events, &cfg.recon)?;
    let init = stereo_match(MatchInput::Image(&left), MatchInput::Image(&right), p)?;
    let refined = refine_self_supervised(&init.left, &init.right, &left, &right, &weights, p)?;
    let score = match &gt {
        Some(gt) => {
            let excluded = match &valid {
                Some(v) => v.invert(),
                None => crate::imageops::Mask::filled(gt.width(), gt.height(), false),
            };
            Some(evaluate(&refined.left, gt, &excluded)?)
        }
        None => None,
    };

    let dir = &cfg.out_dir;
    prepare_dir(dir)?;
    let (w, h) = left.shape();
    write_pfm(&dir.join("dl.pfm"), &refined.left)?;
    write_pfm(&dir.join("dr.pfm"), &refined.right)?;
    write_mask_png(&dir.join("occlusion.png"), &refined.occlusion_left)?;
    write_png(&dir.join("reconstruction.png"), &right)?;
    let d_max = p.d_max as f64;
    write_rgb_png(
        &dir.join("dl_preview.png"),
        w,
        h,
        &colorize(refined.left.data(), 0.0, d_max),
    )?;
    write_rgb_png(
        &dir.join("dr_preview.png"),
        w,
        h,
        &colorize(refined.right.data(), 0.0, d_max),
    )?;
    write_file(&dir.join("trace.csv"), trace_csv(&refined.trace).as_bytes())?;

    let last = refined.trace.last().expect("trace holds the initial state");
    println!(
        "refined {} iterations ({:?}), loss {:.6} -> {:.6}",
        refined.trace.len() - 1,
        refined.stop,
        refined.trace[0].total,
        last.total
    );
    if let Some(s) = score {
        println!(
            "EPE {:.4} px, >1px {:.4}, >3px {:.4} over {} pixels",
            s.epe, s.bad1, s.bad3, s.valid_count
        );
    }
    if refined.stop == StopReason::Diverged {
        eprintln!("warning: refinement diverged; outputs hold the last iterate");
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let d = read_pfm(&a.disparity, View::Left)?;
    let gt = read_pfm(&a.gt, View::Left)?;
    let excluded = match (&a.mask, &a.valid) {
        (Some(m), _) => read_mask_png(m)?,
        (None, Some(v)) => read_mask_png(v)?.invert(),
        (None, None) => crate::imageops::Mask::filled(gt.width(), gt.height(), false),
    };
    if d.shape() != gt.shape() || excluded.shape() != gt.shape() {
        return Err(Error::InputData(format!(
            "shapes differ: disparity {:?}, ground truth {:?}, mask {:?}",
            d.shape(),
            gt.shape(),
            excluded.shape()
        )));
    }
    let result: EvalResult = evaluate(&d, &gt, &excluded)?;
    let json = serde_json::to_string_pretty(&result).expect("plain record");
    if let Some(path) = &a.output {
        write_file(path, format!("{json}\n").as_bytes())?;
    }
    eprintln!("{result}");
    println!("{json}");
    Ok(EXIT_OK)
}

fn cmd_warp_events(a: &WarpArgs) -> Result<i32> {
    let events = read_events(&a.events, a.format)?;
    let disp = read_pfm(&a.disparity, View::Right)?;
    if disp.shape() != (events.width(), events.height()) {
        return Err(Error::InputData(format!(
            "disparity is {:?} but the event sensor is {}x{}",
            disp.shape(),
            events.width(),
            events.height()
        )));
    }
    let warped = warp_events(&events, &disp)?;
    let format = event_format(&a.output, a.format);
    write_file(&a.output, &write_events(&warped, format))?;
    println!(
        "warped {} events, dropped {}",
        warped.len(),
        events.len() - warped.len()
    );
    Ok(EXIT_OK)
}

fn cmd_landscape(cfg: &RunConfig, a: &LandscapeArgs) -> Result<i32> {
    let left = read_png(&a.left, Modality::Intensity)?;
    let right = read_png(&a.right, Modality::Reconstruction)?;
    let land = loss_landscape(&left, &right, a.max_shift, a.loss, &cfg.weights)?;
    let m = a.max_shift as i64;
    let mut header = vec!["dy\\dx".to_string()];
    header.extend((-m..=m).map(|dx| dx.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = csv_table(
        &header,
        (-m..=m).map(|dy| {
            std::iter::once(dy.to_string())
                .chain((-m..=m).map(|dx| land.at(dx, dy).to_string()))
                .collect()
        }),
    );
    let (lo, hi) = land
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let side = land.side();
    let dir = &cfg.out_dir;
    prepare_dir(dir)?;
    write_file(&dir.join("landscape.csv"), csv.as_bytes())?;
    write_rgb_png(
        &dir.join("landscape.png"),
        side,
        side,
        &colorize(&land.values, lo, hi),
    )?;
    let (dx, dy) = land.argmin();
    println!(
        "argmin dx={dx} dy={dy} (normalized margin {:.4})",
        land.normalized_margin()
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_from_flags() {
        let argv = [
            "evstereo",
            "match",
            "--left=a.png",
            "--match.d_max=16",
            "--seed=3",
            "--out_dir=x",
        ]
        .map(String::from)
        .to_vec();
        let (rest, ov) = split_overrides(argv);
        assert_eq!(rest, ["evstereo", "match", "--left=a.png"]);
        assert_eq!(ov.len(), 3);
        assert_eq!(ov[0], ("match.d_max".to_string(), "16".to_string()));
    }

    #[test]
    fn usage_errors_exit_with_2() {
        assert_eq!(
            run(vec!["evstereo".into(), "frobnicate".into()]),
            EXIT_USAGE
        );
        assert_eq!(
            run(vec![
                "evstereo".into(),
                "simulate".into(),
                "--match.patch=4".into()
            ]),
            EXIT_USAGE
        );
    }
}
