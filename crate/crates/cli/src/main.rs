//! `ratex`: embed, capture, recover and sweep from the command line.
//!
//! Failures print one JSON line on stderr,
//! `{"error":{"kind":...,"message":...,"field":...}}`, and exit nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ratex_core::calibration::{equalize_with_record, Histogram};
use ratex_core::cdtf::{self, apply_cdtf};
use ratex_core::codec::{
    embed_with, layout_grid, BitMessage, GridLayout, RatexMode, DEFAULT_MARGIN_FRACTION,
};
use ratex_core::harness::{self, ExperimentConfig, HarnessError, DEFAULT_NAIVE_THRESHOLD};
use ratex_core::image::{read_image, write_image};
use ratex_core::recovery::{
    recover_hidden_ratex, recover_naive, recover_oorc, recover_two_step, Method,
};
use ratex_core::svm::TrainOptions;

#[derive(Parser)]
#[command(
    name = "ratex",
    version,
    about = "Hidden camera-display messaging toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an original/embedded frame pair for one message.
    Embed {
        #[arg(long)]
        carrier: PathBuf,
        /// Message bits as hex (MSB first) or `0b`-prefixed binary.
        #[arg(long)]
        bits: String,
        #[arg(long)]
        kappa: f64,
        /// Block grid as ROWSxCOLS.
        #[arg(long, default_value = "8x8", value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long, default_value_t = 5)]
        ratex: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN_FRACTION)]
        margin: f64,
        /// Equalize the carrier and leave out the ratex ramps (hidden-ratex protocol).
        #[arg(long)]
        hidden: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate capturing one displayed frame.
    Capture {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0.0)]
        angle: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode message bits from a captured frame pair.
    Recover {
        /// Captured original and embedded frames, comma separated.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        method: Method,
        /// Expected bits; prints accuracy when given.
        #[arg(long)]
        truth: Option<String>,
        #[arg(long, default_value = "8x8", value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long, default_value_t = 5)]
        ratex: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN_FRACTION)]
        margin: f64,
        /// Decision threshold in gray levels for naive and hidden-ratex.
        /// Defaults to 2.5 for naive and kappa/2 for hidden-ratex.
        #[arg(long)]
        threshold: Option<f64>,
        /// Embedding strength, used for the hidden-ratex default threshold.
        #[arg(long, default_value_t = 5.0)]
        kappa: f64,
        /// Displayed original whose histogram is the known reference for
        /// hidden-ratex. A flat histogram is assumed when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run a sweep from a JSON config and write report.json and report.csv.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a written report as tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

struct Failure {
    kind: &'static str,
    message: String,
    field: Option<String>,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
            field: None,
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            "usage" | "config" => 2,
            _ => 1,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config { ref field, .. } => Self {
                kind: "config",
                field: Some(field.clone()),
                message: e.to_string(),
            },
            other => Self::new("io", other),
        }
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid {s:?} is not ROWSxCOLS"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("grid {s:?}: {e}"))
    };
    Ok((parse(r)?, parse(c)?))
}

fn layout_for(
    path: &Path,
    grid: (usize, usize),
    ratex: usize,
    margin: f64,
) -> Result<(ratex_core::IntensityImage, GridLayout), Failure> {
    let img =
        read_image(path).map_err(|e| Failure::new("image", format!("{}: {e}", path.display())))?;
    let layout = layout_grid(img.width(), img.height(), grid.0, grid.1, ratex, margin)
        .map_err(|e| Failure::new("layout", e))?;
    Ok((img, layout))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Embed {
            carrier,
            bits,
            kappa,
            grid,
            ratex,
            margin,
            hidden,
            out_dir,
        } => {
            let (img, layout) = layout_for(&carrier, grid, ratex, margin)?;
            let msg = BitMessage::parse(&bits, layout.message_len())
                .map_err(|e| Failure::new("bits", e))?;
            let (shown, mode) = if hidden {
                let (eq, _) =
                    equalize_with_record(&img).map_err(|e| Failure::new("calibration", e))?;
                (eq, RatexMode::Hidden)
            } else {
                (img, RatexMode::Visible)
            };
            let pair = embed_with(&shown, &msg, kappa, &layout, mode)
                .map_err(|e| Failure::new("codec", e))?;
            fs::create_dir_all(&out_dir)
                .map_err(|e| Failure::new("io", format!("{}: {e}", out_dir.display())))?;
            for (name, frame) in [
                ("original.pgm", &pair.original),
                ("embedded.pgm", &pair.embedded),
            ] {
                let path = out_dir.join(name);
                write_image(frame, &path)
                    .map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
                println!("{}", path.display());
            }
            if !pair.saturated_blocks.is_empty() {
                eprintln!("warning: saturated blocks {:?}", pair.saturated_blocks);
            }
        }
        Command::Capture {
            input,
            preset,
            angle,
            seed,
            out,
        } => {
            let img = read_image(&input)
                .map_err(|e| Failure::new("image", format!("{}: {e}", input.display())))?;
            let model = cdtf::preset(&preset)
                .map_err(|e| Failure::new("preset", e))?
                .with_angle(angle)
                .with_seed(seed);
            model.validate().map_err(|e| Failure::new("preset", e))?;
            write_image(&apply_cdtf(&img, &model), &out)
                .map_err(|e| Failure::new("io", format!("{}: {e}", out.display())))?;
        }
        Command::Recover {
            pair,
            method,
            truth,
            grid,
            ratex,
            margin,
            threshold,
            kappa,
            reference,
        } => {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| Failure::new("usage", "--pair expects ORIGINAL,EMBEDDED"))?;
            let (original, layout) = layout_for(Path::new(a), grid, ratex, margin)?;
            let (embedded, _) = layout_for(Path::new(b), grid, ratex, margin)?;
            let truth = truth
                .map(|t| BitMessage::parse(&t, layout.message_len()))
                .transpose()
                .map_err(|e| Failure::new("bits", e))?;
            let opts = TrainOptions::default();
            let result = match method {
                Method::Naive => recover_naive(
                    &original,
                    &embedded,
                    &layout,
                    threshold.unwrap_or(DEFAULT_NAIVE_THRESHOLD),
                ),
                Method::TwoStep => recover_two_step(&original, &embedded, &layout, &opts),
                Method::Oorc => recover_oorc(&original, &embedded, &layout, &opts),
                Method::HiddenRatex => {
                    let hist =
                        match reference {
                            Some(p) => Histogram::of(&read_image(&p).map_err(|e| {
                                Failure::new("image", format!("{}: {e}", p.display()))
                            })?),
                            None => Histogram::uniform(),
                        };
                    recover_hidden_ratex(
                        &original,
                        &embedded,
                        &layout,
                        &hist,
                        threshold.unwrap_or(kappa / 2.0),
                    )
                }
            }
            .map_err(|e| Failure::new("recovery", e))?;
            println!("method: {method}");
            println!("bits: {}", result.bits.to_bit_string());
            println!("hex: {}", result.bits.to_hex());
            if let Some(t) = truth {
                let r = result.with_truth(&t);
                println!("accuracy: {:.3}", r.accuracy.unwrap_or(0.0));
            }
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Failure {
                    kind: "config",
                    field: Some("output_dir".into()),
                    message: "no output directory: pass --out or set output_dir".into(),
                })?;
            let report = harness::run_experiment(&cfg)?;
            harness::write_report(&report, &dir)?;
            let (correct, total) = report.pooled(|_| true);
            println!(
                "{} rows, {total} bits ({correct} correct), {} failures, {:.1}s -> {}",
                report.rows.len(),
                report.failures.len(),
                report.runtime_s,
                dir.display()
            );
        }
        Command::Report { input, format } => {
            let report = harness::read_report(&input)?;
            match format {
                Format::Csv => print!("{}", harness::render_csv(&report)),
                Format::Md => print!("{}", harness::render_markdown(&report)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report_failure(&Failure::new("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f);
            ExitCode::from(f.exit_code())
        }
    }
}

fn report_failure(f: &Failure) {
    let mut err = json!({ "kind": f.kind, "message": f.message });
    if let Some(field) = &f.field {
        err["field"] = json!(field);
    }
    eprintln!("{}", json!({ "error": err }));
}
