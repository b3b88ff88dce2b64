//! `performancenet` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "performancenet", version, about = "Score-to-audio synthesis")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Instrument {
    Cello,
    Violin,
    Flute,
    Toy,
}

impl Instrument {
    pub fn name(self) -> &'static str {
        match self {
            Instrument::Cello => "cello",
            Instrument::Violin => "violin",
            Instrument::Flute => "flute",
            Instrument::Toy => "toy",
        }
    }

    /// Chunk overlap in seconds used when `--overlap-s` is absent.
    pub fn default_overlap(self) -> f64 {
        match self {
            Instrument::Cello => 4.0,
            Instrument::Violin => 4.5,
            Instrument::Flute => 4.75,
            Instrument::Toy => 4.0,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut aligned MIDI/WAV pairs into training chunks.
    Prepare {
        #[arg(long)]
        midi_dir: PathBuf,
        #[arg(long)]
        audio_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        instrument: Instrument,
        #[arg(long)]
        overlap_s: Option<f64>,
        /// Fraction of source clips held out for validation.
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
    },
    /// Render random melodies with the additive toy instrument.
    SynthToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_clips: usize,
        #[arg(long)]
        clip_s: f64,
        #[arg(long, default_value_t = 8)]
        harmonics: usize,
    },
    /// Train a model on a prepared dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        lr: f64,
        /// Weight of the auxiliary ContourNet loss.
        #[arg(long = "lambda", default_value_t = 0.0)]
        lambda: f64,
        /// Use the reduced-width network.
        #[arg(long)]
        reduced: bool,
        #[arg(long, default_value_t = 1)]
        checkpoint_every: usize,
    },
    /// Synthesize audio for a MIDI score.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        midi: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        griffinlim_iters: usize,
        /// Also store the predicted magnitude spectrogram of every chunk.
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
    /// Invert a stored magnitude spectrogram with Griffin-Lim.
    Griffinlim {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iters: usize,
    },
    /// Compare an estimate against reference audio.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// MIDI score whose pianoroll the estimate's pitch is checked against.
        #[arg(long)]
        roll: Option<PathBuf>,
        /// Print the column names before the values.
        #[arg(long)]
        header: bool,
    },
    /// List the parameters stored in a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Prepare {
            midi_dir,
            audio_dir,
            out,
            instrument,
            overlap_s,
            val_fraction,
        } => commands::prepare(&commands::PrepareArgs {
            midi_dir,
            audio_dir,
            out,
            instrument,
            overlap_s: overlap_s.unwrap_or(instrument.default_overlap()),
            val_fraction,
            seed,
        }),
        Command::SynthToy {
            out,
            num_clips,
            clip_s,
            harmonics,
        } => commands::synth_toy(&out, num_clips, clip_s, harmonics, seed),
        Command::Train {
            data,
            out,
            epochs,
            batch,
            lr,
            lambda,
            reduced,
            checkpoint_every,
        } => commands::train(&commands::TrainArgs {
            data,
            out,
            epochs,
            batch,
            lr,
            lambda,
            reduced,
            checkpoint_every,
            seed,
        }),
        Command::Generate {
            checkpoint,
            midi,
            out,
            griffinlim_iters,
            spec_out,
        } => commands::generate(&checkpoint, &midi, &out, griffinlim_iters, spec_out.as_deref(), seed),
        Command::Griffinlim { spec, out, iters } => commands::griffinlim(&spec, &out, iters, seed),
        Command::Eval {
            reference,
            est,
            roll,
            header,
        } => commands::eval(&reference, &est, roll.as_deref(), header),
        Command::Inspect { checkpoint } => commands::inspect(&checkpoint),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
