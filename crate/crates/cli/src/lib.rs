//! The `synth-eval` command line.

pub mod bundled;
pub mod commands;
pub mod responses;
pub mod study_client;

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use synth_eval_core::{Origin, ReportBundle, ReportFormat};

use commands::{FeatureSpec, Options};
use responses::ResponseFile;
use study_client::StudyClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    /// Canonical JSON, full precision.
    Machine,
    /// Markdown tables, rounded for display.
    Md,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Machine => ReportFormat::Machine,
            FormatArg::Md => ReportFormat::Md,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnswerArg {
    Real,
    Synthetic,
}

impl From<AnswerArg> for Origin {
    fn from(a: AnswerArg) -> Self {
        match a {
            AnswerArg::Real => Origin::Real,
            AnswerArg::Synthetic => Origin::Synthetic,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "synth-eval",
    version,
    about = "Evaluation toolkit for synthetic dermoscopic images"
)]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "md")]
    pub format: FormatArg,
    /// Seed for study item sampling and ordering.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat manifest ids without predictions as errors.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Melanoma decision threshold (score >= threshold).
    #[arg(long, global = true, default_value_t = synth_eval_core::classifier_eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fréchet Inception Distance from FVEC feature files.
    ///
    /// One --real and one unlabeled --gen print the decomposition.
    /// Labeled --gen LABEL=PATH sets give one column per label.
    /// --gen ROW@COL=PATH with --real COL=PATH builds a settings x datasets grid.
    Fid {
        #[arg(long = "real", required = true)]
        real: Vec<FeatureSpec>,
        #[arg(long = "gen", required = true)]
        gen: Vec<FeatureSpec>,
        /// Add an FMD row to the per-label table.
        #[arg(long)]
        fmd: bool,
        /// First column header in grid form.
        #[arg(long, default_value = "Setting")]
        row_header: String,
    },
    /// Fréchet Medoid Distance from FVEC feature files.
    Fmd {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
    },
    /// Frozen-classifier confusion matrix and rates.
    Downstream {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Compare two classifiers on one test set.
    Compare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "Real-only")]
        label_a: String,
        #[arg(long, default_value = "Real + Synthetic")]
        label_b: String,
    },
    /// Cohen's kappa between two rater response files.
    Kappa { a: PathBuf, b: PathBuf },
    /// Exact binomial test against chance.
    Binomial {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.5)]
        p0: f64,
        #[arg(long)]
        two_sided: bool,
    },
    /// Blinded rating studies.
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Debug, Args)]
pub struct Remote {
    /// Base URL of a running `study serve`.
    #[arg(long, env = "SYNTH_EVAL_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Serve the study HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = "SYNTH_EVAL_DATA_DIR", default_value = "synth-eval-data")]
        data_dir: PathBuf,
    },
    /// Create a study from a real and a synthetic manifest (needs --seed).
    Create {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        n_per_class: usize,
    },
    /// Open a rater session.
    OpenSession {
        #[command(flatten)]
        remote: Remote,
        study_id: String,
        #[arg(long)]
        rater: String,
    },
    /// Next item of a session.
    Next {
        #[command(flatten)]
        remote: Remote,
        session_id: String,
    },
    /// Submit the answer for the current item.
    Submit {
        #[command(flatten)]
        remote: Remote,
        session_id: String,
        #[arg(long)]
        item: String,
        #[arg(long, value_enum)]
        answer: AnswerArg,
        #[arg(long)]
        elapsed_ms: Option<u64>,
    },
    /// List item ids and image URLs (no origin information).
    Items {
        #[command(flatten)]
        remote: Remote,
        study_id: String,
    },
    /// Record a complete session from a response file (machine baselines).
    ImportSession {
        #[command(flatten)]
        remote: Remote,
        study_id: String,
        responses: PathBuf,
    },
    /// Close a study; no further sessions or responses.
    Close {
        #[command(flatten)]
        remote: Remote,
        study_id: String,
    },
    /// Report of a closed study.
    Report {
        #[command(flatten)]
        remote: Remote,
        study_id: String,
    },
}

/// What a command produced.
#[derive(Debug)]
pub enum Output {
    Report(ReportBundle),
    /// A service reply, printed as JSON or `key: value` lines.
    Reply(Value),
    Text(String),
    /// `study serve` returned (it normally runs until killed).
    Served,
}

impl Output {
    pub fn render(&self, format: FormatArg) -> String {
        match self {
            Output::Report(b) => b.render(format.into()),
            Output::Reply(v) => match (format, v) {
                (FormatArg::Md, Value::Object(map)) => map
                    .iter()
                    .map(|(k, v)| match v {
                        Value::String(s) => format!("{k}: {s}\n"),
                        other => format!("{k}: {other}\n"),
                    })
                    .collect(),
                _ => serde_json::to_string_pretty(v).expect("value serializes") + "\n",
            },
            Output::Text(t) => t.clone(),
            Output::Served => String::new(),
        }
    }
}

pub fn run(cli: Cli) -> Result<Output> {
    let opts = Options {
        strict: cli.strict,
        threshold: cli.threshold,
    };
    Ok(match cli.command {
        Command::Fid {
            real,
            gen,
            fmd,
            row_header,
        } => Output::Report(commands::cmd_fid_specs(&real, &gen, fmd, &row_header)?),
        Command::Fmd { real, gen } => Output::Report(commands::cmd_fmd(&real, &gen)?),
        Command::Downstream { manifest, predictions } => {
            Output::Report(commands::cmd_downstream(&manifest, &predictions, opts)?)
        }
        Command::Compare {
            manifest,
            a,
            b,
            label_a,
            label_b,
        } => Output::Report(commands::cmd_compare(&manifest, (&label_a, &a), (&label_b, &b), opts)?),
        Command::Kappa { a, b } => Output::Report(commands::cmd_kappa(&a, &b)?),
        Command::Binomial { k, n, p0, two_sided } => Output::Report(commands::cmd_binomial(k, n, p0, two_sided)?),
        Command::Study(cmd) => run_study(cmd, cli.seed, cli.format)?,
    })
}

fn run_study(cmd: StudyCommand, seed: Option<u64>, format: FormatArg) -> Result<Output> {
    let client = |r: &Remote| StudyClient::new(&r.url);
    Ok(match cmd {
        StudyCommand::Serve { addr, data_dir } => {
            study_client::serve(addr, &data_dir)?;
            Output::Served
        }
        StudyCommand::Create {
            remote,
            real,
            synth,
            n_per_class,
        } => {
            let Some(seed) = seed else {
                bail!("study create needs --seed so the item order can be reproduced");
            };
            Output::Reply(client(&remote)?.create(&real, &synth, n_per_class, seed)?)
        }
        StudyCommand::OpenSession {
            remote,
            study_id,
            rater,
        } => Output::Reply(client(&remote)?.open_session(&study_id, &rater)?),
        StudyCommand::Next { remote, session_id } => Output::Reply(client(&remote)?.next(&session_id)?),
        StudyCommand::Submit {
            remote,
            session_id,
            item,
            answer,
            elapsed_ms,
        } => Output::Reply(client(&remote)?.submit(&session_id, &item, answer.into(), elapsed_ms)?),
        StudyCommand::Items { remote, study_id } => Output::Reply(client(&remote)?.items(&study_id)?),
        StudyCommand::ImportSession {
            remote,
            study_id,
            responses,
        } => {
            let file = ResponseFile::load(&responses)?;
            Output::Reply(client(&remote)?.import_session(&study_id, &file)?)
        }
        StudyCommand::Close { remote, study_id } => Output::Reply(client(&remote)?.close(&study_id)?),
        StudyCommand::Report { remote, study_id } => {
            Output::Text(client(&remote)?.report(&study_id, format == FormatArg::Md)?)
        }
    })
}
