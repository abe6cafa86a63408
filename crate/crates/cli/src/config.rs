use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use num_traits::{One, Signed};
use shiftforge_core::construction::model::DEFAULT_HORIZON;
use shiftforge_core::scalar::{format_rational, parse_rational};
use shiftforge_core::tree::VertexAddress;

#[derive(Parser, Debug)]
#[command(name = "shiftforge", version, about = "Certified weighted shifts with a pathological power domain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the model manifest with weight and measure samples.
    Construct(CommonArgs),
    /// Run the verification suites and write a report.
    Verify(VerifyArgs),
    /// Dump atoms, weights, certificates and partial-sum tables.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Order `n`: the n-th power is densely defined, the (n+1)-th is not.
    #[arg(long, default_value_t = 1)]
    pub n: u32,
    #[arg(long, conflicts_with = "rootless")]
    pub rooted: bool,
    #[arg(long)]
    pub rootless: bool,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 3)]
    pub breadth: usize,
    /// Atoms examined per series before tail bounds take over.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Absolute target width `p/q`.
    #[arg(long, default_value = "1/65536")]
    pub precision: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Additionally require every degree-k moment to be finite.
    #[arg(long)]
    pub expect_dense: Option<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma separated vertices `j:p1.p2`; defaults to the anchor, empty selects nothing.
    #[arg(long)]
    pub vertices: Option<String>,
    /// Comma separated degrees; defaults to `n,n+1`.
    #[arg(long)]
    pub degrees: Option<String>,
    /// Partial-sum rows (and atoms) per vertex.
    #[arg(long, default_value_t = 64)]
    pub terms: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Construct,
    Verify,
    Export,
}

impl CommandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandKind::Construct => "construct",
            CommandKind::Verify => "verify",
            CommandKind::Export => "export",
        }
    }
}

/// Validated run parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub n: u32,
    pub rooted: bool,
    pub depth: usize,
    pub breadth: usize,
    pub horizon: usize,
    pub precision: BigRational,
    pub out: PathBuf,
    pub format: Format,
    pub expect_dense: Option<u32>,
    /// `None` means the anchor.
    pub vertices: Option<Vec<VertexAddress>>,
    pub degrees: Option<Vec<i32>>,
    pub terms: usize,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<Self, UsageError> {
        let (command, common, expect_dense, vertices, degrees, terms) = match cli.command {
            Command::Construct(c) => (CommandKind::Construct, c, None, None, None, 64),
            Command::Verify(v) => (CommandKind::Verify, v.common, v.expect_dense, None, None, 64),
            Command::Export(e) => (CommandKind::Export, e.common, None, e.vertices, e.degrees, e.terms),
        };
        if common.n == 0 {
            return usage("--n must be at least 1");
        }
        if common.depth == 0 || common.breadth == 0 || common.horizon == 0 || terms == 0 {
            return usage("--depth, --breadth, --horizon and --terms must be positive");
        }
        let precision = parse_rational(&common.precision)
            .ok_or_else(|| UsageError(format!("cannot parse --precision {:?}; expected p/q", common.precision)))?;
        if !precision.is_positive() || precision >= BigRational::one() {
            return usage(format!("--precision must lie strictly between 0 and 1, got {}", format_rational(&precision)));
        }
        if expect_dense == Some(0) {
            return usage("--expect-dense must be at least 1");
        }
        let vertices = match vertices {
            None => None,
            Some(list) => Some(
                split_list(&list)
                    .map(|s| s.parse::<VertexAddress>().map_err(|e| UsageError(format!("bad vertex {s:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let degrees = match degrees {
            None => None,
            Some(list) => Some(
                split_list(&list)
                    .map(|s| match s.parse::<i32>() {
                        Ok(d) if d >= -1 => Ok(d),
                        _ => usage(format!("bad degree {s:?}; degrees are integers >= -1")),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let rooted = !common.rootless;
        if let Some(vs) = &vertices {
            if rooted {
                if let Some(v) = vs.iter().find(|v| v.ancestor_index() != 0 || v.path().contains(&0)) {
                    return usage(format!("vertex {v} does not exist in the rooted tree"));
                }
            }
        }
        Ok(RunConfig {
            command,
            n: common.n,
            rooted,
            depth: common.depth,
            breadth: common.breadth,
            horizon: common.horizon,
            precision,
            out: common.out,
            format: common.format,
            expect_dense,
            vertices,
            degrees,
            terms,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "command": self.command.as_str(),
            "n": self.n,
            "rooted": self.rooted,
            "depth": self.depth,
            "breadth": self.breadth,
            "horizon": self.horizon,
            "precision": format_rational(&self.precision),
            "expect_dense": self.expect_dense,
        })
    }
}

fn split_list(list: &str) -> impl Iterator<Item = &str> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty())
}
