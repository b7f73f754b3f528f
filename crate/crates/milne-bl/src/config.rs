//! Run configuration: one TOML file per run, parsed strictly.
//!
//! ```toml
//! command = "milne-solve"
//! output_dir = "out"
//! formats = ["csv", "json", "svg"]
//!
//! [milne]
//! epsilon = 0.1
//! n_exponent = 0.25
//! profile = { kind = "constant", r1 = 1.0, r2 = 1.0 }
//! datum = { kind = "sin_phi", amp = 1.0 }
//! ```
//!
//! Every section except the one the command needs may be omitted. Unknown
//! keys are errors. The config hash covers everything but `output_dir`, so a
//! run archived elsewhere keeps its hash.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusive_limit::{default_t_max, default_tallies, BallDatum, BallProblem, McMode, NeumannScaling, Vec3};
use crate::error::{Error, Result};
use crate::geometry::{CurvatureProfile, MilneConfig};
use crate::milne_solver::{BoundaryKind, MilneProblem};
use crate::phase_grid::GridSpec;
use crate::presets::{DatumPreset, SourcePreset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    MilneSolve,
    DecayFit,
    RegularityProbe,
    TangentCheck,
    LimitStudy,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::MilneSolve,
        Command::DecayFit,
        Command::RegularityProbe,
        Command::TangentCheck,
        Command::LimitStudy,
        Command::Selftest,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::MilneSolve => "milne-solve",
            Command::DecayFit => "decay-fit",
            Command::RegularityProbe => "regularity-probe",
            Command::TangentCheck => "tangent-check",
            Command::LimitStudy => "limit-study",
            Command::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// One Milne problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MilneSection {
    pub epsilon: f64,
    pub n_exponent: f64,
    #[serde(default)]
    pub allow_n_override: bool,
    #[serde(default = "default_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_k0")]
    pub decay_rate_k0: f64,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryKind,
    #[serde(default)]
    pub tau: [f64; 2],
    pub profile: CurvatureProfile,
    pub datum: DatumPreset,
    #[serde(default = "default_source")]
    pub source: SourcePreset,
    #[serde(default)]
    pub grid: GridSpec,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iterations() -> usize {
    5000
}
fn default_k0() -> f64 {
    0.1
}
fn default_boundary() -> BoundaryKind {
    BoundaryKind::Inflow
}
fn default_source() -> SourcePreset {
    SourcePreset::Zero
}

impl MilneSection {
    pub fn milne_config(&self) -> Result<MilneConfig> {
        let mut cfg = MilneConfig::with_override(self.epsilon, self.n_exponent, self.allow_n_override)?;
        cfg.fixed_point_tol = self.fixed_point_tol;
        cfg.max_iterations = self.max_iterations;
        cfg.decay_rate_k0 = self.decay_rate_k0;
        cfg.grid = self.grid;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn problem(&self) -> Result<MilneProblem> {
        let p = MilneProblem::new(self.milne_config()?, self.profile, self.datum)?
            .with_source(self.source)
            .with_tau(self.tau)
            .with_boundary(self.boundary);
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    #[serde(default = "default_decay_eps")]
    pub eps_list: Vec<f64>,
    /// Fixed `K0` of the weighted sup.
    #[serde(default = "default_k0")]
    pub k0: f64,
}

fn default_decay_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

impl Default for DecaySection {
    fn default() -> Self {
        DecaySection { eps_list: default_decay_eps(), k0: default_k0() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularitySection {
    /// Multipliers of the base `n_phi`.
    #[serde(default = "default_refinements")]
    pub refinements: Vec<usize>,
    #[serde(default = "default_k0")]
    pub k0: f64,
}

fn default_refinements() -> Vec<usize> {
    vec![1, 2, 4]
}

impl Default for RegularitySection {
    fn default() -> Self {
        RegularitySection { refinements: default_refinements(), k0: default_k0() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangentSection {
    /// Half-width of the central differences in `tau` and `psi`.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_fd_step() -> f64 {
    1e-3
}

impl Default for TangentSection {
    fn default() -> Self {
        TangentSection { fd_step: default_fd_step() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    #[serde(default = "default_limit_eps")]
    pub eps_list: Vec<f64>,
    #[serde(default = "default_g_mode")]
    pub g_mode: BallDatum,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_tallies")]
    pub tally_points: Vec<Vec3>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub neumann: NeumannScaling,
    #[serde(default)]
    pub mode: McMode,
}

fn default_limit_eps() -> Vec<f64> {
    vec![0.4, 0.2, 0.1]
}
fn default_g_mode() -> BallDatum {
    BallDatum::CosTheta
}
fn default_k_max() -> usize {
    1_000_000
}

impl LimitSection {
    /// Problem at the first `eps`; the study rescales `t_max` per `eps`.
    pub fn template(&self) -> Result<BallProblem> {
        let eps = *self
            .eps_list
            .first()
            .ok_or_else(|| Error::Config("limit.eps_list is empty".into()))?;
        let p = BallProblem {
            epsilon: eps,
            g_mode: self.g_mode,
            n_samples: self.n_samples,
            seed: self.seed,
            tally_points: self.tally_points.clone(),
            t_max: default_t_max(eps),
            k_max: self.k_max,
            neumann: self.neumann,
            mode: self.mode,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Deliberate defects for exercising the self-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Scales one polar quadrature weight by 1.01.
    CorruptWeights,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestSection {
    #[serde(default)]
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub milne: Option<MilneSection>,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub regularity: Option<RegularitySection>,
    #[serde(default)]
    pub tangent: Option<TangentSection>,
    #[serde(default)]
    pub limit: Option<LimitSection>,
    #[serde(default)]
    pub selftest: Option<SelftestSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Svg]
}

impl RunConfig {
    /// Parses TOML; syntax and schema errors carry `line:column`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks that the command's section is present and its values are usable.
    pub fn validate(&self) -> Result<()> {
        let mut formats = self.formats.clone();
        formats.sort();
        formats.dedup();
        if formats.len() != self.formats.len() {
            return Err(Error::Config("formats contains duplicates".into()));
        }
        match self.command {
            Command::MilneSolve | Command::DecayFit | Command::RegularityProbe | Command::TangentCheck => {
                let m = self.milne()?;
                m.milne_config()?;
            }
            Command::LimitStudy => {
                self.limit()?.template()?;
            }
            Command::Selftest => {}
        }
        if let Some(d) = &self.decay {
            if d.eps_list.is_empty() || d.eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                return Err(Error::Config("decay.eps_list needs values in (0, 1)".into()));
            }
        }
        if let Some(r) = &self.regularity {
            if r.refinements.is_empty() || r.refinements.contains(&0) {
                return Err(Error::Config("regularity.refinements needs positive multipliers".into()));
            }
        }
        if let Some(t) = &self.tangent {
            if !(t.fd_step > 0.0 && t.fd_step.is_finite()) {
                return Err(Error::Config("tangent.fd_step must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn milne(&self) -> Result<&MilneSection> {
        self.milne
            .as_ref()
            .ok_or_else(|| Error::Config(format!("command {} needs a [milne] section", self.command)))
    }

    pub fn limit(&self) -> Result<&LimitSection> {
        self.limit
            .as_ref()
            .ok_or_else(|| Error::Config(format!("command {} needs a [limit] section", self.command)))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    /// Hex sha256 of the canonical JSON form (without `output_dir`).
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canon);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOLVE: &str = r#"
command = "milne-solve"
output_dir = "out"

[milne]
epsilon = 0.1
n_exponent = 0.25
profile = { kind = "constant", r1 = 1.0, r2 = 1.0 }
datum = { kind = "constant", value = 3.7 }
grid = { n_eta = 32, n_phi = 8, n_psi = 4 }
"#;

    #[test]
    fn parses_minimal_solve() {
        let c = RunConfig::parse(SOLVE).unwrap();
        assert_eq!(c.command, Command::MilneSolve);
        let m = c.milne().unwrap();
        assert_eq!(m.fixed_point_tol, 1e-9);
        assert_eq!(m.grid.n_psi, 4);
        assert_eq!(c.formats, vec![Format::Csv, Format::Json, Format::Svg]);
    }

    #[test]
    fn unknown_key_reports_position() {
        let bad = SOLVE.replace("n_exponent = 0.25", "n_exponent = 0.25\nbogus = 1");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("line 8"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = RunConfig::parse("command = \"selftest\"\nformats = [\"csv\",\n").unwrap_err().to_string();
        assert!(err.contains("line "), "{err}");
    }

    #[test]
    fn missing_section_rejected() {
        let err = RunConfig::parse("command = \"milne-solve\"").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::parse(SOLVE).unwrap();
        let b = RunConfig::parse(&SOLVE.replace("\"out\"", "\"elsewhere\"")).unwrap();
        let c = RunConfig::parse(&SOLVE.replace("3.7", "3.8")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("solve".parse::<Command>().is_err());
    }
}
