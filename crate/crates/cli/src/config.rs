//! Structured configuration files and small grammar helpers.
//!
//! All config files are TOML with a mandatory `version = 1`. The run
//! file mirrors the flag names of each subcommand in a section named
//! after it; flags always win over file values. World files describe
//! simulation inputs and carry a `kind` matching the simulate
//! subcommand they feed.

use std::fs;

use serde::Deserialize;

use crate::commands::CliError;

pub const CONFIG_VERSION: u32 = 1;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &str, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {what} {path:?}: {e}")))?;
    toml::from_str(&text).map_err(|e| invalid(format!("{what} {path:?}: {e}")))
}

fn check_version(version: u32, path: &str) -> Result<(), CliError> {
    if version != CONFIG_VERSION {
        return Err(invalid(format!(
            "{path:?} declares version {version}; this build reads version {CONFIG_VERSION}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Run file: defaults for flags, by subcommand.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub version: Option<u32>,
    pub out: Option<String>,
    pub precision: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub effects: EffectsSection,
    #[serde(default)]
    pub infectiousness: InfectSection,
    #[serde(default)]
    pub confound_bias: ConfoundSection,
    #[serde(default)]
    pub gee: GeeSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectsSection {
    pub data: Option<String>,
    pub phi: Option<String>,
    pub psi: Option<String>,
    pub per_1000: Option<bool>,
    pub level: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfectSection {
    pub data: Option<String>,
    pub theta: Option<String>,
    pub gamma: Option<String>,
    pub beta: Option<String>,
    pub bounds: Option<bool>,
    pub ci: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfoundSection {
    pub observed: Option<f64>,
    pub ci: Option<String>,
    pub lambda: Option<String>,
    pub tau: Option<String>,
    pub du: Option<String>,
    pub dv: Option<String>,
    pub spec: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeeSection {
    pub data: Option<String>,
    pub model: Option<String>,
    pub gamma_grid: Option<String>,
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub world: Option<String>,
    pub n: Option<usize>,
    pub ledger_out: Option<String>,
}

pub fn load_run_file(path: &str) -> Result<RunFile, CliError> {
    let file: RunFile = read_toml(path, "config file")?;
    let version = file
        .version
        .ok_or_else(|| invalid(format!("{path:?} is missing `version`")))?;
    check_version(version, path)?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// GEE model file.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    #[serde(default = "default_model_name")]
    pub model: String,
    #[serde(default)]
    pub delta: DeltaSection,
}

fn default_model_name() -> String {
    "standard".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSection {
    pub direct: String,
    pub spill: String,
}

impl Default for DeltaSection {
    fn default() -> Self {
        DeltaSection {
            direct: "scaled".into(),
            spill: "scaled".into(),
        }
    }
}

/// Whether a delta side may take nonzero lambdas from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaFamily {
    Zero,
    Scaled,
}

impl DeltaFamily {
    fn parse(s: &str, side: &str) -> Result<Self, CliError> {
        match s {
            "zero" => Ok(DeltaFamily::Zero),
            "scaled" => Ok(DeltaFamily::Scaled),
            other => Err(invalid(format!(
                "delta.{side} family {other:?}: known families are \"zero\" and \"scaled\""
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeltaFamily::Zero => "zero",
            DeltaFamily::Scaled => "scaled",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelSpec {
    pub direct: DeltaFamily,
    pub spill: DeltaFamily,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            direct: DeltaFamily::Scaled,
            spill: DeltaFamily::Scaled,
        }
    }
}

pub fn load_model_file(path: &str) -> Result<ModelSpec, CliError> {
    let file: ModelFile = read_toml(path, "model file")?;
    check_version(file.version, path)?;
    if file.model != "standard" {
        return Err(invalid(format!(
            "model {:?}: only the \"standard\" layout is published",
            file.model
        )));
    }
    Ok(ModelSpec {
        direct: DeltaFamily::parse(&file.delta.direct, "direct")?,
        spill: DeltaFamily::parse(&file.delta.spill, "spill")?,
    })
}

// ---------------------------------------------------------------------------
// World files.

#[derive(Debug, Deserialize)]
struct WorldHeader {
    version: u32,
    kind: String,
}

fn world_kind(path: &str) -> Result<String, CliError> {
    let header: WorldHeader = read_toml(path, "world file")?;
    check_version(header.version, path)?;
    Ok(header.kind)
}

fn expect_kind(path: &str, want: &str) -> Result<(), CliError> {
    let kind = world_kind(path)?;
    if kind != want {
        return Err(invalid(format!(
            "world file {path:?} has kind {kind:?}; this subcommand needs {want:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseholdWorldFile {
    #[allow(dead_code)]
    pub version: u32,
    #[allow(dead_code)]
    pub kind: String,
    pub doomed: f64,
    pub protected: f64,
    pub immune: f64,
    pub q_doomed_v: f64,
    pub q_doomed_u: f64,
    pub q_protected_u: f64,
    #[serde(default)]
    pub q_baseline: f64,
}

pub fn load_household_world(path: &str) -> Result<HouseholdWorldFile, CliError> {
    expect_kind(path, "households")?;
    read_toml(path, "world file")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialWorldFile {
    #[allow(dead_code)]
    pub version: u32,
    #[allow(dead_code)]
    pub kind: String,
    pub groups: usize,
    pub size: usize,
    /// Treated members are infected when their treated-peer count is
    /// below the cut; cuts cycle over members within each group.
    pub cut_treated: Vec<usize>,
    pub cut_control: Vec<usize>,
    pub design: TrialDesignFile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDesignFile {
    pub phi: String,
    pub psi: String,
    pub phi_label: String,
    pub psi_label: String,
    pub n_psi: usize,
}

pub fn load_trial_world(path: &str) -> Result<TrialWorldFile, CliError> {
    expect_kind(path, "trial")?;
    let file: TrialWorldFile = read_toml(path, "world file")?;
    if file.cut_treated.is_empty() || file.cut_control.is_empty() {
        return Err(invalid(format!(
            "world file {path:?}: cut_treated and cut_control need at least one entry"
        )));
    }
    Ok(file)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterWorldFile {
    #[allow(dead_code)]
    pub version: u32,
    #[allow(dead_code)]
    pub kind: String,
    pub variant: String,
    pub size: usize,
    pub covariate_prob: f64,
    pub noise_sd: f64,
    pub planted: Option<PlantedSection>,
    pub confounded: Option<ConfoundedSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSection {
    pub alpha: [f64; 2],
    pub psi_d: Vec<f64>,
    pub psi_s: Vec<f64>,
    pub eta: Vec<f64>,
    #[serde(default)]
    pub lambda_d: f64,
    #[serde(default)]
    pub lambda_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfoundedSection {
    pub u_given_l0: Vec<f64>,
    pub u_given_l1: Vec<f64>,
    pub treat: [f64; 3],
    pub mean: MeanSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanSection {
    pub base: f64,
    pub z: f64,
    pub zg: f64,
    pub g: f64,
    pub l: f64,
    pub h: f64,
    pub u: f64,
    pub v: f64,
}

pub fn load_cluster_world(path: &str) -> Result<ClusterWorldFile, CliError> {
    expect_kind(path, "clusters")?;
    let file: ClusterWorldFile = read_toml(path, "world file")?;
    match file.variant.as_str() {
        "planted" if file.planted.is_some() => Ok(file),
        "confounded" if file.confounded.is_some() => Ok(file),
        "planted" | "confounded" => Err(invalid(format!(
            "world file {path:?}: variant {:?} needs a [{}] section",
            file.variant, file.variant
        ))),
        other => Err(invalid(format!(
            "world file {path:?}: variant {other:?} is not \"planted\" or \"confounded\""
        ))),
    }
}

// ---------------------------------------------------------------------------
// General confounding spec.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSpecFile {
    pub version: u32,
    pub support: Vec<[f64; 2]>,
    pub reference: [f64; 2],
    pub marginal: Vec<f64>,
    pub zg: [f64; 2],
    pub zg_prime: [f64; 2],
    pub exposure: Vec<ExposureSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureSection {
    pub z: f64,
    pub g: f64,
    /// Outcome mean at each support point under this exposure.
    pub mean: Vec<f64>,
    /// Confounder distribution at this exposure, aligned with `support`.
    pub dist: Vec<f64>,
}

pub fn load_general_spec(path: &str) -> Result<GeneralSpecFile, CliError> {
    let file: GeneralSpecFile = read_toml(path, "bias spec")?;
    check_version(file.version, path)?;
    let k = file.support.len();
    if k == 0 {
        return Err(invalid(format!("bias spec {path:?}: empty support")));
    }
    if file.marginal.len() != k {
        return Err(invalid(format!(
            "bias spec {path:?}: marginal has {} entries for {k} support points",
            file.marginal.len()
        )));
    }
    for e in &file.exposure {
        if e.mean.len() != k || e.dist.len() != k {
            return Err(invalid(format!(
                "bias spec {path:?}: exposure (z={}, g={}) tables must have {k} entries",
                e.z, e.g
            )));
        }
    }
    for (name, target) in [("zg", file.zg), ("zg_prime", file.zg_prime)] {
        if !file
            .exposure
            .iter()
            .any(|e| e.z == target[0] && e.g == target[1])
        {
            return Err(invalid(format!(
                "bias spec {path:?}: no [[exposure]] table for {name} = ({}, {})",
                target[0], target[1]
            )));
        }
    }
    Ok(file)
}

// ---------------------------------------------------------------------------
// Small grammars shared by several flags.

/// `a,b,c` or `lo:hi:n` (inclusive, evenly spaced).
pub fn parse_grid(what: &str, s: &str) -> Result<Vec<f64>, CliError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(invalid(format!("{what}: empty grid")));
    }
    let finite = |x: f64| -> Result<f64, CliError> {
        if x.is_finite() {
            Ok(x)
        } else {
            Err(invalid(format!("{what}: {x} is not finite")))
        }
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(format!("{what}: range syntax is lo:hi:n, got {s:?}")));
        }
        let lo = finite(parse_number(what, parts[0])?)?;
        let hi = finite(parse_number(what, parts[1])?)?;
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{what}: point count {:?} is not an integer", parts[2])))?;
        match n {
            0 => Err(invalid(format!("{what}: a grid needs at least one point"))),
            1 if lo == hi => Ok(vec![lo]),
            1 => Err(invalid(format!(
                "{what}: a single-point range needs lo = hi, got {lo}:{hi}"
            ))),
            _ => Ok((0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()),
        }
    } else {
        s.split(',')
            .map(|t| finite(parse_number(what, t)?))
            .collect()
    }
}

pub fn parse_number(what: &str, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| invalid(format!("{what}: {s:?} is not a number")))
}

/// `lo,hi` with lo <= hi.
pub fn parse_interval(what: &str, s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(invalid(format!("{what}: interval syntax is lo,hi, got {s:?}")));
    }
    let lo = parse_number(what, parts[0])?;
    let hi = parse_number(what, parts[1])?;
    if lo > hi {
        return Err(invalid(format!("{what}: interval [{lo}, {hi}] is reversed")));
    }
    Ok((lo, hi))
}

/// `ld,ls;ld,ls;...` for the GEE sensitivity grid.
pub fn parse_pair_grid(what: &str, s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut out = Vec::new();
    for row in s.split(';') {
        let row = row.trim();
        if row.is_empty() {
            return Err(invalid(format!("{what}: empty row in {s:?}")));
        }
        let parts: Vec<&str> = row.split(',').collect();
        if parts.len() != 2 {
            return Err(invalid(format!(
                "{what}: each row is lambda_d,lambda_s, got {row:?}"
            )));
        }
        out.push((parse_number(what, parts[0])?, parse_number(what, parts[1])?));
    }
    Ok(out)
}

/// `mixed:K` or `bernoulli:P`.
pub fn parse_allocation(what: &str, s: &str) -> Result<spillover::sim::Allocation<f64>, CliError> {
    let (name, value) = s
        .split_once(':')
        .ok_or_else(|| invalid(format!("{what}: allocation syntax is mixed:K or bernoulli:P")))?;
    match name.trim() {
        "mixed" => {
            let k: usize = value.trim().parse().map_err(|_| {
                invalid(format!("{what}: treated count {value:?} is not an integer"))
            })?;
            Ok(spillover::sim::Allocation::Mixed { treated: k })
        }
        "bernoulli" => Ok(spillover::sim::Allocation::Bernoulli {
            p: parse_number(what, value)?,
        }),
        other => Err(invalid(format!(
            "{what}: unknown allocation {other:?}, want mixed or bernoulli"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse_both_syntaxes() {
        assert_eq!(parse_grid("t", "1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("t", "0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("t", "2:2:1").unwrap(), vec![2.0]);
        assert!(parse_grid("t", "").is_err());
        assert!(parse_grid("t", "0:1:0").is_err());
        assert!(parse_grid("t", "1:2:1").is_err());
        assert!(parse_grid("t", "a,b").is_err());
        assert!(parse_grid("t", "inf").is_err());
    }

    #[test]
    fn pair_grid_rows() {
        let g = parse_pair_grid("g", "0,0; 0.5,-0.2").unwrap();
        assert_eq!(g, vec![(0.0, 0.0), (0.5, -0.2)]);
        assert!(parse_pair_grid("g", "0,0;1").is_err());
        assert!(parse_pair_grid("g", "0,0;;1,1").is_err());
    }

    #[test]
    fn allocations() {
        use spillover::sim::Allocation;
        assert_eq!(
            parse_allocation("a", "mixed:3").unwrap(),
            Allocation::Mixed { treated: 3 }
        );
        assert_eq!(
            parse_allocation("a", "bernoulli:0.4").unwrap(),
            Allocation::Bernoulli { p: 0.4 }
        );
        assert!(parse_allocation("a", "mixed").is_err());
        assert!(parse_allocation("a", "poisson:3").is_err());
    }

    #[test]
    fn intervals() {
        assert_eq!(parse_interval("ci", "-1,2").unwrap(), (-1.0, 2.0));
        assert!(parse_interval("ci", "2,-1").is_err());
        assert!(parse_interval("ci", "1").is_err());
    }
}
