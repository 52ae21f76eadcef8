//! Study-data containers and delimited-text ingestion.
//!
//! Three shapes of input are supported:
//!
//! * group summaries: one row per randomized group with arm sizes and
//!   case counts (`group_id, assignment, n_treated, cases_treated,
//!   n_control, cases_control`),
//! * two-person household records (`household_id, z1, y1, y2`),
//! * individual-in-cluster records (`cluster_id, individual_id, z, y,
//!   l_1..l_k`).
//!
//! Files may be comma- or tab-delimited (detected from the header row)
//! and must carry a header naming the fields; column order is free.
//! Lines starting with `#` are ignored, which lets reports embed their
//! provenance without breaking round-trips. Missing values are rejected,
//! never imputed.

use std::io;

use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("{0}")]
    Invalid(String),
    #[error("empty input: no data rows")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One randomized group: arm sizes and case counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSummary {
    pub group_id: String,
    /// Allocation label of the group's strategy (e.g. `"50"`, `"30"`).
    pub assignment: String,
    pub n_treated: u64,
    pub cases_treated: u64,
    pub n_control: u64,
    pub cases_control: u64,
}

/// Immutable collection of group summaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialTable {
    groups: Vec<GroupSummary>,
}

impl TrialTable {
    /// Validates that case counts do not exceed arm sizes.
    pub fn new(groups: Vec<GroupSummary>) -> Result<Self, DataError> {
        if groups.is_empty() {
            return Err(DataError::Empty);
        }
        for g in &groups {
            if g.cases_treated > g.n_treated {
                return Err(DataError::Invalid(format!(
                    "group {:?}: cases_treated {} exceeds n_treated {}",
                    g.group_id, g.cases_treated, g.n_treated
                )));
            }
            if g.cases_control > g.n_control {
                return Err(DataError::Invalid(format!(
                    "group {:?}: cases_control {} exceeds n_control {}",
                    g.group_id, g.cases_control, g.n_control
                )));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[GroupSummary] {
        &self.groups
    }

    /// Distinct allocation labels in first-appearance order.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.assignment.as_str()) {
                out.push(&g.assignment);
            }
        }
        out
    }
}

/// A two-person household: treated-or-not index member and an always
/// untreated second member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseholdRecord {
    pub household_id: String,
    /// Index member's treatment.
    pub z1: bool,
    /// Index member's outcome.
    pub y1: bool,
    /// Second member's outcome.
    pub y2: bool,
}

/// Cell means from a collection of household records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfectStudy<R> {
    /// Second-member attack rate among treated infected indexes.
    pub p1: R,
    /// Second-member attack rate among untreated infected indexes.
    pub p0: R,
    /// Index attack rate in the treated arm.
    pub attack1: R,
    /// Index attack rate in the untreated arm.
    pub attack0: R,
    pub n_records: usize,
}

impl<R: Real> InfectStudy<R> {
    pub fn new(p1: R, p0: R, attack1: R, attack0: R, n_records: usize) -> Result<Self, DataError> {
        for (name, v) in [
            ("p1", p1),
            ("p0", p0),
            ("attack1", attack1),
            ("attack0", attack0),
        ] {
            if !(v >= R::zero() && v <= R::one()) {
                return Err(DataError::Invalid(format!(
                    "{name} = {} is not a probability",
                    v.as_f64()
                )));
            }
        }
        Ok(Self {
            p1,
            p0,
            attack1,
            attack0,
            n_records,
        })
    }
}

/// Cell means of the four conditioning cells used downstream. Errors name
/// the first empty cell encountered.
pub fn summarize_households<R: Real>(
    records: &[HouseholdRecord],
) -> Result<InfectStudy<R>, DataError> {
    let mut n = [0u64; 2]; // per z1 arm
    let mut infected = [0u64; 2]; // y1 = 1 per arm
    let mut secondary = [0u64; 2]; // y2 = 1 among y1 = 1, per arm
    for r in records {
        let z = r.z1 as usize;
        n[z] += 1;
        if r.y1 {
            infected[z] += 1;
            if r.y2 {
                secondary[z] += 1;
            }
        }
    }
    for z in [1usize, 0] {
        if n[z] == 0 {
            return Err(DataError::Invalid(format!(
                "no records with z1={z}: arm mean undefined"
            )));
        }
    }
    for z in [1usize, 0] {
        if infected[z] == 0 {
            return Err(DataError::Invalid(format!(
                "conditioning cell (z1={z}, y1=1) is empty: secondary attack rate undefined"
            )));
        }
    }
    let rate = |num: u64, den: u64| R::of_usize(num as usize) / R::of_usize(den as usize);
    InfectStudy::new(
        rate(secondary[1], infected[1]),
        rate(secondary[0], infected[0]),
        rate(infected[1], n[1]),
        rate(infected[0], n[0]),
        records.len(),
    )
}

/// One member of a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMember<R> {
    pub individual_id: String,
    pub z: bool,
    pub y: R,
    pub l: Vec<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<R> {
    pub cluster_id: String,
    pub members: Vec<ClusterMember<R>>,
}

/// Immutable clustered data with a fixed covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData<R> {
    clusters: Vec<Cluster<R>>,
    covariate_dim: usize,
}

impl<R: Real> ClusterData<R> {
    pub fn new(clusters: Vec<Cluster<R>>, covariate_dim: usize) -> Result<Self, DataError> {
        if clusters.is_empty() {
            return Err(DataError::Empty);
        }
        for c in &clusters {
            if c.members.is_empty() {
                return Err(DataError::Invalid(format!(
                    "cluster {:?} has no members",
                    c.cluster_id
                )));
            }
            for m in &c.members {
                if m.l.len() != covariate_dim {
                    return Err(DataError::Invalid(format!(
                        "cluster {:?}, individual {:?}: {} covariates, expected {}",
                        c.cluster_id,
                        m.individual_id,
                        m.l.len(),
                        covariate_dim
                    )));
                }
            }
        }
        Ok(Self {
            clusters,
            covariate_dim,
        })
    }

    pub fn clusters(&self) -> &[Cluster<R>] {
        &self.clusters
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn n_individuals(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }
}

/// How a member's peers are summarized into an exposure or covariate
/// feature.
///
/// `MeanOfOthers` and `CountOfOthers` are invariant to peer order;
/// `Identity` keeps the peers' values in file order and is not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    MeanOfOthers,
    CountOfOthers,
    Identity,
}

impl SummaryKind {
    pub fn name(self) -> &'static str {
        match self {
            SummaryKind::MeanOfOthers => "mean-of-others",
            SummaryKind::CountOfOthers => "count-of-others",
            SummaryKind::Identity => "identity-vector",
        }
    }
}

/// Per-individual modeling features derived from a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow<R> {
    pub cluster_index: usize,
    pub member_index: usize,
    pub cluster_id: String,
    pub individual_id: String,
    pub z: bool,
    pub y: R,
    pub l: Vec<R>,
    /// Summary of the peers' treatments: length 1 for mean/count, `n - 1`
    /// for identity.
    pub g: Vec<R>,
    /// Summary of the peers' covariates: length `k` for mean/count,
    /// `k * (n - 1)` for identity.
    pub h: Vec<R>,
}

impl<R: Real> FeatureRow<R> {
    /// The scalar exposure, when the chosen summary produces one.
    pub fn g_scalar(&self) -> Option<R> {
        (self.g.len() == 1).then(|| self.g[0])
    }
}

fn summarize_block<R: Real>(rows: &[Vec<R>], skip: usize, kind: SummaryKind) -> Vec<R> {
    let dim = rows[0].len();
    let n_others = rows.len() - 1;
    match kind {
        SummaryKind::Identity => {
            let mut out = Vec::with_capacity(dim * n_others);
            for (i, r) in rows.iter().enumerate() {
                if i != skip {
                    out.extend_from_slice(r);
                }
            }
            out
        }
        SummaryKind::MeanOfOthers | SummaryKind::CountOfOthers => {
            let mut out = vec![R::zero(); dim];
            for (i, r) in rows.iter().enumerate() {
                if i != skip {
                    for (o, &v) in out.iter_mut().zip(r) {
                        *o += v;
                    }
                }
            }
            if kind == SummaryKind::MeanOfOthers {
                let d = R::of_usize(n_others);
                for o in &mut out {
                    *o = *o / d;
                }
            }
            out
        }
    }
}

pub(crate) fn features_for_cluster<R: Real>(
    ci: usize,
    c: &Cluster<R>,
    g_kind: SummaryKind,
    h_kind: SummaryKind,
) -> Result<Vec<FeatureRow<R>>, DataError> {
    if c.members.len() < 2 {
        return Err(DataError::Invalid(format!(
            "cluster {:?} has a single member: peer summaries undefined",
            c.cluster_id
        )));
    }
    let z_rows: Vec<Vec<R>> = c
        .members
        .iter()
        .map(|m| vec![if m.z { R::one() } else { R::zero() }])
        .collect();
    let l_rows: Vec<Vec<R>> = c.members.iter().map(|m| m.l.clone()).collect();
    let mut out = Vec::with_capacity(c.members.len());
    for (mi, m) in c.members.iter().enumerate() {
        out.push(FeatureRow {
            cluster_index: ci,
            member_index: mi,
            cluster_id: c.cluster_id.clone(),
            individual_id: m.individual_id.clone(),
            z: m.z,
            y: m.y,
            l: m.l.clone(),
            g: summarize_block(&z_rows, mi, g_kind),
            h: summarize_block(&l_rows, mi, h_kind),
        });
    }
    Ok(out)
}

/// Expands cluster data into per-individual rows with peer summaries
/// `g` (treatments) and `h` (covariates).
///
/// Requires every cluster to have at least two members, since a summary
/// of "the others" is undefined otherwise.
pub fn cluster_features<R: Real>(
    data: &ClusterData<R>,
    g_kind: SummaryKind,
    h_kind: SummaryKind,
) -> Result<Vec<FeatureRow<R>>, DataError> {
    let mut out = Vec::with_capacity(data.n_individuals());
    for (ci, c) in data.clusters.iter().enumerate() {
        out.extend(features_for_cluster(ci, c, g_kind, h_kind)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Delimited-text ingestion.

/// Detects the delimiter from the first non-comment line: tab if one is
/// present, comma otherwise.
fn sniff_delimiter(text: &str) -> u8 {
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        return if line.contains('\t') { b'\t' } else { b',' };
    }
    b','
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table<Rd: io::Read>(mut reader: Rd) -> Result<Table, DataError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let delim = sniff_delimiter(&text);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .comment(Some(b'#'))
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Table { header, rows })
}

fn column(table: &Table, name: &str) -> Result<usize, DataError> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn cell<'a>(row: &'a [String], line: u64, col: usize, name: &str) -> Result<&'a str, DataError> {
    let v = row.get(col).map(String::as_str).unwrap_or("");
    if v.is_empty() {
        return Err(DataError::Row {
            line,
            msg: format!("missing value in column {name:?}"),
        });
    }
    Ok(v)
}

fn parse_count(row: &[String], line: u64, col: usize, name: &str) -> Result<u64, DataError> {
    let v = cell(row, line, col, name)?;
    v.parse().map_err(|_| DataError::Row {
        line,
        msg: format!("column {name:?}: {v:?} is not a nonnegative integer"),
    })
}

fn parse_binary(row: &[String], line: u64, col: usize, name: &str) -> Result<bool, DataError> {
    match cell(row, line, col, name)? {
        "0" => Ok(false),
        "1" => Ok(true),
        v => Err(DataError::Row {
            line,
            msg: format!("column {name:?}: {v:?} is not binary (0/1)"),
        }),
    }
}

fn parse_real<R: Real>(row: &[String], line: u64, col: usize, name: &str) -> Result<R, DataError> {
    let v = cell(row, line, col, name)?;
    let x: f64 = v.parse().map_err(|_| DataError::Row {
        line,
        msg: format!("column {name:?}: {v:?} is not a decimal number"),
    })?;
    if !x.is_finite() {
        return Err(DataError::Row {
            line,
            msg: format!("column {name:?}: {v:?} is not finite"),
        });
    }
    Ok(R::of(x))
}

/// Reads group summaries (CSV or TSV, header required).
pub fn parse_group_summary<Rd: io::Read>(reader: Rd) -> Result<TrialTable, DataError> {
    let table = read_table(reader)?;
    let id = column(&table, "group_id")?;
    let asg = column(&table, "assignment")?;
    let nt = column(&table, "n_treated")?;
    let ct = column(&table, "cases_treated")?;
    let nc = column(&table, "n_control")?;
    let cc = column(&table, "cases_control")?;
    let mut groups = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        groups.push(GroupSummary {
            group_id: cell(row, *line, id, "group_id")?.to_string(),
            assignment: cell(row, *line, asg, "assignment")?.to_string(),
            n_treated: parse_count(row, *line, nt, "n_treated")?,
            cases_treated: parse_count(row, *line, ct, "cases_treated")?,
            n_control: parse_count(row, *line, nc, "n_control")?,
            cases_control: parse_count(row, *line, cc, "cases_control")?,
        });
    }
    TrialTable::new(groups)
}

/// Reads household records (CSV or TSV, header required).
pub fn parse_households<Rd: io::Read>(reader: Rd) -> Result<Vec<HouseholdRecord>, DataError> {
    let table = read_table(reader)?;
    let id = column(&table, "household_id")?;
    let z1 = column(&table, "z1")?;
    let y1 = column(&table, "y1")?;
    let y2 = column(&table, "y2")?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        out.push(HouseholdRecord {
            household_id: cell(row, *line, id, "household_id")?.to_string(),
            z1: parse_binary(row, *line, z1, "z1")?,
            y1: parse_binary(row, *line, y1, "y1")?,
            y2: parse_binary(row, *line, y2, "y2")?,
        });
    }
    Ok(out)
}

/// Reads clustered records (CSV or TSV, header required). Covariate
/// columns are `l_1 .. l_k` and must be numbered contiguously from 1.
pub fn parse_clusters<Rd: io::Read, R: Real>(reader: Rd) -> Result<ClusterData<R>, DataError> {
    let table = read_table(reader)?;
    let cid = column(&table, "cluster_id")?;
    let iid = column(&table, "individual_id")?;
    let zc = column(&table, "z")?;
    let yc = column(&table, "y")?;
    let mut l_cols = Vec::new();
    for k in 1.. {
        let name = format!("l_{k}");
        match table.header.iter().position(|h| *h == name) {
            Some(i) => l_cols.push((i, name)),
            None => break,
        }
    }
    for h in &table.header {
        if h.starts_with("l_") && !l_cols.iter().any(|(_, n)| n == h) {
            return Err(DataError::Invalid(format!(
                "covariate column {h:?} breaks the contiguous l_1..l_k numbering"
            )));
        }
    }

    let mut clusters: Vec<Cluster<R>> = Vec::new();
    for (line, row) in &table.rows {
        let cluster_id = cell(row, *line, cid, "cluster_id")?.to_string();
        let mut l = Vec::with_capacity(l_cols.len());
        for (col, name) in &l_cols {
            l.push(parse_real(row, *line, *col, name)?);
        }
        let member = ClusterMember {
            individual_id: cell(row, *line, iid, "individual_id")?.to_string(),
            z: parse_binary(row, *line, zc, "z")?,
            y: parse_real(row, *line, yc, "y")?,
            l,
        };
        match clusters.last_mut() {
            Some(c) if c.cluster_id == cluster_id => c.members.push(member),
            _ => {
                if clusters.iter().any(|c| c.cluster_id == cluster_id) {
                    return Err(DataError::Row {
                        line: *line,
                        msg: format!("cluster {cluster_id:?} rows are not contiguous"),
                    });
                }
                clusters.push(Cluster {
                    cluster_id,
                    members: vec![member],
                });
            }
        }
    }
    ClusterData::new(clusters, l_cols.len())
}

// ---------------------------------------------------------------------------
// Writers. Numeric cells use the shortest representation that parses back
// to the same value, so `parse(write(x))` reproduces `x` exactly.

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_group_summary<W: io::Write>(table: &TrialTable, mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "group_id,assignment,n_treated,cases_treated,n_control,cases_control"
    )?;
    for g in table.groups() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            g.group_id, g.assignment, g.n_treated, g.cases_treated, g.n_control, g.cases_control
        )?;
    }
    Ok(())
}

pub fn write_households<W: io::Write>(records: &[HouseholdRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "household_id,z1,y1,y2")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{}",
            r.household_id,
            bit(r.z1),
            bit(r.y1),
            bit(r.y2)
        )?;
    }
    Ok(())
}

pub fn write_clusters<W: io::Write, R: Real>(data: &ClusterData<R>, mut w: W) -> io::Result<()> {
    write!(w, "cluster_id,individual_id,z,y")?;
    for k in 1..=data.covariate_dim() {
        write!(w, ",l_{k}")?;
    }
    writeln!(w)?;
    for c in data.clusters() {
        for m in &c.members {
            write!(w, "{},{},{},{}", c.cluster_id, m.individual_id, bit(m.z), m.y)?;
            for v in &m.l {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GROUPS: &str = "group_id,assignment,n_treated,cases_treated,n_control,cases_control\n\
        g1,50,12541,16,12541,18\n\
        g2,50,11513,26,11513,54\n\
        g3,30,10772,17,25134,119\n\
        g4,30,8883,22,20727,122\n\
        g5,30,5627,15,13130,92\n";

    #[test]
    fn parses_group_summaries() {
        let t = parse_group_summary(GROUPS.as_bytes()).unwrap();
        assert_eq!(t.groups().len(), 5);
        assert_eq!(t.labels(), vec!["50", "30"]);
        assert_eq!(t.groups()[2].n_control, 25134);
    }

    #[test]
    fn tsv_and_reordered_headers_parse_identically() {
        let tsv = GROUPS.replace(',', "\t");
        let t1 = parse_group_summary(GROUPS.as_bytes()).unwrap();
        let t2 = parse_group_summary(tsv.as_bytes()).unwrap();
        assert_eq!(t1, t2);

        let reordered = "assignment,group_id,cases_control,n_control,cases_treated,n_treated\n\
            50,g1,18,12541,16,12541\n";
        let t3 = parse_group_summary(reordered.as_bytes()).unwrap();
        assert_eq!(t3.groups()[0], t1.groups()[0]);
    }

    #[test]
    fn parse_errors_name_line_and_column() {
        let bad = "group_id,assignment,n_treated,cases_treated,n_control,cases_control\n\
            g1,50,12541,16,12541,18\n\
            g2,50,11513,,11513,54\n";
        let err = parse_group_summary(bad.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("cases_treated"), "{msg}");

        let neg = "group_id,assignment,n_treated,cases_treated,n_control,cases_control\n\
            g1,50,12541,-4,12541,18\n";
        let msg = parse_group_summary(neg.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("nonnegative integer"), "{msg}");
    }

    #[test]
    fn rejects_cases_above_denominator() {
        let bad = "group_id,assignment,n_treated,cases_treated,n_control,cases_control\n\
            g1,50,10,16,12541,18\n";
        let msg = parse_group_summary(bad.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("exceeds"), "{msg}");
    }

    #[test]
    fn group_summary_roundtrip_is_exact() {
        let t = parse_group_summary(GROUPS.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_group_summary(&t, &mut buf).unwrap();
        let t2 = parse_group_summary(buf.as_slice()).unwrap();
        assert_eq!(t, t2);
    }

    fn hh(z1: u8, y1: u8, y2: u8) -> HouseholdRecord {
        HouseholdRecord {
            household_id: "h".into(),
            z1: z1 == 1,
            y1: y1 == 1,
            y2: y2 == 1,
        }
    }

    #[test]
    fn summarizes_household_cells() {
        let recs = [hh(1, 1, 1), hh(1, 1, 0), hh(0, 1, 1), hh(0, 1, 1)];
        let s: InfectStudy<f64> = summarize_households(&recs).unwrap();
        assert_eq!(s.p1, 0.5);
        assert_eq!(s.p0, 1.0);
        assert_eq!(s.attack1, 1.0);
        assert_eq!(s.attack0, 1.0);
        assert_eq!(s.n_records, 4);
    }

    #[test]
    fn summary_is_order_invariant() {
        let mut recs = vec![hh(1, 1, 1), hh(1, 0, 0), hh(0, 1, 0), hh(0, 1, 1), hh(1, 1, 0)];
        let a: InfectStudy<f64> = summarize_households(&recs).unwrap();
        recs.reverse();
        let b: InfectStudy<f64> = summarize_households(&recs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_cells_are_named() {
        let recs = [hh(1, 0, 0), hh(0, 1, 1)];
        let err = summarize_households::<f64>(&recs).unwrap_err().to_string();
        assert!(err.contains("z1=1, y1=1"), "{err}");
        let recs = [hh(1, 1, 0)];
        let err = summarize_households::<f64>(&recs).unwrap_err().to_string();
        assert!(err.contains("z1=0"), "{err}");
    }

    const CLUSTERS: &str = "cluster_id,individual_id,z,y,l_1,l_2\n\
        c1,a,1,2.5,1,0.25\n\
        c1,b,0,1.0,0,0.5\n\
        c1,c,0,0.75,1,1.5\n\
        c2,a,1,0.0,0,0\n\
        c2,b,1,3.5,1,2\n";

    #[test]
    fn parses_clusters_with_covariates() {
        let d: ClusterData<f64> = parse_clusters(CLUSTERS.as_bytes()).unwrap();
        assert_eq!(d.clusters().len(), 2);
        assert_eq!(d.covariate_dim(), 2);
        assert_eq!(d.clusters()[0].members[2].l, vec![1.0, 1.5]);
    }

    #[test]
    fn cluster_roundtrip_is_exact() {
        let d: ClusterData<f64> = parse_clusters(CLUSTERS.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_clusters(&d, &mut buf).unwrap();
        let d2: ClusterData<f64> = parse_clusters(buf.as_slice()).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn rejects_gappy_covariate_numbering() {
        let bad = "cluster_id,individual_id,z,y,l_1,l_3\nc1,a,1,2.5,1,0.25\nc1,b,0,1,0,1\n";
        let err = parse_clusters::<_, f64>(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("l_3"), "{err}");
    }

    #[test]
    fn feature_rows_summarize_peers() {
        let d: ClusterData<f64> = parse_clusters(CLUSTERS.as_bytes()).unwrap();
        let rows = cluster_features(&d, SummaryKind::CountOfOthers, SummaryKind::MeanOfOthers).unwrap();
        assert_eq!(rows.len(), 5);
        // c1/a: peers b and c are untreated.
        assert_eq!(rows[0].g, vec![0.0]);
        assert_eq!(rows[0].h, vec![0.5, 1.0]);
        // c1/b: one treated peer.
        assert_eq!(rows[1].g, vec![1.0]);
        // c2/a: single treated peer.
        assert_eq!(rows[3].g, vec![1.0]);
        assert_eq!(rows[3].g_scalar(), Some(1.0));

        let id_rows = cluster_features(&d, SummaryKind::Identity, SummaryKind::Identity).unwrap();
        assert_eq!(id_rows[0].g, vec![0.0, 0.0]);
        assert_eq!(id_rows[0].h, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(id_rows[0].g_scalar(), None);
    }

    #[test]
    fn all_untreated_pair_has_zero_summaries() {
        let text = "cluster_id,individual_id,z,y,l_1\nc1,a,0,1.0,1\nc1,b,0,2.0,0\n";
        let d: ClusterData<f64> = parse_clusters(text.as_bytes()).unwrap();
        let rows = cluster_features(&d, SummaryKind::MeanOfOthers, SummaryKind::CountOfOthers).unwrap();
        assert_eq!(rows[0].g, vec![0.0]);
        assert_eq!(rows[1].g, vec![0.0]);
    }

    #[test]
    fn single_member_cluster_is_rejected_for_features() {
        let text = "cluster_id,individual_id,z,y,l_1\nc1,a,0,1.0,1\n";
        let d: ClusterData<f64> = parse_clusters(text.as_bytes()).unwrap();
        let err = cluster_features(&d, SummaryKind::CountOfOthers, SummaryKind::CountOfOthers)
            .unwrap_err()
            .to_string();
        assert!(err.contains("single member"), "{err}");
    }

    #[test]
    fn comment_lines_are_ignored() {
        let with_comments = format!("# provenance line\n# another = 1\n{GROUPS}");
        let t = parse_group_summary(with_comments.as_bytes()).unwrap();
        assert_eq!(t.groups().len(), 5);
    }
}
