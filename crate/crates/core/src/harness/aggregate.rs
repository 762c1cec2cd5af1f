//! Grouping of stored trials into summary rows, and their rendering.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use super::store::StoredTrial;
use crate::dataset::Operation;
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::stats::{summarize, ColumnSummary, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Experiment,
    Model,
    Op,
    Range,
    InputSize,
    SubsetRatio,
    OverlapRatio,
    HiddenSize,
}

impl GroupKey {
    pub const ALL: [GroupKey; 8] = [
        GroupKey::Experiment,
        GroupKey::Op,
        GroupKey::Model,
        GroupKey::Range,
        GroupKey::InputSize,
        GroupKey::SubsetRatio,
        GroupKey::OverlapRatio,
        GroupKey::HiddenSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Experiment => "experiment",
            GroupKey::Model => "model",
            GroupKey::Op => "op",
            GroupKey::Range => "range",
            GroupKey::InputSize => "input_size",
            GroupKey::SubsetRatio => "subset_ratio",
            GroupKey::OverlapRatio => "overlap_ratio",
            GroupKey::HiddenSize => "hidden_size",
        }
    }

    fn value(self, t: &StoredTrial) -> KeyValue {
        let d = &t.descriptor;
        match self {
            GroupKey::Experiment => KeyValue::Text(d.experiment.clone()),
            GroupKey::Model => {
                let rank = ModelKind::ALL.iter().position(|&m| m == d.model).unwrap_or(0);
                KeyValue::Ranked(rank, d.model.name().to_string())
            }
            GroupKey::Op => {
                let rank = Operation::ALL.iter().position(|&o| o == d.op).unwrap_or(0);
                KeyValue::Ranked(rank, d.op.symbol().to_string())
            }
            GroupKey::Range => KeyValue::Text(format!("{} -> {}", d.interp, d.extrap)),
            GroupKey::InputSize => KeyValue::Number(d.input_size as f64),
            GroupKey::SubsetRatio => KeyValue::Number(d.subset_ratio),
            GroupKey::OverlapRatio => KeyValue::Number(d.overlap_ratio),
            GroupKey::HiddenSize => KeyValue::Number(d.hidden_size as f64),
        }
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let alias = match s {
            "d" => "input_size",
            "s" => "subset_ratio",
            "o" => "overlap_ratio",
            "hidden" => "hidden_size",
            other => other,
        };
        GroupKey::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::Argument(format!("unknown group key '{s}'")))
    }
}

/// Parses a comma-separated key list such as `op,model`.
pub fn parse_keys(s: &str) -> Result<Vec<GroupKey>> {
    let keys: Vec<GroupKey> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if keys.is_empty() {
        return Err(Error::Argument("at least one group key is required".into()));
    }
    Ok(keys)
}

/// A group label; sorts numerically, by a fixed rank, or lexically.
#[derive(Debug, Clone, PartialEq)]
pub enum KeyValue {
    Number(f64),
    Ranked(usize, String),
    Text(String),
}

impl KeyValue {
    fn as_f64(&self) -> Option<f64> {
        match self {
            KeyValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        match (self, other) {
            (KeyValue::Number(a), KeyValue::Number(b)) => a.total_cmp(b),
            (KeyValue::Ranked(a, _), KeyValue::Ranked(b, _)) => a.cmp(b),
            (a, b) => a.to_string().cmp(&b.to_string()),
        }
    }
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyValue::Number(v) => write!(f, "{v}"),
            KeyValue::Ranked(_, s) | KeyValue::Text(s) => f.write_str(s),
        }
    }
}

impl Serialize for KeyValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KeyValue::Number(v) => s.serialize_f64(*v),
            KeyValue::Ranked(_, t) | KeyValue::Text(t) => s.serialize_str(t),
        }
    }
}

/// Group labels in the requested key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Group(pub Vec<(GroupKey, KeyValue)>);

impl Group {
    pub fn get(&self, key: GroupKey) -> Option<&KeyValue> {
        self.0.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        for ((_, a), (_, b)) in self.0.iter().zip(&other.0) {
            match a.cmp_key(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

impl Serialize for Group {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k.name(), v)?;
        }
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub group: Group,
    pub summary: SummaryRow,
}

/// One summary row per distinct combination of `keys`, sorted by group.
pub fn aggregate(records: &[StoredTrial], keys: &[GroupKey], confidence: f64) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::Argument("no trial records to aggregate".into()));
    }
    if keys.is_empty() {
        return Err(Error::Argument("at least one group key is required".into()));
    }
    // a record present twice (e.g. copied stores) counts once
    let mut unique: BTreeMap<&str, &StoredTrial> = BTreeMap::new();
    for r in records {
        unique.entry(r.descriptor.trial_id.as_str()).or_insert(r);
    }
    let mut groups: Vec<(Group, Vec<crate::stats::Outcome>)> = Vec::new();
    for r in unique.values() {
        let g = Group(keys.iter().map(|&k| (k, k.value(r))).collect());
        match groups.iter_mut().find(|(h, _)| *h == g) {
            Some((_, v)) => v.push(r.outcome()),
            None => groups.push((g, vec![r.outcome()])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp_key(&b.0));
    groups
        .into_iter()
        .map(|(group, outcomes)| {
            Ok(AggregateRow {
                group,
                summary: summarize(&outcomes, confidence)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            _ => Err(Error::Argument(format!("unknown format '{s}' (csv, json, markdown)"))),
        }
    }
}

pub fn render(rows: &[AggregateRow], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => to_csv(rows),
        OutputFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        OutputFormat::Markdown => Ok(to_markdown(rows)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn column_fields(c: &Option<ColumnSummary>) -> [String; 3] {
    match c {
        Some(c) => [c.mean.to_string(), opt(c.ci_low), opt(c.ci_high)],
        None => Default::default(),
    }
}

pub fn to_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let Some(first) = rows.first() else {
        return Ok(String::new());
    };
    let mut header: Vec<&str> = first.group.0.iter().map(|(k, _)| k.name()).collect();
    header.extend([
        "trials",
        "successes",
        "failures",
        "errored",
        "success_rate",
        "success_ci_low",
        "success_ci_high",
        "solved_at_mean",
        "solved_at_ci_low",
        "solved_at_ci_high",
        "sparsity_mean",
        "sparsity_ci_low",
        "sparsity_ci_high",
    ]);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let s = &r.summary;
        let mut rec: Vec<String> = r.group.0.iter().map(|(_, v)| v.to_string()).collect();
        rec.extend([s.trials, s.successes, s.failures, s.errored].map(|v| v.to_string()));
        match &s.success_rate {
            Some(b) => rec.extend([b.rate, b.ci_low, b.ci_high].map(|v| v.to_string())),
            None => rec.extend([String::new(), String::new(), String::new()]),
        }
        rec.extend(column_fields(&s.solved_at));
        rec.extend(column_fields(&s.sparsity_error));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `1.6·10^6` style with two significant digits.
fn sci(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return "inf".into();
    }
    let s = format!("{v:.1e}");
    match s.split_once('e') {
        Some((m, "0")) => m.to_string(),
        Some((m, e)) => format!("{m}e{e}"),
        None => s,
    }
}

fn mean_cell(c: &Option<ColumnSummary>) -> String {
    match c {
        None => "---".into(),
        Some(c) => match (c.ci_low, c.ci_high) {
            (Some(lo), Some(hi)) => format!("{} (+{} / -{})", sci(c.mean), sci(hi - c.mean), sci(c.mean - lo)),
            _ => format!("{} (no CI)", sci(c.mean)),
        },
    }
}

pub fn to_markdown(rows: &[AggregateRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut header: Vec<String> = first.group.0.iter().map(|(k, _)| k.name().to_string()).collect();
    header.extend(["Success Rate".into(), "Solved at".into(), "Sparsity error".into(), "n".into()]);
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        let s = &r.summary;
        let mut cells: Vec<String> = r.group.0.iter().map(|(_, v)| v.to_string()).collect();
        cells.push(match &s.success_rate {
            Some(b) => {
                let (up, down) = b.percent_offsets();
                format!("{}% (+{up}% / -{down}%)", (100.0 * b.rate).round())
            }
            None => "---".into(),
        });
        cells.push(mean_cell(&s.solved_at));
        cells.push(mean_cell(&s.sparsity_error));
        cells.push(if s.errored > 0 {
            format!("{} ({} errored)", s.trials, s.errored)
        } else {
            s.trials.to_string()
        });
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub x: f64,
    pub n: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Success rate against the swept parameter, one series per remaining group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotSeries {
    pub x: &'static str,
    pub labels: Group,
    pub points: Vec<PlotPoint>,
}

/// Splits aggregated rows into series along the numeric key `x`.
pub fn plot_series(rows: &[AggregateRow], x: GroupKey) -> Result<Vec<PlotSeries>> {
    let mut out: Vec<PlotSeries> = Vec::new();
    for r in rows {
        let xv = r
            .group
            .get(x)
            .and_then(KeyValue::as_f64)
            .ok_or_else(|| Error::Argument(format!("'{}' is not a numeric group key of these rows", x.name())))?;
        let Some(b) = r.summary.success_rate else { continue };
        let labels = Group(r.group.0.iter().filter(|(k, _)| *k != x).cloned().collect());
        let point = PlotPoint {
            x: xv,
            n: b.trials as usize,
            success_rate: b.rate,
            ci_low: b.ci_low,
            ci_high: b.ci_high,
        };
        match out.iter_mut().find(|s| s.labels == labels) {
            Some(s) => s.points.push(point),
            None => out.push(PlotSeries {
                x: x.name(),
                labels,
                points: vec![point],
            }),
        }
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_parse_with_aliases() {
        assert_eq!(parse_keys("op, model").unwrap(), vec![GroupKey::Op, GroupKey::Model]);
        assert_eq!(parse_keys("d,s,o,hidden").unwrap()[3], GroupKey::HiddenSize);
        assert!(parse_keys("").is_err());
        assert!(parse_keys("op,colour").is_err());
        assert_eq!("md".parse::<OutputFormat>().unwrap(), OutputFormat::Markdown);
        assert!("xml".parse::<OutputFormat>().is_err());
    }

    #[test]
    fn scientific_cells() {
        assert_eq!(sci(1.6e6), "1.6e6");
        assert_eq!(sci(3.0), "3.0");
        assert_eq!(sci(0.0), "0");
        assert_eq!(sci(4.2e-3), "4.2e-3");
    }

    #[test]
    fn values_order_by_kind() {
        let n = |v| KeyValue::Number(v);
        assert_eq!(n(10.0).cmp_key(&n(9.0)), Ordering::Greater);
        let r = |i, s: &str| KeyValue::Ranked(i, s.into());
        assert_eq!(r(0, "z").cmp_key(&r(1, "a")), Ordering::Less);
    }
}
