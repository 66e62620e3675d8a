use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{wilson_interval, ConfidenceInterval, StatsError};
use crate::metrics::{pct, round_half_up};
use crate::task::SuiteEntry;

/// 2×2 counts for two annotators: `a` both positive, `b` only the first,
/// `c` only the second, `d` both negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgreementTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl AgreementTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    fn n(&self) -> Result<f64, StatsError> {
        match self.total() {
            0 => Err(StatsError::EmptyTable),
            t => Ok(t as f64),
        }
    }

    pub fn raw_agreement(&self) -> Result<f64, StatsError> {
        Ok((self.a + self.d) as f64 / self.n()?)
    }

    pub fn cohen_kappa(&self) -> Result<f64, StatsError> {
        let n = self.n()?;
        let po = (self.a + self.d) as f64 / n;
        let p1 = (self.a + self.b) as f64 / n;
        let p2 = (self.a + self.c) as f64 / n;
        let pe = p1 * p2 + (1.0 - p1) * (1.0 - p2);
        if (1.0 - pe).abs() < 1e-15 {
            return Err(StatsError::Degenerate);
        }
        Ok((po - pe) / (1.0 - pe))
    }

    pub fn gwet_ac1(&self) -> Result<f64, StatsError> {
        let n = self.n()?;
        let po = (self.a + self.d) as f64 / n;
        let pi = ((self.a + self.b) as f64 / n + (self.a + self.c) as f64 / n) / 2.0;
        let pe = 2.0 * pi * (1.0 - pi);
        Ok((po - pe) / (1.0 - pe))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    /// The masked tools really were required.
    Critical,
    /// The task stays solvable with what is left.
    Substitutable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub task_id: String,
    pub judgment: Judgment,
    #[serde(default)]
    pub note: String,
}

/// Reads a CSV judgment file with header `task_id,judgment,note`.
pub fn parse_judgments(text: &str) -> Result<Vec<JudgmentRecord>, StatsError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<JudgmentRecord>().enumerate() {
        let rec = row.map_err(|e| StatsError::Judgments(format!("row {}: {e}", i + 2)))?;
        if !seen.insert(rec.task_id.clone()) {
            return Err(StatsError::Judgments(format!("duplicate task_id {}", rec.task_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_judgments(records: &[JudgmentRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

fn by_id(records: &[JudgmentRecord]) -> BTreeMap<&str, Judgment> {
    records.iter().map(|r| (r.task_id.as_str(), r.judgment)).collect()
}

fn check_same_ids(first: &[JudgmentRecord], second: &[JudgmentRecord]) -> Result<(), StatsError> {
    let one = by_id(first);
    let two = by_id(second);
    let only_first: Vec<String> = one.keys().filter(|k| !two.contains_key(*k)).map(|k| k.to_string()).collect();
    let only_second: Vec<String> = two.keys().filter(|k| !one.contains_key(*k)).map(|k| k.to_string()).collect();
    if only_first.is_empty() && only_second.is_empty() {
        Ok(())
    } else {
        Err(StatsError::MismatchedIds { only_first, only_second })
    }
}

fn table_for<'a>(ids: impl Iterator<Item = &'a str>, one: &BTreeMap<&str, Judgment>, two: &BTreeMap<&str, Judgment>) -> AgreementTable {
    let mut t = AgreementTable::default();
    for id in ids {
        match (one[id], two[id]) {
            (Judgment::Critical, Judgment::Critical) => t.a += 1,
            (Judgment::Critical, Judgment::Substitutable) => t.b += 1,
            (Judgment::Substitutable, Judgment::Critical) => t.c += 1,
            (Judgment::Substitutable, Judgment::Substitutable) => t.d += 1,
        }
    }
    t
}

/// Cross-tabulates two annotators, "critical" being the positive class.
/// Both files must judge the same tasks.
pub fn derive_table(first: &[JudgmentRecord], second: &[JudgmentRecord]) -> Result<AgreementTable, StatsError> {
    check_same_ids(first, second)?;
    let one = by_id(first);
    let two = by_id(second);
    Ok(table_for(one.keys().copied(), &one, &two))
}

/// One row of the sheet handed to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub task_id: String,
    pub dataset: String,
    pub query: String,
    /// `;`-separated.
    pub masked_tools: String,
    /// `;`-separated.
    pub remaining_pool: String,
}

pub fn annotation_rows(entries: &[SuiteEntry]) -> Vec<AnnotationRow> {
    entries
        .iter()
        .map(|e| AnnotationRow {
            task_id: e.task.task_id.clone(),
            dataset: e.task.dataset_id.clone(),
            query: e.task.query.clone(),
            masked_tools: e.masked_tools.iter().cloned().collect::<Vec<_>>().join(";"),
            remaining_pool: e.task.tool_pool.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

pub fn write_annotation_sheet(rows: &[AnnotationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub table: AgreementTable,
    pub raw_agreement: f64,
    pub cohen_kappa: Option<f64>,
    pub gwet_ac1: Option<f64>,
}

impl AgreementStats {
    fn from_table(table: AgreementTable) -> Result<Self, StatsError> {
        Ok(Self {
            table,
            raw_agreement: table.raw_agreement()?,
            cohen_kappa: table.cohen_kappa().ok(),
            gwet_ac1: table.gwet_ac1().ok(),
        })
    }
}

/// Precision of the masking in one stratum: samples both annotators judged
/// critical, over samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub stratum: String,
    pub n: u64,
    pub correct: u64,
    pub precision: ConfidenceInterval,
    pub agreement: AgreementStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub confidence: f64,
    pub strata: Vec<StratumRow>,
    pub pooled: StratumRow,
}

impl StatsReport {
    /// `strata` maps task ids to their dataset; ids it does not cover go to
    /// an `unassigned` stratum. Without it only the pooled row is filled.
    pub fn build(
        first: &[JudgmentRecord],
        second: &[JudgmentRecord],
        strata: Option<&BTreeMap<String, String>>,
        confidence: f64,
    ) -> Result<Self, StatsError> {
        check_same_ids(first, second)?;
        let one = by_id(first);
        let two = by_id(second);
        let row = |name: &str, ids: &[&str]| -> Result<StratumRow, StatsError> {
            let table = table_for(ids.iter().copied(), &one, &two);
            let n = table.total();
            Ok(StratumRow {
                stratum: name.to_string(),
                n,
                correct: table.a,
                precision: wilson_interval(table.a, n, confidence)?,
                agreement: AgreementStats::from_table(table)?,
            })
        };
        let all: Vec<&str> = one.keys().copied().collect();
        let mut rows = Vec::new();
        if let Some(map) = strata {
            let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for id in &all {
                let s = map.get(*id).map_or("unassigned", String::as_str);
                groups.entry(s).or_default().push(id);
            }
            for (s, ids) in groups {
                rows.push(row(s, &ids)?);
            }
        }
        Ok(Self {
            confidence,
            strata: rows,
            pooled: row("pooled", &all)?,
        })
    }

    pub fn render_text(&self) -> String {
        let level = pct(self.confidence);
        let mut out = String::new();
        let _ = writeln!(out, "Masking precision ({level}% Wilson CI)");
        let _ = writeln!(out, "{:<14} | {:>5} | {:>7} | {:>9} | {:<16}", "Dataset", "n", "Correct", "Precision", "CI");
        for r in self.strata.iter().chain(std::iter::once(&self.pooled)) {
            let (lo, hi) = r.precision.rounded(3);
            let _ = writeln!(
                out,
                "{:<14} | {:>5} | {:>7} | {:>9.3} | [{lo:.3}, {hi:.3}]",
                r.stratum,
                r.n,
                r.correct,
                round_half_up(r.precision.point, 3),
            );
        }
        out.push('\n');
        let _ = writeln!(out, "Inter-annotator agreement");
        let _ = writeln!(out, "{:<14} | {:>9} | {:>7} | {:>7}", "Dataset", "Raw (%)", "kappa", "AC1");
        let coef = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.3}", round_half_up(x, 3)));
        for r in self.strata.iter().chain(std::iter::once(&self.pooled)) {
            let _ = writeln!(
                out,
                "{:<14} | {:>9} | {:>7} | {:>7}",
                r.stratum,
                pct(r.agreement.raw_agreement),
                coef(r.agreement.cohen_kappa),
                coef(r.agreement.gwet_ac1),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coefficient_examples() {
        let t = AgreementTable::new(90, 2, 3, 5);
        assert_eq!(t.raw_agreement().unwrap(), 0.95);
        assert!((t.cohen_kappa().unwrap() - 0.6398).abs() < 1e-4);
        assert!((t.gwet_ac1().unwrap() - 0.9419).abs() < 1e-4);
        let perfect = AgreementTable::new(10, 0, 0, 10);
        assert_eq!(perfect.raw_agreement().unwrap(), 1.0);
        assert_eq!(perfect.cohen_kappa().unwrap(), 1.0);
        assert_eq!(perfect.gwet_ac1().unwrap(), 1.0);
        // independent raters at 50/50: po = pe = 0.5
        assert_eq!(AgreementTable::new(1, 1, 1, 1).cohen_kappa().unwrap(), 0.0);
        assert_eq!(AgreementTable::new(5, 0, 0, 0).cohen_kappa(), Err(StatsError::Degenerate));
        assert_eq!(AgreementTable::default().raw_agreement(), Err(StatsError::EmptyTable));
    }

    #[test]
    fn ac1_resists_skewed_prevalence() {
        for a in [50u64, 100, 200, 400] {
            for (b, c) in [(1, 1), (2, 1), (1, 3)] {
                let t = AgreementTable::new(a, b, c, 1);
                assert!(t.gwet_ac1().unwrap() >= t.cohen_kappa().unwrap(), "{t:?}");
            }
        }
    }

    fn judgments(spec: &[(&str, Judgment)]) -> Vec<JudgmentRecord> {
        spec.iter()
            .map(|(id, j)| JudgmentRecord {
                task_id: id.to_string(),
                judgment: *j,
                note: String::new(),
            })
            .collect()
    }

    #[test]
    fn judgments_round_trip_and_tabulate() {
        use Judgment::{Critical as C, Substitutable as S};
        let one = judgments(&[("t1", C), ("t2", C), ("t3", S)]);
        let two = judgments(&[("t1", C), ("t2", S), ("t3", S)]);
        let text = write_judgments(&one);
        assert!(text.starts_with("task_id,judgment,note\n"));
        assert_eq!(parse_judgments(&text).unwrap(), one);
        assert_eq!(derive_table(&one, &two).unwrap(), AgreementTable::new(1, 1, 0, 1));
        let other = judgments(&[("t9", C)]);
        assert!(matches!(derive_table(&one, &other), Err(StatsError::MismatchedIds { .. })));
        assert!(parse_judgments("task_id,judgment,note\nt1,maybe,\n").is_err());
    }

    #[test]
    fn report_splits_by_stratum() {
        use Judgment::{Critical as C, Substitutable as S};
        let one = judgments(&[("a1", C), ("a2", C), ("b1", C)]);
        let two = judgments(&[("a1", C), ("a2", S), ("b1", C)]);
        let strata: BTreeMap<String, String> =
            [("a1", "A"), ("a2", "A"), ("b1", "B")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let report = StatsReport::build(&one, &two, Some(&strata), 0.95).unwrap();
        assert_eq!(report.strata.len(), 2);
        assert_eq!((report.pooled.n, report.pooled.correct), (3, 2));
        assert!(report.render_text().contains("pooled"));
    }

    proptest! {
        #[test]
        fn kappa_never_exceeds_raw_agreement(a in 0u64..200, b in 0u64..50, c in 0u64..50, d in 0u64..200) {
            let t = AgreementTable::new(a, b, c, d);
            prop_assume!(t.total() > 0);
            if let Ok(k) = t.cohen_kappa() {
                prop_assert!(k <= t.raw_agreement().unwrap() + 1e-12);
            }
        }

        #[test]
        fn perfect_agreement_gives_one(a in 1u64..200, d in 1u64..200) {
            let t = AgreementTable::new(a, 0, 0, d);
            prop_assert!((t.cohen_kappa().unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((t.gwet_ac1().unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
