use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use super::{significance, summarize, Cell, Metric, MetricsRecord, Significance, SummaryCell};
use crate::resolve::{parse_command, Approach, Verb};

pub const CSV_HEADER: &str =
    "approach,situation,command,rep,success,time_s,inquiries,visits,llm_calls,llm_time_s,tokens";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected csv or markdown)")]
    UnknownFormat(String),
    #[error("no records to report")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn write_csv(records: &[MetricsRecord]) -> Result<String, ReportError> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer.write_record(CSV_HEADER.split(','))?;
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_csv(text: &str) -> Result<Vec<MetricsRecord>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let records = reader.deserialize().collect::<Result<Vec<_>, _>>()?;
    Ok(records)
}

pub fn emit_report(records: &[MetricsRecord], format: ReportFormat) -> Result<String, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => write_csv(records),
        ReportFormat::Markdown => Ok(markdown(records)),
    }
}

fn cells(records: &[MetricsRecord]) -> Vec<Cell> {
    let set: BTreeSet<Cell> = records.iter().map(|r| (r.approach, r.situation)).collect();
    set.into_iter().collect()
}

fn header(out: &mut String, first: &str, columns: &[String]) {
    let _ = writeln!(out, "| {first} | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|{}", "---:|".repeat(columns.len()));
}

fn cell_columns(cells: &[Cell]) -> Vec<String> {
    cells
        .iter()
        .map(|(a, s)| format!("{} {}", a.label(), s.label()))
        .collect()
}

fn fmt_value(metric: Metric, v: f64) -> String {
    match metric {
        Metric::SuccessRate => format!("{:.1}%", v * 100.0),
        _ => format!("{v:.2}"),
    }
}

fn summary_rows(
    out: &mut String,
    records: &[MetricsRecord],
    cells: &[Cell],
    metric: Metric,
    prefix: &str,
) {
    let summary = summarize(records, metric);
    let row = |f: &dyn Fn(&SummaryCell) -> String| {
        cells
            .iter()
            .map(|c| summary.get(c).map_or_else(|| "n/a".to_string(), f))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let _ = writeln!(
        out,
        "| {prefix}Mean | {} |",
        row(&|s| fmt_value(metric, s.mean))
    );
    let _ = writeln!(
        out,
        "| {prefix}SD | {} |",
        row(&|s| fmt_value(metric, s.sd))
    );
    let _ = writeln!(out, "| {prefix}n | {} |", row(&|s| s.n.to_string()));
}

fn markdown(records: &[MetricsRecord]) -> String {
    let cells = cells(records);
    let columns = cell_columns(&cells);
    let commands: BTreeSet<&str> = records.iter().map(|r| r.command.as_str()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "# Experiment report\n");
    let _ = writeln!(
        out,
        "{} episodes over {} cells and {} distinct commands.\n",
        records.len(),
        cells.len(),
        commands.len()
    );

    for metric in [
        Metric::SuccessRate,
        Metric::Time,
        Metric::Inquiries,
        Metric::Visits,
    ] {
        let _ = writeln!(out, "## {}\n", metric.title());
        header(&mut out, "", &columns);
        summary_rows(&mut out, records, &cells, metric, "");
        out.push('\n');
    }

    let _ = writeln!(out, "## Execution cost\n");
    header(&mut out, "", &columns);
    for (metric, prefix) in [
        (Metric::LlmCalls, "Model inquiries "),
        (Metric::LlmTime, "Model time (s) "),
        (Metric::Tokens, "Generated tokens "),
    ] {
        summary_rows(&mut out, records, &cells, metric, prefix);
    }
    out.push('\n');

    verb_table(&mut out, records);
    significance_tables(&mut out, records, &cells);

    let _ = writeln!(out, "## Notes\n");
    let _ = writeln!(
        out,
        "- SD is the sample standard deviation (n - 1); cells with one value report 0."
    );
    let _ = writeln!(
        out,
        "- Completion time is averaged over successful episodes only."
    );
    let _ = writeln!(
        out,
        "- Significance uses the two-sided Mann-Whitney U test: exact permutation distribution when both cells together hold at most {} values, normal approximation with tie correction otherwise. `*` p < 0.05, `**` p < 0.01, n/a when a cell has fewer than two values.",
        super::stats::EXACT_LIMIT
    );
    let _ = writeln!(
        out,
        "- The command set has {} distinct commands.",
        commands.len()
    );
    out
}

fn verb_table(out: &mut String, records: &[MetricsRecord]) {
    let approaches: BTreeSet<Approach> = records.iter().map(|r| r.approach).collect();
    let columns: Vec<String> = approaches.iter().map(|a| a.label().to_string()).collect();
    let _ = writeln!(
        out,
        "## Completion time by verb (s, successful episodes, both situations)\n"
    );
    header(out, "Verb", &columns);
    for (verb, name) in [
        (Verb::Find, "Find"),
        (Verb::Take, "Take"),
        (Verb::Bring, "Bring"),
    ] {
        let row: Vec<String> = approaches
            .iter()
            .map(|&a| {
                let values: Vec<f64> = records
                    .iter()
                    .filter(|r| r.approach == a && r.success)
                    .filter(|r| parse_command(&r.command).is_ok_and(|c| c.verb == verb))
                    .map(|r| r.time_s)
                    .collect();
                SummaryCell::from_values(&values).map_or_else(
                    || "n/a".to_string(),
                    |s| format!("{:.2} ± {:.2} ({})", s.mean, s.sd, s.n),
                )
            })
            .collect();
        let _ = writeln!(out, "| {name} | {} |", row.join(" | "));
    }
    out.push('\n');
}

fn significance_tables(out: &mut String, records: &[MetricsRecord], cells: &[Cell]) {
    let mut pairs: Vec<(Cell, Cell)> = Vec::new();
    for (i, &a) in cells.iter().enumerate() {
        for &b in &cells[i + 1..] {
            if a.1 == b.1 || a.0 == b.0 {
                pairs.push((a, b));
            }
        }
    }
    let name = |(a, s): Cell| format!("{} {}", a.label(), s.label());
    for metric in [Metric::Inquiries, Metric::Visits, Metric::Time] {
        let _ = writeln!(out, "## Significance: {}\n", metric.title());
        header(out, "Comparison", &["p".to_string(), "".to_string()]);
        for &(a, b) in &pairs {
            let sig = significance(records, a, b, metric);
            let p = match sig {
                Significance::NotComputable => "n/a".to_string(),
                Significance::Tested(t) => format!("{:.4}", t.p),
            };
            let _ = writeln!(
                out,
                "| {} vs {} | {p} | {} |",
                name(a),
                name(b),
                sig.stars()
            );
        }
        out.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolve::Situation;

    fn record(
        approach: Approach,
        situation: Situation,
        rep: usize,
        inquiries: usize,
    ) -> MetricsRecord {
        MetricsRecord {
            approach,
            situation,
            command: "Find an apple.".into(),
            rep,
            success: true,
            time_s: 12.5 + rep as f64 / 3.0,
            inquiries,
            visits: 1,
            llm_calls: 0,
            llm_time_s: 0.0,
            tokens: 0,
        }
    }

    fn sample() -> Vec<MetricsRecord> {
        let mut v = Vec::new();
        for rep in 0..5 {
            v.push(record(Approach::Okb, Situation::WithoutDefaults, rep, 1));
            v.push(record(Approach::OkbLlm, Situation::WithoutDefaults, rep, 0));
        }
        v
    }

    #[test]
    fn csv_round_trip() {
        let records = sample();
        let text = write_csv(&records).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), records.len() + 1);
        assert_eq!(read_csv(&text).unwrap(), records);
    }

    #[test]
    fn empty_and_unknown() {
        assert!(matches!(
            emit_report(&[], ReportFormat::Csv),
            Err(ReportError::Empty)
        ));
        assert!(matches!(
            "pdf".parse::<ReportFormat>(),
            Err(ReportError::UnknownFormat(_))
        ));
    }

    #[test]
    fn markdown_structure() {
        let md = emit_report(&sample(), ReportFormat::Markdown).unwrap();
        for title in [
            "## Task completion rate",
            "## Task completion time",
            "## Number of user inquiries",
            "## Number of furniture pieces visited",
            "## Execution cost",
        ] {
            assert_eq!(md.matches(title).count(), 1, "{title}");
        }
        assert!(md.contains("| OKB without_defaults vs OKB+LLM without_defaults | 0.0079 | ** |"));
    }
}
