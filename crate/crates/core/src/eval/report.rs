use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean_std, welch_t_test};
use super::{CaseMetrics, RunMetrics};
use crate::error::{Error, Result};
use crate::training::Variant;

/// Mean and sample standard deviation over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Summary {
            mean,
            std,
            n: values.len(),
        })
    }

    fn cell(summary: Option<Summary>) -> String {
        summary.map_or("-".into(), |s| format!("{:.4} ± {:.4}", s.mean, s.std))
    }
}

/// Aggregates of one case over all runs of a variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: String,
    pub ade: Summary,
    pub fde: Summary,
    pub main_ade: Option<Summary>,
    pub main_fde: Option<Summary>,
    pub attention_correctness: Option<Summary>,
    /// Welch p-values of ADE/FDE against a reference variant.
    pub p_ade: Option<f64>,
    pub p_fde: Option<f64>,
}

/// Test metrics of every run of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Test scene ids, used to check that reports are comparable.
    pub test_ids: Vec<String>,
    pub runs: Vec<RunMetrics>,
}

const RAW_HEADER: &str = "variant,seed,case,scenes,ade,fde,main_ade,main_fde,attention_correctness";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl MetricReport {
    pub fn new(variant: Variant, seeds: Vec<u64>, test_ids: Vec<String>, runs: Vec<RunMetrics>) -> Result<Self> {
        if seeds.len() != runs.len() || runs.is_empty() {
            return Err(Error::invalid(format!(
                "report needs one seed per run, got {} seeds for {} runs",
                seeds.len(),
                runs.len()
            )));
        }
        Ok(MetricReport {
            variant,
            seeds,
            test_ids,
            runs,
        })
    }

    /// Case names present in any run, sorted.
    pub fn cases(&self) -> Vec<String> {
        let mut cases: Vec<String> = self.runs.iter().flat_map(|r| r.keys().cloned()).collect();
        cases.sort();
        cases.dedup();
        cases
    }

    /// Per-run values of one metric for `case`, skipping runs without it.
    pub fn raw(&self, case: &str, metric: impl Fn(&CaseMetrics) -> Option<f64>) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.get(case).and_then(&metric)).collect()
    }

    /// Per-case aggregates, with p-values when `reference` is given.
    pub fn summarize(&self, reference: Option<&MetricReport>) -> Vec<CaseSummary> {
        let p = |case: &str, metric: fn(&CaseMetrics) -> Option<f64>| {
            let r = reference?;
            welch_t_test(&self.raw(case, metric), &r.raw(case, metric)).ok().map(|w| w.p)
        };
        self.cases()
            .into_iter()
            .map(|case| CaseSummary {
                ade: Summary::of(&self.raw(&case, |m| Some(m.ade))).expect("case present in a run"),
                fde: Summary::of(&self.raw(&case, |m| Some(m.fde))).expect("case present in a run"),
                main_ade: Summary::of(&self.raw(&case, |m| m.main_ade)),
                main_fde: Summary::of(&self.raw(&case, |m| m.main_fde)),
                attention_correctness: Summary::of(&self.raw(&case, |m| m.attention_correctness)),
                p_ade: p(&case, |m| Some(m.ade)),
                p_fde: p(&case, |m| Some(m.fde)),
                case,
            })
            .collect()
    }

    /// One row per run and case.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{RAW_HEADER}\n");
        for (seed, run) in self.seeds.iter().zip(&self.runs) {
            for (case, m) in run {
                let _ = writeln!(
                    out,
                    "{},{seed},{case},{},{},{},{},{},{}",
                    self.variant,
                    m.scenes,
                    m.ade,
                    m.fde,
                    opt(m.main_ade),
                    opt(m.main_fde),
                    opt(m.attention_correctness)
                );
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let rows = vec![self.clone()];
        compare_variants(&rows).map(|c| c.to_table()).unwrap_or_default()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<MetricReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// One variant and case of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub label: String,
    pub summary: CaseSummary,
}

/// ADE/FDE of every variant and case; `ours` rows carry Welch p-values
/// against `s_attn` when both are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_variants(reports: &[MetricReport]) -> Result<Comparison> {
    let first = reports.first().ok_or_else(|| Error::invalid("no reports to compare"))?;
    for r in reports {
        if r.test_ids != first.test_ids {
            return Err(Error::invalid(format!(
                "variant {} was evaluated on a different test set than {}",
                r.variant, first.variant
            )));
        }
        if r.seeds != first.seeds {
            return Err(Error::invalid(format!(
                "variant {} used run seeds {:?}, {} used {:?}",
                r.variant, r.seeds, first.variant, first.seeds
            )));
        }
    }
    let reference = reports.iter().find(|r| r.variant == Variant::SAttn);
    let mut rows = Vec::new();
    for r in reports {
        let against = if r.variant == Variant::Ours { reference } else { None };
        let label = match r.variant {
            Variant::Correct => format!("{} (oracle)", r.variant),
            v => v.to_string(),
        };
        rows.extend(r.summarize(against).into_iter().map(|summary| ComparisonRow {
            variant: r.variant,
            label: label.clone(),
            summary,
        }));
    }
    rows.sort_by(|a, b| a.summary.case.cmp(&b.summary.case));
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "case,variant,runs,ade_mean,ade_std,fde_mean,fde_std,main_ade_mean,main_ade_std,attention_mean,p_ade,p_fde\n",
        );
        for row in &self.rows {
            let s = &row.summary;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.case,
                row.variant,
                s.ade.n,
                s.ade.mean,
                s.ade.std,
                s.fde.mean,
                s.fde.std,
                opt(s.main_ade.map(|m| m.mean)),
                opt(s.main_ade.map(|m| m.std)),
                opt(s.attention_correctness.map(|m| m.mean)),
                opt(s.p_ade),
                opt(s.p_fde)
            );
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = ["case", "variant", "runs", "ADE", "FDE", "main ADE", "attention", "p(ADE)", "p(FDE)"];
        let p = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.2e}"));
        let body: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|row| {
                let s = &row.summary;
                [
                    s.case.clone(),
                    row.label.clone(),
                    s.ade.n.to_string(),
                    Summary::cell(Some(s.ade)),
                    Summary::cell(Some(s.fde)),
                    Summary::cell(s.main_ade),
                    Summary::cell(s.attention_correctness),
                    p(s.p_ade),
                    p(s.p_fde),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&header.map(String::from));
        line(&widths.map(|w| "-".repeat(w)));
        for row in &body {
            line(row);
        }
        out
    }
}
