//! Aggregates over instance records and their markdown tables.
//!
//! Every number here is a pure function of the records, so a summary can be
//! recomputed from a results directory at any time.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use trival_core::{Difficulty, TokenTotals, TokenUsage};

use crate::classify::ErrorClass;
use crate::evaluate::{FailureClass, InstanceRecord};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub instances: usize,
    pub correct: usize,
    /// Percent.
    pub accuracy: f64,
}

impl Split {
    fn new(name: &str, instances: usize, correct: usize) -> Self {
        Self {
            name: name.to_string(),
            instances,
            correct,
            accuracy: percent(correct, instances),
        }
    }
}

/// Means over every branch run of every repeat.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessMetrics {
    pub runs: usize,
    /// Percent of runs whose first formulation verdict was accept, among
    /// runs that validated a formulation at all.
    pub pass_at_1: Option<f64>,
    pub semantic_iterations: f64,
    /// Formulation validation rounds per run.
    pub validation_iterations: f64,
    pub code_iterations: f64,
    pub execution_rounds: f64,
    pub backend_calls: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub failed: usize,
    pub code_generation: usize,
    pub variable_design: usize,
    pub constraint_expression: usize,
    /// Failed instances without a classification.
    pub unclassified: usize,
    /// Classifications that are a fallback, not a classifier answer.
    pub low_confidence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub suite: String,
    pub variant: String,
    pub repeats: u32,
    pub instances: usize,
    pub correct: usize,
    /// Percent of instances counted correct (best of all repeats).
    pub accuracy: f64,
    pub by_difficulty: Vec<Split>,
    pub by_family: Vec<Split>,
    pub process: ProcessMetrics,
    /// Pipeline tokens by stage; classifier calls are in `other`.
    pub tokens: TokenTotals,
    pub tokens_per_instance: f64,
    /// Percent of instances not solved, `100 - accuracy`.
    pub error_rate: f64,
    /// Percent of branch runs that ended without a usable solver result.
    pub execution_failure_rate: f64,
    pub failures: BTreeMap<FailureClass, usize>,
    pub errors: ErrorHistogram,
}

fn percent(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn summarize(suite: &str, variant: &str, repeats: u32, records: &[InstanceRecord]) -> Summary {
    let instances = records.len();
    let correct = records.iter().filter(|r| r.correct).count();

    let mut by_difficulty = Vec::new();
    for d in Difficulty::ALL {
        let group: Vec<_> = records.iter().filter(|r| r.difficulty == *d).collect();
        if !group.is_empty() {
            let c = group.iter().filter(|r| r.correct).count();
            by_difficulty.push(Split::new(d.as_str(), group.len(), c));
        }
    }
    let mut families: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = families.entry(r.family.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(r.correct);
    }
    let by_family = families
        .into_iter()
        .map(|(f, (n, c))| Split::new(f, n, c))
        .collect();

    let mut process = ProcessMetrics::default();
    let (mut sem, mut form, mut code, mut exec, mut calls) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut validated, mut first_accept) = (0, 0);
    let mut tokens = TokenTotals::default();
    let mut failures: BTreeMap<FailureClass, usize> = BTreeMap::new();
    let mut execution_failures = 0;
    for b in records.iter().flat_map(|r| r.branch_runs()) {
        process.runs += 1;
        let c = &b.counters;
        sem += f64::from(c.semantic_iterations);
        form += f64::from(c.formulation_iterations);
        code += f64::from(c.code_iterations);
        exec += f64::from(c.execution_rounds);
        calls += f64::from(c.backend_calls);
        if c.formulation_iterations > 0 {
            validated += 1;
            first_accept += usize::from(c.formulation_pass_at_1);
        }
        tokens.add(&b.tokens);
        if let Some(f) = b.failure {
            *failures.entry(f).or_default() += 1;
            execution_failures += usize::from(f.is_execution_error());
        }
    }
    process.semantic_iterations = mean(sem, process.runs);
    process.validation_iterations = mean(form, process.runs);
    process.code_iterations = mean(code, process.runs);
    process.execution_rounds = mean(exec, process.runs);
    process.backend_calls = mean(calls, process.runs);
    process.pass_at_1 = (validated > 0).then(|| percent(first_accept, validated));

    let mut errors = ErrorHistogram::default();
    for r in records.iter().filter(|r| !r.correct) {
        errors.failed += 1;
        match &r.error {
            None => errors.unclassified += 1,
            Some(e) => {
                tokens.other.add(e.tokens);
                errors.low_confidence += usize::from(e.low_confidence);
                match e.class {
                    ErrorClass::CodeGeneration => errors.code_generation += 1,
                    ErrorClass::VariableDesign => errors.variable_design += 1,
                    ErrorClass::ConstraintExpression => errors.constraint_expression += 1,
                }
            }
        }
    }

    let accuracy = percent(correct, instances);
    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        suite: suite.to_string(),
        variant: variant.to_string(),
        repeats,
        instances,
        correct,
        accuracy,
        by_difficulty,
        by_family,
        process,
        tokens,
        tokens_per_instance: mean(tokens.grand_total().total() as f64, instances),
        error_rate: if instances == 0 {
            0.0
        } else {
            100.0 - accuracy
        },
        execution_failure_rate: percent(
            execution_failures,
            records.iter().map(|r| r.branch_runs().count()).sum(),
        ),
        failures,
        errors,
    }
}

fn kilo(tokens: f64) -> String {
    if tokens >= 1000.0 {
        format!("{:.1}k", tokens / 1000.0)
    } else {
        format!("{tokens:.0}")
    }
}

fn usage_row(out: &mut String, name: &str, u: TokenUsage) {
    let _ = writeln!(
        out,
        "| {name} | {} | {} | {} |",
        u.prompt,
        u.completion,
        u.total()
    );
}

/// The human-readable report for one summary.
pub fn render_markdown(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Results: {} ({})\n", s.suite, s.variant);
    let _ = writeln!(
        out,
        "{} of {} instances solved, best of {} run{}.\n",
        s.correct,
        s.instances,
        s.repeats,
        if s.repeats == 1 { "" } else { "s" }
    );

    out.push_str("## Accuracy (%)\n\n");
    let mut header = String::from("|");
    let mut rule = String::from("|");
    let mut row = String::from("|");
    for split in &s.by_difficulty {
        let _ = write!(header, " {} |", capitalize(&split.name));
        rule.push_str("---:|");
        let _ = write!(row, " {:.1} |", split.accuracy);
    }
    let _ = writeln!(
        out,
        "{header} Overall |\n{rule}---:|\n{row} {:.1} |\n",
        s.accuracy
    );

    if s.by_family.len() > 1 {
        out.push_str("| Family | Instances | Correct | Accuracy (%) |\n|---|---:|---:|---:|\n");
        for f in &s.by_family {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.1} |",
                f.name, f.instances, f.correct, f.accuracy
            );
        }
        out.push('\n');
    }

    let p = &s.process;
    out.push_str("## Process\n\n");
    out.push_str("| Variant | Pass@1 (%) | Valid. Iters | Exec. Rounds | Semantic Iters | Code Iters | Calls/run |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {} | {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} |\n",
        s.variant,
        p.pass_at_1.map_or("n/a".to_string(), |v| format!("{v:.1}")),
        p.validation_iterations,
        p.execution_rounds,
        p.semantic_iterations,
        p.code_iterations,
        p.backend_calls,
    );

    out.push_str("## Tokens and errors\n\n");
    out.push_str("| Stage | Prompt | Completion | Total |\n|---|---:|---:|---:|\n");
    usage_row(&mut out, "semantic", s.tokens.semantic);
    usage_row(&mut out, "formulation", s.tokens.formulation);
    usage_row(&mut out, "code", s.tokens.code);
    usage_row(&mut out, "other", s.tokens.other);
    usage_row(&mut out, "**all**", s.tokens.grand_total());
    let _ = writeln!(
        out,
        "\nTokens per instance: {}. Error rate: {:.1}%. Runs without a usable solver result: {:.1}%.\n",
        kilo(s.tokens_per_instance),
        s.error_rate,
        s.execution_failure_rate
    );
    if !s.failures.is_empty() {
        out.push_str("| Run outcome | Runs |\n|---|---:|\n");
        for (f, n) in &s.failures {
            let _ = writeln!(out, "| {} | {n} |", f.as_str());
        }
        out.push('\n');
    }

    let e = &s.errors;
    out.push_str("## Error distribution on failed instances\n\n");
    out.push_str("| Variant | Total failed | Code | Variable | Constraint | Unclassified |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} | {} |",
        s.variant,
        e.failed,
        e.code_generation,
        e.variable_design,
        e.constraint_expression,
        e.unclassified
    );
    if e.low_confidence > 0 {
        let _ = writeln!(
            out,
            "\n{} classification(s) are fallbacks after the classifier gave no usable answer.",
            e.low_confidence
        );
    }
    if e.failed > e.unclassified {
        out.push_str("\nError classes were assigned by the model-based classifier.\n");
    }
    out
}

/// Compares `full` with a `baseline` variant (for example one without
/// validation).
pub fn render_comparison(full: &Summary, baseline: &Summary) -> String {
    let mut out = String::new();
    out.push_str("## Comparison\n\n| Variant | Accuracy (%) | Δ (pp) |\n|---|---:|---:|\n");
    let _ = writeln!(out, "| {} | {:.1} | n/a |", full.variant, full.accuracy);
    let _ = writeln!(
        out,
        "| {} | {:.1} | {:+.1} |\n",
        baseline.variant,
        baseline.accuracy,
        baseline.accuracy - full.accuracy
    );

    let (tf, tb) = (full.tokens_per_instance, baseline.tokens_per_instance);
    let saving = if tf > 0.0 {
        100.0 * (tf - tb) / tf
    } else {
        0.0
    };
    let increase = if full.error_rate > 0.0 {
        format!("{:.1}", baseline.error_rate / full.error_rate)
    } else {
        "n/a".into()
    };
    out.push_str("| Tokens (full / baseline) | Token saving (%) | Error (%) (full / baseline) | Error increase (×) |\n");
    out.push_str("|---|---:|---|---:|\n");
    let _ = writeln!(
        out,
        "| {} / {} | {saving:.1} | {:.1} / {:.1} | {increase} |\n",
        kilo(tf),
        kilo(tb),
        full.error_rate,
        baseline.error_rate
    );

    out.push_str(
        "| Variant | Total failed | Code | Variable | Constraint |\n|---|---:|---:|---:|---:|\n",
    );
    for s in [full, baseline] {
        let e = &s.errors;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            s.variant, e.failed, e.code_generation, e.variable_design, e.constraint_expression
        );
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::ClassifiedError;
    use crate::evaluate::{BranchRecord, RunRecord, TypeDirective};
    use trival_core::{Counters, VariableType};

    fn record(id: &str, difficulty: Difficulty, correct: bool) -> InstanceRecord {
        let branch = BranchRecord {
            directive: TypeDirective::AsStated,
            y_pred: Some(1.0),
            status: None,
            correct,
            failure: (!correct).then_some(FailureClass::WrongObjective),
            failure_detail: None,
            counters: Counters {
                formulation_iterations: 2,
                formulation_pass_at_1: correct,
                execution_rounds: 3,
                ..Default::default()
            },
            tokens: TokenTotals {
                code: TokenUsage {
                    prompt: 100,
                    completion: 10,
                },
                ..Default::default()
            },
            transcript: None,
        };
        InstanceRecord {
            id: id.into(),
            family: "f".into(),
            difficulty,
            variable_type: VariableType::Integral,
            reference_objective: 1.0,
            runs: vec![RunRecord {
                repeat: 1,
                branches: vec![branch],
                correct,
            }],
            correct,
            error: None,
        }
    }

    #[test]
    fn nine_of_ten() {
        let mut rs: Vec<_> = (0..9)
            .map(|i| record(&i.to_string(), Difficulty::Simple, true))
            .collect();
        rs.push(record("x", Difficulty::Simple, false));
        let s = summarize("t", "full", 1, &rs);
        assert!((s.accuracy - 90.0).abs() < 1e-12);
        assert!((s.error_rate - 10.0).abs() < 1e-12);
        assert_eq!(s.execution_failure_rate, 0.0);
        assert_eq!(s.failures[&FailureClass::WrongObjective], 1);
    }

    #[test]
    fn difficulty_splits() {
        let mut rs = Vec::new();
        for (d, c) in [
            (Difficulty::Simple, 5),
            (Difficulty::Medium, 4),
            (Difficulty::Hard, 3),
        ] {
            for i in 0..5 {
                rs.push(record(&format!("{d}-{i}"), d, i < c));
            }
        }
        let s = summarize("t", "full", 1, &rs);
        let acc: Vec<f64> = s.by_difficulty.iter().map(|x| x.accuracy).collect();
        assert_eq!(acc, [100.0, 80.0, 60.0]);
        assert!((s.accuracy - 80.0).abs() < 1e-12);
        assert_eq!(s.process.pass_at_1, Some(80.0));
        assert_eq!(s.process.execution_rounds, 3.0);
        let md = render_markdown(&s);
        assert!(md.contains("| Simple | Medium | Hard | Overall |"));
        assert!(md.contains("| 100.0 | 80.0 | 60.0 | 80.0 |"));
    }

    #[test]
    fn tokens_include_classifier() {
        let mut r = record("a", Difficulty::Hard, false);
        r.error = Some(ClassifiedError {
            class: ErrorClass::VariableDesign,
            low_confidence: false,
            justification: String::new(),
            tokens: TokenUsage {
                prompt: 7,
                completion: 3,
            },
        });
        let s = summarize("t", "full", 1, &[r]);
        assert_eq!(s.tokens.grand_total().total(), 120);
        assert_eq!(s.tokens.other.total(), 10);
        assert_eq!(s.errors.variable_design, 1);
        assert_eq!(s.tokens_per_instance, 120.0);
    }

    #[test]
    fn empty_suite() {
        let s = summarize("t", "full", 1, &[]);
        assert_eq!((s.accuracy, s.error_rate), (0.0, 0.0));
        render_markdown(&s);
    }

    #[test]
    fn comparison_table() {
        let full = summarize(
            "t",
            "full",
            1,
            &[
                record("a", Difficulty::Simple, true),
                record("b", Difficulty::Simple, false),
            ],
        );
        let mut base = full.clone();
        base.variant = "no-validation".into();
        base.accuracy = 0.0;
        base.error_rate = 100.0;
        base.tokens_per_instance = 55.0;
        let md = render_comparison(&full, &base);
        assert!(md.contains("| no-validation | 0.0 | -50.0 |"));
        assert!(md.contains("| 110 / 55 | 50.0 | 50.0 / 100.0 | 2.0 |"));
    }
}
