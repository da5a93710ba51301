use proptest::prelude::*;
use trival_core::testkit::{self, AdversaryBackend, ScriptBuilder};
use trival_core::{
    token_totals, AblationFlags, CaptureBackend, Event, ExecutionReport, ExecutionStatus, Executor,
    Pipeline, PipelineOutcome, PipelineSettings, PromptPack, ScriptedBackend, ScriptedExecutor,
    Stage,
};

fn settings(ablation: &str) -> PipelineSettings {
    PipelineSettings {
        ablation: AblationFlags::parse_list(ablation).unwrap(),
        ..Default::default()
    }
}

fn run_with(
    script: &ScriptBuilder,
    executor: &dyn Executor,
    settings: &PipelineSettings,
) -> (PipelineOutcome, CaptureBackend<ScriptedBackend>) {
    let backend = CaptureBackend::new(script.build());
    let prompts = PromptPack::builtin();
    let outcome = Pipeline::new(&backend, executor, &prompts, settings)
        .unwrap()
        .run(&testkit::knapsack_problem(), "r1");
    (outcome, backend)
}

fn run(
    script: &ScriptBuilder,
    executor: &dyn Executor,
) -> (PipelineOutcome, CaptureBackend<ScriptedBackend>) {
    run_with(script, executor, &settings("full"))
}

fn ok() -> ScriptedExecutor {
    ScriptedExecutor::always(ExecutionReport::executable(4.0))
}

fn runtime_error() -> ExecutionReport {
    ExecutionReport::failure(
        ExecutionStatus::RuntimeError,
        "NameError: name 'x' is not defined",
    )
}

/// Every queued reply was consumed and its tokens all landed in the transcript.
fn assert_script_consumed(
    script: &ScriptBuilder,
    outcome: &PipelineOutcome,
    backend: &CaptureBackend<ScriptedBackend>,
) {
    assert_eq!(
        backend.inner().remaining(),
        0,
        "unused replies left in the script"
    );
    assert_eq!(
        outcome.transcript.counters.backend_calls as usize,
        script.entries().len()
    );
    assert_eq!(
        token_totals(&outcome.transcript).grand_total().total(),
        script.total_tokens()
    );
}

#[test]
fn all_accept_takes_one_round_per_stage() {
    let script = ScriptBuilder::new().all_accept();
    let exec = ok();
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(
        (
            c.semantic_iterations,
            c.formulation_iterations,
            c.code_iterations
        ),
        (1, 1, 1)
    );
    assert!(c.formulation_pass_at_1);
    assert_eq!(c.execution_rounds, 1);
    assert_eq!(c.expert_calls, 4);
    assert_eq!(c.selector_calls, 1);
    assert_eq!(c.code_generations, 1);
    assert_eq!(c.formulation_lineage, 1);
    assert_eq!(c.agent_steps, 2);
    assert!(out.report_is_current());
    assert!(out.code_verdict.as_ref().unwrap().is_accept());
    assert_eq!(exec.calls(), 1);
    assert_script_consumed(&script, &out, &backend);

    // stage order of validation events
    let stages: Vec<Stage> = out
        .transcript
        .events
        .iter()
        .filter(|e| e.event.is_validation())
        .filter_map(|e| e.event.stage())
        .collect();
    assert_eq!(
        stages,
        vec![Stage::Semantic, Stage::Formulation, Stage::Code]
    );
}

#[test]
fn one_revision_per_stage_takes_two_rounds_each() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .verdict(Stage::Semantic, "REVISE: a capacity fact is missing")
        .semantic_revise(&testkit::specification(4))
        .accept(Stage::Semantic)
        .experts()
        .select(2)
        .verdict(
            Stage::Formulation,
            "PARTIAL_REVISE: capacity should be 4 kg",
        )
        .formulation_revise(&testkit::formulation("fixed"))
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .verdict(Stage::Code, "CODE_REVISE: objective sign flipped")
        .code_revise(&testkit::program(2))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(
        (
            c.semantic_iterations,
            c.formulation_iterations,
            c.code_iterations
        ),
        (2, 2, 2)
    );
    assert!(!c.formulation_pass_at_1);
    assert_eq!(c.semantic_revisions, 1);
    assert_eq!(c.formulation_partial_revisions, 1);
    assert_eq!(c.code_revisions, 1);
    assert_eq!(c.execution_rounds, 2);
    assert_eq!(out.specification.as_ref().unwrap().facts.len(), 4);
    assert_eq!(
        out.formulation.as_ref().unwrap().rationale,
        "written by fixed"
    );
    assert_eq!(out.program.as_ref().unwrap().source, testkit::program(2));
    assert_eq!(out.program.as_ref().unwrap().revision, 2);
    assert!(out.report_is_current());
    assert_script_consumed(&script, &out, &backend);
    // the selector picked candidate 2
    let sel = out
        .transcript
        .events_named("formulation.select")
        .next()
        .unwrap();
    assert!(matches!(
        sel,
        Event::FormulationSelect {
            index: 2,
            fallback: false,
            ..
        }
    ));
}

#[test]
fn reformulation_reruns_every_expert_with_feedback() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .verdict(
            Stage::Formulation,
            "REFORMULATE: model items as a flow instead",
        )
        .experts()
        .select(3)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(c.expert_calls, 8);
    assert_eq!(c.selector_calls, 2);
    assert_eq!(c.reformulations, 1);
    assert_eq!(c.formulation_iterations, 2);
    assert_script_consumed(&script, &out, &backend);
    let second_round: Vec<_> = backend
        .requests()
        .into_iter()
        .filter(|r| r.purpose.starts_with("formulation.expert."))
        .skip(4)
        .collect();
    assert_eq!(second_round.len(), 4);
    for r in second_round {
        assert!(r
            .request
            .full_text()
            .contains("model items as a flow instead"));
    }
    let tags: Vec<String> = out
        .formulation
        .iter()
        .map(|m| m.rationale.clone())
        .collect();
    assert_eq!(tags, vec!["written by constraint".to_string()]);
}

#[test]
fn formulation_revise_from_code_regenerates_program() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .verdict(
            Stage::Code,
            "FORMULATION_REVISE: capacity constraint uses the wrong bound",
        )
        .formulation_revise(&testkit::formulation("code feedback"))
        .generate(&testkit::program(2))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(c.code_iterations, 2);
    assert_eq!(c.formulation_lineage, 2);
    assert_eq!(c.formulation_revisions_from_code, 1);
    assert_eq!(c.code_generations, 2);
    assert_eq!(c.formulation_iterations, 1);
    assert_eq!(
        out.formulation.as_ref().unwrap().rationale,
        "written by code feedback"
    );
    assert_eq!(out.program.as_ref().unwrap().source, testkit::program(2));
    assert_script_consumed(&script, &out, &backend);
    // the regenerated program saw the revised formulation
    let regen = backend
        .requests()
        .into_iter()
        .filter(|r| r.purpose == "code.agent")
        .nth(2)
        .unwrap();
    assert!(regen
        .request
        .full_text()
        .contains("written by code feedback"));
    let lineages: Vec<u32> = out
        .transcript
        .events_named("code.generate")
        .map(|e| match e {
            Event::CodeGenerate { lineage, .. } => *lineage,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(lineages, vec![1, 2]);
}

#[test]
fn self_correction_repairs_until_program_runs() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .self_correct(&testkit::program(2))
        .self_correct(&testkit::program(3))
        .accept(Stage::Code);
    let exec = ScriptedExecutor::new([runtime_error(), runtime_error()])
        .then_always(ExecutionReport::executable(4.0));
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(c.code_iterations, 1);
    assert_eq!(c.execution_rounds, 3);
    assert_eq!(c.self_corrections, 2);
    let revisions: Vec<u32> = exec.executed().iter().map(|p| p.revision).collect();
    assert_eq!(revisions, vec![1, 2, 3]);
    assert!(out.report_is_current());
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn execution_budget_exhaustion_skips_validation() {
    let mut script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1));
    for k in 0..20 {
        script = script.self_correct(&testkit::program(k + 2));
    }
    let exec = ScriptedExecutor::always(runtime_error());
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(c.execution_rounds, 20);
    assert_eq!(c.self_corrections, 20);
    assert_eq!(c.code_iterations, 1);
    assert_eq!(out.transcript.count("code.validate"), 0);
    assert!(out.code_verdict.is_none());
    // the last repair was never executed
    assert_eq!(out.program.as_ref().unwrap().revision, 21);
    assert_eq!(out.report_revision, Some(20));
    assert!(!out.report_is_current());
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn semantic_budget_exhaustion_carries_last_revision_forward() {
    let mut script = ScriptBuilder::new().construct_semantic();
    for k in 0..5 {
        script = script
            .verdict(Stage::Semantic, "REVISE: still incomplete")
            .semantic_revise(&testkit::specification(4 + k));
    }
    let script = script
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let c = &out.transcript.counters;
    assert_eq!(c.semantic_iterations, 5);
    assert_eq!(c.semantic_revisions, 5);
    assert_eq!(out.specification.as_ref().unwrap().facts.len(), 8);
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn abnormal_solver_status_reaches_the_code_validator() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .verdict(
            Stage::Code,
            "FORMULATION_REVISE: the model is infeasible as stated",
        )
        .formulation_revise(&testkit::formulation("relaxed"))
        .generate(&testkit::program(2))
        .accept(Stage::Code);
    let mut infeasible = ExecutionReport::failure(ExecutionStatus::AbnormalSolverStatus, "");
    infeasible.solver_status = Some("INFEASIBLE".into());
    let exec = ScriptedExecutor::new([infeasible]).then_always(ExecutionReport::executable(4.0));
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert_eq!(out.transcript.counters.self_corrections, 0);
    assert_eq!(out.transcript.counters.formulation_revisions_from_code, 1);
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn failure_keeps_earlier_artifacts() {
    // script ends in the middle of the expert fan-out
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .reply(
            "formulation.expert.parameter_index",
            testkit::json(&testkit::formulation("p")),
        );
    let exec = ok();
    let (out, _) = run(&script, &exec);
    let failure = out.failure.as_ref().expect("run fails");
    assert_eq!(failure.stage, Stage::Formulation);
    assert!(out.specification.is_some());
    assert!(out.formulation.is_none());
    assert!(out.program.is_none());
    assert_eq!(out.transcript.count("run.failed"), 1);
}

#[test]
fn parse_retry_recovers_with_a_reminder() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .verdict(Stage::Semantic, "Looks fine to me overall.")
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run(&script, &exec);
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert_eq!(out.transcript.count("parse.retry"), 1);
    assert_eq!(out.transcript.counters.semantic_iterations, 1);
    let retry = backend
        .requests()
        .into_iter()
        .filter(|r| r.purpose == "semantic.validate")
        .nth(1)
        .unwrap();
    assert!(retry
        .request
        .full_text()
        .contains("Looks fine to me overall."));
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn no_validation_issues_no_validator_calls() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .experts()
        .select(1)
        .generate(&testkit::program(1));
    let exec = ok();
    let (out, backend) = run_with(&script, &exec, &settings("no-validation"));
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert_eq!(out.transcript.validation_events(), 0);
    assert_eq!(backend.count_prefix("semantic.validate"), 0);
    assert_eq!(backend.count_prefix("formulation.validate"), 0);
    assert_eq!(backend.count_prefix("code.validate"), 0);
    assert_eq!(out.transcript.header.variant, "no-validation");
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn code_only_prompts_with_the_raw_description() {
    let script = ScriptBuilder::new()
        .generate(&testkit::program(1))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run_with(&script, &exec, &settings("code-only"));
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert!(out.specification.is_none());
    assert!(out.formulation.is_none());
    let problem = testkit::knapsack_problem();
    let first = &backend.requests()[0];
    assert_eq!(first.purpose, "code.agent");
    assert!(first.request.full_text().contains(&problem.description));
    assert_eq!(backend.count_prefix("semantic."), 0);
    assert_eq!(backend.count_prefix("formulation."), 0);
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn code_only_turns_formulation_revise_into_code_revise() {
    let script = ScriptBuilder::new()
        .generate(&testkit::program(1))
        .verdict(Stage::Code, "FORMULATION_REVISE: wrong capacity")
        .code_revise(&testkit::program(2))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run_with(&script, &exec, &settings("code-only"));
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert_eq!(out.transcript.counters.code_revisions, 1);
    assert_eq!(out.transcript.counters.formulation_revisions_from_code, 0);
    assert_eq!(out.transcript.count("warning"), 1);
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn single_expert_skips_selection() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .generalist()
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .accept(Stage::Code);
    let exec = ok();
    let (out, backend) = run_with(&script, &exec, &settings("no-multi-expert"));
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert_eq!(out.transcript.counters.expert_calls, 1);
    assert_eq!(out.transcript.counters.selector_calls, 0);
    assert_eq!(backend.count_prefix("formulation.select"), 0);
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn without_self_correction_a_crash_ends_the_code_stage() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .accept(Stage::Semantic)
        .experts()
        .select(1)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1));
    let exec = ScriptedExecutor::always(runtime_error());
    let (out, backend) = run_with(&script, &exec, &settings("no-self-correction"));
    assert!(out.failure.is_none(), "{:?}", out.failure);
    assert_eq!(out.transcript.counters.execution_rounds, 1);
    assert_eq!(out.transcript.counters.self_corrections, 0);
    assert_eq!(
        out.report.as_ref().unwrap().status,
        ExecutionStatus::RuntimeError
    );
    assert_script_consumed(&script, &out, &backend);
}

#[test]
fn parallel_experts_match_sequential_transcript() {
    let script = ScriptBuilder::new().all_accept();
    let exec = ok();
    let sequential = run(&script, &exec).0;
    let mut s = settings("full");
    s.parallel_experts = true;
    // lenient matching so expert replies can arrive in any order
    let backend = trival_core::ScriptedBackend::with_entries(
        trival_core::ScriptMode::Lenient,
        script.entries().to_vec(),
    );
    let prompts = PromptPack::builtin();
    let parallel = Pipeline::new(&backend, &exec, &prompts, &s)
        .unwrap()
        .run(&testkit::knapsack_problem(), "r1");
    assert_eq!(
        sequential.transcript.without_timestamps().events,
        parallel.transcript.without_timestamps().events
    );
}

#[test]
fn replay_is_deterministic() {
    let script = ScriptBuilder::new()
        .construct_semantic()
        .verdict(Stage::Semantic, "REVISE: fact 2 is wrong")
        .semantic_revise(&testkit::specification(3))
        .accept(Stage::Semantic)
        .experts()
        .select(4)
        .accept(Stage::Formulation)
        .generate(&testkit::program(1))
        .self_correct(&testkit::program(2))
        .accept(Stage::Code);
    let make_exec =
        || ScriptedExecutor::new([runtime_error()]).then_always(ExecutionReport::executable(4.0));
    let a = run(&script, &make_exec()).0;
    let b = run(&script, &make_exec()).0;
    assert_eq!(
        a.transcript.without_timestamps(),
        b.transcript.without_timestamps()
    );
    let text = a.transcript.without_timestamps().to_jsonl();
    assert_eq!(text, b.transcript.without_timestamps().to_jsonl());
    let back = trival_core::StageTranscript::from_jsonl(&text).unwrap();
    assert_eq!(back, a.transcript.without_timestamps());
}

struct ChoiceExecutor {
    reports: std::sync::Mutex<(Vec<u8>, usize)>,
}

impl Executor for ChoiceExecutor {
    fn execute(
        &self,
        _program: &trival_core::GeneratedProgram,
        _limits: &trival_core::ExecutionLimits,
    ) -> Result<ExecutionReport, trival_core::ExecutorError> {
        let mut g = self.reports.lock().unwrap();
        let (choices, i) = &mut *g;
        let c = choices[*i % choices.len()];
        *i += 1;
        Ok(match c % 4 {
            0 => ExecutionReport::executable(4.0),
            1 => runtime_error(),
            2 => ExecutionReport::failure(ExecutionStatus::Timeout, ""),
            _ => ExecutionReport::failure(ExecutionStatus::AbnormalSolverStatus, ""),
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counters_never_exceed_budgets(
        picks in proptest::collection::vec(0usize..16, 1..64),
        execs in proptest::collection::vec(0u8..4, 1..16),
        rounds in (1u32..4, 1u32..4, 1u32..4, 1u32..4),
    ) {
        let mut cursor = 0usize;
        let backend = AdversaryBackend::new(move |n| {
            let v = picks[cursor % picks.len()] % n;
            cursor += 1;
            v
        });
        let exec = ChoiceExecutor { reports: std::sync::Mutex::new((execs, 0)) };
        let mut s = settings("full");
        s.budgets.semantic_rounds = rounds.0;
        s.budgets.formulation_rounds = rounds.1;
        s.budgets.code_rounds = rounds.2;
        s.budgets.self_correction_rounds = rounds.3;
        let prompts = PromptPack::builtin();
        let out = Pipeline::new(&backend, &exec, &prompts, &s)
            .unwrap()
            .run(&testkit::knapsack_problem(), "adv");
        prop_assert!(out.failure.is_none(), "{:?}", out.failure);
        prop_assert!(out.transcript.check_budgets(&s.budgets).is_ok());
        let c = &out.transcript.counters;
        prop_assert!(c.semantic_iterations >= 1 && c.formulation_iterations >= 1);
        prop_assert!(c.code_iterations >= 1);
        prop_assert!(c.self_corrections <= c.execution_rounds);
        prop_assert!(c.reformulations + c.formulation_partial_revisions <= c.formulation_iterations);
        prop_assert_eq!(c.expert_calls, 4 * (1 + c.reformulations));
        prop_assert!(out.program.is_some());
    }
}
