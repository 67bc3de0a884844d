mod common;

use reqfusion_core::metrics::{compute_report, provider_scores, read_ground_truth};
use reqfusion_core::pipeline::{Pipeline, RunMetrics};
use reqfusion_core::store::{
    Decision, ExportFormat, ExportRecord, RequirementFilter, ReviewStatus, Store, StoreError,
};
use reqfusion_core::taxonomy::PegsCategory;

use common::*;

async fn tender_run(dir: &std::path::Path) -> (Pipeline, Store, String) {
    let pipeline = Pipeline::from_config(load_config("tender_01/config.toml")).unwrap();
    let doc = Pipeline::load_input(&fixture("tender_01.md")).unwrap();
    let mut store = Store::open_or_create(dir).unwrap();
    let summary = pipeline.run_document(&mut store, doc).await.unwrap();
    (pipeline, store, summary.run_id)
}

fn jsonl_records(bytes: &[u8]) -> Vec<ExportRecord> {
    std::str::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[tokio::test]
async fn tender_run_merges_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store, run_id) = tender_run(dir.path()).await;
    let run = store.run(&run_id).unwrap();
    assert_eq!(run_id, "run-0001");
    assert_eq!(run.requirements.len(), 21);
    let flagged: Vec<&str> = run
        .requirements
        .iter()
        .filter(|r| r.requirement.flagged_for_review)
        .map(|r| r.requirement.text.as_str())
        .collect();
    assert_eq!(flagged.len(), 3, "{flagged:?}");
    assert!(flagged.iter().any(|t| t.contains("export award decisions")));
    assert!(flagged.iter().any(|t| t.contains("identity directory")));
    assert!(flagged
        .iter()
        .any(|t| t.contains("native mobile application")));
    assert_eq!(run.count_by_status(ReviewStatus::PendingReview), 3);
    assert_eq!(run.count_by_status(ReviewStatus::AutoAccepted), 18);
    for r in &run.requirements {
        let expected = r.requirement.contributing_providers.len() as f64 / 3.0;
        assert!((r.requirement.confidence - expected).abs() < 1e-12);
        assert_eq!(r.link.confidence, r.requirement.confidence);
    }
}

#[tokio::test]
async fn scope_requirement_traces_back_to_page_three() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store, run_id) = tender_run(dir.path()).await;
    let run = store.run(&run_id).unwrap();
    let scope = run
        .requirements
        .iter()
        .find(|r| {
            r.requirement
                .text
                .contains("web portal for publishing tenders")
        })
        .unwrap();
    let trace = store.trace_back(&scope.requirement.req_id).unwrap();
    assert_eq!(trace.section_label, "Scope");
    assert_eq!(trace.page, 3);
    assert!(trace
        .excerpt
        .contains("The contractor shall deliver a web portal"));
    assert!(matches!(
        store.trace_back("nope"),
        Err(StoreError::UnknownRequirement(_))
    ));
}

#[tokio::test]
async fn review_then_export_keeps_only_final_items() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut store, run_id) = tender_run(dir.path()).await;
    let pending: Vec<String> = store
        .requirements(&RequirementFilter {
            run_id: Some(run_id.clone()),
            status: Some(ReviewStatus::PendingReview),
            pegs: None,
        })
        .into_iter()
        .map(|r| r.requirement.req_id.clone())
        .collect();
    assert_eq!(pending.len(), 3);
    let before = store.export_final(&run_id, ExportFormat::Jsonl).unwrap();
    assert_eq!(jsonl_records(&before).len(), 18);

    let accepted = store
        .decide(
            &pending[0],
            Decision::Accept,
            Some("alice"),
            Some("confirmed in annex"),
        )
        .unwrap();
    assert_eq!(accepted.status, ReviewStatus::Accepted);
    assert_eq!(accepted.reviewer.as_deref(), Some("alice"));
    store
        .decide(&pending[1], Decision::Reject, Some("bob"), None)
        .unwrap();
    assert!(matches!(
        store.decide(&pending[0], Decision::Reject, None, None),
        Err(StoreError::InvalidTransition {
            from: ReviewStatus::Accepted,
            ..
        })
    ));

    let records = jsonl_records(&store.export_final(&run_id, ExportFormat::Jsonl).unwrap());
    assert_eq!(records.len(), 19);
    assert!(records
        .iter()
        .any(|r| r.req_id == pending[0] && r.state == "accepted"));
    assert!(!records
        .iter()
        .any(|r| r.req_id == pending[1] || r.req_id == pending[2]));
    let mut sorted = records.clone();
    sorted.sort_by_key(|r| (r.pegs.parse::<PegsCategory>().unwrap(), r.req_id.clone()));
    assert_eq!(records, sorted);

    let audit = std::fs::read_to_string(store.audit_path()).unwrap();
    let lines: Vec<&str> = audit.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains(&pending[0]) && lines[0].contains("pending_review -> accepted"));
    assert!(lines[0].contains("reviewer=alice") && lines[0].contains("note=confirmed in annex"));

    let reopened = Store::open(dir.path()).unwrap();
    assert_eq!(
        reopened.export_final(&run_id, ExportFormat::Csv).unwrap(),
        store.export_final(&run_id, ExportFormat::Csv).unwrap()
    );
}

#[tokio::test]
async fn csv_export_has_header_and_filter_by_pegs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store, run_id) = tender_run(dir.path()).await;
    let csv = String::from_utf8(store.export_final(&run_id, ExportFormat::Csv).unwrap()).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "req_id,text,type,pegs,priority,category,confidence,state,doc_id,section,page"
    );
    assert_eq!(csv.lines().count(), 19);
    let project = store.requirements(&RequirementFilter {
        pegs: Some(PegsCategory::Project),
        ..Default::default()
    });
    assert!(!project.is_empty());
    assert!(project
        .iter()
        .all(|r| r.requirement.pegs == PegsCategory::Project));
}

#[tokio::test]
async fn second_run_gets_next_id_and_same_requirements() {
    let dir = tempfile::tempdir().unwrap();
    let (pipeline, mut store, first) = tender_run(dir.path()).await;
    let doc = Pipeline::load_input(&fixture("tender_01.md")).unwrap();
    let second = pipeline.run_document(&mut store, doc).await.unwrap();
    assert_eq!(second.run_id, "run-0002");
    let texts = |id: &str| -> Vec<String> {
        store
            .run(id)
            .unwrap()
            .requirements
            .iter()
            .map(|r| r.requirement.text.clone())
            .collect()
    };
    assert_eq!(texts(&first), texts(&second.run_id));
}

#[tokio::test]
async fn evaluation_against_ground_truth() {
    let pipeline = Pipeline::from_config(load_config("tender_01/config.toml")).unwrap();
    let doc = Pipeline::load_input(&fixture("tender_01.md")).unwrap();
    let extraction = pipeline.extract(doc).await;
    let merged = pipeline.merge(&extraction, "R");
    let gt = read_ground_truth(fixture_text("tender_01/ground_truth.jsonl").as_bytes()).unwrap();
    assert_eq!(gt.len(), 20);
    let report = compute_report(&merged, &gt, &extraction.batch.records);
    assert_eq!(report.overall.tp, 20);
    assert_eq!(report.overall.fp, 1);
    assert_eq!(report.overall.fn_, 0);
    assert_eq!(report.pegs_coverage, 1.0);
    assert!(report.cost.total_usd > 0.0);
    let rendered = report.render();
    assert!(rendered.contains("System"), "{rendered}");

    let per_provider = provider_scores(&extraction.batch.records, &gt);
    assert_eq!(per_provider.len(), 3);
    assert!(per_provider["groq"].fp >= 1);
}

#[tokio::test]
async fn run_metrics_describe_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store, run_id) = tender_run(dir.path()).await;
    let metrics = RunMetrics::from_entry(store.run(&run_id).unwrap());
    assert_eq!(metrics.total, 21);
    assert_eq!(metrics.flagged, 3);
    assert!((metrics.flag_rate - 3.0 / 21.0).abs() < 1e-12);
    assert_eq!(metrics.by_state["pending_review"], 3);
    assert_eq!(metrics.pegs_coverage, 1.0);
    assert!(metrics.cost_usd > 0.0);
}
