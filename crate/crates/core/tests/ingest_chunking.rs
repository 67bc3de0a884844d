mod common;

use proptest::prelude::*;
use reqfusion_core::ingest::{
    chunk_document, complexity_score, estimate_tokens, load_document, DocFormat, IngestError,
    ManifestEntry, SectionManifest, MIN_CHUNK_TOKENS,
};
use reqfusion_core::pipeline::Pipeline;

use common::*;

#[test]
fn tender_sections_take_pages_from_manifest() {
    let doc = Pipeline::load_input(&fixture("tender_01.md")).unwrap();
    assert_eq!(doc.title, "tender_01");
    assert_eq!(doc.sections.len(), 12);
    let scope = doc.section("Scope").unwrap();
    assert_eq!(scope.page, 3);
    assert!(scope
        .body
        .starts_with("The contractor shall deliver a web portal"));
    assert_eq!(doc.section("Award Criteria").unwrap().page, 9);
    let pages: Vec<u32> = doc.sections.iter().map(|s| s.page).collect();
    assert!(pages.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn doc_id_is_content_derived() {
    let a = markdown("# A\n\nThe portal shall work.\n", "t");
    let b = markdown("# A\n\nThe portal shall work.\n", "t");
    let c = markdown("# A\n\nThe portal shall fail.\n", "t");
    assert_eq!(a.doc_id, b.doc_id);
    assert_ne!(a.doc_id, c.doc_id);
    assert!(a.doc_id.as_str().starts_with("doc-"));
}

#[test]
fn empty_and_invalid_input_is_rejected() {
    assert!(matches!(
        load_document(b"  \n\t ", DocFormat::PlainText, "x", None),
        Err(IngestError::EmptyDocument)
    ));
    assert!(matches!(
        load_document(&[0xff, 0xfe], DocFormat::PlainText, "x", None),
        Err(IngestError::Decode(_))
    ));
}

#[test]
fn plain_text_pages_split_on_form_feed() {
    let doc = load_document(
        "First page text.\u{000C}Second page text.".as_bytes(),
        DocFormat::PlainText,
        "plain",
        None,
    )
    .unwrap();
    assert_eq!(doc.sections.len(), 2);
    assert_eq!(doc.sections[1].page, 2);
    assert_eq!(doc.sections[1].body, "Second page text.");
}

#[test]
fn pre_extracted_uses_manifest_offsets() {
    let text = "Scope text here. Security text there.";
    let manifest = SectionManifest(vec![
        ManifestEntry {
            label: "Scope".into(),
            page: 1,
            start: Some(0),
            end: Some(16),
        },
        ManifestEntry {
            label: "Security".into(),
            page: 2,
            start: Some(17),
            end: Some(text.len()),
        },
    ]);
    let doc = load_document(
        text.as_bytes(),
        DocFormat::PreExtracted,
        "pre",
        Some(&manifest),
    )
    .unwrap();
    assert_eq!(doc.section("Scope").unwrap().body, "Scope text here.");
    assert_eq!(doc.section("Security").unwrap().page, 2);

    let bad = SectionManifest(vec![ManifestEntry {
        label: "Scope".into(),
        page: 1,
        start: Some(0),
        end: Some(999),
    }]);
    assert!(matches!(
        load_document(text.as_bytes(), DocFormat::PreExtracted, "pre", Some(&bad)),
        Err(IngestError::ManifestMismatch(_))
    ));
    assert!(load_document(text.as_bytes(), DocFormat::PreExtracted, "pre", None).is_err());
}

#[test]
fn repeated_headings_get_unique_labels() {
    let doc = markdown("# Notes\n\nOne.\n\n# Notes\n\nTwo.\n", "dup");
    let labels: Vec<&str> = doc.sections.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["Notes", "Notes (2)"]);
}

#[test]
fn complexity_is_in_unit_interval() {
    let doc = Pipeline::load_input(&fixture("tender_01.md")).unwrap();
    let c = complexity_score(&doc);
    assert!((0.0..=1.0).contains(&c));
    let repetitive = markdown(&"word ".repeat(2000), "rep");
    assert!(complexity_score(&repetitive) < c);
}

fn paragraphs() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,12}( [a-z]{1,12}){0,30}\\.", 1..30)
        .prop_map(|ps| ps.join("\n\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chunks_respect_budget_and_cover_text(body in paragraphs(), budget in 0usize..400) {
        let doc = markdown(&format!("# Section\n\n{body}\n"), "p");
        let chunks = chunk_document(&doc, budget);
        let limit = budget.max(MIN_CHUNK_TOKENS);
        let section = &doc.sections[0];
        let squash = |s: &str| s.split_whitespace().collect::<String>();
        let mut joined = String::new();
        for (i, c) in chunks.iter().enumerate() {
            prop_assert!(c.token_estimate <= limit, "{} > {limit}", c.token_estimate);
            prop_assert_eq!(c.token_estimate, estimate_tokens(&c.text));
            prop_assert_eq!(&c.section_label, &section.label);
            prop_assert_eq!(&c.chunk_id, &format!("{}#s0c{i}", doc.doc_id));
            joined.push_str(&c.text);
        }
        prop_assert_eq!(squash(&joined), squash(&section.body));
    }
}
