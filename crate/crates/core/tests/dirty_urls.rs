use std::path::Path;

use refgraph::ingest::{Biblio, RawReference};
use refgraph::weblinks::extract_clean_urls;

fn with_url(url: &str) -> RawReference {
    RawReference {
        source_ident: "w1".into(),
        ref_index: 0,
        provenance: "grobid".into(),
        biblio: Biblio { url: Some(url.to_string()), ..Default::default() },
        source_year: None,
        source_release_stage: None,
    }
}

#[test]
fn hand_built_fixture() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/dirty_urls.tsv")).unwrap();
    let mut checked = 0;
    let mut failures = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let (dirty, expected) = line.split_once('\t').expect("two columns");
        let expected: Vec<String> = if expected.is_empty() { vec![] } else { vec![expected.to_string()] };
        let got = extract_clean_urls(&with_url(dirty));
        if got != expected {
            failures.push(format!("{dirty:?}: expected {expected:?}, got {got:?}"));
        }
        for u in &got {
            assert_eq!(extract_clean_urls(&with_url(u)), vec![u.clone()], "not idempotent on {dirty:?}");
        }
        checked += 1;
    }
    assert!(checked >= 50, "{checked} cases");
    assert!(failures.is_empty(), "{failures:#?}");
}
