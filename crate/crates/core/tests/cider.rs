use std::path::Path;

use approx::assert_abs_diff_eq;
use screenkit::eval::{cider, CiderConfig, CiderVariant};
use serde_json::Value;

fn oracle() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/cider_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn corpus(o: &Value) -> (Vec<String>, Vec<Vec<String>>) {
    let items = o["corpus"].as_array().unwrap();
    let c = items.iter().map(|i| i["candidate"].as_str().unwrap().to_string()).collect();
    let r = items
        .iter()
        .map(|i| i["references"].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect())
        .collect();
    (c, r)
}

fn check(variant: CiderVariant, key: &str) {
    let o = oracle();
    let (c, r) = corpus(&o);
    let s = cider(&c, &r, &CiderConfig { variant, ..Default::default() }).unwrap();
    assert_abs_diff_eq!(s.score, o[key]["score"].as_f64().unwrap(), epsilon = 1e-6);
    for (got, want) in s.items.iter().zip(o[key]["items"].as_array().unwrap()) {
        assert_abs_diff_eq!(*got, want.as_f64().unwrap(), epsilon = 1e-6);
    }
}

#[test]
fn coco_variant_matches_frozen_oracle() {
    check(CiderVariant::Coco, "coco");
}

#[test]
fn plain_variant_matches_frozen_oracle() {
    check(CiderVariant::Plain, "plain");
}

#[test]
fn single_identical_item_scores_zero() {
    let s = cider(&["the same caption".into()], &[vec!["the same caption".into()]], &CiderConfig::default()).unwrap();
    assert_eq!(s.score, oracle()["single_identical"].as_f64().unwrap());
}

#[test]
fn corpus_permutation_invariance() {
    let (mut c, mut r) = corpus(&oracle());
    let base = cider(&c, &r, &CiderConfig::default()).unwrap().score;
    c.reverse();
    r.reverse();
    c.rotate_left(7);
    r.rotate_left(7);
    assert_abs_diff_eq!(cider(&c, &r, &CiderConfig::default()).unwrap().score, base, epsilon = 1e-12);
}

#[test]
fn duplicated_record_pulls_score_toward_it() {
    let (mut c, mut r) = corpus(&oracle());
    let before = cider(&c, &r, &CiderConfig::default()).unwrap();
    // Item 3 has an empty candidate and scores 0.
    c.push(c[3].clone());
    r.push(r[3].clone());
    let after = cider(&c, &r, &CiderConfig::default()).unwrap();
    assert_eq!(after.items[3], 0.0);
    assert!(after.score < before.score);
}
