//! Guard against ground truth reaching a client.

use serde_json::Value;

/// Object keys that only ever carry manifest ground truth.
pub const FORBIDDEN_KEYS: &[&str] =
    &["truth", "ground_truth", "truth_stage", "true_stage", "gt", "gt_boxes", "typical", "split_tag", "image_path"];

/// JSON paths of every forbidden key in `v`.
pub fn scan(v: &Value) -> Vec<String> {
    let mut hits = Vec::new();
    walk(v, "$", &mut hits);
    hits
}

fn walk(v: &Value, path: &str, hits: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let p = format!("{path}.{k}");
                if FORBIDDEN_KEYS.contains(&k.to_ascii_lowercase().as_str()) {
                    hits.push(p.clone());
                }
                walk(child, &p, hits);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                walk(child, &format!("{path}[{i}]"), hits);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn finds_nested_keys() {
        let v = json!({"case_id": "a", "ai": {"heads": [{"stage": "II", "Truth": 1}]}, "typical": false});
        assert_eq!(scan(&v), vec!["$.ai.heads[0].Truth", "$.typical"]);
        assert!(scan(&json!({"stage": "II", "kappa": 1.0})).is_empty());
    }
}
