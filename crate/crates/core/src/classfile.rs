//! JSON hypothesis-class files.
//!
//! ```json
//! {"pi1": 0.5,
//!  "examples": [{"id": 0, "group": 0, "p": 1.0}, {"id": 1, "group": 1, "p": 1.0}],
//!  "hypotheses": [[-1, 1], [-1, -1]]}
//! ```
//!
//! `p` is the conditional mass within the example's own group. Validation
//! failures report the line on which the offending entry starts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Domain, Example, Group, Hypothesis, HypothesisClass, Label, NORMALIZATION_TOL};
use crate::error::{AuditError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: usize,
    group: u8,
    p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    pi1: f64,
    examples: Vec<RawExample>,
    hypotheses: Vec<Vec<i64>>,
}

/// Line numbers (1-based) at which each element of a top-level array starts.
fn element_lines(text: &str, key: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let needle = format!("\"{key}\"");
    let Some(start) = text.find(&needle) else { return Vec::new() };
    let mut line = 1 + text[..start].matches('\n').count();
    let mut i = start + needle.len();
    while i < bytes.len() && bytes[i] != b'[' {
        if bytes[i] == b'\n' {
            line += 1;
        }
        i += 1;
    }
    let mut lines = Vec::new();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut expecting = true;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
        }
        if in_string {
            if c == b'\\' {
                i += 1;
            } else if c == b'"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        match c {
            b'[' | b'{' => {
                if depth == 1 && expecting {
                    lines.push(line);
                    expecting = false;
                }
                depth += 1;
            }
            b']' | b'}' => {
                depth -= 1;
                if depth == 0 {
                    break;
                }
            }
            b',' if depth == 1 => expecting = true,
            b'"' => {
                if depth == 1 && expecting {
                    lines.push(line);
                    expecting = false;
                }
                in_string = true;
            }
            c if depth == 1 && expecting && !c.is_ascii_whitespace() => {
                lines.push(line);
                expecting = false;
            }
            _ => {}
        }
        i += 1;
    }
    lines
}

fn parse_err(line: usize, msg: impl Into<String>) -> AuditError {
    AuditError::Parse { line, msg: msg.into() }
}

pub fn parse_class(text: &str) -> Result<HypothesisClass> {
    let raw: RawClass =
        serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
    let ex_lines = element_lines(text, "examples");
    let h_lines = element_lines(text, "hypotheses");
    let ex_line = |i: usize| ex_lines.get(i).copied().unwrap_or(1);
    let h_line = |i: usize| h_lines.get(i).copied().unwrap_or(1);
    let pi_line = text.find("\"pi1\"").map(|p| 1 + text[..p].matches('\n').count()).unwrap_or(1);

    if !(raw.pi1 > 0.0 && raw.pi1 < 1.0) {
        return Err(parse_err(pi_line, format!("pi1 must lie in (0,1), got {}", raw.pi1)));
    }
    if raw.examples.is_empty() {
        return Err(parse_err(1, "no examples"));
    }
    let mut examples = Vec::with_capacity(raw.examples.len());
    let (mut s0, mut s1) = (0.0, 0.0);
    for (i, e) in raw.examples.iter().enumerate() {
        if e.id != i {
            return Err(parse_err(ex_line(i), format!("example at position {i} has id {}", e.id)));
        }
        let group = Group::from_bit(e.group).map_err(|err| parse_err(ex_line(i), err.to_string()))?;
        if !(e.p >= 0.0) || !e.p.is_finite() {
            return Err(parse_err(ex_line(i), format!("example {i} has invalid mass {}", e.p)));
        }
        match group {
            Group::Zero => s0 += e.p,
            Group::One => s1 += e.p,
        }
        examples.push(Example::new(i, group, e.p));
    }
    for (g, s) in [(0, s0), (1, s1)] {
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(parse_err(ex_line(0), format!("group {g} masses sum to {s}, expected 1")));
        }
    }
    let domain = Domain::new(examples, raw.pi1).map_err(|e| parse_err(1, e.to_string()))?;
    let m = domain.len();
    if raw.hypotheses.is_empty() {
        return Err(parse_err(1, "no hypotheses"));
    }
    let mut seen = std::collections::HashMap::new();
    let mut hypotheses = Vec::with_capacity(raw.hypotheses.len());
    for (j, row) in raw.hypotheses.iter().enumerate() {
        if row.len() != m {
            return Err(parse_err(h_line(j), format!("hypothesis {j} has {} labels, expected {m}", row.len())));
        }
        let labels = row
            .iter()
            .map(|&v| Label::from_sign(v))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(h_line(j), format!("hypothesis {j}: {e}")))?;
        let h = Hypothesis::new(labels);
        if let Some(prev) = seen.insert(h.clone(), j) {
            return Err(parse_err(h_line(j), format!("hypothesis {j} duplicates hypothesis {prev}")));
        }
        hypotheses.push(h);
    }
    HypothesisClass::new(domain, hypotheses)
}

pub fn load_class(path: impl AsRef<Path>) -> Result<HypothesisClass> {
    parse_class(&std::fs::read_to_string(path)?)
}

/// Serializes a class in the file format, one hypothesis per line.
pub fn class_to_json(class: &HypothesisClass) -> String {
    let d = class.domain();
    let mut out = String::new();
    out.push_str(&format!("{{\n  \"pi1\": {},\n  \"examples\": [\n", serde_json::to_string(&d.pi1()).unwrap()));
    for (i, e) in d.examples().iter().enumerate() {
        let sep = if i + 1 < d.len() { "," } else { "" };
        out.push_str(&format!(
            "    {{\"id\": {}, \"group\": {}, \"p\": {}}}{sep}\n",
            e.id,
            e.group.bit(),
            serde_json::to_string(&e.mass()).unwrap()
        ));
    }
    out.push_str("  ],\n  \"hypotheses\": [\n");
    for (j, h) in class.hypotheses().iter().enumerate() {
        let sep = if j + 1 < class.len() { "," } else { "" };
        let row: Vec<String> = h.labels().iter().map(|l| l.sign().to_string()).collect();
        out.push_str(&format!("    [{}]{sep}\n", row.join(", ")));
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn save_class(class: &HypothesisClass, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, class_to_json(class))?;
    Ok(())
}

/// Content hash of a class, independent of file formatting.
pub fn class_hash(class: &HypothesisClass) -> String {
    hex::encode(Sha256::digest(class_to_json(class).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
  "pi1": 0.5,
  "examples": [
    {"id": 0, "group": 0, "p": 1.0},
    {"id": 1, "group": 1, "p": 0.5},
    {"id": 2, "group": 1, "p": 0.5}
  ],
  "hypotheses": [
    [-1, 1, 1],
    [-1, -1, 1]
  ]
}"#;

    #[test]
    fn parses_valid_file() {
        let c = parse_class(GOOD).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.num_examples(), 3);
        assert_eq!(c.mu_of(0), 1.0);
        assert_eq!(c.mu_of(1), 0.5);
    }

    #[test]
    fn reports_line_of_bad_hypothesis() {
        let bad = GOOD.replace("[-1, -1, 1]", "[-1, 2, 1]");
        match parse_class(&bad) {
            Err(AuditError::Parse { line, .. }) => assert_eq!(line, 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_line_of_bad_example() {
        let bad = GOOD.replace("{\"id\": 1, \"group\": 1", "{\"id\": 1, \"group\": 3");
        match parse_class(&bad) {
            Err(AuditError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_normalization() {
        let dup = GOOD.replace("[-1, -1, 1]", "[-1, 1, 1]");
        assert!(matches!(parse_class(&dup), Err(AuditError::Parse { line: 10, .. })));
        let unnormalized = GOOD.replace("\"p\": 0.5}", "\"p\": 0.4}");
        assert!(matches!(parse_class(&unnormalized), Err(AuditError::Parse { .. })));
        let syntax = GOOD.replace("\"pi1\": 0.5,", "\"pi1\": 0.5");
        assert!(matches!(parse_class(&syntax), Err(AuditError::Parse { line: 3, .. })));
    }

    #[test]
    fn serialization_round_trips() {
        let c = parse_class(GOOD).unwrap();
        let again = parse_class(&class_to_json(&c)).unwrap();
        assert_eq!(again.hypotheses(), c.hypotheses());
        assert_eq!(again.domain(), c.domain());
        assert_eq!(class_hash(&again), class_hash(&c));
    }
}
