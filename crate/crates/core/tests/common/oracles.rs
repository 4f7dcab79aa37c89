//! Independent reference implementations shared by the oracle suites.

use std::collections::BTreeSet;

use xnlu_core::metrics::Span;

/// `log₂ S − Σ w log₂ w / S`, algebraically equal to the normalized form.
pub fn entropy_oracle(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    s.log2() - w.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>() / s
}

pub fn topk_oracle(w: &[f64], k: usize) -> f64 {
    let mut v = w.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let keep = (k * v.len()).div_ceil(100).max(1);
    entropy_oracle(&v[v.len() - keep..])
}

/// Enumerates every interval and keeps those that are maximal conlleval chunks.
pub fn spans_oracle(tags: &[&str]) -> BTreeSet<Span> {
    let class = |t: &str| if t == "O" { None } else { Some(t[2..].to_string()) };
    let inside = |t: &str, c: &str| t.strip_prefix("I-") == Some(c);
    let mut out = BTreeSet::new();
    for start in 0..tags.len() {
        let Some(c) = class(tags[start]) else { continue };
        let opens = tags[start].starts_with("B-") || start == 0 || class(tags[start - 1]).as_deref() != Some(c.as_str());
        if !opens {
            continue;
        }
        for end in start + 1..=tags.len() {
            let body = (start + 1..end).all(|t| inside(tags[t], &c));
            let closed = end == tags.len() || !inside(tags[end], &c);
            if body && closed {
                out.insert(Span {
                    class: c.clone(),
                    start,
                    end,
                });
            }
        }
    }
    out
}

