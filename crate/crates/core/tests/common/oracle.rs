//! Brute-force reference implementations, written independently of the
//! library code they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

/// A version row as read back from the log.
#[derive(Debug, Clone)]
pub struct Row {
    pub kr_id: String,
    pub version: u32,
    pub kind: String,
    pub role: String,
    pub phase: String,
    pub dp: String,
    pub seq: u64,
    pub payload: Value,
}

pub fn rows_from_log(entries: &[kcap_core::log::LogEntry]) -> Vec<Row> {
    entries
        .iter()
        .filter_map(|e| {
            let v = serde_json::to_value(&e.body).unwrap();
            (v["type"] == "kr" && v["entry"] == "version").then(|| Row {
                kr_id: v["kr_id"].as_str().unwrap().to_owned(),
                version: v["version"].as_u64().unwrap() as u32,
                kind: v["kind"].as_str().unwrap().to_owned(),
                role: v["author_role"].as_str().unwrap().to_owned(),
                phase: v["phase"].as_str().unwrap().to_owned(),
                dp: v["dp_id"].as_str().unwrap().to_owned(),
                seq: v["stamp"]["seq"].as_u64().unwrap(),
                payload: v["payload"].clone(),
            })
        })
        .collect()
}

/// Words made of alphanumeric characters, lowercased.
pub fn words(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut current = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            out.insert(current.to_lowercase());
            current.clear();
        }
    }
    out
}

pub fn payload_words(v: &Value) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(v) = stack.pop() {
        match v {
            Value::String(s) => out.extend(words(s)),
            Value::Number(n) => out.extend(words(&n.to_string())),
            Value::Array(a) => stack.extend(a.iter()),
            Value::Object(m) => stack.extend(m.values()),
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Query {
    pub role: Option<String>,
    pub phase: Option<String>,
    pub terms: Vec<String>,
    pub dp: Option<String>,
    pub as_of: Option<u64>,
}

/// `(kr_id, version, score, [role, phase, terms])`, best first.
pub fn retrieve(rows: &[Row], q: &Query, w: [f64; 3]) -> Vec<(String, u32, f64, [f64; 3])> {
    let bound = q.as_of.unwrap_or(u64::MAX);
    let mut newest: BTreeMap<&str, &Row> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.seq <= bound) {
        let keep = newest.get(r.kr_id.as_str()).is_none_or(|n| n.version < r.version);
        if keep {
            newest.insert(&r.kr_id, r);
        }
    }
    let q_words: BTreeSet<String> = q.terms.iter().flat_map(|t| words(t)).collect();
    let mut out = Vec::new();
    for r in newest.values() {
        if q.dp.as_ref().is_some_and(|dp| dp != &r.dp) {
            continue;
        }
        let role = match &q.role {
            None => 1.0,
            Some(x) if x == &r.role => 1.0,
            Some(_) => 0.0,
        };
        let phase = match &q.phase {
            None => 1.0,
            Some(x) if x == &r.phase => 1.0,
            Some(_) => 0.0,
        };
        let terms = if q_words.is_empty() {
            1.0
        } else {
            let p = payload_words(&r.payload);
            let inter = q_words.iter().filter(|t| p.contains(*t)).count();
            let union = q_words.len() + p.len() - inter;
            inter as f64 / union as f64
        };
        if role == 0.0 || phase == 0.0 || terms == 0.0 {
            continue;
        }
        let score = w[0] * role + w[1] * phase + w[2] * terms;
        out.push((r.kr_id.clone(), r.version, score, [role, phase, terms], r.seq));
    }
    // Bubble-free ordering by explicit pairwise comparison.
    out.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(b.4.cmp(&a.4))
            .then(a.0.cmp(&b.0))
    });
    out.into_iter().map(|(k, v, s, c, _)| (k, v, s, c)).collect()
}

/// Ratings keyed by (actor, item).
pub type Ratings = BTreeMap<(String, String), f64>;

pub fn cosine(ratings: &Ratings, i: &str, j: &str, min_co: usize) -> f64 {
    let actors: BTreeSet<&String> = ratings.keys().map(|(a, _)| a).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in actors {
        if let (Some(x), Some(y)) = (
            ratings.get(&(a.clone(), i.to_owned())),
            ratings.get(&(a.clone(), j.to_owned())),
        ) {
            xs.push(*x);
            ys.push(*y);
        }
    }
    if xs.is_empty() || xs.len() < min_co {
        return 0.0;
    }
    let dot: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let nx: f64 = xs.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ny: f64 = ys.iter().map(|y| y * y).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    }
}

pub fn predict(ratings: &Ratings, actor: &str, item: &str, min_co: usize) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, j), r) in ratings {
        if a != actor || j == item {
            continue;
        }
        let s = cosine(ratings, item, j, min_co);
        if s > 0.0 {
            num += s * r;
            den += s.abs();
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Char positions where `needle` occurs in `hay`.
pub fn occurrences(hay: &[char], needle: &[char]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .collect()
}

/// Start of `exact` under the nearest occurrence of `prefix‖exact‖suffix`
/// to `origin` (start of the stored prefix), earlier on ties.
pub fn relocate(text: &str, prefix: &str, exact: &str, suffix: &str, origin: usize) -> Option<usize> {
    let hay: Vec<char> = text.chars().collect();
    let needle: Vec<char> = format!("{prefix}{exact}{suffix}").chars().collect();
    let mut best: Option<usize> = None;
    for i in occurrences(&hay, &needle) {
        let d = i.abs_diff(origin);
        if best.is_none_or(|b| d < b.abs_diff(origin)) {
            best = Some(i);
        }
    }
    best.map(|i| i + prefix.chars().count())
}
