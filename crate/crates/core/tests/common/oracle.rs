//! Brute-force reference implementations of the metrics, written without
//! reusing any library code.

use imageshare_core::data::Decision;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop ASCII punctuation, split, drop articles.
pub fn normalized(text: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for c in text.chars() {
        if c.is_ascii_punctuation() {
            continue;
        }
        cleaned.extend(c.to_lowercase());
    }
    cleaned.split_whitespace().filter(|w| !ARTICLES.contains(w)).map(|w| w.to_string()).collect()
}

/// Multiset overlap by sorting both sides and merging.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let mut p = normalized(pred);
    let mut g = normalized(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    p.sort();
    g.sort();
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < p.len() && j < g.len() {
        match p[i].cmp(&g[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if common == 0 {
        0.0
    } else {
        2.0 * common as f64 / (p.len() + g.len()) as f64
    }
}

pub fn avg_token_f1(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| token_f1(pred, g)).sum::<f64>() / golds.len() as f64
}

/// Macro F1, precision and recall from the 2x2 confusion matrix.
pub fn decision_scores(preds: &[Decision], golds: &[Decision]) -> (f64, f64, f64) {
    let mut m = [[0usize; 2]; 2];
    for (p, g) in preds.iter().zip(golds) {
        m[(*p == Decision::Yes) as usize][(*g == Decision::Yes) as usize] += 1;
    }
    let mut f1 = 0.0;
    let mut prec = 0.0;
    let mut rec = 0.0;
    for c in 0..2 {
        let tp = m[c][c] as f64;
        let fp = m[c][1 - c] as f64;
        let fn_ = m[1 - c][c] as f64;
        let pc = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let fc = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        f1 += fc;
        prec += pc;
        rec += rc;
    }
    (f1 / 2.0, prec / 2.0, rec / 2.0)
}

/// Set F1 over bitmasks.
pub fn set_f1(pred: u64, gold: u64) -> f64 {
    2.0 * (pred & gold).count_ones() as f64 / (pred.count_ones() + gold.count_ones()) as f64
}

pub fn completeness(pred: &[bool], gold: &[bool]) -> f64 {
    let total = gold.iter().filter(|g| **g).count();
    let hit = gold.iter().zip(pred).filter(|(g, p)| **g && **p).count();
    hit as f64 / total as f64
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let mut hits = 0.0;
    for r in ranks {
        if *r <= k {
            hits += 1.0;
        }
    }
    hits / ranks.len() as f64
}

pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / ranks.len() as f64
}

/// True when `other` orders candidates like `base` except among candidates
/// whose `base` scores lie within `tol` of each other.
pub fn same_order_up_to_near_ties(base: &[String], scores: &[f64], other: &[String], tol: f64) -> bool {
    if base.len() != other.len() {
        return false;
    }
    let score = |id: &String| base.iter().position(|b| b == id).map(|i| (i, scores[i]));
    for i in 0..other.len() {
        for j in i + 1..other.len() {
            let (Some((pi, si)), Some((pj, sj))) = (score(&other[i]), score(&other[j])) else {
                return false;
            };
            if pi > pj && (si - sj).abs() > tol {
                return false;
            }
        }
    }
    true
}
