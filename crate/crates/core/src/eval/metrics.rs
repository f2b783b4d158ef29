use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn exact_match<T: PartialEq>(pred: &[T], gold: &[T]) -> bool {
    pred == gold
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect())
                .or_default() += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 in `[0, 100]`.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus before taking precisions. A zero match count for n ≥ 2 is
/// smoothed to `1 / (total + 1)`; a zero unigram count yields 0.
pub fn bleu4<T: AsRef<str>>(corpus: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut pred_len, mut ref_len) = (0usize, 0usize);
    for (pred, gold) in corpus {
        pred_len += pred.len();
        ref_len += gold.len();
        for n in 1..=4 {
            let p = ngram_counts(pred, n);
            let g = ngram_counts(gold, n);
            totals[n - 1] += p.values().sum::<usize>();
            matches[n - 1] += p
                .iter()
                .map(|(k, c)| (*c).min(g.get(k).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if pred_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if pred_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / 4.0).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: usize,
    pub exact: bool,
    pub bleu: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Percentage of exact matches.
    pub exact_match: f64,
    pub bleu: f64,
    pub failures: usize,
}

impl EvalReport {
    /// Scores `(id, status, predicted tokens, gold tokens)` tuples.
    pub fn from_predictions(items: &[(usize, String, Vec<String>, Vec<String>)]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("predictions"));
        }
        let mut rows = Vec::with_capacity(items.len());
        let mut corpus = Vec::with_capacity(items.len());
        for (id, status, pred, gold) in items {
            let ok = status == "ok";
            let pred: Vec<String> = if ok { pred.clone() } else { Vec::new() };
            rows.push(EvalRow {
                id: *id,
                exact: ok && exact_match(&pred, gold),
                bleu: bleu4(&[(pred.clone(), gold.clone())])?,
                status: status.clone(),
            });
            corpus.push((pred, gold.clone()));
        }
        let exact = rows.iter().filter(|r| r.exact).count() as f64 / rows.len() as f64;
        Ok(Self {
            failures: rows.iter().filter(|r| r.status != "ok").count(),
            exact_match: 100.0 * exact,
            bleu: bleu4(&corpus)?,
            rows,
        })
    }

    /// Tab-separated per-example lines followed by a summary comment.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# id\texact\tbleu\tstatus\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{}\n",
                r.id,
                u8::from(r.exact),
                r.bleu,
                r.status
            ));
        }
        out.push_str(&format!(
            "# exact_match={:.4} bleu={:.4} failures={}\n",
            self.exact_match, self.bleu, self.failures
        ));
        out
    }
}
