//! Metric fixtures with hand-computed expectations.

use ctxparse::eval::{bleu4, edit_distance, EvalReport};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn hand_corpus() -> Vec<(Vec<String>, Vec<String>)> {
    vec![
        (
            toks("the cat sat on the mat"),
            toks("the cat is on the mat"),
        ),
        (toks("a b c"), toks("a b c d")),
    ]
}

/// Clipped matches over candidate totals per order, counted by hand:
/// 8/9, 5/7, 2/5, and 0/3 smoothed to 1/4; lengths 9 against 10.
pub fn hand_bleu() -> f64 {
    let p: f64 = (8.0 / 9.0) * (5.0 / 7.0) * (2.0 / 5.0) * (1.0 / 4.0);
    100.0 * (1.0f64 - 10.0 / 9.0).exp() * p.powf(0.25)
}

pub fn bleu_fixture_error() -> f64 {
    (bleu4(&hand_corpus()).unwrap() - hand_bleu()).abs()
}

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

pub const EDIT_FIXTURES: &[(&str, &str, usize)] = &[
    ("kitten", "sitting", 3),
    ("", "abc", 3),
    ("abc", "", 3),
    ("flaw", "lawn", 2),
    ("intention", "execution", 5),
    ("same", "same", 0),
];

pub fn edit_fixture_failures() -> Vec<String> {
    EDIT_FIXTURES
        .iter()
        .filter_map(|&(a, b, want)| {
            let got = edit_distance(&chars(a), &chars(b));
            (got != want).then(|| format!("{a}/{b}: {got} != {want}"))
        })
        .collect()
}

/// Plain recursive definition, memoised on suffix lengths.
pub fn edit_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[a.len()][b.len()] {
            return v;
        }
        let v = match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = go(ra, rb, memo) + usize::from(x != y);
                sub.min(go(ra, b, memo) + 1).min(go(a, rb, memo) + 1)
            }
        };
        memo[a.len()][b.len()] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, &mut memo)
}

/// `(aggregate exact %, mean of per-row flags × 100)` on a mixed batch.
pub fn exact_aggregate() -> (f64, f64) {
    let items: Vec<(usize, String, Vec<String>, Vec<String>)> = vec![
        (0, "ok".into(), toks("a b"), toks("a b")),
        (1, "ok".into(), toks("a c"), toks("a b")),
        (2, "failed".into(), vec![], toks("x")),
        (3, "ok".into(), toks("x y z"), toks("x y z")),
        (4, "ok".into(), toks("q"), toks("q r")),
        (5, "ok".into(), toks("r"), toks("r")),
    ];
    let report = EvalReport::from_predictions(&items).unwrap();
    let flags = report
        .rows
        .iter()
        .map(|r| f64::from(u8::from(r.exact)))
        .sum::<f64>();
    (report.exact_match, 100.0 * flags / report.rows.len() as f64)
}
