use serde::{Deserialize, Serialize};

fn strip(s: &str) -> String {
    s.chars()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_ascii_punctuation())
        .collect()
}

/// SQuAD-style normalization: lowercase, strip punctuation, drop the
/// articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    strip(s)
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 when the normalized prediction equals some normalized answer.
pub fn exact_match(prediction: &str, answers: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    answers.iter().any(|a| normalize_answer(a) == p) as u8 as f64
}

/// 1 when some normalized answer occurs inside the normalized prediction.
pub fn match_metric(prediction: &str, answers: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    answers.iter().any(|a| p.contains(&normalize_answer(a))) as u8 as f64
}

fn lcs(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure over lowercased, punctuation-free words; 0 when either
/// side is empty. Articles are kept: they are content for reconstruction.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let (p, r) = (strip(prediction), strip(reference));
    let pw: Vec<&str> = p.split_whitespace().collect();
    let rw: Vec<&str> = r.split_whitespace().collect();
    if pw.is_empty() || rw.is_empty() {
        return 0.0;
    }
    let l = lcs(&pw, &rw) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (l / pw.len() as f64, l / rw.len() as f64);
    2.0 * prec * rec / (prec + rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub id: String,
    pub prediction: String,
    pub answers: Vec<String>,
    pub em: f64,
    #[serde(rename = "match")]
    pub match_: f64,
    pub rouge_l: f64,
}

impl ExampleMetrics {
    /// Scores one prediction; ROUGE-L takes the best reference.
    pub fn score(id: &str, prediction: &str, answers: &[String]) -> Self {
        Self {
            id: id.to_string(),
            prediction: prediction.to_string(),
            answers: answers.to_vec(),
            em: exact_match(prediction, answers),
            match_: match_metric(prediction, answers),
            rouge_l: answers.iter().map(|a| rouge_l(prediction, a)).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub count: usize,
    pub em: f64,
    #[serde(rename = "match")]
    pub match_: f64,
    pub rouge_l: f64,
    pub examples: Vec<ExampleMetrics>,
}

impl MetricReport {
    pub fn new(dataset: &str, examples: Vec<ExampleMetrics>) -> Self {
        let n = examples.len().max(1) as f64;
        let mean = |f: fn(&ExampleMetrics) -> f64| examples.iter().map(f).sum::<f64>() / n;
        Self {
            dataset: dataset.to_string(),
            count: examples.len(),
            em: mean(|e| e.em),
            match_: mean(|e| e.match_),
            rouge_l: mean(|e| e.rouge_l),
            examples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ans(a: &str) -> Vec<String> {
        vec![a.to_string()]
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Rosalind Bailey."), "rosalind bailey");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  An   Apple "), "apple");
    }

    #[test]
    fn em_and_match_examples() {
        let a = ans("Rosalind Bailey");
        assert_eq!((exact_match("Rosalind Bailey", &a), match_metric("Rosalind Bailey", &a)), (1.0, 1.0));
        let long = "the role was played by Rosalind Bailey in 1976";
        assert_eq!((exact_match(long, &a), match_metric(long, &a)), (0.0, 1.0));
        assert_eq!((exact_match("Sarah Hadland", &a), match_metric("Sarah Hadland", &a)), (0.0, 0.0));
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("a b c d", "a b c d"), 1.0);
        assert_eq!(rouge_l("x y", "a b c d"), 0.0);
        // LCS 3, P 1, R 3/4.
        assert!((rouge_l("a c d", "a b c d") - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rouge_l("The cat.", "the CAT"), 1.0);
        assert_eq!(rouge_l("", ""), 0.0);
    }

    #[test]
    fn report_means() {
        let r = MetricReport::new(
            "t",
            vec![
                ExampleMetrics::score("1", "paris", &ans("Paris")),
                ExampleMetrics::score("2", "in rome", &ans("Paris")),
            ],
        );
        assert_eq!(r.count, 2);
        assert_eq!(r.em, 0.5);
        assert_eq!(r.match_, 0.5);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["match"], 0.5);
    }

    proptest! {
        #[test]
        fn em_never_exceeds_match(p in "[a-zA-Z .,]{0,30}", a in "[a-zA-Z .,]{0,12}") {
            let a = vec![a];
            prop_assert!(exact_match(&p, &a) <= match_metric(&p, &a));
        }

        #[test]
        fn rouge_is_symmetric(p in "[a-e ]{0,20}", r in "[a-e ]{0,20}") {
            prop_assert!((rouge_l(&p, &r) - rouge_l(&r, &p)).abs() < 1e-12);
            let v = rouge_l(&p, &r);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
