//! Caption metrics: corpus BLEU-1..4, ROUGE-L, CIDEr-D and the portion of
//! normal / abnormal sentences.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Tokens = Vec<String>;

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_pairing(cands: usize, refs: usize) -> Result<()> {
    if cands != refs {
        return Err(Error::dim("metric pairing", &[cands], &[refs]));
    }
    Ok(())
}

/// Corpus BLEU-1..4 with clipped n-gram counts and a brevity penalty against
/// the closest reference length (shorter on ties). An order with no matching
/// n-gram scores 0 for it and every higher order.
pub fn bleu(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<[f64; 4]> {
    check_pairing(candidates.len(), references.len())?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Domain("candidate without references".into()));
        }
        c_len += cand.len();
        r_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap();
        for n in 1..=4 {
            let cand_counts = ngrams(cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in cand_counts {
                matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    let mut out = [0.0; 4];
    if c_len == 0 {
        return Ok(out);
    }
    let bp = if c_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let mut log_sum = 0.0;
    for n in 0..4 {
        if matched[n] == 0 || total[n] == 0 {
            break;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        out[n] = bp * (log_sum / (n + 1) as f64).exp();
    }
    Ok(out)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
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

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure of one candidate against one reference.
pub fn rouge_l_pair(cand: &[String], reference: &[String], beta: f64) -> f64 {
    let lcs = lcs_len(cand, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over candidates of the best F-measure across that candidate's references.
pub fn rouge_l(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64> {
    check_pairing(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(Error::Domain("ROUGE-L of an empty corpus".into()));
    }
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| refs.iter().map(|r| rouge_l_pair(c, r, ROUGE_BETA)).fold(0.0, f64::max))
        .sum();
    Ok(sum / candidates.len() as f64)
}

pub const CIDER_SIGMA: f64 = 6.0;

type NgramVec<'a> = HashMap<&'a [String], f64>;

struct CiderVec<'a> {
    vecs: [NgramVec<'a>; 4],
    norms: [f64; 4],
    len: usize,
}

fn cider_vec<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_n: f64) -> CiderVec<'a> {
    let mut vecs: [NgramVec<'a>; 4] = Default::default();
    let mut norms = [0.0; 4];
    for n in 1..=4 {
        for (g, c) in ngrams(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = c as f64 * (log_n - d.ln());
            norms[n - 1] += w * w;
            vecs[n - 1].insert(g, w);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    CiderVec {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(c: &CiderVec, r: &CiderVec) -> [f64; 4] {
    let delta = c.len as f64 - r.len as f64;
    let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; 4];
    for n in 0..4 {
        let mut dot = 0.0;
        for (g, &wc) in &c.vecs[n] {
            if let Some(&wr) = r.vecs[n].get(g) {
                dot += wc.min(wr) * wr;
            }
        }
        if c.norms[n] != 0.0 && r.norms[n] != 0.0 {
            out[n] = dot / (c.norms[n] * r.norms[n]) * gauss;
        }
    }
    out
}

/// CIDEr-D per candidate: tf-idf n-gram vectors (n = 1..4) with document
/// frequencies taken over the reference sets, clipped cosine similarity,
/// Gaussian length penalty (sigma 6), averaged over references and orders and
/// scaled by 10.
pub fn cider_d_scores(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<Vec<f64>> {
    check_pairing(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(Error::Domain("CIDEr of an empty corpus".into()));
    }
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for refs in references {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (references.len() as f64).ln();
    let mut out = Vec::with_capacity(candidates.len());
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Domain("candidate without references".into()));
        }
        let cv = cider_vec(cand, &df, log_n);
        let mut acc = [0.0; 4];
        for r in refs {
            let rv = cider_vec(r, &df, log_n);
            for (a, s) in acc.iter_mut().zip(cider_sim(&cv, &rv)) {
                *a += s;
            }
        }
        let mean_over_n = acc.iter().sum::<f64>() / (4.0 * refs.len() as f64);
        out.push(10.0 * mean_over_n);
    }
    Ok(out)
}

pub fn cider_d(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64> {
    let s = cider_d_scores(candidates, references)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

pub const NORMAL_CUES: [&str; 4] = ["no", "normal", "clear", "stable"];

/// A sentence counts as normal when one of [`NORMAL_CUES`] appears as a whole token.
pub fn is_normal_sentence(tokens: &[String]) -> bool {
    tokens.iter().any(|t| NORMAL_CUES.contains(&t.as_str()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityPortion {
    pub normal: f64,
    pub abnormal: f64,
}

pub fn normality_portion(sentences: &[Tokens]) -> Result<NormalityPortion> {
    if sentences.is_empty() {
        return Err(Error::Domain("normality portion of zero sentences".into()));
    }
    let normal = sentences.iter().filter(|s| is_normal_sentence(s)).count() as f64 / sentences.len() as f64;
    Ok(NormalityPortion {
        normal,
        abnormal: 1.0 - normal,
    })
}

/// Full evaluation of generated reports against references. Each report is a
/// list of sentences; n-gram metrics see the sentences joined end to end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_reports: usize,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub generated_portion: Option<NormalityPortion>,
    pub reference_portion: Option<NormalityPortion>,
}

pub fn flatten(report: &[Tokens]) -> Tokens {
    report.iter().flatten().cloned().collect()
}

pub fn evaluate_reports(generated: &[Vec<Tokens>], references: &[Vec<Tokens>]) -> Result<EvalReport> {
    check_pairing(generated.len(), references.len())?;
    let cands: Vec<Tokens> = generated.iter().map(|r| flatten(r)).collect();
    let refs: Vec<Vec<Tokens>> = references.iter().map(|r| vec![flatten(r)]).collect();
    let b = bleu(&cands, &refs)?;
    let gen_sents: Vec<Tokens> = generated.iter().flatten().cloned().collect();
    let ref_sents: Vec<Tokens> = references.iter().flatten().cloned().collect();
    Ok(EvalReport {
        num_reports: generated.len(),
        bleu_1: b[0],
        bleu_2: b[1],
        bleu_3: b[2],
        bleu_4: b[3],
        rouge_l: rouge_l(&cands, &refs)?,
        cider_d: cider_d(&cands, &refs)?,
        generated_portion: normality_portion(&gen_sents).ok(),
        reference_portion: normality_portion(&ref_sents).ok(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub bleu_1: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub sentences: usize,
}

/// Per-report scores; CIDEr document frequencies still come from the whole
/// reference corpus.
pub fn per_image_scores(generated: &[Vec<Tokens>], references: &[Vec<Tokens>]) -> Result<Vec<ImageScores>> {
    check_pairing(generated.len(), references.len())?;
    let cands: Vec<Tokens> = generated.iter().map(|r| flatten(r)).collect();
    let refs: Vec<Vec<Tokens>> = references.iter().map(|r| vec![flatten(r)]).collect();
    let cider = cider_d_scores(&cands, &refs)?;
    cands
        .iter()
        .zip(&refs)
        .zip(cider)
        .zip(generated)
        .map(|(((c, r), cider_d), g)| {
            let b = bleu(std::slice::from_ref(c), std::slice::from_ref(r))?;
            Ok(ImageScores {
                bleu_1: b[0],
                bleu_4: b[3],
                rouge_l: rouge_l(std::slice::from_ref(c), std::slice::from_ref(r))?,
                cider_d,
                sentences: g.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu_brevity_penalty() {
        let b = bleu(&[t("the cat")], &[vec![t("the cat sat")]]).unwrap();
        assert!((b[0] - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(b[2], 0.0);
    }

    #[test]
    fn bleu_identical_is_one() {
        let s = t("the heart size is normal and the lungs are clear");
        let b = bleu(&[s.clone()], &[vec![s]]).unwrap();
        for v in b {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bleu_clips_repeats() {
        let b = bleu(&[t("the the the")], &[vec![t("the cat sat")]]).unwrap();
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_closest_reference_length() {
        let b = bleu(&[t("a b c")], &[vec![t("a b c d e f g"), t("a b c d")]]).unwrap();
        assert!((b[0] - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu_empty_candidate_is_zero() {
        assert_eq!(bleu(&[vec![]], &[vec![t("a")]]).unwrap(), [0.0; 4]);
        assert!(bleu(&[t("a")], &[]).is_err());
    }

    #[test]
    fn rouge_example() {
        let f = rouge_l_pair(&t("a b c d"), &t("a c d"), ROUGE_BETA);
        let (p, r, b2) = (0.75, 1.0, 1.44);
        assert!((f - (1.0 + b2) * p * r / (r + b2 * p)).abs() < 1e-12);
        assert!((f - 0.8798).abs() < 1e-4);
        assert_eq!(rouge_l_pair(&t("x"), &t("y"), ROUGE_BETA), 0.0);
    }

    #[test]
    fn rouge_takes_best_reference() {
        let r = rouge_l(&[t("a b")], &[vec![t("c"), t("a b")]]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cider_identical_unique_is_ten() {
        let refs = vec![vec![t("a b c d e")], vec![t("f g h i j")], vec![t("k l m n o")]];
        let cands: Vec<Tokens> = refs.iter().map(|r| r[0].clone()).collect();
        for s in cider_d_scores(&cands, &refs).unwrap() {
            assert!((s - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cider_disjoint_is_zero() {
        let refs = vec![vec![t("a b")], vec![t("c d")]];
        assert_eq!(cider_d(&[t("x y"), t("z w")], &refs).unwrap(), 0.0);
    }

    #[test]
    fn normality() {
        let p = normality_portion(&[t("no effusion"), t("small nodule"), t("lungs are clear"), t("nothing")]).unwrap();
        assert_eq!(p.normal, 0.5);
        assert!(!is_normal_sentence(&t("nothing abnormal")));
        assert!(normality_portion(&[]).is_err());
    }

    fn sentence() -> impl Strategy<Value = Tokens> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "no", "e"]), 1..12)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn bleu_orders_are_monotone(c in prop::collection::vec(sentence(), 1..5), r in prop::collection::vec(sentence(), 1..5)) {
            let n = c.len().min(r.len());
            let refs: Vec<Vec<Tokens>> = r[..n].iter().map(|x| vec![x.clone()]).collect();
            let b = bleu(&c[..n], &refs).unwrap();
            for i in 0..4 {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&b[i]));
            }
            prop_assert!(b[3] <= b[0] + 1e-12);
        }

        #[test]
        fn metrics_invariant_under_relabeling(c in sentence(), r in sentence()) {
            let relabel = |s: &Tokens| -> Tokens { s.iter().map(|w| format!("{w}_x")).collect() };
            let b1 = bleu(&[c.clone()], &[vec![r.clone()]]).unwrap();
            let b2 = bleu(&[relabel(&c)], &[vec![relabel(&r)]]).unwrap();
            prop_assert_eq!(b1, b2);
            let r1 = rouge_l(&[c.clone()], &[vec![r.clone()]]).unwrap();
            let r2 = rouge_l(&[relabel(&c)], &[vec![relabel(&r)]]).unwrap();
            prop_assert_eq!(r1, r2);
        }

        #[test]
        fn portions_sum_to_one(s in prop::collection::vec(sentence(), 1..20)) {
            let p = normality_portion(&s).unwrap();
            prop_assert!((p.normal + p.abnormal - 1.0).abs() < 1e-12);
        }
    }
}
