//! Caption evaluation metrics on token-id sequences: corpus-level BLEU-n with
//! brevity penalty, ROUGE-L, and tf-idf consensus scoring (CIDEr family),
//! plus the split-level evaluation report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Split, TokenId, Vocab};
use crate::decoding;
use crate::error::{Error, Result};
use crate::policy::PolicyNet;
use crate::reward::RewardModel;
use crate::value::ValueNet;

/// Zero n-gram precisions are floored to this instead of collapsing the
/// geometric mean; positive precisions are untouched.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Standard recall weighting for the ROUGE-L F-measure.
pub const ROUGE_L_BETA: f64 = 1.2;

/// Gaussian length-penalty width in the consensus metric.
pub const CIDER_SIGMA: f64 = 6.0;

/// One candidate against its reference set, with sentinel tokens stripped.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub candidate: Vec<TokenId>,
    pub references: Vec<Vec<TokenId>>,
}

fn strip(seq: &[TokenId]) -> Vec<TokenId> {
    seq.iter()
        .copied()
        .filter(|t| *t != Vocab::PAD && *t != Vocab::BOS && *t != Vocab::EOS)
        .collect()
}

impl EvalPair {
    /// Strips PAD/BOS/EOS from every sequence. References must be nonempty
    /// after stripping; an empty candidate is allowed and scores as zero
    /// overlap everywhere.
    pub fn new(candidate: &[TokenId], references: &[Vec<TokenId>]) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Arg("eval pair needs at least one reference".into()));
        }
        let references: Vec<Vec<TokenId>> = references.iter().map(|r| strip(r)).collect();
        if references.iter().any(|r| r.is_empty()) {
            return Err(Error::Arg("reference empty after sentinel stripping".into()));
        }
        Ok(EvalPair {
            candidate: strip(candidate),
            references,
        })
    }
}

type Ngram = Vec<TokenId>;

fn ngram_counts(seq: &[TokenId], n: usize) -> BTreeMap<Ngram, u64> {
    let mut counts = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-n: clipped n-gram precision geometric mean over orders
/// `1..=n`, times the brevity penalty from per-pair closest reference lengths.
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Arg("bleu: empty corpus".into()));
    }
    if !(1..=4).contains(&n) {
        return Err(Error::Arg(format!("bleu order must be 1..=4, got {n}")));
    }
    let mut matched = vec![0u64; n];
    let mut total = vec![0u64; n];
    let mut cand_len: u64 = 0;
    let mut ref_len: u64 = 0;

    for pair in pairs {
        let c = &pair.candidate;
        cand_len += c.len() as u64;
        // Closest reference length; ties break toward the shorter reference.
        let closest = pair
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|len| ((*len as i64 - c.len() as i64).abs(), *len))
            .expect("references nonempty");
        ref_len += closest as u64;

        for order in 1..=n {
            let cc = ngram_counts(c, order);
            let mut max_ref: BTreeMap<Ngram, u64> = BTreeMap::new();
            for r in &pair.references {
                for (g, count) in ngram_counts(r, order) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(count);
                }
            }
            for (g, count) in &cc {
                matched[order - 1] += (*count).min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[order - 1] += c.len().saturating_sub(order - 1) as u64;
        }
    }

    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for order in 0..n {
        let p = if total[order] == 0 {
            0.0
        } else {
            matched[order] as f64 / total[order] as f64
        };
        let p = if p == 0.0 { BLEU_EPSILON } else { p };
        log_sum += p.ln();
    }
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * (log_sum / n as f64).exp())
}

fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut prev = 0;
        for (j, &y) in b.iter().enumerate() {
            let cur = row[j + 1];
            row[j + 1] = if x == y { prev + 1 } else { row[j + 1].max(row[j]) };
            prev = cur;
        }
    }
    row[b.len()]
}

/// Mean over pairs of the best per-reference LCS F-measure.
pub fn rouge_l(pairs: &[EvalPair], beta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Arg("rouge_l: empty corpus".into()));
    }
    let mut sum = 0.0;
    for pair in pairs {
        let mut best: f64 = 0.0;
        for r in &pair.references {
            let lcs = lcs_len(&pair.candidate, r) as f64;
            if lcs == 0.0 || pair.candidate.is_empty() {
                continue;
            }
            let recall = lcs / r.len() as f64;
            let precision = lcs / pair.candidate.len() as f64;
            let denom = recall + beta * beta * precision;
            if denom > 0.0 {
                best = best.max((1.0 + beta * beta) * recall * precision / denom);
            }
        }
        sum += best;
    }
    Ok(sum / pairs.len() as f64)
}

/// Consensus metric score on both its native ~[0, 10] scale and ten times
/// that, matching the 0-100 convention evaluation tables use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiderScore {
    pub mean: f64,
    pub x10: f64,
}

/// tf-idf weighted n-gram cosine consensus (n = 1..=4) with a Gaussian length
/// penalty, averaged over references and orders, times 10; corpus mean. The
/// IDF statistics come from this corpus's reference collection.
pub fn cider(pairs: &[EvalPair]) -> Result<CiderScore> {
    if pairs.len() < 2 {
        return Err(Error::Arg(
            "cider: needs at least 2 examples to form document frequencies".into(),
        ));
    }
    let n_docs = pairs.len() as f64;
    // Document frequency: number of examples whose reference set contains the
    // n-gram at least once.
    let mut df: Vec<BTreeMap<Ngram, u64>> = vec![BTreeMap::new(); 4];
    for pair in pairs {
        for order in 1..=4usize {
            let mut seen: BTreeMap<Ngram, ()> = BTreeMap::new();
            for r in &pair.references {
                for g in ngram_counts(r, order).into_keys() {
                    seen.entry(g).or_insert(());
                }
            }
            for (g, ()) in seen {
                *df[order - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let idf = |order: usize, g: &Ngram| -> f64 {
        let d = df[order - 1].get(g).copied().unwrap_or(0).max(1) as f64;
        (n_docs / d).ln()
    };

    let weighted = |seq: &[TokenId], order: usize| -> BTreeMap<Ngram, f64> {
        ngram_counts(seq, order)
            .into_iter()
            .map(|(g, c)| {
                let w = c as f64 * idf(order, &g);
                (g, w)
            })
            .collect()
    };
    let norm = |v: &BTreeMap<Ngram, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();

    let mut corpus_sum = 0.0;
    for pair in pairs {
        let mut order_sum = 0.0;
        for order in 1..=4usize {
            let cv = weighted(&pair.candidate, order);
            let cn = norm(&cv);
            let mut ref_sum = 0.0;
            for r in &pair.references {
                let rv = weighted(r, order);
                let rn = norm(&rv);
                let cos = if cn == 0.0 || rn == 0.0 {
                    0.0
                } else {
                    let dot: f64 = cv
                        .iter()
                        .filter_map(|(g, w)| rv.get(g).map(|rw| w * rw))
                        .sum();
                    dot / (cn * rn)
                };
                let dl = pair.candidate.len() as f64 - r.len() as f64;
                let penalty = (-dl * dl / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
                ref_sum += penalty * cos;
            }
            order_sum += ref_sum / pair.references.len() as f64;
        }
        corpus_sum += 10.0 * order_sum / 4.0;
    }
    let mean = corpus_sum / n_docs;
    Ok(CiderScore { mean, x10: 10.0 * mean })
}

/// Decoder choice for evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Beam { k: usize, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeSettings {
    pub mode: DecodeMode,
    pub max_len: usize,
}

/// Split-level evaluation report; the key set is a compatibility contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    pub mean_reward: f64,
    pub n: usize,
}

/// Decodes every example of `split` and scores the result.
pub fn corpus_report(
    policy: &PolicyNet,
    value_net: &ValueNet,
    reward_model: &RewardModel,
    corpus: &Corpus,
    split: Split,
    settings: &DecodeSettings,
) -> Result<MetricsReport> {
    let mut pairs = Vec::new();
    let mut reward_sum = 0.0;
    for example in corpus.iter_split(split) {
        let caption = match settings.mode {
            DecodeMode::Greedy => {
                decoding::greedy_decode(policy, &example.feature, settings.max_len, Vocab::EOS)?
            }
            DecodeMode::Beam { k, beta } => {
                decoding::beam_decode(
                    policy,
                    value_net,
                    &example.feature,
                    k,
                    beta,
                    settings.max_len,
                    Vocab::EOS,
                )?
                .best
            }
        };
        reward_sum += reward_model.reward(&example.feature, &caption)?.value;
        pairs.push(EvalPair::new(&caption, &example.references)?);
    }
    if pairs.is_empty() {
        return Err(Error::Arg(format!("split {split:?} is empty")));
    }
    Ok(MetricsReport {
        bleu3: bleu_n(&pairs, 3)?,
        bleu4: bleu_n(&pairs, 4)?,
        rouge_l: rouge_l(&pairs, ROUGE_L_BETA)?,
        cider: cider(&pairs)?.mean,
        mean_reward: reward_sum / pairs.len() as f64,
        n: pairs.len(),
    })
}
