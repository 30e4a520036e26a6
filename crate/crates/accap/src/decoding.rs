//! Inference-time caption generation: greedy argmax, value-guided beam search
//! and an exhaustive enumeration oracle for small instances.
//!
//! Beam children are scored by `β · (cumulative log-prob / length) +
//! (1-β) · value(prefix + token)`; β = 1 recovers pure-likelihood search.
//! Ties everywhere break toward the lexicographically smaller token sequence,
//! so every decoder is reproducible and oracle-comparable.

use crate::data::{ImageFeature, TokenId};
use crate::error::{Error, Result};
use crate::numerics::PROB_FLOOR;
use crate::policy::{DecodeState, PolicyNet};
use crate::value::ValueNet;

/// A finished candidate with its final combined score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCaption {
    pub tokens: Vec<TokenId>,
    pub score: f64,
}

/// Result of a beam run: the winning caption plus the ranked finished set.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub best: Vec<TokenId>,
    pub ranked: Vec<ScoredCaption>,
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len < 2 {
        return Err(Error::Arg(format!("max_len must be at least 2, got {max_len}")));
    }
    Ok(())
}

/// Argmax decoding; ties go to the smallest token id. The returned caption is
/// EOS-terminated or exactly `max_len` long.
pub fn greedy_decode(
    policy: &PolicyNet,
    feature: &ImageFeature,
    max_len: usize,
    eos: TokenId,
) -> Result<Vec<TokenId>> {
    check_max_len(max_len)?;
    let mut state = policy.init_state(feature)?;
    let mut caption = Vec::new();
    loop {
        let step = policy.policy_step(&state, state.next_input(policy))?;
        let mut best = 0usize;
        for (id, p) in step.dist.iter().enumerate() {
            if *p > step.dist[best] {
                best = id;
            }
        }
        caption.push(best);
        state = state.commit(&step, best);
        if best == eos || caption.len() == max_len {
            return Ok(caption);
        }
    }
}

struct Hypothesis {
    state: DecodeState,
    cum_log_prob: f64,
    score: f64,
}

/// `true` when (score_a, seq_a) ranks strictly ahead of (score_b, seq_b).
fn ranks_ahead(score_a: f64, seq_a: &[TokenId], score_b: f64, seq_b: &[TokenId]) -> bool {
    match score_a.partial_cmp(&score_b).expect("finite scores") {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => seq_a < seq_b,
    }
}

/// Value-guided beam search. Every child of every live hypothesis is scored
/// by the combined rule; the top `k` children survive one round, and the ones
/// ending in EOS (or hitting `max_len`) retire to the finished set, where the
/// final combined score ranks them.
pub fn beam_decode(
    policy: &PolicyNet,
    value_net: &ValueNet,
    feature: &ImageFeature,
    k: usize,
    beta: f64,
    max_len: usize,
    eos: TokenId,
) -> Result<BeamResult> {
    check_max_len(max_len)?;
    if k < 1 {
        return Err(Error::Arg("beam width k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Arg(format!("beta must lie in [0, 1], got {beta}")));
    }
    let vocab = policy.dims().vocab;

    let mut live = vec![Hypothesis {
        state: policy.init_state(feature)?,
        cum_log_prob: 0.0,
        score: 0.0,
    }];
    let mut finished: Vec<ScoredCaption> = Vec::new();

    while !live.is_empty() {
        let mut children: Vec<Hypothesis> = Vec::with_capacity(live.len() * vocab);
        for hyp in &live {
            let step = policy.policy_step(&hyp.state, hyp.state.next_input(policy))?;
            for token in 0..vocab {
                let cum = hyp.cum_log_prob + (step.dist[token] + PROB_FLOOR).ln();
                let child = hyp.state.commit(&step, token);
                let length = child.prefix.len() as f64;
                let score = if beta == 1.0 {
                    cum / length
                } else {
                    let value = value_net.value_estimate(feature, &child.prefix)?;
                    beta * (cum / length) + (1.0 - beta) * value
                };
                children.push(Hypothesis {
                    state: child,
                    cum_log_prob: cum,
                    score,
                });
            }
        }
        children.sort_by(|a, b| {
            if ranks_ahead(a.score, &a.state.prefix, b.score, &b.state.prefix) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        });
        children.truncate(k);

        live = Vec::new();
        for child in children {
            let is_eos = *child.state.prefix.last().expect("nonempty child") == eos;
            if is_eos || child.state.prefix.len() == max_len {
                finished.push(ScoredCaption {
                    tokens: child.state.prefix.clone(),
                    score: child.score,
                });
            } else {
                live.push(child);
            }
        }
    }

    finished.sort_by(|a, b| {
        if ranks_ahead(a.score, &a.tokens, b.score, &b.tokens) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    let best = finished.first().expect("at least one finished").tokens.clone();
    Ok(BeamResult {
        best,
        ranked: finished,
    })
}

/// Enumerates every reachable caption (EOS only in final position, or a full
/// `max_len` sequence) and returns the combined-score maximizer under the same
/// tie rule as the beam. Refuses search spaces beyond 10^6 sequences.
pub fn exhaustive_oracle(
    policy: &PolicyNet,
    value_net: &ValueNet,
    feature: &ImageFeature,
    beta: f64,
    max_len: usize,
    eos: TokenId,
) -> Result<ScoredCaption> {
    check_max_len(max_len)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Arg(format!("beta must lie in [0, 1], got {beta}")));
    }
    let vocab = policy.dims().vocab;
    let mut space: u64 = 1;
    for _ in 0..max_len {
        space = space.saturating_mul(vocab as u64);
        if space > 1_000_000 {
            return Err(Error::TooLarge(format!(
                "{vocab}^{max_len} sequences exceed the 10^6 enumeration budget"
            )));
        }
    }

    let mut best: Option<ScoredCaption> = None;
    // Depth-first over prefixes of non-EOS tokens, scoring each candidate:
    // prefix+EOS at any length, and the bare prefix at exactly max_len.
    let root = policy.init_state(feature)?;
    let mut stack: Vec<Hypothesis> = vec![Hypothesis {
        state: root,
        cum_log_prob: 0.0,
        score: 0.0,
    }];
    while let Some(hyp) = stack.pop() {
        let step = policy.policy_step(&hyp.state, hyp.state.next_input(policy))?;
        for token in 0..vocab {
            let cum = hyp.cum_log_prob + (step.dist[token] + PROB_FLOOR).ln();
            let child = hyp.state.commit(&step, token);
            let is_terminal = token == eos || child.prefix.len() == max_len;
            if is_terminal {
                let length = child.prefix.len() as f64;
                let score = if beta == 1.0 {
                    cum / length
                } else {
                    let value = value_net.value_estimate(feature, &child.prefix)?;
                    beta * (cum / length) + (1.0 - beta) * value
                };
                let better = match &best {
                    None => true,
                    Some(b) => ranks_ahead(score, &child.prefix, b.score, &b.tokens),
                };
                if better {
                    best = Some(ScoredCaption {
                        tokens: child.prefix.clone(),
                        score,
                    });
                }
            } else {
                stack.push(Hypothesis {
                    state: child,
                    cum_log_prob: cum,
                    score: 0.0,
                });
            }
        }
    }
    Ok(best.expect("candidate set is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;
    use crate::value::ValueDims;
    use rand::Rng;

    const EOS: TokenId = 2;

    fn dims(vocab: usize) -> (PolicyDims, ValueDims) {
        (
            PolicyDims {
                vocab,
                d_h: 4,
                d_e: 3,
                feat_dim: 5,
            },
            ValueDims {
                vocab,
                d_h: 4,
                d_e: 3,
                feat_dim: 5,
                hidden_layers: 2,
            },
        )
    }

    fn rand_nets(vocab: usize, seed: u64) -> (PolicyNet, ValueNet, ImageFeature) {
        let (pd, vd) = dims(vocab);
        let mut rng = crate::rng::seeded(seed);
        let policy = PolicyNet::new(pd, &mut rng);
        let value = ValueNet::new(vd, &mut rng).unwrap();
        let feature = ImageFeature {
            values: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        (policy, value, feature)
    }

    #[test]
    fn zero_policy_greedy_repeats_token_zero() {
        let (pd, _) = dims(5);
        let policy = PolicyNet::zeroed(pd);
        let f = ImageFeature { values: vec![0.1; 5] };
        let cap = greedy_decode(&policy, &f, 6, EOS).unwrap();
        assert_eq!(cap, vec![0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn greedy_is_deterministic() {
        let (policy, _, f) = rand_nets(5, 40);
        let a = greedy_decode(&policy, &f, 8, EOS).unwrap();
        let b = greedy_decode(&policy, &f, 8, EOS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beam_width_one_beta_one_equals_greedy() {
        for seed in 0..100 {
            let (policy, value, f) = rand_nets(5, seed);
            let g = greedy_decode(&policy, &f, 6, EOS).unwrap();
            let b = beam_decode(&policy, &value, &f, 1, 1.0, 6, EOS).unwrap();
            assert_eq!(g, b.best, "seed {seed}");
        }
    }

    #[test]
    fn beam_matches_exhaustive_oracle_at_full_width() {
        for seed in 0..25 {
            let (policy, value, f) = rand_nets(5, 1000 + seed);
            for beta in [0.0, 0.4, 1.0] {
                let oracle = exhaustive_oracle(&policy, &value, &f, beta, 4, EOS).unwrap();
                let beam = beam_decode(&policy, &value, &f, 5, beta, 4, EOS).unwrap();
                assert_eq!(
                    beam.best, oracle.tokens,
                    "seed {seed} beta {beta}: beam {:?} vs oracle {:?}",
                    beam.best, oracle.tokens
                );
            }
        }
    }

    #[test]
    fn oracle_refuses_oversized_spaces() {
        let (policy, value, f) = rand_nets(6, 0);
        assert!(matches!(
            exhaustive_oracle(&policy, &value, &f, 1.0, 16, EOS),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn single_token_vocab_yields_bare_eos() {
        let (pd, vd) = dims(1);
        let mut rng = crate::rng::seeded(1);
        let policy = PolicyNet::new(pd, &mut rng);
        let value = ValueNet::new(vd, &mut rng).unwrap();
        let f = ImageFeature { values: vec![0.0; 5] };
        // The only token is id 0, which doubles as EOS here.
        let oracle = exhaustive_oracle(&policy, &value, &f, 0.4, 4, 0).unwrap();
        assert_eq!(oracle.tokens, vec![0]);
    }

    #[test]
    fn symmetric_policy_tie_breaks_lexicographically() {
        // All-zero nets score every candidate identically, so the winner is
        // the lexicographically smallest sequence: token 0 repeated.
        let (pd, vd) = dims(4);
        let policy = PolicyNet::zeroed(pd);
        let value = ValueNet::zeroed(vd).unwrap();
        let f = ImageFeature { values: vec![0.0; 5] };
        let oracle = exhaustive_oracle(&policy, &value, &f, 1.0, 3, EOS).unwrap();
        assert_eq!(oracle.tokens, vec![0, 0, 0]);
        let beam = beam_decode(&policy, &value, &f, 4, 1.0, 3, EOS).unwrap();
        assert_eq!(beam.best, oracle.tokens);
    }

    #[test]
    fn returned_captions_are_terminated_or_full_length() {
        for seed in 0..30 {
            let (policy, value, f) = rand_nets(5, 300 + seed);
            for cap in [
                greedy_decode(&policy, &f, 5, EOS).unwrap(),
                beam_decode(&policy, &value, &f, 3, 0.4, 5, EOS).unwrap().best,
            ] {
                let terminated = *cap.last().unwrap() == EOS;
                assert!(terminated || cap.len() == 5);
                assert!(cap.len() <= 5);
                assert!(!cap[..cap.len() - 1].contains(&EOS));
            }
        }
    }

    #[test]
    fn larger_beams_never_score_worse_at_beta_one() {
        for seed in 0..20 {
            let (policy, value, f) = rand_nets(5, 500 + seed);
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=5 {
                let r = beam_decode(&policy, &value, &f, k, 1.0, 4, EOS).unwrap();
                let score = r.ranked[0].score;
                assert!(
                    score >= prev - 1e-15,
                    "seed {seed}: k={k} score {score} < {prev}"
                );
                prev = score;
            }
        }
    }
}
