use chartformer::synth::ToyGrammar;

fn frequencies_within_three_sigma(g: &ToyGrammar, samples: usize, seed: u64) {
    let mut used = vec![0usize; g.rules().len()];
    let mut free = vec![0usize; g.names().len()];
    for s in g.sample_corpus(samples, seed) {
        // expansions restricted by the depth bound do not follow the rule probabilities
        for &(r, restricted) in &s.rules {
            if !restricted {
                used[r] += 1;
                free[g.rules()[r].lhs] += 1;
            }
        }
    }
    for (r, rule) in g.rules().iter().enumerate() {
        let n = free[rule.lhs] as f64;
        let mean = n * rule.prob;
        let sigma = (n * rule.prob * (1.0 - rule.prob)).sqrt();
        let got = used[r] as f64;
        assert!((got - mean).abs() <= 3.0 * sigma, "rule {r} of {}: {got} vs {mean} ± 3·{sigma:.2}", g.names()[rule.lhs]);
    }
}

#[test]
fn default_grammar_rule_frequencies() {
    frequencies_within_three_sigma(&ToyGrammar::bracket_default(), 10_000, 17);
}

#[test]
fn skewed_grammar_rule_frequencies() {
    let g = ToyGrammar::from_text("S -> A B 0.9\nS -> b 0.1\nA -> a 0.2\nA -> c 0.8\nB -> b 1.0\n", 10).unwrap();
    frequencies_within_three_sigma(&g, 10_000, 3);
}

#[test]
fn corpus_is_deterministic_per_seed() {
    let g = ToyGrammar::bracket_default();
    assert_eq!(g.sample_corpus(50, 1), g.sample_corpus(50, 1));
    assert_ne!(g.sample_corpus(50, 1), g.sample_corpus(50, 2));
}
