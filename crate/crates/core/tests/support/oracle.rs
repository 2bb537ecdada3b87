// Brute-force reference implementations of the evaluation metrics.
//
// Deliberately naive: token matching by linear search and removal, LCS by
// enumerating every subsequence of the shorter side. Shared by the core
// metric tests and the acceptance suite.

#![allow(dead_code)]

pub const PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

pub fn qa_tokens(text: &str) -> Vec<String> {
    let mut kept = String::new();
    for c in text.chars() {
        for lc in c.to_lowercase() {
            if !PUNCT.contains(lc) {
                kept.push(lc);
            }
        }
    }
    let mut out = Vec::new();
    for tok in kept.split_whitespace() {
        if tok != "a" && tok != "an" && tok != "the" {
            out.push(tok.to_string());
        }
    }
    out
}

pub fn rouge_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for tok in text.to_lowercase().split_whitespace() {
        let mut t = tok.to_string();
        while t.ends_with('.') {
            t.pop();
        }
        if !t.is_empty() {
            out.push(t);
        }
    }
    out
}

/// Count of matched pairs, removing each matched gold item from a scratch list.
pub fn overlap<T: PartialEq + Clone>(gold: &[T], pred: &[T]) -> usize {
    let mut pool: Vec<T> = gold.to_vec();
    let mut matched = 0;
    for p in pred {
        if let Some(pos) = pool.iter().position(|g| g == p) {
            pool.remove(pos);
            matched += 1;
        }
    }
    matched
}

fn is_subsequence<T: PartialEq>(needle: &[&T], hay: &[T]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// LCS length by exhaustive enumeration of subsets of the shorter sequence.
pub fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 20, "oracle LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1u32 << short.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let pick: Vec<&T> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &short[i])
            .collect();
        if is_subsequence(&pick, long) {
            best = size;
        }
    }
    best
}

/// (precision, recall, f1) with the shared empty-input conventions.
pub fn prf(matched: usize, gold_len: usize, pred_len: usize) -> (f64, f64, f64) {
    if gold_len == 0 && pred_len == 0 {
        return (1.0, 1.0, 1.0);
    }
    if gold_len == 0 {
        return (0.0, 1.0, 0.0);
    }
    if pred_len == 0 || matched == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = matched as f64 / pred_len as f64;
    let r = matched as f64 / gold_len as f64;
    (p, r, 2.0 * p * r / (p + r))
}

pub fn recall(gold: &str, pred: &str) -> f64 {
    let g = qa_tokens(gold);
    let p = qa_tokens(pred);
    prf(overlap(&g, &p), g.len(), p.len()).1
}

pub fn f1(gold: &str, pred: &str) -> f64 {
    let g = qa_tokens(gold);
    let p = qa_tokens(pred);
    prf(overlap(&g, &p), g.len(), p.len()).2
}

pub fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            out.push(tokens[i..i + n].to_vec());
        }
    }
    out
}

pub fn rouge_n(gold: &str, pred: &str, n: usize) -> (f64, f64, f64) {
    let g = grams(&rouge_tokens(gold), n);
    let p = grams(&rouge_tokens(pred), n);
    prf(overlap(&g, &p), g.len(), p.len())
}

pub fn rouge_l(gold: &str, pred: &str) -> (f64, f64, f64) {
    let g = rouge_tokens(gold);
    let p = rouge_tokens(pred);
    prf(lcs(&g, &p), g.len(), p.len())
}

/// 50 hand-built (gold, prediction) pairs covering articles, punctuation,
/// repeated tokens, reordering, empty sides and unicode.
pub const CASES: [(&str, &str); 50] = [
    ("blue", "The sky is blue"),
    ("Mrs. Smith", "It was Mrs. Smith who called"),
    ("red car", "blue car"),
    ("in a small town", "a small town in Kansas"),
    ("the cat sat on the mat", "the cat sat on mat"),
    ("police killed the gunman", "police kill the gunman"),
    ("blue", ""),
    ("", "blue"),
    ("", ""),
    ("The sky is blue.", "The sky is blue."),
    ("Alex did.", "Alex did."),
    ("a an the", "the"),
    ("yes", "Yes!"),
    ("no", "yes"),
    ("three", "3"),
    ("New York City", "the city of New York"),
    ("in the barn", "barn"),
    ("white", "a little white kitten named Cotton"),
    ("he was sad", "He was very, very sad."),
    ("to the store", "She went to the store to buy milk"),
    ("the the the", "the"),
    ("dog dog cat", "dog cat cat"),
    ("one two three four five", "five four three two one"),
    ("one two three four five", "one three five"),
    ("a b c d e f", "a c e b d f"),
    ("x y z", "x y z x y z"),
    ("unknown", "unknown"),
    ("CANNOTANSWER", "CANNOTANSWER"),
    ("CANNOTANSWER", "She was born in Boca Raton."),
    ("Boca Raton.", "in Boca Raton"),
    ("It's John's book.", "its johns book"),
    ("U.S.A.", "USA"),
    ("e-mail", "email"),
    ("café au lait", "Café au lait."),
    ("naïve approach", "the naive approach"),
    ("first, second; third", "first second third"),
    ("Mr. and Mrs. Dursley", "Mrs Dursley and Mr Dursley"),
    ("the quick brown fox", "the quick brown dog"),
    ("the quick brown fox", "quick the fox brown"),
    ("jumps over the lazy dog", "the dog is lazy"),
    ("at noon", "around noon, at the latest"),
    ("two", "two two two"),
    ("two two two", "two"),
    ("because it rained", "It rained, so they stayed inside because of it."),
    ("on Tuesday", "on a Tuesday"),
    ("seven years old", "He is 7 years old."),
    ("the red ball. the blue ball.", "the blue ball. the red ball."),
    ("A. B. C.", "a b c"),
    ("Grande was born in Boca Raton", "Boca Raton is where Grande was born"),
    ("   spaced    out   ", "spaced out"),
];
