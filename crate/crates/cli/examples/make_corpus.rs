//! Writes the bundled synthetic corpus: `positives.fasta` and `negatives.fasta`.
//!
//! Usage: `cargo run -p prr-gnn-cli --example make_corpus -- [OUT_DIR] [SEED]`
//!
//! Each receptor family has a characteristic residue enrichment. A sequence
//! draws its residues from a blend of that enrichment and a background
//! composition, with a per-sequence blend weight, so classes overlap. Some
//! records get a lightly mutated sibling that the redundancy filter removes.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::PathBuf;

const AMINO: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

/// Rough natural background frequencies, in `AMINO` order (percent).
const BACKGROUND: [f64; 20] = [
    8.3, 1.4, 5.5, 6.7, 3.9, 7.1, 2.3, 5.9, 5.8, 9.7, 2.4, 4.1, 4.7, 3.9, 5.5, 6.6, 5.3, 6.9, 1.1, 2.9,
];

const FAMILIES: [(&str, &[u8]); 5] = [
    ("TLR", b"LNSF"),
    ("RLR", b"DEHKT"),
    ("NLR", b"LREG"),
    ("CLR", b"CWNY"),
    ("CDR", b"KRSP"),
];

/// Distinct positives per family and distinct negatives, before siblings are added.
const PER_FAMILY: usize = 21;
const NEGATIVES: usize = 105;
/// Fraction of records that get a near-duplicate sibling.
const DUPLICATE_RATE: f64 = 0.25;

fn profile(enriched: &[u8], weight: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total: f64 = BACKGROUND.iter().sum();
    let mut p: Vec<f64> = BACKGROUND
        .iter()
        .map(|b| b / total * rng.gen_range(0.8..1.2))
        .collect();
    let norm: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x *= (1.0 - weight) / norm);
    for &aa in enriched {
        let i = AMINO.iter().position(|&c| c == aa).expect("canonical residue");
        p[i] += weight / enriched.len() as f64;
    }
    p
}

fn sequence(profile: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let dist = WeightedIndex::new(profile).expect("positive weights");
    (0..len).map(|_| AMINO[dist.sample(rng)]).collect()
}

fn mutate(seq: &[u8], rate: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    seq.iter()
        .map(|&c| if rng.gen_bool(rate) { AMINO[rng.gen_range(0..20)] } else { c })
        .collect()
}

fn push_record(out: &mut String, header: &str, seq: &[u8]) {
    let _ = writeln!(out, ">{header}");
    for line in seq.chunks(60) {
        out.push_str(std::str::from_utf8(line).expect("ascii"));
        out.push('\n');
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed: u64 = args.next().map_or(2024, |s| s.parse().expect("integer seed"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pos = String::new();
    for (family, enriched) in FAMILIES {
        for i in 0..PER_FAMILY {
            let weight = rng.gen_range(0.12..0.45);
            let p = profile(enriched, weight, &mut rng);
            let seq = sequence(&p, rng.gen_range(120..360), &mut rng);
            push_record(&mut pos, &format!("{family}_{i:03}|{family} synthetic"), &seq);
            if rng.gen_bool(DUPLICATE_RATE) {
                let sib = mutate(&seq, 0.04, &mut rng);
                push_record(&mut pos, &format!("{family}_{i:03}v|{family} sibling"), &sib);
            }
        }
    }

    let mut neg = String::new();
    for i in 0..NEGATIVES {
        // a few negatives carry a mild enrichment of a random residue set
        let decoy: Vec<u8> = (0..4).map(|_| AMINO[rng.gen_range(0..20)]).collect();
        let weight = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.12) } else { 0.0 };
        let p = profile(&decoy, weight, &mut rng);
        let seq = sequence(&p, rng.gen_range(120..360), &mut rng);
        push_record(&mut neg, &format!("NEG_{i:03} synthetic"), &seq);
        if rng.gen_bool(DUPLICATE_RATE) {
            let sib = mutate(&seq, 0.04, &mut rng);
            push_record(&mut neg, &format!("NEG_{i:03}v sibling"), &sib);
        }
    }

    std::fs::create_dir_all(&dir).expect("create output directory");
    std::fs::write(dir.join("positives.fasta"), pos).expect("write positives");
    std::fs::write(dir.join("negatives.fasta"), neg).expect("write negatives");
}
