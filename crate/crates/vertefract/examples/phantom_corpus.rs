//! Generate a small phantom corpus and show what lands on disk.
//!
//! Usage: cargo run --release --example phantom_corpus -- [out_dir]

use vertefract::phantom::{generate_corpus, PhantomSpec};

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/phantom_corpus".to_string());
    let spec = PhantomSpec {
        n_cases: 12,
        min_negative_cases: 4,
        min_positive_cases: 4,
        seed: 7,
        ..PhantomSpec::default()
    };
    let manifest = generate_corpus(&spec, &out).expect("corpus generation");

    println!("corpus at {out}:");
    for case in &manifest.cases {
        println!(
            "  {}  {} vertebrae, {} fractured{}",
            case.id,
            case.n_vertebrae,
            case.n_fractured,
            if case.fractured { "" } else { "  (negative)" }
        );
    }
    let negatives = manifest.cases.iter().filter(|c| !c.fractured).count();
    println!(
        "{} cases, {negatives} negative; each case directory holds volume.nii, labels.nii and annotations.txt",
        manifest.cases.len()
    );
}
