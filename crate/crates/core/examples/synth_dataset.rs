//! Generates a synthetic dataset, writes it to disk as PGM images plus
//! manifest CSVs, reloads it and prints per-split label statistics.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [seed]

use std::path::PathBuf;

use affect_mtl::config::SynthConfig;
use affect_mtl::synth::{generate_synthetic, load_split, write_synthetic, Split};

fn main() -> affect_mtl::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("ssmtl-synth"), PathBuf::from);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let data = generate_synthetic(&SynthConfig::default(), seed)?;
    write_synthetic(&out, &data)?;
    println!("wrote {}", out.display());

    for split in [Split::Train, Split::Val] {
        let loaded = load_split(&out, split)?;
        let st = loaded.stats();
        println!(
            "{:<5} samples {:>5}  exp labeled {:>5}  missing va/exp/au {}/{}/{}",
            split.name(),
            st.total,
            st.exp_valid,
            st.invalid_va,
            st.invalid_exp,
            st.invalid_au
        );
        println!("      class counts {:?}", st.exp_class_counts);
    }
    Ok(())
}
