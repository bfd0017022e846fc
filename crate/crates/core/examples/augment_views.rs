//! Writes a source image with its weak and strong views for a few epochs,
//! showing that views are fixed by (seed, epoch, sample id).
//!
//! cargo run --release --example augment_views -- [out_dir]

use std::path::PathBuf;

use affect_mtl::augment::{augment_pair, AugConfig};
use affect_mtl::config::SynthConfig;
use affect_mtl::synth::{generate_split, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ssmtl-views"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let cfg = SynthConfig {
        train_count: 4,
        val_count: 0,
        ..SynthConfig::default()
    };
    let data = generate_split(&cfg, Split::Train, 0)?;
    let aug = AugConfig::default();
    let (image, id) = (&data.images[0], &data.dataset.samples[0].id);
    image.write_pgm(&out.join("source.pgm"))?;

    for epoch in 0..3 {
        let pair = augment_pair(image, &aug, 0, epoch, id);
        let again = augment_pair(image, &aug, 0, epoch, id);
        assert_eq!(pair, again);
        pair.weak
            .write_pgm(&out.join(format!("weak_{epoch}.pgm")))?;
        pair.strong
            .write_pgm(&out.join(format!("strong_{epoch}.pgm")))?;
        let diff = |v: &affect_mtl::image::Image| {
            v.data
                .iter()
                .zip(&image.data)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / v.data.len() as f64
        };
        println!(
            "epoch {epoch}: mean |weak - source| {:.4}, mean |strong - source| {:.4}",
            diff(&pair.weak),
            diff(&pair.strong)
        );
    }
    println!("views in {}", out.display());
    Ok(())
}
