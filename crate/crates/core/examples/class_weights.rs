//! Shows the imbalance weights derived from a training split: inverse
//! frequency weights for expressions and negative/positive ratios for
//! action units, plus the class mix seen under resampling.
//!
//! cargo run --release --example class_weights -- [seed]

use affect_mtl::config::{Imbalance, SynthConfig};
use affect_mtl::data::DatasetWeights;
use affect_mtl::rng::{substream, Stream};
use affect_mtl::synth::{generate_split, Split};
use affect_mtl::trainer::make_epoch_schedule;
use affect_mtl::NUM_EXPRESSIONS;

fn main() -> affect_mtl::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let train = generate_split(&SynthConfig::default(), Split::Train, seed)?;
    let st = train.stats();
    let w = DatasetWeights::from_stats(&st);

    println!("class  count  weight");
    for c in 0..NUM_EXPRESSIONS {
        println!(
            "{c:>5}  {:>5}  {:>6.3}",
            st.exp_class_counts[c], w.expression[c]
        );
    }
    println!("\nau  pos   neg   weight");
    for (k, wk) in w.action_units.iter().enumerate() {
        println!(
            "{k:>2}  {:>4}  {:>4}  {wk:>6.3}",
            st.au_positive[k], st.au_negative[k]
        );
    }

    let mut rng = substream(seed, Stream::Schedule, &[0]);
    let schedule = make_epoch_schedule(&train.dataset, Imbalance::Resample, &mut rng);
    let mut drawn = [0usize; NUM_EXPRESSIONS];
    for &i in &schedule {
        if let Some(c) = train.dataset.samples[i].annotations.expression {
            drawn[c as usize] += 1;
        }
    }
    println!("\nresampled class counts for one epoch: {drawn:?}");
    Ok(())
}
